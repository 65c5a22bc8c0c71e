//! Blocking HTTP plumbing shared by the chat and embedding clients.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Counting semaphore bounding in-flight requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    cvar: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cvar: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cvar.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cvar.notify_one();
    }
}

/// Bounded exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1 << attempt.min(16)))
    }
}

pub(crate) enum Failure {
    Transient(String),
    Fatal(String),
}

/// POST `body` as JSON and return the response text, retrying 429, 5xx and
/// transport errors.
pub(crate) fn post_json<B: Serialize>(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
    policy: &RetryPolicy,
) -> Result<String, String> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        match post_once(client, url, bearer, body) {
            Ok(text) => return Ok(text),
            Err(Failure::Fatal(msg)) => return Err(msg),
            Err(Failure::Transient(msg)) => {
                log::warn!(
                    "request to {url} failed (attempt {}/{attempts}): {msg}",
                    attempt + 1
                );
                last = msg;
                if attempt + 1 < attempts {
                    std::thread::sleep(policy.backoff(attempt));
                }
            }
        }
    }
    Err(format!("giving up after {attempts} attempts: {last}"))
}

fn post_once<B: Serialize>(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<String, Failure> {
    let mut req = client.post(url).json(body);
    if let Some(token) = bearer {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
    if status.is_success() {
        Ok(text)
    } else if status.as_u16() == 429 || status.is_server_error() {
        Err(Failure::Transient(format!("HTTP {status}")))
    } else {
        Err(Failure::Fatal(format!(
            "HTTP {status}: {}",
            truncate(&text, 200)
        )))
    }
}

pub(crate) fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client")
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
