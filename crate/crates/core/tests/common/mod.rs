//! Minimal HTTP/1.1 server for exercising the network clients offline.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub struct Request {
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap()
    }
}

type Handler = dyn Fn(usize, &Request) -> (u16, String) + Send + Sync;

#[derive(Default)]
struct Stats {
    hits: AtomicUsize,
    live: AtomicUsize,
    peak: AtomicUsize,
    bodies: Mutex<Vec<String>>,
}

pub struct MockServer {
    pub url: String,
    stats: Arc<Stats>,
}

impl MockServer {
    /// `handler(index, request)` answers the `index`-th request (0-based).
    /// `delay` is held while the request counts as in flight.
    pub fn start<F>(delay: Duration, handler: F) -> Self
    where
        F: Fn(usize, &Request) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let stats = Arc::new(Stats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let s = stats.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (s, handler) = (s.clone(), handler.clone());
                std::thread::spawn(move || serve(stream, &s, &*handler, delay));
            }
        });
        Self { url, stats }
    }

    pub fn hits(&self) -> usize {
        self.stats.hits.load(Ordering::SeqCst)
    }

    pub fn peak_concurrency(&self) -> usize {
        self.stats.peak.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<String> {
        self.stats.bodies.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, stats: &Stats, handler: &Handler, delay: Duration) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut headers = Vec::new();
    loop {
        line.clear();
        reader.read_line(&mut line).unwrap();
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .map(|(_, v)| v.parse::<usize>().unwrap())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let req = Request {
        headers,
        body: String::from_utf8(body).unwrap(),
    };

    let index = stats.hits.fetch_add(1, Ordering::SeqCst);
    stats.bodies.lock().unwrap().push(req.body.clone());
    let now = stats.live.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak.fetch_max(now, Ordering::SeqCst);
    std::thread::sleep(delay);
    let (status, payload) = handler(index, &req);
    stats.live.fetch_sub(1, Ordering::SeqCst);

    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = out.flush();
}

/// OpenAI-style chat completion carrying `content`.
pub fn chat_response(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}
