//! Chat-completion client with an on-disk response cache.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    format_ranking, normalize_title, parse_ranking, render_prompt, Audience, BackendError,
    ListRequest, ParseError, PromptTemplate, RankRequest, Recommender, ResponseCache, TemplateSet,
};
use crate::corpus::{Domain, Item, RankingList, UserProfile};
use crate::net::{self, RetryPolicy, Semaphore};
use crate::seeding::sha256_hex;

/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "FAIRPROBE_API_KEY";

/// Sampling settings sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub model_name: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Sent as `top_p`.
    pub nucleus_ratio: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_penalty: Option<f64>,
}

impl LlmSettings {
    /// Settings used for the main ChatGPT runs.
    pub fn chatgpt() -> Self {
        Self {
            model_name: "gpt-3.5-turbo-0613".into(),
            max_tokens: 2048,
            temperature: 0.2,
            nucleus_ratio: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            repetition_penalty: None,
        }
    }

    /// Settings used for the Llama 2 runs.
    pub fn llama2() -> Self {
        Self {
            model_name: "llama-2-13b-chat".into(),
            max_tokens: 512,
            temperature: 0.0,
            nucleus_ratio: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            repetition_penalty: Some(1.1),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be > 0".into()));
        }
        if !(self.nucleus_ratio > 0.0 && self.nucleus_ratio <= 1.0) {
            return Err(BackendError::Config(format!(
                "nucleus_ratio must be in (0, 1], got {}",
                self.nucleus_ratio
            )));
        }
        Ok(())
    }
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self::chatgpt()
    }
}

/// A fully specified prompt: template, bindings and repeat index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRequest {
    pub template: PromptTemplate,
    pub bindings: BTreeMap<String, String>,
    pub system: Option<String>,
    /// Distinguishes repeated queries of the same prompt.
    pub repeat: u32,
}

impl PromptRequest {
    pub fn new(template: PromptTemplate, bindings: BTreeMap<String, String>) -> Self {
        Self {
            template,
            bindings,
            system: None,
            repeat: 0,
        }
    }

    pub fn render(&self) -> Result<String, BackendError> {
        render_prompt(&self.template, &self.bindings)
    }

    /// SHA-256 over the canonical JSON of everything that shapes the
    /// response.
    pub fn digest(&self, settings: &LlmSettings) -> String {
        let canonical = json!({
            "template_id": self.template.template_id,
            "body": self.template.body,
            "shots": self.template.shot_examples,
            "bindings": self.bindings,
            "system": self.system,
            "settings": settings,
            "repeat": self.repeat,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

pub struct LlmBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    settings: LlmSettings,
    templates: TemplateSet,
    system: Option<String>,
    cache: ResponseCache,
    client: reqwest::blocking::Client,
    limit: Semaphore,
    retry: RetryPolicy,
    network_requests: AtomicUsize,
}

impl LlmBackend {
    /// The API key is read from `FAIRPROBE_API_KEY` if set. Without one the
    /// backend still serves cached responses.
    pub fn new(
        id: impl Into<String>,
        endpoint: impl Into<String>,
        settings: LlmSettings,
        cache: ResponseCache,
    ) -> Result<Self, BackendError> {
        settings.validate()?;
        Ok(Self {
            id: id.into(),
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            settings,
            templates: TemplateSet::standard(),
            system: None,
            cache,
            client: net::client(Duration::from_secs(120)),
            limit: Semaphore::new(4),
            retry: RetryPolicy::default(),
            network_requests: AtomicUsize::new(0),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limit = Semaphore::new(limit);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_system_message(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Requests that reached the network (cache misses).
    pub fn network_requests(&self) -> usize {
        self.network_requests.load(Ordering::SeqCst)
    }

    /// Raw completion text for a prompt, from cache when possible.
    pub fn complete(&self, req: &PromptRequest) -> Result<String, BackendError> {
        let digest = req.digest(&self.settings);
        let (text, _hit) = self.cache.get_or_fetch(&digest, || self.fetch(req))?;
        Ok(text)
    }

    /// Complete and parse a top-`k` list.
    pub fn llm_recommend(
        &self,
        req: &PromptRequest,
        k: usize,
        domain: Domain,
    ) -> Result<Vec<Item>, BackendError> {
        let text = self.complete(req)?;
        parse_ranking(&text, k, domain).map_err(|error| BackendError::Parse { error, raw: text })
    }

    fn fetch(&self, req: &PromptRequest) -> Result<String, BackendError> {
        let key = self.api_key.as_deref().ok_or_else(|| {
            BackendError::Config(format!(
                "{API_KEY_VAR} is not set and the response is not cached"
            ))
        })?;
        let mut messages = Vec::new();
        if let Some(system) = req.system.as_ref().or(self.system.as_ref()) {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.render()?}));
        let s = &self.settings;
        let mut body = json!({
            "model": s.model_name,
            "messages": messages,
            "temperature": s.temperature,
            "max_tokens": s.max_tokens,
            "top_p": s.nucleus_ratio,
            "frequency_penalty": s.frequency_penalty,
            "presence_penalty": s.presence_penalty,
        });
        if let Some(rp) = s.repetition_penalty {
            body["repetition_penalty"] = json!(rp);
        }
        let _permit = self.limit.acquire();
        self.network_requests.fetch_add(1, Ordering::SeqCst);
        let raw = net::post_json(&self.client, &self.endpoint, Some(key), &body, &self.retry)
            .map_err(BackendError::Http)?;
        extract_content(&raw)
    }

    fn list_prompt(&self, req: &ListRequest<'_>) -> Result<PromptRequest, BackendError> {
        let mut b = BTreeMap::new();
        b.insert("domain".to_string(), req.domain.as_str().to_string());
        let template = match req.audience {
            Audience::User(u) if !req.history.is_empty() => {
                b.insert("User Name".into(), display_name(u));
                b.insert("Conversation history".into(), format_ranking(req.history));
                &self.templates.long_term
            }
            Audience::User(u) => match (&u.name, &u.email_domain) {
                (Some(name), _) => {
                    b.insert("user name".into(), name.clone());
                    &self.templates.by_name
                }
                (None, Some(email)) => {
                    b.insert("email domain address".into(), email.clone());
                    &self.templates.by_email
                }
                (None, None) => {
                    return Err(BackendError::Config(format!(
                        "user {} has no name or email",
                        u.id
                    )))
                }
            },
            Audience::Explicit(attr) => {
                b.insert("sensitive attribute".into(), attr.to_string());
                &self.templates.explicit
            }
            Audience::Neutral => &self.templates.neutral,
        };
        Ok(PromptRequest {
            template: template.clone(),
            bindings: b,
            system: None,
            repeat: req.repeat,
        })
    }

    fn rank_prompt(&self, req: &RankRequest<'_>) -> PromptRequest {
        let history = req
            .user
            .history
            .iter()
            .map(|i| i.title.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        let bindings = BTreeMap::from([
            ("domain".to_string(), req.domain.as_str().to_string()),
            ("domain plural".to_string(), req.domain.plural().to_string()),
            ("User Name".to_string(), display_name(req.user)),
            ("Browsing History".to_string(), history),
            (
                "Candidate items".to_string(),
                format!("\n{}", format_ranking(req.candidates)),
            ),
        ]);
        PromptRequest {
            template: self.templates.ranking.clone(),
            bindings,
            system: None,
            repeat: req.repeat,
        }
    }
}

fn display_name(u: &UserProfile) -> String {
    match (&u.name, &u.email_domain) {
        (Some(n), _) => n.clone(),
        (None, Some(e)) => format!("anonymous@{e}"),
        (None, None) => u.id.clone(),
    }
}

/// Pull the message text out of an OpenAI-style completion response.
fn extract_content(raw: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(raw)
        .map_err(|e| BackendError::Http(format!("response is not JSON: {e}")))?;
    let choice = &v["choices"][0];
    choice["message"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError::Http("response has no choices[0].message.content".into()))
}

impl Recommender for LlmBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn recommend(&self, req: &ListRequest<'_>) -> Result<RankingList, BackendError> {
        let prompt = self.list_prompt(req)?;
        let items = self.llm_recommend(&prompt, req.k, req.domain)?;
        Ok(RankingList::new(
            req.subject_id,
            items,
            req.k,
            req.round,
            &self.id,
        )?)
    }

    /// Candidates in the model's order. Repeated titles keep their first
    /// position; candidates the model left out are omitted.
    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError> {
        let prompt = self.rank_prompt(req);
        let text = self.complete(&prompt)?;
        let n = req.candidates.len();
        let parsed = match parse_ranking(&text, n, req.domain) {
            Ok(items) => items,
            Err(ParseError::ShortList { found, .. }) => parse_ranking(&text, found, req.domain)
                .map_err(|error| BackendError::Parse {
                    error,
                    raw: text.clone(),
                })?,
            Err(error) => return Err(BackendError::Parse { error, raw: text }),
        };
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n);
        for item in parsed {
            let key = normalize_title(&item.title);
            let cand = req
                .candidates
                .iter()
                .find(|c| normalize_title(&c.title) == key)
                .ok_or_else(|| BackendError::OutsideCandidates(item.title.clone()))?;
            if seen.insert(key) {
                out.push(cand.clone());
            }
        }
        Ok(out)
    }
}
