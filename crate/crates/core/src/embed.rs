//! Text encoders behind a common interface.
//!
//! [`HashedEmbedder`] is the hermetic default: lowercase, split on
//! non-alphanumerics, hash unigrams and bigrams into `d` signed buckets, then
//! optionally L2-normalize. [`RemoteEmbedder`] posts `{"texts": [...]}` to a
//! service answering `{"vectors": [[...], ...]}` and caches by content.

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{self, RetryPolicy, Semaphore};

pub const DEFAULT_HASHED_DIM: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedder mismatch: `{left}` vs `{right}`")]
    EmbedderMismatch { left: String, right: String },
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("non-finite embedding component from {0}")]
    NonFinite(String),
    #[error("remote embedder: {0}")]
    Remote(String),
}

/// A d-dimensional text embedding tagged with the encoder that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub embedder_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Inner product of two embeddings from the same encoder.
pub fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.embedder_id != b.embedder_id {
        return Err(EmbedError::EmbedderMismatch {
            left: a.embedder_id.clone(),
            right: b.embedder_id.clone(),
        });
    }
    dot_slices(&a.values, &b.values)
}

pub fn dot_slices(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    let d = dot(a, b)?;
    let n = a.norm() * b.norm();
    Ok(if n == 0.0 { 0.0 } else { d / n })
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Remote,
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Required for hashed; for remote, `None` accepts the service's size.
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_true() -> bool {
    true
}

fn default_concurrency() -> usize {
    4
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::hashed(DEFAULT_HASHED_DIM, true)
    }
}

impl EmbedderConfig {
    pub fn hashed(dimension: usize, normalize: bool) -> Self {
        Self {
            kind: EmbedderKind::Hashed,
            dimension: Some(dimension),
            endpoint: None,
            normalize,
            concurrency: default_concurrency(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, normalize: bool) -> Self {
        Self {
            kind: EmbedderKind::Remote,
            dimension: None,
            endpoint: Some(endpoint.into()),
            normalize,
            concurrency: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension == Some(0) {
            return Err(EmbedError::Config("dimension must be positive".into()));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::Config(
                "remote embedder needs an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Hashed => Box::new(HashedEmbedder::new(
                self.dimension.unwrap_or(DEFAULT_HASHED_DIM),
                self.normalize,
            )?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(self)?),
        })
    }
}

/// Embed one text under `config`. Builds a fresh encoder per call, so prefer
/// [`EmbedderConfig::build`] in loops.
pub fn embed_text(text: &str, config: &EmbedderConfig) -> Result<EmbeddingVector, EmbedError> {
    config.build()?.embed(text)
}

/// Signed feature hashing over unigrams and bigrams.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    normalize: bool,
    id: String,
}

impl HashedEmbedder {
    pub fn new(dim: usize, normalize: bool) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::Config("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            normalize,
            id: format!(
                "hashed-fnv1a-d{dim}-{}",
                if normalize { "l2" } else { "raw" }
            ),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut values = vec![0.0; self.dim];
        let mut add = |feature: &[u8]| {
            let h = fnv1a(feature);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        };
        for t in &tokens {
            add(t.as_bytes());
        }
        for pair in tokens.windows(2) {
            // \x1f cannot occur inside a token
            add(format!("{}\x1f{}", pair[0], pair[1]).as_bytes());
        }
        if self.normalize {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                values.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(EmbeddingVector {
            values,
            embedder_id: self.id.clone(),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for a remote sentence-encoder service.
pub struct RemoteEmbedder {
    endpoint: String,
    normalize: bool,
    expected_dim: RwLock<Option<usize>>,
    id: String,
    client: reqwest::blocking::Client,
    cache: RwLock<HashMap<String, Vec<f64>>>,
    in_flight: Semaphore,
    retry: RetryPolicy,
    requests: std::sync::atomic::AtomicUsize,
}

const REMOTE_BATCH: usize = 64;

impl RemoteEmbedder {
    pub fn new(config: &EmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("remote embedder needs an endpoint".into()))?;
        Ok(Self {
            id: format!(
                "remote:{endpoint}:{}",
                if config.normalize { "l2" } else { "raw" }
            ),
            endpoint,
            normalize: config.normalize,
            expected_dim: RwLock::new(config.dimension),
            client: net::client(Duration::from_secs(60)),
            cache: RwLock::new(HashMap::new()),
            in_flight: Semaphore::new(config.concurrency),
            retry: RetryPolicy::default(),
            requests: Default::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Number of HTTP requests issued so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(std::sync::atomic::Ordering::SeqCst)
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let _permit = self.in_flight.acquire();
        self.requests
            .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let body = net::post_json(
            &self.client,
            &self.endpoint,
            None,
            &EmbedRequest { texts },
            &self.retry,
        )
        .map_err(EmbedError::Remote)?;
        let resp: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| EmbedError::Remote(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::Remote(format!(
                "sent {} texts, got {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        let mut expected = self.expected_dim.write().unwrap_or_else(|e| e.into_inner());
        for v in &resp.vectors {
            match *expected {
                Some(d) if d != v.len() => {
                    return Err(EmbedError::DimensionMismatch {
                        left: d,
                        right: v.len(),
                    })
                }
                Some(_) => {}
                None => *expected = Some(v.len()),
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite(self.endpoint.clone()));
            }
        }
        Ok(resp.vectors)
    }

    fn finish(&self, mut values: Vec<f64>) -> EmbeddingVector {
        if self.normalize {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                values.iter_mut().for_each(|v| *v /= norm);
            }
        }
        EmbeddingVector {
            values,
            embedder_id: self.id.clone(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut missing: Vec<&str> = {
            let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
            texts
                .iter()
                .map(String::as_str)
                .filter(|t| !cache.contains_key(*t))
                .collect()
        };
        missing.sort_unstable();
        missing.dedup();
        for chunk in missing.chunks(REMOTE_BATCH) {
            let vectors = self.fetch(chunk)?;
            let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert(t.to_string(), v);
            }
        }
        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        Ok(texts
            .iter()
            .map(|t| self.finish(cache[t.as_str()].clone()))
            .collect())
    }
}
