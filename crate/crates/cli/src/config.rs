//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! Precedence, highest first: flag, environment (`FAIRPROBE_CACHE_DIR`),
//! config file, built-in default.
//!
//! ```toml
//! seed = 0
//! domain = "news"
//! taxonomy = "gender"
//!
//! [backend]
//! kind = "synthetic"      # or "llm"
//! beta = 0.5
//! mode = "fresh"          # or "reinforcing"
//!
//! [corpus]
//! names = "names.csv"     # built-in demo corpus when absent
//! interactions = "log.jsonl"
//!
//! [audit]
//! k = 20
//! repeats = 1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fairprobe::backends::{LlmSettings, SyntheticMode, TemplateSet};
use fairprobe::corpus::{Domain, TaxonomyKind};
use fairprobe::embed::EmbedderConfig;
use fairprobe::metrics::TopicAggregation;
use fairprobe::probe::{ProbeHyper, ProbeMode};
use fairprobe::seeding::sha256_hex;

pub const CACHE_DIR_VAR: &str = "FAIRPROBE_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".fairprobe-cache";

/// Bad configuration or a missing input path. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmPreset {
    #[default]
    Chatgpt,
    Llama2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    #[default]
    Name,
    Email,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Synthetic: bias strength β.
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub mode: SyntheticMode,
    /// Synthetic: category → topic → weight. Disjoint one-hot when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    /// LLM: chat-completions URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Names the cache file; defaults to `llm-<model>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub preset: LlmPreset,
    /// Replaces the preset entirely when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<LlmSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_message: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Synthetic,
            beta: 0.0,
            mode: SyntheticMode::Fresh,
            weights: None,
            endpoint: None,
            id: None,
            preset: LlmPreset::Chatgpt,
            settings: None,
            system_message: None,
        }
    }
}

impl BackendConfig {
    pub fn llm_settings(&self) -> LlmSettings {
        self.settings.clone().unwrap_or_else(|| match self.preset {
            LlmPreset::Chatgpt => LlmSettings::chatgpt(),
            LlmPreset::Llama2 => LlmSettings::llama2(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<PathBuf>,
    /// Which built-in corpus to use when `names` is absent.
    #[serde(default)]
    pub carrier: Carrier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    /// List length; 20 for names and 5 for email domains when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub repeats: u32,
    /// Sample this many users per group from the corpus instead of using
    /// every record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users_per_group: Option<usize>,
    pub aggregation: TopicAggregation,
    /// Train a probe on the audit lists and attach recall flags.
    pub probe: bool,
    /// Attribute-free lists used to estimate probe base rates.
    pub neutral_lists: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            k: None,
            repeats: 1,
            users_per_group: None,
            aggregation: TopicAggregation::default(),
            probe: true,
            neutral_lists: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualSection {
    pub ks: Vec<usize>,
    pub repeats: u32,
    pub history_window: usize,
    /// Users generated for a synthetic log when no interaction file is given.
    pub users_per_group: usize,
    /// Point probe used to infer the real-world group of unlabeled users.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_model: Option<PathBuf>,
}

impl Default for CounterfactualSection {
    fn default() -> Self {
        Self {
            ks: fairprobe::audit::DEFAULT_KS.to_vec(),
            repeats: 1,
            history_window: fairprobe::audit::DEFAULT_HISTORY_WINDOW,
            users_per_group: 50,
            probe_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub mode: ProbeMode,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Explicit-attribute lists generated per category for training.
    pub biased_lists: usize,
    /// Divide probe scores by the neutral-list base rates when scoring
    /// held-out accuracy (recall always uses the correction).
    pub base_rate_correction: bool,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let h = ProbeHyper::default();
        Self {
            mode: ProbeMode::Point,
            hidden: h.hidden,
            lr: h.lr,
            epochs: h.epochs,
            batch: h.batch,
            biased_lists: 10,
            base_rate_correction: true,
        }
    }
}

impl ProbeSection {
    pub fn hyper(&self, seed: u64) -> ProbeHyper {
        ProbeHyper {
            hidden: self.hidden,
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub rounds: u32,
    pub k: usize,
    pub window: usize,
    pub users_per_group: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            rounds: 30,
            k: 5,
            window: 5,
            users_per_group: 50,
        }
    }
}

fn default_domain() -> Domain {
    Domain::News
}

fn default_taxonomy() -> TaxonomyKind {
    TaxonomyKind::Gender
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default = "default_taxonomy")]
    pub taxonomy: TaxonomyKind,
    /// Bound on in-flight backend and embedder requests.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub counterfactual: CounterfactualSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&raw).map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form. Output and cache locations are
    /// left out: they do not change what a run computes.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.cache_dir = None;
        let canonical = serde_json::to_value(&c).expect("config serializes");
        sha256_hex(canonical.to_string().as_bytes())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("fairprobe-out"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| {
                std::env::var_os(CACHE_DIR_VAR)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn audit_k(&self) -> usize {
        self.audit.k.unwrap_or(match self.corpus.carrier {
            Carrier::Name => TemplateSet::NAME_LIST_LEN,
            Carrier::Email => TemplateSet::EMAIL_LIST_LEN,
        })
    }

    /// Check values and that every referenced input exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        let b = &self.backend;
        if !(0.0..=1.0).contains(&b.beta) {
            return Err(config_err(format!(
                "backend.beta {} is outside [0, 1]",
                b.beta
            )));
        }
        if b.kind == BackendKind::Llm {
            if b.endpoint.is_none() {
                return Err(config_err(
                    "backend.endpoint is required for the llm backend",
                ));
            }
            b.llm_settings()
                .validate()
                .map_err(|e| config_err(format!("backend.settings: {e}")))?;
        }
        if self.concurrency == 0 {
            return Err(config_err("concurrency must be >= 1"));
        }
        self.embedder
            .validate()
            .map_err(|e| config_err(format!("embedder: {e}")))?;
        if self.audit_k() == 0 || self.audit.repeats == 0 {
            return Err(config_err("audit.k and audit.repeats must be >= 1"));
        }
        if self.counterfactual.ks.is_empty() || self.counterfactual.ks.contains(&0) {
            return Err(config_err(
                "counterfactual.ks must be a non-empty list of values >= 1",
            ));
        }
        if self.counterfactual.repeats == 0 || self.counterfactual.history_window == 0 {
            return Err(config_err(
                "counterfactual.repeats and history_window must be >= 1",
            ));
        }
        let p = &self.probe;
        if p.hidden == 0 || p.epochs == 0 || p.batch == 0 || !(p.lr.is_finite() && p.lr > 0.0) {
            return Err(config_err(
                "probe.hidden, epochs and batch must be >= 1 and probe.lr > 0",
            ));
        }
        if p.biased_lists == 0 {
            return Err(config_err("probe.biased_lists must be >= 1"));
        }
        if self.corpus.carrier == Carrier::Email
            && self.corpus.names.is_none()
            && self.taxonomy != TaxonomyKind::Continent
        {
            return Err(config_err(
                "the built-in email corpus is labeled by continent only",
            ));
        }
        let paths = [
            ("corpus.names", &self.corpus.names),
            ("corpus.interactions", &self.corpus.interactions),
            ("corpus.topics", &self.corpus.topics),
            (
                "counterfactual.probe_model",
                &self.counterfactual.probe_model,
            ),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(config_err(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}
