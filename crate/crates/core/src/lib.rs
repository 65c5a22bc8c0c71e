//! Counterfactual fairness auditing for LLM-based recommenders.
//!
//! The crate measures *implicit* user unfairness: recommenders that change
//! their output when only a non-sensitive attribute (a first name, an email
//! domain) differs between users. The pieces are:
//!
//! - [`corpus`]: sensitive taxonomies, labeled name/email corpora, topic
//!   fixtures and interaction logs.
//! - [`backends`]: prompt rendering, a caching chat-completion client, a
//!   seeded synthetic recommender with tunable bias, and the list parser.
//! - [`embed`]: pluggable text encoders (feature hashing or a remote service).
//! - [`metrics`]: topic-distribution proxy, Gini/Shannon diversity,
//!   NDCG/MRR and the U-Metric.
//! - [`probe`]: point-wise and pair-wise attribute probes trained from scratch.
//! - [`audit`]: topic audits and counterfactual U-Metric evaluation.
//! - [`simulate`]: round-based feedback-loop simulation.
//! - [`report`]: on-disk report and trace layout.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results are identical either way.

pub mod audit;
pub mod backends;
pub mod corpus;
pub mod embed;
mod error;
pub mod metrics;
mod net;
pub mod par;
pub mod probe;
pub mod report;
pub mod seeding;
pub mod simulate;

pub use error::{Error, Result};
pub use net::RetryPolicy;

/// Version string embedded in every report.
pub const TOOL_VERSION: &str = concat!("fairprobe ", env!("CARGO_PKG_VERSION"));
