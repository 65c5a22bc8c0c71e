//! Closed-form measurements: the topic-distribution proxy, diversity
//! indices, single-click ranking metrics and the U-Metric.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RankingList, TopicSet};
use crate::embed::{dot_slices, EmbedError, Embedder};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("input sums to zero")]
    ZeroMass,
    #[error("negative or non-finite entry {value} at index {index}")]
    BadEntry { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
}

/// Softmax with max subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// How per-item topic affinities are pooled into the logits `Z_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicAggregation {
    /// `Z_j = Σ_u Σ_i e(T_j)·e(i)`. The softmax sharpens with group size.
    Sum,
    /// The same sum divided by the number of items in the group.
    #[default]
    Mean,
}

/// Per-group probability vector over the N topic sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTopicDistribution {
    pub group: String,
    pub probs: Vec<f64>,
    pub n_users: usize,
    pub n_items: usize,
}

/// Pre-embedded topic sentences, reusable across groups and rounds.
pub struct TopicProjector<'a> {
    embedder: &'a dyn Embedder,
    topic_vectors: Vec<Vec<f64>>,
    aggregation: TopicAggregation,
}

impl<'a> TopicProjector<'a> {
    pub fn new(
        topics: &TopicSet,
        embedder: &'a dyn Embedder,
        aggregation: TopicAggregation,
    ) -> Result<Self, MetricError> {
        let topic_vectors = embedder
            .embed_batch(&topics.sentences())?
            .into_iter()
            .map(|v| v.values)
            .collect();
        Ok(Self {
            embedder,
            topic_vectors,
            aggregation,
        })
    }

    pub fn n_topics(&self) -> usize {
        self.topic_vectors.len()
    }

    pub fn aggregation(&self) -> TopicAggregation {
        self.aggregation
    }

    /// Per-topic affinities `e(T_j)·e(i)` for one item title.
    pub fn affinities(&self, title: &str) -> Result<Vec<f64>, MetricError> {
        let v = self.embedder.embed(title)?;
        self.topic_vectors
            .iter()
            .map(|t| dot_slices(t, &v.values).map_err(MetricError::from))
            .collect()
    }

    /// Topic logits `Z` for a group's lists.
    pub fn logits(&self, lists: &[&RankingList]) -> Result<(Vec<f64>, usize), MetricError> {
        if lists.is_empty() {
            return Err(MetricError::Empty);
        }
        // Lists are scored in parallel, then folded in input order so the
        // floating-point sum does not depend on scheduling.
        let partials = par::map(lists, |list| -> Result<Vec<f64>, MetricError> {
            let mut z = vec![0.0; self.n_topics()];
            for item in &list.items {
                for (acc, a) in z.iter_mut().zip(self.affinities(&item.title)?) {
                    *acc += a;
                }
            }
            Ok(z)
        });
        let mut z = vec![0.0; self.n_topics()];
        let mut n_items = 0;
        for (list, partial) in lists.iter().zip(partials) {
            for (acc, p) in z.iter_mut().zip(partial?) {
                *acc += p;
            }
            n_items += list.items.len();
        }
        if n_items == 0 {
            return Err(MetricError::Empty);
        }
        if self.aggregation == TopicAggregation::Mean {
            z.iter_mut().for_each(|v| *v /= n_items as f64);
        }
        Ok((z, n_items))
    }

    pub fn distribution(
        &self,
        group: &str,
        lists: &[&RankingList],
    ) -> Result<GroupTopicDistribution, MetricError> {
        let (z, n_items) = self.logits(lists)?;
        let n_users = lists
            .iter()
            .map(|l| l.user_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        Ok(GroupTopicDistribution {
            group: group.to_string(),
            probs: softmax(&z),
            n_users,
            n_items,
        })
    }
}

/// Topic distribution of one group's lists, using mean pooling.
pub fn topic_distribution(
    group: &str,
    lists: &[&RankingList],
    topics: &TopicSet,
    embedder: &dyn Embedder,
) -> Result<GroupTopicDistribution, MetricError> {
    TopicProjector::new(topics, embedder, TopicAggregation::default())?.distribution(group, lists)
}

/// Total-variation distance `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn check_entries(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(MetricError::BadEntry { index, value });
        }
        total += value;
    }
    Ok(total)
}

/// Gini index `Σ_i Σ_j |S_i − S_j| / (2N Σ_i S_i)`, in `[0, (N−1)/N]`.
///
/// Uses the sorted closed form `Σ_i (2i − N + 1) S_(i)` for the double sum.
pub fn gini(values: &[f64]) -> Result<f64, MetricError> {
    let total = check_entries(values)?;
    if total == 0.0 {
        return Err(MetricError::ZeroMass);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // terms i and n-1-i share a coefficient up to sign; pairing them makes
    // equal entries cancel exactly
    let weighted: f64 = (0..n / 2)
        .map(|i| (n - 1 - 2 * i) as f64 * (sorted[n - 1 - i] - sorted[i]))
        .sum();
    // weighted is half the double sum
    Ok((weighted / (n as f64 * total)).max(0.0))
}

/// Shannon entropy normalized by `ln N`, in `[0, 1]` (`0·ln 0 = 0`).
/// A single-entry distribution has entropy 0.
pub fn shannon(probs: &[f64]) -> Result<f64, MetricError> {
    let total = check_entries(probs)?;
    if (total - 1.0).abs() > 1e-6 {
        return Err(MetricError::NotNormalized(total));
    }
    if probs.len() == 1 {
        return Ok(0.0);
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok((h / (probs.len() as f64).ln()).clamp(0.0, 1.0))
}

/// 1-based rank of the clicked item, or a miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rank {
    At(usize),
    Miss,
}

impl Rank {
    /// Rank as a number when it is within the cutoff.
    pub fn within(self, k: usize) -> Option<usize> {
        match self {
            Rank::At(r) if r >= 1 && r <= k => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub user: String,
    pub group: String,
    pub rank: Rank,
    pub k: usize,
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` within the cutoff, else 0.
pub fn ndcg_at_k(outcome: &RankOutcome) -> f64 {
    outcome
        .rank
        .within(outcome.k)
        .map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2())
}

/// `1 / rank` within the cutoff, else 0.
pub fn mrr_at_k(outcome: &RankOutcome) -> f64 {
    outcome
        .rank
        .within(outcome.k)
        .map_or(0.0, |r| 1.0 / r as f64)
}

/// Which ranking metric a U-Metric row is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RankingMetric {
    #[serde(rename = "U-NDCG")]
    Ndcg,
    #[serde(rename = "U-MRR")]
    Mrr,
}

impl RankingMetric {
    pub const ALL: [RankingMetric; 2] = [Self::Ndcg, Self::Mrr];

    pub fn eval(self, outcome: &RankOutcome) -> f64 {
        match self {
            Self::Ndcg => ndcg_at_k(outcome),
            Self::Mrr => mrr_at_k(outcome),
        }
    }
}

impl fmt::Display for RankingMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ndcg => "U-NDCG",
            Self::Mrr => "U-MRR",
        })
    }
}

/// Mean anchored at the first value, so identical inputs give that value
/// exactly.
fn anchored_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

/// U-Metric: mean absolute deviation of per-user metric values from the
/// mean over all users. Groups only partition the sum, so the result is
/// invariant to how users are grouped or ordered.
pub fn u_metric<G>(per_user: &[(G, f64)]) -> Result<f64, MetricError> {
    if per_user.is_empty() {
        return Err(MetricError::Empty);
    }
    for (index, (_, value)) in per_user.iter().enumerate() {
        if !value.is_finite() {
            return Err(MetricError::BadEntry {
                index,
                value: *value,
            });
        }
    }
    let values = per_user.iter().map(|(_, v)| *v);
    let mean = anchored_mean(values.clone());
    Ok(values.map(|v| (v - mean).abs()).sum::<f64>() / per_user.len() as f64)
}
