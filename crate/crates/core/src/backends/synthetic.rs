//! Seeded recommender with a controllable group bias.
//!
//! Item categories are drawn from the mixture
//! `(1 − β)·uniform + β·w(group)` over the topic set. Sampling decisions use
//! integer thresholds on ChaCha output, so lists are bit-reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Audience, BackendError, ListRequest, RankRequest, Recommender};
use crate::corpus::{
    Domain, Item, RankingList, SensitiveTaxonomy, TaxonomyKind, TopicSet, UserProfile,
};
use crate::seeding::SeedStream;

/// Per-round growth of the most-clicked category in reinforcing mode.
pub const REINFORCE_FACTOR: f64 = 1.15;

const TITLE_WORDS: usize = 3;

/// Strength and direction of the synthetic group bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    /// β in `[0, 1]`.
    pub strength: f64,
    pub taxonomy: TaxonomyKind,
    /// category → topic label → non-negative weight.
    pub group_topic_weights: BTreeMap<String, BTreeMap<String, f64>>,
    pub seed: u64,
}

impl BiasSpec {
    /// Category `i` prefers topic `i mod N` exclusively.
    pub fn disjoint(
        taxonomy: &SensitiveTaxonomy,
        topics: &TopicSet,
        strength: f64,
        seed: u64,
    ) -> Self {
        let group_topic_weights = taxonomy
            .categories()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let label = topics.topics[i % topics.len()].label.clone();
                (c.clone(), BTreeMap::from([(label, 1.0)]))
            })
            .collect();
        Self {
            strength,
            taxonomy: taxonomy.kind(),
            group_topic_weights,
            seed,
        }
    }

    /// No bias at all.
    pub fn neutral(taxonomy: TaxonomyKind, seed: u64) -> Self {
        Self {
            strength: 0.0,
            taxonomy,
            group_topic_weights: BTreeMap::new(),
            seed,
        }
    }

    fn validate(&self, topics: &TopicSet) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(BackendError::Config(format!(
                "bias strength {} outside [0, 1]",
                self.strength
            )));
        }
        for (group, weights) in &self.group_topic_weights {
            let mut total = 0.0;
            for (label, &w) in weights {
                if topics.index_of(label).is_none() {
                    return Err(BackendError::Config(format!(
                        "group {group}: unknown topic `{label}`"
                    )));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(BackendError::Config(format!(
                        "group {group}: bad weight {w} for `{label}`"
                    )));
                }
                total += w;
            }
            if total <= 0.0 {
                return Err(BackendError::Config(format!(
                    "group {group}: weights sum to 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMode {
    #[default]
    Fresh,
    /// The user's most-clicked category in the supplied history gains
    /// weight by [`REINFORCE_FACTOR`] per elapsed round.
    Reinforcing,
}

pub struct SyntheticBackend {
    id: String,
    spec: BiasSpec,
    topics: TopicSet,
    mode: SyntheticMode,
    /// Normalized group weights over topic indices.
    group_weights: BTreeMap<String, Vec<f64>>,
}

impl SyntheticBackend {
    pub fn new(
        spec: BiasSpec,
        topics: TopicSet,
        mode: SyntheticMode,
    ) -> Result<Self, BackendError> {
        spec.validate(&topics)?;
        let group_weights = spec
            .group_topic_weights
            .iter()
            .map(|(g, ws)| {
                let mut v = vec![0.0; topics.len()];
                for (label, w) in ws {
                    v[topics.index_of(label).expect("validated")] += w;
                }
                let total: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= total);
                (g.to_ascii_lowercase(), v)
            })
            .collect();
        let id = format!(
            "synthetic-b{:.2}-{}",
            spec.strength,
            match mode {
                SyntheticMode::Fresh => "fresh",
                SyntheticMode::Reinforcing => "reinforcing",
            }
        );
        Ok(Self {
            id,
            spec,
            topics,
            mode,
            group_weights,
        })
    }

    pub fn spec(&self) -> &BiasSpec {
        &self.spec
    }

    pub fn topics(&self) -> &TopicSet {
        &self.topics
    }

    fn resolve_group<'a>(&self, audience: &Audience<'a>) -> Result<Option<&'a str>, BackendError> {
        match audience {
            Audience::Neutral => Ok(None),
            Audience::Explicit(g) => Ok(Some(g)),
            Audience::User(u) => match u.label(self.spec.taxonomy) {
                Some(g) => Ok(Some(g)),
                None if self.spec.strength > 0.0 => Err(BackendError::MissingLabel(u.id.clone())),
                None => Ok(None),
            },
        }
    }

    /// Category mixture for a group, before any reinforcement.
    pub fn mixture(&self, group: Option<&str>) -> Result<Vec<f64>, BackendError> {
        let n = self.topics.len();
        let uniform = 1.0 / n as f64;
        let beta = self.spec.strength;
        // the group branch is skipped entirely when β = 0
        if beta == 0.0 {
            return Ok(vec![uniform; n]);
        }
        let Some(group) = group else {
            return Ok(vec![uniform; n]);
        };
        let weights = self
            .group_weights
            .get(&group.to_ascii_lowercase())
            .ok_or_else(|| BackendError::UnknownGroup(group.to_string()))?;
        Ok(weights
            .iter()
            .map(|w| (1.0 - beta) * uniform + beta * w)
            .collect())
    }

    fn reinforce(&self, mut p: Vec<f64>, history: &[Item], round: u32) -> Vec<f64> {
        if self.mode != SyntheticMode::Reinforcing || history.is_empty() {
            return p;
        }
        let mut counts = vec![0usize; self.topics.len()];
        let mut last_seen = vec![0usize; self.topics.len()];
        for (pos, item) in history.iter().enumerate() {
            if let Some(t) = self.topics.index_of(&item.category) {
                counts[t] += 1;
                last_seen[t] = pos;
            }
        }
        // most clicked, ties to the most recently clicked
        let Some(top) = (0..counts.len())
            .filter(|&t| counts[t] > 0)
            .max_by_key(|&t| (counts[t], last_seen[t]))
        else {
            return p;
        };
        p[top] *= REINFORCE_FACTOR.powi(round.saturating_sub(1) as i32);
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// Sample one item from the category distribution `p`.
    fn draw_item(&self, p: &[f64], mut rng: impl Rng, domain: Domain) -> Item {
        let table = cumulative_table(p);
        let r = rng.random::<u64>() >> 11;
        let topic_idx = table.iter().position(|&c| r < c).unwrap_or(table.len() - 1);
        let topic = &self.topics.topics[topic_idx];
        // partial Fisher-Yates over the keyword list
        let mut idx: Vec<usize> = (0..topic.keywords.len()).collect();
        let words = TITLE_WORDS.min(idx.len());
        for i in 0..words {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let title = idx[..words]
            .iter()
            .map(|&i| capitalize(&topic.keywords[i]))
            .collect::<Vec<_>>()
            .join(" ");
        Item {
            title,
            category: topic.label.clone(),
            domain,
        }
    }
}

/// Cumulative thresholds on a 53-bit integer scale; zero-weight entries get
/// empty intervals.
fn cumulative_table(p: &[f64]) -> Vec<u64> {
    const SCALE: f64 = (1u64 << 53) as f64;
    let total: f64 = p.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<u64> = p
        .iter()
        .map(|w| {
            acc += w;
            ((acc / total) * SCALE).round() as u64
        })
        .collect();
    // the last positive-weight entry closes the range; trailing zero-weight
    // entries then share its bound and are never selected
    if let Some(last) = p.iter().rposition(|&w| w > 0.0) {
        for c in &mut out[last..] {
            *c = 1u64 << 53;
        }
    }
    out
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

impl Recommender for SyntheticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn recommend(&self, req: &ListRequest<'_>) -> Result<RankingList, BackendError> {
        if req.domain != self.topics.domain {
            return Err(BackendError::Config(format!(
                "backend serves {} but request is for {}",
                self.topics.domain, req.domain
            )));
        }
        let group = self.resolve_group(&req.audience)?;
        let p = self.reinforce(self.mixture(group)?, req.history, req.round);
        let stream = SeedStream::new(self.spec.seed)
            .with_str("list")
            .with_str(req.subject_id)
            .with_u64(u64::from(req.round))
            .with_u64(u64::from(req.repeat));
        let items = (0..req.k)
            .map(|pos| {
                let rng = stream.clone().with_u64(pos as u64).rng();
                self.draw_item(&p, rng, req.domain)
            })
            .collect();
        Ok(RankingList::new(
            req.subject_id,
            items,
            req.k,
            req.round,
            &self.id,
        )?)
    }

    /// Plackett-Luce ranking via the Gumbel trick: each candidate's key is
    /// `ln p(category) + G`, with the Gumbel noise `G` drawn from a stream
    /// that depends on the user and position but not the group, so
    /// counterfactual worlds share their noise.
    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError> {
        let group = self.resolve_group(&Audience::User(req.user))?;
        let p = self.mixture(group)?;
        let uniform = 1.0 / self.topics.len() as f64;
        let stream = SeedStream::new(self.spec.seed)
            .with_str("rank")
            .with_str(&req.user.id)
            .with_u64(u64::from(req.round))
            .with_u64(u64::from(req.repeat));
        let mut keyed: Vec<(f64, f64, usize)> = req
            .candidates
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let u: f64 = stream.clone().with_u64(pos as u64).rng().random();
                let gumbel = -(-(u.max(f64::MIN_POSITIVE)).ln()).ln();
                let weight = self
                    .topics
                    .index_of(&item.category)
                    .map_or(uniform, |t| p[t]);
                (weight.ln() + gumbel, gumbel, pos)
            })
            .collect();
        // higher key first; −∞ keys fall back to the noise, then position
        keyed.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
        });
        Ok(keyed
            .into_iter()
            .map(|(_, _, pos)| req.candidates[pos].clone())
            .collect())
    }
}

/// One-shot form: a k-list for `user` at round 0.
pub fn synthetic_recommend(
    user: &UserProfile,
    topics: &TopicSet,
    spec: &BiasSpec,
    k: usize,
    mode: SyntheticMode,
) -> Result<RankingList, BackendError> {
    let backend = SyntheticBackend::new(spec.clone(), topics.clone(), mode)?;
    backend.recommend(&super::ListRequest {
        history: &user.history,
        ..super::ListRequest::for_user(user, topics.domain, k)
    })
}
