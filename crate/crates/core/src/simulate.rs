//! Round-based feedback-loop simulation.
//!
//! Each round a user receives a list built from their last `window` clicks,
//! clicks the first item, and the click joins the history. Per round the
//! lists of each group are projected onto the topic set and summarized by
//! Gini and Shannon diversity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ListRequest, Recommender};
use crate::corpus::{Domain, Item, RankingList, SensitiveTaxonomy, TopicSet, UserProfile};
use crate::embed::Embedder;
use crate::metrics::{gini, shannon, MetricError, TopicAggregation, TopicProjector};
use crate::par;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("cannot click in an empty list")]
    EmptyList,
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error("no users in group `{0}`")]
    EmptyGroup(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Users always click the top item. Returns the 1-based position.
pub fn click_model(list: &RankingList) -> Result<usize, SimulationError> {
    if list.items.is_empty() {
        Err(SimulationError::EmptyList)
    } else {
        Ok(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub domain: Domain,
    pub rounds: u32,
    pub k: usize,
    /// Clicked items passed back as history.
    pub window: usize,
    pub aggregation: TopicAggregation,
}

impl SimulationConfig {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            rounds: 30,
            k: 5,
            window: 5,
            aggregation: TopicAggregation::default(),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        if self.rounds == 0 || self.k == 0 || self.window == 0 {
            return Err(SimulationError::Config(format!(
                "rounds, k and window must be >= 1 (got {}, {}, {})",
                self.rounds, self.k, self.window
            )));
        }
        Ok(())
    }
}

/// One user's rounds. `lists[r]` is the list of round `r + 1`; the user
/// clicked position 1 each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrace {
    pub user_id: String,
    pub group: String,
    pub lists: Vec<RankingList>,
    pub clicked_positions: Vec<usize>,
    pub clicks: Vec<Item>,
    /// Backend failure that ended the run early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-round diversity series of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub group: String,
    pub n_users: usize,
    pub gini_series: Vec<f64>,
    pub shannon_series: Vec<f64>,
    /// Topic label → per-round probability, in topic order.
    pub topic_series: Vec<(String, Vec<f64>)>,
    /// Set when a member's run failed; the series stop before that round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<String>,
}

impl GroupTrace {
    pub fn rounds(&self) -> usize {
        self.gini_series.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub backend_id: String,
    /// In taxonomy order.
    pub groups: Vec<GroupTrace>,
    pub users: Vec<UserTrace>,
}

fn simulate_user(
    user: &UserProfile,
    group: &str,
    backend: &dyn Recommender,
    cfg: &SimulationConfig,
) -> UserTrace {
    let mut trace = UserTrace {
        user_id: user.id.clone(),
        group: group.to_string(),
        lists: Vec::with_capacity(cfg.rounds as usize),
        clicked_positions: Vec::new(),
        clicks: Vec::new(),
        error: None,
    };
    for round in 1..=cfg.rounds {
        let start = trace.clicks.len().saturating_sub(cfg.window);
        let req = ListRequest {
            round,
            history: &trace.clicks[start..],
            ..ListRequest::for_user(user, cfg.domain, cfg.k)
        };
        let list = match backend.recommend(&req) {
            Ok(l) => l,
            Err(e) => {
                trace.error = Some(format!("round {round}: {e}"));
                break;
            }
        };
        let pos = match click_model(&list) {
            Ok(p) => p,
            Err(e) => {
                trace.error = Some(format!("round {round}: {e}"));
                break;
            }
        };
        trace.clicks.push(list.items[pos - 1].clone());
        trace.clicked_positions.push(pos);
        trace.lists.push(list);
    }
    trace
}

/// Run `cfg.rounds` rounds for every user and summarize each group per
/// round. Users without a label for `taxonomy` are ignored.
pub fn run_simulation(
    users: &[UserProfile],
    taxonomy: &SensitiveTaxonomy,
    backend: &dyn Recommender,
    topics: &TopicSet,
    embedder: &dyn Embedder,
    cfg: &SimulationConfig,
) -> Result<SimulationResult, SimulationError> {
    cfg.validate()?;
    let mut members: Vec<(&UserProfile, usize)> = Vec::new();
    for u in users {
        match u.label(taxonomy.kind()).and_then(|l| taxonomy.index_of(l)) {
            Some(g) => members.push((u, g)),
            None => log::warn!("simulation: user {} has no {} label", u.id, taxonomy.kind()),
        }
    }
    for (g, c) in taxonomy.categories().iter().enumerate() {
        if !members.iter().any(|(_, mg)| *mg == g) {
            return Err(SimulationError::EmptyGroup(c.clone()));
        }
    }
    let traces = par::map(&members, |(u, g)| {
        simulate_user(u, taxonomy.category(*g), backend, cfg)
    });

    let projector = TopicProjector::new(topics, embedder, cfg.aggregation)?;
    let mut groups = Vec::with_capacity(taxonomy.len());
    for (g, category) in taxonomy.categories().iter().enumerate() {
        let group_traces: Vec<&UserTrace> = members
            .iter()
            .zip(&traces)
            .filter(|((_, mg), _)| *mg == g)
            .map(|(_, t)| t)
            .collect();
        let completed = group_traces
            .iter()
            .map(|t| t.lists.len())
            .min()
            .unwrap_or(0);
        let truncated = group_traces
            .iter()
            .find_map(|t| t.error.as_ref().map(|e| format!("user {}: {e}", t.user_id)));
        let mut gt = GroupTrace {
            group: category.clone(),
            n_users: group_traces.len(),
            gini_series: Vec::with_capacity(completed),
            shannon_series: Vec::with_capacity(completed),
            topic_series: topics
                .labels()
                .map(|l| (l.to_string(), Vec::new()))
                .collect(),
            truncated,
        };
        for r in 0..completed {
            let lists: Vec<&RankingList> = group_traces.iter().map(|t| &t.lists[r]).collect();
            let d = projector.distribution(category, &lists)?;
            gt.gini_series.push(gini(&d.probs)?);
            gt.shannon_series.push(shannon(&d.probs)?);
            for ((_, series), p) in gt.topic_series.iter_mut().zip(&d.probs) {
                series.push(*p);
            }
        }
        groups.push(gt);
    }
    Ok(SimulationResult {
        config: cfg.clone(),
        backend_id: backend.id().to_string(),
        groups,
        users: traces,
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
