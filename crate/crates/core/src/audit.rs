//! The two audit protocols.
//!
//! *Topic audit*: every user of a labeled name (or email) corpus gets a top-K
//! list; lists are pooled by gold label into topic distributions and the
//! groups are compared by total-variation distance.
//!
//! *Counterfactual evaluation*: each logged impression is replayed once per
//! category of the taxonomy. History and candidates stay fixed; only the
//! attribute carrier (name or email domain) changes. The clicked item's rank
//! in each world feeds NDCG/MRR, and the U-Metric is taken over a user's
//! worlds, then averaged over users.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{normalize_title, BackendError, ListRequest, RankRequest, Recommender};
use crate::corpus::{
    CarrierKind, Domain, InteractionLog, InteractionRecord, Item, NameCorpus, RankingList,
    SensitiveTaxonomy, TaxonomyKind, TopicSet, UserProfile, HISTORY_LEN, IMPRESSION_SIZE,
};
use crate::embed::Embedder;
use crate::metrics::{
    total_variation, u_metric, GroupTopicDistribution, MetricError, Rank, RankOutcome,
    RankingMetric, TopicAggregation, TopicProjector,
};
use crate::par;
use crate::probe::{argmax, BaseRates, ProbeError, ProbeMode, ProbeModel, RecallCounts};
use crate::seeding::SeedStream;

/// Default history window for attribute simulation.
pub const DEFAULT_HISTORY_WINDOW: usize = 5;
/// Cutoffs reported for counterfactual metrics.
pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("group `{0}` has no successfully generated lists")]
    EmptyGroup(String),
    #[error("no users to audit")]
    NoUsers,
    #[error("invalid audit plan: {0}")]
    Plan(String),
    #[error("no {carrier} values for category `{category}`")]
    EmptyPool { carrier: String, category: String },
    #[error("user {0} has no gold label and no probe was supplied")]
    NoLabel(String),
    #[error("empty history for user {0}")]
    EmptyHistory(String),
    #[error("taxonomy mismatch: {0}")]
    TaxonomyMismatch(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Topic-audit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPlan {
    pub taxonomy: SensitiveTaxonomy,
    pub domain: Domain,
    /// List length (20 for name prompts, 5 for email prompts).
    pub k: usize,
    pub repeats: u32,
    pub seed: u64,
    pub aggregation: TopicAggregation,
}

impl AuditPlan {
    pub fn new(taxonomy: SensitiveTaxonomy, domain: Domain) -> Self {
        Self {
            taxonomy,
            domain,
            k: 20,
            repeats: 1,
            seed: 0,
            aggregation: TopicAggregation::default(),
        }
    }

    fn validate(&self) -> Result<(), AuditError> {
        if self.k == 0 {
            return Err(AuditError::Plan("k must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(AuditError::Plan("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// A per-user failure that was skipped and reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedEntry {
    pub user_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDistance {
    pub a: String,
    pub b: String,
    pub total_variation: f64,
}

/// Result of one topic audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAudit {
    pub taxonomy: TaxonomyKind,
    pub domain: Domain,
    pub k: usize,
    pub repeats: u32,
    pub topic_labels: Vec<String>,
    /// In taxonomy order.
    pub distributions: Vec<GroupTopicDistribution>,
    pub pairwise: Vec<PairwiseDistance>,
    pub max_total_variation: f64,
    pub flagged: Vec<FlaggedEntry>,
    /// Every list that entered a distribution, with its group.
    #[serde(skip)]
    pub lists: Vec<(String, RankingList)>,
}

/// Generate lists for every user, pool them by gold label and compare the
/// groups' topic distributions.
///
/// Users whose request fails, or who have no label for the taxonomy, are
/// flagged and skipped; a group left without lists is an error.
pub fn run_topic_audit(
    plan: &AuditPlan,
    users: &[UserProfile],
    backend: &dyn Recommender,
    topics: &TopicSet,
    embedder: &dyn Embedder,
) -> Result<TopicAudit, AuditError> {
    plan.validate()?;
    if users.is_empty() {
        return Err(AuditError::NoUsers);
    }
    let tax = &plan.taxonomy;
    let per_user = par::map(users, |u| -> Result<(usize, Vec<RankingList>), String> {
        let label = u
            .label(tax.kind())
            .ok_or_else(|| format!("no {} label", tax.kind()))?;
        let group = tax
            .index_of(label)
            .ok_or_else(|| format!("label `{label}` is not a {} category", tax.kind()))?;
        let lists = (0..plan.repeats)
            .map(|repeat| {
                backend
                    .recommend(&ListRequest {
                        repeat,
                        ..ListRequest::for_user(u, plan.domain, plan.k)
                    })
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((group, lists))
    });

    let mut grouped: Vec<Vec<RankingList>> = vec![Vec::new(); tax.len()];
    let mut flagged = Vec::new();
    for (u, r) in users.iter().zip(per_user) {
        match r {
            Ok((g, lists)) => grouped[g].extend(lists),
            Err(reason) => {
                log::warn!("topic audit: skipping user {}: {reason}", u.id);
                flagged.push(FlaggedEntry {
                    user_id: u.id.clone(),
                    reason,
                });
            }
        }
    }

    let projector = TopicProjector::new(topics, embedder, plan.aggregation)?;
    let mut distributions = Vec::with_capacity(tax.len());
    for (g, lists) in grouped.iter().enumerate() {
        if lists.is_empty() {
            return Err(AuditError::EmptyGroup(tax.category(g).to_string()));
        }
        let refs: Vec<&RankingList> = lists.iter().collect();
        distributions.push(projector.distribution(tax.category(g), &refs)?);
    }
    let mut pairwise = Vec::new();
    let mut max_tv = 0.0f64;
    for i in 0..distributions.len() {
        for j in i + 1..distributions.len() {
            let tv = total_variation(&distributions[i].probs, &distributions[j].probs)?;
            max_tv = max_tv.max(tv);
            pairwise.push(PairwiseDistance {
                a: distributions[i].group.clone(),
                b: distributions[j].group.clone(),
                total_variation: tv,
            });
        }
    }
    Ok(TopicAudit {
        taxonomy: tax.kind(),
        domain: plan.domain,
        k: plan.k,
        repeats: plan.repeats,
        topic_labels: topics.labels().map(str::to_string).collect(),
        distributions,
        pairwise,
        max_total_variation: max_tv,
        flagged,
        lists: grouped
            .into_iter()
            .enumerate()
            .flat_map(|(g, lists)| {
                let group = tax.category(g).to_string();
                lists.into_iter().map(move |l| (group.clone(), l))
            })
            .collect(),
    })
}

/// Category whose base-rate-corrected score, summed over the last `window`
/// history items, is largest: `argmax_s Σ_h ẑ_s(i_h) / z̃_s`.
pub fn simulate_user_attribute(
    history: &[Item],
    model: &ProbeModel,
    base: &BaseRates,
    embedder: &dyn Embedder,
    window: usize,
) -> Result<usize, AuditError> {
    if model.mode != ProbeMode::Point {
        return Err(AuditError::Plan(
            "attribute simulation needs a point-wise probe".into(),
        ));
    }
    if history.is_empty() || window == 0 {
        return Err(AuditError::EmptyHistory(String::new()));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let titles: Vec<String> = recent.iter().map(|i| i.title.clone()).collect();
    let vectors = embedder.embed_batch(&titles).map_err(ProbeError::from)?;
    let mut total = vec![0.0; model.taxonomy.len()];
    for v in vectors {
        let (_, scores) = crate::probe::infer_attribute(&v.values, model, base)?;
        for (t, s) in total.iter_mut().zip(scores) {
            *t += s;
        }
    }
    Ok(argmax(&total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    Real,
    Counterfactual,
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            World::Real => "real",
            World::Counterfactual => "counterfactual",
        })
    }
}

/// One replay of an impression with the attribute set to `category`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualCase {
    pub base_user_id: String,
    pub category: String,
    pub world: World,
    /// The user as presented to the backend; only the carrier differs
    /// between the cases of one impression.
    pub user: UserProfile,
    /// Candidates in prompt order (shuffled once per user).
    pub candidates: Vec<Item>,
    pub clicked: Item,
}

/// Attribute carriers (names or email domains) per category.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierPools {
    pub taxonomy: SensitiveTaxonomy,
    pub carrier: CarrierKind,
    pools: Vec<Vec<String>>,
}

impl CarrierPools {
    pub fn from_corpus(corpus: &NameCorpus) -> Result<Self, AuditError> {
        let pools: Vec<Vec<String>> = corpus
            .taxonomy
            .categories()
            .iter()
            .map(|c| corpus.pool(c).into_iter().map(str::to_string).collect())
            .collect();
        for (c, p) in corpus.taxonomy.categories().iter().zip(&pools) {
            if p.is_empty() {
                return Err(AuditError::EmptyPool {
                    carrier: format!("{:?}", corpus.carrier).to_lowercase(),
                    category: c.clone(),
                });
            }
        }
        Ok(Self {
            taxonomy: corpus.taxonomy.clone(),
            carrier: corpus.carrier,
            pools,
        })
    }

    pub fn pool(&self, category_index: usize) -> &[String] {
        &self.pools[category_index]
    }
}

/// Where the real-world category of a logged user comes from when the log
/// has no gold label.
#[derive(Clone, Copy)]
pub struct ProbeContext<'a> {
    pub model: &'a ProbeModel,
    pub base: &'a BaseRates,
    pub embedder: &'a dyn Embedder,
    pub window: usize,
}

fn with_carrier(user: &UserProfile, carrier: CarrierKind, value: &str) -> UserProfile {
    let mut u = user.clone();
    match carrier {
        CarrierKind::Name => {
            u.name = Some(value.to_string());
            u.email_domain = None;
        }
        CarrierKind::EmailDomain => {
            u.name = None;
            u.email_domain = Some(value.to_string());
        }
    }
    u
}

/// Build the `|S|` cases of one impression.
///
/// The real world keeps the user's own carrier when it has one; every other
/// world gets a carrier drawn, seeded by `(seed, user, category)`, from that
/// category's pool.
pub fn counterfactual_cases(
    record: &InteractionRecord,
    real_category: usize,
    pools: &CarrierPools,
    seed: u64,
) -> Vec<CounterfactualCase> {
    let tax = &pools.taxonomy;
    let user = &record.user;
    let mut candidates = record.candidates.clone();
    candidates.shuffle(
        &mut SeedStream::new(seed)
            .with_str("cf-candidates")
            .with_str(&user.id)
            .rng(),
    );
    let own = match pools.carrier {
        CarrierKind::Name => user.name.as_deref(),
        CarrierKind::EmailDomain => user.email_domain.as_deref(),
    };
    (0..tax.len())
        .map(|s| {
            let category = tax.category(s).to_string();
            let world = if s == real_category {
                World::Real
            } else {
                World::Counterfactual
            };
            let carrier = match (world, own) {
                (World::Real, Some(v)) => v.to_string(),
                _ => {
                    let mut rng = SeedStream::new(seed)
                        .with_str("cf-carrier")
                        .with_str(&user.id)
                        .with_str(&category)
                        .rng();
                    pools
                        .pool(s)
                        .choose(&mut rng)
                        .expect("pools are non-empty")
                        .clone()
                }
            };
            let mut u = with_carrier(user, pools.carrier, &carrier);
            u.gold_labels.insert(tax.kind(), category.clone());
            CounterfactualCase {
                base_user_id: user.id.clone(),
                category,
                world,
                user: u,
                candidates: candidates.clone(),
                clicked: record.clicked().clone(),
            }
        })
        .collect()
}

/// 1-based position of `clicked` in `ranked`, matched by normalized title.
pub fn rank_of(ranked: &[Item], clicked: &Item) -> Rank {
    let key = normalize_title(&clicked.title);
    ranked
        .iter()
        .position(|i| normalize_title(&i.title) == key)
        .map_or(Rank::Miss, |p| Rank::At(p + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub user_id: String,
    pub category: String,
    pub world: World,
    pub repeat: u32,
    pub rank: Rank,
    pub ranked_titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UMetricCell {
    pub taxonomy: TaxonomyKind,
    pub metric: RankingMetric,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub taxonomy: TaxonomyKind,
    pub users_evaluated: usize,
    pub cells: Vec<UMetricCell>,
    pub flagged: Vec<FlaggedEntry>,
    pub outcomes: Vec<CaseOutcome>,
}

impl CounterfactualReport {
    pub fn cell(&self, metric: RankingMetric, k: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.metric == metric && c.k == k)
            .map(|c| c.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPlan {
    pub domain: Domain,
    pub ks: Vec<usize>,
    pub repeats: u32,
    pub seed: u64,
}

impl CounterfactualPlan {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            ks: DEFAULT_KS.to_vec(),
            repeats: 1,
            seed: 0,
        }
    }
}

enum UserResult {
    Done(Vec<CaseOutcome>),
    Flagged(String),
}

fn evaluate_user(
    record: &InteractionRecord,
    plan: &CounterfactualPlan,
    pools: &CarrierPools,
    backend: &dyn Recommender,
    probe: Option<&ProbeContext<'_>>,
) -> Result<UserResult, AuditError> {
    let tax = &pools.taxonomy;
    let user = &record.user;
    let real = match user.label(tax.kind()).and_then(|l| tax.index_of(l)) {
        Some(s) => s,
        None => match probe {
            Some(p) if !user.history.is_empty() => {
                simulate_user_attribute(&user.history, p.model, p.base, p.embedder, p.window)?
            }
            Some(_) => return Ok(UserResult::Flagged("no label and empty history".into())),
            None => return Ok(UserResult::Flagged("no gold label and no probe".into())),
        },
    };
    let mut outcomes = Vec::new();
    for case in counterfactual_cases(record, real, pools, plan.seed) {
        for repeat in 0..plan.repeats {
            let ranked = match backend.rank(&RankRequest {
                user: &case.user,
                candidates: &case.candidates,
                domain: plan.domain,
                round: 0,
                repeat,
            }) {
                Ok(r) => r,
                Err(e @ (BackendError::OutsideCandidates(_) | BackendError::Parse { .. })) => {
                    return Ok(UserResult::Flagged(format!("{} world: {e}", case.category)));
                }
                Err(e) => return Err(e.into()),
            };
            outcomes.push(CaseOutcome {
                user_id: case.base_user_id.clone(),
                category: case.category.clone(),
                world: case.world,
                repeat,
                rank: rank_of(&ranked, &case.clicked),
                ranked_titles: ranked.into_iter().map(|i| i.title).collect(),
            });
        }
    }
    Ok(UserResult::Done(outcomes))
}

/// Per-user U-Metric over that user's worlds, averaged across users.
/// `outcomes` holds `|S| · repeats` consecutive entries per user.
fn u_metric_cells(
    taxonomy: TaxonomyKind,
    per_user: &[Vec<CaseOutcome>],
    ks: &[usize],
) -> Result<Vec<UMetricCell>, AuditError> {
    let mut cells = Vec::new();
    for metric in RankingMetric::ALL {
        for &k in ks {
            let mut total = 0.0;
            for outcomes in per_user {
                // world → metric values over repeats
                let mut worlds: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
                let mut order = Vec::new();
                for o in outcomes {
                    let value = metric.eval(&RankOutcome {
                        user: o.user_id.clone(),
                        group: o.category.clone(),
                        rank: o.rank,
                        k,
                    });
                    let e = worlds.entry(o.category.as_str()).or_insert_with(|| {
                        order.push(o.category.as_str());
                        (0, 0.0)
                    });
                    e.0 += 1;
                    e.1 += value;
                }
                let values: Vec<(&str, f64)> = order
                    .iter()
                    .map(|c| {
                        let (n, sum) = worlds[c];
                        (*c, sum / n as f64)
                    })
                    .collect();
                total += u_metric(&values)?;
            }
            cells.push(UMetricCell {
                taxonomy,
                metric,
                k,
                value: if per_user.is_empty() {
                    0.0
                } else {
                    total / per_user.len() as f64
                },
            });
        }
    }
    Ok(cells)
}

/// Replay every impression in all `|S|` worlds and compute U-NDCG@K and
/// U-MRR@K for each cutoff in `plan.ks`.
///
/// Users whose ranking cannot be used (output outside the candidate set,
/// unparseable output, no attribute) are flagged and left out; transport
/// and configuration failures abort.
pub fn run_counterfactual_eval(
    log: &InteractionLog,
    pools: &CarrierPools,
    backend: &dyn Recommender,
    plan: &CounterfactualPlan,
    probe: Option<&ProbeContext<'_>>,
) -> Result<CounterfactualReport, AuditError> {
    if plan.ks.is_empty() || plan.ks.contains(&0) || plan.repeats == 0 {
        return Err(AuditError::Plan("need ks >= 1 and repeats >= 1".into()));
    }
    if let Some(p) = probe {
        if p.model.taxonomy.kind() != pools.taxonomy.kind() {
            return Err(AuditError::TaxonomyMismatch(format!(
                "probe is for {}, pools are for {}",
                p.model.taxonomy.kind(),
                pools.taxonomy.kind()
            )));
        }
    }
    let results = par::map(&log.records, |r| {
        evaluate_user(r, plan, pools, backend, probe)
    });
    let mut per_user = Vec::new();
    let mut flagged = Vec::new();
    for (record, r) in log.records.iter().zip(results) {
        match r? {
            UserResult::Done(o) => per_user.push(o),
            UserResult::Flagged(reason) => {
                log::warn!("counterfactual: dropping user {}: {reason}", record.user.id);
                flagged.push(FlaggedEntry {
                    user_id: record.user.id.clone(),
                    reason,
                });
            }
        }
    }
    let cells = u_metric_cells(pools.taxonomy.kind(), &per_user, &plan.ks)?;
    Ok(CounterfactualReport {
        taxonomy: pools.taxonomy.kind(),
        users_evaluated: per_user.len(),
        cells,
        flagged,
        outcomes: per_user.into_iter().flatten().collect(),
    })
}

/// How a group's recall compares with the `1/|S|` baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecallFlag {
    #[serde(rename = "at baseline")]
    AtBaseline,
    #[serde(rename = "over-inferred")]
    OverInferred,
    #[serde(rename = "under-inferred")]
    UnderInferred,
}

impl RecallFlag {
    /// Compare `counts.recall()` with `1/n_categories` exactly, in integers.
    pub fn classify(counts: &RecallCounts, n_categories: usize) -> Option<Self> {
        let d = counts.denominator();
        if d == 0 {
            return None;
        }
        let lhs = counts.inferred_in_group as u128 * n_categories as u128;
        Some(match lhs.cmp(&(d as u128)) {
            std::cmp::Ordering::Equal => Self::AtBaseline,
            std::cmp::Ordering::Greater => Self::OverInferred,
            std::cmp::Ordering::Less => Self::UnderInferred,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AtBaseline => "at baseline",
            Self::OverInferred => "over-inferred",
            Self::UnderInferred => "under-inferred",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAnalysis {
    pub mode: ProbeMode,
    pub taxonomy: TaxonomyKind,
    pub group: String,
    pub recall: f64,
    pub baseline: f64,
    pub flag: RecallFlag,
    pub counts: RecallCounts,
}

/// Run identification carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub config_digest: String,
    pub backend_id: String,
    pub embedder_id: String,
    pub seed: u64,
    /// Records skipped while loading inputs.
    pub warnings: usize,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AuditReport {
    pub metadata: ReportMetadata,
    #[serde(default)]
    pub topic_audits: Vec<TopicAudit>,
    #[serde(default)]
    pub counterfactual: Vec<CounterfactualReport>,
    #[serde(default)]
    pub probe: Vec<ProbeAnalysis>,
    #[serde(default)]
    pub probe_accuracy: Vec<ProbeAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAccuracy {
    pub mode: ProbeMode,
    pub taxonomy: TaxonomyKind,
    pub accuracy: f64,
    pub random_baseline: f64,
    pub base_rate_corrected: bool,
}

impl AuditReport {
    fn covers(&self, kind: TaxonomyKind) -> bool {
        self.topic_audits.iter().any(|t| t.taxonomy == kind)
            || self.counterfactual.iter().any(|c| c.taxonomy == kind)
    }
}

/// Add one row per group comparing its recall with `1/|S|`.
pub fn attach_probe_analysis(
    report: &mut AuditReport,
    model: &ProbeModel,
    recalls: &[RecallCounts],
) -> Result<(), AuditError> {
    let tax = &model.taxonomy;
    if !report.covers(tax.kind()) {
        return Err(AuditError::TaxonomyMismatch(format!(
            "report has no {} results",
            tax.kind()
        )));
    }
    let groups: Vec<&str> = recalls.iter().map(|r| r.group.as_str()).collect();
    if groups
        != tax
            .categories()
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
    {
        return Err(AuditError::TaxonomyMismatch(format!(
            "recall groups {groups:?} are not the {} categories",
            tax.kind()
        )));
    }
    for counts in recalls {
        let (Some(recall), Some(flag)) = (counts.recall(), RecallFlag::classify(counts, tax.len()))
        else {
            log::warn!("probe analysis: group {} has no users", counts.group);
            continue;
        };
        report.probe.push(ProbeAnalysis {
            mode: model.mode,
            taxonomy: tax.kind(),
            group: counts.group.clone(),
            recall,
            baseline: tax.random_baseline(),
            flag,
            counts: counts.clone(),
        });
    }
    Ok(())
}

/// Draw `per_group` users per category with seeded carriers from `corpus`.
/// Ids are `<category>-<n>`.
pub fn sample_users(
    corpus: &NameCorpus,
    per_group: usize,
    seed: u64,
) -> Result<Vec<UserProfile>, AuditError> {
    let pools = CarrierPools::from_corpus(corpus)?;
    let tax = &corpus.taxonomy;
    let mut users = Vec::with_capacity(per_group * tax.len());
    for s in 0..tax.len() {
        let category = tax.category(s);
        let mut rng = SeedStream::new(seed)
            .with_str("users")
            .with_str(category)
            .rng();
        for n in 0..per_group {
            let value = pools.pool(s).choose(&mut rng).expect("non-empty pool");
            let base = UserProfile::with_name(format!("{}-{n:04}", category.to_lowercase()), "");
            users.push(with_carrier(&base, corpus.carrier, value).labeled(tax.kind(), category));
        }
    }
    Ok(users)
}

fn random_item(topics: &TopicSet, rng: &mut impl Rng, domain: Domain) -> Item {
    let topic = topics.topics.choose(rng).expect("topic set is non-empty");
    let words: Vec<&String> = topic.keywords.choose_multiple(rng, 3).collect();
    let title = words
        .iter()
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ");
    Item {
        title,
        category: topic.label.clone(),
        domain,
    }
}

/// One impression per user: a five-item history and five candidates with
/// distinct titles and a uniformly placed click. Users keep their labels.
pub fn synthetic_interaction_log(
    users: &[UserProfile],
    topics: &TopicSet,
    seed: u64,
) -> InteractionLog {
    let domain = topics.domain;
    let records = users
        .iter()
        .map(|u| {
            let mut rng = SeedStream::new(seed).with_str("log").with_str(&u.id).rng();
            let mut user = u.clone();
            user.history = (0..HISTORY_LEN)
                .map(|_| random_item(topics, &mut rng, domain))
                .collect();
            let mut candidates: Vec<Item> = Vec::with_capacity(IMPRESSION_SIZE);
            while candidates.len() < IMPRESSION_SIZE {
                let item = random_item(topics, &mut rng, domain);
                let key = normalize_title(&item.title);
                if candidates.iter().all(|c| normalize_title(&c.title) != key) {
                    candidates.push(item);
                }
            }
            InteractionRecord {
                user,
                candidates,
                clicked_index: rng.random_range(1..=IMPRESSION_SIZE),
            }
        })
        .collect();
    InteractionLog {
        records,
        rejected: Vec::new(),
    }
}
