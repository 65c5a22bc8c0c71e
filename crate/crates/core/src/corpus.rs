//! Sensitive taxonomies, labeled user corpora, topic fixtures and
//! interaction logs.
//!
//! File formats:
//!
//! - name corpus: UTF-8 CSV with header `name,category` (or
//!   `email_domain,category` for email-keyed audits), one record per line.
//! - interaction log: JSON lines, one impression per line:
//!   `{"user": {...}, "history": [...], "candidates": [...], "clicked": 3}`
//!   where `clicked` is the 1-based index of the clicked candidate.
//! - topic fixtures: `topics-<domain>-v1.json`, bundled with the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::SeedStream;

/// Candidates kept per impression (one clicked, four not clicked).
pub const IMPRESSION_SIZE: usize = 5;
/// Browsing-history items kept per user (most recent last).
pub const HISTORY_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no records")]
    NoRecords { path: String },
    #[error("{path}: bad header {found:?}, expected `name,category` or `email_domain,category`")]
    BadHeader { path: String, found: String },
    #[error("{path}: csv error: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid user profile {id}: {reason}")]
    Profile { id: String, reason: String },
    #[error("ranking list for {user_id} has {len} items, expected k={k}")]
    ListLength {
        user_id: String,
        len: usize,
        k: usize,
    },
    #[error("invalid topic set: {0}")]
    Topics(String),
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Kind of sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaxonomyKind {
    Gender,
    Race,
    Continent,
}

impl TaxonomyKind {
    pub const ALL: [TaxonomyKind; 3] = [Self::Gender, Self::Race, Self::Continent];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gender => "gender",
            Self::Race => "race",
            Self::Continent => "continent",
        }
    }

    /// Category labels used by the audits, in canonical order.
    pub fn default_categories(self) -> &'static [&'static str] {
        match self {
            Self::Gender => &["Male", "Female"],
            Self::Race => &["White", "Black", "Asian"],
            Self::Continent => &["Asia", "Americas", "Africa", "Europe", "Oceania"],
        }
    }
}

impl fmt::Display for TaxonomyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaxonomyKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gender" => Ok(Self::Gender),
            "race" => Ok(Self::Race),
            "continent" => Ok(Self::Continent),
            _ => Err(CorpusError::Unknown {
                what: "taxonomy",
                value: s.to_string(),
            }),
        }
    }
}

/// A sensitive attribute and its ordered categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveTaxonomy {
    kind: TaxonomyKind,
    categories: Vec<String>,
}

impl SensitiveTaxonomy {
    /// Build a taxonomy with custom labels. Labels must be unique, non-empty,
    /// and as many as the kind's default.
    pub fn new(kind: TaxonomyKind, categories: Vec<String>) -> Result<Self, CorpusError> {
        let expected = kind.default_categories().len();
        if categories.len() != expected {
            return Err(CorpusError::Taxonomy(format!(
                "{kind} needs {expected} categories, got {}",
                categories.len()
            )));
        }
        for (i, c) in categories.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(CorpusError::Taxonomy(format!("empty category at {i}")));
            }
            if categories[..i].contains(c) {
                return Err(CorpusError::Taxonomy(format!("duplicate category {c}")));
            }
        }
        Ok(Self { kind, categories })
    }

    pub fn standard(kind: TaxonomyKind) -> Self {
        Self {
            kind,
            categories: kind
                .default_categories()
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn kind(&self) -> TaxonomyKind {
        self.kind
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Position of `label`, matched case-insensitively.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.categories
            .iter()
            .position(|c| c.eq_ignore_ascii_case(label))
    }

    pub fn category(&self, index: usize) -> &str {
        &self.categories[index]
    }

    /// Accuracy of uniform guessing, `1/|S|`.
    pub fn random_baseline(&self) -> f64 {
        1.0 / self.len() as f64
    }
}

/// Recommendation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    News,
    Job,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::News => "news",
            Self::Job => "job",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Self::News => "news",
            Self::Job => "jobs",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "news" => Ok(Self::News),
            "job" | "jobs" => Ok(Self::Job),
            _ => Err(CorpusError::Unknown {
                what: "domain",
                value: s.to_string(),
            }),
        }
    }
}

/// A recommendable item, represented by its title sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub title: String,
    pub category: String,
    pub domain: Domain,
}

impl Item {
    pub fn new(
        title: impl Into<String>,
        category: impl Into<String>,
        domain: Domain,
    ) -> Result<Self, CorpusError> {
        let title = title.into();
        if title.trim().is_empty() {
            return Err(CorpusError::Profile {
                id: "<item>".into(),
                reason: "empty item title".into(),
            });
        }
        Ok(Self {
            title,
            category: category.into(),
            domain,
        })
    }
}

/// A user known only through non-sensitive attributes, plus optional gold
/// sensitive labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email_domain: Option<String>,
    #[serde(default)]
    pub gold_labels: BTreeMap<TaxonomyKind, String>,
    #[serde(default)]
    pub history: Vec<Item>,
}

impl UserProfile {
    pub fn with_name(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: Some(name.into()),
            email_domain: None,
            gold_labels: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn with_email_domain(id: impl Into<String>, domain: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: None,
            email_domain: Some(domain.into()),
            gold_labels: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn labeled(mut self, kind: TaxonomyKind, category: impl Into<String>) -> Self {
        self.gold_labels.insert(kind, category.into());
        self
    }

    pub fn label(&self, kind: TaxonomyKind) -> Option<&str> {
        self.gold_labels.get(&kind).map(String::as_str)
    }

    /// Check the identifier invariant and that every gold label belongs to
    /// its taxonomy (when that taxonomy is supplied).
    pub fn validate(&self, taxonomies: &[&SensitiveTaxonomy]) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::Profile {
            id: self.id.clone(),
            reason,
        };
        if self.name.is_none() && self.email_domain.is_none() {
            return Err(bad("needs a name or an email domain".into()));
        }
        for (kind, label) in &self.gold_labels {
            if let Some(tax) = taxonomies.iter().find(|t| t.kind() == *kind) {
                if tax.index_of(label).is_none() {
                    return Err(bad(format!("label `{label}` is not a {kind} category")));
                }
            }
        }
        Ok(())
    }
}

/// An ordered top-K list attributed to a user, round and backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingList {
    pub user_id: String,
    pub items: Vec<Item>,
    pub k: usize,
    pub round: u32,
    pub backend_id: String,
}

impl RankingList {
    pub fn new(
        user_id: impl Into<String>,
        items: Vec<Item>,
        k: usize,
        round: u32,
        backend_id: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let user_id = user_id.into();
        if k == 0 || items.len() != k {
            return Err(CorpusError::ListLength {
                user_id,
                len: items.len(),
                k,
            });
        }
        Ok(Self {
            user_id,
            items,
            k,
            round,
            backend_id: backend_id.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub label: String,
    pub keywords: Vec<String>,
}

impl Topic {
    /// Topic sentence: the keywords joined by spaces.
    pub fn sentence(&self) -> String {
        self.keywords.join(" ")
    }
}

/// The N topic sentences used as a proxy for the list distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSet {
    pub domain: Domain,
    pub topics: Vec<Topic>,
}

impl TopicSet {
    pub fn new(domain: Domain, topics: Vec<Topic>) -> Result<Self, CorpusError> {
        if topics.len() < 2 {
            return Err(CorpusError::Topics(format!(
                "need at least 2 topics, got {}",
                topics.len()
            )));
        }
        for t in &topics {
            if t.label.trim().is_empty() || t.sentence().trim().is_empty() {
                return Err(CorpusError::Topics(format!("empty topic `{}`", t.label)));
            }
        }
        Ok(Self { domain, topics })
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(|t| t.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.topics
            .iter()
            .position(|t| t.label.eq_ignore_ascii_case(label.trim()))
    }

    pub fn sentences(&self) -> Vec<String> {
        self.topics.iter().map(Topic::sentence).collect()
    }
}

#[derive(Deserialize)]
struct TopicFixture {
    version: u32,
    domain: Domain,
    topics: Vec<Topic>,
}

const NEWS_TOPICS: &str = include_str!("../data/topics-news-v1.json");
const JOB_TOPICS: &str = include_str!("../data/topics-job-v1.json");

/// Versioned topic keyword fixtures (six topics per domain, ten keywords each).
pub fn builtin_topics(domain: Domain) -> TopicSet {
    let raw = match domain {
        Domain::News => NEWS_TOPICS,
        Domain::Job => JOB_TOPICS,
    };
    parse_topic_fixture(raw).expect("bundled topic fixture is valid")
}

/// Parse a `topics-<domain>-v1.json` document.
pub fn parse_topic_fixture(raw: &str) -> Result<TopicSet, CorpusError> {
    let fixture: TopicFixture = serde_json::from_str(raw)?;
    if fixture.version != 1 {
        return Err(CorpusError::Topics(format!(
            "unsupported fixture version {}",
            fixture.version
        )));
    }
    TopicSet::new(fixture.domain, fixture.topics)
}

/// A record dropped during loading, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

/// Which non-sensitive attribute a corpus carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierKind {
    Name,
    EmailDomain,
}

impl CarrierKind {
    fn header(self) -> &'static str {
        match self {
            Self::Name => "name",
            Self::EmailDomain => "email_domain",
        }
    }
}

/// A loaded name (or email-domain) corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NameCorpus {
    pub taxonomy: SensitiveTaxonomy,
    pub carrier: CarrierKind,
    pub profiles: Vec<UserProfile>,
    pub rejected: Vec<RejectedRecord>,
}

impl NameCorpus {
    /// Accepted records per category, in taxonomy order.
    pub fn group_counts(&self) -> Vec<(String, usize)> {
        let kind = self.taxonomy.kind();
        self.taxonomy
            .categories()
            .iter()
            .map(|c| {
                let n = self
                    .profiles
                    .iter()
                    .filter(|p| p.label(kind) == Some(c.as_str()))
                    .count();
                (c.clone(), n)
            })
            .collect()
    }

    /// Carrier values (names or domains) of one group, in corpus order.
    pub fn pool(&self, category: &str) -> Vec<&str> {
        let kind = self.taxonomy.kind();
        self.profiles
            .iter()
            .filter(|p| p.label(kind) == Some(category))
            .filter_map(|p| match self.carrier {
                CarrierKind::Name => p.name.as_deref(),
                CarrierKind::EmailDomain => p.email_domain.as_deref(),
            })
            .collect()
    }

    /// Write the corpus back out in the CSV format it was read from.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        let to_err = |source| CorpusError::Csv {
            path: "<writer>".into(),
            source,
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.carrier.header(), "category"])
            .map_err(to_err)?;
        let kind = self.taxonomy.kind();
        for p in &self.profiles {
            let carrier = match self.carrier {
                CarrierKind::Name => p.name.as_deref(),
                CarrierKind::EmailDomain => p.email_domain.as_deref(),
            }
            .unwrap_or_default();
            w.write_record([carrier, p.label(kind).unwrap_or_default()])
                .map_err(to_err)?;
        }
        w.flush().map_err(|source| CorpusError::Io {
            path: "<writer>".into(),
            source,
        })
    }
}

/// Load a labeled `name,category` (or `email_domain,category`) CSV.
///
/// Records with an unknown category or an empty carrier are rejected with
/// their line number; an input with no accepted records is an error.
pub fn load_name_corpus(
    path: &Path,
    taxonomy: &SensitiveTaxonomy,
) -> Result<NameCorpus, CorpusError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    read_name_corpus(file, &display, taxonomy)
}

const NAMES_GENDER: &str = include_str!("../data/names-gender.csv");
const NAMES_RACE: &str = include_str!("../data/names-race.csv");
const NAMES_CONTINENT: &str = include_str!("../data/names-continent.csv");
const EMAILS_CONTINENT: &str = include_str!("../data/emails-continent.csv");

/// Small bundled demonstration corpus for a taxonomy.
pub fn builtin_name_corpus(kind: TaxonomyKind) -> NameCorpus {
    let raw = match kind {
        TaxonomyKind::Gender => NAMES_GENDER,
        TaxonomyKind::Race => NAMES_RACE,
        TaxonomyKind::Continent => NAMES_CONTINENT,
    };
    read_name_corpus(
        raw.as_bytes(),
        "<builtin>",
        &SensitiveTaxonomy::standard(kind),
    )
    .expect("bundled name corpus is valid")
}

/// Bundled email-domain corpus labeled by continent.
pub fn builtin_email_corpus() -> NameCorpus {
    read_name_corpus(
        EMAILS_CONTINENT.as_bytes(),
        "<builtin>",
        &SensitiveTaxonomy::standard(TaxonomyKind::Continent),
    )
    .expect("bundled email corpus is valid")
}

pub fn read_name_corpus<R: std::io::Read>(
    input: R,
    source_name: &str,
    taxonomy: &SensitiveTaxonomy,
) -> Result<NameCorpus, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: source_name.to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let header_names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let carrier = match header_names
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["name", "category"] => CarrierKind::Name,
        ["email_domain", "category"] => CarrierKind::EmailDomain,
        [] | [""] => {
            return Err(CorpusError::NoRecords {
                path: source_name.to_string(),
            })
        }
        _ => {
            return Err(CorpusError::BadHeader {
                path: source_name.to_string(),
                found: header_names.join(","),
            })
        }
    };

    let kind = taxonomy.kind();
    let mut profiles = Vec::new();
    let mut rejected = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // header is line 1
        let line = idx + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRecord {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let (value, category) = match (record.get(0), record.get(1)) {
            (Some(v), Some(c)) if record.len() == 2 => (v, c),
            _ => {
                rejected.push(RejectedRecord {
                    line,
                    reason: format!("expected 2 fields, got {}", record.len()),
                });
                continue;
            }
        };
        if value.is_empty() {
            rejected.push(RejectedRecord {
                line,
                reason: format!("empty {}", carrier.header()),
            });
            continue;
        }
        let Some(cat_idx) = taxonomy.index_of(category) else {
            rejected.push(RejectedRecord {
                line,
                reason: format!("unknown {kind} category `{category}`"),
            });
            continue;
        };
        let id = format!("{}-{:05}", kind, profiles.len() + 1);
        let profile = match carrier {
            CarrierKind::Name => UserProfile::with_name(id, value),
            CarrierKind::EmailDomain => UserProfile::with_email_domain(id, value),
        }
        .labeled(kind, taxonomy.category(cat_idx));
        profiles.push(profile);
    }
    for r in &rejected {
        log::warn!("{source_name}:{}: rejected: {}", r.line, r.reason);
    }
    if profiles.is_empty() {
        return Err(CorpusError::NoRecords {
            path: source_name.to_string(),
        });
    }
    Ok(NameCorpus {
        taxonomy: taxonomy.clone(),
        carrier,
        profiles,
        rejected,
    })
}

/// One impression from an interaction log.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    /// The user; `history` holds at most [`HISTORY_LEN`] items, most recent last.
    pub user: UserProfile,
    pub candidates: Vec<Item>,
    /// 1-based position of the clicked candidate.
    pub clicked_index: usize,
}

impl InteractionRecord {
    pub fn clicked(&self) -> &Item {
        &self.candidates[self.clicked_index - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Serialize, Deserialize)]
struct WireItem {
    title: String,
    #[serde(default)]
    category: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireClick {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
struct WireUser {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    email_domain: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    gold_labels: BTreeMap<TaxonomyKind, String>,
}

#[derive(Serialize, Deserialize)]
struct WireImpression {
    user: WireUser,
    #[serde(default)]
    history: Vec<WireItem>,
    candidates: Vec<WireItem>,
    #[serde(default)]
    clicked: Option<WireClick>,
}

/// Load a JSON-lines interaction log.
///
/// Impressions with more than [`IMPRESSION_SIZE`] candidates are downsampled
/// to the clicked item plus four seeded-random others (original order kept);
/// histories keep the [`HISTORY_LEN`] most recent items. Rows with fewer
/// than two candidates, no click, several clicks or malformed JSON are
/// rejected with their line number.
pub fn load_interaction_log(
    path: &Path,
    domain: Domain,
    seed: u64,
) -> Result<InteractionLog, CorpusError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    read_interaction_log(BufReader::new(file), &display, domain, seed)
}

pub fn read_interaction_log<R: BufRead>(
    input: R,
    source_name: &str,
    domain: Domain,
    seed: u64,
) -> Result<InteractionLog, CorpusError> {
    let mut log = InteractionLog::default();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: source_name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_impression(&line, domain, seed, line_no) {
            Ok(rec) => log.records.push(rec),
            Err(reason) => {
                log::warn!("{source_name}:{line_no}: rejected: {reason}");
                log.rejected.push(RejectedRecord {
                    line: line_no,
                    reason,
                });
            }
        }
    }
    if log.records.is_empty() && log.rejected.is_empty() {
        return Err(CorpusError::NoRecords {
            path: source_name.to_string(),
        });
    }
    Ok(log)
}

fn parse_impression(
    line: &str,
    domain: Domain,
    seed: u64,
    line_no: usize,
) -> Result<InteractionRecord, String> {
    let wire: WireImpression = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let to_item = |w: WireItem| {
        Item::new(w.title, w.category, domain).map_err(|_| "empty item title".to_string())
    };
    let candidates: Vec<Item> = wire
        .candidates
        .into_iter()
        .map(to_item)
        .collect::<Result<_, _>>()?;
    if candidates.len() < 2 {
        return Err(format!(
            "need at least 2 candidates, got {}",
            candidates.len()
        ));
    }
    let clicked = match wire.clicked {
        Some(WireClick::One(i)) => i,
        Some(WireClick::Many(v)) if v.len() == 1 => v[0],
        Some(WireClick::Many(v)) if v.len() > 1 => {
            return Err(format!("{} clicks, expected exactly one", v.len()))
        }
        _ => return Err("no click, expected exactly one".into()),
    };
    if clicked == 0 || clicked > candidates.len() {
        return Err(format!(
            "clicked index {clicked} outside 1..={}",
            candidates.len()
        ));
    }
    let mut history: Vec<Item> = wire
        .history
        .into_iter()
        .map(to_item)
        .collect::<Result<_, _>>()?;
    if history.len() > HISTORY_LEN {
        history.drain(..history.len() - HISTORY_LEN);
    }

    let (candidates, clicked_index) = downsample(candidates, clicked, seed, &wire.user.id, line_no);
    let user = UserProfile {
        id: wire.user.id,
        name: wire.user.name,
        email_domain: wire.user.email_domain,
        gold_labels: wire.user.gold_labels,
        history,
    };
    user.validate(&[]).map_err(|e| e.to_string())?;
    Ok(InteractionRecord {
        user,
        candidates,
        clicked_index,
    })
}

/// Keep the clicked candidate and `IMPRESSION_SIZE - 1` seeded-random others.
fn downsample(
    candidates: Vec<Item>,
    clicked: usize,
    seed: u64,
    user_id: &str,
    line_no: usize,
) -> (Vec<Item>, usize) {
    if candidates.len() <= IMPRESSION_SIZE {
        return (candidates, clicked);
    }
    let others: Vec<usize> = (0..candidates.len())
        .filter(|&i| i != clicked - 1)
        .collect();
    let mut rng = SeedStream::new(seed)
        .with_str("impression")
        .with_str(user_id)
        .with_u64(line_no as u64)
        .rng();
    let mut keep: Vec<usize> = sample(&mut rng, others.len(), IMPRESSION_SIZE - 1)
        .into_iter()
        .map(|j| others[j])
        .collect();
    keep.push(clicked - 1);
    keep.sort_unstable();
    let new_clicked = keep.iter().position(|&i| i == clicked - 1).unwrap() + 1;
    let mut slots: Vec<Option<Item>> = candidates.into_iter().map(Some).collect();
    let kept = keep.iter().map(|&i| slots[i].take().unwrap()).collect();
    (kept, new_clicked)
}

/// Serialize records in the JSON-lines format [`load_interaction_log`] reads.
pub fn write_interaction_log<W: Write>(
    records: &[InteractionRecord],
    mut out: W,
) -> Result<(), CorpusError> {
    let wire_item = |i: &Item| WireItem {
        title: i.title.clone(),
        category: i.category.clone(),
    };
    for r in records {
        let wire = WireImpression {
            user: WireUser {
                id: r.user.id.clone(),
                name: r.user.name.clone(),
                email_domain: r.user.email_domain.clone(),
                gold_labels: r.user.gold_labels.clone(),
            },
            history: r.user.history.iter().map(wire_item).collect(),
            candidates: r.candidates.iter().map(wire_item).collect(),
            clicked: Some(WireClick::One(r.clicked_index)),
        };
        serde_json::to_writer(&mut out, &wire)?;
        out.write_all(b"\n").map_err(|source| CorpusError::Io {
            path: "<writer>".into(),
            source,
        })?;
    }
    Ok(())
}
