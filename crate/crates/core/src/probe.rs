//! Probes that try to recover a user's sensitive attribute from the items
//! recommended to them.
//!
//! A probe is a one-hidden-layer MLP (tanh, softmax head) trained with plain
//! mini-batch gradient descent on cross-entropy. Point probes classify single
//! item embeddings; pair probes classify ordered pairs `(i_j, i_m)`, `j < m`,
//! with the embeddings concatenated higher-ranked first. At inference the
//! softmax output `ẑ` is divided by base rates `z̃`, the class distribution
//! the probe assigns to attribute-free lists.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RankingList, SensitiveTaxonomy, TaxonomyKind, UserProfile};
use crate::embed::{EmbedError, Embedder};
use crate::par;
use crate::seeding::SeedStream;

/// Seed of the 8:2 split used for reported runs.
pub const SPLIT_SEED: u64 = 42;
pub const TRAIN_FRACTION: f64 = 0.8;
/// Floor applied to base rates before dividing by them.
pub const BASE_RATE_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("category `{0}` has no samples")]
    MissingCategory(String),
    #[error("category `{0}` is not in the taxonomy")]
    UnknownCategory(String),
    #[error("pair probing needs lists of length >= 2, got {0}")]
    TooShort(usize),
    #[error("dimension mismatch: model expects {expected}, input has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite loss {loss} after epoch {epoch} ({detail})")]
    NonFinite {
        epoch: usize,
        loss: f64,
        detail: String,
    },
    #[error("bad probe setting: {0}")]
    Config(String),
    #[error("group `{0}` has no users")]
    EmptyGroup(String),
    #[error("user {0} has no recommendation list")]
    MissingList(String),
    #[error("user {0} has no gold label")]
    MissingLabel(String),
    #[error("list for user {user} has length {len}, expected {k}")]
    RaggedLists { user: String, len: usize, k: usize },
    #[error("taxonomy mismatch: probe is for {probe}, data is for {data}")]
    TaxonomyMismatch {
        probe: TaxonomyKind,
        data: TaxonomyKind,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("probe model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Point,
    Pair,
}

impl ProbeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Point => "point",
            Self::Pair => "pair",
        }
    }

    /// Inference units a list of length `k` yields.
    pub fn units_per_list(self, k: usize) -> usize {
        match self {
            Self::Point => k,
            Self::Pair => k * k.saturating_sub(1) / 2,
        }
    }
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeMode {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "point" => Ok(Self::Point),
            "pair" => Ok(Self::Pair),
            _ => Err(ProbeError::Config(format!("unknown probe mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub input: Vec<f64>,
    /// Index into the taxonomy's categories.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub mode: ProbeMode,
    pub taxonomy: SensitiveTaxonomy,
    pub split: Split,
    pub samples: Vec<ProbeSample>,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.input.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.taxonomy.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Seeded random split; the first `round(train_fraction · n)` shuffled
    /// samples form the train part.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (ProbeDataset, ProbeDataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut SeedStream::new(seed).with_str("probe-split").rng());
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        let part = |ids: &[usize], split| ProbeDataset {
            mode: self.mode,
            taxonomy: self.taxonomy.clone(),
            split,
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        (
            part(&idx[..n_train], Split::Train),
            part(&idx[n_train..], Split::Test),
        )
    }

    /// The standard 8:2 split.
    pub fn standard_split(&self) -> (ProbeDataset, ProbeDataset) {
        self.split(TRAIN_FRACTION, SPLIT_SEED)
    }
}

/// Embeddings of every title in a list, in rank order.
fn embed_list(list: &RankingList, embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>, ProbeError> {
    let titles: Vec<String> = list.items.iter().map(|i| i.title.clone()).collect();
    Ok(embedder
        .embed_batch(&titles)?
        .into_iter()
        .map(|v| v.values)
        .collect())
}

/// Probe inputs for one list: one per item, or one per ordered pair.
pub fn list_inputs(
    list: &RankingList,
    mode: ProbeMode,
    embedder: &dyn Embedder,
) -> Result<Vec<Vec<f64>>, ProbeError> {
    let vecs = embed_list(list, embedder)?;
    Ok(match mode {
        ProbeMode::Point => vecs,
        ProbeMode::Pair => {
            let mut out = Vec::with_capacity(mode.units_per_list(vecs.len()));
            for j in 0..vecs.len() {
                for m in j + 1..vecs.len() {
                    out.push([vecs[j].as_slice(), vecs[m].as_slice()].concat());
                }
            }
            out
        }
    })
}

fn build_dataset(
    mode: ProbeMode,
    lists: &BTreeMap<String, Vec<RankingList>>,
    taxonomy: &SensitiveTaxonomy,
    embedder: &dyn Embedder,
) -> Result<ProbeDataset, ProbeError> {
    let mut labeled: Vec<(usize, &RankingList)> = Vec::new();
    for (category, group_lists) in lists {
        let label = taxonomy
            .index_of(category)
            .ok_or_else(|| ProbeError::UnknownCategory(category.clone()))?;
        for list in group_lists {
            if mode == ProbeMode::Pair && list.items.len() < 2 {
                return Err(ProbeError::TooShort(list.items.len()));
            }
            labeled.push((label, list));
        }
    }
    labeled.sort_by_key(|(label, _)| *label);
    let per_list = par::map(&labeled, |(label, list)| {
        list_inputs(list, mode, embedder).map(|inputs| (*label, inputs))
    });
    let mut samples = Vec::new();
    for r in per_list {
        let (label, inputs) = r?;
        samples.extend(inputs.into_iter().map(|input| ProbeSample { input, label }));
    }
    let data = ProbeDataset {
        mode,
        taxonomy: taxonomy.clone(),
        split: Split::Full,
        samples,
    };
    if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(ProbeError::MissingCategory(
            taxonomy.category(c).to_string(),
        ));
    }
    Ok(data)
}

/// One sample per recommended item, labeled with the category the list was
/// generated for.
pub fn build_point_dataset(
    lists: &BTreeMap<String, Vec<RankingList>>,
    taxonomy: &SensitiveTaxonomy,
    embedder: &dyn Embedder,
) -> Result<ProbeDataset, ProbeError> {
    build_dataset(ProbeMode::Point, lists, taxonomy, embedder)
}

/// One sample per ordered item pair: `K(K−1)/2` per list.
pub fn build_pair_dataset(
    lists: &BTreeMap<String, Vec<RankingList>>,
    taxonomy: &SensitiveTaxonomy,
    embedder: &dyn Embedder,
) -> Result<ProbeDataset, ProbeError> {
    build_dataset(ProbeMode::Pair, lists, taxonomy, embedder)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 0.05,
            epochs: 200,
            batch: 32,
            seed: 0,
        }
    }
}

/// `input → tanh(hidden) → softmax(output)`, weights row-major
/// (`w1` is `hidden × input`, `w2` is `output × hidden`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        m
    }

    fn check(&self) -> Result<(), ProbeError> {
        let ok = self.input > 0
            && self.hidden > 0
            && self.output > 0
            && self.w1.len() == self.hidden * self.input
            && self.b1.len() == self.hidden
            && self.w2.len() == self.output * self.hidden
            && self.b2.len() == self.output;
        if ok {
            Ok(())
        } else {
            Err(ProbeError::Config(
                "weight arrays do not match layer dims".into(),
            ))
        }
    }

    fn hidden_act(&self, x: &[f64], h: &mut [f64]) {
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.input..(j + 1) * self.input];
            let mut s = self.b1[j];
            for (w, xi) in row.iter().zip(x) {
                s += w * xi;
            }
            *hj = s.tanh();
        }
    }

    fn output_probs(&self, h: &[f64], p: &mut [f64]) {
        for (c, pc) in p.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            *pc = self.b2[c] + row.iter().zip(h).map(|(w, hj)| w * hj).sum::<f64>();
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in p.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        p.iter_mut().for_each(|v| *v /= total);
    }

    /// Softmax class probabilities. `x.len()` must equal `self.input`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut p = vec![0.0; self.output];
        self.hidden_act(x, &mut h);
        self.output_probs(&h, &mut p);
        p
    }

    /// Mean cross-entropy over `samples`.
    pub fn loss(&self, samples: &[ProbeSample]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|s| -self.forward(&s.input)[s.label].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / samples.len() as f64
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn gradient(&self, samples: &[ProbeSample]) -> (f64, Mlp) {
        let mut g = Mlp::zeros(self.input, self.hidden, self.output);
        let mut h = vec![0.0; self.hidden];
        let mut p = vec![0.0; self.output];
        let mut dh = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for s in samples {
            self.hidden_act(&s.input, &mut h);
            self.output_probs(&h, &mut p);
            loss -= p[s.label].max(f64::MIN_POSITIVE).ln();
            // d loss / d logits = p − onehot(label)
            p[s.label] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, &dc) in p.iter().enumerate() {
                g.b2[c] += dc;
                let row = c * self.hidden;
                for j in 0..self.hidden {
                    g.w2[row + j] += dc * h[j];
                    dh[j] += dc * self.w2[row + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                g.b1[j] += da;
                let row = &mut g.w1[j * self.input..(j + 1) * self.input];
                for (gw, xi) in row.iter_mut().zip(&s.input) {
                    *gw += da * xi;
                }
            }
        }
        let n = samples.len() as f64;
        g.scale(1.0 / n);
        (loss / n, g)
    }

    fn slices(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn scale(&mut self, a: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= a);
        }
    }

    /// `self += a · other`.
    fn axpy(&mut self, a: f64, other: &Mlp) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
        }
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter by flat index over `w1, b1, w2, b2`.
    pub fn param(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }
}

/// A trained attribute classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub mode: ProbeMode,
    /// `[input, hidden, |S|]`.
    pub layer_dims: Vec<usize>,
    pub network: Mlp,
    pub taxonomy: SensitiveTaxonomy,
    pub seed: u64,
    /// Encoder the inputs were produced with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder_id: Option<String>,
    pub final_train_loss: f64,
}

impl ProbeModel {
    pub fn input_dim(&self) -> usize {
        self.network.input
    }

    /// Softmax output `ẑ` for one input.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if input.len() != self.network.input {
            return Err(ProbeError::Dimension {
                expected: self.network.input,
                got: input.len(),
            });
        }
        Ok(self.network.forward(input))
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        self.network.check()?;
        let n = &self.network;
        if self.layer_dims != [n.input, n.hidden, n.output] || n.output != self.taxonomy.len() {
            return Err(ProbeError::Config(
                "layer_dims disagree with the network or taxonomy".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model: Self = serde_json::from_str(&raw)?;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub model: ProbeModel,
    /// Mean train loss at initialization, then after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Fit a probe by mini-batch gradient descent on mean cross-entropy.
/// Deterministic for a given dataset, hyper-parameters and seed.
pub fn train_probe(data: &ProbeDataset, hyper: &ProbeHyper) -> Result<TrainedProbe, ProbeError> {
    if data.is_empty() {
        return Err(ProbeError::Empty("training set"));
    }
    if hyper.hidden == 0 || hyper.batch == 0 || !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
        return Err(ProbeError::Config(format!(
            "invalid hyper-parameters {hyper:?}"
        )));
    }
    let dim = data.input_dim().unwrap_or(0);
    if let Some(bad) = data.samples.iter().find(|s| s.input.len() != dim) {
        return Err(ProbeError::Dimension {
            expected: dim,
            got: bad.input.len(),
        });
    }
    for (c, &n) in data.class_counts().iter().enumerate() {
        if n == 0 {
            log::warn!(
                "training probe without samples for `{}`",
                data.taxonomy.category(c)
            );
        }
    }

    let seeds = SeedStream::new(hyper.seed).with_str("probe");
    let mut net = Mlp::init(
        dim,
        hyper.hidden,
        data.taxonomy.len(),
        &mut seeds.clone().with_str("init").rng(),
    );
    let mut curve = vec![net.loss(&data.samples)];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(hyper.batch);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut seeds.clone().with_str("epoch").with_u64(epoch as u64).rng());
        for chunk in order.chunks(hyper.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.samples[i].clone()));
            let (_, g) = net.gradient(&batch);
            net.axpy(-hyper.lr, &g);
        }
        let loss = net.loss(&data.samples);
        if !loss.is_finite() {
            let max_w = net
                .slices()
                .iter()
                .flat_map(|s| s.iter())
                .fold(0.0f64, |m, w| m.max(w.abs()));
            return Err(ProbeError::NonFinite {
                epoch,
                loss,
                detail: format!("max |weight| = {max_w:e}, lr = {}", hyper.lr),
            });
        }
        curve.push(loss);
    }
    Ok(TrainedProbe {
        model: ProbeModel {
            mode: data.mode,
            layer_dims: vec![dim, hyper.hidden, data.taxonomy.len()],
            network: net,
            taxonomy: data.taxonomy.clone(),
            seed: hyper.seed,
            embedder_id: None,
            final_train_loss: *curve.last().expect("curve has the initial loss"),
        },
        loss_curve: curve,
    })
}

/// Attribute-free class distribution `z̃`, floored at `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRates {
    pub rates: Vec<f64>,
    pub floor: f64,
}

impl BaseRates {
    pub fn uniform(n: usize) -> Self {
        Self {
            rates: vec![1.0 / n as f64; n],
            floor: 0.0,
        }
    }

    /// Normalize `raw`, then raise every entry below `floor` to `floor` and
    /// rescale the rest so the total stays 1. Rescaling can push further
    /// entries under the floor, so this repeats until none are.
    pub fn floored(raw: &[f64], floor: f64) -> Result<Self, ProbeError> {
        let n = raw.len();
        if n == 0 {
            return Err(ProbeError::Empty("base rates"));
        }
        if floor.is_nan() || floor < 0.0 || floor * n as f64 > 1.0 {
            return Err(ProbeError::Config(format!(
                "floor {floor} infeasible for {n} classes"
            )));
        }
        let total: f64 = raw.iter().sum();
        if total.is_nan() || total <= 0.0 || raw.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(ProbeError::Config(format!("invalid raw rates {raw:?}")));
        }
        let mut rates: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut pinned = vec![false; n];
        loop {
            let free_mass = 1.0 - floor * pinned.iter().filter(|&&p| p).count() as f64;
            let free_sum: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| rates[i]).sum();
            for i in (0..n).filter(|&i| !pinned[i]) {
                rates[i] *= free_mass / free_sum;
            }
            let mut changed = false;
            for i in 0..n {
                if !pinned[i] && rates[i] < floor {
                    pinned[i] = true;
                    rates[i] = floor;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(Self { rates, floor })
    }
}

/// Mean predicted distribution over `inputs`, floored.
pub fn base_rates_from_inputs(
    inputs: &[Vec<f64>],
    model: &ProbeModel,
    floor: f64,
) -> Result<BaseRates, ProbeError> {
    if inputs.is_empty() {
        return Err(ProbeError::Empty("neutral inputs"));
    }
    let preds = par::map(inputs, |x| model.predict(x));
    let mut mean = vec![0.0; model.taxonomy.len()];
    for p in preds {
        for (m, v) in mean.iter_mut().zip(p?) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= inputs.len() as f64);
    BaseRates::floored(&mean, floor)
}

/// Base rates from lists generated without any user attribute.
pub fn estimate_base_rates(
    neutral_lists: &[RankingList],
    model: &ProbeModel,
    embedder: &dyn Embedder,
    floor: f64,
) -> Result<BaseRates, ProbeError> {
    let mut inputs = Vec::new();
    for list in neutral_lists {
        inputs.extend(list_inputs(list, model.mode, embedder)?);
    }
    base_rates_from_inputs(&inputs, model, floor)
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Corrected scores `ẑ_s / z̃_s` and their argmax.
pub fn infer_attribute(
    input: &[f64],
    model: &ProbeModel,
    base: &BaseRates,
) -> Result<(usize, Vec<f64>), ProbeError> {
    if base.rates.len() != model.taxonomy.len() {
        return Err(ProbeError::Dimension {
            expected: model.taxonomy.len(),
            got: base.rates.len(),
        });
    }
    let scores: Vec<f64> = model
        .predict(input)?
        .iter()
        .zip(&base.rates)
        .map(|(z, r)| z / r)
        .collect();
    Ok((argmax(&scores), scores))
}

/// Fraction of samples whose predicted category equals the gold label.
/// With `base` the corrected argmax is used, otherwise the raw one.
pub fn probe_accuracy(
    model: &ProbeModel,
    data: &ProbeDataset,
    base: Option<&BaseRates>,
) -> Result<f64, ProbeError> {
    if data.is_empty() {
        return Err(ProbeError::Empty("test split"));
    }
    let uniform = BaseRates::uniform(model.taxonomy.len());
    let base = base.unwrap_or(&uniform);
    let hits = par::map(&data.samples, |s| {
        infer_attribute(&s.input, model, base).map(|(c, _)| c == s.label)
    });
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Inferred category of every unit (item or pair) of a list.
pub fn infer_list(
    list: &RankingList,
    model: &ProbeModel,
    base: &BaseRates,
    embedder: &dyn Embedder,
) -> Result<Vec<usize>, ProbeError> {
    list_inputs(list, model.mode, embedder)?
        .iter()
        .map(|x| infer_attribute(x, model, base).map(|(c, _)| c))
        .collect()
}

/// Raw counts behind a recall value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallCounts {
    pub group: String,
    pub users: usize,
    pub units_per_user: usize,
    /// Units from this group's users inferred as this group.
    pub inferred_in_group: usize,
    /// Units from all users inferred as this group.
    pub inferred_all_users: usize,
}

impl RecallCounts {
    pub fn denominator(&self) -> usize {
        self.users * self.units_per_user
    }

    /// `inferred_in_group / (units_per_user · users)`; `None` for an empty
    /// group.
    pub fn recall(&self) -> Option<f64> {
        let d = self.denominator();
        (d > 0).then(|| self.inferred_in_group as f64 / d as f64)
    }
}

/// Recall counts for every category of the probe's taxonomy.
pub fn probe_recall_counts(
    users: &[UserProfile],
    lists: &BTreeMap<String, RankingList>,
    model: &ProbeModel,
    base: &BaseRates,
    embedder: &dyn Embedder,
) -> Result<Vec<RecallCounts>, ProbeError> {
    let tax = &model.taxonomy;
    let mut k = None;
    let mut work = Vec::with_capacity(users.len());
    for u in users {
        let label = u
            .label(tax.kind())
            .ok_or_else(|| ProbeError::MissingLabel(u.id.clone()))?;
        let group = tax
            .index_of(label)
            .ok_or_else(|| ProbeError::UnknownCategory(label.to_string()))?;
        let list = lists
            .get(&u.id)
            .ok_or_else(|| ProbeError::MissingList(u.id.clone()))?;
        let expected = *k.get_or_insert(list.items.len());
        if list.items.len() != expected {
            return Err(ProbeError::RaggedLists {
                user: u.id.clone(),
                len: list.items.len(),
                k: expected,
            });
        }
        work.push((group, list));
    }
    let k = k.unwrap_or(0);
    if model.mode == ProbeMode::Pair && k < 2 && !users.is_empty() {
        return Err(ProbeError::TooShort(k));
    }
    let per_user = par::map(&work, |(_, list)| infer_list(list, model, base, embedder));
    let mut counts: Vec<RecallCounts> = tax
        .categories()
        .iter()
        .map(|c| RecallCounts {
            group: c.clone(),
            users: 0,
            units_per_user: model.mode.units_per_list(k),
            inferred_in_group: 0,
            inferred_all_users: 0,
        })
        .collect();
    for ((group, _), inferred) in work.iter().zip(per_user) {
        counts[*group].users += 1;
        for c in inferred? {
            counts[c].inferred_all_users += 1;
            if c == *group {
                counts[c].inferred_in_group += 1;
            }
        }
    }
    Ok(counts)
}

/// Recall of `group`: the share of its users' items (or pairs) that the probe
/// attributes to `group`.
pub fn probe_recall(
    users: &[UserProfile],
    lists: &BTreeMap<String, RankingList>,
    model: &ProbeModel,
    base: &BaseRates,
    embedder: &dyn Embedder,
    group: &str,
) -> Result<f64, ProbeError> {
    let idx = model
        .taxonomy
        .index_of(group)
        .ok_or_else(|| ProbeError::UnknownCategory(group.to_string()))?;
    let counts = probe_recall_counts(users, lists, model, base, embedder)?;
    counts[idx]
        .recall()
        .ok_or_else(|| ProbeError::EmptyGroup(group.to_string()))
}

/// Gaussian clusters around well-separated random centers, one per category,
/// with `per_class` samples each. Pair samples concatenate two points of the
/// same class. Used as a reliability fixture.
pub fn separable_fixture(
    mode: ProbeMode,
    taxonomy: &SensitiveTaxonomy,
    per_class: usize,
    dim: usize,
    seed: u64,
) -> ProbeDataset {
    const SEPARATION: f64 = 4.0;
    let stream = SeedStream::new(seed).with_str("separable-fixture");
    let mut rng = stream.clone().with_str("centers").rng();
    let centers: Vec<Vec<f64>> = (0..taxonomy.len())
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| SEPARATION * x / norm).collect()
        })
        .collect();
    let mut rng = stream.with_str("points").rng();
    let mut point = |c: usize| -> Vec<f64> {
        centers[c]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + 0.5 * z
            })
            .collect()
    };
    let mut samples = Vec::with_capacity(per_class * taxonomy.len());
    for label in 0..taxonomy.len() {
        for _ in 0..per_class {
            let input = match mode {
                ProbeMode::Point => point(label),
                ProbeMode::Pair => [point(label), point(label)].concat(),
            };
            samples.push(ProbeSample { input, label });
        }
    }
    ProbeDataset {
        mode,
        taxonomy: taxonomy.clone(),
        split: Split::Full,
        samples,
    }
}
