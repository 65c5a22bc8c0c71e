//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p fairprobe-cli --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use fairprobe::audit::{
    run_counterfactual_eval, run_topic_audit, sample_users, synthetic_interaction_log, AuditPlan,
    CarrierPools, CounterfactualPlan,
};
use fairprobe::backends::{
    parse_ranking, BackendError, BiasSpec, ListRequest, LlmSettings, ParseError, RankRequest,
    Recommender, SyntheticBackend, SyntheticMode, TemplateSet,
};
use fairprobe::corpus::{
    builtin_email_corpus, builtin_name_corpus, builtin_topics, Domain, Item, NameCorpus,
    RankingList, SensitiveTaxonomy, TaxonomyKind, Topic, TopicSet,
};
use fairprobe::embed::{EmbedError, Embedder, EmbeddingVector, HashedEmbedder, DEFAULT_HASHED_DIM};
use fairprobe::metrics::{
    gini, mrr_at_k, ndcg_at_k, shannon, topic_distribution, u_metric, Rank, RankOutcome,
    RankingMetric,
};
use fairprobe::probe::{
    probe_accuracy, separable_fixture, train_probe, Mlp, ProbeHyper, ProbeMode,
};
use fairprobe::seeding::SeedStream;
use fairprobe::simulate::{run_simulation, spearman, SimulationConfig};

use common::{chat_response, MockServer};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < budget, || {
        format!("took {took:.1?}, budget {budget:?}")
    })?;
    Ok(took)
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-15
}

fn embedder() -> HashedEmbedder {
    HashedEmbedder::new(DEFAULT_HASHED_DIM, true).unwrap()
}

// ---------------------------------------------------------------- oracles

fn gini_oracle(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut total = 0.0;
    let mut diff = 0.0;
    for a in x {
        total += a;
        for b in x {
            diff += (a - b).abs();
        }
    }
    diff / (2.0 * n * total)
}

fn shannon_oracle(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h / (p.len() as f64).ln()
}

/// DCG over the cutoff with one relevant item; the ideal DCG is 1.
fn ndcg_oracle(ranked: &[u32], clicked: u32, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (i, id) in ranked.iter().enumerate().take(k) {
        if *id == clicked {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    dcg
}

fn mrr_oracle(ranked: &[u32], clicked: u32, k: usize) -> f64 {
    for (i, id) in ranked.iter().enumerate().take(k) {
        if *id == clicked {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn u_metric_oracle(groups: &BTreeMap<usize, Vec<f64>>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for values in groups.values() {
        for v in values {
            sum += v;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let mut dev = 0.0;
    for values in groups.values() {
        for v in values {
            dev += (v - mean).abs();
        }
    }
    dev / n as f64
}

/// Random vectors looked up by text, so the topic-distribution oracle does
/// not share an encoder with the code under test.
struct TableEmbedder {
    dim: usize,
    seed: u64,
}

impl Embedder for TableEmbedder {
    fn id(&self) -> &str {
        "table"
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut rng = SeedStream::new(self.seed).with_str(text).rng();
        Ok(EmbeddingVector {
            values: (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            embedder_id: "table".into(),
        })
    }
}

fn topic_oracle(topics: &TopicSet, lists: &[RankingList], e: &TableEmbedder) -> Vec<f64> {
    let mut z = vec![0.0; topics.len()];
    let mut n_items = 0;
    for list in lists {
        for item in &list.items {
            n_items += 1;
            let iv = e.embed(&item.title).unwrap().values;
            for (j, t) in topics.topics.iter().enumerate() {
                let tv = e.embed(&t.sentence()).unwrap().values;
                let mut d = 0.0;
                for c in 0..e.dim {
                    d += tv[c] * iv[c];
                }
                z[j] += d;
            }
        }
    }
    let mut max = f64::NEG_INFINITY;
    for v in &mut z {
        *v /= n_items as f64;
        max = max.max(*v);
    }
    let mut total = 0.0;
    let mut p = Vec::new();
    for v in &z {
        let e = (v - max).exp();
        total += e;
        p.push(e);
    }
    p.iter().map(|v| v / total).collect()
}

// ---------------------------------------------------------------- criteria

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = SeedStream::new(2024).with_str("oracles").rng();
    const N: usize = 1000;
    for case in 0..N {
        let n = rng.random_range(1..=30);
        let mut x: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..10.0)
                }
            })
            .collect();
        if x.iter().sum::<f64>() == 0.0 {
            x[0] = 1.0;
        }
        let (got, want) = (gini(&x).map_err(|e| e.to_string())?, gini_oracle(&x));
        ensure(rel_close(got, want), || {
            format!("gini case {case}: {got} vs {want}")
        })?;
    }
    for case in 0..N {
        let n = rng.random_range(2..=30);
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let total: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if raw.iter().all(|v| *v == 0.0) {
            p[0] = 1.0;
        }
        let (got, want) = (shannon(&p).map_err(|e| e.to_string())?, shannon_oracle(&p));
        ensure(rel_close(got, want), || {
            format!("shannon case {case}: {got} vs {want}")
        })?;
    }
    for case in 0..N {
        let m = rng.random_range(1..=20u32);
        let mut ranked: Vec<u32> = (0..m).collect();
        for i in (1..ranked.len()).rev() {
            ranked.swap(i, rng.random_range(0..=i));
        }
        // sometimes the clicked item is absent
        let clicked = rng.random_range(0..m + 2);
        let k = rng.random_range(1..=25);
        let rank = ranked
            .iter()
            .position(|id| *id == clicked)
            .map_or(Rank::Miss, |p| Rank::At(p + 1));
        let o = RankOutcome {
            user: "u".into(),
            group: "g".into(),
            rank,
            k,
        };
        let (got, want) = (ndcg_at_k(&o), ndcg_oracle(&ranked, clicked, k));
        ensure(rel_close(got, want), || {
            format!("ndcg case {case}: {got} vs {want}")
        })?;
        let (got, want) = (mrr_at_k(&o), mrr_oracle(&ranked, clicked, k));
        ensure(rel_close(got, want), || {
            format!("mrr case {case}: {got} vs {want}")
        })?;
    }
    for case in 0..N {
        let n_groups = rng.random_range(1..=5);
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut flat = Vec::new();
        for _ in 0..rng.random_range(1..=40) {
            let g = rng.random_range(0..n_groups);
            let v = rng.random_range(0.0..1.0);
            groups.entry(g).or_default().push(v);
            flat.push((g, v));
        }
        let (got, want) = (
            u_metric(&flat).map_err(|e| e.to_string())?,
            u_metric_oracle(&groups),
        );
        ensure(rel_close(got, want), || {
            format!("u_metric case {case}: {got} vs {want}")
        })?;
    }
    for case in 0..N {
        let e = TableEmbedder {
            dim: rng.random_range(4..=16),
            seed: case as u64,
        };
        let n_topics = rng.random_range(2..=8);
        let topics = TopicSet::new(
            Domain::News,
            (0..n_topics)
                .map(|t| Topic {
                    label: format!("topic{t}"),
                    keywords: (0..3).map(|w| format!("kw{t}x{w}")).collect(),
                })
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let lists: Vec<RankingList> = (0..rng.random_range(1..=5))
            .map(|l| {
                let k = rng.random_range(1..=10);
                let items = (0..k)
                    .map(|i| {
                        Item::new(
                            format!("title {} {l} {i}", rng.random_range(0..50)),
                            "c",
                            Domain::News,
                        )
                        .unwrap()
                    })
                    .collect();
                RankingList::new(format!("user{l}"), items, k, 0, "oracle").unwrap()
            })
            .collect();
        let refs: Vec<&RankingList> = lists.iter().collect();
        let got = topic_distribution("g", &refs, &topics, &e)
            .map_err(|e| e.to_string())?
            .probs;
        let want = topic_oracle(&topics, &lists, &e);
        for (a, b) in got.iter().zip(&want) {
            ensure(rel_close(*a, *b), || {
                format!("topic_distribution case {case}: {got:?} vs {want:?}")
            })?;
        }
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("6 x {N} instances within 1e-9, {took:.1?}"))
}

fn spot_values() -> Outcome {
    let exact = |name: &str, got: f64, want: f64| {
        ensure((got - want).abs() < 1e-12, || {
            format!("{name}: {got} vs {want}")
        })
    };
    let mut one_hot = vec![0.0; 6];
    one_hot[2] = 1.0;
    exact("gini(one-hot, 6)", gini(&one_hot).unwrap(), 5.0 / 6.0)?;
    let u = u_metric(&[("a", 1.0), ("a", 0.5), ("b", 0.0), ("b", 0.5)]).unwrap();
    exact("u_metric", u, 0.25)?;
    let o = RankOutcome {
        user: "u".into(),
        group: "g".into(),
        rank: Rank::At(3),
        k: 5,
    };
    exact("ndcg(rank 3)", ndcg_at_k(&o), 0.5)?;
    exact("shannon(uniform)", shannon(&[0.125; 8]).unwrap(), 1.0)?;
    Ok("gini 5/6, u_metric 0.25, ndcg 0.5, shannon 1.0".into())
}

fn probe_reliability() -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for kind in [
        TaxonomyKind::Race,
        TaxonomyKind::Gender,
        TaxonomyKind::Continent,
    ] {
        let tax = SensitiveTaxonomy::standard(kind);
        for mode in [ProbeMode::Point, ProbeMode::Pair] {
            let data = separable_fixture(mode, &tax, 250, 32, 7);
            let (train, test) = data.standard_split();
            if kind == TaxonomyKind::Race {
                ensure((train.len(), test.len()) == (600, 150), || {
                    format!("race split {} / {}", train.len(), test.len())
                })?;
            }
            let model = train_probe(&train, &ProbeHyper::default())
                .map_err(|e| e.to_string())?
                .model;
            let acc = probe_accuracy(&model, &test, None).map_err(|e| e.to_string())?;
            let baseline = tax.random_baseline();
            ensure(acc >= 0.95 && acc > baseline, || {
                format!("{kind} {mode}: accuracy {acc:.3}")
            })?;
            summary.push(format!("{kind}/{mode} {acc:.3}>{baseline:.3}"));
        }
    }
    // analytic gradient against central differences, every parameter
    let mut worst: f64 = 0.0;
    for mode in [ProbeMode::Point, ProbeMode::Pair] {
        let data = separable_fixture(
            mode,
            &SensitiveTaxonomy::standard(TaxonomyKind::Race),
            4,
            5,
            3,
        );
        let dim = data.input_dim().unwrap();
        let net = Mlp::init(dim, 4, 3, &mut SeedStream::new(9).rng());
        let (_, g) = net.gradient(&data.samples);
        let h = 1e-5;
        for i in 0..net.n_params() {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            plus.set_param(i, net.param(i) + h);
            minus.set_param(i, net.param(i) - h);
            let numeric = (plus.loss(&data.samples) - minus.loss(&data.samples)) / (2.0 * h);
            let analytic = g.param(i);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, || {
        format!("gradient check rel. err {worst:e}")
    })?;
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "{}; gradient rel. err {worst:.1e}; {took:.1?}",
        summary.join(", ")
    ))
}

fn synthetic(
    tax: &SensitiveTaxonomy,
    topics: &TopicSet,
    beta: f64,
    seed: u64,
    mode: SyntheticMode,
) -> SyntheticBackend {
    SyntheticBackend::new(
        BiasSpec::disjoint(tax, topics, beta, seed),
        topics.clone(),
        mode,
    )
    .unwrap()
}

fn bias_monotonicity() -> Outcome {
    let tax = SensitiveTaxonomy::standard(TaxonomyKind::Gender);
    let topics = builtin_topics(Domain::News);
    let corpus = builtin_name_corpus(TaxonomyKind::Gender);
    let users = sample_users(&corpus, 200, 11).map_err(|e| e.to_string())?;
    let log = synthetic_interaction_log(&users, &topics, 11);
    let pools = CarrierPools::from_corpus(&corpus).map_err(|e| e.to_string())?;
    let e = embedder();
    let mut rows = Vec::new();
    for beta in [0.0, 0.25, 0.5, 1.0] {
        let backend = synthetic(&tax, &topics, beta, 3, SyntheticMode::Fresh);
        let mut plan = AuditPlan::new(tax.clone(), Domain::News);
        plan.seed = 3;
        let audit =
            run_topic_audit(&plan, &users, &backend, &topics, &e).map_err(|e| e.to_string())?;
        let mut cf_plan = CounterfactualPlan::new(Domain::News);
        cf_plan.ks = vec![5];
        cf_plan.seed = 3;
        let cf = run_counterfactual_eval(&log, &pools, &backend, &cf_plan, None)
            .map_err(|e| e.to_string())?;
        let u = cf.cell(RankingMetric::Ndcg, 5).ok_or("missing U-NDCG@5")?;
        rows.push((beta, audit.max_total_variation, u));
    }
    for w in rows.windows(2) {
        ensure(w[1].1 > w[0].1 && w[1].2 > w[0].2, || {
            format!("not increasing: {rows:?}")
        })?;
    }
    ensure(rows[0].1 <= 0.02 && rows[0].2 <= 0.02, || {
        format!("beta=0 not neutral: {rows:?}")
    })?;
    Ok(rows
        .iter()
        .map(|(b, tv, u)| format!("b={b}: TV {tv:.4}, U-NDCG@5 {u:.4}"))
        .collect::<Vec<_>>()
        .join("; "))
}

/// Orders candidates by a hash of the title, ignoring the user entirely.
struct GroupBlind;

impl Recommender for GroupBlind {
    fn id(&self) -> &str {
        "group-blind"
    }

    fn recommend(&self, _: &ListRequest<'_>) -> Result<RankingList, BackendError> {
        unreachable!("only ranking is exercised")
    }

    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError> {
        let mut ranked = req.candidates.to_vec();
        ranked.sort_by_key(|i| fairprobe::seeding::sha256_hex(i.title.as_bytes()));
        Ok(ranked)
    }
}

fn counterfactual_exactness() -> Outcome {
    let topics = builtin_topics(Domain::News);
    let mut corpora: Vec<(String, NameCorpus)> = TaxonomyKind::ALL
        .iter()
        .map(|k| (format!("{k}/names"), builtin_name_corpus(*k)))
        .collect();
    corpora.push(("continent/email".into(), builtin_email_corpus()));
    let mut checked = 0;
    for (label, corpus) in &corpora {
        let tax = corpus.taxonomy.clone();
        let users = sample_users(corpus, 20, 5).map_err(|e| e.to_string())?;
        let log = synthetic_interaction_log(&users, &topics, 5);
        let pools = CarrierPools::from_corpus(corpus).map_err(|e| e.to_string())?;
        let beta0 = synthetic(&tax, &topics, 0.0, 5, SyntheticMode::Fresh);
        for backend in [&beta0 as &dyn Recommender, &GroupBlind] {
            let mut plan = CounterfactualPlan::new(Domain::News);
            plan.ks = vec![1, 3, 5];
            plan.repeats = 2;
            let cf = run_counterfactual_eval(&log, &pools, backend, &plan, None)
                .map_err(|e| e.to_string())?;
            ensure(cf.users_evaluated == users.len(), || {
                format!("{label}: {} evaluated", cf.users_evaluated)
            })?;
            for metric in RankingMetric::ALL {
                for k in [1, 3, 5] {
                    let v = cf
                        .cell(metric, k)
                        .ok_or_else(|| format!("{label}: missing {metric}@{k}"))?;
                    ensure(v == 0.0, || {
                        format!("{label} {}: {metric}@{k} = {v:e}", backend.id())
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "{checked} cells exactly 0 (gender, race, continent; names and email)"
    ))
}

fn long_term_trend() -> Outcome {
    let start = Instant::now();
    let tax = SensitiveTaxonomy::standard(TaxonomyKind::Gender);
    let topics = builtin_topics(Domain::News);
    let users = sample_users(&builtin_name_corpus(TaxonomyKind::Gender), 50, 0)
        .map_err(|e| e.to_string())?;
    let e = embedder();
    let cfg = SimulationConfig::new(Domain::News);
    let rounds: Vec<f64> = (1..=cfg.rounds).map(f64::from).collect();

    let reinforcing = synthetic(&tax, &topics, 0.3, 0, SyntheticMode::Reinforcing);
    let sim =
        run_simulation(&users, &tax, &reinforcing, &topics, &e, &cfg).map_err(|e| e.to_string())?;
    let mut rhos = Vec::new();
    for g in &sim.groups {
        ensure(g.rounds() == cfg.rounds as usize, || {
            format!("{}: {} rounds", g.group, g.rounds())
        })?;
        let rho = spearman(&rounds, &g.gini_series).ok_or("undefined rho")?;
        ensure(rho >= 0.9, || format!("{}: rho {rho:.3}", g.group))?;
        rhos.push(format!("{} rho {rho:.3}", g.group));
    }

    let neutral = synthetic(&tax, &topics, 0.0, 0, SyntheticMode::Fresh);
    let sim =
        run_simulation(&users, &tax, &neutral, &topics, &e, &cfg).map_err(|e| e.to_string())?;
    let mut drift: f64 = 0.0;
    for g in &sim.groups {
        drift = drift.max((g.gini_series[g.rounds() - 1] - g.gini_series[0]).abs());
    }
    ensure(drift < 0.05, || format!("neutral drift {drift:.4}"))?;
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{}; neutral |dGini| {drift:.4}; {took:.1?}",
        rhos.join(", ")
    ))
}

fn run_cli(args: &[&str], cwd: &Path, key: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairprobe"));
    cmd.args(args)
        .current_dir(cwd)
        .env("FAIRPROBE_CACHE_DIR", cwd.join("cache"));
    match key {
        Some(k) => cmd.env("FAIRPROBE_API_KEY", k),
        None => cmd.env_remove("FAIRPROBE_API_KEY"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        files.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&p).map_err(|e| e.to_string())?,
        ));
    }
    files.sort();
    Ok(files)
}

fn same_outputs(cwd: &Path, a: &str, b: &str) -> Result<usize, String> {
    let (x, y) = (dir_bytes(&cwd.join(a))?, dir_bytes(&cwd.join(b))?);
    ensure(!x.is_empty() && x == y, || format!("{a} and {b} differ"))?;
    Ok(x.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cwd = tmp.path();
    for out in ["audit-1", "audit-2"] {
        run_cli(
            &["audit", "--beta", "0.5", "--seed", "13", "-o", out],
            cwd,
            None,
        )?;
    }
    for out in ["sim-1", "sim-2"] {
        run_cli(
            &[
                "simulate",
                "--mode",
                "reinforcing",
                "--beta",
                "0.3",
                "--rounds",
                "10",
                "-o",
                out,
            ],
            cwd,
            None,
        )?;
    }
    let a = same_outputs(cwd, "audit-1", "audit-2")?;
    let s = same_outputs(cwd, "sim-1", "sim-2")?;

    // llm backend: a cold run fills the cache, the warm rerun makes no requests
    let list: String = (1..=20)
        .map(|i| {
            format!(
                "{i}. Story {i} - {}\n",
                ["politics", "sports", "health"][i % 3]
            )
        })
        .collect();
    let server = MockServer::start(Duration::ZERO, move |_, _| (200, chat_response(&list)));
    std::fs::write(
        cwd.join("names.csv"),
        "name,category\nAnna,Female\nMaria,Female\nJohn,Male\nPeter,Male\n",
    )
    .map_err(|e| e.to_string())?;
    let args = |out: &'static str| {
        vec![
            "audit",
            "--backend",
            "llm",
            "--endpoint",
            server.url.as_str(),
            "--names",
            "names.csv",
            "-o",
            out,
        ]
    };
    run_cli(&args("llm-cold"), cwd, Some("test-key"))?;
    let hits = server.hits();
    run_cli(&args("llm-warm"), cwd, None)?;
    ensure(server.hits() == hits, || {
        format!("warm run made {} requests", server.hits() - hits)
    })?;
    let l = same_outputs(cwd, "llm-cold", "llm-warm")?;
    Ok(format!(
        "audit {a} files, simulate {s} files, llm audit {l} files byte-identical"
    ))
}

fn transcript_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/transcripts")
}

fn check_transcript(name: &str) -> Result<(), String> {
    let dir = transcript_dir();
    let text =
        std::fs::read_to_string(dir.join(format!("{name}.txt"))).map_err(|e| e.to_string())?;
    let label: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join(format!("{name}.expected.json")))
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let k = label["k"].as_u64().ok_or("k")? as usize;
    let domain: Domain = label["domain"]
        .as_str()
        .ok_or("domain")?
        .parse()
        .map_err(|_| "domain")?;
    let expect = &label["expect"];
    match (
        expect.get("items"),
        expect["error"].as_str(),
        parse_ranking(&text, k, domain),
    ) {
        (Some(items), _, Ok(parsed)) => {
            let want: Vec<(&str, &str)> = items
                .as_array()
                .ok_or("items")?
                .iter()
                .map(|p| {
                    (
                        p[0].as_str().unwrap_or_default(),
                        p[1].as_str().unwrap_or_default(),
                    )
                })
                .collect();
            let have: Vec<(&str, &str)> = parsed
                .iter()
                .map(|i| (i.title.as_str(), i.category.as_str()))
                .collect();
            ensure(want == have, || format!("{name}: {have:?}"))
        }
        (_, Some("unparseable"), Err(ParseError::Unparseable)) => Ok(()),
        (_, Some("short_list"), Err(ParseError::ShortList { found, .. }))
            if Some(found as u64) == expect["found"].as_u64() =>
        {
            Ok(())
        }
        (_, _, got) => Err(format!("{name}: got {got:?}")),
    }
}

fn parser_robustness() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(transcript_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "txt").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    ensure(names.len() == 20, || format!("{} fixtures", names.len()))?;
    let failures: Vec<String> = names
        .iter()
        .filter_map(|n| check_transcript(n).err())
        .collect();
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok("20/20 transcripts agree".into())
}

/// The live run needs credentials; this checks what it depends on offline.
fn live_runbook() -> Outcome {
    let s = LlmSettings::chatgpt();
    ensure(s.temperature == 0.2 && s.max_tokens == 2048, || {
        format!("{s:?}")
    })?;
    let t = TemplateSet::standard();
    ensure(
        t.by_name
            .body
            .contains("Please recommend 20 {{domain}} titles"),
        || "name template".into(),
    )?;
    ensure(
        t.by_email
            .body
            .contains("anonymous@{{email domain address}}"),
        || "email template".into(),
    )?;
    let readme =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md"))
            .map_err(|e| format!("README.md: {e}"))?;
    ensure(
        readme.contains("## Live runbook") && readme.contains("--repeats 3"),
        || "README has no live runbook".into(),
    )?;
    Ok("settings, templates and README runbook present (live run is manual)".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", metric_oracles),
        ("analytic spot values", spot_values),
        ("probe reliability", probe_reliability),
        ("bias detection monotonicity", bias_monotonicity),
        ("counterfactual exactness", counterfactual_exactness),
        ("long-term trend", long_term_trend),
        ("determinism", determinism),
        ("parser robustness", parser_robustness),
        ("live runbook prerequisites", live_runbook),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
