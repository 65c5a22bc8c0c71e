use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};

use fairprobe::audit::{
    attach_probe_analysis, run_counterfactual_eval, run_topic_audit, sample_users,
    synthetic_interaction_log, AuditPlan, AuditReport, CarrierPools, CounterfactualPlan,
    ProbeAccuracy, ProbeContext, ReportMetadata, TopicAudit,
};
use fairprobe::backends::{
    Audience, BiasSpec, ListRequest, LlmBackend, Recommender, ResponseCache, SyntheticBackend,
    API_KEY_VAR,
};
use fairprobe::corpus::{
    builtin_email_corpus, builtin_name_corpus, builtin_topics, load_interaction_log,
    load_name_corpus, parse_topic_fixture, NameCorpus, RankingList, SensitiveTaxonomy,
    TaxonomyKind, TopicSet, UserProfile,
};
use fairprobe::embed::Embedder;
use fairprobe::metrics::RankingMetric;
use fairprobe::probe::{
    build_pair_dataset, build_point_dataset, estimate_base_rates, probe_accuracy,
    probe_recall_counts, separable_fixture, train_probe, BaseRates, ProbeDataset, ProbeHyper,
    ProbeMode, ProbeModel, BASE_RATE_FLOOR,
};
use fairprobe::report::{probe_csv, read_report, write_report, write_simulation};
use fairprobe::simulate::{run_simulation, spearman, SimulationConfig};
use fairprobe::TOOL_VERSION;

use crate::config::{config_err, BackendKind, Carrier, RunConfig};

/// Inputs shared by the run subcommands.
struct Run {
    cfg: RunConfig,
    taxonomy: SensitiveTaxonomy,
    topics: TopicSet,
    embedder: Box<dyn Embedder>,
    backend: Box<dyn Recommender>,
}

impl Run {
    fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let topics = load_topics(&cfg)?;
        let embedder = cfg
            .embedder
            .build()
            .map_err(|e| config_err(format!("embedder: {e}")))?;
        let backend = build_backend(&cfg, &topics)?;
        Ok(Self {
            taxonomy: SensitiveTaxonomy::standard(cfg.taxonomy),
            cfg,
            topics,
            embedder,
            backend,
        })
    }

    fn metadata(&self, command: &str) -> ReportMetadata {
        ReportMetadata {
            tool_version: TOOL_VERSION.to_string(),
            config_digest: self.cfg.digest(),
            backend_id: self.backend.id().to_string(),
            embedder_id: self.embedder.id().to_string(),
            seed: self.cfg.seed,
            warnings: 0,
            notes: BTreeMap::from([("command".to_string(), command.to_string())]),
        }
    }

    fn corpus(&self) -> Result<NameCorpus> {
        let corpus = match &self.cfg.corpus.names {
            Some(path) => load_name_corpus(path, &self.taxonomy)
                .with_context(|| format!("loading {}", path.display()))?,
            None => match self.cfg.corpus.carrier {
                Carrier::Name => builtin_name_corpus(self.cfg.taxonomy),
                Carrier::Email => builtin_email_corpus(),
            },
        };
        Ok(corpus)
    }

    /// Attribute-free lists for base-rate estimation.
    fn neutral_lists(&self, n: usize, k: usize) -> Result<Vec<RankingList>> {
        (0..n)
            .map(|repeat| {
                self.backend
                    .recommend(&ListRequest {
                        audience: Audience::Neutral,
                        subject_id: "neutral",
                        domain: self.cfg.domain,
                        k,
                        round: 0,
                        repeat: repeat as u32,
                        history: &[],
                    })
                    .context("generating neutral lists")
            })
            .collect()
    }
}

fn load_topics(cfg: &RunConfig) -> Result<TopicSet> {
    let topics = match &cfg.corpus.topics {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("corpus.topics: {}: {e}", path.display())))?;
            parse_topic_fixture(&raw).map_err(|e| config_err(format!("corpus.topics: {e}")))?
        }
        None => builtin_topics(cfg.domain),
    };
    if topics.domain != cfg.domain {
        return Err(config_err(format!(
            "topic fixture is for {} but the run is for {}",
            topics.domain, cfg.domain
        )));
    }
    Ok(topics)
}

fn build_backend(cfg: &RunConfig, topics: &TopicSet) -> Result<Box<dyn Recommender>> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Synthetic => {
            let tax = SensitiveTaxonomy::standard(cfg.taxonomy);
            let spec = match &b.weights {
                Some(w) => BiasSpec {
                    strength: b.beta,
                    taxonomy: cfg.taxonomy,
                    group_topic_weights: w.clone(),
                    seed: cfg.seed,
                },
                None => BiasSpec::disjoint(&tax, topics, b.beta, cfg.seed),
            };
            let backend = SyntheticBackend::new(spec, topics.clone(), b.mode)
                .map_err(|e| config_err(format!("backend: {e}")))?;
            Ok(Box::new(backend))
        }
        BackendKind::Llm => {
            let settings = b.llm_settings();
            let id =
                b.id.clone()
                    .unwrap_or_else(|| format!("llm-{}", settings.model_name));
            let cache_dir = cfg.cache_dir();
            let cache = ResponseCache::open(&cache_dir, &id)
                .with_context(|| format!("opening cache in {}", cache_dir.display()))?;
            let endpoint = b.endpoint.clone().expect("validated");
            let mut backend = LlmBackend::new(id, endpoint, settings, cache)
                .map_err(|e| config_err(format!("backend: {e}")))?
                .with_concurrency(cfg.concurrency);
            if let Some(system) = &b.system_message {
                backend = backend.with_system_message(system.clone());
            }
            if std::env::var(API_KEY_VAR).map_or(true, |k| k.is_empty()) {
                log::warn!("{API_KEY_VAR} is not set; only cached responses are available");
            }
            Ok(Box::new(backend))
        }
    }
}

fn build_dataset(
    mode: ProbeMode,
    lists: &BTreeMap<String, Vec<RankingList>>,
    tax: &SensitiveTaxonomy,
    embedder: &dyn Embedder,
) -> Result<ProbeDataset> {
    Ok(match mode {
        ProbeMode::Point => build_point_dataset(lists, tax, embedder)?,
        ProbeMode::Pair => build_pair_dataset(lists, tax, embedder)?,
    })
}

/// Lists generated with the attribute stated explicitly, `n` per category.
fn biased_lists(run: &Run, n: usize, k: usize) -> Result<BTreeMap<String, Vec<RankingList>>> {
    let mut out = BTreeMap::new();
    for category in run.taxonomy.categories() {
        let subject = format!("explicit-{category}");
        let lists = (0..n)
            .map(|repeat| {
                run.backend
                    .recommend(&ListRequest {
                        audience: Audience::Explicit(category),
                        subject_id: &subject,
                        domain: run.cfg.domain,
                        k,
                        round: 0,
                        repeat: repeat as u32,
                        history: &[],
                    })
                    .with_context(|| format!("generating biased lists for {category}"))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(category.clone(), lists);
    }
    Ok(out)
}

/// Train a probe on explicit-attribute lists, then count how often it
/// recovers each user's group from their name-based list.
fn probe_audit(
    run: &Run,
    audit: &TopicAudit,
    users: &[UserProfile],
    report: &mut AuditReport,
    dir: &Path,
) -> Result<()> {
    let cfg = &run.cfg;
    let tax = &run.taxonomy;
    let biased = biased_lists(run, cfg.probe.biased_lists, audit.k)?;
    let data = build_dataset(cfg.probe.mode, &biased, tax, run.embedder.as_ref())?;
    let (train, test) = data.standard_split();
    let mut model = train_probe(&train, &cfg.probe.hyper(cfg.seed))?.model;
    model.embedder_id = Some(run.embedder.id().to_string());

    let neutral = run.neutral_lists(cfg.audit.neutral_lists, audit.k)?;
    let base = if neutral.is_empty() {
        BaseRates::uniform(tax.len())
    } else {
        estimate_base_rates(&neutral, &model, run.embedder.as_ref(), BASE_RATE_FLOOR)?
    };
    let corrected = cfg.probe.base_rate_correction;
    report.probe_accuracy.push(ProbeAccuracy {
        mode: model.mode,
        taxonomy: tax.kind(),
        accuracy: probe_accuracy(&model, &test, corrected.then_some(&base))?,
        random_baseline: tax.random_baseline(),
        base_rate_corrected: corrected,
    });

    // one list per user (the first repeat)
    let mut first: BTreeMap<String, RankingList> = BTreeMap::new();
    for (_, list) in &audit.lists {
        first
            .entry(list.user_id.clone())
            .or_insert_with(|| list.clone());
    }
    let listed: Vec<UserProfile> = users
        .iter()
        .filter(|u| first.contains_key(&u.id))
        .cloned()
        .collect();
    let counts = probe_recall_counts(&listed, &first, &model, &base, run.embedder.as_ref())?;
    attach_probe_analysis(report, &model, &counts)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    model.save(&dir.join("probe-model.json"))?;
    Ok(())
}

fn audit_users(run: &Run) -> Result<Vec<UserProfile>> {
    let corpus = run.corpus()?;
    Ok(match run.cfg.audit.users_per_group {
        Some(n) => sample_users(&corpus, n, run.cfg.seed)?,
        None => corpus.profiles,
    })
}

pub fn cmd_audit(cfg: RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let cfg = &run.cfg;
    let dir = cfg.output_dir();
    let corpus = run.corpus()?;
    let users = audit_users(&run)?;
    let mut plan = AuditPlan::new(run.taxonomy.clone(), cfg.domain);
    plan.k = cfg.audit_k();
    plan.repeats = cfg.audit.repeats;
    plan.seed = cfg.seed;
    plan.aggregation = cfg.audit.aggregation;
    let audit = run_topic_audit(
        &plan,
        &users,
        run.backend.as_ref(),
        &run.topics,
        run.embedder.as_ref(),
    )?;

    let mut report = AuditReport {
        metadata: run.metadata("audit"),
        ..AuditReport::default()
    };
    report.metadata.warnings = corpus.rejected.len() + audit.flagged.len();
    report.topic_audits.push(audit.clone());
    if cfg.audit.probe {
        probe_audit(&run, &audit, &users, &mut report, &dir)?;
    }
    write_report(&dir, &report)?;
    print_topic_audit(&audit);
    print_probe(&report);
    println!("report written to {}", dir.display());
    Ok(())
}

pub fn cmd_counterfactual(cfg: RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let cfg = &run.cfg;
    let corpus = run.corpus()?;
    let pools = CarrierPools::from_corpus(&corpus)?;
    let log = match &cfg.corpus.interactions {
        Some(path) => load_interaction_log(path, cfg.domain, cfg.seed)
            .with_context(|| format!("loading {}", path.display()))?,
        None => {
            let users = sample_users(&corpus, cfg.counterfactual.users_per_group, cfg.seed)?;
            synthetic_interaction_log(&users, &run.topics, cfg.seed)
        }
    };

    let probe = match &cfg.counterfactual.probe_model {
        Some(path) => {
            let model = ProbeModel::load(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            if model.mode != ProbeMode::Point {
                return Err(config_err(
                    "counterfactual.probe_model must be a point probe",
                ));
            }
            if let Some(id) = &model.embedder_id {
                if id != run.embedder.id() {
                    return Err(config_err(format!(
                        "probe was trained with embedder `{id}` but the run uses `{}`",
                        run.embedder.id()
                    )));
                }
            }
            let neutral = run.neutral_lists(cfg.audit.neutral_lists, cfg.audit_k())?;
            let base =
                estimate_base_rates(&neutral, &model, run.embedder.as_ref(), BASE_RATE_FLOOR)?;
            Some((model, base))
        }
        None => None,
    };
    let ctx = probe.as_ref().map(|(model, base)| ProbeContext {
        model,
        base,
        embedder: run.embedder.as_ref(),
        window: cfg.counterfactual.history_window,
    });
    let plan = CounterfactualPlan {
        domain: cfg.domain,
        ks: cfg.counterfactual.ks.clone(),
        repeats: cfg.counterfactual.repeats,
        seed: cfg.seed,
    };
    let cf = run_counterfactual_eval(&log, &pools, run.backend.as_ref(), &plan, ctx.as_ref())?;
    if cf.users_evaluated == 0 {
        anyhow::bail!("no user could be evaluated ({} flagged)", cf.flagged.len());
    }

    let mut report = AuditReport {
        metadata: run.metadata("counterfactual"),
        ..AuditReport::default()
    };
    report.metadata.warnings = corpus.rejected.len() + log.rejected.len() + cf.flagged.len();
    report.counterfactual.push(cf);
    let dir = cfg.output_dir();
    write_report(&dir, &report)?;
    print_u_metrics(&report);
    if report.metadata.warnings > 0 {
        println!(
            "{} records skipped (see report.json)",
            report.metadata.warnings
        );
    }
    println!("report written to {}", dir.display());
    Ok(())
}

pub fn cmd_simulate(cfg: RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let cfg = &run.cfg;
    let corpus = run.corpus()?;
    let users = sample_users(&corpus, cfg.simulate.users_per_group, cfg.seed)?;
    let sim = SimulationConfig {
        domain: cfg.domain,
        rounds: cfg.simulate.rounds,
        k: cfg.simulate.k,
        window: cfg.simulate.window,
        aggregation: cfg.audit.aggregation,
    };
    let result = run_simulation(
        &users,
        &run.taxonomy,
        run.backend.as_ref(),
        &run.topics,
        run.embedder.as_ref(),
        &sim,
    )?;
    let mut meta = run.metadata("simulate");
    meta.warnings =
        corpus.rejected.len() + result.users.iter().filter(|u| u.error.is_some()).count();
    let dir = cfg.output_dir();
    write_simulation(&dir, &meta, &result)?;

    println!(
        "{:<12} {:>6} {:>10} {:>10} {:>8}",
        "group", "rounds", "gini(1)", "gini(R)", "rho"
    );
    for g in &result.groups {
        let n = g.rounds();
        if n == 0 {
            println!("{:<12} no completed rounds", g.group);
            continue;
        }
        let rounds: Vec<f64> = (1..=n).map(|r| r as f64).collect();
        let rho = spearman(&rounds, &g.gini_series).map_or("-".to_string(), |r| format!("{r:.3}"));
        println!(
            "{:<12} {:>6} {:>10.4} {:>10.4} {:>8}",
            g.group,
            n,
            g.gini_series[0],
            g.gini_series[n - 1],
            rho
        );
    }
    println!("traces written to {}", dir.display());
    Ok(())
}

pub fn cmd_report(dir: &Path) -> Result<()> {
    let path = if dir.is_dir() {
        dir.join("report.json")
    } else {
        dir.to_path_buf()
    };
    if !path.exists() {
        return Err(config_err(format!("{} does not exist", path.display())));
    }
    let report = read_report(&path)?;
    let m = &report.metadata;
    println!(
        "{} | config {} | backend {} | seed {}",
        m.tool_version,
        &m.config_digest[..m.config_digest.len().min(12)],
        m.backend_id,
        m.seed
    );
    for audit in &report.topic_audits {
        print_topic_audit(audit);
    }
    print_u_metrics(&report);
    print_probe(&report);
    if m.warnings > 0 {
        println!("warnings: {}", m.warnings);
    }
    Ok(())
}

fn print_topic_audit(audit: &TopicAudit) {
    println!(
        "topic distributions ({}, {}, k={}):",
        audit.taxonomy, audit.domain, audit.k
    );
    print!("{:<12}", "group");
    for label in &audit.topic_labels {
        print!(" {label:>10}");
    }
    println!();
    for d in &audit.distributions {
        print!("{:<12}", d.group);
        for p in &d.probs {
            print!(" {p:>10.4}");
        }
        println!();
    }
    println!(
        "max pairwise total variation: {:.4}",
        audit.max_total_variation
    );
    if !audit.flagged.is_empty() {
        println!("{} users skipped", audit.flagged.len());
    }
}

/// Rows `U-NDCG@k` / `U-MRR@k`, one column per taxonomy.
fn print_u_metrics(report: &AuditReport) {
    if report.counterfactual.is_empty() {
        return;
    }
    print!("{:<10}", "metric");
    for cf in &report.counterfactual {
        print!(" {:>10}", cf.taxonomy.as_str());
    }
    println!();
    let ks: Vec<usize> = report.counterfactual[0]
        .cells
        .iter()
        .map(|c| c.k)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for metric in RankingMetric::ALL {
        for &k in &ks {
            print!("{:<10}", format!("{metric}@{k}"));
            for cf in &report.counterfactual {
                match cf.cell(metric, k) {
                    Some(v) => print!(" {v:>10.3}"),
                    None => print!(" {:>10}", "-"),
                }
            }
            println!();
        }
    }
}

fn print_probe(report: &AuditReport) {
    for a in &report.probe_accuracy {
        println!(
            "{} probe ({}): test accuracy {:.3}, random baseline {:.3}",
            a.mode, a.taxonomy, a.accuracy, a.random_baseline
        );
    }
    for p in &report.probe {
        println!(
            "  {:<10} recall {:.3} vs {:.3}: {}",
            p.group,
            p.recall,
            p.baseline,
            p.flag.as_str()
        );
    }
}

fn random_baselines_line() -> String {
    let parts: Vec<String> = TaxonomyKind::ALL
        .iter()
        .map(|k| {
            format!(
                "{} {:.3}",
                k,
                SensitiveTaxonomy::standard(*k).random_baseline()
            )
        })
        .collect();
    format!("random baselines: {}", parts.join(", "))
}

pub struct FixtureArgs {
    pub out: PathBuf,
    pub taxonomy: TaxonomyKind,
    pub mode: ProbeMode,
    pub per_class: usize,
    pub dim: usize,
    pub seed: u64,
}

pub fn cmd_probe_fixture(a: &FixtureArgs) -> Result<()> {
    if a.per_class == 0 || a.dim == 0 {
        return Err(config_err("--per-class and --dim must be >= 1"));
    }
    let data = separable_fixture(
        a.mode,
        &SensitiveTaxonomy::standard(a.taxonomy),
        a.per_class,
        a.dim,
        a.seed,
    );
    write_json(&a.out, &data)?;
    println!(
        "wrote {} {} samples to {}",
        data.len(),
        data.mode,
        a.out.display()
    );
    Ok(())
}

/// A dataset JSON file, or `rankings.jsonl` from an audit run (embedded
/// with the configured embedder).
fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<(ProbeDataset, Option<String>)> {
    if !path.exists() {
        return Err(config_err(format!("{} does not exist", path.display())));
    }
    let raw =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut lists: BTreeMap<String, Vec<RankingList>> = BTreeMap::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)?;
            if v["kind"] != "topic" {
                continue;
            }
            let group = v["group"].as_str().unwrap_or_default().to_string();
            lists
                .entry(group)
                .or_default()
                .push(serde_json::from_value(v["list"].clone())?);
        }
        let embedder = cfg
            .embedder
            .build()
            .map_err(|e| config_err(format!("embedder: {e}")))?;
        let tax = SensitiveTaxonomy::standard(cfg.taxonomy);
        let data = build_dataset(cfg.probe.mode, &lists, &tax, embedder.as_ref())?;
        Ok((data, Some(embedder.id().to_string())))
    } else {
        let data: ProbeDataset = serde_json::from_str(&raw)
            .map_err(|e| config_err(format!("{}: not a probe dataset: {e}", path.display())))?;
        Ok((data, None))
    }
}

pub fn cmd_probe_train(cfg: &RunConfig, data_path: &Path, model_path: &Path) -> Result<()> {
    let (data, embedder_id) = load_dataset(data_path, cfg)?;
    let (train, test) = data.standard_split();
    let hyper: ProbeHyper = cfg.probe.hyper(cfg.seed);
    let trained = train_probe(&train, &hyper)?;
    let mut model = trained.model;
    model.embedder_id = embedder_id;
    model.save(model_path)?;
    let acc = probe_accuracy(&model, &test, None)?;
    println!(
        "{} probe on {} ({} train / {} test): final train loss {:.4}, test accuracy {:.3}",
        model.mode,
        model.taxonomy.kind(),
        train.len(),
        test.len(),
        model.final_train_loss,
        acc
    );
    println!("{}", random_baselines_line());
    println!("model written to {}", model_path.display());
    Ok(())
}

pub fn cmd_probe_eval(
    cfg: &RunConfig,
    data_path: &Path,
    model_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    if !model_path.exists() {
        return Err(config_err(format!(
            "no trained model at {} (run `fairprobe probe train` first)",
            model_path.display()
        )));
    }
    let model = ProbeModel::load(model_path)
        .map_err(|e| config_err(format!("{}: {e}", model_path.display())))?;
    let (data, _) = load_dataset(data_path, cfg)?;
    if data.mode != model.mode || data.taxonomy != model.taxonomy {
        return Err(config_err(format!(
            "dataset is {} / {} but the model is {} / {}",
            data.mode,
            data.taxonomy.kind(),
            model.mode,
            model.taxonomy.kind()
        )));
    }
    let (_, test) = data.standard_split();
    let acc = probe_accuracy(&model, &test, None)?;
    println!(
        "{} probe on {}: test accuracy {:.3} ({} samples)",
        model.mode,
        model.taxonomy.kind(),
        acc,
        test.len()
    );
    println!("{}", random_baselines_line());
    if let Some(dir) = out {
        let report = AuditReport {
            metadata: ReportMetadata {
                tool_version: TOOL_VERSION.to_string(),
                config_digest: cfg.digest(),
                embedder_id: model.embedder_id.clone().unwrap_or_default(),
                seed: model.seed,
                notes: BTreeMap::from([("command".to_string(), "probe eval".to_string())]),
                ..ReportMetadata::default()
            },
            probe_accuracy: vec![ProbeAccuracy {
                mode: model.mode,
                taxonomy: model.taxonomy.kind(),
                accuracy: acc,
                random_baseline: model.taxonomy.random_baseline(),
                base_rate_corrected: false,
            }],
            ..AuditReport::default()
        };
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report)?;
        std::fs::write(dir.join("probe.csv"), probe_csv(&report))?;
        println!("probe report written to {}", dir.display());
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
