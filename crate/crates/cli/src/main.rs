//! `fairprobe`: audit recommenders for consumer-side fairness.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use fairprobe::backends::SyntheticMode;
use fairprobe::corpus::{Domain, TaxonomyKind};
use fairprobe::probe::ProbeMode;

use config::{BackendKind, Carrier, ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "fairprobe",
    version,
    about = "Fairness audits for LLM-based recommenders"
)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Topic-distribution audit across groups, optionally with probe recall.
    Audit(RunArgs),
    /// Counterfactual re-ranking under swapped carriers (U-NDCG / U-MRR).
    Counterfactual(RunArgs),
    /// Multi-round feedback-loop simulation.
    Simulate(RunArgs),
    /// Train or evaluate attribute probes.
    Probe {
        #[command(subcommand)]
        command: ProbeCommand,
    },
    /// Print the tables of a written report.
    Report {
        /// Output directory (or report.json) of an earlier run.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fresh,
    Reinforcing,
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// news, job or movie.
    #[arg(long)]
    domain: Option<Domain>,
    /// gender, age, race, continent or occupation.
    #[arg(long)]
    taxonomy: Option<TaxonomyKind>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Bias strength of the synthetic backend, in [0, 1].
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Chat-completions URL for the llm backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Name corpus CSV (name,category).
    #[arg(long)]
    names: Option<PathBuf>,
    #[arg(long, value_enum)]
    carrier: Option<Carrier>,
    /// Interaction log (JSONL).
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Topic fixture JSON.
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    users_per_group: Option<usize>,
    /// List length (audit, simulate) or a single cutoff (counterfactual).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repeats: Option<u32>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Point probe used to name inferred groups in counterfactual worlds.
    #[arg(long)]
    probe_model: Option<PathBuf>,
    /// Skip probe training in `audit`.
    #[arg(long)]
    no_probe: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Which {
    Audit,
    Counterfactual,
    Simulate,
}

impl RunArgs {
    fn resolve(&self, which: Which) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.domain {
            cfg.domain = v;
        }
        if let Some(v) = self.taxonomy {
            cfg.taxonomy = v;
        }
        if let Some(v) = self.backend {
            cfg.backend.kind = v;
        }
        if let Some(v) = self.beta {
            cfg.backend.beta = v;
        }
        if let Some(v) = self.mode {
            cfg.backend.mode = match v {
                ModeArg::Fresh => SyntheticMode::Fresh,
                ModeArg::Reinforcing => SyntheticMode::Reinforcing,
            };
        }
        if let Some(v) = &self.endpoint {
            cfg.backend.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.names {
            cfg.corpus.names = Some(v.clone());
        }
        if let Some(v) = self.carrier {
            cfg.corpus.carrier = v;
        }
        if let Some(v) = &self.interactions {
            cfg.corpus.interactions = Some(v.clone());
        }
        if let Some(v) = &self.topics {
            cfg.corpus.topics = Some(v.clone());
        }
        if let Some(v) = &self.output {
            cfg.output_dir = Some(v.clone());
        }
        if let Some(v) = &self.cache_dir {
            cfg.cache_dir = Some(v.clone());
        }
        if let Some(v) = self.concurrency {
            cfg.concurrency = v;
        }
        if let Some(v) = &self.probe_model {
            cfg.counterfactual.probe_model = Some(v.clone());
        }
        if self.no_probe {
            cfg.audit.probe = false;
        }
        match which {
            Which::Audit => {
                if let Some(v) = self.users_per_group {
                    cfg.audit.users_per_group = Some(v);
                }
                if let Some(v) = self.k {
                    cfg.audit.k = Some(v);
                }
                if let Some(v) = self.repeats {
                    cfg.audit.repeats = v;
                }
            }
            Which::Counterfactual => {
                if let Some(v) = self.users_per_group {
                    cfg.counterfactual.users_per_group = v;
                }
                if let Some(v) = self.k {
                    cfg.counterfactual.ks = vec![v];
                }
                if let Some(v) = self.repeats {
                    cfg.counterfactual.repeats = v;
                }
            }
            Which::Simulate => {
                if let Some(v) = self.users_per_group {
                    cfg.simulate.users_per_group = v;
                }
                if let Some(v) = self.k {
                    cfg.simulate.k = v;
                }
                if let Some(v) = self.rounds {
                    cfg.simulate.rounds = v;
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Write a linearly separable synthetic dataset.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "race")]
        taxonomy: TaxonomyKind,
        #[arg(long, default_value = "point")]
        mode: ProbeMode,
        #[arg(long, default_value_t = 250)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train on the 80% split of a dataset and save the model.
    Train {
        /// Dataset JSON, or rankings.jsonl from an audit run.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        taxonomy: Option<TaxonomyKind>,
        #[arg(long)]
        mode: Option<ProbeMode>,
    },
    /// Held-out accuracy of a saved model.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<TaxonomyKind>,
        #[arg(long)]
        mode: Option<ProbeMode>,
        /// Also write report.json and probe.csv here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn probe_config(
    config: Option<&std::path::Path>,
    seed: Option<u64>,
    taxonomy: Option<TaxonomyKind>,
    mode: Option<ProbeMode>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = taxonomy {
        cfg.taxonomy = v;
    }
    if let Some(v) = mode {
        cfg.probe.mode = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Audit(a) => commands::cmd_audit(a.resolve(Which::Audit)?),
        Command::Counterfactual(a) => {
            commands::cmd_counterfactual(a.resolve(Which::Counterfactual)?)
        }
        Command::Simulate(a) => commands::cmd_simulate(a.resolve(Which::Simulate)?),
        Command::Report { dir } => commands::cmd_report(&dir),
        Command::Probe { command } => match command {
            ProbeCommand::Fixture {
                out,
                taxonomy,
                mode,
                per_class,
                dim,
                seed,
            } => commands::cmd_probe_fixture(&commands::FixtureArgs {
                out,
                taxonomy,
                mode,
                per_class,
                dim,
                seed,
            }),
            ProbeCommand::Train {
                data,
                model,
                config,
                seed,
                taxonomy,
                mode,
            } => {
                let cfg = probe_config(config.as_deref(), seed, taxonomy, mode)?;
                commands::cmd_probe_train(&cfg, &data, &model)
            }
            ProbeCommand::Eval {
                data,
                model,
                config,
                taxonomy,
                mode,
                output,
            } => {
                let cfg = probe_config(config.as_deref(), None, taxonomy, mode)?;
                commands::cmd_probe_eval(&cfg, &data, &model, output.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
