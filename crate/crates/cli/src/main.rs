use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use rt3_cli::artifacts::{read_json, Artifacts, Meta};
use rt3_cli::config::{parse_duration_ms, parse_thresholds, RunConfig};
use rt3_cli::pipeline::{self, Selection};
use rt3_core::dataset::Dataset;
use rt3_core::pruning::{Criterion, PruneAxis};
use rt3_core::runtime::{BatteryState, Deployment};
use rt3_core::search::{pareto, EpisodeResult, SearchLog};
use rt3_core::{ErrorKind, PatternSet, ToyModel};

#[derive(Parser)]
#[command(
    name = "rt3",
    version,
    about = "Block and pattern pruning with run-time V/F reconfiguration"
)]
struct Cli {
    /// Run configuration (JSON). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// DVFS table (JSON); overrides the config.
    #[arg(long, global = true)]
    dvfs: Option<PathBuf>,

    /// Deployed level names, slowest first, e.g. `l3,l4,l6`.
    #[arg(long, global = true, value_delimiter = ',')]
    level_names: Option<Vec<String>>,

    /// Timing constraint, e.g. `100ms` or `0.1s`.
    #[arg(long = "T", global = true, value_parser = parse_duration_ms)]
    t_ms: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

/// Alias so clap parses the whole list as one value.
type Thresholds = Vec<rt3_core::runtime::Threshold>;

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Row,
    Col,
    Both,
}

impl From<AxisArg> for PruneAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Row => PruneAxis::Row,
            AxisArg::Col => PruneAxis::Column,
            AxisArg::Both => PruneAxis::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a dense model on the synthetic task.
    Init {
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Block-prune a model and retrain it under the masks.
    Prune {
        /// Input model file.
        #[arg(long)]
        model: PathBuf,
        /// Lines pruned inside each block.
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Row blocks per layer.
        #[arg(long)]
        k: Option<usize>,
        /// Column blocks per layer.
        #[arg(long)]
        k_prime: Option<usize>,
        /// Prune lines whose l2 norm is below this value.
        #[arg(long, conflicts_with = "percentile")]
        threshold: Option<f64>,
        /// Prune this fraction of lowest-norm lines per block.
        #[arg(long)]
        percentile: Option<f64>,
        /// Retraining epochs after pruning.
        #[arg(long)]
        retrain_epochs: Option<usize>,
        /// Output backbone file.
        #[arg(long)]
        out: PathBuf,
        /// Sparsity report CSV; next to `--out` by default.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the sparsity ladder and candidate pattern sets.
    Space {
        /// Backbone file.
        #[arg(long)]
        backbone: PathBuf,
        /// DVFS table; same as the global `--dvfs`.
        #[arg(long)]
        levels: Option<PathBuf>,
        /// Ratios per level.
        #[arg(long)]
        theta: Option<usize>,
        /// Patterns per set.
        #[arg(long)]
        m: Option<usize>,
        /// Pattern side length.
        #[arg(long)]
        p_size: Option<usize>,
        /// Output sets file.
        #[arg(long)]
        out: PathBuf,
        /// Latency/energy CSV; next to `--out` by default.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Policy-gradient search over per-level pattern sets.
    Search {
        /// Backbone file.
        #[arg(long)]
        backbone: PathBuf,
        /// Candidate sets file written by `space`.
        #[arg(long)]
        sets: PathBuf,
        /// Energy budget of one discharge.
        #[arg(long)]
        budget: Option<f64>,
        /// Episodes to run.
        #[arg(long)]
        episodes: Option<usize>,
        /// Patterns kept per chosen set.
        #[arg(long = "K")]
        k: Option<usize>,
        /// Also evaluate the whole space and record its best reward.
        #[arg(long)]
        exhaustive: bool,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Jointly train the backbone under a list of pattern sets.
    Train {
        /// Backbone file.
        #[arg(long)]
        backbone: PathBuf,
        /// Sets file (`space` or `search` output).
        #[arg(long)]
        sets: PathBuf,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Loss weights: `uniform` or a comma list summing to 1.
        #[arg(long, default_value = "uniform")]
        alpha: String,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Drain a battery through a deployment.
    Simulate {
        /// Deployment file written by `train` or `pipeline`.
        #[arg(long)]
        deploy: PathBuf,
        /// Initial charge as a fraction of capacity.
        #[arg(long)]
        battery: Option<f64>,
        /// Battery capacity; the configured budget by default.
        #[arg(long)]
        capacity: Option<f64>,
        /// Governor thresholds, e.g. `0.5:l4,0.2:l3`.
        #[arg(long, value_parser = parse_thresholds)]
        thresholds: Option<Thresholds>,
        /// Simulated transfer rate for set swaps, bytes per ms.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pareto frontier of one or more search logs.
    Pareto {
        /// `search.json` files.
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end.
    Pipeline {
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Sets file: the `sets` array with optional level names.
#[derive(Deserialize)]
struct SetsFile {
    #[serde(default)]
    levels: Option<Vec<String>>,
    sets: Vec<PatternSet>,
}

/// Search log as written by `search` or `pipeline`.
#[derive(Deserialize)]
struct LogFile {
    log: SearchLog,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dvfs) = &cli.dvfs {
        cfg.dvfs = Some(dvfs.clone());
    }
    if let Some(names) = &cli.level_names {
        cfg.levels = names.clone();
    }
    if let Some(t) = cli.t_ms {
        cfg.t_ms = t;
    }

    match cli.command {
        Command::Init { out, epochs } => {
            if let Some(e) = epochs {
                cfg.init.epochs = e;
            }
            let mut art = artifacts(&cfg, Path::new("."));
            let data = Dataset::generate(&cfg.dataset_config())?;
            let (model, report) = pipeline::init_model(&cfg, &data)?;
            art.json(path_str(&out)?, &model)?;
            art.commit()?;
            println!("dense accuracy {:.4}", report.accuracies[0]);
        }
        Command::Prune {
            model,
            axis,
            k,
            k_prime,
            threshold,
            percentile,
            retrain_epochs,
            out,
            report,
        } => {
            if let Some(a) = axis {
                cfg.prune.axis = a.into();
            }
            if let Some(k) = k {
                cfg.prune.k = k;
            }
            if let Some(k) = k_prime {
                cfg.prune.k_prime = k;
            }
            if let Some(t) = threshold {
                cfg.prune.criterion = Criterion::Threshold(t);
            }
            if let Some(p) = percentile {
                cfg.prune.criterion = Criterion::Percentile(p);
            }
            if let Some(e) = retrain_epochs {
                cfg.prune.retrain.epochs = e;
            }
            let model: ToyModel = read_json(&model)?;
            let data = Dataset::generate(&cfg.dataset_config())?;
            let outcome = pipeline::prune_stage(&cfg, &model, &data)?;
            let report = report.unwrap_or_else(|| sibling(&out, "prune_report.csv"));
            let mut art = artifacts(&cfg, Path::new("."));
            art.json(path_str(&out)?, &outcome.backbone)?;
            art.csv(path_str(&report)?, pipeline::prune_csv(&outcome));
            art.commit()?;
            println!(
                "backbone sparsity {:.4}, accuracy {:.4}",
                outcome.sparsity, outcome.accuracy
            );
        }
        Command::Space {
            backbone,
            levels,
            theta,
            m,
            p_size,
            out,
            report,
        } => {
            if let Some(l) = levels {
                cfg.dvfs = Some(l);
            }
            if let Some(t) = theta {
                cfg.space.theta = t;
            }
            if let Some(m) = m {
                cfg.space.m = m;
            }
            if let Some(p) = p_size {
                cfg.space.p_size = p;
            }
            let table = cfg.load_levels()?;
            let backbone: ToyModel = read_json(&backbone)?;
            let space = pipeline::space_stage(&cfg, &backbone, &table)?;
            let report = report.unwrap_or_else(|| sibling(&out, "space.csv"));
            let mut art = artifacts(&cfg, Path::new("."));
            art.json(path_str(&out)?, &space)?;
            art.csv(
                path_str(&report)?,
                pipeline::space_csv(&cfg, &backbone, &table, &space)?,
            );
            art.commit()?;
            println!("ladder {:?}", space.ladder.ratios);
        }
        Command::Search {
            backbone,
            sets,
            budget,
            episodes,
            k,
            exhaustive,
            out_dir,
        } => {
            if let Some(b) = budget {
                cfg.search.budget = b;
            }
            if let Some(e) = episodes {
                cfg.search.episodes = e;
            }
            if let Some(k) = k {
                cfg.search.k = k;
            }
            let table = cfg.load_levels()?;
            let backbone: ToyModel = read_json(&backbone)?;
            let sets: SetsFile = read_json(&sets)?;
            let data = Dataset::generate(&cfg.dataset_config())?;
            let outcome =
                pipeline::search_stage(&cfg, &backbone, &data, &table, &sets.sets, exhaustive)?;
            let mut art = artifacts(&cfg, &out_dir);
            art.csv(
                "episodes.csv",
                pipeline::episodes_csv(&outcome.log, table.len()),
            );
            art.csv("pareto.csv", pipeline::pareto_csv(&outcome.pareto));
            art.json("search.json", &outcome)?;
            art.json("selected_sets.json", &outcome.selection)?;
            art.commit()?;
            println!(
                "best reward {:.6} at episode {}",
                outcome.best_reward, outcome.best_episode
            );
            if let Some(r) = outcome.oracle_reward {
                println!("exhaustive best {r:.6}");
            }
        }
        Command::Train {
            backbone,
            sets,
            epochs,
            alpha,
            out_dir,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.train.loss_weights = parse_alpha(&alpha)?;
            let backbone: ToyModel = read_json(&backbone)?;
            let sets: SetsFile = read_json(&sets)?;
            let data = Dataset::generate(&cfg.dataset_config())?;
            let trained = pipeline::train_stage(&cfg, &backbone, &data, &sets.sets)?;
            let mut art = artifacts(&cfg, &out_dir);
            art.json("model.json", &trained.model)?;
            let levels = sets.levels.clone().unwrap_or_default();
            art.csv(
                "accuracy.csv",
                pipeline::accuracy_csv(&levels, &trained.report),
            );
            if levels.len() == sets.sets.len() {
                cfg.levels = levels.clone();
                let table = cfg.load_levels()?;
                let selection = Selection {
                    levels,
                    sets: sets.sets,
                };
                let deployment =
                    pipeline::build_deployment(&cfg, &trained.model, &table, &selection)?;
                art.json("deployment.json", &deployment)?;
            }
            art.commit()?;
            println!("accuracies {:?}", trained.report.accuracies);
        }
        Command::Simulate {
            deploy,
            battery,
            capacity,
            thresholds,
            bandwidth,
            out_dir,
        } => {
            if let Some(c) = battery {
                cfg.simulate.charge = c;
            }
            if let Some(c) = capacity {
                cfg.simulate.capacity = Some(c);
            }
            if let Some(t) = thresholds {
                cfg.simulate.thresholds = t;
            }
            if let Some(b) = bandwidth {
                cfg.simulate.bandwidth_bytes_per_ms = b;
            }
            let deployment: Deployment = read_json(&deploy)?;
            let battery = BatteryState::new(
                cfg.capacity(),
                cfg.simulate.charge,
                cfg.simulate.thresholds.clone(),
            )?;
            let outcome = pipeline::simulate_stage(
                &deployment,
                &battery,
                cfg.t_ms,
                cfg.simulate.bandwidth_bytes_per_ms,
            )?;
            let mut art = artifacts(&cfg, &out_dir);
            art.json("report.json", &outcome)?;
            art.csv("events.csv", pipeline::events_csv(&outcome.report));
            art.csv("modes.csv", pipeline::modes_csv(&outcome.modes));
            art.commit()?;
            print_modes(&outcome);
            if !outcome.report.constraint_met {
                bail!(rt3_core::Error::Infeasible(format!(
                    "deployment exceeds T = {} ms",
                    cfg.t_ms
                )));
            }
        }
        Command::Pareto { logs, out } => {
            let mut episodes: Vec<EpisodeResult> = Vec::new();
            for path in &logs {
                let file: LogFile = read_json(path)?;
                let offset = episodes.len();
                episodes.extend(file.log.episodes.into_iter().map(|mut e| {
                    e.episode += offset;
                    e
                }));
            }
            let front = pareto(&episodes);
            let mut art = artifacts(&cfg, Path::new("."));
            art.csv(path_str(&out)?, pipeline::pareto_csv(&front));
            art.commit()?;
            println!(
                "{} frontier points from {} episodes",
                front.len(),
                episodes.len()
            );
        }
        Command::Pipeline { out_dir } => {
            cfg.validate()?;
            let mut art = artifacts(&cfg, &out_dir);
            let outcome = pipeline::run_pipeline(&cfg, &mut art)?;
            let names: Vec<String> = art.names().map(str::to_string).collect();
            art.commit()?;
            print_modes(&outcome);
            println!("wrote {}", names.join(", "));
        }
    }
    Ok(())
}

fn artifacts(cfg: &RunConfig, dir: &Path) -> Artifacts {
    Artifacts::new(
        dir,
        Meta {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
    )
}

fn path_str(p: &Path) -> anyhow::Result<&str> {
    p.to_str()
        .with_context(|| format!("non-UTF-8 path {}", p.display()))
}

fn parse_alpha(s: &str) -> anyhow::Result<Option<Vec<f64>>> {
    if s == "uniform" {
        return Ok(None);
    }
    let weights = s
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|_| rt3_core::Error::InvalidConfig(format!("invalid loss weight `{w}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(weights))
}

fn print_modes(outcome: &pipeline::SimulateOutcome) {
    for m in &outcome.modes {
        println!(
            "{:<18} runs {:>8}  max {:>8.3} ms  {}",
            format!("{:?}", m.mode),
            m.report.total_runs,
            m.report.max_latency_ms,
            if m.report.constraint_met {
                "meets T"
            } else {
                "violates T"
            }
        );
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rt3_core::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Infeasible => 3,
                ErrorKind::Numeric => 4,
                ErrorKind::Runtime => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
