//! Pipeline stages. Each returns in-memory results; the callers decide which
//! artifacts to stage.

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rt3_core::dataset::Dataset;
use rt3_core::pattern::{build_candidate_sets, build_ladder};
use rt3_core::pruning::{bp_prune_model, LayerPruneReport};
use rt3_core::runtime::{
    compare_modes, simulate, BatteryState, Deployment, LevelDeployment, ModeReport,
    SimulationReport,
};
use rt3_core::search::{exhaustive, pareto, search, EpisodeEvaluator, ParetoPoint, SearchLog};
use rt3_core::trainer::{joint_train, sparsity_stats, train_backbone, Masking, TrainReport};
use rt3_core::{DvfsTable, PatternSet, SparsityLadder, ToyModel};

use crate::artifacts::{num, Artifacts, Csv};
use crate::config::{RunConfig, Stream};

/// Dense model trained on the synthetic task.
pub fn init_model(cfg: &RunConfig, data: &Dataset) -> anyhow::Result<(ToyModel, TrainReport)> {
    let mut model = ToyModel::random(&cfg.layer_sizes(), cfg.stream_seed(Stream::Init))?;
    let report = train_backbone(
        &mut model,
        &cfg.init.to_core(cfg.stream_seed(Stream::Init)),
        data,
    )
    .context("stage init")?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub backbone: ToyModel,
    pub layers: Vec<LayerPruneReport>,
    pub sparsity: f64,
    pub accuracy: f64,
}

/// Block pruning followed by masked retraining.
pub fn prune_stage(
    cfg: &RunConfig,
    model: &ToyModel,
    data: &Dataset,
) -> anyhow::Result<PruneOutcome> {
    let specs = cfg.prune.layer_specs(model.layers().len());
    let (mut backbone, layers) = bp_prune_model(model, &specs).context("stage prune")?;
    let report = train_backbone(
        &mut backbone,
        &cfg.prune.retrain.to_core(cfg.stream_seed(Stream::Retrain)),
        data,
    )
    .context("stage prune")?;
    let sparsity = sparsity_stats(&backbone, Masking::Backbone)?.effective_sparsity;
    Ok(PruneOutcome {
        backbone,
        layers,
        sparsity,
        accuracy: report.accuracies[0],
    })
}

/// Candidate space: the ladder and one pattern set per ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Space {
    pub levels: Vec<String>,
    pub t_ms: f64,
    pub ladder: SparsityLadder,
    pub sets: Vec<PatternSet>,
}

pub fn space_stage(
    cfg: &RunConfig,
    backbone: &ToyModel,
    levels: &DvfsTable,
) -> anyhow::Result<Space> {
    let s_bp = sparsity_stats(backbone, Masking::Backbone)?.effective_sparsity;
    let ladder = build_ladder(levels, cfg.t_ms, &cfg.perf, &cfg.space.ladder_config(s_bp))
        .context("stage space")?;
    let sets = build_candidate_sets(
        &backbone.effective_weights(),
        &ladder,
        cfg.space.m,
        cfg.space.p_size,
        cfg.stream_seed(Stream::Space),
    )
    .context("stage space")?;
    Ok(Space {
        levels: levels.levels().iter().map(|l| l.name.clone()).collect(),
        t_ms: cfg.t_ms,
        ladder,
        sets,
    })
}

/// Pattern sets chosen for each level, slowest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub levels: Vec<String>,
    pub sets: Vec<PatternSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub log: SearchLog,
    pub best_episode: usize,
    pub best_reward: f64,
    pub selection: Selection,
    pub pareto: Vec<ParetoPoint>,
    /// Best reward over the whole space, when exhaustive checking was asked.
    pub oracle_reward: Option<f64>,
}

pub fn search_stage(
    cfg: &RunConfig,
    backbone: &ToyModel,
    data: &Dataset,
    levels: &DvfsTable,
    candidates: &[PatternSet],
    with_oracle: bool,
) -> anyhow::Result<SearchOutcome> {
    let search_cfg = cfg.search_config();
    let mut evaluator =
        EpisodeEvaluator::new(backbone, data, levels, candidates, cfg.perf, &search_cfg)
            .context("stage search")?;
    let log = search(&mut evaluator, &search_cfg).context("stage search")?;
    let best = log.best().context("stage search")?.clone();
    let sets = evaluator.deployed_sets(&best.configuration)?;
    let oracle_reward = if with_oracle {
        let full = exhaustive(&mut evaluator).context("stage search")?;
        Some(full.best().context("stage search")?.reward)
    } else {
        None
    };
    let front = pareto(&log.episodes);
    Ok(SearchOutcome {
        best_episode: best.episode,
        best_reward: best.reward,
        selection: Selection {
            levels: levels.levels().iter().map(|l| l.name.clone()).collect(),
            sets,
        },
        pareto: front,
        oracle_reward,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub report: TrainReport,
}

/// Joint training of the backbone under every selected set.
pub fn train_stage(
    cfg: &RunConfig,
    backbone: &ToyModel,
    data: &Dataset,
    sets: &[PatternSet],
) -> anyhow::Result<TrainOutcome> {
    let mut model = backbone.clone();
    let report = joint_train(
        &mut model,
        sets,
        &cfg.train.to_core(cfg.stream_seed(Stream::Train)),
        data,
    )
    .context("stage train")?;
    Ok(TrainOutcome { model, report })
}

pub fn build_deployment(
    cfg: &RunConfig,
    model: &ToyModel,
    levels: &DvfsTable,
    selection: &Selection,
) -> anyhow::Result<Deployment> {
    let deployed = levels
        .levels()
        .iter()
        .zip(&selection.sets)
        .map(|(level, set)| LevelDeployment::with_set(level.clone(), set.clone(), model))
        .collect::<rt3_core::Result<Vec<_>>>()?;
    Ok(Deployment {
        backbone: model.clone(),
        perf: cfg.perf,
        levels: deployed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutcome {
    pub report: SimulationReport,
    pub modes: Vec<ModeReport>,
}

pub fn simulate_stage(
    deployment: &Deployment,
    battery: &BatteryState,
    t_ms: f64,
    bandwidth: f64,
) -> anyhow::Result<SimulateOutcome> {
    let report =
        simulate(deployment, battery.clone(), t_ms, bandwidth).context("stage simulate")?;
    let modes = compare_modes(deployment, battery, t_ms, bandwidth).context("stage simulate")?;
    Ok(SimulateOutcome { report, modes })
}

pub fn battery(cfg: &RunConfig) -> anyhow::Result<BatteryState> {
    Ok(BatteryState::new(
        cfg.capacity(),
        cfg.simulate.charge,
        cfg.simulate.thresholds.clone(),
    )?)
}

// ---- CSV tables ----

pub fn prune_csv(outcome: &PruneOutcome) -> Csv {
    let mut csv = Csv::new(&["layer", "blocks", "sparsity"]);
    for l in &outcome.layers {
        csv.row([l.layer.to_string(), l.blocks.to_string(), num(l.sparsity)]);
    }
    csv
}

/// Latency/energy of every ladder ratio at every level.
pub fn space_csv(
    cfg: &RunConfig,
    backbone: &ToyModel,
    levels: &DvfsTable,
    space: &Space,
) -> anyhow::Result<Csv> {
    let mut csv = Csv::new(&[
        "level",
        "sparsity",
        "cycles",
        "latency_ms",
        "energy",
        "runs",
    ]);
    for level in levels.levels() {
        for set in &space.sets {
            let assignment = rt3_core::trainer::assign_patterns(backbone, set)?;
            let stats = sparsity_stats(
                backbone,
                Masking::Patterns {
                    set,
                    assignment: &assignment,
                },
            )?;
            let cycles = cfg.perf.predict_cycles(&stats);
            let energy = cfg.perf.energy_per_run(cycles, level);
            let runs = (cfg.search.budget / energy).floor();
            csv.row([
                level.name.clone(),
                num(set.sparsity()),
                format!("{cycles:.0}"),
                num(rt3_core::perf::latency_ms(cycles, level)),
                num(energy),
                format!("{runs:.0}"),
            ]);
        }
    }
    Ok(csv)
}

pub fn episodes_csv(log: &SearchLog, levels: usize) -> Csv {
    let mut header = vec!["episode".to_string(), "actions".to_string()];
    header.extend((0..levels).map(|i| format!("lat_{i}")));
    header.push("runs".into());
    header.extend((0..levels).map(|i| format!("acc_{i}")));
    header.push("reward".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    for e in &log.episodes {
        let mut row = vec![e.episode.to_string(), e.configuration.label()];
        row.extend(e.latencies_ms.iter().map(|l| num(*l)));
        row.push(e.runs.to_string());
        match &e.accuracies {
            Some(accs) => row.extend(accs.iter().map(|a| num(*a))),
            None => row.extend((0..levels).map(|_| String::new())),
        }
        row.push(num(e.reward));
        csv.row(row);
    }
    csv
}

pub fn pareto_csv(points: &[ParetoPoint]) -> Csv {
    let mut csv = Csv::new(&["episode", "a_w", "runs"]);
    for p in points {
        csv.row([p.episode.to_string(), num(p.a_w), p.runs.to_string()]);
    }
    csv
}

pub fn accuracy_csv(selection_levels: &[String], report: &TrainReport) -> Csv {
    let mut csv = Csv::new(&["set", "level", "accuracy"]);
    for (i, acc) in report.accuracies.iter().enumerate() {
        let level = selection_levels.get(i).cloned().unwrap_or_default();
        csv.row([i.to_string(), level, num(*acc)]);
    }
    csv
}

pub fn events_csv(report: &SimulationReport) -> Csv {
    let mut csv = Csv::new(&[
        "at_inference",
        "from_level",
        "to_level",
        "from_set",
        "to_set",
        "bytes",
        "ms",
    ]);
    let set = |s: Option<usize>| s.map_or_else(String::new, |v| v.to_string());
    for e in &report.switches {
        csv.row([
            e.at_inference.to_string(),
            e.from_level.clone(),
            e.to_level.clone(),
            set(e.from_set),
            set(e.to_set),
            e.bytes.to_string(),
            num(e.duration_ms),
        ]);
    }
    csv
}

pub fn modes_csv(modes: &[ModeReport]) -> Csv {
    let mut csv = Csv::new(&["mode", "runs", "max_ms", "constraint_met", "switches"]);
    for m in modes {
        let name = serde_json::to_value(m.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        csv.row([
            name,
            m.report.total_runs.to_string(),
            num(m.report.max_latency_ms),
            m.report.constraint_met.to_string(),
            m.report.switches.len().to_string(),
        ]);
    }
    csv
}

/// Every stage end to end. Artifacts are staged into `out` and only written
/// by the caller after the last stage succeeds.
pub fn run_pipeline(cfg: &RunConfig, out: &mut Artifacts) -> anyhow::Result<SimulateOutcome> {
    let levels = cfg.load_levels()?;
    let data = Dataset::generate(&cfg.dataset_config())?;

    let (dense, init) = init_model(cfg, &data)?;
    out.json("model.json", &dense)?;
    let mut acc = Csv::new(&["stage", "accuracy"]);
    acc.row(["init".to_string(), num(init.accuracies[0])]);

    let pruned = prune_stage(cfg, &dense, &data)?;
    out.json("backbone.json", &pruned.backbone)?;
    out.csv("prune_report.csv", prune_csv(&pruned));
    acc.row(["prune".to_string(), num(pruned.accuracy)]);
    out.csv("stage_accuracy.csv", acc);

    let space = space_stage(cfg, &pruned.backbone, &levels)?;
    out.csv(
        "space.csv",
        space_csv(cfg, &pruned.backbone, &levels, &space)?,
    );
    out.json("sets.json", &space)?;

    let searched = search_stage(cfg, &pruned.backbone, &data, &levels, &space.sets, false)?;
    out.csv("episodes.csv", episodes_csv(&searched.log, levels.len()));
    out.csv("pareto.csv", pareto_csv(&searched.pareto));
    out.json("search.json", &searched)?;
    out.json("selected_sets.json", &searched.selection)?;

    let trained = train_stage(cfg, &pruned.backbone, &data, &searched.selection.sets)?;
    out.csv(
        "accuracy.csv",
        accuracy_csv(&searched.selection.levels, &trained.report),
    );
    let deployment = build_deployment(cfg, &trained.model, &levels, &searched.selection)?;
    out.json("deployment.json", &deployment)?;

    let simulated = simulate_stage(
        &deployment,
        &battery(cfg)?,
        cfg.t_ms,
        cfg.simulate.bandwidth_bytes_per_ms,
    )?;
    out.json("report.json", &simulated)?;
    out.csv("events.csv", events_csv(&simulated.report));
    out.csv("modes.csv", modes_csv(&simulated.modes));
    Ok(simulated)
}
