//! Policy-gradient search over per-level pattern sets, plus the comparison
//! strategies (exhaustive enumeration and the "just meets T" heuristic) and
//! the Pareto frontier of explored points.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{Baseline, Controller, ControllerSpec, SampleMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ToyModel;
use crate::pattern::PatternSet;
use crate::perf::{
    check_cond, latency_ms, normalize_runs, num_runs, reward, weighted_accuracy, AccuracyTerms,
    DvfsTable, PerfModel, RewardInputs, ScheduleEntry,
};
use crate::trainer::{
    assign_patterns, evaluate_accuracy, joint_train, sparsity_stats, JointTrainConfig, Masking,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Patterns sampled from each chosen set (K).
    pub patterns_per_set: usize,
    pub episodes: usize,
    /// Episodes per controller update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Timing constraint in milliseconds.
    pub t_ms: f64,
    /// Energy budget for one discharge.
    pub budget: f64,
    /// Accuracy floor of the reward.
    pub a_m: f64,
    pub pen: f64,
    /// Accuracy weights per level; uniform when absent.
    pub alphas: Option<Vec<f64>>,
    /// Budget share per level; uniform when absent.
    pub budget_fractions: Option<Vec<f64>>,
    /// Reference runs = dense runs at the highest level times this factor.
    pub runs_headroom: f64,
    /// Fine-tuning applied to every timing-feasible episode.
    pub finetune: JointTrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            patterns_per_set: 1,
            episodes: 500,
            batch_size: 4,
            learning_rate: 0.2,
            baseline_decay: 0.9,
            hidden: 32,
            seed: 7,
            t_ms: 100.0,
            budget: 1.0e4,
            a_m: 0.25,
            pen: 0.5,
            alphas: None,
            budget_fractions: None,
            runs_headroom: 4.0,
            finetune: JointTrainConfig {
                epochs: 2,
                ..JointTrainConfig::default()
            },
        }
    }
}

impl SearchConfig {
    fn uniform_or(given: &Option<Vec<f64>>, n: usize, what: &str) -> Result<Vec<f64>> {
        let v = given.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if v.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} {what} for {n} levels",
                v.len()
            )));
        }
        if v.iter().any(|x| !(*x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "{what} must be non-negative and sum to 1"
            )));
        }
        Ok(v)
    }
}

/// Choice for one V/F level: a candidate set and the distinct members kept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelChoice {
    pub set: usize,
    pub patterns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub choices: Vec<LevelChoice>,
}

impl Configuration {
    /// Canonical configuration of a controller action sequence.
    pub fn from_actions(spec: &ControllerSpec, actions: &[usize]) -> Self {
        let per = spec.steps_per_level();
        let choices = actions
            .chunks(per)
            .map(|chunk| {
                let mut patterns = chunk[1..].to_vec();
                if patterns.is_empty() {
                    patterns.push(0);
                }
                patterns.sort_unstable();
                patterns.dedup();
                LevelChoice {
                    set: chunk[0],
                    patterns,
                }
            })
            .collect();
        Self { choices }
    }

    /// Compact text form, e.g. `2:0+1|0:3`.
    pub fn label(&self) -> String {
        self.choices
            .iter()
            .map(|c| {
                let pats: Vec<String> = c.patterns.iter().map(|p| p.to_string()).collect();
                format!("{}:{}", c.set, pats.join("+"))
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub configuration: Configuration,
    pub sparsities: Vec<f64>,
    pub latencies_ms: Vec<f64>,
    pub runs: u64,
    pub r_runs: f64,
    /// Present only when every latency met `T` and the model was fine-tuned.
    pub accuracies: Option<Vec<f64>>,
    pub a_w: Option<f64>,
    pub cond: Option<bool>,
    pub reward: f64,
}

impl EpisodeResult {
    pub fn feasible(&self) -> bool {
        self.accuracies.is_some()
    }

    pub fn reward_inputs(&self, ctx: &RewardContext) -> RewardInputs {
        RewardInputs {
            accuracy: self
                .a_w
                .zip(self.cond)
                .map(|(a_w, cond)| AccuracyTerms { a_w, cond }),
            a_o: ctx.a_o,
            a_m: ctx.a_m,
            pen: ctx.pen,
            r_runs: self.r_runs,
            latencies_ms: self.latencies_ms.clone(),
            t_ms: ctx.t_ms,
        }
    }
}

/// Reward constants shared by every episode of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardContext {
    pub a_o: f64,
    pub a_m: f64,
    pub pen: f64,
    pub t_ms: f64,
    pub reference_runs: f64,
}

/// Scores configurations against one backbone. Each evaluation fine-tunes a
/// private copy of the backbone from the same snapshot and seed, so a
/// configuration always gets the same reward.
pub struct EpisodeEvaluator<'a> {
    backbone: &'a ToyModel,
    data: &'a Dataset,
    levels: &'a DvfsTable,
    candidates: &'a [PatternSet],
    perf: PerfModel,
    config: &'a SearchConfig,
    alphas: Vec<f64>,
    fractions: Vec<f64>,
    ctx: RewardContext,
    cache: HashMap<Configuration, EpisodeResult>,
}

impl<'a> EpisodeEvaluator<'a> {
    pub fn new(
        backbone: &'a ToyModel,
        data: &'a Dataset,
        levels: &'a DvfsTable,
        candidates: &'a [PatternSet],
        perf: PerfModel,
        config: &'a SearchConfig,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidConfig("no candidate pattern sets".into()));
        }
        perf.validate()?;
        let n = levels.len();
        let alphas = SearchConfig::uniform_or(&config.alphas, n, "accuracy weights")?;
        let fractions = SearchConfig::uniform_or(&config.budget_fractions, n, "budget fractions")?;
        if !(config.runs_headroom > 0.0) {
            return Err(Error::InvalidConfig("runs_headroom must be > 0".into()));
        }
        let a_o = evaluate_accuracy(backbone, Masking::Backbone, &data.holdout)?;
        if a_o <= config.a_m {
            return Err(Error::DegenerateRange {
                a_o,
                a_m: config.a_m,
            });
        }
        let dense_energy = perf.energy_per_run(perf.base_cycles, levels.highest());
        let dense_runs = num_runs(
            config.budget,
            &[ScheduleEntry {
                energy_per_run: dense_energy,
                fraction: 1.0,
            }],
        )?;
        let reference_runs = (dense_runs.max(1) as f64) * config.runs_headroom;
        Ok(Self {
            backbone,
            data,
            levels,
            candidates,
            perf,
            config,
            alphas,
            fractions,
            ctx: RewardContext {
                a_o,
                a_m: config.a_m,
                pen: config.pen,
                t_ms: config.t_ms,
                reference_runs,
            },
            cache: HashMap::new(),
        })
    }

    pub fn context(&self) -> RewardContext {
        self.ctx
    }

    pub fn controller_spec(&self) -> ControllerSpec {
        ControllerSpec {
            levels: self.levels.len(),
            patterns_per_level: self.config.patterns_per_set,
            set_sizes: self.candidates.iter().map(PatternSet::len).collect(),
        }
    }

    /// Deployed pattern set of every level.
    pub fn deployed_sets(&self, cfg: &Configuration) -> Result<Vec<PatternSet>> {
        if cfg.choices.len() != self.levels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} choices for {} levels",
                cfg.choices.len(),
                self.levels.len()
            )));
        }
        cfg.choices
            .iter()
            .map(|c| {
                self.candidates
                    .get(c.set)
                    .ok_or_else(|| Error::InvalidConfig(format!("no candidate set {}", c.set)))?
                    .subset(&c.patterns)
            })
            .collect()
    }

    /// Latency and energy of every level, without training.
    pub fn hardware_profile(&self, sets: &[PatternSet]) -> Result<Vec<(f64, f64)>> {
        sets.iter()
            .zip(self.levels.levels())
            .map(|(set, level)| {
                let assignment = assign_patterns(self.backbone, set)?;
                let stats = sparsity_stats(
                    self.backbone,
                    Masking::Patterns {
                        set,
                        assignment: &assignment,
                    },
                )?;
                let cycles = self.perf.predict_cycles(&stats);
                Ok((
                    latency_ms(cycles, level),
                    self.perf.energy_per_run(cycles, level),
                ))
            })
            .collect()
    }

    /// Scores one configuration (cached). The episode index is filled in by
    /// the caller.
    pub fn evaluate(&mut self, cfg: &Configuration) -> Result<EpisodeResult> {
        if let Some(hit) = self.cache.get(cfg) {
            return Ok(hit.clone());
        }
        let sets = self.deployed_sets(cfg)?;
        let profile = self.hardware_profile(&sets)?;
        let latencies_ms: Vec<f64> = profile.iter().map(|p| p.0).collect();
        let schedule: Vec<ScheduleEntry> = profile
            .iter()
            .zip(&self.fractions)
            .map(|(p, f)| ScheduleEntry {
                energy_per_run: p.1,
                fraction: *f,
            })
            .collect();
        let runs = num_runs(self.config.budget, &schedule)?;
        let r_runs = normalize_runs(runs, self.ctx.reference_runs)?;

        let mut result = EpisodeResult {
            episode: 0,
            configuration: cfg.clone(),
            sparsities: sets.iter().map(PatternSet::sparsity).collect(),
            latencies_ms,
            runs,
            r_runs,
            accuracies: None,
            a_w: None,
            cond: None,
            reward: 0.0,
        };
        let violates = result.latencies_ms.iter().any(|l| *l > self.ctx.t_ms);
        if !violates {
            let mut model = self.backbone.clone();
            let ft = JointTrainConfig {
                loss_weights: None,
                ..self.config.finetune.clone()
            };
            let report = joint_train(&mut model, &sets, &ft, self.data)?;
            result.a_w = Some(weighted_accuracy(&self.alphas, &report.accuracies));
            result.cond = Some(check_cond(&report.accuracies));
            result.accuracies = Some(report.accuracies);
        }
        result.reward = reward(&result.reward_inputs(&self.ctx))?;
        self.cache.insert(cfg.clone(), result.clone());
        Ok(result)
    }

    /// Distinct configurations evaluated so far.
    pub fn evaluated(&self) -> usize {
        self.cache.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub context: RewardContext,
    pub episodes: Vec<EpisodeResult>,
}

impl SearchLog {
    /// Highest-reward timing-feasible episode; earliest on ties.
    pub fn best(&self) -> Result<&EpisodeResult> {
        let mut best: Option<&EpisodeResult> = None;
        for e in self.episodes.iter().filter(|e| e.feasible()) {
            if best.is_none_or(|b| e.reward > b.reward) {
                best = Some(e);
            }
        }
        best.ok_or(Error::NoFeasible)
    }
}

/// REINFORCE search. Returns the full log; [`SearchLog::best`] picks the
/// answer.
pub fn search(evaluator: &mut EpisodeEvaluator<'_>, config: &SearchConfig) -> Result<SearchLog> {
    if config.episodes == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "episodes and batch size must be >= 1".into(),
        ));
    }
    if config.patterns_per_set == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    let spec = evaluator.controller_spec();
    let mut controller = Controller::new(spec.clone(), config.hidden, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5EA2_C4A1_0000);
    let mut baseline = Baseline::new(config.baseline_decay);
    let mut episodes = Vec::with_capacity(config.episodes);

    while episodes.len() < config.episodes {
        let n = config.batch_size.min(config.episodes - episodes.len());
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let traj = controller.sample(&mut rng, SampleMode::Stochastic);
            let cfg = Configuration::from_actions(&spec, &traj.actions);
            let mut result = evaluator.evaluate(&cfg)?;
            result.episode = episodes.len();
            batch.push((traj.actions, result.reward));
            episodes.push(result);
        }
        let mean = batch.iter().map(|b| b.1).sum::<f64>() / batch.len() as f64;
        let b = baseline.get_or(mean);
        controller.reinforce_update(&batch, b, config.learning_rate)?;
        for (_, r) in &batch {
            baseline.observe(*r);
        }
    }
    Ok(SearchLog {
        context: evaluator.context(),
        episodes,
    })
}

/// Every distinct configuration reachable by the controller.
pub fn enumerate_configurations(spec: &ControllerSpec) -> Vec<Configuration> {
    let mut out = std::collections::BTreeSet::new();
    let mut actions = Vec::with_capacity(spec.num_steps());
    fn rec(
        spec: &ControllerSpec,
        actions: &mut Vec<usize>,
        out: &mut std::collections::BTreeSet<Configuration>,
    ) {
        let t = actions.len();
        if t == spec.num_steps() {
            out.insert(Configuration::from_actions(spec, actions));
            return;
        }
        for a in 0..spec.valid_options(t, actions) {
            actions.push(a);
            rec(spec, actions, out);
            actions.pop();
        }
    }
    rec(spec, &mut actions, &mut out);
    out.into_iter().collect()
}

/// Exhaustive evaluation of the whole space; the answer search is judged by.
pub fn exhaustive(evaluator: &mut EpisodeEvaluator<'_>) -> Result<SearchLog> {
    let configs = enumerate_configurations(&evaluator.controller_spec());
    let episodes = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut r = evaluator.evaluate(c)?;
            r.episode = i;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchLog {
        context: evaluator.context(),
        episodes,
    })
}

/// For each level, the least sparse candidate whose first `K` members meet
/// `T` there. Fails with `NoFeasible` if some level has none.
pub fn heuristic_configuration(evaluator: &EpisodeEvaluator<'_>) -> Result<Configuration> {
    let k = evaluator.config.patterns_per_set.max(1);
    let mut order: Vec<usize> = (0..evaluator.candidates.len()).collect();
    order.sort_by(|a, b| {
        evaluator.candidates[*a]
            .sparsity()
            .total_cmp(&evaluator.candidates[*b].sparsity())
    });
    let mut choices = Vec::with_capacity(evaluator.levels.len());
    for level in evaluator.levels.levels() {
        let mut found = None;
        for &ci in &order {
            let set = &evaluator.candidates[ci];
            let patterns: Vec<usize> = (0..k.min(set.len())).collect();
            let sub = set.subset(&patterns)?;
            let assignment = assign_patterns(evaluator.backbone, &sub)?;
            let stats = sparsity_stats(
                evaluator.backbone,
                Masking::Patterns {
                    set: &sub,
                    assignment: &assignment,
                },
            )?;
            if latency_ms(evaluator.perf.predict_cycles(&stats), level) <= evaluator.ctx.t_ms {
                found = Some(LevelChoice { set: ci, patterns });
                break;
            }
        }
        choices.push(found.ok_or(Error::NoFeasible)?);
    }
    Ok(Configuration { choices })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub a_w: f64,
    pub runs: u64,
    pub episode: usize,
}

impl ParetoPoint {
    /// Weak dominance: at least as good in both objectives.
    pub fn weakly_dominates(&self, other: &ParetoPoint) -> bool {
        self.a_w >= other.a_w && self.runs >= other.runs
    }

    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.weakly_dominates(other) && (self.a_w > other.a_w || self.runs > other.runs)
    }
}

/// Non-dominated `(A_w, runs)` points among feasible episodes, one per
/// distinct point (earliest episode kept), sorted by ascending `A_w`.
pub fn pareto(episodes: &[EpisodeResult]) -> Vec<ParetoPoint> {
    let points: Vec<ParetoPoint> = episodes
        .iter()
        .filter_map(|e| {
            e.a_w.map(|a_w| ParetoPoint {
                a_w,
                runs: e.runs,
                episode: e.episode,
            })
        })
        .collect();
    pareto_points(&points)
}

pub fn pareto_points(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| q.dominates(p)) {
            continue;
        }
        if front.iter().any(|f| f.a_w == p.a_w && f.runs == p.runs) {
            continue;
        }
        front.push(*p);
    }
    front.sort_by(|a, b| a.a_w.total_cmp(&b.a_w).then(b.runs.cmp(&a.runs)));
    front
}
