//! Run configuration: one JSON file drives every stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rt3_core::dataset::DatasetConfig;
use rt3_core::pattern::LadderConfig;
use rt3_core::pruning::{BpConfig, Criterion, LayerPruneSpec, PruneAxis};
use rt3_core::runtime::{Threshold, DEFAULT_BANDWIDTH_BYTES_PER_MS};
use rt3_core::search::SearchConfig;
use rt3_core::trainer::JointTrainConfig;
use rt3_core::{DvfsTable, PerfModel, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub holdout_per_class: usize,
    pub center_scale: f64,
    pub spread: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            classes: d.classes,
            dim: d.dim,
            train_per_class: d.train_per_class,
            holdout_per_class: d.holdout_per_class,
            center_scale: d.center_scale,
            spread: d.spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Loss weight per pattern set; uniform when absent.
    #[serde(default)]
    pub loss_weights: Option<Vec<f64>>,
}

impl TrainSection {
    fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            learning_rate: 0.1,
            batch_size: 32,
            loss_weights: None,
        }
    }

    pub fn to_core(&self, seed: u64) -> JointTrainConfig {
        JointTrainConfig {
            epochs: self.epochs,
            loss_weights: self.loss_weights.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub axis: PruneAxis,
    /// Row blocks per layer.
    pub k: usize,
    /// Column blocks per layer.
    pub k_prime: usize,
    pub criterion: Criterion,
    pub retrain: TrainSection,
}

impl PruneSection {
    pub fn layer_specs(&self, layers: usize) -> Vec<LayerPruneSpec> {
        vec![
            LayerPruneSpec {
                row_blocks: self.k,
                col_blocks: self.k_prime,
                config: BpConfig {
                    axis: self.axis,
                    criterion: self.criterion,
                },
            };
            layers
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub theta: usize,
    pub p_size: usize,
    pub m: usize,
    pub tighten_step: f64,
}

impl SpaceSection {
    pub fn ladder_config(&self, backbone_sparsity: f64) -> LadderConfig {
        LadderConfig {
            tighten_step: self.tighten_step,
            backbone_sparsity,
            ..LadderConfig::new(self.theta, self.p_size)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Patterns kept per chosen set.
    pub k: usize,
    pub episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    pub hidden: usize,
    pub budget: f64,
    pub a_m: f64,
    pub pen: f64,
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub budget_fractions: Option<Vec<f64>>,
    pub runs_headroom: f64,
    pub finetune: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Battery capacity; the search budget when absent.
    #[serde(default)]
    pub capacity: Option<f64>,
    /// Initial charge as a fraction of capacity.
    pub charge: f64,
    pub thresholds: Vec<Threshold>,
    pub bandwidth_bytes_per_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// DVFS table file, relative to the config file. The built-in Cortex-A7
    /// table when absent.
    pub dvfs: Option<PathBuf>,
    /// Deployed level names, slowest first.
    pub levels: Vec<String>,
    pub t_ms: f64,
    pub hidden_layers: Vec<usize>,
    pub data: DataSection,
    pub perf: PerfModel,
    pub init: TrainSection,
    pub prune: PruneSection,
    pub space: SpaceSection,
    pub search: SearchSection,
    pub train: TrainSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        Self {
            seed: 7,
            dvfs: None,
            levels: vec!["l3".into(), "l4".into(), "l6".into()],
            t_ms: 100.0,
            hidden_layers: vec![16, 16],
            data: DataSection::default(),
            perf: PerfModel {
                base_cycles: 2.4e8,
                overhead_beta: 0.05,
                energy_kappa: 1.0e-9,
            },
            init: TrainSection::with_epochs(40),
            prune: PruneSection {
                axis: PruneAxis::Column,
                k: 4,
                k_prime: 1,
                criterion: Criterion::Percentile(0.5),
                retrain: TrainSection::with_epochs(20),
            },
            space: SpaceSection {
                theta: 3,
                p_size: 4,
                m: 4,
                tighten_step: 0.05,
            },
            search: SearchSection {
                k: s.patterns_per_set,
                episodes: 200,
                batch_size: s.batch_size,
                learning_rate: s.learning_rate,
                baseline_decay: s.baseline_decay,
                hidden: s.hidden,
                budget: 1000.0,
                a_m: s.a_m,
                pen: s.pen,
                alphas: None,
                budget_fractions: None,
                runs_headroom: s.runs_headroom,
                finetune: TrainSection::with_epochs(2),
            },
            train: TrainSection::with_epochs(30),
            simulate: SimulateSection {
                capacity: None,
                charge: 1.0,
                thresholds: vec![
                    Threshold {
                        fraction: 0.5,
                        level: "l4".into(),
                    },
                    Threshold {
                        fraction: 0.2,
                        level: "l3".into(),
                    },
                ],
                bandwidth_bytes_per_ms: DEFAULT_BANDWIDTH_BYTES_PER_MS,
            },
        }
    }
}

/// Stream ids for per-stage seeds derived from the global seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Retrain = 3,
    Space = 4,
    Search = 5,
    Finetune = 6,
    Train = 7,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(dvfs), Some(dir)) = (&cfg.dvfs, path.parent()) {
            if dvfs.is_relative() {
                cfg.dvfs = Some(dir.join(dvfs));
            }
        }
        Ok(cfg)
    }

    pub fn stream_seed(&self, stream: Stream) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stream as u64)
    }

    /// SHA-256 of the canonical JSON form, hex encoded. Only the file name of
    /// the DVFS path counts, so the hash does not depend on the working
    /// directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        if let Some(name) = self.dvfs.as_ref().and_then(|p| p.file_name()) {
            canonical.dvfs = Some(PathBuf::from(name));
        }
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.data.classes,
            dim: self.data.dim,
            train_per_class: self.data.train_per_class,
            holdout_per_class: self.data.holdout_per_class,
            center_scale: self.data.center_scale,
            spread: self.data.spread,
            seed: self.stream_seed(Stream::Data),
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.data.dim];
        sizes.extend(&self.hidden_layers);
        sizes.push(self.data.classes);
        sizes
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            patterns_per_set: s.k,
            episodes: s.episodes,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            baseline_decay: s.baseline_decay,
            hidden: s.hidden,
            seed: self.stream_seed(Stream::Search),
            t_ms: self.t_ms,
            budget: s.budget,
            a_m: s.a_m,
            pen: s.pen,
            alphas: s.alphas.clone(),
            budget_fractions: s.budget_fractions.clone(),
            runs_headroom: s.runs_headroom,
            finetune: s.finetune.to_core(self.stream_seed(Stream::Finetune)),
        }
    }

    pub fn capacity(&self) -> f64 {
        self.simulate.capacity.unwrap_or(self.search.budget)
    }

    /// The table restricted to the deployed levels, ascending frequency.
    pub fn load_levels(&self) -> anyhow::Result<DvfsTable> {
        let table = match &self.dvfs {
            None => DvfsTable::cortex_a7(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading DVFS table {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing DVFS table {}", path.display()))?
            }
        };
        let names: Vec<&str> = self.levels.iter().map(String::as_str).collect();
        Ok(table.subset(&names)?)
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.levels.is_empty() {
            bail!(rt3_core::Error::InvalidConfig(
                "no levels configured".into()
            ));
        }
        if !(self.t_ms > 0.0) {
            bail!(rt3_core::Error::InvalidConfig("T must be > 0".into()));
        }
        self.perf.validate()?;
        ToyModel::random(&self.layer_sizes(), 0)?;
        let levels = self.load_levels()?;
        for t in &self.simulate.thresholds {
            if levels.get(&t.level).is_none() {
                bail!(rt3_core::Error::InvalidConfig(format!(
                    "threshold level {} is not deployed",
                    t.level
                )));
            }
        }
        rt3_core::runtime::BatteryState::new(
            self.capacity(),
            self.simulate.charge,
            self.simulate.thresholds.clone(),
        )?;
        if !(self.simulate.bandwidth_bytes_per_ms > 0.0) {
            bail!(rt3_core::Error::InvalidConfig(
                "bandwidth must be > 0".into()
            ));
        }
        Ok(())
    }
}

/// Parses a duration such as `100ms`, `0.1s` or a bare number of milliseconds.
pub fn parse_duration_ms(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("ms") {
        (v, 1.0)
    } else if let Some(v) = s.strip_suffix("us") {
        (v, 1e-3)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1e3)
    } else {
        (s, 1.0)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid duration `{s}`"))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(format!("duration must be positive, got `{s}`"));
    }
    Ok(v * scale)
}

/// Parses `0.5:l4,0.2:l3`.
pub fn parse_thresholds(s: &str) -> Result<Vec<Threshold>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (f, level) = item
                .split_once(':')
                .ok_or_else(|| format!("threshold `{item}` is not fraction:level"))?;
            let fraction: f64 = f
                .trim()
                .parse()
                .map_err(|_| format!("invalid threshold fraction `{f}`"))?;
            Ok(Threshold {
                fraction,
                level: level.trim().to_string(),
            })
        })
        .collect()
}
