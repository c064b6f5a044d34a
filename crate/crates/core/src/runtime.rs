//! Discharge simulator for a deployed model.
//!
//! A battery drains by one run's energy per inference. When the remaining
//! charge falls below a threshold the governor lowers the V/F level at the next
//! inference boundary and, if that level has its own pattern set, swaps the set
//! in. The backbone weights are shared by all levels and never written.
//!
//! The state machine is single-threaded; [`RuntimeState`] must not be shared
//! across threads while stepping.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ToyModel;
use crate::pattern::PatternSet;
use crate::perf::{latency_ms, PerfModel, SparsityStats, VfLevel};
use crate::trainer::{assign_patterns, sparsity_stats, Masking, PatternAssignment};

/// Fixed header of a serialized pattern set: sparsity (f64), p_size (u32),
/// member count (u32).
pub const SET_HEADER_BYTES: usize = 16;

/// Simulated off-chip transfer rate used for switch durations.
pub const DEFAULT_BANDWIDTH_BYTES_PER_MS: f64 = 8.0;

/// Binary form of a pattern set: header then one bit-packed bitmap per member
/// (row-major, LSB first, padded to whole bytes).
pub fn encode_pattern_set(set: &PatternSet) -> Vec<u8> {
    let p = set.p_size();
    let per = (p * p).div_ceil(8);
    let mut out = Vec::with_capacity(SET_HEADER_BYTES + per * set.len());
    out.extend_from_slice(&set.sparsity().to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for pattern in set.patterns() {
        let mut bytes = vec![0u8; per];
        for (i, keep) in pattern.bits().iter().enumerate() {
            if *keep {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn decode_pattern_set(bytes: &[u8]) -> Result<PatternSet> {
    let short = || Error::Serialization("truncated pattern set".into());
    if bytes.len() < SET_HEADER_BYTES {
        return Err(short());
    }
    let sparsity = f64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let p = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let per = (p * p).div_ceil(8);
    if bytes.len() != SET_HEADER_BYTES + per * count {
        return Err(short());
    }
    let patterns = bytes[SET_HEADER_BYTES..]
        .chunks_exact(per.max(1))
        .take(count)
        .map(|chunk| {
            let bits = (0..p * p)
                .map(|i| chunk[i / 8] & (1 << (i % 8)) != 0)
                .collect();
            crate::pattern::Pattern::new(p, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    PatternSet::new(sparsity, p, patterns)
}

pub fn pattern_set_bytes(set: &PatternSet) -> usize {
    SET_HEADER_BYTES + set.len() * (set.p_size() * set.p_size()).div_ceil(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchCost {
    pub bytes: usize,
    pub duration_ms: f64,
}

/// Cost of swapping `set` in; depends on the set alone.
pub fn switch_cost(set: &PatternSet, bandwidth_bytes_per_ms: f64) -> SwitchCost {
    let bytes = pattern_set_bytes(set);
    SwitchCost {
        bytes,
        duration_ms: bytes as f64 / bandwidth_bytes_per_ms,
    }
}

/// Cost of reloading a whole model instead (4 bytes per parameter).
pub fn model_reload_cost(model: &ToyModel, bandwidth_bytes_per_ms: f64) -> SwitchCost {
    let bytes = model.num_parameters() * 4;
    SwitchCost {
        bytes,
        duration_ms: bytes as f64 / bandwidth_bytes_per_ms,
    }
}

/// SHA-256 of all backbone parameters and masks.
pub fn backbone_checksum(model: &ToyModel) -> String {
    let mut h = Sha256::new();
    for layer in model.layers() {
        for v in layer.weights.data().iter().chain(&layer.bias) {
            h.update(v.to_le_bytes());
        }
        h.update(
            layer
                .bp_mask
                .bits()
                .iter()
                .map(|b| *b as u8)
                .collect::<Vec<u8>>(),
        );
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Software configuration deployed at one V/F level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDeployment {
    pub level: VfLevel,
    /// `None` runs the block-pruned backbone as is.
    pub pattern_set: Option<PatternSet>,
    pub assignment: Option<PatternAssignment>,
}

impl LevelDeployment {
    pub fn backbone_only(level: VfLevel) -> Self {
        Self {
            level,
            pattern_set: None,
            assignment: None,
        }
    }

    /// Level running `set` with its l2-norm assignment on `backbone`.
    pub fn with_set(level: VfLevel, set: PatternSet, backbone: &ToyModel) -> Result<Self> {
        let assignment = assign_patterns(backbone, &set)?;
        Ok(Self {
            level,
            pattern_set: Some(set),
            assignment: Some(assignment),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub backbone: ToyModel,
    pub perf: PerfModel,
    /// Ordered by ascending frequency.
    pub levels: Vec<LevelDeployment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelProfile {
    pub level: String,
    pub freq_mhz: f64,
    pub sparsity: f64,
    pub cycles: f64,
    pub latency_ms: f64,
    pub energy_per_run: f64,
    pub set_bytes: usize,
}

impl Deployment {
    pub fn validate(&self) -> Result<()> {
        self.perf.validate()?;
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("deployment has no levels".into()));
        }
        for w in self.levels.windows(2) {
            if w[1].level.freq_mhz <= w[0].level.freq_mhz {
                return Err(Error::InvalidConfig(
                    "deployment levels must have strictly increasing frequency".into(),
                ));
            }
        }
        for l in &self.levels {
            if l.pattern_set.is_some() != l.assignment.is_some() {
                return Err(Error::InvalidConfig(format!(
                    "level {} needs both a pattern set and an assignment",
                    l.level.name
                )));
            }
        }
        Ok(())
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.level.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("level {name} is not deployed")))
    }

    pub fn profiles(&self) -> Result<Vec<LevelProfile>> {
        self.levels
            .iter()
            .map(|l| {
                let stats = match (&l.pattern_set, &l.assignment) {
                    (Some(set), Some(assignment)) => {
                        sparsity_stats(&self.backbone, Masking::Patterns { set, assignment })?
                    }
                    _ => {
                        let s = sparsity_stats(&self.backbone, Masking::Backbone)?;
                        SparsityStats {
                            touched_fraction: 0.0,
                            ..s
                        }
                    }
                };
                let cycles = self.perf.predict_cycles(&stats);
                Ok(LevelProfile {
                    level: l.level.name.clone(),
                    freq_mhz: l.level.freq_mhz,
                    sparsity: stats.effective_sparsity,
                    cycles,
                    latency_ms: latency_ms(cycles, &l.level),
                    energy_per_run: self.perf.energy_per_run(cycles, &l.level),
                    set_bytes: l.pattern_set.as_ref().map_or(0, pattern_set_bytes),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Switch once `remaining / capacity` drops below this.
    pub fraction: f64,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub capacity: f64,
    pub remaining: f64,
    /// Strictly descending fractions.
    pub thresholds: Vec<Threshold>,
}

impl BatteryState {
    pub fn new(capacity: f64, charge: f64, thresholds: Vec<Threshold>) -> Result<Self> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::InvalidConfig("battery capacity must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&charge) {
            return Err(Error::InvalidConfig(format!(
                "initial charge {charge} outside [0, 1]"
            )));
        }
        for t in &thresholds {
            if !(t.fraction > 0.0 && t.fraction <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "threshold {} outside (0, 1]",
                    t.fraction
                )));
            }
        }
        if thresholds
            .windows(2)
            .any(|w| w[1].fraction >= w[0].fraction)
        {
            return Err(Error::InvalidConfig(
                "threshold fractions must strictly descend".into(),
            ));
        }
        Ok(Self {
            capacity,
            remaining: capacity * charge,
            thresholds,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.remaining / self.capacity
    }

    /// Level named by the lowest threshold already crossed, if any.
    fn target(&self) -> Option<&str> {
        let r = self.ratio();
        self.thresholds
            .iter()
            .rev()
            .find(|t| r < t.fraction)
            .map(|t| t.level.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// Number of inferences completed when the switch happened.
    pub at_inference: u64,
    pub from_level: String,
    pub to_level: String,
    pub from_set: Option<usize>,
    pub to_set: Option<usize>,
    pub bytes: usize,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub index: u64,
    pub level: String,
    pub latency_ms: f64,
    pub energy: f64,
}

pub struct RuntimeState<'a> {
    deployment: &'a Deployment,
    profiles: Vec<LevelProfile>,
    active: usize,
    inferences: u64,
    events: Vec<SwitchEvent>,
    bandwidth: f64,
}

impl<'a> RuntimeState<'a> {
    /// Starts at the fastest deployed level, or at the level the battery's
    /// charge already calls for.
    pub fn new(deployment: &'a Deployment, battery: &BatteryState, bandwidth: f64) -> Result<Self> {
        deployment.validate()?;
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be > 0".into()));
        }
        let profiles = deployment.profiles()?;
        let mut prev_freq = f64::INFINITY;
        for t in &battery.thresholds {
            let idx = deployment.index_of(&t.level)?;
            let f = deployment.levels[idx].level.freq_mhz;
            if f > prev_freq {
                return Err(Error::InvalidConfig(
                    "threshold levels must not raise the frequency as charge drops".into(),
                ));
            }
            prev_freq = f;
        }
        let mut state = Self {
            deployment,
            profiles,
            active: deployment.levels.len() - 1,
            inferences: 0,
            events: Vec::new(),
            bandwidth,
        };
        state.govern(battery)?;
        Ok(state)
    }

    pub fn active_level(&self) -> &VfLevel {
        &self.deployment.levels[self.active].level
    }

    /// Pattern set id (deployment level index) currently swapped in.
    pub fn active_set(&self) -> Option<usize> {
        self.deployment.levels[self.active]
            .pattern_set
            .as_ref()
            .map(|_| self.active)
    }

    pub fn inferences(&self) -> u64 {
        self.inferences
    }

    pub fn events(&self) -> &[SwitchEvent] {
        &self.events
    }

    pub fn profiles(&self) -> &[LevelProfile] {
        &self.profiles
    }

    pub fn backbone(&self) -> &ToyModel {
        &self.deployment.backbone
    }

    fn govern(&mut self, battery: &BatteryState) -> Result<()> {
        let Some(name) = battery.target() else {
            return Ok(());
        };
        let target = self.deployment.index_of(name)?;
        if target == self.active {
            return Ok(());
        }
        let from_set = self.active_set();
        let from_level = self.active_level().name.clone();
        self.active = target;
        let cost = match &self.deployment.levels[target].pattern_set {
            Some(set) => switch_cost(set, self.bandwidth),
            None => SwitchCost {
                bytes: 0,
                duration_ms: 0.0,
            },
        };
        self.events.push(SwitchEvent {
            at_inference: self.inferences,
            from_level,
            to_level: name.to_string(),
            from_set,
            to_set: self.active_set(),
            bytes: cost.bytes,
            duration_ms: cost.duration_ms,
        });
        Ok(())
    }

    /// Runs one inference at the active level, then applies any level change
    /// the new charge calls for.
    pub fn step(&mut self, battery: &mut BatteryState) -> Result<InferenceRecord> {
        let profile = &self.profiles[self.active];
        if battery.remaining < profile.energy_per_run {
            return Err(Error::Exhausted {
                remaining: battery.remaining,
                required: profile.energy_per_run,
            });
        }
        battery.remaining -= profile.energy_per_run;
        self.inferences += 1;
        let record = InferenceRecord {
            index: self.inferences,
            level: profile.level.clone(),
            latency_ms: profile.latency_ms,
            energy: profile.energy_per_run,
        };
        self.govern(battery)?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRuns {
    pub level: String,
    pub runs: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub total_runs: u64,
    pub per_level: Vec<LevelRuns>,
    pub switches: Vec<SwitchEvent>,
    pub max_latency_ms: f64,
    pub t_ms: f64,
    /// Every executed inference met the timing constraint.
    pub constraint_met: bool,
    pub initial_energy: f64,
    pub energy_used: f64,
    pub remaining: f64,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
}

/// Drains `battery` to exhaustion.
pub fn simulate(
    deployment: &Deployment,
    mut battery: BatteryState,
    t_ms: f64,
    bandwidth_bytes_per_ms: f64,
) -> Result<SimulationReport> {
    let before = backbone_checksum(&deployment.backbone);
    let initial_energy = battery.remaining;
    let mut state = RuntimeState::new(deployment, &battery, bandwidth_bytes_per_ms)?;
    let mut per_level: Vec<LevelRuns> = state
        .profiles()
        .iter()
        .map(|p| LevelRuns {
            level: p.level.clone(),
            runs: 0,
            latency_ms: p.latency_ms,
        })
        .collect();
    let mut energy_used = 0.0;
    let mut max_latency: f64 = 0.0;
    loop {
        let level = state.active;
        match state.step(&mut battery) {
            Ok(rec) => {
                per_level[level].runs += 1;
                energy_used += rec.energy;
                max_latency = max_latency.max(rec.latency_ms);
            }
            Err(Error::Exhausted { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let after = backbone_checksum(state.backbone());
    Ok(SimulationReport {
        total_runs: state.inferences(),
        per_level,
        switches: state.events().to_vec(),
        max_latency_ms: max_latency,
        t_ms,
        constraint_met: max_latency <= t_ms,
        initial_energy,
        energy_used,
        remaining: battery.remaining,
        backbone_checksum_before: before,
        backbone_checksum_after: after,
    })
}

/// Reconfiguration strategy compared in [`compare_modes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconfigMode {
    /// Backbone at the fastest level for the whole discharge.
    None,
    /// Backbone with the threshold governor lowering V/F.
    HardwareOnly,
    /// Governor plus per-level pattern sets.
    HardwareSoftware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: ReconfigMode,
    pub report: SimulationReport,
}

/// Runs the same discharge under the three strategies.
pub fn compare_modes(
    deployment: &Deployment,
    battery: &BatteryState,
    t_ms: f64,
    bandwidth_bytes_per_ms: f64,
) -> Result<Vec<ModeReport>> {
    deployment.validate()?;
    let top = deployment.levels.last().expect("validated non-empty");
    let none = Deployment {
        levels: vec![LevelDeployment::backbone_only(top.level.clone())],
        ..deployment.clone()
    };
    let hw = Deployment {
        levels: deployment
            .levels
            .iter()
            .map(|l| LevelDeployment::backbone_only(l.level.clone()))
            .collect(),
        ..deployment.clone()
    };
    let flat = BatteryState {
        thresholds: Vec::new(),
        ..battery.clone()
    };
    Ok(vec![
        ModeReport {
            mode: ReconfigMode::None,
            report: simulate(&none, flat, t_ms, bandwidth_bytes_per_ms)?,
        },
        ModeReport {
            mode: ReconfigMode::HardwareOnly,
            report: simulate(&hw, battery.clone(), t_ms, bandwidth_bytes_per_ms)?,
        },
        ModeReport {
            mode: ReconfigMode::HardwareSoftware,
            report: simulate(deployment, battery.clone(), t_ms, bandwidth_bytes_per_ms)?,
        },
    ])
}
