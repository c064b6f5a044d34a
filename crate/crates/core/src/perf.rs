//! Hardware model: V/F operating points, cycle prediction, latency, energy per
//! run, number of runs under a battery budget, and the search reward.
//!
//! Latency is `cycles / f`. Energy per run is `kappa * V^2 * cycles` with `V` in
//! volts, a dynamic-power approximation; the unit of `kappa` decides the energy
//! unit and the CLI reports it as millijoule-equivalents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfLevel {
    pub name: String,
    pub freq_mhz: f64,
    pub voltage_mv: f64,
}

impl VfLevel {
    pub fn new(name: impl Into<String>, freq_mhz: f64, voltage_mv: f64) -> Self {
        Self {
            name: name.into(),
            freq_mhz,
            voltage_mv,
        }
    }

    pub fn voltage_v(&self) -> f64 {
        self.voltage_mv / 1000.0
    }
}

/// Operating points ordered by ascending frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct DvfsTable {
    levels: Vec<VfLevel>,
}

#[derive(Deserialize)]
struct RawTable {
    levels: Vec<VfLevel>,
}

impl TryFrom<RawTable> for DvfsTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        DvfsTable::new(raw.levels)
    }
}

impl DvfsTable {
    pub fn new(levels: Vec<VfLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("DVFS table is empty".into()));
        }
        for l in &levels {
            if !(l.freq_mhz > 0.0 && l.voltage_mv > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "level {} needs positive frequency and voltage",
                    l.name
                )));
            }
        }
        for w in levels.windows(2) {
            if w[1].freq_mhz <= w[0].freq_mhz {
                return Err(Error::InvalidConfig(format!(
                    "frequencies must strictly increase ({} then {})",
                    w[0].name, w[1].name
                )));
            }
            if w[1].voltage_mv < w[0].voltage_mv {
                return Err(Error::InvalidConfig(format!(
                    "voltages must not decrease ({} then {})",
                    w[0].name, w[1].name
                )));
            }
        }
        let mut names: Vec<&str> = levels.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate level names".into()));
        }
        Ok(Self { levels })
    }

    /// The six Cortex-A7 operating points of the Odroid-XU3 board.
    pub fn cortex_a7() -> Self {
        Self::new(vec![
            VfLevel::new("l1", 400.0, 916.25),
            VfLevel::new("l2", 600.0, 917.5),
            VfLevel::new("l3", 800.0, 992.5),
            VfLevel::new("l4", 1000.0, 1066.25),
            VfLevel::new("l5", 1200.0, 1141.25),
            VfLevel::new("l6", 1400.0, 1240.0),
        ])
        .expect("static table is valid")
    }

    pub fn levels(&self) -> &[VfLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn highest(&self) -> &VfLevel {
        self.levels.last().unwrap()
    }

    pub fn get(&self, name: &str) -> Option<&VfLevel> {
        self.levels.iter().find(|l| l.name == name)
    }

    /// Table restricted to the named levels (kept in frequency order).
    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        for n in names {
            if self.get(n).is_none() {
                return Err(Error::InvalidConfig(format!("unknown V/F level {n}")));
            }
        }
        Self::new(
            self.levels
                .iter()
                .filter(|l| names.contains(&l.name.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Realized sparsity of a deployed configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    /// Zero fraction of the combined (block pruning AND pattern) masks.
    pub effective_sparsity: f64,
    /// Fraction of pattern tiles whose assigned pattern prunes anything.
    pub touched_fraction: f64,
}

impl SparsityStats {
    pub fn dense() -> Self {
        Self {
            effective_sparsity: 0.0,
            touched_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    /// Cycles for one dense, unpruned inference.
    pub base_cycles: f64,
    /// Relative overhead of pattern-sparse execution per touched tile.
    pub overhead_beta: f64,
    /// Energy per (V^2 * cycle).
    pub energy_kappa: f64,
}

impl PerfModel {
    pub fn new(base_cycles: f64, overhead_beta: f64, energy_kappa: f64) -> Result<Self> {
        let m = Self {
            base_cycles,
            overhead_beta,
            energy_kappa,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_cycles > 0.0 && self.base_cycles.is_finite()) {
            return Err(Error::InvalidConfig("base_cycles must be > 0".into()));
        }
        if !(self.overhead_beta >= 0.0) {
            return Err(Error::InvalidConfig("overhead_beta must be >= 0".into()));
        }
        if !(self.energy_kappa > 0.0) {
            return Err(Error::InvalidConfig("energy_kappa must be > 0".into()));
        }
        Ok(())
    }

    /// `C0 * (1 - s_eff) * (1 + beta * touched)`.
    pub fn predict_cycles(&self, stats: &SparsityStats) -> f64 {
        self.base_cycles
            * (1.0 - stats.effective_sparsity)
            * (1.0 + self.overhead_beta * stats.touched_fraction)
    }

    pub fn energy_per_run(&self, cycles: f64, level: &VfLevel) -> f64 {
        energy_per_run(cycles, level, self.energy_kappa)
    }
}

/// Milliseconds for `cycles` at the level's frequency.
pub fn latency_ms(cycles: f64, level: &VfLevel) -> f64 {
    cycles / (level.freq_mhz * 1e3)
}

pub fn energy_per_run(cycles: f64, level: &VfLevel, kappa: f64) -> f64 {
    let v = level.voltage_v();
    kappa * v * v * cycles
}

/// One DVFS mode of a discharge schedule: the energy it spends per run and the
/// fraction of the budget it receives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub energy_per_run: f64,
    pub fraction: f64,
}

/// `sum_i floor(phi_i * E / e_i)`.
pub fn num_runs(budget: f64, schedule: &[ScheduleEntry]) -> Result<u64> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("schedule is empty".into()));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "budget {budget} is invalid"
        )));
    }
    let total: f64 = schedule.iter().map(|e| e.fraction).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSchedule(format!(
            "budget fractions sum to {total}, expected 1"
        )));
    }
    let mut runs = 0u64;
    for e in schedule {
        if !(e.fraction >= 0.0) {
            return Err(Error::InvalidSchedule("negative budget fraction".into()));
        }
        if !(e.energy_per_run > 0.0 && e.energy_per_run.is_finite()) {
            return Err(Error::InvalidSchedule(
                "energy per run must be positive".into(),
            ));
        }
        runs += (e.fraction * budget / e.energy_per_run).floor() as u64;
    }
    Ok(runs)
}

/// `min(1, runs / reference)`.
pub fn normalize_runs(runs: u64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "run reference must be positive, got {reference}"
        )));
    }
    Ok((runs as f64 / reference).min(1.0))
}

/// Accuracy-side terms of the reward; absent when a latency violation skipped
/// fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTerms {
    pub a_w: f64,
    pub cond: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardInputs {
    pub accuracy: Option<AccuracyTerms>,
    pub a_o: f64,
    pub a_m: f64,
    pub pen: f64,
    pub r_runs: f64,
    pub latencies_ms: Vec<f64>,
    pub t_ms: f64,
}

impl RewardInputs {
    pub fn violates_timing(&self) -> bool {
        self.latencies_ms.iter().any(|l| *l > self.t_ms)
    }
}

/// Three-case reward:
///
/// * some latency above `T`: `-1 + R_runs`
/// * all latencies within `T` and `cond`: `(A_w - A_m) / (A_o - A_m) + R_runs`
/// * otherwise the same minus `pen`
pub fn reward(inputs: &RewardInputs) -> Result<f64> {
    if inputs.a_o == inputs.a_m {
        return Err(Error::DegenerateRange {
            a_o: inputs.a_o,
            a_m: inputs.a_m,
        });
    }
    if inputs.a_o < inputs.a_m {
        return Err(Error::InvalidConfig(format!(
            "accuracy floor {} exceeds backbone accuracy {}",
            inputs.a_m, inputs.a_o
        )));
    }
    if !(0.0..=1.0).contains(&inputs.r_runs) {
        return Err(Error::InvalidConfig(format!(
            "R_runs {} outside [0, 1]",
            inputs.r_runs
        )));
    }
    if !(inputs.pen >= 0.0) {
        return Err(Error::InvalidConfig("penalty must be >= 0".into()));
    }
    if inputs.violates_timing() {
        return Ok(-1.0 + inputs.r_runs);
    }
    let acc = inputs
        .accuracy
        .ok_or_else(|| Error::InvalidConfig("accuracy terms required when timing is met".into()))?;
    let normalized = (acc.a_w - inputs.a_m) / (inputs.a_o - inputs.a_m);
    Ok(if acc.cond {
        normalized + inputs.r_runs
    } else {
        normalized - inputs.pen + inputs.r_runs
    })
}

/// True iff accuracies strictly decrease with level index (levels ordered by
/// ascending frequency). Vacuously true for fewer than two levels.
pub fn check_cond(accs: &[f64]) -> bool {
    accs.windows(2).all(|w| w[0] > w[1])
}

/// `sum_i alpha_i * acc_i`.
pub fn weighted_accuracy(alphas: &[f64], accs: &[f64]) -> f64 {
    alphas.iter().zip(accs).map(|(a, c)| a * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(accuracy: Option<AccuracyTerms>, r_runs: f64, lat: f64) -> RewardInputs {
        RewardInputs {
            accuracy,
            a_o: 0.9,
            a_m: 0.5,
            pen: 0.5,
            r_runs,
            latencies_ms: vec![lat, 50.0],
            t_ms: 100.0,
        }
    }

    #[test]
    fn cortex_table_matches_board() {
        let t = DvfsTable::cortex_a7();
        let f: Vec<f64> = t.levels().iter().map(|l| l.freq_mhz).collect();
        let v: Vec<f64> = t.levels().iter().map(|l| l.voltage_mv).collect();
        assert_eq!(f, vec![400.0, 600.0, 800.0, 1000.0, 1200.0, 1400.0]);
        assert_eq!(v, vec![916.25, 917.5, 992.5, 1066.25, 1141.25, 1240.0]);
    }

    #[test]
    fn table_validation() {
        assert!(DvfsTable::new(vec![]).is_err());
        assert!(DvfsTable::new(vec![
            VfLevel::new("a", 800.0, 1000.0),
            VfLevel::new("b", 800.0, 1100.0)
        ])
        .is_err());
        assert!(DvfsTable::new(vec![
            VfLevel::new("a", 800.0, 1000.0),
            VfLevel::new("b", 900.0, 990.0)
        ])
        .is_err());
        let sub = DvfsTable::cortex_a7().subset(&["l6", "l3", "l4"]).unwrap();
        let names: Vec<&str> = sub.levels().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, vec!["l3", "l4", "l6"]);
        assert!(DvfsTable::cortex_a7().subset(&["l9"]).is_err());
        let json = r#"{"levels":[{"name":"x","freq_mhz":100,"voltage_mv":900}]}"#;
        assert_eq!(serde_json::from_str::<DvfsTable>(json).unwrap().len(), 1);
    }

    #[test]
    fn cycles_model() {
        let m = PerfModel::new(1000.0, 0.0, 1.0).unwrap();
        assert_eq!(m.predict_cycles(&SparsityStats::dense()), 1000.0);
        let half = SparsityStats {
            effective_sparsity: 0.5,
            touched_fraction: 1.0,
        };
        assert_eq!(m.predict_cycles(&half), 500.0);
        let with_overhead = PerfModel::new(1000.0, 0.1, 1.0).unwrap();
        assert!((with_overhead.predict_cycles(&half) - 550.0).abs() < 1e-9);
        assert!(PerfModel::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn latency_examples() {
        let t = DvfsTable::cortex_a7();
        assert!((latency_ms(1.4e8, t.get("l6").unwrap()) - 100.0).abs() < 1e-9);
        assert!((latency_ms(1.4e8, t.get("l1").unwrap()) - 350.0).abs() < 1e-9);
    }

    #[test]
    fn energy_scales_with_kappa_and_voltage() {
        let t = DvfsTable::cortex_a7();
        let l1 = t.get("l1").unwrap();
        let l6 = t.get("l6").unwrap();
        let ratio = energy_per_run(1e8, l1, 1.0) / energy_per_run(1e8, l6, 1.0);
        assert!((ratio - (916.25f64 / 1240.0).powi(2)).abs() < 1e-12);
        assert!((ratio - 0.546).abs() < 1e-3);
        assert_eq!(
            energy_per_run(1e8, l6, 2.0),
            2.0 * energy_per_run(1e8, l6, 1.0)
        );
    }

    #[test]
    fn runs_single_mode_and_errors() {
        let e = ScheduleEntry {
            energy_per_run: 2.5,
            fraction: 1.0,
        };
        assert_eq!(num_runs(25.0, &[e]).unwrap(), 10);
        let bad = ScheduleEntry {
            energy_per_run: 1.0,
            fraction: 0.5,
        };
        assert!(matches!(
            num_runs(10.0, &[bad]),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(num_runs(10.0, &[]).is_err());
        assert_eq!(normalize_runs(50, 100.0).unwrap(), 0.5);
        assert_eq!(normalize_runs(500, 100.0).unwrap(), 1.0);
        assert!(normalize_runs(1, 0.0).is_err());
    }

    #[test]
    fn reward_cases() {
        let r = reward(&inputs(None, 0.2, 120.0)).unwrap();
        assert!((r - (-0.8)).abs() < 1e-12);

        let full = AccuracyTerms {
            a_w: 0.9,
            cond: true,
        };
        let r = reward(&inputs(Some(full), 0.3, 80.0)).unwrap();
        assert!((r - 1.3).abs() < 1e-12);

        let mid = AccuracyTerms {
            a_w: 0.7,
            cond: false,
        };
        let r = reward(&inputs(Some(mid), 0.0, 80.0)).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn reward_errors() {
        let mut i = inputs(None, 0.0, 120.0);
        i.a_m = i.a_o;
        assert!(matches!(reward(&i), Err(Error::DegenerateRange { .. })));
        assert!(reward(&inputs(None, 0.0, 80.0)).is_err());
        assert!(reward(&inputs(None, 1.5, 120.0)).is_err());
    }

    #[test]
    fn cond_is_strict() {
        assert!(check_cond(&[0.97, 0.96, 0.93]));
        assert!(!check_cond(&[0.9, 0.9]));
        assert!(!check_cond(&[0.5, 0.9]));
        assert!(check_cond(&[0.5]));
    }
}
