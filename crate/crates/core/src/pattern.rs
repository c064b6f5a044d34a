//! Pattern search space: the sparsity ladder derived from the timing
//! constraint, and importance-guided `p x p` patterns built from the
//! block-pruned backbone.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{BlockPartition, WeightMatrix};
use crate::perf::{latency_ms, DvfsTable, PerfModel};

/// Binary `p x p` keep-pattern, row-major. Serialized as a string of `0`/`1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    p_size: usize,
    bits: Vec<bool>,
}

impl Pattern {
    pub fn new(p_size: usize, bits: Vec<bool>) -> Result<Self> {
        if p_size == 0 || bits.len() != p_size * p_size {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for a {p_size}x{p_size} pattern",
                bits.len()
            )));
        }
        Ok(Self { p_size, bits })
    }

    pub fn ones(p_size: usize) -> Self {
        Self {
            p_size,
            bits: vec![true; p_size * p_size],
        }
    }

    pub fn p_size(&self) -> usize {
        self.p_size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn keeps(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.p_size + v]
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.bits.len() as f64
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|b| if *b { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Serialization(format!(
                    "invalid pattern character {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let p = (bits.len() as f64).sqrt().round() as usize;
        Self::new(p, bits)
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Pattern::from_bit_string(&s).map_err(serde::de::Error::custom)
    }
}

/// Patterns sharing one sparsity ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet")]
pub struct PatternSet {
    sparsity: f64,
    p_size: usize,
    patterns: Vec<Pattern>,
}

#[derive(Deserialize)]
struct RawSet {
    sparsity: f64,
    p_size: usize,
    patterns: Vec<Pattern>,
}

impl TryFrom<RawSet> for PatternSet {
    type Error = Error;

    fn try_from(raw: RawSet) -> Result<Self> {
        PatternSet::new(raw.sparsity, raw.p_size, raw.patterns)
    }
}

/// Zero count a `p x p` pattern of sparsity `s` must have.
pub fn zeros_for(sparsity: f64, p_size: usize) -> usize {
    (sparsity * (p_size * p_size) as f64).round() as usize
}

impl PatternSet {
    pub fn new(sparsity: f64, p_size: usize, patterns: Vec<Pattern>) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::InvalidConfig(format!(
                "pattern sparsity {sparsity} outside [0, 1]"
            )));
        }
        if patterns.is_empty() {
            return Err(Error::InvalidConfig("pattern set is empty".into()));
        }
        let zeros = zeros_for(sparsity, p_size);
        for p in &patterns {
            if p.p_size != p_size {
                return Err(Error::ShapeMismatch(format!(
                    "pattern of size {} in a set of size {p_size}",
                    p.p_size
                )));
            }
            if p.zeros() != zeros {
                return Err(Error::InvalidConfig(format!(
                    "pattern has {} zeros, sparsity {sparsity} requires {zeros}",
                    p.zeros()
                )));
            }
        }
        let distinct: HashSet<&Pattern> = patterns.iter().collect();
        if distinct.len() != patterns.len() {
            return Err(Error::InvalidConfig("duplicate patterns in set".into()));
        }
        Ok(Self {
            sparsity,
            p_size,
            patterns,
        })
    }

    /// Single all-ones pattern: leaves the backbone untouched.
    pub fn identity(p_size: usize) -> Self {
        Self {
            sparsity: 0.0,
            p_size,
            patterns: vec![Pattern::ones(p_size)],
        }
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn p_size(&self) -> usize {
        self.p_size
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Set made of the given member indices; duplicates are dropped and the
    /// original member order is kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut picked: Vec<usize> = indices.to_vec();
        picked.sort_unstable();
        picked.dedup();
        if let Some(bad) = picked.iter().find(|i| **i >= self.patterns.len()) {
            return Err(Error::InvalidConfig(format!(
                "pattern index {bad} out of range for set of {}",
                self.patterns.len()
            )));
        }
        Self::new(
            self.sparsity,
            self.p_size,
            picked
                .into_iter()
                .map(|i| self.patterns[i].clone())
                .collect(),
        )
    }
}

/// Candidate pattern sparsities, strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityLadder {
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Ratios per level: the first meets `T`, the others meet tightened budgets.
    pub theta: usize,
    pub p_size: usize,
    /// Multiplicative latency-budget shrink per tightening step.
    pub tighten_step: f64,
    /// Highest pattern sparsity allowed; defaults to keeping one weight per tile.
    pub max_sparsity: Option<f64>,
    /// Zero fraction already removed by block pruning.
    pub backbone_sparsity: f64,
}

impl LadderConfig {
    pub fn new(theta: usize, p_size: usize) -> Self {
        Self {
            theta,
            p_size,
            tighten_step: 0.05,
            max_sparsity: None,
            backbone_sparsity: 0.0,
        }
    }

    fn max_sparsity(&self) -> f64 {
        self.max_sparsity.unwrap_or_else(|| {
            let cells = (self.p_size * self.p_size) as f64;
            (cells - 1.0) / cells
        })
    }
}

/// Smallest pattern sparsity on the `1/p^2` grid whose conservative latency at
/// `freq` meets `budget_ms`, or `None` if none up to `max_sparsity` does.
///
/// The estimate assumes pattern zeros land on already-pruned weights first, so
/// the combined sparsity is at least `max(backbone, pattern)`; the realized
/// latency of a deployed pattern is never above it.
fn minimal_sparsity(
    perf: &PerfModel,
    level: &crate::perf::VfLevel,
    budget_ms: f64,
    cfg: &LadderConfig,
) -> Option<f64> {
    let cells = (cfg.p_size * cfg.p_size) as f64;
    let estimate = |s: f64| {
        let eff = s.max(cfg.backbone_sparsity);
        let touched = if s > 0.0 { 1.0 } else { 0.0 };
        latency_ms(
            perf.base_cycles * (1.0 - eff) * (1.0 + perf.overhead_beta * touched),
            level,
        )
    };
    if estimate(0.0) <= budget_ms * (1.0 + 1e-12) {
        return Some(0.0);
    }
    // Closed form with full overhead, then snap up to the pattern grid.
    let needed =
        1.0 - budget_ms * level.freq_mhz * 1e3 / (perf.base_cycles * (1.0 + perf.overhead_beta));
    let mut k = ((needed * cells) - 1e-9).ceil().max(1.0);
    let max = cfg.max_sparsity();
    while k / cells <= max + 1e-12 {
        let s = k / cells;
        if estimate(s) <= budget_ms * (1.0 + 1e-12) {
            return Some(s);
        }
        k += 1.0;
    }
    None
}

/// Candidate sparsity ratios: for every level the minimal sparsity meeting `T`
/// and `theta - 1` more meeting progressively tighter budgets.
pub fn build_ladder(
    levels: &DvfsTable,
    t_ms: f64,
    perf: &PerfModel,
    cfg: &LadderConfig,
) -> Result<SparsityLadder> {
    if cfg.theta == 0 || cfg.p_size == 0 {
        return Err(Error::InvalidConfig("theta and p_size must be >= 1".into()));
    }
    if !(t_ms > 0.0) {
        return Err(Error::InvalidConfig("timing constraint must be > 0".into()));
    }
    if !(0.0..1.0).contains(&cfg.tighten_step) {
        return Err(Error::InvalidConfig(
            "tighten_step must be in [0, 1)".into(),
        ));
    }
    perf.validate()?;

    if minimal_sparsity(perf, levels.highest(), t_ms, cfg).is_none() {
        return Err(Error::Infeasible(format!(
            "{t_ms} ms cannot be met at {} even at sparsity {:.4}",
            levels.highest().name,
            cfg.max_sparsity()
        )));
    }

    let cells = (cfg.p_size * cfg.p_size) as f64;
    let mut grid_points: Vec<usize> = Vec::new();
    for level in levels.levels() {
        for step in 0..cfg.theta {
            let budget = t_ms * (1.0 - cfg.tighten_step).powi(step as i32);
            if let Some(s) = minimal_sparsity(perf, level, budget, cfg) {
                grid_points.push((s * cells).round() as usize);
            }
        }
    }
    grid_points.sort_unstable_by(|a, b| b.cmp(a));
    grid_points.dedup();
    Ok(SparsityLadder {
        ratios: grid_points.into_iter().map(|k| k as f64 / cells).collect(),
    })
}

/// All `p x p` tiles of the given matrices, in matrix order then row-major.
fn tiles(backbone: &[WeightMatrix], p_size: usize) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for (mi, m) in backbone.iter().enumerate() {
        let part = BlockPartition::square(m.rows(), m.cols(), p_size)?;
        out.extend(part.blocks().map(|b| (mi, b.row0, b.col0)));
    }
    Ok(out)
}

fn accumulate(
    backbone: &[WeightMatrix],
    tiles: &[(usize, usize, usize)],
    picked: &[usize],
    p_size: usize,
) -> Vec<f64> {
    let mut map = vec![0.0; p_size * p_size];
    for &t in picked {
        let (mi, r0, c0) = tiles[t];
        let m = &backbone[mi];
        for u in 0..p_size {
            for v in 0..p_size {
                map[u * p_size + v] += m.get(r0 + u, c0 + v).abs();
            }
        }
    }
    map
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut picked = sample(rng, n, n / 2).into_vec();
    picked.sort_unstable();
    picked
}

/// Importance of every pattern position: the point-wise sum of absolute
/// weights over `floor(n/2)` tiles drawn without replacement from the
/// (already masked) backbone matrices.
pub fn importance_map(backbone: &[WeightMatrix], p_size: usize, seed: u64) -> Result<Vec<f64>> {
    let tiles = tiles(backbone, p_size)?;
    if tiles.len() < 2 {
        return Err(Error::TooSmall {
            blocks: tiles.len(),
            p_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = draw_sample(&mut rng, tiles.len());
    Ok(accumulate(backbone, &tiles, &picked, p_size))
}

/// Zeroes the `round(s * p^2)` least important positions. Ties are pruned in
/// row-major order.
pub fn build_pattern(map: &[f64], p_size: usize, sparsity: f64) -> Result<Pattern> {
    if map.len() != p_size * p_size {
        return Err(Error::ShapeMismatch(format!(
            "importance map of {} entries for p_size {p_size}",
            map.len()
        )));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig(format!(
            "sparsity {sparsity} outside [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|a, b| map[*a].total_cmp(&map[*b]));
    let mut bits = vec![true; map.len()];
    for i in order.into_iter().take(zeros_for(sparsity, p_size)) {
        bits[i] = false;
    }
    Pattern::new(p_size, bits)
}

/// Up to `m` distinct patterns of sparsity `s`, each from a fresh tile sample.
///
/// Samples repeating an earlier tile subset are rejected, as are samples whose
/// pattern duplicates an existing one. After `32 * m` draws the set is returned
/// with however many distinct patterns exist (always at least one); at
/// `s = 0` or `s = 1` that is exactly one.
pub fn build_pattern_set(
    backbone: &[WeightMatrix],
    sparsity: f64,
    m: usize,
    p_size: usize,
    seed: u64,
) -> Result<PatternSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    let tiles = tiles(backbone, p_size)?;
    if tiles.len() < 2 {
        return Err(Error::TooSmall {
            blocks: tiles.len(),
            p_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen_samples: HashSet<Vec<usize>> = HashSet::new();
    let mut seen_patterns: HashSet<Pattern> = HashSet::new();
    let mut patterns = Vec::with_capacity(m);
    for _ in 0..32 * m {
        if patterns.len() == m {
            break;
        }
        let picked = draw_sample(&mut rng, tiles.len());
        if !seen_samples.insert(picked.clone()) {
            continue;
        }
        let map = accumulate(backbone, &tiles, &picked, p_size);
        let pattern = build_pattern(&map, p_size, sparsity)?;
        if seen_patterns.insert(pattern.clone()) {
            patterns.push(pattern);
        }
    }
    PatternSet::new(sparsity, p_size, patterns)
}

/// One pattern set per ladder ratio, seeded per position.
pub fn build_candidate_sets(
    backbone: &[WeightMatrix],
    ladder: &SparsityLadder,
    m: usize,
    p_size: usize,
    seed: u64,
) -> Result<Vec<PatternSet>> {
    ladder
        .ratios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            build_pattern_set(
                backbone,
                *s,
                m,
                p_size,
                seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)),
            )
        })
        .collect()
}
