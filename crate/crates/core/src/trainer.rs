//! Pattern assignment and joint training of the shared backbone under several
//! pattern sets at once.
//!
//! Each layer is tiled into `p x p` blocks; every block gets the member of the
//! active set that keeps the most l2 energy of the (block-pruned) weights. A
//! training step sums `alpha_i * loss_i` over all sets and applies a single SGD
//! update to the one shared weight store.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::{BlockPartition, Mask};
use crate::model::{argmax, Gradients, ToyModel};
use crate::pattern::{Pattern, PatternSet};
use crate::perf::SparsityStats;

/// Chosen member index for every tile of every layer (row-major tiles).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternAssignment {
    pub p_size: usize,
    pub layers: Vec<Vec<usize>>,
}

fn layer_tiling(model: &ToyModel, p_size: usize) -> Result<Vec<BlockPartition>> {
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            BlockPartition::square(l.outputs(), l.inputs(), p_size)
                .map_err(|_| Error::ShapeMismatch(format!("layer {i} is not tileable by {p_size}")))
        })
        .collect()
}

/// Index of the pattern keeping the largest l2 norm of `tile` (row-major
/// `p x p`); ties go to the lowest index.
pub fn best_pattern(tile: &[f64], patterns: &[Pattern]) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (qi, q) in patterns.iter().enumerate() {
        let energy: f64 = tile
            .iter()
            .zip(q.bits())
            .filter(|(_, keep)| **keep)
            .map(|(w, _)| w * w)
            .sum();
        if energy > best.1 {
            best = (qi, energy);
        }
    }
    best.0
}

/// For every tile `B`, the index `q` maximizing `||B ⊙ q||_2`; ties go to the
/// lowest index.
pub fn assign_patterns(model: &ToyModel, set: &PatternSet) -> Result<PatternAssignment> {
    let p = set.p_size();
    let tilings = layer_tiling(model, p)?;
    let layers = model
        .layers()
        .iter()
        .zip(&tilings)
        .map(|(layer, part)| {
            part.blocks()
                .map(|b| {
                    let mut tile = vec![0.0; p * p];
                    for u in 0..p {
                        for v in 0..p {
                            let (r, c) = (b.row0 + u, b.col0 + v);
                            if layer.bp_mask.get(r, c) {
                                tile[u * p + v] = layer.weights.get(r, c);
                            }
                        }
                    }
                    best_pattern(&tile, set.patterns())
                })
                .collect()
        })
        .collect();
    Ok(PatternAssignment { p_size: p, layers })
}

/// How the backbone is masked for a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Masking<'a> {
    /// Block-pruning masks only.
    Backbone,
    Patterns {
        set: &'a PatternSet,
        assignment: &'a PatternAssignment,
    },
}

/// Per-layer `bp_mask AND tiled pattern mask`.
pub fn combined_masks(model: &ToyModel, masking: Masking<'_>) -> Result<Vec<Mask>> {
    let (set, assignment) = match masking {
        Masking::Backbone => return Ok(model.bp_masks()),
        Masking::Patterns { set, assignment } => (set, assignment),
    };
    let p = set.p_size();
    if assignment.p_size != p || assignment.layers.len() != model.layers().len() {
        return Err(Error::ShapeMismatch(
            "assignment does not match pattern set or model".into(),
        ));
    }
    let tilings = layer_tiling(model, p)?;
    model
        .layers()
        .iter()
        .zip(&tilings)
        .zip(&assignment.layers)
        .map(|((layer, part), chosen)| {
            if chosen.len() != part.num_blocks() {
                return Err(Error::ShapeMismatch(format!(
                    "{} assignments for {} tiles",
                    chosen.len(),
                    part.num_blocks()
                )));
            }
            let mut mask = layer.bp_mask.clone();
            for (b, qi) in part.blocks().zip(chosen) {
                let q = set.patterns().get(*qi).ok_or_else(|| {
                    Error::ShapeMismatch(format!("pattern index {qi} outside set"))
                })?;
                for u in 0..p {
                    for v in 0..p {
                        if !q.keeps(u, v) {
                            mask.set(b.row0 + u, b.col0 + v, false);
                        }
                    }
                }
            }
            Ok(mask)
        })
        .collect()
}

/// Realized sparsity of a configuration, for cycle prediction.
pub fn sparsity_stats(model: &ToyModel, masking: Masking<'_>) -> Result<SparsityStats> {
    let masks = combined_masks(model, masking)?;
    let total: usize = masks.iter().map(|m| m.bits().len()).sum();
    let zeros: usize = masks.iter().map(|m| m.count_zeros()).sum();
    let touched_fraction = match masking {
        Masking::Backbone => 0.0,
        Masking::Patterns { set, assignment } => {
            let tiles: usize = assignment.layers.iter().map(Vec::len).sum();
            let touched = assignment
                .layers
                .iter()
                .flatten()
                .filter(|qi| set.patterns()[**qi].zeros() > 0)
                .count();
            if tiles == 0 {
                0.0
            } else {
                touched as f64 / tiles as f64
            }
        }
    };
    Ok(SparsityStats {
        effective_sparsity: zeros as f64 / total.max(1) as f64,
        touched_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probabilities: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub loss: f64,
}

/// Predictions and mean cross-entropy under `W ⊙ bp_mask ⊙ pattern`.
pub fn forward_masked(
    model: &ToyModel,
    masking: Masking<'_>,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<ForwardOutput> {
    let masks = combined_masks(model, masking)?;
    let mut probabilities = Vec::with_capacity(inputs.len());
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let p = model.predict(&masks, x)?;
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        probabilities.push(p);
    }
    let predictions = probabilities.iter().map(|p| argmax(p)).collect();
    Ok(ForwardOutput {
        probabilities,
        predictions,
        loss: loss / inputs.len().max(1) as f64,
    })
}

/// `sum_i alpha_i * loss_i` and its gradient, with no normalization of the
/// weights.
pub fn weighted_loss_and_grad(
    model: &ToyModel,
    masks_per_set: &[Vec<Mask>],
    alphas: &[f64],
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    if masks_per_set.len() != alphas.len() {
        return Err(Error::InvalidConfig(format!(
            "{} loss weights for {} pattern sets",
            alphas.len(),
            masks_per_set.len()
        )));
    }
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (masks, alpha) in masks_per_set.iter().zip(alphas) {
        let (l, g) = model.loss_and_grad(masks, inputs, labels)?;
        loss += alpha * l;
        total.add_scaled(&g, *alpha);
    }
    Ok((loss, total))
}

/// Fraction of correct predictions on `split`.
pub fn evaluate_accuracy(model: &ToyModel, masking: Masking<'_>, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let out = forward_masked(model, masking, &split.inputs, &split.labels)?;
    let correct = out
        .predictions
        .iter()
        .zip(&split.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / split.len() as f64)
}

/// Accuracy under the set's own assignment, recomputed for the current weights.
pub fn evaluate_set_accuracy(model: &ToyModel, set: &PatternSet, split: &Split) -> Result<f64> {
    let assignment = assign_patterns(model, set)?;
    evaluate_accuracy(
        model,
        Masking::Patterns {
            set,
            assignment: &assignment,
        },
        split,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrainConfig {
    pub epochs: usize,
    /// One weight per pattern set; `None` means uniform.
    pub loss_weights: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            loss_weights: None,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl JointTrainConfig {
    /// Loss weights for `n` sets, validated to be non-negative and sum to one.
    pub fn alphas(&self, n: usize) -> Result<Vec<f64>> {
        let alphas = match &self.loss_weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => w.clone(),
        };
        if alphas.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} loss weights for {n} pattern sets",
                alphas.len()
            )));
        }
        if alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "loss weights sum to {sum}, expected 1"
            )));
        }
        Ok(alphas)
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rate must be > 0 and batch size >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean accumulated loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Hold-out accuracy per pattern set after training.
    pub accuracies: Vec<f64>,
    /// Final assignment per pattern set.
    pub assignments: Vec<PatternAssignment>,
}

/// Trains the shared backbone in place under all `sets`. Assignments are
/// recomputed at the start of every epoch.
pub fn joint_train(
    model: &mut ToyModel,
    sets: &[PatternSet],
    config: &JointTrainConfig,
    data: &Dataset,
) -> Result<TrainReport> {
    if sets.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one pattern set required".into(),
        ));
    }
    config.validate()?;
    let alphas = config.alphas(sets.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let assignments = sets
            .iter()
            .map(|s| assign_patterns(model, s))
            .collect::<Result<Vec<_>>>()?;
        let masks = sets
            .iter()
            .zip(&assignments)
            .map(|(set, assignment)| combined_masks(model, Masking::Patterns { set, assignment }))
            .collect::<Result<Vec<_>>>()?;

        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<Vec<f64>> = chunk
                .iter()
                .map(|i| data.train.inputs[*i].clone())
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|i| data.train.labels[*i]).collect();
            let (loss, grads) = weighted_loss_and_grad(model, &masks, &alphas, &inputs, &labels)?;
            if !loss.is_finite() || !model.apply_gradients(&grads, config.learning_rate) {
                return Err(Error::DivergenceDetected { epoch, batch: bi });
            }
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }

    let assignments = sets
        .iter()
        .map(|s| assign_patterns(model, s))
        .collect::<Result<Vec<_>>>()?;
    let accuracies = sets
        .iter()
        .zip(&assignments)
        .map(|(set, assignment)| {
            evaluate_accuracy(model, Masking::Patterns { set, assignment }, &data.holdout)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainReport {
        epoch_losses,
        accuracies,
        assignments,
    })
}

/// Plain training of the backbone under its block-pruning masks only.
pub fn train_backbone(
    model: &mut ToyModel,
    config: &JointTrainConfig,
    data: &Dataset,
) -> Result<TrainReport> {
    let p = model
        .layers()
        .iter()
        .map(|l| gcd(l.inputs(), l.outputs()))
        .fold(0, gcd);
    let identity = PatternSet::identity(p.max(1));
    let cfg = JointTrainConfig {
        loss_weights: None,
        ..config.clone()
    };
    joint_train(model, std::slice::from_ref(&identity), &cfg, data)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
