//! Block-structured pruning: inside every block of a partition, whole rows or
//! columns whose l2 norm falls under a threshold (or into the lowest
//! percentile of the block) are removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    apply_mask, block_l2_norms, partition, sparsity, Axis, Block, BlockPartition, Mask,
    WeightMatrix,
};
use crate::model::ToyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneAxis {
    Row,
    Column,
    /// Columns first, then rows of the column-pruned block.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Prune lines with norm strictly below the threshold.
    Threshold(f64),
    /// Prune the `floor(rho * lines)` lowest-norm lines of each block.
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub axis: PruneAxis,
    pub criterion: Criterion,
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        match self.criterion {
            Criterion::Threshold(t) if !(t >= 0.0 && t.is_finite()) => Err(Error::InvalidConfig(
                format!("threshold must be finite and >= 0, got {t}"),
            )),
            Criterion::Percentile(rho) if !(0.0..=1.0).contains(&rho) => Err(Error::InvalidConfig(
                format!("percentile must lie in [0, 1], got {rho}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Kept block-local row and column indices of one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptLines {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpResult {
    pub mask: Mask,
    pub achieved_sparsity: f64,
    pub kept: Vec<KeptLines>,
}

/// Indices of the lines to prune given their norms.
fn lines_to_prune(norms: &[f64], criterion: Criterion) -> Vec<bool> {
    match criterion {
        Criterion::Threshold(t) => norms.iter().map(|n| *n < t).collect(),
        Criterion::Percentile(rho) => {
            let count = ((rho * norms.len() as f64) + 1e-9).floor() as usize;
            let mut order: Vec<usize> = (0..norms.len()).collect();
            // Stable sort keeps lower indices first among equal norms.
            order.sort_by(|a, b| norms[*a].total_cmp(&norms[*b]));
            let mut pruned = vec![false; norms.len()];
            for i in order.into_iter().take(count.min(norms.len())) {
                pruned[i] = true;
            }
            pruned
        }
    }
}

fn prune_block(matrix: &WeightMatrix, block: &Block, config: &BpConfig) -> KeptLines {
    let mut keep_rows = vec![true; block.height];
    let mut keep_cols = vec![true; block.width];

    if matches!(config.axis, PruneAxis::Column | PruneAxis::Both) {
        let norms = block_l2_norms(matrix, block, Axis::Column);
        for (keep, pruned) in keep_cols
            .iter_mut()
            .zip(lines_to_prune(&norms, config.criterion))
        {
            *keep = !pruned;
        }
    }
    if matches!(config.axis, PruneAxis::Row | PruneAxis::Both) {
        // Row norms are taken over the surviving columns only.
        let norms: Vec<f64> = (0..block.height)
            .map(|i| {
                (0..block.width)
                    .filter(|j| keep_cols[*j])
                    .map(|j| matrix.get(block.row0 + i, block.col0 + j).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for (keep, pruned) in keep_rows
            .iter_mut()
            .zip(lines_to_prune(&norms, config.criterion))
        {
            *keep = !pruned;
        }
    }

    let select = |flags: &[bool]| {
        flags
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| i)
            .collect()
    };
    KeptLines {
        rows: select(&keep_rows),
        cols: select(&keep_cols),
    }
}

/// Block-structured pruning of one matrix.
pub fn bp_prune(
    matrix: &WeightMatrix,
    partition: &BlockPartition,
    config: &BpConfig,
) -> Result<BpResult> {
    config.validate()?;
    if matrix.shape() != (partition.rows(), partition.cols()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", (partition.rows(), partition.cols())),
            actual: format!("{:?}", matrix.shape()),
        });
    }

    let mut mask = Mask::zeros(matrix.rows(), matrix.cols());
    let mut kept = Vec::with_capacity(partition.num_blocks());
    for block in partition.blocks() {
        let lines = prune_block(matrix, &block, config);
        for r in &lines.rows {
            for c in &lines.cols {
                mask.set(block.row0 + r, block.col0 + c, true);
            }
        }
        kept.push(lines);
    }
    Ok(BpResult {
        achieved_sparsity: sparsity(&mask),
        mask,
        kept,
    })
}

/// Per-layer pruning setup: block divisions plus the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPruneSpec {
    pub row_blocks: usize,
    pub col_blocks: usize,
    #[serde(flatten)]
    pub config: BpConfig,
}

/// Layer-level outcome of [`bp_prune_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPruneReport {
    pub layer: usize,
    pub blocks: usize,
    pub sparsity: f64,
}

/// Prunes every layer of `model` and returns the backbone. Pruned weights are
/// zeroed and the layer mask records the pruning decision.
pub fn bp_prune_model(
    model: &ToyModel,
    specs: &[LayerPruneSpec],
) -> Result<(ToyModel, Vec<LayerPruneReport>)> {
    if specs.len() != model.layers().len() {
        return Err(Error::InvalidConfig(format!(
            "{} prune specs for {} layers",
            specs.len(),
            model.layers().len()
        )));
    }
    let mut backbone = model.clone();
    let mut reports = Vec::with_capacity(specs.len());
    for (i, (layer, spec)) in backbone.layers_mut().iter_mut().zip(specs).enumerate() {
        let part = partition(&layer.weights, spec.row_blocks, spec.col_blocks)?;
        let result = bp_prune(&layer.weights, &part, &spec.config)?;
        let mask = layer.bp_mask.and(&result.mask)?;
        layer.weights = apply_mask(&layer.weights, &mask)?;
        reports.push(LayerPruneReport {
            layer: i,
            blocks: part.num_blocks(),
            sparsity: sparsity(&mask),
        });
        layer.bp_mask = mask;
    }
    Ok((backbone, reports))
}
