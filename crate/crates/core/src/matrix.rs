//! Dense weight matrices, block partitions, binary masks and the two sparse
//! index formats (coordinate list and block-row/column lists).
//!
//! Storage is row-major throughout. Index byte accounting uses a fixed model of
//! [`INDEX_BYTES`] per stored index and [`VALUE_BYTES`] per stored value; the
//! numbers are only meant for comparing formats against each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes charged per stored row or column index.
pub const INDEX_BYTES: usize = 4;
/// Bytes charged per stored value.
pub const VALUE_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for WeightMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        WeightMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite value at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: format!("rows of length {cols}"),
                actual: format!("row of length {}", bad.len()),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Sets one element. Non-finite values are rejected by debug assertion only;
    /// callers on the training path check for divergence themselves.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[r * self.cols + c] = v;
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Copies the sub-matrix covered by `block`.
    pub fn block(&self, block: &Block) -> WeightMatrix {
        let mut data = Vec::with_capacity(block.height * block.width);
        for r in block.row0..block.row0 + block.height {
            let start = r * self.cols + block.col0;
            data.extend_from_slice(&self.data[start..start + block.width]);
        }
        WeightMatrix {
            rows: block.height,
            cols: block.width,
            data,
        }
    }
}

/// Which line of a block a norm or pruning decision refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

/// One rectangular block of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub block_row: usize,
    pub block_col: usize,
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl Block {
    pub fn lines(&self, axis: Axis) -> usize {
        match axis {
            Axis::Row => self.height,
            Axis::Column => self.width,
        }
    }
}

/// Division of a `rows x cols` matrix into `row_blocks x col_blocks` equal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    rows: usize,
    cols: usize,
    row_blocks: usize,
    col_blocks: usize,
}

impl BlockPartition {
    pub fn new(rows: usize, cols: usize, row_blocks: usize, col_blocks: usize) -> Result<Self> {
        if row_blocks == 0 || col_blocks == 0 {
            return Err(Error::InvalidConfig(
                "block divisions must be at least 1".into(),
            ));
        }
        if !rows.is_multiple_of(row_blocks) {
            return Err(Error::NonDivisible {
                dim: "rows",
                len: rows,
                parts: row_blocks,
            });
        }
        if !cols.is_multiple_of(col_blocks) {
            return Err(Error::NonDivisible {
                dim: "cols",
                len: cols,
                parts: col_blocks,
            });
        }
        Ok(Self {
            rows,
            cols,
            row_blocks,
            col_blocks,
        })
    }

    /// Partition into square `p x p` tiles.
    pub fn square(rows: usize, cols: usize, p: usize) -> Result<Self> {
        if p == 0 || !rows.is_multiple_of(p) || !cols.is_multiple_of(p) {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} is not tileable by {p}x{p}"
            )));
        }
        Self::new(rows, cols, rows / p, cols / p)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn col_blocks(&self) -> usize {
        self.col_blocks
    }

    pub fn block_height(&self) -> usize {
        self.rows / self.row_blocks
    }

    pub fn block_width(&self) -> usize {
        self.cols / self.col_blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.row_blocks * self.col_blocks
    }

    /// Block by linear index, row-major over the block grid.
    pub fn block(&self, index: usize) -> Block {
        let block_row = index / self.col_blocks;
        let block_col = index % self.col_blocks;
        Block {
            block_row,
            block_col,
            row0: block_row * self.block_height(),
            col0: block_col * self.block_width(),
            height: self.block_height(),
            width: self.block_width(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        (0..self.num_blocks()).map(move |i| self.block(i))
    }

    /// Linear index of the block containing element `(r, c)`.
    pub fn block_of(&self, r: usize, c: usize) -> usize {
        (r / self.block_height()) * self.col_blocks + c / self.block_width()
    }
}

/// Splits `matrix` into `k` row-wise and `k_prime` column-wise blocks.
/// Non-divisible sizes are rejected rather than padded.
pub fn partition(matrix: &WeightMatrix, k: usize, k_prime: usize) -> Result<BlockPartition> {
    BlockPartition::new(matrix.rows(), matrix.cols(), k, k_prime)
}

/// Binary keep/prune mask. `true` means the weight is kept.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bits for {rows}x{cols}", rows * cols),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        self.bits[r * self.cols + c] = keep;
    }

    pub fn count_kept(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.len() - self.count_kept()
    }

    /// Element-wise AND of two equally shaped masks.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.shape()),
                actual: format!("{:?}", other.shape()),
            });
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            bits,
        })
    }

    /// True when every bit kept here is also kept in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    fn to_runs(&self) -> (bool, Vec<usize>) {
        let start = self.bits.first().copied().unwrap_or(true);
        let mut runs = Vec::new();
        let mut current = start;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        (start, runs)
    }
}

/// On-disk mask form: alternating run lengths starting with bit `start`.
#[derive(Serialize, Deserialize)]
struct RleMask {
    rows: usize,
    cols: usize,
    start: u8,
    runs: Vec<usize>,
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (start, runs) = self.to_runs();
        RleMask {
            rows: self.rows,
            cols: self.cols,
            start: start as u8,
            runs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rle = RleMask::deserialize(d)?;
        let mut bits = Vec::with_capacity(rle.rows * rle.cols);
        let mut bit = match rle.start {
            0 => false,
            1 => true,
            other => {
                return Err(serde::de::Error::custom(format!(
                    "mask start bit must be 0 or 1, got {other}"
                )))
            }
        };
        for run in rle.runs {
            bits.extend(std::iter::repeat_n(bit, run));
            bit = !bit;
        }
        Mask::new(rle.rows, rle.cols, bits).map_err(serde::de::Error::custom)
    }
}

/// Fraction of pruned entries.
pub fn sparsity(mask: &Mask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.count_zeros() as f64 / mask.bits.len() as f64
}

/// `out[i,j] = matrix[i,j] * mask[i,j]`.
pub fn apply_mask(matrix: &WeightMatrix, mask: &Mask) -> Result<WeightMatrix> {
    if matrix.shape() != mask.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", matrix.shape()),
            actual: format!("{:?}", mask.shape()),
        });
    }
    let data = matrix
        .data
        .iter()
        .zip(&mask.bits)
        .map(|(v, keep)| if *keep { *v } else { 0.0 })
        .collect();
    Ok(WeightMatrix {
        rows: matrix.rows,
        cols: matrix.cols,
        data,
    })
}

/// l2 norm of every row (`Axis::Row`) or column (`Axis::Column`) of `block`
/// within `matrix`.
pub fn block_l2_norms(matrix: &WeightMatrix, block: &Block, axis: Axis) -> Vec<f64> {
    let mut sums = vec![0.0; block.lines(axis)];
    for i in 0..block.height {
        for j in 0..block.width {
            let v = matrix.get(block.row0 + i, block.col0 + j);
            let line = match axis {
                Axis::Row => i,
                Axis::Column => j,
            };
            sums[line] += v * v;
        }
    }
    sums.into_iter().map(f64::sqrt).collect()
}

/// Coordinate-list encoding of the nonzeros of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooIndex {
    pub rows: usize,
    pub cols: usize,
    pub row: Vec<u32>,
    pub col: Vec<u32>,
    pub data: Vec<f64>,
}

impl CooIndex {
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn index_bytes(&self) -> usize {
        (self.row.len() + self.col.len()) * INDEX_BYTES
    }

    pub fn storage_bytes(&self) -> usize {
        self.index_bytes() + self.data.len() * VALUE_BYTES
    }

    pub fn decode(&self) -> Result<WeightMatrix> {
        if self.row.len() != self.data.len() || self.col.len() != self.data.len() {
            return Err(Error::InvalidMatrix("COO vectors differ in length".into()));
        }
        let mut out = WeightMatrix::zeros(self.rows, self.cols);
        for ((r, c), v) in self.row.iter().zip(&self.col).zip(&self.data) {
            let (r, c) = (*r as usize, *c as usize);
            if r >= self.rows || c >= self.cols {
                return Err(Error::InvalidMatrix(format!(
                    "COO entry ({r}, {c}) outside {}x{}",
                    self.rows, self.cols
                )));
            }
            out.set(r, c, *v);
        }
        Ok(out)
    }
}

pub fn encode_coo(matrix: &WeightMatrix) -> CooIndex {
    let mut coo = CooIndex {
        rows: matrix.rows(),
        cols: matrix.cols(),
        row: Vec::new(),
        col: Vec::new(),
        data: Vec::new(),
    };
    for r in 0..matrix.rows() {
        for c in 0..matrix.cols() {
            let v = matrix.get(r, c);
            if v != 0.0 {
                coo.row.push(r as u32);
                coo.col.push(c as u32);
                coo.data.push(v);
            }
        }
    }
    coo
}

/// Kept lines of one block: either every line (no indices stored) or an
/// explicit list of block-local indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineSet {
    All,
    Only(Vec<u32>),
}

impl LineSet {
    fn from_flags(flags: &[bool]) -> Self {
        if flags.iter().all(|f| *f) {
            LineSet::All
        } else {
            LineSet::Only(
                flags
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f)
                    .map(|(i, _)| i as u32)
                    .collect(),
            )
        }
    }

    fn stored_indices(&self) -> usize {
        match self {
            LineSet::All => 0,
            LineSet::Only(v) => v.len(),
        }
    }

    fn resolve(&self, n: usize) -> Vec<usize> {
        match self {
            LineSet::All => (0..n).collect(),
            LineSet::Only(v) => v.iter().map(|i| *i as usize).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub kept_rows: LineSet,
    pub kept_cols: LineSet,
    /// Kept values, row-major over `kept_rows x kept_cols`.
    pub values: Vec<f64>,
}

/// Block-structured index: per block, the kept row/column lists and the packed
/// kept values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSparseIndex {
    pub partition: BlockPartition,
    pub blocks: Vec<BlockEntry>,
}

impl BlockSparseIndex {
    pub fn index_bytes(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.kept_rows.stored_indices() + b.kept_cols.stored_indices())
            .sum::<usize>()
            * INDEX_BYTES
    }

    pub fn storage_bytes(&self) -> usize {
        self.index_bytes() + self.blocks.iter().map(|b| b.values.len()).sum::<usize>() * VALUE_BYTES
    }

    pub fn decode(&self) -> Result<WeightMatrix> {
        let p = &self.partition;
        if self.blocks.len() != p.num_blocks() {
            return Err(Error::InvalidMatrix(format!(
                "{} block entries for {} blocks",
                self.blocks.len(),
                p.num_blocks()
            )));
        }
        let mut out = WeightMatrix::zeros(p.rows(), p.cols());
        for (entry, block) in self.blocks.iter().zip(p.blocks()) {
            let rows = entry.kept_rows.resolve(block.height);
            let cols = entry.kept_cols.resolve(block.width);
            if rows.len() * cols.len() != entry.values.len()
                || rows.iter().any(|r| *r >= block.height)
                || cols.iter().any(|c| *c >= block.width)
            {
                return Err(Error::InvalidMatrix(format!(
                    "malformed entry for block ({}, {})",
                    block.block_row, block.block_col
                )));
            }
            let mut values = entry.values.iter();
            for r in &rows {
                for c in &cols {
                    out.set(block.row0 + r, block.col0 + c, *values.next().unwrap());
                }
            }
        }
        Ok(out)
    }
}

/// Kept-row and kept-column flags of every block, or `NotBlockRegular` if some
/// block's mask is not the outer product of its row and column flags.
#[allow(clippy::needless_range_loop)]
pub fn block_line_flags(
    mask: &Mask,
    partition: &BlockPartition,
) -> Result<Vec<(Vec<bool>, Vec<bool>)>> {
    if mask.shape() != (partition.rows(), partition.cols()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", (partition.rows(), partition.cols())),
            actual: format!("{:?}", mask.shape()),
        });
    }
    partition
        .blocks()
        .map(|b| {
            let mut rows = vec![false; b.height];
            let mut cols = vec![false; b.width];
            for i in 0..b.height {
                for j in 0..b.width {
                    if mask.get(b.row0 + i, b.col0 + j) {
                        rows[i] = true;
                        cols[j] = true;
                    }
                }
            }
            for i in 0..b.height {
                for j in 0..b.width {
                    if mask.get(b.row0 + i, b.col0 + j) != (rows[i] && cols[j]) {
                        return Err(Error::NotBlockRegular {
                            block_row: b.block_row,
                            block_col: b.block_col,
                        });
                    }
                }
            }
            Ok((rows, cols))
        })
        .collect()
}

pub fn is_block_regular(mask: &Mask, partition: &BlockPartition) -> bool {
    block_line_flags(mask, partition).is_ok()
}

/// Encodes `matrix ⊙ mask` block by block. Every kept position is stored,
/// including kept weights whose value happens to be zero.
pub fn encode_block_sparse(
    matrix: &WeightMatrix,
    partition: &BlockPartition,
    mask: &Mask,
) -> Result<BlockSparseIndex> {
    if matrix.shape() != (partition.rows(), partition.cols()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", (partition.rows(), partition.cols())),
            actual: format!("{:?}", matrix.shape()),
        });
    }
    let flags = block_line_flags(mask, partition)?;
    let blocks = partition
        .blocks()
        .zip(flags)
        .map(|(b, (rows, cols))| {
            let (kept_rows, kept_cols) = if rows.iter().any(|f| *f) {
                (LineSet::from_flags(&rows), LineSet::from_flags(&cols))
            } else {
                (LineSet::Only(Vec::new()), LineSet::Only(Vec::new()))
            };
            let mut values = Vec::new();
            for r in kept_rows.resolve(b.height) {
                for c in kept_cols.resolve(b.width) {
                    values.push(matrix.get(b.row0 + r, b.col0 + c));
                }
            }
            BlockEntry {
                kept_rows,
                kept_cols,
                values,
            }
        })
        .collect();
    Ok(BlockSparseIndex {
        partition: *partition,
        blocks,
    })
}

/// `y = W x` for a single input vector.
pub fn matvec(matrix: &WeightMatrix, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), matrix.cols());
    matrix
        .data
        .chunks_exact(matrix.cols.max(1))
        .take(matrix.rows)
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

/// Reference masked product `(W ⊙ M) x` without materializing the masked matrix.
pub fn masked_matvec(matrix: &WeightMatrix, mask: &Mask, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(matrix.shape(), mask.shape());
    (0..matrix.rows())
        .map(|r| {
            (0..matrix.cols())
                .filter(|c| mask.get(r, *c))
                .map(|c| matrix.get(r, c) * x[c])
                .sum()
        })
        .collect()
}
