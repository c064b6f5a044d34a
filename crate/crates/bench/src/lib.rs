//! Fixtures shared by the criterion benchmarks.

use rt3_core::WeightMatrix;

/// Deterministic pseudo-random matrix (xorshift), values in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let data = (0..rows * cols)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    WeightMatrix::new(rows, cols, data).expect("finite values")
}
