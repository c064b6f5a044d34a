use proptest::prelude::*;
use rt3_core::matrix::{
    apply_mask, block_l2_norms, encode_block_sparse, encode_coo, is_block_regular, partition,
    sparsity, Axis,
};
use rt3_core::model::ToyModel;
use rt3_core::pruning::{bp_prune, bp_prune_model, BpConfig, Criterion, LayerPruneSpec, PruneAxis};
use rt3_core::{Mask, WeightMatrix};

/// Keep flags of one line set, computed directly from the definition.
fn oracle_line_keep(norms: &[f64], criterion: Criterion) -> Vec<bool> {
    match criterion {
        Criterion::Threshold(t) => norms.iter().map(|n| *n >= t).collect(),
        Criterion::Percentile(rho) => {
            let n = norms.len();
            let drop = ((rho * n as f64) + 1e-9).floor() as usize;
            let mut keep = vec![true; n];
            // Selection by repeated minimum; lower index wins ties.
            for _ in 0..drop.min(n) {
                let mut best: Option<usize> = None;
                for i in 0..n {
                    if keep[i] && best.is_none_or(|b| norms[i] < norms[b]) {
                        best = Some(i);
                    }
                }
                keep[best.unwrap()] = false;
            }
            keep
        }
    }
}

/// Brute-force block pruning over explicit index ranges.
fn oracle_mask(m: &WeightMatrix, k: usize, kp: usize, axis: PruneAxis, c: Criterion) -> Mask {
    let (rows, cols) = m.shape();
    let (bh, bw) = (rows / k, cols / kp);
    let mut keep = vec![vec![true; cols]; rows];
    let col_pass = |keep: &mut Vec<Vec<bool>>| {
        for br in 0..k {
            for bc in 0..kp {
                let norms: Vec<f64> = (0..bw)
                    .map(|j| {
                        (0..bh)
                            .map(|i| {
                                let (r, cc) = (br * bh + i, bc * bw + j);
                                let v = if keep[r][cc] { m.get(r, cc) } else { 0.0 };
                                v * v
                            })
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                for (j, kj) in oracle_line_keep(&norms, c).into_iter().enumerate() {
                    if !kj {
                        for i in 0..bh {
                            keep[br * bh + i][bc * bw + j] = false;
                        }
                    }
                }
            }
        }
    };
    let row_pass = |keep: &mut Vec<Vec<bool>>| {
        for br in 0..k {
            for bc in 0..kp {
                let norms: Vec<f64> = (0..bh)
                    .map(|i| {
                        (0..bw)
                            .map(|j| {
                                let (r, cc) = (br * bh + i, bc * bw + j);
                                let v = if keep[r][cc] { m.get(r, cc) } else { 0.0 };
                                v * v
                            })
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                for (i, ki) in oracle_line_keep(&norms, c).into_iter().enumerate() {
                    if !ki {
                        for j in 0..bw {
                            keep[br * bh + i][bc * bw + j] = false;
                        }
                    }
                }
            }
        }
    };
    match axis {
        PruneAxis::Column => col_pass(&mut keep),
        PruneAxis::Row => row_pass(&mut keep),
        PruneAxis::Both => {
            col_pass(&mut keep);
            row_pass(&mut keep);
        }
    }
    Mask::new(rows, cols, keep.into_iter().flatten().collect()).unwrap()
}

fn case() -> impl Strategy<Value = (WeightMatrix, usize, usize)> {
    (1usize..=5, 1usize..=5, 1usize..=4, 1usize..=4).prop_flat_map(|(k, kp, bh, bw)| {
        let (rows, cols) = (k * bh, kp * bw);
        proptest::collection::vec(
            prop_oneof![Just(0.0), -3.0f64..3.0, Just(1.0), Just(-1.0)],
            rows * cols,
        )
        .prop_map(move |data| (WeightMatrix::new(rows, cols, data).unwrap(), k, kp))
    })
}

fn axis() -> impl Strategy<Value = PruneAxis> {
    prop_oneof![
        Just(PruneAxis::Row),
        Just(PruneAxis::Column),
        Just(PruneAxis::Both)
    ]
}

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![
        (0.0f64..4.0).prop_map(Criterion::Threshold),
        (0.0f64..=1.0).prop_map(Criterion::Percentile),
        prop_oneof![Just(0.0), Just(0.25), Just(0.5), Just(1.0)].prop_map(Criterion::Percentile),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_brute_force((m, k, kp) in case(), axis in axis(), c in criterion()) {
        let part = partition(&m, k, kp).unwrap();
        let got = bp_prune(&m, &part, &BpConfig { axis, criterion: c }).unwrap();
        prop_assert_eq!(&got.mask, &oracle_mask(&m, k, kp, axis, c));
        prop_assert!(is_block_regular(&got.mask, &part));
        prop_assert_eq!(got.achieved_sparsity, sparsity(&got.mask));
    }

    #[test]
    fn threshold_monotone((m, k, kp) in case(), axis in axis(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let part = partition(&m, k, kp).unwrap();
        let run = |t| bp_prune(&m, &part, &BpConfig { axis, criterion: Criterion::Threshold(t) }).unwrap().mask;
        prop_assert!(run(hi).is_subset_of(&run(lo)));
    }

    #[test]
    fn deterministic((m, k, kp) in case(), axis in axis(), c in criterion()) {
        let part = partition(&m, k, kp).unwrap();
        let cfg = BpConfig { axis, criterion: c };
        prop_assert_eq!(bp_prune(&m, &part, &cfg).unwrap(), bp_prune(&m, &part, &cfg).unwrap());
    }

    #[test]
    fn storage_round_trips((m, k, kp) in case(), axis in axis(), c in criterion()) {
        let part = partition(&m, k, kp).unwrap();
        let mask = bp_prune(&m, &part, &BpConfig { axis, criterion: c }).unwrap().mask;
        let pruned = apply_mask(&m, &mask).unwrap();
        let coo = encode_coo(&pruned);
        prop_assert_eq!(coo.decode().unwrap(), pruned.clone());
        prop_assert_eq!(coo.index_bytes(), 8 * pruned.count_nonzero());
        let bsi = encode_block_sparse(&pruned, &part, &mask).unwrap();
        prop_assert_eq!(bsi.decode().unwrap(), pruned);
    }
}

#[test]
fn norms_match_double_loop() {
    let m = WeightMatrix::new(4, 6, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let part = partition(&m, 2, 3).unwrap();
    for block in part.blocks() {
        let cols = block_l2_norms(&m, &block, Axis::Column);
        let rows = block_l2_norms(&m, &block, Axis::Row);
        for (j, n) in cols.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..block.height {
                s += m.get(block.row0 + i, block.col0 + j).powi(2);
            }
            assert!((n - s.sqrt()).abs() < 1e-12);
        }
        for (i, n) in rows.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..block.width {
                s += m.get(block.row0 + i, block.col0 + j).powi(2);
            }
            assert!((n - s.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn block_index_smaller_than_coo_when_structured() {
    let m = WeightMatrix::new(8, 8, (0..64).map(|i| 1.0 + i as f64).collect()).unwrap();
    let part = partition(&m, 2, 1).unwrap();
    let cfg = BpConfig {
        axis: PruneAxis::Column,
        criterion: Criterion::Percentile(0.5),
    };
    let mask = bp_prune(&m, &part, &cfg).unwrap().mask;
    let pruned = apply_mask(&m, &mask).unwrap();
    let coo = encode_coo(&pruned);
    let bsi = encode_block_sparse(&pruned, &part, &mask).unwrap();
    assert!(bsi.index_bytes() < coo.index_bytes());
}

fn two_layer() -> ToyModel {
    ToyModel::random(&[8, 8, 4], 3).unwrap()
}

fn spec(rho: f64) -> LayerPruneSpec {
    LayerPruneSpec {
        row_blocks: 2,
        col_blocks: 1,
        config: BpConfig {
            axis: PruneAxis::Column,
            criterion: Criterion::Percentile(rho),
        },
    }
}

#[test]
fn model_half_percentile_sparsity() {
    let model = two_layer();
    let (backbone, reports) = bp_prune_model(&model, &[spec(0.5), spec(0.5)]).unwrap();
    for (r, layer) in reports.iter().zip(backbone.layers()) {
        // One line of slack per block.
        let line = 1.0 / layer.weights.cols() as f64;
        assert!((r.sparsity - 0.5).abs() <= line + 1e-12, "{}", r.sparsity);
        let part = partition(&layer.weights, 2, 1).unwrap();
        assert!(is_block_regular(&layer.bp_mask, &part));
    }
}

#[test]
fn model_zero_percentile_is_identity() {
    let model = two_layer();
    let (backbone, _) = bp_prune_model(&model, &[spec(0.0), spec(0.0)]).unwrap();
    let masks = model.bp_masks();
    for i in 0..20 {
        let x: Vec<f64> = (0..8).map(|j| ((i * 8 + j) as f64 * 0.3).cos()).collect();
        assert_eq!(
            model.predict(&masks, &x).unwrap(),
            backbone.predict(&backbone.bp_masks(), &x).unwrap()
        );
    }
}

#[test]
fn model_masks_survive_serialization() {
    let (backbone, _) = bp_prune_model(&two_layer(), &[spec(0.5), spec(0.25)]).unwrap();
    let json = serde_json::to_string(&backbone).unwrap();
    let back: ToyModel = serde_json::from_str(&json).unwrap();
    assert_eq!(back, backbone);
    let x = vec![0.5; 8];
    assert_eq!(
        back.predict(&back.bp_masks(), &x).unwrap(),
        backbone.predict(&backbone.bp_masks(), &x).unwrap()
    );
}
