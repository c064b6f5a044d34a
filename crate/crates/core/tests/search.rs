use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rt3_core::controller::{Baseline, Controller, ControllerSpec, SampleMode};
use rt3_core::search::{enumerate_configurations, pareto_points, Configuration, ParetoPoint};

fn spec(levels: usize, k: usize, sizes: &[usize]) -> ControllerSpec {
    ControllerSpec {
        levels,
        patterns_per_level: k,
        set_sizes: sizes.to_vec(),
    }
}

fn valid_actions(spec: &ControllerSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut a = Vec::new();
    for t in 0..spec.num_steps() {
        let n = spec.valid_options(t, &a);
        a.push(rng.random_range(0..n));
    }
    a
}

#[test]
fn log_prob_gradient_matches_finite_differences() {
    let sp = spec(2, 2, &[3, 2, 4]);
    let mut c = Controller::new(sp.clone(), 5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params: Vec<f64> = c
        .params()
        .iter()
        .map(|p| p + rng.random_range(-0.5..0.5))
        .collect();
    c.set_params(&params).unwrap();
    for _ in 0..4 {
        let actions = valid_actions(&sp, &mut rng);
        let (lp, g) = c.log_prob_grad(&actions).unwrap();
        assert!((lp - c.log_prob(&actions).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            c.set_params(&p).unwrap();
            let up = c.log_prob(&actions).unwrap();
            p[i] -= 2.0 * h;
            c.set_params(&p).unwrap();
            let down = c.log_prob(&actions).unwrap();
            let num = (up - down) / (2.0 * h);
            let scale = g[i].abs().max(num.abs());
            let err = if scale < 1e-7 {
                (g[i] - num).abs()
            } else {
                (g[i] - num).abs() / scale
            };
            assert!(err < 1e-5, "param {i}: {} vs {num}", g[i]);
        }
        c.set_params(&params).unwrap();
    }
}

#[test]
fn fresh_controller_samples_uniformly() {
    let sp = spec(1, 1, &[4, 4, 4]);
    let c = Controller::new(sp, 8, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 6000;
    let mut sets = [0usize; 3];
    let mut members = [0usize; 4];
    for _ in 0..n {
        let t = c.sample(&mut rng, SampleMode::Stochastic);
        sets[t.actions[0]] += 1;
        members[t.actions[1]] += 1;
    }
    let chi2 = |counts: &[usize]| {
        let e = n as f64 / counts.len() as f64;
        counts
            .iter()
            .map(|&o| (o as f64 - e).powi(2) / e)
            .sum::<f64>()
    };
    // 0.999 quantiles for 2 and 3 degrees of freedom.
    assert!(chi2(&sets) < 13.82, "{sets:?}");
    assert!(chi2(&members) < 16.27, "{members:?}");
}

#[test]
fn reinforce_finds_the_rewarded_arm() {
    let sp = spec(1, 0, &[1; 5]);
    let mut c = Controller::new(sp, 8, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut baseline = Baseline::new(0.9);
    for _ in 0..150 {
        let batch: Vec<(Vec<usize>, f64)> = (0..4)
            .map(|_| {
                let t = c.sample(&mut rng, SampleMode::Stochastic);
                let r = if t.actions[0] == 3 { 1.0 } else { 0.0 };
                (t.actions, r)
            })
            .collect();
        let mean = batch.iter().map(|b| b.1).sum::<f64>() / 4.0;
        c.reinforce_update(&batch, baseline.get_or(mean), 0.5)
            .unwrap();
        for b in &batch {
            baseline.observe(b.1);
        }
    }
    assert_eq!(c.sample(&mut rng, SampleMode::Greedy).actions, vec![3]);
    assert!(c.step_probabilities(&[3]).unwrap()[0][3] > 0.9);
}

#[test]
fn enumeration_counts_distinct_configurations() {
    // One level, K = 2, sets of sizes 3 and 1: set 0 gives C(3,1)+C(3,2) = 6
    // distinct member sets, set 1 gives 1.
    let configs = enumerate_configurations(&spec(1, 2, &[3, 1]));
    assert_eq!(configs.len(), 7);
    // Two levels multiply.
    assert_eq!(enumerate_configurations(&spec(2, 2, &[3, 1])).len(), 49);
    assert_eq!(enumerate_configurations(&spec(3, 0, &[1; 4])).len(), 64);
    let c = Configuration::from_actions(&spec(1, 3, &[4]), &[0, 2, 0, 2]);
    assert_eq!(c.choices[0].patterns, vec![0, 2]);
}

fn points() -> impl Strategy<Value = Vec<ParetoPoint>> {
    proptest::collection::vec((0u8..6, 0u64..6), 0..25).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(episode, (a, runs))| ParetoPoint {
                a_w: a as f64 / 5.0,
                runs,
                episode,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn frontier_is_exactly_the_non_dominated_set(pts in points()) {
        let front = pareto_points(&pts);
        let mut oracle: Vec<(u64, u64)> = Vec::new();
        for p in &pts {
            let beaten = pts.iter().any(|q| {
                q.a_w >= p.a_w && q.runs >= p.runs && (q.a_w > p.a_w || q.runs > p.runs)
            });
            let key = (p.a_w.to_bits(), p.runs);
            if !beaten && !oracle.contains(&key) {
                oracle.push(key);
            }
        }
        let mut got: Vec<(u64, u64)> = front.iter().map(|p| (p.a_w.to_bits(), p.runs)).collect();
        got.sort_unstable();
        oracle.sort_unstable();
        prop_assert_eq!(got, oracle);
        prop_assert!(front.windows(2).all(|w| w[0].a_w < w[1].a_w && w[0].runs > w[1].runs));
        for f in &front {
            let first = pts.iter().find(|p| p.a_w == f.a_w && p.runs == f.runs).unwrap();
            prop_assert_eq!(first.episode, f.episode);
        }
    }
}
