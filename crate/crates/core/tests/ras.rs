mod common;

use common::{flag_combos, question_oracle, random_features, random_ras, rng, run_ras};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rasnet::ras::{affinity, temporal_kernel, RasConfig};

#[test]
fn matches_double_loop_for_every_flag_combination() {
    let mut r = rng(1);
    for (c, cfg) in flag_combos(3, 4.0).into_iter().enumerate() {
        for trial in 0..20 {
            let m = r.random_range(1..=8);
            let d = r.random_range(1..=16);
            let (ras, store) = random_ras(cfg.clone(), d, 1000 * c as u64 + trial, 0.5);
            let f = random_features(&mut r, m, d);
            let positions: Vec<usize> = (1..=m).collect();
            let got = run_ras(&ras, &store, &f, &positions);
            let want = question_oracle(&ras, &store, &f, &positions);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{cfg:?} m={m} d={d}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn fresh_module_is_plain_average() {
    // Ω starts at zero, so every block passes its input through.
    let mut r = rng(2);
    let mut store = rasnet::params::ParameterStore::new();
    let ras = rasnet::ras::Ras::new(RasConfig::default(), 4, &mut store, &mut r).unwrap();
    let f = vec![vec![1.0, 2.0, 3.0, 4.0], vec![3.0, 2.0, 1.0, 0.0]];
    assert_eq!(run_ras(&ras, &store, &f, &[1, 2]), vec![2.0, 2.0, 2.0, 2.0]);
}

#[test]
fn affinity_matches_block_weights() {
    let mut r = rng(3);
    let d = 3;
    let (ras, store) = random_ras(
        RasConfig {
            blocks: 1,
            ..RasConfig::default()
        },
        d,
        4,
        0.5,
    );
    let f = random_features(&mut r, 2, d);
    let (psi, phi) = ras.embeddings(1);
    let t = |v: &Vec<f64>| rasnet::numerics::Tensor::from_vec(v.clone());
    let w = affinity(&t(&f[0]), &t(&f[1]), store.get(psi), store.get(phi)).unwrap();
    let dot: f64 = {
        let e = |m: &rasnet::numerics::Tensor, v: &Vec<f64>| -> Vec<f64> {
            m.data()
                .chunks(d)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        };
        e(store.get(psi), &f[0])
            .iter()
            .zip(e(store.get(phi), &f[1]))
            .map(|(a, b)| a * b)
            .sum()
    };
    assert!((w - dot.exp()).abs() < 1e-14 * w.max(1.0));
    assert!((temporal_kernel(2, 5, 50.0).unwrap() - (-9.0f64 / 50.0).exp()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_features_pass_through(seed in any::<u64>(), m in 1usize..8, d in 1usize..10, combo in 0usize..8) {
        let cfg = flag_combos(4, 10.0).swap_remove(combo);
        prop_assume!(cfg.use_difference);
        let (ras, store) = random_ras(cfg, d, seed, 1.0);
        let mut r = rng(seed ^ 1);
        let row: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let f = vec![row.clone(); m];
        let positions: Vec<usize> = (1..=m).collect();
        prop_assert_eq!(run_ras(&ras, &store, &f, &positions), row);
    }

    #[test]
    fn single_clip_passes_through(seed in any::<u64>(), d in 1usize..10, combo in 0usize..8, pos in 1usize..80) {
        let cfg = flag_combos(5, 50.0).swap_remove(combo);
        let (ras, store) = random_ras(cfg, d, seed, 1.0);
        let f = random_features(&mut rng(seed ^ 2), 1, d);
        prop_assert_eq!(run_ras(&ras, &store, &f, &[pos]), f[0].clone());
    }

    #[test]
    fn permutation_invariant_without_temporal_kernel(
        seed in any::<u64>(),
        m in 2usize..8,
        d in 1usize..10,
        per_block in any::<bool>(),
        difference in any::<bool>(),
    ) {
        let cfg = RasConfig { use_delta: false, use_difference: difference, per_block_affinity: per_block, blocks: 3, sigma: 5.0 };
        let (ras, store) = random_ras(cfg, d, seed, 0.7);
        let mut r = rng(seed ^ 3);
        let f = random_features(&mut r, m, d);
        let positions: Vec<usize> = (1..=m).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut r);
        let g: Vec<Vec<f64>> = order.iter().map(|&i| f[i].clone()).collect();
        let a = run_ras(&ras, &store, &f, &positions);
        let b = run_ras(&ras, &store, &g, &positions);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oracle_agreement_random(seed in any::<u64>(), m in 1usize..9, d in 1usize..17, combo in 0usize..8) {
        let cfg = flag_combos(2, 7.0).swap_remove(combo);
        let (ras, store) = random_ras(cfg, d, seed, 0.5);
        let f = random_features(&mut rng(seed ^ 4), m, d);
        let positions: Vec<usize> = (1..=m).map(|p| 3 * p).collect();
        let got = run_ras(&ras, &store, &f, &positions);
        let want = question_oracle(&ras, &store, &f, &positions);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
    }
}
