//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rasnet::numerics::{Tape, Tensor};
use rasnet::params::ParameterStore;
use rasnet::ras::{Ras, RasConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    m.data()
        .chunks_exact(d)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// One attention block written as the per-clip double loop.
pub fn block_oracle(
    states: &[Vec<f64>],
    base: &[Vec<f64>],
    psi: &Tensor,
    phi: &Tensor,
    omega: &[f64],
    positions: &[usize],
    cfg: &RasConfig,
) -> Vec<Vec<f64>> {
    let m = states.len();
    let d = omega.len();
    let mut out = states.to_vec();
    if m == 1 {
        return out;
    }
    for i in 0..m {
        let ei = matvec(psi, &base[i]);
        let mut c = 0.0;
        let mut acc = vec![0.0; d];
        for j in 0..m {
            if j == i {
                continue;
            }
            let ej = matvec(phi, &base[j]);
            let dot: f64 = ei.iter().zip(&ej).map(|(a, b)| a * b).sum();
            let w_aff = dot.clamp(-60.0, 60.0).exp();
            let delta = if cfg.use_delta {
                let dm = positions[i] as f64 - positions[j] as f64;
                (-dm * dm / cfg.sigma).exp()
            } else {
                1.0
            };
            let w = w_aff * delta;
            c += w;
            for k in 0..d {
                let nb = if cfg.use_difference {
                    states[j][k] - states[i][k]
                } else {
                    states[j][k]
                };
                acc[k] += w * nb;
            }
        }
        for k in 0..d {
            out[i][k] = states[i][k] + omega[k] * acc[k] / c;
        }
    }
    out
}

/// All blocks then the element-wise mean, straight from the parameters.
pub fn question_oracle(ras: &Ras, store: &ParameterStore, features: &[Vec<f64>], positions: &[usize]) -> Vec<f64> {
    let cfg = ras.config();
    let mut states = features.to_vec();
    for l in 1..=cfg.blocks {
        let (psi, phi) = ras.embeddings(l);
        let base = if cfg.per_block_affinity {
            states.clone()
        } else {
            features.to_vec()
        };
        states = block_oracle(
            &states,
            &base,
            store.get(psi),
            store.get(phi),
            store.get(ras.omega(l)).data(),
            positions,
            cfg,
        );
    }
    let d = features[0].len();
    (0..d)
        .map(|k| states.iter().map(|s| s[k]).sum::<f64>() / states.len() as f64)
        .collect()
}

/// RAS module with every parameter (Ω included) drawn from U[-scale, scale].
pub fn random_ras(cfg: RasConfig, dim: usize, seed: u64, scale: f64) -> (Ras, ParameterStore) {
    let mut r = rng(seed);
    let mut store = ParameterStore::new();
    let ras = Ras::new(cfg, dim, &mut store, &mut r).unwrap();
    for t in store.values_mut() {
        *t = Tensor::uniform(t.shape(), -scale, scale, &mut r);
    }
    (ras, store)
}

pub fn run_ras(ras: &Ras, store: &ParameterStore, features: &[Vec<f64>], positions: &[usize]) -> Vec<f64> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let vars: Vec<_> = features
        .iter()
        .map(|f| tape.constant(Tensor::from_vec(f.clone())))
        .collect();
    let a = ras.encode_question(&p, &tape, &vars, positions).unwrap();
    let out = a.value().data().to_vec();
    out
}

pub fn random_features(r: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

/// The four combinations of the residual and temporal-kernel switches, with
/// and without per-block embeddings.
pub fn flag_combos(blocks: usize, sigma: f64) -> Vec<RasConfig> {
    let mut v = Vec::new();
    for per_block_affinity in [false, true] {
        for use_difference in [true, false] {
            for use_delta in [true, false] {
                v.push(RasConfig {
                    use_difference,
                    use_delta,
                    per_block_affinity,
                    blocks,
                    sigma,
                });
            }
        }
    }
    v
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
