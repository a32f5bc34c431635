//! Redundancy-aware self-attention over the clips of one question.
//!
//! Each block updates every clip feature with an affinity-weighted
//! average of its residuals to the other clips:
//!
//! ```text
//! out_i = in_i + Ω ⊙ (1 / C_i) Σ_{j≠i} ω_ij Δ_ij (in_j − in_i)
//! C_i   = Σ_{j≠i} ω_ij Δ_ij
//! ω_ij  = exp(<Ψ base_i, Φ base_j>)      Δ_ij = exp(−(m_i − m_j)² / σ)
//! ```
//!
//! `base` is the block-0 feature set unless per-block affinity is on.
//! After the last block the clip features are averaged into one
//! question feature.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamId, ParameterStore};

/// Embedding dot products are clamped to this magnitude before `exp`.
pub const AFFINITY_CLAMP: f64 = 60.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RasConfig {
    /// Residual `in_j − in_i` (true) or plain neighbor `in_j` (false).
    pub use_difference: bool,
    /// Temporal Gaussian kernel on (true) or `Δ ≡ 1` (false).
    pub use_delta: bool,
    /// Separate Ψ/Φ per block, affinity from the block's own input.
    pub per_block_affinity: bool,
    pub blocks: usize,
    pub sigma: f64,
}

impl Default for RasConfig {
    fn default() -> Self {
        RasConfig {
            use_difference: true,
            use_delta: true,
            per_block_affinity: false,
            blocks: 5,
            sigma: 50.0,
        }
    }
}

impl RasConfig {
    /// Plain non-local aggregation: neighbor features, no temporal kernel.
    pub fn non_local(blocks: usize, sigma: f64) -> Self {
        RasConfig {
            use_difference: false,
            use_delta: false,
            per_block_affinity: false,
            blocks,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Embedded-Gaussian affinity `exp(<Ψ fi, Φ fj>)` on plain tensors.
pub fn affinity(fi: &Tensor, fj: &Tensor, psi: &Tensor, phi: &Tensor) -> Result<f64> {
    let d = fi.len();
    if fj.len() != d || psi.shape() != [d, d] || phi.shape() != [d, d] {
        return Err(Error::dim(
            "affinity",
            format!(
                "features {:?}/{:?}, embeddings {:?}/{:?}",
                fi.shape(),
                fj.shape(),
                psi.shape(),
                phi.shape()
            ),
        ));
    }
    let embed = |m: &Tensor, v: &Tensor| -> Vec<f64> {
        m.data()
            .chunks_exact(d)
            .map(|row| row.iter().zip(v.data()).map(|(a, b)| a * b).sum())
            .collect()
    };
    let (a, b) = (embed(psi, fi), embed(phi, fj));
    let s: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    if !s.is_finite() {
        return Err(Error::Numeric(format!("affinity exponent {s} is not finite")));
    }
    Ok(s.clamp(-AFFINITY_CLAMP, AFFINITY_CLAMP).exp())
}

/// Temporal kernel between 1-based clip positions.
pub fn temporal_kernel(mi: usize, mj: usize, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let d = mi as f64 - mj as f64;
    Ok((-(d * d) / sigma).exp())
}

/// `Δ_ij` (or 1) off the diagonal, 0 on it.
fn neighbor_weights(positions: &[usize], config: &RasConfig) -> Result<Tensor> {
    let m = positions.len();
    let mut w = vec![0.0; m * m];
    for (i, &pi) in positions.iter().enumerate() {
        for (j, &pj) in positions.iter().enumerate() {
            if i != j {
                w[i * m + j] = if config.use_delta {
                    temporal_kernel(pi, pj, config.sigma)?
                } else {
                    1.0
                };
            }
        }
    }
    Tensor::new(&[m, m], w)
}

#[derive(Clone, Debug)]
pub struct Ras {
    config: RasConfig,
    dim: usize,
    omega: Vec<ParamId>,
    psi: Vec<ParamId>,
    phi: Vec<ParamId>,
}

impl Ras {
    /// Ω starts at zero so every block begins as the identity.
    pub fn new<R: Rng + ?Sized>(
        config: RasConfig,
        dim: usize,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let omega = (1..=config.blocks)
            .map(|l| store.add(format!("ras.block{l}.omega"), Tensor::zeros(&[dim])))
            .collect();
        let pairs = if config.per_block_affinity {
            config.blocks
        } else {
            1.min(config.blocks)
        };
        let mut psi = Vec::with_capacity(pairs);
        let mut phi = Vec::with_capacity(pairs);
        for l in 1..=pairs {
            let tag = if config.per_block_affinity {
                format!("block{l}.")
            } else {
                String::new()
            };
            psi.push(store.add(format!("ras.{tag}psi"), glorot_uniform(&[dim, dim], dim, dim, rng)));
            phi.push(store.add(format!("ras.{tag}phi"), glorot_uniform(&[dim, dim], dim, dim, rng)));
        }
        Ok(Ras {
            config,
            dim,
            omega,
            psi,
            phi,
        })
    }

    pub fn config(&self) -> &RasConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn omega(&self, block: usize) -> ParamId {
        self.omega[block - 1]
    }

    /// Ψ/Φ used by 1-based `block`.
    pub fn embeddings(&self, block: usize) -> (ParamId, ParamId) {
        let k = if self.config.per_block_affinity { block - 1 } else { 0 };
        (self.psi[k], self.phi[k])
    }

    /// One attention block. `states` and `base` are `[M, d]`.
    pub fn block<'t>(
        &self,
        p: &BoundParams<'t>,
        states: Var<'t>,
        base: Var<'t>,
        positions: &[usize],
        block: usize,
    ) -> Result<Var<'t>> {
        let (ss, bs) = (states.shape(), base.shape());
        let m = positions.len();
        if ss != [m, self.dim] || bs != ss {
            return Err(Error::Contract(format!(
                "ras block needs matching [M, {}] states/base for {m} positions, got {ss:?} and {bs:?}",
                self.dim
            )));
        }
        if !(1..=self.config.blocks).contains(&block) {
            return Err(Error::Contract(format!("block index {block} out of range")));
        }
        if m == 1 {
            return Ok(states);
        }
        let (psi, phi) = self.embeddings(block);
        let e_psi = base.matmul(&p.var(psi).transpose()?)?;
        let e_phi = base.matmul(&p.var(phi).transpose()?)?;
        let omega_ij = e_psi
            .matmul(&e_phi.transpose()?)?
            .clamp(-AFFINITY_CLAMP, AFFINITY_CLAMP)?
            .exp()?;
        let weights = omega_ij.mul_const(Rc::new(neighbor_weights(positions, &self.config)?))?;
        let norm = weights.sum_rows()?;
        let agg = states.mix(&weights, self.config.use_difference)?.div_rows(&norm)?;
        states.add(&agg.mul_row_vec(&p.var(self.omega(block)))?)
    }

    /// Element-wise mean of the clip features.
    pub fn aggregate<'t>(&self, states: Var<'t>) -> Result<Var<'t>> {
        if states.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::Contract("aggregate of an empty clip set".into()));
        }
        states.mean_rows()
    }

    /// All blocks then global average pooling.
    pub fn encode_question<'t>(
        &self,
        p: &BoundParams<'t>,
        tape: &'t Tape,
        features: &[Var<'t>],
        positions: &[usize],
    ) -> Result<Var<'t>> {
        if features.is_empty() {
            return Err(Error::Contract("a question needs at least one clip feature".into()));
        }
        if features.len() != positions.len() {
            return Err(Error::Contract(format!(
                "{} features but {} positions",
                features.len(),
                positions.len()
            )));
        }
        let base = tape.stack(features)?;
        let mut states = base;
        for l in 1..=self.config.blocks {
            let affinity_src = if self.config.per_block_affinity { states } else { base };
            states = self.block(p, states, affinity_src, positions, l)?;
        }
        self.aggregate(states)
    }
}
