//! Finite-difference gradient checks of each model stage and the full loss.

use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{generate_synthetic, SynthConfig};
use crate::encoder::{Encoder3d, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{bce_loss, fuse_question, FusionHead, SlotMask, QUESTIONS};
use crate::model::{Model, ModelConfig};
use crate::numerics::{GradCheck, Tape, Tensor, TensorReport, Var};
use crate::params::{BoundParams, ParameterStore};
use crate::ras::{Ras, RasConfig};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Stage whose output gets a deliberately wrong backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Ras,
    Fusion,
    Full,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Encoder, Stage::Ras, Stage::Fusion, Stage::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::Ras => "ras",
            Stage::Fusion => "fusion",
            Stage::Full => "full",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// One input tensor's comparison, labelled.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub report: TensorReport,
}

#[derive(Clone, Debug)]
pub struct StageCheck {
    pub stage: Stage,
    pub tensors: Vec<TensorCheck>,
}

impl StageCheck {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.report.passed)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }
}

/// Multiplies the backward pass by 1.01 at `stage` when `fault` names it.
fn faulty<'t>(v: Var<'t>, stage: Stage, fault: Option<Stage>) -> Result<Var<'t>> {
    if fault == Some(stage) {
        v.grad_scale(1.01)
    } else {
        Ok(v)
    }
}

fn randomize(store: &mut ParameterStore, rng: &mut ChaCha8Rng, scale: f64) {
    for t in store.values_mut() {
        *t = Tensor::uniform(t.shape(), -scale, scale, rng);
    }
}

fn label(stage: Stage, names: Vec<String>, reports: Vec<TensorReport>) -> StageCheck {
    StageCheck {
        stage,
        tensors: names
            .into_iter()
            .zip(reports)
            .map(|(name, report)| TensorCheck { name, report })
            .collect(),
    }
}

fn checker() -> GradCheck {
    GradCheck::new(STEP, TOLERANCE).with_max_entries(24)
}

/// Reduced encoder; inputs are the clip and every encoder parameter.
pub fn check_encoder(seed: u64, fault: Option<Stage>) -> Result<StageCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let cfg = EncoderConfig {
        feature_dim: 8,
        ..EncoderConfig::compact(46, [2, 2, 2, 2, 4])
    };
    let enc = Encoder3d::new(cfg, &mut store, &mut rng)?;
    randomize(&mut store, &mut rng, 0.5);
    let clip = Tensor::uniform(&[46, 46, 10, 1], 0.0, 1.0, &mut rng);
    let w = Rc::new(Tensor::uniform(&[8], -1.0, 1.0, &mut rng));
    let mut inputs = vec![clip];
    inputs.extend(store.values().iter().cloned());
    let reports = checker().run(
        |_tape: &Tape, v: &[Var]| {
            let p = BoundParams::from_vars(v[1..].to_vec());
            let out = enc.encode_clip(&p, v[0])?;
            faulty(out, Stage::Encoder, fault)?.mul_const(Rc::clone(&w))?.sum()
        },
        &inputs,
    )?;
    let mut names = vec!["clip".to_string()];
    names.extend(store.iter().map(|(_, n, _)| n.to_string()));
    Ok(label(Stage::Encoder, names, reports))
}

/// Two attention blocks over five clip features of size 6.
pub fn check_ras(seed: u64, fault: Option<Stage>) -> Result<StageCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let ras = Ras::new(
        RasConfig {
            blocks: 2,
            sigma: 4.0,
            ..RasConfig::default()
        },
        6,
        &mut store,
        &mut rng,
    )?;
    randomize(&mut store, &mut rng, 0.5);
    let m = 5;
    let positions: Vec<usize> = (1..=m).collect();
    let w = Rc::new(Tensor::uniform(&[6], -1.0, 1.0, &mut rng));
    let mut inputs: Vec<Tensor> = (0..m).map(|_| Tensor::uniform(&[6], -1.0, 1.0, &mut rng)).collect();
    inputs.extend(store.values().iter().cloned());
    let reports = checker().run(
        |tape: &Tape, v: &[Var]| {
            let p = BoundParams::from_vars(v[m..].to_vec());
            let a = ras.encode_question(&p, tape, &v[..m], &positions)?;
            faulty(a, Stage::Ras, fault)?.mul_const(Rc::clone(&w))?.sum()
        },
        &inputs,
    )?;
    let mut names: Vec<String> = (1..=m).map(|i| format!("clip_feature[{i}]")).collect();
    names.extend(store.iter().map(|(_, n, _)| n.to_string()));
    Ok(label(Stage::Ras, names, reports))
}

/// Fusion head with BCE on top; inputs are the twenty question features
/// and the head parameters.
pub fn check_fusion(seed: u64, fault: Option<Stage>) -> Result<StageCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let d = 4;
    let head = FusionHead::new("fusion", d, &[8, 4], &mut store, &mut rng)?;
    randomize(&mut store, &mut rng, 0.5);
    let choices: Vec<u8> = (0..QUESTIONS).map(|q| (q % 4) as u8 + 1).collect();
    let times: Vec<f64> = (0..QUESTIONS).map(|q| 0.1 + 0.05 * q as f64).collect();
    let mut inputs: Vec<Tensor> = (0..QUESTIONS)
        .map(|_| Tensor::uniform(&[d], -1.0, 1.0, &mut rng))
        .collect();
    inputs.extend(store.values().iter().cloned());
    let reports = checker().run(
        |tape: &Tape, v: &[Var]| {
            let p = BoundParams::from_vars(v[QUESTIONS..].to_vec());
            let qs = (0..QUESTIONS)
                .map(|q| fuse_question(tape, Some(v[q]), d, choices[q], times[q], SlotMask::ALL))
                .collect::<Result<Vec<_>>>()?;
            let out = faulty(head.forward(&p, tape, &qs)?, Stage::Fusion, fault)?;
            bce_loss(out.sigmoid()?, 1)
        },
        &inputs,
    )?;
    let mut names: Vec<String> = (1..=QUESTIONS).map(|q| format!("question_feature[{q}]")).collect();
    names.extend(store.iter().map(|(_, n, _)| n.to_string()));
    Ok(label(Stage::Fusion, names, reports))
}

/// Subject-level BCE of a tiny full model on one synthetic subject.
pub fn check_full(seed: u64, fault: Option<Stage>) -> Result<StageCheck> {
    let data = generate_synthetic(&SynthConfig {
        n_subjects: 2,
        fps: 5,
        height: 46,
        width: 46,
        disagreement_rate: 0.0,
        seed,
        median_time_s: 2.4,
        time_sigma: 0.25,
        min_time_s: 2.0,
        max_time_s: 3.0,
        ..SynthConfig::default()
    })?;
    let subject = data
        .subjects
        .iter()
        .find(|s| s.label == 1)
        .ok_or_else(|| Error::Contract("generator produced no depressed subject".into()))?;
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            feature_dim: 4,
            ..EncoderConfig::compact(46, [1, 1, 1, 1, 2])
        },
        ras: RasConfig {
            blocks: 2,
            sigma: 4.0,
            ..RasConfig::default()
        },
        hidden: vec![4],
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    randomize(model.store_mut(), &mut rng, 0.1);
    let inputs: Vec<Tensor> = model.store().values().to_vec();
    let reports = GradCheck::new(STEP, TOLERANCE).with_max_entries(8).run(
        |tape: &Tape, v: &[Var]| {
            let p = BoundParams::from_vars(v.to_vec());
            let prob = faulty(model.forward(&p, tape, subject)?, Stage::Full, fault)?;
            bce_loss(prob, subject.label)
        },
        &inputs,
    )?;
    let names = model.store().iter().map(|(_, n, _)| n.to_string()).collect();
    Ok(label(Stage::Full, names, reports))
}

pub fn check_stage(stage: Stage, seed: u64, fault: Option<Stage>) -> Result<StageCheck> {
    match stage {
        Stage::Encoder => check_encoder(seed, fault),
        Stage::Ras => check_ras(seed, fault),
        Stage::Fusion => check_fusion(seed, fault),
        Stage::Full => check_full(seed, fault),
    }
}
