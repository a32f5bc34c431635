//! The full screening model: clip encoder, attention stack, fusion head.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clipper::{clip_spans, ClipTensor};
use crate::dataset::SubjectSample;
use crate::encoder::{Encoder3d, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse_question, FusionHead, SlotMask};
use crate::numerics::{Tape, Var};
use crate::params::{BoundParams, ParameterStore};
use crate::ras::{Ras, RasConfig};

/// Which inputs reach the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    /// Video features, score and time through one head.
    Full,
    /// Video features only.
    VideoOnly,
    /// Score and time only; no video encoder.
    Mlp,
    /// Mean of a video-only head's and a score/time-only head's probabilities.
    Slf,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Full => "full",
            Modality::VideoOnly => "video-only",
            Modality::Mlp => "mlp",
            Modality::Slf => "slf",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Modality::Full,
            "video-only" => Modality::VideoOnly,
            "mlp" => Modality::Mlp,
            "slf" => Modality::Slf,
            _ => return Err(Error::Config(format!("unknown modality {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub ras: RasConfig,
    pub hidden: Vec<usize>,
    pub modality: Modality,
    /// Feed answering times to the head.
    pub use_time: bool,
    pub overlap: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            ras: RasConfig::default(),
            hidden: vec![1024, 256],
            modality: Modality::Full,
            use_time: true,
            overlap: crate::clipper::DEFAULT_OVERLAP,
        }
    }
}

impl ModelConfig {
    pub fn uses_video(&self) -> bool {
        self.modality != Modality::Mlp
    }

    fn head_masks(&self) -> Vec<SlotMask> {
        let video_only = SlotMask {
            video: true,
            score: false,
            time: false,
        };
        let tabular = SlotMask {
            video: false,
            score: true,
            time: self.use_time,
        };
        match self.modality {
            Modality::Full => vec![SlotMask {
                time: self.use_time,
                ..SlotMask::ALL
            }],
            Modality::VideoOnly => vec![video_only],
            Modality::Mlp => vec![tabular],
            Modality::Slf => vec![video_only, tabular],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParameterStore,
    encoder: Option<Encoder3d>,
    ras: Option<Ras>,
    heads: Vec<(FusionHead, SlotMask)>,
}

impl Model {
    /// Parameters are drawn from a ChaCha stream seeded by `seed`, in the
    /// order encoder, attention, heads.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.ras.validate()?;
        config.encoder.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let (encoder, ras) = if config.uses_video() {
            let enc = Encoder3d::new(config.encoder.clone(), &mut store, &mut rng)?;
            let ras = Ras::new(config.ras.clone(), enc.feature_dim(), &mut store, &mut rng)?;
            (Some(enc), Some(ras))
        } else {
            (None, None)
        };
        let masks = config.head_masks();
        let mut heads = Vec::with_capacity(masks.len());
        for (i, mask) in masks.into_iter().enumerate() {
            let name = if i == 0 {
                "fusion".to_string()
            } else {
                format!("fusion{}", i + 1)
            };
            let head = FusionHead::new(&name, config.encoder.feature_dim, &config.hidden, &mut store, &mut rng)?;
            heads.push((head, mask));
        }
        Ok(Model {
            config,
            store,
            encoder,
            ras,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn encoder(&self) -> Option<&Encoder3d> {
        self.encoder.as_ref()
    }

    pub fn ras(&self) -> Option<&Ras> {
        self.ras.as_ref()
    }

    /// Question feature `a^q` for one question's frames.
    pub fn question_feature<'t>(
        &self,
        p: &BoundParams<'t>,
        tape: &'t Tape,
        frames: &[crate::clipper::GrayFrame],
    ) -> Result<Var<'t>> {
        let (Some(enc), Some(ras)) = (&self.encoder, &self.ras) else {
            return Err(Error::Contract("model has no video branch".into()));
        };
        let clip_len = self.config.encoder.clip_len;
        let spans = clip_spans(frames.len(), clip_len, self.config.overlap)?;
        let mut features = Vec::with_capacity(spans.len());
        let mut positions = Vec::with_capacity(spans.len());
        for span in spans {
            let clip = ClipTensor::from_frames(&frames[span.frames()], span.position)?;
            features.push(enc.encode_clip(p, tape.constant(clip.values))?);
            positions.push(clip.position);
        }
        ras.encode_question(p, tape, &features, &positions)
    }

    /// Depression probability for one subject, as a scalar on `tape`.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, tape: &'t Tape, sample: &SubjectSample) -> Result<Var<'t>> {
        let video: Vec<Option<Var<'t>>> = if self.encoder.is_some() {
            sample
                .questions
                .iter()
                .map(|q| self.question_feature(p, tape, &q.frames).map(Some))
                .collect::<Result<_>>()?
        } else {
            vec![None; sample.questions.len()]
        };
        let d = self.config.encoder.feature_dim;
        let mut probs = Vec::with_capacity(self.heads.len());
        for (head, mask) in &self.heads {
            let fused = sample
                .questions
                .iter()
                .zip(&video)
                .map(|(q, a)| fuse_question(tape, *a, d, q.choice, q.answer_time_s, *mask))
                .collect::<Result<Vec<_>>>()?;
            probs.push(head.forward(p, tape, &fused)?.sigmoid()?);
        }
        if probs.len() == 1 {
            Ok(probs[0])
        } else {
            tape.mean_over_set(&probs)
        }
    }

    /// Probability with frozen parameters.
    pub fn predict(&self, sample: &SubjectSample) -> Result<f64> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        Ok(self.forward(&p, &tape, sample)?.value().item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_names_round_trip() {
        for m in [Modality::Full, Modality::VideoOnly, Modality::Mlp, Modality::Slf] {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert!(matches!("both".parse::<Modality>(), Err(Error::Config(_))));
    }

    #[test]
    fn mlp_has_no_video_parameters() {
        let cfg = ModelConfig {
            encoder: EncoderConfig::compact(46, [1, 1, 1, 1, 2]),
            hidden: vec![4],
            modality: Modality::Mlp,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, 1).unwrap();
        assert!(m.store().iter().all(|(_, n, _)| n.starts_with("fusion.")));
    }
}
