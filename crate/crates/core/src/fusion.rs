//! Question-level conditional fusion and the classifier head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, sigmoid, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamId, ParameterStore};

pub const QUESTIONS: usize = 20;
pub const SCORE_LEVELS: usize = 4;
pub const PROB_EPS: f64 = 1e-12;

/// One-hot encoding of a Likert choice in `1..=4`.
pub fn encode_score(choice: u8) -> Result<[f64; SCORE_LEVELS]> {
    if !(1..=SCORE_LEVELS as u8).contains(&choice) {
        return Err(Error::Input(format!("score choice {choice} outside 1..=4")));
    }
    let mut v = [0.0; SCORE_LEVELS];
    v[choice as usize - 1] = 1.0;
    Ok(v)
}

/// Which slots of each question vector are populated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SlotMask {
    pub video: bool,
    pub score: bool,
    pub time: bool,
}

impl SlotMask {
    pub const ALL: SlotMask = SlotMask {
        video: true,
        score: true,
        time: true,
    };
}

/// `[a^q | s^q | t^q]`; masked-off slots are zero.
pub fn fuse_question<'t>(
    tape: &'t Tape,
    video: Option<Var<'t>>,
    feature_dim: usize,
    choice: u8,
    answer_time_s: f64,
    mask: SlotMask,
) -> Result<Var<'t>> {
    if !(answer_time_s > 0.0 && answer_time_s.is_finite()) {
        return Err(Error::Input(format!("answer time {answer_time_s} must be positive")));
    }
    let score = encode_score(choice)?;
    let mut tail = Vec::with_capacity(SCORE_LEVELS + 1);
    if mask.score {
        tail.extend_from_slice(&score);
    } else {
        tail.extend_from_slice(&[0.0; SCORE_LEVELS]);
    }
    tail.push(if mask.time { answer_time_s } else { 0.0 });
    let tail = tape.constant(Tensor::from_vec(tail));
    let video = match (mask.video, video) {
        (true, Some(a)) => {
            if a.shape() != [feature_dim] {
                return Err(Error::dim(
                    "fuse_question",
                    format!("question feature {:?}, expected [{feature_dim}]", a.shape()),
                ));
            }
            a
        }
        (true, None) => {
            return Err(Error::Contract(
                "video slot enabled but no question feature given".into(),
            ));
        }
        (false, _) => tape.constant(Tensor::zeros(&[feature_dim])),
    };
    tape.concat(&[video, tail])
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected stack `20·(d+5) → hidden… → 1` with ReLU between layers.
#[derive(Clone, Debug)]
pub struct FusionHead {
    input_dim: usize,
    layers: Vec<Dense>,
}

/// Raw head output and its sigmoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub out: f64,
    pub p: f64,
}

impl Prediction {
    pub fn from_out(out: f64) -> Self {
        Prediction { out, p: sigmoid(out) }
    }

    /// Class 1 iff `p > threshold`.
    pub fn class(&self, threshold: f64) -> u8 {
        u8::from(self.p > threshold)
    }
}

impl FusionHead {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        feature_dim: usize,
        hidden: &[usize],
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let input_dim = QUESTIONS * (feature_dim + SCORE_LEVELS + 1);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weight: store.add(
                    format!("{name}.fc{}.weight", i + 1),
                    glorot_uniform(&[w[0], w[1]], w[0], w[1], rng),
                ),
                bias: store.add(format!("{name}.fc{}.bias", i + 1), Tensor::zeros(&[w[1]])),
            })
            .collect();
        Ok(FusionHead { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layer_ids(&self) -> Vec<(ParamId, ParamId)> {
        self.layers.iter().map(|l| (l.weight, l.bias)).collect()
    }

    /// Pre-sigmoid scalar for the 20 fused question vectors, in SDS order.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, tape: &'t Tape, questions: &[Var<'t>]) -> Result<Var<'t>> {
        if questions.len() != QUESTIONS {
            return Err(Error::Contract(format!(
                "fusion needs {QUESTIONS} question vectors, got {}",
                questions.len()
            )));
        }
        let mut x = tape.concat(questions)?;
        if x.shape() != [self.input_dim] {
            return Err(Error::dim(
                "fusion",
                format!("fused vector {:?}, head expects [{}]", x.shape(), self.input_dim),
            ));
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = x.matmul(&p.var(layer.weight))?.add(&p.var(layer.bias))?;
            if i < last {
                x = x.relu()?;
            }
        }
        Ok(x)
    }
}

/// Binary cross-entropy; log arguments are floored at 1e-12.
pub fn bce_loss<'t>(p: Var<'t>, label: u8) -> Result<Var<'t>> {
    p.bce(label as f64, PROB_EPS)
}

/// Plain-number BCE, same clamping.
pub fn bce_value(p: f64, label: u8) -> f64 {
    crate::numerics::bce_terms(p, label as f64, PROB_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_scores() {
        assert_eq!(encode_score(1).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode_score(4).unwrap(), [0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(encode_score(0), Err(Error::Input(_))));
        assert!(matches!(encode_score(5), Err(Error::Input(_))));
    }

    #[test]
    fn question_vector_layout() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[128], 0.5));
        let v = fuse_question(&tape, Some(a), 128, 2, 3.0, SlotMask::ALL).unwrap();
        let d = v.value();
        assert_eq!(d.len(), 133);
        assert_eq!(&d.data()[128..], &[0.0, 1.0, 0.0, 0.0, 3.0]);

        let no_time = SlotMask {
            time: false,
            ..SlotMask::ALL
        };
        let w = fuse_question(&tape, Some(a), 128, 2, 3.0, no_time).unwrap();
        assert_eq!(w.value().data()[132], 0.0);
        assert_eq!(&w.value().data()[..132], &d.data()[..132]);
    }

    #[test]
    fn zero_head_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let head = FusionHead::new("fusion", 128, &[1024, 256], &mut store, &mut rng).unwrap();
        assert_eq!(head.input_dim(), 2660);
        let shapes: Vec<Vec<usize>> = store.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![2660, 1024],
                vec![1024],
                vec![1024, 256],
                vec![256],
                vec![256, 1],
                vec![1]
            ]
        );
        for t in store.values_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let qs: Vec<_> = (0..QUESTIONS)
            .map(|_| {
                fuse_question(
                    &tape,
                    None,
                    128,
                    3,
                    2.0,
                    SlotMask {
                        video: false,
                        ..SlotMask::ALL
                    },
                )
                .unwrap()
            })
            .collect();
        let out = head.forward(&p, &tape, &qs).unwrap();
        assert_eq!(out.value().item(), 0.0);
        assert_eq!(out.sigmoid().unwrap().value().item(), 0.5);
        assert!(matches!(head.forward(&p, &tape, &qs[..19]), Err(Error::Contract(_))));
    }

    #[test]
    fn bce_reference_values() {
        assert_eq!(bce_value(1.0, 1), 0.0);
        assert_eq!(bce_value(0.0, 0), 0.0);
        assert!((bce_value(0.0, 1) + PROB_EPS.ln()).abs() < 1e-12);
        assert!((bce_value(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_value(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn strict_threshold_rule() {
        assert_eq!(Prediction::from_out(0.0).class(0.5), 0);
        assert_eq!(Prediction::from_out(1e-9).class(0.5), 1);
    }
}
