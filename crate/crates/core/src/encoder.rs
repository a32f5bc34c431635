//! 3D CNN mapping one grayscale clip to a clip feature vector.
//!
//! Four stages of (3×3×3 conv, ReLU, max pool) followed by a conv whose
//! kernel covers the whole remaining volume, then a linear map to the
//! feature dimension. Convs keep the temporal extent (pad 1) and shrink
//! the spatial extents by 2 (no spatial padding).

use rand::Rng;

use crate::clipper::ClipTensor;
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamId, ParameterStore};

const POOLS: [[usize; 3]; 4] = [[2, 2, 1], [2, 2, 1], [2, 2, 1], [2, 2, 2]];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub clip_len: usize,
    /// Output channels of the five convolutions.
    pub channels: [usize; 5],
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            height: 110,
            width: 110,
            clip_len: 10,
            channels: [16, 32, 64, 128, 256],
            feature_dim: 128,
        }
    }
}

/// Extents of every intermediate map, in forward order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeChain {
    /// `[H, W, T, C]` after each conv and each pool (9 entries).
    pub maps: Vec<[usize; 4]>,
    /// Kernel extents of the final, full-volume convolution.
    pub final_kernel: [usize; 3],
    pub flat: usize,
    pub feature_dim: usize,
}

impl EncoderConfig {
    /// Smallest square input this layer pattern accepts is 46.
    pub fn compact(size: usize, channels: [usize; 5]) -> Self {
        EncoderConfig {
            height: size,
            width: size,
            channels,
            ..Self::default()
        }
    }

    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let bad = |why: String| {
            Error::Config(format!(
                "encoder input {}x{}x{}: {why}",
                self.height, self.width, self.clip_len
            ))
        };
        if self.channels.contains(&0) || self.feature_dim == 0 {
            return Err(bad("channel counts must be positive".into()));
        }
        let mut ext = [self.height, self.width, self.clip_len];
        let mut maps = Vec::with_capacity(9);
        for (stage, pool) in POOLS.iter().enumerate() {
            if ext[0] < 3 || ext[1] < 3 {
                return Err(bad(format!("stage {} conv does not fit", stage + 1)));
            }
            ext = [ext[0] - 2, ext[1] - 2, ext[2]];
            maps.push([ext[0], ext[1], ext[2], self.channels[stage]]);
            if (0..3).any(|a| !ext[a].is_multiple_of(pool[a])) {
                return Err(bad(format!(
                    "stage {} map {:?} not divisible by pool {:?}",
                    stage + 1,
                    ext,
                    pool
                )));
            }
            ext = [ext[0] / pool[0], ext[1] / pool[1], ext[2] / pool[2]];
            maps.push([ext[0], ext[1], ext[2], self.channels[stage]]);
        }
        maps.push([1, 1, 1, self.channels[4]]);
        Ok(ShapeChain {
            maps,
            final_kernel: ext,
            flat: self.channels[4],
            feature_dim: self.feature_dim,
        })
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    spatial_pad: usize,
    temporal_pad: usize,
    pool: Option<[usize; 3]>,
}

#[derive(Clone, Debug)]
pub struct Encoder3d {
    config: EncoderConfig,
    convs: Vec<ConvLayer>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

impl Encoder3d {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        let chain = config.shape_chain()?;
        let mut convs = Vec::with_capacity(5);
        let mut cin = 1;
        for (i, &cout) in config.channels.iter().enumerate() {
            let (k, spad, tpad, pool) = if i < 4 {
                ([3, 3, 3], 0, 1, Some(POOLS[i]))
            } else {
                (chain.final_kernel, 0, 0, None)
            };
            let vol = k[0] * k[1] * k[2];
            let kernel = store.add(
                format!("encoder.conv{}.kernel", i + 1),
                glorot_uniform(&[k[0], k[1], k[2], cin, cout], vol * cin, vol * cout, rng),
            );
            let bias = store.add(format!("encoder.conv{}.bias", i + 1), Tensor::zeros(&[cout]));
            convs.push(ConvLayer {
                kernel,
                bias,
                spatial_pad: spad,
                temporal_pad: tpad,
                pool,
            });
            cin = cout;
        }
        let fc_weight = store.add(
            "encoder.fc.weight",
            glorot_uniform(&[chain.flat, config.feature_dim], chain.flat, config.feature_dim, rng),
        );
        let fc_bias = store.add("encoder.fc.bias", Tensor::zeros(&[config.feature_dim]));
        Ok(Encoder3d {
            config,
            convs,
            fc_weight,
            fc_bias,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Encode one `[H, W, T, 1]` clip into a `[feature_dim]` vector,
    /// appending every intermediate map's shape to `trace` when given.
    pub fn encode_traced<'t>(
        &self,
        p: &BoundParams<'t>,
        clip: Var<'t>,
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<Var<'t>> {
        let c = &self.config;
        let expect = [c.height, c.width, c.clip_len, 1];
        let got = clip.shape();
        if got != expect {
            return Err(Error::dim(
                "encode_clip",
                format!("clip {got:?}, encoder expects {expect:?}"),
            ));
        }
        let mut x = clip;
        for layer in &self.convs {
            x = x
                .conv3d(
                    &p.var(layer.kernel),
                    &p.var(layer.bias),
                    layer.spatial_pad,
                    layer.temporal_pad,
                )?
                .relu()?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(x.shape());
            }
            if let Some(w) = layer.pool {
                x = x.maxpool3d(w)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(x.shape());
                }
            }
        }
        let flat = x.reshape(&[c.channels[4]])?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(flat.shape());
        }
        let out = flat.matmul(&p.var(self.fc_weight))?.add(&p.var(self.fc_bias))?;
        if let Some(t) = trace {
            t.push(out.shape());
        }
        Ok(out)
    }

    pub fn encode_clip<'t>(&self, p: &BoundParams<'t>, clip: Var<'t>) -> Result<Var<'t>> {
        self.encode_traced(p, clip, None)
    }

    /// One feature per clip, in input order.
    pub fn encode_question_clips<'t>(
        &self,
        p: &BoundParams<'t>,
        tape: &'t Tape,
        clips: &[ClipTensor],
    ) -> Result<Vec<Var<'t>>> {
        if clips.is_empty() {
            return Err(Error::Contract("a question needs at least one clip".into()));
        }
        clips
            .iter()
            .map(|c| self.encode_clip(p, tape.constant(c.values.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_size_shape_chain() {
        let chain = EncoderConfig::default().shape_chain().unwrap();
        let expect: Vec<[usize; 4]> = vec![
            [108, 108, 10, 16],
            [54, 54, 10, 16],
            [52, 52, 10, 32],
            [26, 26, 10, 32],
            [24, 24, 10, 64],
            [12, 12, 10, 64],
            [10, 10, 10, 128],
            [5, 5, 5, 128],
            [1, 1, 1, 256],
        ];
        assert_eq!(chain.maps, expect);
        assert_eq!(chain.final_kernel, [5, 5, 5]);
    }

    #[test]
    fn compact_sizes() {
        let chain = EncoderConfig::compact(46, [2, 2, 2, 2, 4]).shape_chain().unwrap();
        assert_eq!(chain.final_kernel, [1, 1, 5]);
        assert!(EncoderConfig::compact(48, [2; 5]).shape_chain().is_err());
        assert!(EncoderConfig::compact(20, [2; 5]).shape_chain().is_err());
    }

    #[test]
    fn zero_clip_zero_bias_gives_zero_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let enc = Encoder3d::new(EncoderConfig::compact(46, [2, 3, 2, 3, 4]), &mut store, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let clip = tape.constant(Tensor::zeros(&[46, 46, 10, 1]));
        let f = enc.encode_clip(&p, clip).unwrap();
        assert_eq!(f.shape(), vec![128]);
        assert!(f.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_extent_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let enc = Encoder3d::new(EncoderConfig::compact(46, [2; 5]), &mut store, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let clip = tape.constant(Tensor::zeros(&[46, 46, 8, 1]));
        assert!(matches!(enc.encode_clip(&p, clip), Err(Error::Dimension { .. })));
        assert!(matches!(
            enc.encode_question_clips(&p, &tape, &[]),
            Err(Error::Contract(_))
        ));
    }
}
