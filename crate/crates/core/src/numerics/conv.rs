//! Raw kernels for 3D convolution and max pooling over `[H, W, T, C]`
//! row-major buffers. The tape wraps these with shape checks.

/// Geometry of one stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub input: [usize; 4],
    pub kernel: [usize; 5],
    pub spatial_pad: usize,
    pub temporal_pad: usize,
}

impl ConvGeom {
    pub fn output(&self) -> [usize; 4] {
        let [h, w, t, _] = self.input;
        let [kh, kw, kt, _, cout] = self.kernel;
        [
            h + 2 * self.spatial_pad + 1 - kh,
            w + 2 * self.spatial_pad + 1 - kw,
            t + 2 * self.temporal_pad + 1 - kt,
            cout,
        ]
    }

    /// Input coordinate hit by output coordinate `o` and kernel tap `k`,
    /// or `None` when it lands in the zero padding.
    #[inline]
    fn source(o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let i = (o + k).checked_sub(pad)?;
        (i < extent).then_some(i)
    }
}

impl ConvGeom {
    /// Output frames `lo..hi` whose temporal tap `c` lands inside the input.
    #[inline]
    fn temporal_range(&self, c: usize) -> (usize, usize) {
        let t = self.input[2];
        let to = self.output()[2];
        let lo = self.temporal_pad.saturating_sub(c);
        let hi = to.min((t + self.temporal_pad).saturating_sub(c));
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv3d_forward(g: &ConvGeom, x: &[f64], k: &[f64], bias: &[f64]) -> Vec<f64> {
    let [h, w, t, cin] = g.input;
    let [kh, kw, kt, _, cout] = g.kernel;
    let [ho, wo, to, _] = g.output();
    let mut out = vec![0.0; ho * wo * to * cout];
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias);
    }
    let block = cin * cout;
    for oh in 0..ho {
        for ow in 0..wo {
            let obase = (oh * wo + ow) * to * cout;
            let orow = &mut out[obase..obase + to * cout];
            for a in 0..kh {
                let Some(ih) = ConvGeom::source(oh, a, g.spatial_pad, h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(iw) = ConvGeom::source(ow, b, g.spatial_pad, w) else {
                        continue;
                    };
                    let xrow = &x[(ih * w + iw) * t * cin..(ih * w + iw + 1) * t * cin];
                    for c in 0..kt {
                        let kc = &k[((a * kw + b) * kt + c) * block..][..block];
                        let (lo, hi) = g.temporal_range(c);
                        if hi == lo {
                            continue;
                        }
                        let xs = &xrow[(lo + c - g.temporal_pad) * cin..(hi + c - g.temporal_pad) * cin];
                        let os = &mut orow[lo * cout..hi * cout];
                        if cin == 1 {
                            for (o, &xv) in os.chunks_exact_mut(cout).zip(xs) {
                                for (o, kv) in o.iter_mut().zip(kc) {
                                    *o += xv * kv;
                                }
                            }
                        } else {
                            for (o, xv) in os.chunks_exact_mut(cout).zip(xs.chunks_exact(cin)) {
                                for (xv, kr) in xv.iter().zip(kc.chunks_exact(cout)) {
                                    for (o, kv) in o.iter_mut().zip(kr) {
                                        *o += xv * kv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_kernel, d_bias)`; `d_input` is skipped (`None`)
/// when the caller does not need it.
pub(crate) fn conv3d_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    grad_out: &[f64],
    need_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let [h, w, t, cin] = g.input;
    let [kh, kw, kt, _, cout] = g.kernel;
    let [ho, wo, to, _] = g.output();
    let mut dx = need_input_grad.then(|| vec![0.0; x.len()]);
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; cout];
    for row in grad_out.chunks_exact(cout) {
        for (d, gv) in db.iter_mut().zip(row) {
            *d += gv;
        }
    }
    let block = cin * cout;
    for oh in 0..ho {
        for ow in 0..wo {
            let obase = (oh * wo + ow) * to * cout;
            let grow = &grad_out[obase..obase + to * cout];
            if grow.iter().all(|&v| v == 0.0) {
                continue;
            }
            for a in 0..kh {
                let Some(ih) = ConvGeom::source(oh, a, g.spatial_pad, h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(iw) = ConvGeom::source(ow, b, g.spatial_pad, w) else {
                        continue;
                    };
                    let xoff = (ih * w + iw) * t * cin;
                    let xrow = &x[xoff..xoff + t * cin];
                    for c in 0..kt {
                        let koff = ((a * kw + b) * kt + c) * block;
                        let (lo, hi) = g.temporal_range(c);
                        if hi == lo {
                            continue;
                        }
                        let (ilo, ihi) = (lo + c - g.temporal_pad, hi + c - g.temporal_pad);
                        let gs = &grow[lo * cout..hi * cout];
                        let xs = &xrow[ilo * cin..ihi * cin];
                        let dkc = &mut dk[koff..koff + block];
                        for (go, xv) in gs.chunks_exact(cout).zip(xs.chunks_exact(cin)) {
                            for (xv, dkr) in xv.iter().zip(dkc.chunks_exact_mut(cout)) {
                                for (d, gv) in dkr.iter_mut().zip(go) {
                                    *d += xv * gv;
                                }
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let kc = &k[koff..koff + block];
                            let dxs = &mut dx[xoff + ilo * cin..xoff + ihi * cin];
                            for (go, dxv) in gs.chunks_exact(cout).zip(dxs.chunks_exact_mut(cin)) {
                                for (d, kr) in dxv.iter_mut().zip(kc.chunks_exact(cout)) {
                                    let mut acc = 0.0;
                                    for (kv, gv) in kr.iter().zip(go) {
                                        acc += kv * gv;
                                    }
                                    *d += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Non-overlapping max pooling (stride equals window). Returns the pooled
/// buffer and, per output element, the flat input index that won.
pub(crate) fn maxpool3d_forward(input: [usize; 4], window: [usize; 3], x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let [_, w, t, c] = input;
    let [ho, wo, to] = [input[0] / window[0], w / window[1], t / window[2]];
    let n = ho * wo * to * c;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for oh in 0..ho {
        for ow in 0..wo {
            for ot in 0..to {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..window[0] {
                        let ih = oh * window[0] + a;
                        for b in 0..window[1] {
                            let iw = ow * window[1] + b;
                            for d in 0..window[2] {
                                let it = ot * window[2] + d;
                                let idx = ((ih * w + iw) * t + it) * c + ch;
                                // first maximum wins on ties
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}
