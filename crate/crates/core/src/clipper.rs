//! Frame preprocessing and factorization of a question video into
//! fixed-length overlapping clips.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_CLIP_LEN: usize = 10;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One 8-bit grayscale frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::dim(
                "frame",
                format!("{height}x{width} frame given {} pixels", pixels.len()),
            ));
        }
        Ok(GrayFrame { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        GrayFrame {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }
}

/// A raw camera frame before preprocessing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawFrame {
    Gray(GrayFrame),
    /// Interleaved RGB, row-major.
    Rgb {
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    },
}

impl RawFrame {
    fn dims(&self) -> (usize, usize) {
        match self {
            RawFrame::Gray(g) => (g.height, g.width),
            RawFrame::Rgb { height, width, .. } => (*height, *width),
        }
    }

    fn luma(&self, row: usize, col: usize) -> f64 {
        match self {
            RawFrame::Gray(g) => g.pixels[row * g.width + col] as f64,
            RawFrame::Rgb { width, pixels, .. } => {
                let i = 3 * (row * width + col);
                LUMA[0] * pixels[i] as f64 + LUMA[1] * pixels[i + 1] as f64 + LUMA[2] * pixels[i + 2] as f64
            }
        }
    }
}

/// Axis-aligned box in pixel units: top-left corner plus extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        FaceBox { x, y, w, h }
    }

    /// Double width and height about the box center.
    pub fn extended(&self) -> FaceBox {
        FaceBox {
            x: self.x - self.w / 2.0,
            y: self.y - self.h / 2.0,
            w: 2.0 * self.w,
            h: 2.0 * self.h,
        }
    }

    fn clamped(&self, height: usize, width: usize) -> FaceBox {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width as f64);
        let y1 = (self.y + self.h).min(height as f64);
        FaceBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    fn as_tuple(&self) -> (i64, i64, i64, i64) {
        (self.x as i64, self.y as i64, self.w as i64, self.h as i64)
    }
}

/// Extend the face box, crop, resize bilinearly to `out_size`², and reduce
/// to one luma channel.
pub fn preprocess(frame: &RawFrame, face: FaceBox, out_size: usize) -> Result<GrayFrame> {
    if face.w <= 0.0 || face.h <= 0.0 {
        return Err(Error::Box(face.as_tuple()));
    }
    if out_size == 0 {
        return Err(Error::Config("output size must be positive".into()));
    }
    let (height, width) = frame.dims();
    let roi = face.extended().clamped(height, width);
    if roi.w <= 0.0 || roi.h <= 0.0 {
        return Err(Error::Box(face.as_tuple()));
    }

    let sample = |fy: f64, fx: f64| -> f64 {
        // Bilinear interpolation over pixel centers, edges replicated.
        let fy = fy.clamp(0.0, (height - 1) as f64);
        let fx = fx.clamp(0.0, (width - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(height - 1), (x0 + 1).min(width - 1));
        let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
        let top = frame.luma(y0, x0) * (1.0 - dx) + frame.luma(y0, x1) * dx;
        let bottom = frame.luma(y1, x0) * (1.0 - dx) + frame.luma(y1, x1) * dx;
        top * (1.0 - dy) + bottom * dy
    };

    let sy = roi.h / out_size as f64;
    let sx = roi.w / out_size as f64;
    let mut pixels = Vec::with_capacity(out_size * out_size);
    for r in 0..out_size {
        let fy = roi.y + (r as f64 + 0.5) * sy - 0.5;
        for c in 0..out_size {
            let fx = roi.x + (c as f64 + 0.5) * sx - 0.5;
            pixels.push(sample(fy, fx).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayFrame::new(out_size, out_size, pixels)
}

/// Frame window of one clip. `position` is 1-based; `start` is the 0-based
/// index of its first frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipSpan {
    pub position: usize,
    pub start: usize,
    pub len: usize,
}

impl ClipSpan {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

fn stride_for(clip_len: usize, overlap: f64) -> Result<usize> {
    if clip_len == 0 {
        return Err(Error::Config("clip length must be positive".into()));
    }
    let stride = clip_len as f64 * (1.0 - overlap);
    if !(0.0..1.0).contains(&overlap) || stride.fract() != 0.0 || stride < 1.0 {
        return Err(Error::Config(format!(
            "overlap {overlap} does not give an integral stride for clip length {clip_len}"
        )));
    }
    Ok(stride as usize)
}

/// Number of whole windows in an `n`-frame video.
pub fn clip_count(n_frames: usize, clip_len: usize, overlap: f64) -> Result<usize> {
    let stride = stride_for(clip_len, overlap)?;
    if n_frames < clip_len {
        return Err(Error::InputTooShort {
            frames: n_frames,
            needed: clip_len,
        });
    }
    Ok((n_frames - clip_len) / stride + 1)
}

/// Clip windows over `n_frames`; trailing frames that do not fill a
/// window are dropped.
pub fn clip_spans(n_frames: usize, clip_len: usize, overlap: f64) -> Result<Vec<ClipSpan>> {
    let stride = stride_for(clip_len, overlap)?;
    let m = clip_count(n_frames, clip_len, overlap)?;
    Ok((0..m)
        .map(|k| ClipSpan {
            position: k + 1,
            start: k * stride,
            len: clip_len,
        })
        .collect())
}

/// One fixed-length grayscale clip, values in `[0, 1]`, laid out as
/// `[H, W, T, 1]` for the 3D encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    pub values: Tensor,
    pub position: usize,
}

impl ClipTensor {
    pub fn from_frames(frames: &[GrayFrame], position: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Contract("clip with no frames".into()))?;
        let (h, w, t) = (first.height, first.width, frames.len());
        if let Some(bad) = frames.iter().find(|f| f.height != h || f.width != w) {
            return Err(Error::dim(
                "clip",
                format!("frame {}x{} in a {h}x{w} clip", bad.height, bad.width),
            ));
        }
        let mut data = vec![0.0; h * w * t];
        for (ti, frame) in frames.iter().enumerate() {
            for (pix, &v) in frame.pixels.iter().enumerate() {
                data[pix * t + ti] = v as f64 / 255.0;
            }
        }
        Ok(ClipTensor {
            values: Tensor::new(&[h, w, t, 1], data)?,
            position,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split a question video into overlapping clips.
pub fn segment(frames: &[GrayFrame], clip_len: usize, overlap: f64) -> Result<Vec<ClipTensor>> {
    clip_spans(frames.len(), clip_len, overlap)?
        .into_iter()
        .map(|span| ClipTensor::from_frames(&frames[span.frames()], span.position))
        .collect()
}
