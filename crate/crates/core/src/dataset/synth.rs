//! Synthetic subjects with a planted video motif and a controlled
//! questionnaire/diagnosis disagreement rate.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::{frames_for, sds_sum_classify, Dataset, QuestionRecord, SubjectSample, SDS_THRESHOLD};
use crate::clipper::{clip_spans, GrayFrame, DEFAULT_CLIP_LEN, DEFAULT_OVERLAP};
use crate::error::{Error, Result};
use crate::fusion::QUESTIONS;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub fps: u32,
    pub height: usize,
    pub width: usize,
    /// Fraction of subjects whose SDS result contradicts their label.
    pub disagreement_rate: f64,
    /// Scales the planted blob amplitude; 0 disables the motif.
    pub motif_strength: f64,
    pub seed: u64,
    /// Median answering time of control subjects.
    pub median_time_s: f64,
    /// Multiplier on the median for depressed subjects.
    pub depressed_time_factor: f64,
    /// Log-space standard deviation of answering times.
    pub time_sigma: f64,
    pub min_time_s: f64,
    pub max_time_s: f64,
    /// Range of the fraction of a depressed subject's clips carrying the motif.
    pub motif_fraction: (f64, f64),
    /// 1-based questions whose clips receive the motif first; empty means
    /// every question is equally likely.
    pub motif_questions: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 200,
            fps: 25,
            height: 110,
            width: 110,
            disagreement_rate: 0.20,
            motif_strength: 1.0,
            seed: 0,
            median_time_s: 5.0,
            depressed_time_factor: 1.25,
            time_sigma: 0.45,
            min_time_s: 2.0,
            max_time_s: 21.0,
            motif_fraction: (0.10, 0.20),
            motif_questions: vec![1, 2, 3, 4],
        }
    }
}

impl SynthConfig {
    /// Number of subjects whose SDS result contradicts the label.
    pub fn mismatches(&self) -> usize {
        (self.n_subjects as f64 * self.disagreement_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || !self.n_subjects.is_multiple_of(2) {
            return bad(format!("n_subjects must be positive and even, got {}", self.n_subjects));
        }
        if !(0.0..0.5).contains(&self.disagreement_rate) {
            return bad(format!("disagreement_rate {} outside [0, 0.5)", self.disagreement_rate));
        }
        if !self.mismatches().is_multiple_of(2) {
            return bad(format!(
                "{} subjects at rate {} give {} mismatches, which cannot split evenly between classes",
                self.n_subjects,
                self.disagreement_rate,
                self.mismatches()
            ));
        }
        if self.fps == 0 || self.height < 8 || self.width < 8 {
            return bad(format!(
                "need fps > 0 and frames of at least 8x8, got {} fps {}x{}",
                self.fps, self.height, self.width
            ));
        }
        if !(self.motif_strength >= 0.0 && self.motif_strength.is_finite()) {
            return bad(format!(
                "motif_strength {} must be finite and non-negative",
                self.motif_strength
            ));
        }
        let (lo, hi) = self.motif_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("motif_fraction ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if let Some(q) = self.motif_questions.iter().find(|&&q| !(1..=QUESTIONS).contains(&q)) {
            return bad(format!("motif question {q} outside 1..={QUESTIONS}"));
        }
        for (name, v) in [
            ("median_time_s", self.median_time_s),
            ("depressed_time_factor", self.depressed_time_factor),
            ("time_sigma", self.time_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_time_s > 0.0 && self.min_time_s <= self.max_time_s) {
            return bad(format!(
                "answer time range [{}, {}] is empty",
                self.min_time_s, self.max_time_s
            ));
        }
        if frames_for(self.min_time_s, self.fps) < DEFAULT_CLIP_LEN {
            return bad(format!(
                "min_time_s {} at {} fps yields fewer than {DEFAULT_CLIP_LEN} frames",
                self.min_time_s, self.fps
            ));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn subject_seed(seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix(index as u64 + 1))
}

/// Twenty choices summing to a target drawn from the requested SDS class.
fn draw_choices(rng: &mut ChaCha8Rng, sds_positive: bool) -> [u8; QUESTIONS] {
    let t = SDS_THRESHOLD as usize;
    let target = if sds_positive {
        rng.random_range(t..=t + 25)
    } else {
        rng.random_range(t - 25..t)
    };
    let mut choices = [1u8; QUESTIONS];
    let mut sum = QUESTIONS;
    while sum < target {
        let q = rng.random_range(0..QUESTIONS);
        if choices[q] < 4 {
            choices[q] += 1;
            sum += 1;
        }
    }
    choices
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<GrayFrame> {
    let (h, w) = (cfg.height, cfg.width);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (ry, rx) = (h as f64 * 0.42, w as f64 * 0.33);
    let base: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            let d = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
            if d <= 1.0 {
                120.0 - 25.0 * d
            } else {
                40.0
            }
        })
        .collect();
    (0..n)
        .map(|_| {
            let pixels = base
                .iter()
                .map(|&b| (b + rng.random_range(-8.0..8.0)).round().clamp(0.0, 255.0) as u8)
                .collect();
            GrayFrame {
                height: h,
                width: w,
                pixels,
            }
        })
        .collect()
}

/// Adds a Gaussian blob travelling in a straight line across `frames`.
fn plant_blob(frames: &mut [GrayFrame], rng: &mut ChaCha8Rng, amplitude: f64) {
    let Some(first) = frames.first() else { return };
    let (h, w) = (first.height as f64, first.width as f64);
    let radius = (h.min(w) / 10.0).max(1.5);
    let (mut y, mut x) = (rng.random_range(0.3 * h..0.7 * h), rng.random_range(0.3 * w..0.7 * w));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = h.min(w) / 25.0;
    let (vy, vx) = (speed * angle.sin(), speed * angle.cos());
    for f in frames.iter_mut() {
        let width = f.width;
        for (i, px) in f.pixels.iter_mut().enumerate() {
            let (py, pxx) = ((i / width) as f64 + 0.5, (i % width) as f64 + 0.5);
            let d2 = (py - y).powi(2) + (pxx - x).powi(2);
            let add = amplitude * (-d2 / (2.0 * radius * radius)).exp();
            *px = (*px as f64 + add).round().clamp(0.0, 255.0) as u8;
        }
        y = (y + vy).clamp(0.0, h);
        x = (x + vx).clamp(0.0, w);
    }
}

fn generate_subject(cfg: &SynthConfig, index: usize, label: u8, mismatched: bool) -> Result<SubjectSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(cfg.seed, index));
    let sds_positive = (label == 1) != mismatched;
    let choices = draw_choices(&mut rng, sds_positive);

    let median = cfg.median_time_s * if label == 1 { cfg.depressed_time_factor } else { 1.0 };
    let times = LogNormal::new(median.ln(), cfg.time_sigma)
        .map_err(|e| Error::Config(format!("answer time distribution: {e}")))?;

    let mut questions = Vec::with_capacity(QUESTIONS);
    for &choice in &choices {
        let t = times.sample(&mut rng).clamp(cfg.min_time_s, cfg.max_time_s);
        let answer_time_s = (t * 1000.0).round() / 1000.0;
        let n = frames_for(answer_time_s, cfg.fps);
        questions.push(QuestionRecord {
            choice,
            answer_time_s,
            frames: background(cfg, &mut rng, n),
        });
    }

    if label == 1 && cfg.motif_strength > 0.0 {
        let mut clips = Vec::new();
        for (q, rec) in questions.iter().enumerate() {
            for span in clip_spans(rec.frames.len(), DEFAULT_CLIP_LEN, DEFAULT_OVERLAP)? {
                clips.push((q, span.frames()));
            }
        }
        let (lo, hi) = cfg.motif_fraction;
        let fraction = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let k = ((fraction * clips.len() as f64).round() as usize).clamp(1, clips.len());
        // trigger-question clips first, the rest after, each group shuffled
        let (mut first, mut rest): (Vec<usize>, Vec<usize>) = (0..clips.len())
            .partition(|&c| cfg.motif_questions.is_empty() || cfg.motif_questions.contains(&(clips[c].0 + 1)));
        first.shuffle(&mut rng);
        rest.shuffle(&mut rng);
        let mut chosen: Vec<usize> = first.into_iter().chain(rest).take(k).collect();
        chosen.sort_unstable();
        for c in chosen {
            let (q, range) = clips[c].clone();
            plant_blob(&mut questions[q].frames[range], &mut rng, 110.0 * cfg.motif_strength);
        }
    }

    Ok(SubjectSample {
        subject_id: format!("S{index:04}"),
        questions,
        label,
    })
}

/// Balanced, shuffled labels; `mismatches()/2` subjects of each class get an
/// SDS total on the wrong side of the threshold.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.n_subjects / 2;
    let mut labels: Vec<u8> = (0..cfg.n_subjects).map(|i| u8::from(i < half)).collect();
    labels.shuffle(&mut rng);

    let per_class = cfg.mismatches() / 2;
    let mut mismatched = vec![false; cfg.n_subjects];
    for class in [0u8, 1] {
        let members: Vec<usize> = (0..cfg.n_subjects).filter(|&i| labels[i] == class).collect();
        for j in index::sample(&mut rng, members.len(), per_class) {
            mismatched[members[j]] = true;
        }
    }

    let subjects = (0..cfg.n_subjects)
        .map(|i| generate_subject(cfg, i, labels[i], mismatched[i]))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        fps: cfg.fps,
        height: cfg.height,
        width: cfg.width,
        subjects,
    };
    debug_assert_eq!(
        dataset
            .subjects
            .iter()
            .filter(|s| sds_sum_classify(s, SDS_THRESHOLD) != s.label)
            .count(),
        cfg.mismatches()
    );
    Ok(dataset)
}

/// Per-subject motion score: the largest per-clip mean absolute frame
/// difference minus the median over all clips.
pub fn motion_score(sample: &SubjectSample) -> Result<f64> {
    let mut per_clip = Vec::new();
    for q in &sample.questions {
        for span in clip_spans(q.frames.len(), DEFAULT_CLIP_LEN, DEFAULT_OVERLAP)? {
            let frames = &q.frames[span.frames()];
            let mut total = 0.0;
            let mut count = 0usize;
            for pair in frames.windows(2) {
                for (a, b) in pair[0].pixels.iter().zip(&pair[1].pixels) {
                    total += (*a as f64 - *b as f64).abs();
                }
                count += pair[0].pixels.len();
            }
            per_clip.push(total / count.max(1) as f64);
        }
    }
    if per_clip.is_empty() {
        return Err(Error::Input(format!("subject {} has no clips", sample.subject_id)));
    }
    per_clip.sort_by(f64::total_cmp);
    Ok(per_clip[per_clip.len() - 1] - per_clip[per_clip.len() / 2])
}

/// Held-out accuracy of a one-feature threshold probe on [`motion_score`]:
/// fitted on the first half of the subjects, scored on the second half.
pub fn motif_probe_accuracy(dataset: &Dataset) -> Result<f64> {
    let scored: Vec<(f64, u8)> = dataset
        .subjects
        .iter()
        .map(|s| Ok((motion_score(s)?, s.label)))
        .collect::<Result<_>>()?;
    if scored.len() < 4 {
        return Err(Error::Input("probe needs at least four subjects".into()));
    }
    let (train, test) = scored.split_at(scored.len() / 2);
    let acc = |data: &[(f64, u8)], thr: f64| {
        data.iter().filter(|(s, y)| u8::from(*s > thr) == *y).count() as f64 / data.len() as f64
    };
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut candidates: Vec<f64> = train.iter().map(|(s, _)| *s).collect();
    candidates.push(f64::NEG_INFINITY);
    for thr in candidates {
        let a = acc(train, thr);
        if a > best.0 {
            best = (a, thr);
        }
    }
    Ok(acc(test, best.1))
}
