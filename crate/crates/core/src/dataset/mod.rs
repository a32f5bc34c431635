//! Subjects, questions and their videos; on-disk formats; synthetic data.

pub mod format;
mod synth;

pub use format::{decode_frames, encode_frames, load, save, DatasetManifest, QuestionEntry, SubjectEntry};
pub use synth::{generate_synthetic, motif_probe_accuracy, motion_score, SynthConfig};

use crate::clipper::GrayFrame;
use crate::error::{Error, Result};
use crate::fusion::QUESTIONS;

pub const SDS_THRESHOLD: u32 = 50;
pub const MIN_SDS: u32 = 20;
pub const MAX_SDS: u32 = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionRecord {
    /// Likert choice, 1..=4.
    pub choice: u8,
    pub answer_time_s: f64,
    pub frames: Vec<GrayFrame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectSample {
    pub subject_id: String,
    pub questions: Vec<QuestionRecord>,
    /// 1 = depression per final diagnosis.
    pub label: u8,
}

impl SubjectSample {
    pub fn sds_sum(&self) -> u32 {
        self.questions.iter().map(|q| q.choice as u32).sum()
    }

    pub fn validate(&self, fps: u32, min_frames: usize) -> Result<()> {
        let ctx = |msg: String| Error::Input(format!("subject {}: {msg}", self.subject_id));
        if self.questions.len() != QUESTIONS {
            return Err(ctx(format!("{} questions, expected {QUESTIONS}", self.questions.len())));
        }
        if self.label > 1 {
            return Err(ctx(format!("label {} is not 0/1", self.label)));
        }
        for (i, q) in self.questions.iter().enumerate() {
            if !(1..=4).contains(&q.choice) {
                return Err(ctx(format!("question {} choice {} outside 1..=4", i + 1, q.choice)));
            }
            if q.frames.len() < min_frames {
                return Err(ctx(format!(
                    "question {} has {} frames, need at least {min_frames}",
                    i + 1,
                    q.frames.len()
                )));
            }
            let expect = frames_for(q.answer_time_s, fps);
            if q.answer_time_s.is_nan() || q.answer_time_s <= 0.0 || expect != q.frames.len() {
                return Err(ctx(format!(
                    "question {} answer time {} s at {fps} fps implies {expect} frames, found {}",
                    i + 1,
                    q.answer_time_s,
                    q.frames.len()
                )));
            }
        }
        Ok(())
    }
}

/// Frame count for an answer duration.
pub fn frames_for(answer_time_s: f64, fps: u32) -> usize {
    (answer_time_s * fps as f64).round() as usize
}

/// Questionnaire-only baseline: 1 iff the SDS sum reaches `threshold`.
pub fn sds_sum_classify(sample: &SubjectSample, threshold: u32) -> u8 {
    u8::from(sample.sds_sum() >= threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub fps: u32,
    pub height: usize,
    pub width: usize,
    pub subjects: Vec<SubjectSample>,
}

/// Subject counts by (diagnosis, SDS result).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgreementTable {
    pub normal_normal: usize,
    pub normal_depressed: usize,
    pub depressed_normal: usize,
    pub depressed_depressed: usize,
}

impl AgreementTable {
    pub fn total(&self) -> usize {
        self.normal_normal + self.normal_depressed + self.depressed_normal + self.depressed_depressed
    }

    pub fn disagreements(&self) -> usize {
        self.normal_depressed + self.depressed_normal
    }
}

impl std::fmt::Display for AgreementTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Final diagnosis  SDS result  Number")?;
        writeln!(f, "Normal           Normal      {}", self.normal_normal)?;
        writeln!(f, "Normal           Depression  {}", self.normal_depressed)?;
        writeln!(f, "Depression       Normal      {}", self.depressed_normal)?;
        write!(f, "Depression       Depression  {}", self.depressed_depressed)
    }
}

impl Dataset {
    pub fn validate(&self, min_frames: usize) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.subject_id) {
                return Err(Error::Input(format!("duplicate subject id {}", s.subject_id)));
            }
            s.validate(self.fps, min_frames)?;
            for q in &s.questions {
                if q.frames
                    .iter()
                    .any(|f| f.height != self.height || f.width != self.width)
                {
                    return Err(Error::Input(format!(
                        "subject {} has frames that are not {}x{}",
                        s.subject_id, self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn agreement(&self, threshold: u32) -> AgreementTable {
        let mut t = AgreementTable::default();
        for s in &self.subjects {
            match (s.label, sds_sum_classify(s, threshold)) {
                (0, 0) => t.normal_normal += 1,
                (0, _) => t.normal_depressed += 1,
                (_, 0) => t.depressed_normal += 1,
                _ => t.depressed_depressed += 1,
            }
        }
        t
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectSample> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(choices: [u8; 20]) -> SubjectSample {
        SubjectSample {
            subject_id: "s".into(),
            label: 0,
            questions: choices
                .iter()
                .map(|&c| QuestionRecord {
                    choice: c,
                    answer_time_s: 2.0,
                    frames: vec![GrayFrame::filled(1, 1, 0); 10],
                })
                .collect(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(sds_sum_classify(&sample([1; 20]), SDS_THRESHOLD), 0);
        assert_eq!(sds_sum_classify(&sample([4; 20]), SDS_THRESHOLD), 1);
        let mut c = [2u8; 20];
        c[..10].fill(3); // 30 + 20 = 50
        let s = sample(c);
        assert_eq!(s.sds_sum(), 50);
        assert_eq!(sds_sum_classify(&s, SDS_THRESHOLD), 1);
    }

    #[test]
    fn frame_count_must_match_time() {
        let s = sample([2; 20]);
        assert!(s.validate(5, 10).is_ok());
        assert!(s.validate(25, 10).is_err());
    }
}
