//! Manifest text format and the binary frames file.
//!
//! Frames file: magic `RASF`, u32 frame count, u32 height, u32 width
//! (little-endian), then the frames as row-major u8 grayscale.
//!
//! Manifest: `key = value` header lines, then one block per subject:
//!
//! ```text
//! subject S0001
//! label = 1
//! q01 = <choice> <answer seconds> <frames file, relative to the manifest>
//! ...
//! q20 = ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Dataset, QuestionRecord, SubjectSample};
use crate::clipper::GrayFrame;
use crate::error::{Error, Result};
use crate::fusion::QUESTIONS;
use crate::numerics::snapshot::Reader;

pub const FRAMES_MAGIC: &[u8; 4] = b"RASF";
pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_VERSION: u32 = 1;

pub fn encode_frames(frames: &[GrayFrame]) -> Result<Vec<u8>> {
    let (h, w) = frames
        .first()
        .map(|f| (f.height, f.width))
        .ok_or_else(|| Error::Input("cannot store an empty frame sequence".into()))?;
    let mut out = Vec::with_capacity(16 + frames.len() * h * w);
    out.extend_from_slice(FRAMES_MAGIC);
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return Err(Error::dim(
                "frames",
                format!("{}x{} frame among {h}x{w}", f.height, f.width),
            ));
        }
        out.extend_from_slice(&f.pixels);
    }
    Ok(out)
}

pub fn decode_frames(bytes: &[u8], source: &str) -> Result<Vec<GrayFrame>> {
    let mut r = Reader::new(bytes, source);
    r.expect_magic(FRAMES_MAGIC)?;
    let count = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(source, 8, format!("zero frame extent {h}x{w}")));
    }
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        frames.push(GrayFrame::new(h, w, r.take(h * w)?.to_vec())?);
    }
    if !r.at_end() {
        return Err(r.error("trailing bytes after last frame"));
    }
    Ok(frames)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionEntry {
    pub choice: u8,
    pub answer_time_s: f64,
    pub frames_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectEntry {
    pub id: String,
    pub label: u8,
    pub questions: Vec<QuestionEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub fps: u32,
    pub height: usize,
    pub width: usize,
    pub subjects: Vec<SubjectEntry>,
}

fn frames_file_name(subject: &str, q: usize) -> String {
    format!("{subject}/q{q:02}.rasf")
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("# rasnet dataset manifest\n");
        let _ = writeln!(s, "version = {MANIFEST_VERSION}");
        let _ = writeln!(s, "fps = {}", self.fps);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "subjects = {}", self.subjects.len());
        for sub in &self.subjects {
            let _ = writeln!(s, "\nsubject {}", sub.id);
            let _ = writeln!(s, "label = {}", sub.label);
            for (i, q) in sub.questions.iter().enumerate() {
                let _ = writeln!(s, "q{:02} = {} {} {}", i + 1, q.choice, q.answer_time_s, q.frames_file);
            }
            s.push_str("end\n");
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut header: Vec<(String, String)> = Vec::new();
        let mut subjects: Vec<SubjectEntry> = Vec::new();
        let mut current: Option<SubjectEntry> = None;
        let mut offset = 0u64;
        let mut declared_subjects = None;

        for raw in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += raw.len() as u64;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::format(source, line_offset, msg);

            if let Some(id) = line.strip_prefix("subject ") {
                if current.is_some() {
                    return Err(err("subject block opened before the previous one ended".into()));
                }
                let id = id.trim();
                if id.is_empty() || id.contains(char::is_whitespace) {
                    return Err(err(format!("bad subject id {id:?}")));
                }
                current = Some(SubjectEntry {
                    id: id.to_string(),
                    label: u8::MAX,
                    questions: Vec::new(),
                });
                continue;
            }
            if line == "end" {
                let sub = current.take().ok_or_else(|| err("end without subject".into()))?;
                if sub.label > 1 {
                    return Err(err(format!("subject {} has no 0/1 label", sub.id)));
                }
                if sub.questions.len() != QUESTIONS {
                    return Err(err(format!(
                        "subject {} lists {} questions, expected {QUESTIONS}",
                        sub.id,
                        sub.questions.len()
                    )));
                }
                subjects.push(sub);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;

            match current.as_mut() {
                None => {
                    if key == "subjects" {
                        declared_subjects = Some(
                            value
                                .parse::<usize>()
                                .map_err(|_| err(format!("bad subject count {value:?}")))?,
                        );
                    } else {
                        header.push((key.to_string(), value.to_string()));
                    }
                }
                Some(sub) if key == "label" => {
                    sub.label = match value {
                        "0" => 0,
                        "1" => 1,
                        _ => return Err(err(format!("label must be 0 or 1, got {value:?}"))),
                    };
                }
                Some(sub) => {
                    let expected = format!("q{:02}", sub.questions.len() + 1);
                    if key != expected {
                        return Err(err(format!("expected {expected}, got {key}")));
                    }
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    let [choice, time, file] = parts.as_slice() else {
                        return Err(err(format!("{key} needs choice, time and frames file")));
                    };
                    let choice: u8 = choice
                        .parse()
                        .ok()
                        .filter(|c| (1..=4).contains(c))
                        .ok_or_else(|| err(format!("bad choice {choice:?}")))?;
                    let answer_time_s: f64 = time
                        .parse()
                        .ok()
                        .filter(|t: &f64| *t > 0.0 && t.is_finite())
                        .ok_or_else(|| err(format!("bad answer time {time:?}")))?;
                    sub.questions.push(QuestionEntry {
                        choice,
                        answer_time_s,
                        frames_file: file.to_string(),
                    });
                }
            }
        }
        if current.is_some() {
            return Err(Error::format(source, offset, "unterminated subject block"));
        }

        let field = |name: &str| -> Result<usize> {
            let v = header
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::format(source, 0, format!("missing header field {name}")))?;
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::format(source, 0, format!("bad {name} {v:?}")))
        };
        let version = field("version")?;
        if version != MANIFEST_VERSION as usize {
            return Err(Error::format(
                source,
                0,
                format!("unsupported manifest version {version}"),
            ));
        }
        if let Some((k, _)) = header
            .iter()
            .find(|(k, _)| !["version", "fps", "height", "width"].contains(&k.as_str()))
        {
            return Err(Error::format(source, 0, format!("unknown header field {k}")));
        }
        if declared_subjects.is_some_and(|n| n != subjects.len()) {
            return Err(Error::format(
                source,
                offset,
                format!(
                    "header declares {} subjects, found {}",
                    declared_subjects.unwrap_or(0),
                    subjects.len()
                ),
            ));
        }
        Ok(DatasetManifest {
            fps: field("fps")? as u32,
            height: field("height")?,
            width: field("width")?,
            subjects,
        })
    }
}

/// Write `dataset` under `dir`; returns the manifest path.
pub fn save(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut subjects = Vec::with_capacity(dataset.subjects.len());
    for s in &dataset.subjects {
        std::fs::create_dir_all(dir.join(&s.subject_id))?;
        let mut questions = Vec::with_capacity(s.questions.len());
        for (i, q) in s.questions.iter().enumerate() {
            let file = frames_file_name(&s.subject_id, i + 1);
            std::fs::write(dir.join(&file), encode_frames(&q.frames)?)?;
            questions.push(QuestionEntry {
                choice: q.choice,
                answer_time_s: q.answer_time_s,
                frames_file: file,
            });
        }
        subjects.push(SubjectEntry {
            id: s.subject_id.clone(),
            label: s.label,
            questions,
        });
    }
    let manifest = DatasetManifest {
        fps: dataset.fps,
        height: dataset.height,
        width: dataset.width,
        subjects,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.render())?;
    Ok(path)
}

/// Read a manifest (or a directory holding `manifest.txt`) and every
/// frames file it references.
pub fn load(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !manifest_path.exists() {
        return Err(Error::Reference(manifest_path));
    }
    let text = std::fs::read_to_string(&manifest_path)?;
    let source = manifest_path.display().to_string();
    let manifest = DatasetManifest::parse(&text, &source)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let mut questions = Vec::with_capacity(QUESTIONS);
        for q in &entry.questions {
            let fpath = root.join(&q.frames_file);
            if !fpath.is_file() {
                return Err(Error::Reference(fpath));
            }
            let bytes = std::fs::read(&fpath)?;
            let fsource = fpath.display().to_string();
            let frames = decode_frames(&bytes, &fsource)?;
            if let Some(f) = frames.first() {
                if (f.height, f.width) != (manifest.height, manifest.width) {
                    return Err(Error::format(
                        fsource,
                        8,
                        format!(
                            "frames are {}x{}, manifest declares {}x{}",
                            f.height, f.width, manifest.height, manifest.width
                        ),
                    ));
                }
            }
            questions.push(QuestionRecord {
                choice: q.choice,
                answer_time_s: q.answer_time_s,
                frames,
            });
        }
        subjects.push(SubjectSample {
            subject_id: entry.id.clone(),
            questions,
            label: entry.label,
        });
    }
    let dataset = Dataset {
        fps: manifest.fps,
        height: manifest.height,
        width: manifest.width,
        subjects,
    };
    dataset.validate(1)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_layout() {
        let frames = vec![GrayFrame::new(1, 2, vec![7, 8]).unwrap(); 3];
        let b = encode_frames(&frames).unwrap();
        assert_eq!(&b[..4], b"RASF");
        assert_eq!(&b[4..8], &3u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..], &[7, 8, 7, 8, 7, 8]);
        assert_eq!(decode_frames(&b, "mem").unwrap(), frames);
    }

    #[test]
    fn truncated_frames_name_offset() {
        let frames = vec![GrayFrame::new(2, 2, vec![1, 2, 3, 4]).unwrap(); 2];
        let b = encode_frames(&frames).unwrap();
        match decode_frames(&b[..b.len() - 1], "mem") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode_frames(&b[..10], "mem"),
            Err(Error::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn manifest_errors_carry_offsets() {
        let text = "version = 1\nfps = 5\nheight = 4\nwidth = 4\nsubject A\nlabel = 2\n";
        match DatasetManifest::parse(text, "m") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 51),
            other => panic!("unexpected {other:?}"),
        }
    }
}
