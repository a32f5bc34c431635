//! `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Modality, ModelConfig};
use crate::ras::RasConfig;
use crate::trainer::{AdamConfig, TrainConfig};

/// Every recognised key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "dataset directory (manifest.txt and frames)"),
    ("out_dir", "directory for checkpoints, histories, metrics and plots"),
    ("n_subjects", "synthetic subjects (even)"),
    ("fps", "video frame rate"),
    ("height", "frame and encoder input height"),
    ("width", "frame and encoder input width"),
    (
        "disagreement_rate",
        "fraction of subjects whose SDS result contradicts the label",
    ),
    ("motif_strength", "planted motif amplitude scale; 0 disables it"),
    ("synth_seed", "generator seed"),
    ("median_time_s", "median answering time of control subjects"),
    (
        "depressed_time_factor",
        "answering time multiplier for depressed subjects",
    ),
    ("time_sigma", "log-space sd of answering times"),
    ("min_time_s", "shortest answering time"),
    ("max_time_s", "longest answering time"),
    (
        "motif_fraction_min",
        "lowest fraction of a depressed subject's clips with the motif",
    ),
    (
        "motif_fraction_max",
        "highest fraction of a depressed subject's clips with the motif",
    ),
    (
        "motif_questions",
        "questions that receive motif clips first (empty: any)",
    ),
    ("clip_len", "frames per clip"),
    ("channels", "output channels of the five 3D convolutions"),
    ("feature_dim", "clip feature size"),
    ("hidden", "hidden widths of the fusion head"),
    ("blocks", "attention blocks L"),
    ("sigma", "temporal kernel width"),
    ("use_difference", "residual f_j - f_i aggregation (false: plain f_j)"),
    ("use_delta", "temporal kernel on"),
    (
        "per_block_affinity",
        "separate embeddings per block, affinity from the block input",
    ),
    ("use_time", "feed answering times to the head"),
    ("modality", "full | video-only | mlp | slf"),
    ("epochs", "training epochs"),
    ("batch_size", "subjects per optimizer step"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator offset"),
    ("seed", "initialisation and shuffling seed"),
    ("seeds", "random initialisations per evaluation (seed, seed+1, ...)"),
    ("threshold", "decision threshold on p"),
    ("folds", "cross-validation folds"),
    ("split_seed", "fold assignment seed"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: usize,
    pub folds: usize,
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: 1,
            folds: 5,
            split_seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse::<usize>(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "n_subjects" => s.n_subjects = parse(key, v)?,
            "fps" => s.fps = parse(key, v)?,
            "height" => {
                s.height = parse(key, v)?;
                m.encoder.height = s.height;
            }
            "width" => {
                s.width = parse(key, v)?;
                m.encoder.width = s.width;
            }
            "disagreement_rate" => s.disagreement_rate = parse(key, v)?,
            "motif_strength" => s.motif_strength = parse(key, v)?,
            "synth_seed" => s.seed = parse(key, v)?,
            "median_time_s" => s.median_time_s = parse(key, v)?,
            "depressed_time_factor" => s.depressed_time_factor = parse(key, v)?,
            "time_sigma" => s.time_sigma = parse(key, v)?,
            "min_time_s" => s.min_time_s = parse(key, v)?,
            "max_time_s" => s.max_time_s = parse(key, v)?,
            "motif_fraction_min" => s.motif_fraction.0 = parse(key, v)?,
            "motif_fraction_max" => s.motif_fraction.1 = parse(key, v)?,
            "motif_questions" => s.motif_questions = if v.is_empty() { Vec::new() } else { parse_list(key, v)? },
            "clip_len" => m.encoder.clip_len = parse(key, v)?,
            "channels" => {
                let c = parse_list(key, v)?;
                m.encoder.channels = c
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config(format!("channels: need five values, got {}", c.len())))?;
            }
            "feature_dim" => m.encoder.feature_dim = parse(key, v)?,
            "hidden" => m.hidden = if v.is_empty() { Vec::new() } else { parse_list(key, v)? },
            "blocks" => m.ras.blocks = parse(key, v)?,
            "sigma" => m.ras.sigma = parse(key, v)?,
            "use_difference" => m.ras.use_difference = parse_bool(key, v)?,
            "use_delta" => m.ras.use_delta = parse_bool(key, v)?,
            "per_block_affinity" => m.ras.per_block_affinity = parse_bool(key, v)?,
            "use_time" => m.use_time = parse_bool(key, v)?,
            "modality" => m.modality = v.parse::<Modality>()?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.adam.lr = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "threshold" => t.threshold = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` as it would be written to a file.
    pub fn get(&self, key: &str) -> Result<String> {
        let (s, m, t) = (&self.synth, &self.model, &self.train);
        Ok(match key {
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "n_subjects" => s.n_subjects.to_string(),
            "fps" => s.fps.to_string(),
            "height" => s.height.to_string(),
            "width" => s.width.to_string(),
            "disagreement_rate" => s.disagreement_rate.to_string(),
            "motif_strength" => s.motif_strength.to_string(),
            "synth_seed" => s.seed.to_string(),
            "median_time_s" => s.median_time_s.to_string(),
            "depressed_time_factor" => s.depressed_time_factor.to_string(),
            "time_sigma" => s.time_sigma.to_string(),
            "min_time_s" => s.min_time_s.to_string(),
            "max_time_s" => s.max_time_s.to_string(),
            "motif_fraction_min" => s.motif_fraction.0.to_string(),
            "motif_fraction_max" => s.motif_fraction.1.to_string(),
            "motif_questions" => list(&s.motif_questions),
            "clip_len" => m.encoder.clip_len.to_string(),
            "channels" => list(&m.encoder.channels),
            "feature_dim" => m.encoder.feature_dim.to_string(),
            "hidden" => list(&m.hidden),
            "blocks" => m.ras.blocks.to_string(),
            "sigma" => m.ras.sigma.to_string(),
            "use_difference" => m.ras.use_difference.to_string(),
            "use_delta" => m.ras.use_delta.to_string(),
            "per_block_affinity" => m.ras.per_block_affinity.to_string(),
            "use_time" => m.use_time.to_string(),
            "modality" => m.modality.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "seed" => t.seed.to_string(),
            "seeds" => self.seeds.to_string(),
            "threshold" => t.threshold.to_string(),
            "folds" => self.folds.to_string(),
            "split_seed" => self.split_seed.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, inner(e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("listed key");
            let _ = writeln!(s, "# {doc}\n{key} = {value}");
        }
        s
    }

    /// Help text listing every key and its default.
    pub fn key_help() -> String {
        let d = RunConfig::default();
        let mut s = String::from("Configuration keys (default in brackets):\n");
        for (key, doc) in KEYS {
            let _ = writeln!(s, "  {key:<22} {doc} [{}]", d.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.ras.validate()?;
        self.model.encoder.shape_chain()?;
        if self.seeds == 0 || self.folds < 2 {
            return Err(Error::Config("need seeds >= 1 and folds >= 2".into()));
        }
        if self.model.encoder.clip_len == 0 {
            return Err(Error::Config("clip_len must be positive".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        self.synth.clone()
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone()
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.model.encoder.clone()
    }

    pub fn ras_config(&self) -> RasConfig {
        self.model.ras.clone()
    }

    pub fn adam_config(&self) -> AdamConfig {
        self.train.adam
    }
}

fn inner(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
