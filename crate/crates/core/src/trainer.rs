//! Adam, k-fold splitting, the epoch loop and cross-validated evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fusion::bce_loss;
use crate::metrics::{confusion, mean_sd, roc_auc, ConfusionCounts};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Tape, Tensor};
use crate::params::{Checkpoint, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update over every parameter in store order.
    /// Nothing is modified if any gradient is malformed.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for ((id, name, value), g) in store.iter().zip(grads) {
            if g.shape() != value.shape() || self.m[id.index()].shape() != value.shape() {
                return Err(Error::dim(
                    "adam",
                    format!("parameter {name} is {:?}, gradient {:?}", value.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, value) in store.values_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `k` disjoint index sets over a shuffled subject list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// Indices outside fold `k`, ascending.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn ids<'a>(&self, ids: &'a [String], k: usize) -> Vec<&'a str> {
        self.folds[k].iter().map(|&i| ids[i].as_str()).collect()
    }
}

/// Shuffle `0..ids.len()` with `seed` and cut it into `k` folds; the first
/// `n % k` folds get the extra subject. Each fold is sorted.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    let n = ids.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot split {n} subjects into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(FoldSplit { folds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite())
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps.is_nan()
            || a.eps <= 0.0
        {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's subjects.
    pub loss: f64,
    /// Accuracy of the forward passes made during the epoch.
    pub train_acc: f64,
    /// Accuracy on the held-out subjects after the epoch, if any.
    pub val_acc: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,train_acc,val_acc\n");
    for r in history {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.loss, r.train_acc, val);
    }
    s
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Model, optimizer state and history of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam, model.store());
        Ok(Trainer {
            model,
            adam,
            config,
            history: Vec::new(),
            steps: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    /// Forward, backward and one Adam step on a batch; returns the per-subject
    /// losses and probabilities.
    pub fn train_batch(&mut self, data: &Dataset, batch: &[usize]) -> Result<Vec<(f64, f64)>> {
        let tape = Tape::new();
        let p = self.model.store().bind(&tape);
        let mut losses = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(batch.len());
        for &i in batch {
            let s = &data.subjects[i];
            let prob = self.model.forward(&p, &tape, s)?;
            let loss = bce_loss(prob, s.label)?;
            out.push((loss.value().item(), prob.value().item()));
            losses.push(loss);
        }
        let mean = tape.mean_over_set(&losses)?;
        let grads = tape.backward(mean)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .zip(self.model.store().values())
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        self.adam.step(self.model.store_mut(), &grads)?;
        self.steps += 1;
        Ok(out)
    }

    /// One pass over `train` in a per-epoch shuffled order.
    pub fn run_epoch(&mut self, data: &Dataset, train: &[usize], val: &[usize]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let epoch = self.epoch() + 1;
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let results = self.train_batch(data, batch).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, step {}: {msg}", b + 1)),
                other => other,
            })?;
            for (&i, (loss, prob)) in batch.iter().zip(results) {
                loss_sum += loss;
                correct += usize::from(u8::from(prob > self.config.threshold) == data.subjects[i].label);
            }
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            let probs = predict_all(&self.model, data, val)?;
            let labels: Vec<u8> = val.iter().map(|&i| data.subjects[i].label).collect();
            Some(confusion(&probs, &labels, self.config.threshold)?.accuracy()?)
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Train until the history holds `config.epochs` rows.
    pub fn fit(&mut self, data: &Dataset, train: &[usize], val: &[usize]) -> Result<()> {
        self.fit_until(data, train, val, self.config.epochs, |_| {})
    }

    pub fn fit_until(
        &mut self,
        data: &Dataset,
        train: &[usize],
        val: &[usize],
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        while self.epoch() < epochs {
            let r = self.run_epoch(data, train, val)?;
            on_epoch(&r);
        }
        Ok(())
    }

    /// Parameters, optimizer moments, step counters and history.
    pub fn checkpoint(&self, metadata: &str) -> Checkpoint {
        let mut ck = Checkpoint {
            metadata: metadata.to_string(),
            entries: Vec::new(),
        };
        let store = self.model.store();
        ck.push_store("model.", store);
        for (id, name, _) in store.iter() {
            ck.entries
                .push((format!("adam.m.{name}"), self.adam.m[id.index()].clone()));
            ck.entries
                .push((format!("adam.v.{name}"), self.adam.v[id.index()].clone()));
        }
        ck.entries.push((
            "trainer.counters".into(),
            Tensor::from_vec(vec![self.adam.t as f64, self.steps as f64, self.history.len() as f64]),
        ));
        if !self.history.is_empty() {
            let rows: Vec<f64> = self
                .history
                .iter()
                .flat_map(|r| [r.epoch as f64, r.loss, r.train_acc, r.val_acc.unwrap_or(f64::NAN)])
                .collect();
            ck.entries.push((
                "trainer.history".into(),
                Tensor::new(&[self.history.len(), 4], rows).expect("history shape"),
            ));
        }
        ck
    }

    /// Rebuild a trainer from [`Trainer::checkpoint`] output.
    pub fn from_checkpoint(ck: &Checkpoint, model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        let mut model = Model::new(model_config, config.seed)?;
        model.store_mut().load_from(&ck.store_with_prefix("model."))?;
        let missing = |what: String| Error::format("checkpoint", 0, format!("missing entry {what}"));
        let mut adam = AdamState::new(config.adam, model.store());
        for (id, name, value) in model.store().iter() {
            for (slot, key) in [(&mut adam.m, "m"), (&mut adam.v, "v")] {
                let entry = format!("adam.{key}.{name}");
                let t = ck.get(&entry).ok_or_else(|| missing(entry.clone()))?;
                if t.shape() != value.shape() {
                    return Err(Error::format(
                        "checkpoint",
                        0,
                        format!("{entry} has shape {:?}", t.shape()),
                    ));
                }
                slot[id.index()] = t.clone();
            }
        }
        let counters = ck
            .get("trainer.counters")
            .ok_or_else(|| missing("trainer.counters".into()))?;
        let [t, steps, epochs] = counters.data() else {
            return Err(Error::format(
                "checkpoint",
                0,
                "trainer.counters must hold three values",
            ));
        };
        adam.t = *t as u64;
        let history = match ck.get("trainer.history") {
            Some(h) if h.shape() == [*epochs as usize, 4] => h
                .data()
                .chunks(4)
                .map(|r| EpochRecord {
                    epoch: r[0] as usize,
                    loss: r[1],
                    train_acc: r[2],
                    val_acc: (!r[3].is_nan()).then_some(r[3]),
                })
                .collect(),
            None if *epochs == 0.0 => Vec::new(),
            _ => {
                return Err(Error::format(
                    "checkpoint",
                    0,
                    "history does not match the epoch counter",
                ))
            }
        };
        config.validate()?;
        Ok(Trainer {
            model,
            adam,
            config,
            history,
            steps: *steps as u64,
        })
    }
}

pub fn predict_all(model: &Model, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    indices.iter().map(|&i| model.predict(&data.subjects[i])).collect()
}

/// Metrics on one set of subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalReport {
    pub fn from_probs(probs: Vec<f64>, labels: Vec<u8>, threshold: f64) -> Result<Self> {
        let counts = confusion(&probs, &labels, threshold)?;
        Ok(EvalReport {
            accuracy: counts.accuracy()?,
            sensitivity: counts.sensitivity().ok(),
            specificity: counts.specificity().ok(),
            auc: roc_auc(&probs, &labels).ok().map(|r| r.auc),
            counts,
            probs,
            labels,
        })
    }
}

pub fn evaluate(model: &Model, data: &Dataset, indices: &[usize], threshold: f64) -> Result<EvalReport> {
    let probs = predict_all(model, data, indices)?;
    let labels = indices.iter().map(|&i| data.subjects[i].label).collect();
    EvalReport::from_probs(probs, labels, threshold)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
    pub checkpoint: Checkpoint,
}

/// Mean and sample sd of a metric across runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, sd) = mean_sd(values);
        Some(Summary {
            mean,
            sd,
            n: values.len(),
        })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.sd)
    }
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    fn summary(&self, f: impl Fn(&EvalReport) -> Option<f64>) -> Option<Summary> {
        let v: Vec<f64> = self.folds.iter().filter_map(|r| f(&r.report)).collect();
        Summary::of(&v)
    }

    pub fn accuracy(&self) -> Option<Summary> {
        self.summary(|r| Some(r.accuracy))
    }

    pub fn sensitivity(&self) -> Option<Summary> {
        self.summary(|r| r.sensitivity)
    }

    pub fn specificity(&self) -> Option<Summary> {
        self.summary(|r| r.specificity)
    }

    pub fn auc(&self) -> Option<Summary> {
        self.summary(|r| r.auc)
    }

    /// All held-out probabilities and labels, in fold order.
    pub fn pooled(&self) -> (Vec<f64>, Vec<u8>) {
        let mut p = Vec::new();
        let mut l = Vec::new();
        for f in &self.folds {
            p.extend_from_slice(&f.report.probs);
            l.extend_from_slice(&f.report.labels);
        }
        (p, l)
    }
}

/// Train one fold from scratch and evaluate it on its held-out subjects.
pub fn run_fold(
    data: &Dataset,
    split: &FoldSplit,
    fold: usize,
    model_config: &ModelConfig,
    config: &TrainConfig,
    metadata: &str,
) -> Result<FoldResult> {
    if fold >= split.folds.len() {
        return Err(Error::Config(format!(
            "fold {fold} out of range 0..{}",
            split.folds.len()
        )));
    }
    let train = split.train_indices(fold);
    let val = &split.folds[fold];
    let model = Model::new(model_config.clone(), config.seed)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.fit(data, &train, val)?;
    let report = evaluate(&trainer.model, data, val, config.threshold)?;
    Ok(FoldResult {
        fold,
        history: trainer.history.clone(),
        checkpoint: trainer.checkpoint(metadata),
        report,
    })
}

/// Run the listed folds, up to `jobs` at a time; results keep `folds` order.
pub fn cross_validate(
    data: &Dataset,
    split: &FoldSplit,
    folds: &[usize],
    model_config: &ModelConfig,
    config: &TrainConfig,
    metadata: &str,
    jobs: usize,
) -> Result<CvReport> {
    let jobs = jobs.max(1);
    let mut results = Vec::with_capacity(folds.len());
    for chunk in folds.chunks(jobs) {
        let chunk_results: Vec<Result<FoldResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&k| s.spawn(move || run_fold(data, split, k, model_config, config, metadata)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Contract("fold worker panicked".into())))
                })
                .collect()
        });
        for r in chunk_results {
            results.push(r?);
        }
    }
    Ok(CvReport { folds: results })
}
