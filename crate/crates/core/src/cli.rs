//! The `rasnet` command line: synth, train, eval, gradcheck.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checks::{check_stage, Stage};
use crate::config::RunConfig;
use crate::dataset::{self, sds_sum_classify, Dataset, SDS_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::model::Modality;
use crate::params::Checkpoint;
use crate::plot;
use crate::trainer::{self, history_csv, kfold_split, CvReport, EvalReport, FoldResult, FoldSplit, Trainer};

#[derive(Parser, Debug)]
#[command(
    name = "rasnet",
    version,
    about = "Depression screening from questionnaire answers and per-question video"
)]
#[command(after_long_help = RunConfig::key_help())]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Print the fully resolved configuration before running.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset into `data_dir`.
    Synth,
    /// Train one model per fold and write checkpoints and histories.
    Train(TrainArgs),
    /// Cross-validated metrics for the model, its ablations and baselines.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Folds to run (default: all).
    #[arg(long)]
    pub fold: Vec<usize>,
    /// Configuration changes applied before training.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Continue from a checkpoint written by `train` (needs one `--fold`).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Folds to evaluate (default: all).
    #[arg(long)]
    pub fold: Vec<usize>,
    /// Evaluate these variants; `none` is the configured model.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Add a questionnaire-only baseline.
    #[arg(long, value_enum)]
    pub baseline: Vec<Baseline>,
    /// Evaluate checkpoints from `train` in this directory instead of training.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Stages to check (default: all).
    #[arg(long, value_parser = parse_stage)]
    pub stage: Vec<Stage>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Corrupt the backward pass of one stage.
    #[arg(long, hide = true, value_parser = parse_stage)]
    pub inject_fault: Option<Stage>,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// The configured model unchanged.
    None,
    /// No temporal kernel.
    #[value(name = "w/o-delta")]
    WithoutDelta,
    /// No answering times.
    #[value(name = "w/o-time")]
    WithoutTime,
    /// Plain neighbor features instead of residuals.
    Fj,
    /// Separate embeddings per block.
    PerBlock,
    /// Non-local aggregation: plain neighbors, no temporal kernel.
    NonLocal,
    /// Score and time only.
    Mlp,
    /// Averaged video-only and score/time-only heads.
    Slf,
    /// Video only.
    VideoOnly,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::None => "ours",
            Ablation::WithoutDelta => "w/o-delta",
            Ablation::WithoutTime => "w/o-time",
            Ablation::Fj => "fj",
            Ablation::PerBlock => "per-block",
            Ablation::NonLocal => "non-local",
            Ablation::Mlp => "mlp",
            Ablation::Slf => "slf",
            Ablation::VideoOnly => "video-only",
        }
    }

    pub fn apply(&self, c: &mut RunConfig) {
        let m = &mut c.model;
        match self {
            Ablation::None => {}
            Ablation::WithoutDelta => m.ras.use_delta = false,
            Ablation::WithoutTime => m.use_time = false,
            Ablation::Fj => m.ras.use_difference = false,
            Ablation::PerBlock => m.ras.per_block_affinity = true,
            Ablation::NonLocal => {
                m.ras.use_difference = false;
                m.ras.use_delta = false;
            }
            Ablation::Mlp => m.modality = Modality::Mlp,
            Ablation::Slf => m.modality = Modality::Slf,
            Ablation::VideoOnly => m.modality = Modality::VideoOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// SDS total at or above 50 means depression.
    SdsSum,
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        c.apply_override(kv)?;
    }
    Ok(c)
}

pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    let mut config = resolve_config(cli)?;
    if let Command::Train(a) = &cli.command {
        for ab in &a.ablate {
            ab.apply(&mut config);
        }
    }
    config.validate()?;
    if cli.print_config {
        write!(out, "{}", config.render())?;
    }
    match &cli.command {
        Command::Synth => cmd_synth(&config, out),
        Command::Train(a) => cmd_train(&config, a, out),
        Command::Eval(a) => cmd_eval(&config, a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

/// FNV-1a over the manifest and every frames file, in manifest order.
pub fn dataset_hash(manifest_path: &Path) -> Result<u64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    let text = std::fs::read_to_string(manifest_path)?;
    feed(text.as_bytes());
    let manifest = dataset::DatasetManifest::parse(&text, &manifest_path.display().to_string())?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    for s in &manifest.subjects {
        for q in &s.questions {
            feed(&std::fs::read(root.join(&q.frames_file))?);
        }
    }
    Ok(h)
}

fn cmd_synth(config: &RunConfig, out: &mut dyn std::io::Write) -> Result<i32> {
    let data = dataset::generate_synthetic(&config.synth_config())?;
    let path = dataset::save(&data, &config.data_dir)?;
    writeln!(out, "{}", data.agreement(SDS_THRESHOLD))?;
    writeln!(out, "wrote {} subjects to {}", data.subjects.len(), path.display())?;
    writeln!(out, "dataset hash {:016x}", dataset_hash(&path)?)?;
    Ok(0)
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let data = dataset::load(&config.data_dir)?;
    let e = &config.model.encoder;
    if (data.height, data.width) != (e.height, e.width) {
        return Err(Error::Config(format!(
            "dataset frames are {}x{}, model input is {}x{}",
            data.height, data.width, e.height, e.width
        )));
    }
    data.validate(e.clip_len)?;
    Ok(data)
}

fn split_for(config: &RunConfig, data: &Dataset) -> Result<FoldSplit> {
    kfold_split(&data.ids(), config.folds, config.split_seed)
}

fn folds_or_all(requested: &[usize], split: &FoldSplit) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..split.folds.len()).collect());
    }
    if let Some(k) = requested.iter().find(|&&k| k >= split.folds.len()) {
        return Err(Error::Config(format!("fold {k} out of range 0..{}", split.folds.len())));
    }
    Ok(requested.to_vec())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn fold_dir(config: &RunConfig, fold: usize) -> PathBuf {
    config.out_dir.join(format!("fold{fold}"))
}

fn write_fold(config: &RunConfig, fold: usize, history: &[trainer::EpochRecord], ck: &Checkpoint) -> Result<()> {
    let dir = fold_dir(config, fold);
    write_file(&dir.join("history.csv"), history_csv(history))?;
    write_file(&dir.join("checkpoint.rask"), ck.encode())?;
    write_file(
        &dir.join("accuracy.svg"),
        plot::accuracy_svg(&[(format!("fold {fold}"), history)]),
    )?;
    Ok(())
}

fn cmd_train(config: &RunConfig, args: &TrainArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let data = load_dataset(config)?;
    let split = split_for(config, &data)?;
    let folds = folds_or_all(&args.fold, &split)?;
    let metadata = config.render();

    if let Some(path) = &args.resume {
        let [fold] = folds.as_slice() else {
            return Err(Error::Config("--resume needs exactly one --fold".into()));
        };
        let ck = Checkpoint::load(path)?;
        let mut t = Trainer::from_checkpoint(&ck, config.model_config(), config.train_config())?;
        let train = split.train_indices(*fold);
        let start = t.epoch();
        t.fit_until(&data, &train, &split.folds[*fold], config.train.epochs, |_| {})?;
        write_fold(config, *fold, &t.history, &t.checkpoint(&metadata))?;
        writeln!(
            out,
            "fold {fold}: resumed at epoch {start}, trained to epoch {}",
            t.epoch()
        )?;
        return Ok(0);
    }

    let report = trainer::cross_validate(
        &data,
        &split,
        &folds,
        &config.model_config(),
        &config.train_config(),
        &metadata,
        args.jobs,
    )?;
    for f in &report.folds {
        write_fold(config, f.fold, &f.history, &f.checkpoint)?;
        let last = f.history.last().copied();
        writeln!(
            out,
            "fold {}: {} epochs, final loss {:.4}, val acc {:.3} -> {}",
            f.fold,
            f.history.len(),
            last.map(|r| r.loss).unwrap_or(f64::NAN),
            f.report.accuracy,
            fold_dir(config, f.fold).display()
        )?;
    }
    Ok(0)
}

/// Held-out evaluation of one variant on one seed.
struct VariantRun {
    variant: String,
    seed: u64,
    report: CvReport,
}

fn baseline_report(data: &Dataset, split: &FoldSplit, folds: &[usize]) -> Result<CvReport> {
    let mut results = Vec::new();
    for &k in folds {
        let subjects: Vec<_> = split.folds[k].iter().map(|&i| &data.subjects[i]).collect();
        let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
        let probs: Vec<f64> = subjects
            .iter()
            .map(|s| sds_sum_classify(s, SDS_THRESHOLD) as f64)
            .collect();
        let mut report = EvalReport::from_probs(probs, labels.clone(), 0.5)?;
        let sums: Vec<f64> = subjects.iter().map(|s| s.sds_sum() as f64).collect();
        report.auc = roc_auc(&sums, &labels).ok().map(|r| r.auc);
        results.push(FoldResult {
            fold: k,
            history: Vec::new(),
            report,
            checkpoint: Checkpoint::default(),
        });
    }
    Ok(CvReport { folds: results })
}

fn checkpoint_report(
    dir: &Path,
    data: &Dataset,
    split: &FoldSplit,
    folds: &[usize],
    threshold: f64,
) -> Result<CvReport> {
    let mut results = Vec::new();
    for &k in folds {
        let path = dir.join(format!("fold{k}")).join("checkpoint.rask");
        if !path.is_file() {
            return Err(Error::Reference(path));
        }
        let ck = Checkpoint::load(&path)?;
        let saved = RunConfig::parse(&ck.metadata)
            .map_err(|e| Error::format(path.display().to_string(), 0, format!("bad metadata: {e}")))?;
        let t = Trainer::from_checkpoint(&ck, saved.model_config(), saved.train_config())?;
        let report = trainer::evaluate(&t.model, data, &split.folds[k], threshold)?;
        results.push(FoldResult {
            fold: k,
            history: t.history.clone(),
            report,
            checkpoint: ck,
        });
    }
    Ok(CvReport { folds: results })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_eval(config: &RunConfig, args: &EvalArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let data = load_dataset(config)?;
    let split = split_for(config, &data)?;
    let folds = folds_or_all(&args.fold, &split)?;
    let mut runs: Vec<VariantRun> = Vec::new();

    for b in &args.baseline {
        let name = match b {
            Baseline::SdsSum => "sds-sum",
        };
        runs.push(VariantRun {
            variant: name.into(),
            seed: 0,
            report: baseline_report(&data, &split, &folds)?,
        });
    }
    if let Some(dir) = &args.checkpoints {
        runs.push(VariantRun {
            variant: "checkpoints".into(),
            seed: config.train.seed,
            report: checkpoint_report(dir, &data, &split, &folds, config.train.threshold)?,
        });
    }
    let mut variants = args.ablate.clone();
    if variants.is_empty() && args.baseline.is_empty() && args.checkpoints.is_none() {
        variants.push(Ablation::None);
    }
    for v in &variants {
        let mut c = config.clone();
        v.apply(&mut c);
        c.validate()?;
        for s in 0..c.seeds as u64 {
            let mut tc = c.train_config();
            tc.seed = c.train.seed + s;
            let mut run_cfg = c.clone();
            run_cfg.train.seed = tc.seed;
            let report = trainer::cross_validate(
                &data,
                &split,
                &folds,
                &c.model_config(),
                &tc,
                &run_cfg.render(),
                args.jobs,
            )?;
            runs.push(VariantRun {
                variant: v.name().into(),
                seed: tc.seed,
                report,
            });
        }
    }

    let dir = config.out_dir.join("eval");
    let mut csv = String::from("variant,seed,fold,accuracy,sensitivity,specificity,auc,tp,tn,fp,fn\n");
    for r in &runs {
        for f in &r.report.folds {
            let e = &f.report;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.seed,
                f.fold,
                e.accuracy,
                fmt_opt(e.sensitivity),
                fmt_opt(e.specificity),
                fmt_opt(e.auc),
                e.counts.tp,
                e.counts.tn,
                e.counts.fp,
                e.counts.fn_
            );
        }
    }
    write_file(&dir.join("metrics.csv"), &csv)?;

    // one summary row per variant: mean ± sd over every (seed, fold) run
    let mut text = String::from("variant      accuracy      sensitivity   specificity   AUC\n");
    let mut summary_csv = String::from("variant,metric,mean,sd,n\n");
    let mut names: Vec<&str> = Vec::new();
    for r in &runs {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    let mut curves = Vec::new();
    let mut histories: Vec<(String, Vec<trainer::EpochRecord>)> = Vec::new();
    for name in &names {
        let combined = CvReport {
            folds: runs
                .iter()
                .filter(|r| r.variant == *name)
                .flat_map(|r| r.report.folds.iter().cloned())
                .collect(),
        };
        let cells = [
            ("accuracy", combined.accuracy()),
            ("sensitivity", combined.sensitivity()),
            ("specificity", combined.specificity()),
            ("auc", combined.auc()),
        ];
        let _ = write!(text, "{name:<12}");
        for (metric, s) in cells {
            let shown = s.map(|s| s.to_string()).unwrap_or_else(|| "n/a".into());
            let _ = write!(text, " {shown:<13}");
            if let Some(s) = s {
                let _ = writeln!(summary_csv, "{name},{metric},{},{},{}", s.mean, s.sd, s.n);
            }
        }
        text.push('\n');
        let (p, l) = combined.pooled();
        if let Ok(c) = roc_auc(&p, &l) {
            write_file(&dir.join(format!("roc_{}.csv", file_name(name))), plot::roc_csv(&c))?;
            curves.push((name.to_string(), c));
        }
        if let Some(first) = runs.iter().find(|r| r.variant == *name) {
            for f in &first.report.folds {
                if !f.history.is_empty() {
                    histories.push((format!("{name} fold {}", f.fold), f.history.clone()));
                }
            }
        }
    }
    write_file(&dir.join("summary.csv"), &summary_csv)?;
    write_file(&dir.join("report.txt"), &text)?;
    if !curves.is_empty() {
        let refs: Vec<(String, &crate::metrics::RocCurve)> = curves.iter().map(|(n, c)| (n.clone(), c)).collect();
        write_file(&dir.join("roc.svg"), plot::roc_svg(&refs))?;
    }
    if !histories.is_empty() {
        let refs: Vec<(String, &[trainer::EpochRecord])> =
            histories.iter().map(|(n, h)| (n.clone(), h.as_slice())).collect();
        write_file(&dir.join("accuracy.svg"), plot::accuracy_svg(&refs))?;
    }
    write!(out, "{text}")?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(0)
}

fn file_name(variant: &str) -> String {
    variant.replace('/', "-")
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let stages = if args.stage.is_empty() {
        Stage::ALL.to_vec()
    } else {
        args.stage.clone()
    };
    writeln!(
        out,
        "stage     tensors  worst rel err  worst tensor                  result"
    )?;
    let mut all_passed = true;
    for stage in stages {
        let check = check_stage(stage, args.seed, args.inject_fault)?;
        let (err, name) = check
            .worst()
            .map(|w| (w.report.max_rel_error, w.name.clone()))
            .unwrap_or((0.0, String::new()));
        let passed = check.passed();
        all_passed &= passed;
        writeln!(
            out,
            "{:<9} {:>7}  {:>13.3e}  {:<29} {}",
            stage.name(),
            check.tensors.len(),
            err,
            name,
            if passed { "pass" } else { "FAIL" }
        )?;
        for t in check.tensors.iter().filter(|t| !t.report.passed) {
            writeln!(
                out,
                "  {} entry {}: analytic {:.9e} numeric {:.9e}",
                t.name, t.report.worst_entry, t.report.analytic, t.report.numeric
            )?;
        }
    }
    Ok(if all_passed { 0 } else { 3 })
}
