use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
n_subjects = 4
fps = 5
height = 46
width = 46
median_time_s = 2.4
time_sigma = 0.25
min_time_s = 2
max_time_s = 3
disagreement_rate = 0
channels = 1,1,1,1,2
feature_dim = 4
hidden = 4
blocks = 2
sigma = 4
epochs = 1
folds = 2
";

fn rasnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rasnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    dir
}

#[test]
fn synth_train_resume_eval() {
    let dir = workspace();
    let d = dir.path();
    let o = rasnet(d, &["--config", "tiny.conf", "synth"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("Depression       Depression  2"), "{out}");
    let hash = out.lines().find(|l| l.starts_with("dataset hash")).unwrap().to_string();
    let o = rasnet(d, &["--config", "tiny.conf", "--set", "data_dir=again", "synth"]);
    assert!(text(&o).contains(&hash));

    let o = rasnet(d, &["--config", "tiny.conf", "train"]);
    assert!(o.status.success(), "{}", text(&o));
    for k in 0..2 {
        for f in ["history.csv", "checkpoint.rask", "accuracy.svg"] {
            assert!(d.join(format!("runs/fold{k}/{f}")).is_file(), "fold {k} {f}");
        }
    }
    let history = fs::read_to_string(d.join("runs/fold0/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let o = rasnet(
        d,
        &[
            "--config",
            "tiny.conf",
            "--set",
            "epochs=2",
            "train",
            "--fold",
            "0",
            "--resume",
            "runs/fold0/checkpoint.rask",
        ],
    );
    assert!(o.status.success(), "{}", text(&o));
    let resumed = fs::read_to_string(d.join("runs/fold0/history.csv")).unwrap();
    assert_eq!(resumed.lines().count(), 3);
    assert!(resumed.starts_with(&history));

    let o = rasnet(
        d,
        &[
            "--config",
            "tiny.conf",
            "eval",
            "--checkpoints",
            "runs",
            "--baseline",
            "sds-sum",
        ],
    );
    assert!(o.status.success(), "{}", text(&o));
    let report = fs::read_to_string(d.join("runs/eval/report.txt")).unwrap();
    assert!(report.contains("sds-sum") && report.contains("checkpoints"), "{report}");
    assert!(report.contains("1.000±0.000"), "{report}");
    let metrics = fs::read_to_string(d.join("runs/eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 + 2);
    assert!(d.join("runs/eval/roc.svg").is_file());
    assert!(d.join("runs/eval/roc_sds-sum.csv").is_file());
}

#[test]
fn ablation_eval_runs_each_variant() {
    let dir = workspace();
    let d = dir.path();
    assert!(rasnet(d, &["--config", "tiny.conf", "synth"]).status.success());
    let o = rasnet(
        d,
        &[
            "--config",
            "tiny.conf",
            "eval",
            "--ablate",
            "w/o-delta",
            "--ablate",
            "mlp",
        ],
    );
    assert!(o.status.success(), "{}", text(&o));
    let metrics = fs::read_to_string(d.join("runs/eval/metrics.csv")).unwrap();
    assert!(metrics.lines().filter(|l| l.starts_with("w/o-delta,")).count() == 2);
    assert!(metrics.lines().filter(|l| l.starts_with("mlp,")).count() == 2);
    assert!(d.join("runs/eval/roc_w-o-delta.csv").is_file());
}

#[test]
fn print_config_echoes_resolved_values() {
    let dir = workspace();
    let o = rasnet(
        dir.path(),
        &[
            "--config",
            "tiny.conf",
            "--set",
            "lr=0.5",
            "--print-config",
            "train",
            "--ablate",
            "w/o-delta",
            "--fold",
            "9",
        ],
    );
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("lr = 0.5"), "{out}");
    assert!(out.contains("use_delta = false"), "{out}");
    assert!(out.contains("use_difference = true"), "{out}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = workspace();
    let d = dir.path();
    let code = |args: &[&str]| rasnet(d, args).status.code().unwrap();
    assert_eq!(code(&["--set", "disagreement_rate=0.7", "synth"]), 1);
    assert_eq!(code(&["--set", "bogus=1", "synth"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--config", "tiny.conf", "train"]), 2);
    fs::write(d.join("broken.conf"), "epochs = many\n").unwrap();
    assert_eq!(code(&["--config", "broken.conf", "synth"]), 1);
    assert_eq!(code(&["--config", "missing.conf", "synth"]), 1);

    assert!(rasnet(d, &["--config", "tiny.conf", "synth"]).status.success());
    fs::write(d.join("data/manifest.txt"), "# rasnet dataset manifest\nversion = 7\n").unwrap();
    let o = rasnet(d, &["--config", "tiny.conf", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("offset"), "{}", text(&o));
}

#[test]
fn size_mismatch_is_a_config_error() {
    let dir = workspace();
    let d = dir.path();
    assert!(rasnet(d, &["--config", "tiny.conf", "synth"]).status.success());
    let o = rasnet(
        d,
        &[
            "--config",
            "tiny.conf",
            "--set",
            "height=62",
            "--set",
            "width=62",
            "train",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn gradcheck_passes_and_catches_a_wrong_backward() {
    let dir = workspace();
    let o = rasnet(dir.path(), &["gradcheck"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    for stage in ["encoder", "ras", "fusion", "full"] {
        assert!(
            out.lines().any(|l| l.starts_with(stage) && l.ends_with("pass")),
            "{out}"
        );
    }
    let o = rasnet(dir.path(), &["gradcheck", "--stage", "ras", "--inject-fault", "ras"]);
    assert_eq!(o.status.code(), Some(3));
    let out = text(&o);
    assert!(out.contains("FAIL") && out.contains("ras.block1.omega"), "{out}");
}
