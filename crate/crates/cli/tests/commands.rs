use std::path::Path;
use std::process::{Command, Output};

fn cvsn(dir: &Path, args: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cvsn"));
    c.current_dir(dir)
        .env_remove("CVSN_OUTPUT_DIR")
        .env_remove("CVSN_PARALLELISM")
        .args(args)
        .args([
            "--set", "generate.days=8",
            "--set", "data.csv=d/s.csv",
            "--set", "data.schema=d/s.schema",
            "--set", "output_dir=out",
            "--set", "data.n_c=6",
            "--set", "data.train_stride=13",
            "--set", "data.eval_stride=17",
            "--set", "train.epochs=2",
            "--set", "model.hidden=4",
            "--set", "model.inner=8",
            "--set", "ensemble.size=2",
        ]);
    c.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&cvsn(a.path(), &["generate"]));
    ok(&cvsn(b.path(), &["generate"]));
    let x = std::fs::read(a.path().join("d/s.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.path().join("d/s.csv")).unwrap());
    let lines = String::from_utf8(x).unwrap().lines().count();
    assert_eq!(lines, 8 * 1440 + 1);
    assert!(a.path().join("d/s.schema").exists());
}

#[test]
fn bad_config_key_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = cvsn(d.path(), &["generate", "--set", "generate.dayz=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dayz"));
}

#[test]
fn missing_data_exits_3_and_missing_checkpoint_exits_5() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(cvsn(d.path(), &["train"]).status.code(), Some(3));
    ok(&cvsn(d.path(), &["generate"]));
    assert_eq!(cvsn(d.path(), &["predict", "--set", "predict.model=none.ckpt"]).status.code(), Some(5));
}

#[test]
fn train_evaluate_and_reproduce() {
    let d = tempfile::tempdir().unwrap();
    ok(&cvsn(d.path(), &["generate"]));
    ok(&cvsn(d.path(), &["train"]));
    let first = std::fs::read(d.path().join("out/model.ckpt")).unwrap();
    ok(&cvsn(d.path(), &["evaluate", "--set", "predict.model=out/model.ckpt"]));
    let eval = std::fs::read_to_string(d.path().join("out/eval.csv")).unwrap();
    assert!(eval.starts_with("# config_hash: "));
    assert!(eval.contains("[per_lead_minute]"));
    let forecasts = std::fs::read_to_string(d.path().join("out/forecasts.csv")).unwrap();
    assert_eq!(
        forecasts.lines().nth(1).unwrap(),
        "issue_timestamp,horizon_qh,q0.01,q0.05,q0.1,q0.25,q0.5,q0.75,q0.9,q0.95,q0.99"
    );
    assert!(forecasts.lines().count() > 10);

    ok(&cvsn(d.path(), &["train"]));
    assert_eq!(first, std::fs::read(d.path().join("out/model.ckpt")).unwrap());

    // Output-dir override through the environment
    let o = Command::new(env!("CARGO_BIN_EXE_cvsn"))
        .current_dir(d.path())
        .env("CVSN_OUTPUT_DIR", "elsewhere")
        .args(["predict", "--set", "data.csv=d/s.csv", "--set", "data.schema=d/s.schema", "--set", "data.n_c=6"])
        .args(["--set", "data.eval_stride=17", "--set", "predict.model=out/model.ckpt"])
        .output()
        .unwrap();
    ok(&o);
    assert!(d.path().join("elsewhere/forecasts.csv").exists());
}

#[test]
fn fingerprint_mismatch_is_a_hard_error() {
    let d = tempfile::tempdir().unwrap();
    ok(&cvsn(d.path(), &["generate"]));
    ok(&cvsn(d.path(), &["train"]));
    let schema = d.path().join("d/s.schema");
    let text = std::fs::read_to_string(&schema).unwrap();
    std::fs::write(&schema, text.replacen("has_delta: true", "has_delta: false", 1)).unwrap();
    let o = cvsn(d.path(), &["predict", "--set", "predict.model=out/model.ckpt"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint"));
}

#[test]
fn ensemble_finetune_and_ablate() {
    let d = tempfile::tempdir().unwrap();
    ok(&cvsn(d.path(), &["generate"]));
    ok(&cvsn(d.path(), &["train-ensemble"]));
    let manifest = std::fs::read_to_string(d.path().join("out/ensemble.json")).unwrap();
    assert!(manifest.contains("members/02/model.ckpt"));
    assert!(manifest.contains("delta_si"));
    ok(&cvsn(d.path(), &["evaluate", "--set", "predict.model=out/ensemble.json"]));

    ok(&cvsn(d.path(), &["train", "--set", "train.zero_features=[\"wind_forecast_next\"]"]));
    ok(&cvsn(
        d.path(),
        &["finetune", "--set", "finetune.checkpoint=out/model.ckpt", "--set", "finetune.new_features=[\"wind_forecast_next\"]", "--set", "finetune.recent_days=2"],
    ));
    assert!(d.path().join("out/finetuned.ckpt").exists());

    let o = cvsn(d.path(), &["ablate", "--set", "ablate.toggles=[\"delta-features\"]"]);
    ok(&o);
    let csv = std::fs::read_to_string(d.path().join("out/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("delta-features,")).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(cvsn(d.path(), &["ablate", "--set", "ablate.toggles=[\"nothing\"]"]).status.code(), Some(2));
}
