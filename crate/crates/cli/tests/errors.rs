use std::process::{Command, Output};

fn mulsmo(data: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mulsmo"))
        .args(args)
        .env("MULSMO_DATA_DIR", data)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

#[test]
fn missing_checkpoint_exits_3_and_names_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulsmo(dir.path(), &["generate", "--content", "a person walks forward"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train-vae"), "{err}");
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulsmo(dir.path(), &["train-vae"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth-data"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"style": {"unknown_field": 1}}"#).unwrap();
    let out = mulsmo(dir.path(), &["synth-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conflicting_style_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulsmo(
        dir.path(),
        &["generate", "--content", "x", "--style-text", "lean", "--style-motion", "m.mot"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_training_profile_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulsmo(dir.path(), &["train-vae", "--profile", "huge"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_data_writes_both_datasets_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = mulsmo(dir.path(), &["synth-data", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for sub in ["datasets/style", "datasets/content"] {
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(sub).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["schema"], 1);
    }
    assert!(dir.path().join("runs/synth-data.run.json").exists());
}
