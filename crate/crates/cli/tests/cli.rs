use std::path::Path;
use std::process::{Command, Output};

use fcan::synth::{generate_clip, save_clip, ClassSet, SceneConfig};

fn fcan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_2_naming_path() {
    let o = fcan(&["train", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"train\": {\n    \"lr_initial\": ,\n  }\n}\n").unwrap();
    let o = fcan(&["eval", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"train": {"decay_iters": [900, 600]}}"#).unwrap();
    let o = fcan(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strictly increasing"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(fcan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(fcan(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(fcan(&["train", "--precision", "f16"]).status.code(), Some(2));
}

#[test]
fn train_without_dataset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nothing");
    let o = fcan(&["train", "--data-dir", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fcan gen"), "{}", stderr(&o));
}

#[test]
fn gradcheck_prints_table() {
    let o = fcan(&["gradcheck", "--precision", "f64", "--trials", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["conv3d", "maxpool3d", "crosslink_chain", "fcan_model"] {
        assert!(out.contains(name), "{out}");
    }
    assert!(!out.contains("FAIL"), "{out}");
}

fn write_flow_dir(dir: &Path) -> usize {
    let scene = SceneConfig {
        frames: 5,
        ..SceneConfig::default()
    };
    let clip = generate_clip(&ClassSet::default(), 0, &scene, 3).unwrap();
    save_clip(&clip, dir, scene.flow_bound).unwrap();
    clip.flow.len()
}

#[test]
fn compensate_writes_residual_flow() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let out = dir.path().join("out");
    let n = write_flow_dir(&input);
    let o = fcan(&[
        "compensate",
        "--input",
        input.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for t in 0..n {
        assert!(out.join(format!("flow_x_{t:05}.pgm")).is_file());
        assert!(out.join(format!("flow_y_{t:05}.pgm")).is_file());
    }
    let fits: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("homographies.json")).unwrap()).unwrap();
    assert_eq!(fits.as_array().unwrap().len(), n);
}

#[test]
fn compensate_rejects_wrong_bound() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_flow_dir(&input);
    let o = fcan(&["compensate", "--input", input.to_str().unwrap(), "--bound", "8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("disagrees"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = fcan::config::RunConfig::load(&root.join("default.json")).unwrap();
    assert_eq!(default, fcan::config::RunConfig::default());
    for name in ["smoke.json", "acceptance.json"] {
        fcan::config::RunConfig::load(&root.join(name)).unwrap();
    }
}
