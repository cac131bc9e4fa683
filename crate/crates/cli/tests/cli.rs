use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairwash::dataio::{load_map, write_idx_images, write_idx_labels};
use fairwash::models::{save_model, Activation, MlpModel};
use fairwash::RngState;
use serde_json::Value;

fn fairwash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairwash")).args(args).output().unwrap()
}

/// Tiny random 6x6 "images" with three classes.
fn write_data(dir: &Path) {
    let mut rng = RngState::new(3);
    for (name, n) in [("train", 60), ("test", 20)] {
        let pixels: Vec<u8> = (0..n * 36).map(|_| rng.below(256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        write_idx_images(&dir.join(format!("{name}-images")), 6, 6, &pixels, false).unwrap();
        write_idx_labels(&dir.join(format!("{name}-labels")), &labels, false).unwrap();
    }
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let body = format!(
        "seed = 1\noutput_dir = \"out\"\n\n[data]\nkind = \"idx\"\ntrain_images = \"train-images\"\n\
         train_labels = \"train-labels\"\ntest_images = \"test-images\"\ntest_labels = \"test-labels\"\n\n\
         [model]\nhidden = [8]\n\n[explain]\nsamples = 5\n{extra}"
    );
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn setup(extra: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let cfg = config(dir.path(), extra).to_string_lossy().into_owned();
    (dir, cfg)
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn unknown_keys_are_config_errors() {
    let (_dir, cfg) = setup("\n[attack]\ngama = 4.0\n");
    let out = fairwash(&["train", "-c", &cfg, "--json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_of(&out)["error"], "config");
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
}

#[test]
fn missing_config_and_missing_seed_are_config_errors() {
    let out = fairwash(&["train", "-c", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "output_dir = \"out\"\n[data]\nkind = \"credit\"\n").unwrap();
    assert_eq!(fairwash(&["credit-demo", "-c", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn corrupt_data_is_a_data_error() {
    let (dir, cfg) = setup("");
    fs::write(dir.path().join("train-images"), b"not an idx file").unwrap();
    let out = fairwash(&["train", "-c", &cfg, "--json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json_of(&out)["error"], "data");
}

#[test]
fn missing_upstream_artifact_is_a_data_error() {
    let (_dir, cfg) = setup("");
    assert_eq!(fairwash(&["explain", "-c", &cfg]).status.code(), Some(3));
}

#[test]
fn impossible_neighbourhoods_are_runtime_errors() {
    // More neighbours than training samples.
    let (_dir, cfg) = setup("\n[tangent]\nk = 500\nd = 5\n");
    let out = fairwash(&["tangent-sweep", "-c", &cfg, "--json"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json_of(&out)["error"], "runtime");
}

#[test]
fn explain_works_on_an_untrained_model() {
    let (dir, cfg) = setup("");
    let out_dir = dir.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    let model = MlpModel::init(&[36, 8, 3], Activation::Relu, 9).unwrap();
    save_model(&model, &out_dir.join("original.fwm")).unwrap();
    let out = fairwash(&["explain", "-c", &cfg, "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json_of(&out);
    assert_eq!(summary["samples"], 5);
    for method in ["gradient", "xgrad", "intgrad", "lrp_eps", "lrp_zplus"] {
        for i in 0..5 {
            let map = load_map(&out_dir.join(format!("maps/original/{method}/{i:05}.fwmap"))).unwrap();
            assert_eq!(map.shape(), &[6, 6]);
            assert!(map.values().iter().all(|v| v.is_finite()), "{method} {i}");
        }
    }
}

#[test]
fn seed_and_output_flags_override_the_file() {
    let (dir, cfg) = setup("\n[train]\nepochs = 1\n");
    let elsewhere = dir.path().join("elsewhere");
    let out = fairwash(&["train", "-c", &cfg, "--seed", "5", "--output-dir", elsewhere.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "train done");
    assert!(elsewhere.join("original.fwm").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn credit_demo_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "seed = 0\noutput_dir = \"out\"\n[data]\nkind = \"credit\"\n[credit]\nsamples = 2000\n",
    )
    .unwrap();
    let out = fairwash(&["credit-demo", "-c", path.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json_of(&out);
    assert_eq!(s["command"], "credit-demo");
    assert!(s["max_probability_diff"].as_f64().unwrap() <= 1e-9);
    assert!(dir.path().join("out/credit_relevance.csv").is_file());
}
