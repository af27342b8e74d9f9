use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sparse_iclk::synth::{PairFile, MANIFEST_FILE};
use sparse_iclk::Se3Pose;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-iclk")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"dataset": {"jitter_count": 0}}"#).unwrap();
    path.to_str().unwrap().to_owned()
}

fn gen_dataset(dir: &Path, pairs: &str) -> String {
    let config = write_config(dir);
    let out = dir.join("dataset");
    let o = cli(&[
        "--config",
        &config,
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
        "gen-dataset",
        "--pairs",
        pairs,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(cli(&["--no-such-flag", "gen-scene"]).status.code(), Some(1));
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(cli(&["align", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_block": 1}"#).unwrap();
    assert_eq!(cli(&["--config", bad.to_str().unwrap(), "gen-scene"]).status.code(), Some(2));
}

#[test]
fn align_keeps_an_exact_identity_pair() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = gen_dataset(dir.path(), "1");
    let pair_dir = Path::new(&dataset).join("pair_0000");
    // view 1 replaced by view 0: the true relative pose is the identity
    let mut pf = PairFile::load(&pair_dir).unwrap();
    pf.pair.rgb1 = pf.pair.rgb0.clone();
    pf.pair.depth1 = pf.pair.depth0.clone();
    pf.pair.pose1 = pf.pair.pose0;
    pf.pair.relative_pose = Se3Pose::identity();
    pf.pair.initial_pose = Se3Pose::identity();
    pf.save(&pair_dir).unwrap();

    let out = dir.path().join("align");
    let o = cli(&["--out", out.to_str().unwrap(), "align", pair_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out.join("align.json")).unwrap()).unwrap();
    assert_eq!(printed, written);
    let reports = printed["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    for r in reports {
        assert!(r["e_pixel"].as_f64().unwrap() < 1e-6, "{r}");
    }
    assert_eq!(printed["alignment"]["converged"], Value::Bool(true));
}

#[test]
fn benchmark_and_plot_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = gen_dataset(dir.path(), "2");
    assert!(Path::new(&dataset).join(MANIFEST_FILE).exists());
    let out = dir.path().join("bench");
    let o = cli(&["--out", out.to_str().unwrap(), "benchmark", "--dataset", &dataset]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pose_optimization"));

    let csv = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "pair_id,stage,e_pixel,e_transl,e_rot,epe_3d,converged,iters_l3,iters_l2,iters_l1,iters_l0"
    );
    assert_eq!(lines.count(), 8);

    let report = out.join("report.json");
    let o = cli(&["plot", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for svg in ["stages.svg", "residuals.svg"] {
        assert!(std::fs::read_to_string(out.join(svg)).unwrap().starts_with("<svg"));
    }
}
