//! End-to-end checks of the `lanecast` binary: stage composition,
//! provenance stamping, the sweep's console echo, report idempotency, and
//! the error-path exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanecast::forest::Forest;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lanecast")
}

struct Runner {
    config: PathBuf,
    out: PathBuf,
}

impl Runner {
    /// Config with six grid points and a small forest; the corpus is the
    /// 200-recording platoon battery.
    fn new(dir: &Path) -> Runner {
        let out = dir.join("out");
        let config = dir.join("run.toml");
        let text = format!(
            "seed = 4242\n\n\
             [input]\ndata_dir = {:?}\n\n\
             [synth]\npresets = [\"extraction_battery\"]\n\n\
             [fuzzy]\ncoefficients = [[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.2], [0.5, 0.5], [0.6, 0.1]]\n\n\
             [classifier.forest]\ntrees = 40\n\n\
             [train]\nvariant = \"fuzzy\"\na = 0.2\nb = 0.2\n",
            out.join("synth")
        );
        std::fs::write(&config, text).unwrap();
        Runner { config, out }
    }

    fn run(&self, args: &[&str]) -> Output {
        let output = Command::new(bin())
            .arg("--config")
            .arg(&self.config)
            .arg("--out-dir")
            .arg(&self.out)
            .args(args)
            .output()
            .unwrap();
        assert_eq!(
            output.status.code(),
            Some(0),
            "`lanecast {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&output.stderr)
        );
        output
    }

    fn run_expecting(&self, args: &[&str], code: i32) -> Output {
        let output = Command::new(bin())
            .arg("--config")
            .arg(&self.config)
            .arg("--out-dir")
            .arg(&self.out)
            .args(args)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(code), "`lanecast {}`", args.join(" "));
        output
    }

    fn artifact(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.artifact(rel)).unwrap()
    }
}

fn stamp_line(text: &str) -> &str {
    text.lines().next().unwrap()
}

#[test]
fn pipeline_composes_and_artifacts_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let r = Runner::new(dir.path());
    for stage in ["synth", "extract", "cluster", "build-datasets", "train", "sweep"] {
        r.run(&[stage]);
    }
    let report_out = r.run(&["report"]);
    assert!(String::from_utf8_lossy(&report_out.stdout).contains("1 train runs"));

    // Every CSV artifact opens with the same config hash and seed.
    let stamp = stamp_line(&r.read("extract/windows.csv")).to_string();
    assert!(
        stamp.starts_with("# config_hash=") && stamp.ends_with(" seed=4242"),
        "unexpected stamp {stamp:?}"
    );
    let hash = stamp
        .strip_prefix("# config_hash=")
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(hash.len(), 64, "not a sha-256 hex digest: {hash}");
    for rel in [
        "cluster/styles.csv",
        "cluster/style_report.csv",
        "datasets/F_0.2_0.2_aggregate.csv",
        "runs/F_0.2_0.2_forest/importance.csv",
        "sweep/leaderboard.csv",
        "report/summary.csv",
    ] {
        assert_eq!(stamp_line(&r.read(rel)), stamp, "{rel} stamped differently");
    }

    // JSON artifacts embed the same provenance pair.
    let summary: serde_json::Value = serde_json::from_str(&r.read("report/summary.json")).unwrap();
    assert_eq!(summary["provenance"]["config_hash"], serde_json::json!(hash));
    assert_eq!(summary["provenance"]["seed"], serde_json::json!(4242));
    assert_eq!(summary["extraction"]["qualified_pairs"], serde_json::json!(200));
    assert_eq!(summary["runs"].as_array().unwrap().len(), 1);
    assert!(summary["sweep"].is_object(), "sweep section missing from the report");
    let run = &summary["runs"][0];
    let acc = run["test"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // The stored forest reloads, provenance key and all.
    let forest_text = r.read("runs/F_0.2_0.2_forest/forest.json");
    assert!(forest_text.contains("\"provenance\""));
    Forest::from_json(&forest_text).unwrap();

    // The model file the report names lives next to the run's metrics.
    let model_file = run["model_file"].as_str().unwrap();
    let run_dir = format!(
        "runs/{}_{}",
        run["variant"].as_str().unwrap(),
        run["classifier"].as_str().unwrap()
    );
    assert!(
        r.artifact(&format!("{run_dir}/{model_file}")).exists(),
        "missing model file {model_file} under {run_dir}"
    );

    // One aggregate importance row per feature column.
    let importance = r.read("runs/F_0.2_0.2_forest/importance.csv");
    let mut lines = importance.lines().skip(1);
    assert_eq!(lines.next(), Some("feature,weight"));
    assert_eq!(lines.count(), 32);

    // A flag override is a different effective config: new hash, new seed.
    r.run(&["--seed", "99", "extract"]);
    let restamp = stamp_line(&r.read("extract/windows.csv")).to_string();
    assert!(restamp.ends_with(" seed=99"));
    assert_ne!(restamp, stamp);
}

#[test]
fn sweep_console_echo_matches_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let r = Runner::new(dir.path());
    for stage in ["synth", "extract", "cluster"] {
        r.run(&[stage]);
    }
    let output = r.run(&["sweep"]);
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    assert!(stdout.contains("top 5 of 6 grid rows"), "echo header missing:\n{stdout}");
    let echoed: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("  "))
        .map(|l| &l[2..])
        .collect();

    let csv = r.read("sweep/leaderboard.csv");
    let mut rows = csv.lines().filter(|l| !l.starts_with('#'));
    let header = rows.next().unwrap();
    let top5: Vec<&str> = rows.filter(|l| l.starts_with("F_")).take(5).collect();
    assert_eq!(echoed.first(), Some(&header), "echoed header differs from the CSV");
    assert_eq!(echoed[1..], top5[..], "echoed rows differ from the CSV's top rows");
}

#[test]
fn report_reruns_identically_and_names_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let r = Runner::new(dir.path());

    // Nothing extracted yet: a data error naming every absent artifact.
    let bare = r.run_expecting(&["report"], 2);
    let stderr = String::from_utf8_lossy(&bare.stderr).into_owned();
    assert!(stderr.contains("missing artifacts"), "stderr: {stderr}");
    for piece in ["windows.csv", "manifest.json", "model.json", "styles.csv"] {
        assert!(stderr.contains(piece), "stderr does not name {piece}: {stderr}");
    }

    for stage in ["synth", "extract", "cluster", "report"] {
        r.run(&[stage]);
    }
    let json = r.read("report/summary.json");
    let csv = r.read("report/summary.csv");
    r.run(&["report"]);
    assert_eq!(r.read("report/summary.json"), json, "summary.json changed on rerun");
    assert_eq!(r.read("report/summary.csv"), csv, "summary.csv changed on rerun");
}

#[test]
fn cluster_k_flag_validates_and_k1_collapses_to_general() {
    let dir = tempfile::tempdir().unwrap();
    let r = Runner::new(dir.path());
    r.run(&["synth"]);
    r.run(&["extract"]);

    let bad = r.run_expecting(&["cluster", "--k", "4"], 1);
    assert!(
        String::from_utf8_lossy(&bad.stderr).contains("clustering.k 4 not in 1..=3"),
        "stderr: {}",
        String::from_utf8_lossy(&bad.stderr)
    );

    let single = r.run(&["cluster", "--k", "1"]);
    assert!(
        String::from_utf8_lossy(&single.stderr).contains("single `general` style"),
        "missing k = 1 warning"
    );
    let styles = r.read("cluster/styles.csv");
    let mut rows = styles.lines().skip(1);
    assert_eq!(rows.next(), Some("pair_id,style"));
    assert!(rows.clone().count() > 0);
    assert!(rows.all(|l| l.ends_with(",general")), "non-general style under k = 1");
}
