use std::path::Path;
use std::process::{Command, Output};

use rodshape::magnus::node_arclength;
use rodshape::pipeline::Estimate;
use rodshape::scenario::{Scenario, SensorSpec, TruthMode};
use rodshape::truth::{GroundTruth, NoiseSpec, SensorKind};

fn rodshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rodshape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Rows of a pose table as `[s, r11..r33, x, y, z]`.
fn parse_table(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn noiseless_node_poses_recover_the_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = Scenario::preset("S1").unwrap();
    sc.name = "S1 noiseless".into();
    sc.trials = 4;
    sc.truth = TruthMode::Prescribed;
    sc.noise = NoiseSpec::zero();
    sc.prior.angular_variance = 1e12;
    sc.prior.linear_variance = 1e12;
    sc.sensors = (0..=sc.intervals)
        .map(|i| SensorSpec {
            kind: SensorKind::Pose,
            s_m: node_arclength(sc.length(), sc.intervals, i),
            covariance_diag: Some(vec![1e-8; 6]),
        })
        .collect();
    let config = dir.path().join("noiseless.toml");
    std::fs::write(&config, sc.to_toml()).unwrap();
    let run = dir.path().join("run");

    let out = rodshape(&["estimate", "--scenario", path(&config), "--out", path(&run)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = read_json(&run.join("summary.json"));
    let mean_mm = summary["accuracy"]["position_error_mm"]["mean"]
        .as_f64()
        .unwrap();
    assert!(mean_mm < 1e-2, "mean position error {mean_mm} mm");
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let out = rodshape(&[
            "estimate",
            "--scenario",
            "S3",
            "--trials",
            "1",
            "--seed",
            "17",
            "--out",
            path(run),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "summary.json",
        "manifest.json",
        "trials/trial_000/estimate.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn truth_files_round_trip_and_stay_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let truths = dir.path().join("truth");
    let run = dir.path().join("run");
    let out = rodshape(&[
        "generate",
        "--scenario",
        "S1",
        "--trials",
        "2",
        "--seed",
        "5",
        "--out",
        path(&truths),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let before = std::fs::read(truths.join("truth_001.txt")).unwrap();

    let out = rodshape(&[
        "estimate",
        "--scenario",
        "S1",
        "--truth-dir",
        path(&truths),
        "--out",
        path(&run),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(std::fs::read(truths.join("truth_001.txt")).unwrap(), before);
    assert!(run.join("trials/trial_001/backbone.csv").is_file());

    // Report over the stored artifacts prints the same row as the run itself.
    let row = String::from_utf8(out.stdout).unwrap();
    let reported = rodshape(&["report", path(&run)]);
    assert!(reported.status.success());
    let timing_free = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| {
                l.split(" | ")
                    .enumerate()
                    .filter(|(i, _)| *i != 3)
                    .map(|(_, c)| c.to_string())
                    .collect()
            })
            .collect()
    };
    assert_eq!(
        timing_free(&String::from_utf8(reported.stdout).unwrap()),
        timing_free(&row)
    );
}

#[test]
fn query_matches_nodes_root_and_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let truths = dir.path().join("truth");
    let run = dir.path().join("run");
    assert!(rodshape(&[
        "generate",
        "--scenario",
        "S1",
        "--trials",
        "1",
        "--seed",
        "8",
        "--out",
        path(&truths)
    ])
    .status
    .success());
    assert!(rodshape(&[
        "estimate",
        "--scenario",
        "S1",
        "--truth-dir",
        path(&truths),
        "--out",
        path(&run)
    ])
    .status
    .success());
    let trial = run.join("trials/trial_000");
    let est = Estimate::read(&trial.join("estimate.json")).unwrap();

    // Node arclengths return the stored node poses.
    let n = est.nodes.len() - 1;
    let s_nodes: Vec<String> = (0..=n)
        .map(|i| node_arclength(est.length_m, n, i).to_string())
        .collect();
    let out = rodshape(&[
        "query",
        "--estimate",
        path(&trial),
        "--s",
        &s_nodes.join(","),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for (row, node) in parse_table(&String::from_utf8(out.stdout).unwrap())
        .iter()
        .zip(&est.nodes)
    {
        for k in 0..3 {
            assert!((row[10 + k] - node.translation[k]).abs() < 1e-12);
        }
    }

    // The root sits at the identity up to the root constraint's tolerance.
    let out = rodshape(&["query", "--estimate", path(&trial), "--s", "0"]);
    let root = &parse_table(&String::from_utf8(out.stdout).unwrap())[0];
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    for (v, e) in root[1..].iter().zip(identity) {
        assert!((v - e).abs() < 1e-8, "root entry {v}");
    }

    // A uniform sweep on the truth grid reproduces the stored position errors.
    let truth = GroundTruth::read(&truths.join("truth_000.txt")).unwrap();
    let csv = dir.path().join("dense.csv");
    let count = truth.s.len().to_string();
    let out = rodshape(&[
        "query",
        "--estimate",
        path(&trial),
        "--uniform",
        &count,
        "--out",
        path(&csv),
    ]);
    assert!(out.status.success());
    let rows = parse_table(&std::fs::read_to_string(&csv).unwrap());
    let errors = read_json(&trial.join("errors.json"));
    let stored = errors["position_m"].as_array().unwrap();
    assert_eq!(rows.len(), stored.len());
    for ((row, g), e) in rows.iter().zip(&truth.poses).zip(stored) {
        let d: f64 = (0..3)
            .map(|k| (row[10 + k] - g.translation[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(
            (d - e.as_f64().unwrap()).abs() < 1e-9,
            "query error {d} vs stored {e}"
        );
    }
}

#[test]
fn query_rejects_arclength_beyond_the_rod() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(rodshape(&[
        "estimate",
        "--scenario",
        "S3",
        "--trials",
        "1",
        "--out",
        path(&run)
    ])
    .status
    .success());
    let out = rodshape(&[
        "query",
        "--estimate",
        path(&run.join("trials/trial_000")),
        "--s",
        "0.41",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside"));
}

#[test]
fn unknown_scenario_is_an_error() {
    let out = rodshape(&["estimate", "--scenario", "S9", "--trials", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("neither a preset"));
}
