//! End-to-end runs: ground truth, noisy readings, MAP estimate, dense query,
//! error statistics and on-disk artifacts.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/manifest.json        config hash, seed, versions
//! <out>/scenario.toml        the resolved scenario
//! <out>/summary.json         accuracy and failures (timing-free, reproducible)
//! <out>/timing.json          wall-clock statistics and the table row
//! <out>/trials/trial_007/    backbone.csv, errors.csv, errors.json, estimate.json, solve.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, BasisSpec};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Values};
use crate::lie::Pose;
use crate::magnus::dense_query;
use crate::metrics::{
    aggregate, pose_errors, strain_errors, table_row, AccuracySummary, ErrorReport, TimingSummary,
};
use crate::scenario::{Scenario, TruthMode};
use crate::solver::{solve, SolveReport};
use crate::truth::{
    batch_generate, gen_prescribed, noise_rng, sample_measurements, trial_rng, Batch, GroundTruth,
};

pub const TRUTH_FORMAT: &str = "rodshape ground truth v1";

/// Stored MAP estimate; enough to reconstruct the backbone anywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub scenario: String,
    pub trial: usize,
    pub length_m: f64,
    pub basis: BasisSpec,
    pub q: Vec<f64>,
    pub nodes: Vec<Pose>,
}

impl Estimate {
    pub fn basis_config(&self) -> Result<BasisConfig> {
        BasisConfig::from_spec(self.length_m, &self.basis)
    }

    pub fn query(&self, s: &[f64]) -> Result<Vec<Pose>> {
        let cfg = self.basis_config()?;
        let q = nalgebra::DVector::from_column_slice(&self.q);
        s.iter()
            .map(|&x| dense_query(&cfg, &q, &self.nodes, x))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Estimate> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `s, r11..r33 (row-major), x_m, y_m, z_m` per row.
pub fn pose_table_csv(s: &[f64], poses: &[Pose]) -> String {
    let mut out = String::from("s_m,r11,r12,r13,r21,r22,r23,r31,r32,r33,x_m,y_m,z_m\n");
    for (x, g) in s.iter().zip(poses) {
        let _ = write!(out, "{x}");
        for i in 0..3 {
            for j in 0..3 {
                let _ = write!(out, ",{}", g.rotation[(i, j)]);
            }
        }
        for v in g.translation.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub report: ErrorReport,
    pub solve: SolveReport,
    pub estimate: Estimate,
    /// Estimated poses on the truth grid.
    pub backbone: Vec<Pose>,
}

/// Ground truths for every trial, with the reasons for draws that failed.
pub fn generate_truths(sc: &Scenario) -> Result<Batch> {
    sc.validate()?;
    match sc.truth {
        TruthMode::Cosserat => batch_generate(
            &sc.rod,
            &sc.wrench_bounds,
            sc.trials,
            sc.seed,
            sc.table_points,
        ),
        TruthMode::Prescribed => {
            let cfg = sc.basis_config()?;
            let truths = (0..sc.trials)
                .into_par_iter()
                .map(|k| {
                    let q = sc.prescribed.draw(&cfg, &mut trial_rng(sc.seed, k as u64));
                    gen_prescribed(&cfg, &q, sc.table_points).map(|t| (k, t))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Batch {
                truths,
                failures: Vec::new(),
            })
        }
    }
}

pub fn truth_file_name(trial: usize) -> String {
    format!("truth_{trial:03}.txt")
}

/// Reads every `truth_NNN.txt` in `dir`, ordered by trial index.
pub fn read_truth_dir(dir: &Path) -> Result<Vec<(usize, GroundTruth)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let Some(index) = name
            .strip_prefix("truth_")
            .and_then(|n| n.strip_suffix(".txt"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        found.push((index, GroundTruth::read(&path)?));
    }
    if found.is_empty() {
        return Err(Error::InvalidScenario(format!(
            "no truth_NNN.txt files in {}",
            dir.display()
        )));
    }
    found.sort_by_key(|(k, _)| *k);
    Ok(found)
}

pub fn write_truths(dir: &Path, truths: &[(usize, GroundTruth)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, t) in truths {
        t.write(&dir.join(truth_file_name(*k)))?;
    }
    Ok(())
}

/// One estimation trial against one ground truth.
pub fn run_trial(sc: &Scenario, trial: usize, truth: &GroundTruth) -> Result<TrialOutcome> {
    if (truth.length() - sc.length()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "truth length {} differs from scenario rod length {}",
            truth.length(),
            sc.length()
        )));
    }
    let settings = sc.graph_settings()?;
    let cfg = settings.basis.clone();
    let meas = sample_measurements(
        truth,
        &sc.sensor_sites()?,
        &sc.noise,
        &mut noise_rng(sc.seed, trial as u64),
    )?;
    let graph = build_graph(&settings, &meas)?;
    let (values, solve_report) = solve(&graph, &Values::straight(&cfg, sc.intervals), &sc.solver)?;

    let start = Instant::now();
    let backbone = truth
        .s
        .iter()
        .map(|&s| dense_query(&cfg, &values.q, &values.poses, s))
        .collect::<Result<Vec<_>>>()?;
    let query_ms = start.elapsed().as_secs_f64() * 1e3;

    let (position_m, orientation_rad) = pose_errors(&truth.s, &backbone, &truth.s, &truth.poses)?;
    let report = ErrorReport {
        s_m: truth.s.clone(),
        position_m,
        orientation_rad,
        strain_abs: strain_errors(&cfg, &values.q, &truth.s, &truth.strains)?,
        iterations: solve_report.iterations,
        converged: solve_report.converged(),
        solve_ms: solve_report.wall_time_ms,
        query_ms,
    };
    let estimate = Estimate {
        scenario: sc.name.clone(),
        trial,
        length_m: sc.length(),
        basis: cfg.spec(),
        q: values.q.iter().copied().collect(),
        nodes: values.poses,
    };
    Ok(TrialOutcome {
        trial,
        report,
        solve: solve_report,
        estimate,
        backbone,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub stage: String,
    pub reason: String,
}

/// Reproducible part of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub trials_requested: usize,
    pub trials_completed: usize,
    pub accuracy: Option<AccuracySummary>,
    pub failures: Vec<TrialFailure>,
}

impl RunSummary {
    /// Every requested trial completed and its solver converged.
    pub fn all_converged(&self) -> bool {
        self.failures.is_empty()
            && self.trials_completed == self.trials_requested
            && self
                .accuracy
                .as_ref()
                .is_some_and(|a| a.converged == a.trials)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub trials: usize,
    pub truth_source: String,
    pub truth_format: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    /// Read ground truths from here instead of generating them.
    pub truth_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: RunSummary,
    pub timing: Option<TimingSummary>,
    pub outcomes: Vec<TrialOutcome>,
}

impl RunResult {
    pub fn table_row(&self) -> Option<String> {
        Some(table_row(
            &self.summary.scenario,
            self.summary.accuracy.as_ref()?,
            self.timing.as_ref()?,
        ))
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidScenario(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trial(dir: &Path, outcome: &TrialOutcome, truth: &GroundTruth) -> Result<()> {
    let dir = dir.join(format!("trial_{:03}", outcome.trial));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("backbone.csv"),
        pose_table_csv(&truth.s, &outcome.backbone),
    )?;
    std::fs::write(
        dir.join("errors.csv"),
        outcome.report.to_csv(truth.length()),
    )?;
    write_json(&dir.join("errors.json"), &outcome.report)?;
    write_json(&dir.join("estimate.json"), &outcome.estimate)?;
    write_json(&dir.join("solve.json"), &outcome.solve)
}

/// Runs every trial of a scenario and, with `opts.out`, writes the artifacts.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunResult> {
    sc.validate()?;
    let (truths, generation_failures) = with_pool(opts.jobs, || match &opts.truth_dir {
        Some(dir) => read_truth_dir(dir).map(|t| (t, Vec::new())),
        None => generate_truths(sc).map(|b| (b.truths, b.failures)),
    })??;
    let requested = match &opts.truth_dir {
        Some(_) => truths.len(),
        None => sc.trials,
    };

    let results: Vec<(usize, Result<TrialOutcome>)> = with_pool(opts.jobs, || {
        truths
            .par_iter()
            .map(|(k, t)| (*k, run_trial(sc, *k, t)))
            .collect()
    })?;

    let mut failures: Vec<TrialFailure> = generation_failures
        .into_iter()
        .map(|(trial, reason)| TrialFailure {
            trial,
            stage: "generate".into(),
            reason,
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    for (trial, r) in results {
        match r {
            Ok(o) => {
                if !o.solve.converged() {
                    failures.push(TrialFailure {
                        trial,
                        stage: "solve".into(),
                        reason: format!(
                            "terminated with {:?} after {} iterations",
                            o.solve.termination, o.solve.iterations
                        ),
                    });
                }
                outcomes.push(o);
            }
            Err(e) => failures.push(TrialFailure {
                trial,
                stage: "estimate".into(),
                reason: e.to_string(),
            }),
        }
    }
    failures.sort_by_key(|f| f.trial);

    let reports: Vec<ErrorReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let (accuracy, timing) = match aggregate(&reports) {
        Ok((a, t)) => (Some(a), Some(t)),
        Err(_) => (None, None),
    };
    let summary = RunSummary {
        scenario: sc.name.clone(),
        trials_requested: requested,
        trials_completed: outcomes.len(),
        accuracy,
        failures,
    };
    let result = RunResult {
        summary,
        timing,
        outcomes,
    };

    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out)?;
        let trials_dir = out.join("trials");
        for (o, (_, t)) in result.outcomes.iter().zip(
            truths
                .iter()
                .filter(|(k, _)| result.outcomes.iter().any(|o| o.trial == *k)),
        ) {
            write_trial(&trials_dir, o, t)?;
        }
        std::fs::write(out.join("scenario.toml"), sc.to_toml())?;
        write_json(&out.join("summary.json"), &result.summary)?;
        write_json(
            &out.join("timing.json"),
            &serde_json::json!({
                "timing": result.timing,
                "table_row": result.table_row(),
            }),
        )?;
        let manifest = Manifest {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: sc.name.clone(),
            config_sha256: sc.config_hash(),
            seed: sc.seed,
            trials: requested,
            truth_source: match &opts.truth_dir {
                Some(d) => format!("files:{}", d.display()),
                None => format!("{:?}", sc.truth).to_lowercase(),
            },
            truth_format: TRUTH_FORMAT.into(),
        };
        write_json(&out.join("manifest.json"), &manifest)?;
    }
    Ok(result)
}

/// Re-aggregates the per-trial error reports stored under a run directory.
pub fn report(run_dir: &Path) -> Result<(String, AccuracySummary, TimingSummary)> {
    let trials = run_dir.join("trials");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&trials)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.sort();
    let reports = dirs
        .iter()
        .filter(|d| d.join("errors.json").is_file())
        .map(|d| {
            Ok(serde_json::from_str(&std::fs::read_to_string(
                d.join("errors.json"),
            )?)?)
        })
        .collect::<Result<Vec<ErrorReport>>>()?;
    let name = Scenario::load(&run_dir.join("scenario.toml"))
        .map(|s| s.name)
        .unwrap_or_else(|_| run_dir.display().to_string());
    let (a, t) = aggregate(&reports)?;
    Ok((name, a, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SensorSpec;
    use crate::truth::{NoiseSpec, SensorKind};

    fn small(name: &str, trials: usize) -> Scenario {
        let mut sc = Scenario::preset(name).unwrap();
        sc.trials = trials;
        sc.table_points = 101;
        sc.seed = 9;
        sc
    }

    #[test]
    fn estimate_query_reproduces_nodes() {
        let sc = small("S1", 1);
        let truths = generate_truths(&sc).unwrap().truths;
        let o = run_trial(&sc, 0, &truths[0].1).unwrap();
        let s: Vec<f64> = (0..=10).map(|i| 0.4 * i as f64 / 10.0).collect();
        let poses = o.estimate.query(&s).unwrap();
        assert_eq!(poses, o.estimate.nodes);
        assert_eq!(o.estimate.query(&[0.0]).unwrap()[0], o.estimate.nodes[0]);
        assert!(o.estimate.query(&[0.41]).is_err());
        assert!(o.report.position_m.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn run_writes_artifacts_and_is_reproducible() {
        let sc = small("S3", 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let opts = |d: &Path| RunOptions {
            out: Some(d.to_path_buf()),
            truth_dir: None,
            jobs: Some(2),
        };
        let ra = run_scenario(&sc, &opts(a.path())).unwrap();
        run_scenario(&sc, &opts(b.path())).unwrap();
        assert!(ra.summary.all_converged());
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(
            read(a.path(), "summary.json"),
            read(b.path(), "summary.json")
        );
        assert_eq!(
            read(a.path(), "trials/trial_001/estimate.json"),
            read(b.path(), "trials/trial_001/estimate.json")
        );
        let manifest: serde_json::Value =
            serde_json::from_slice(&read(a.path(), "manifest.json")).unwrap();
        assert_eq!(manifest["config_sha256"], sc.config_hash());
        let (name, acc, _) = report(a.path()).unwrap();
        assert_eq!(name, "S3");
        assert_eq!(Some(acc), ra.summary.accuracy);
        let csv = String::from_utf8(read(a.path(), "trials/trial_000/backbone.csv")).unwrap();
        assert_eq!(csv.lines().count(), 102);
    }

    #[test]
    fn truth_dir_round_trip_leaves_files_untouched() {
        let sc = small("S2", 2);
        let dir = tempfile::tempdir().unwrap();
        let truths = generate_truths(&sc).unwrap().truths;
        write_truths(dir.path(), &truths).unwrap();
        let before = std::fs::read(dir.path().join("truth_001.txt")).unwrap();
        let opts = RunOptions {
            truth_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let from_files = run_scenario(&sc, &opts).unwrap();
        let direct = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert_eq!(from_files.summary, direct.summary);
        assert_eq!(
            before,
            std::fs::read(dir.path().join("truth_001.txt")).unwrap()
        );
    }

    #[test]
    fn zero_noise_prescribed_truth_is_recovered() {
        let mut sc = small("S1", 2);
        sc.truth = TruthMode::Prescribed;
        sc.noise = NoiseSpec::zero();
        sc.prior.angular_variance = 1e12;
        sc.prior.linear_variance = 1e12;
        sc.sensors = (0..=sc.intervals)
            .map(|i| SensorSpec {
                kind: SensorKind::Pose,
                s_m: crate::magnus::node_arclength(sc.length(), sc.intervals, i),
                covariance_diag: Some(vec![1e-8; 6]),
            })
            .collect();
        let r = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert!(r.summary.all_converged());
        assert!(r.summary.accuracy.unwrap().position_error_mm.mean < 1e-2);
    }

    #[test]
    fn length_mismatch_reported_per_trial() {
        let sc = small("S3", 1);
        let truths = generate_truths(&sc).unwrap().truths;
        let mut other = sc.clone();
        other.rod.length_m = 0.5;
        assert!(matches!(
            run_trial(&other, 0, &truths[0].1),
            Err(Error::GridMismatch(_))
        ));
    }
}
