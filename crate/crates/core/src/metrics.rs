//! Backbone error statistics.
//!
//! Orientation error is the geodesic angle `‖log(R_trueᵀ R_est)‖`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, StrainCoeffs};
use crate::error::{Error, Result};
use crate::lie::{Pose, Twist};

/// Per-node errors of one trial.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub s_m: Vec<f64>,
    pub position_m: Vec<f64>,
    pub orientation_rad: Vec<f64>,
    /// `|ξ_est − ξ_true|` per component, order `[kx, ky, kz, px, py, pz]`.
    pub strain_abs: Vec<[f64; 6]>,
    pub iterations: usize,
    pub converged: bool,
    pub solve_ms: f64,
    pub query_ms: f64,
}

fn same_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} rows",
            a.len(),
            b.len()
        )));
    }
    if let Some((i, (x, y))) = a
        .iter()
        .zip(b)
        .enumerate()
        .find(|(_, (x, y))| (*x - *y).abs() > 1e-12)
    {
        return Err(Error::GridMismatch(format!("row {i}: s = {x} vs {y}")));
    }
    Ok(())
}

/// Position and geodesic orientation errors on a shared arclength grid.
pub fn pose_errors(
    s_est: &[f64],
    est: &[Pose],
    s_true: &[f64],
    truth: &[Pose],
) -> Result<(Vec<f64>, Vec<f64>)> {
    same_grid(s_est, s_true)?;
    if est.len() != s_est.len() || truth.len() != s_true.len() {
        return Err(Error::GridMismatch(
            "pose table and arclength grid differ in length".into(),
        ));
    }
    let pos = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.translation - t.translation).norm())
        .collect();
    let rot = est
        .iter()
        .zip(truth)
        .map(|(e, t)| t.rotation_angle_to(e))
        .collect();
    Ok((pos, rot))
}

/// Componentwise `|eval_strain(q̂, s) − ξ_true(s)|`.
pub fn strain_errors(
    cfg: &BasisConfig,
    q: &StrainCoeffs,
    s: &[f64],
    truth: &[Twist],
) -> Result<Vec<[f64; 6]>> {
    if s.len() != truth.len() {
        return Err(Error::GridMismatch(format!(
            "{} arclengths, {} strains",
            s.len(),
            truth.len()
        )));
    }
    s.iter()
        .zip(truth)
        .map(|(&x, t)| {
            let d = cfg.eval_strain(q, x)? - t;
            Ok(std::array::from_fn(|k| d[k].abs()))
        })
        .collect()
}

impl ErrorReport {
    /// Per-node CSV with raw errors, both normalizations and strain errors.
    pub fn to_csv(&self, length: f64) -> String {
        let max_pos = self.position_m.iter().copied().fold(0.0, f64::max);
        let max_rot = self.orientation_rad.iter().copied().fold(0.0, f64::max);
        let ratio = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
        let mut out = String::from(
            "s_m,position_error_m,position_error_over_length,position_error_over_max,\
             orientation_error_rad,orientation_error_over_max,\
             kx_error_rad_per_m,ky_error_rad_per_m,kz_error_rad_per_m,px_error,py_error,pz_error\n",
        );
        for i in 0..self.s_m.len() {
            let (p, r) = (self.position_m[i], self.orientation_rad[i]);
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                self.s_m[i],
                p,
                p / length,
                ratio(p, max_pos),
                r,
                ratio(r, max_rot)
            );
            if let Some(e) = self.strain_abs.get(i) {
                for v in e {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Accuracy over samples × nodes, in mm and degrees. Free of timing, so it
/// is reproducible bit for bit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub trials: usize,
    pub converged: usize,
    pub position_error_mm: Stat,
    pub orientation_error_deg: Stat,
    pub iterations: Stat,
    /// Mean absolute strain error per component.
    pub strain_error_mean: [f64; 6],
    pub orientation_metric: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub solve_ms: Stat,
    pub query_ms: Stat,
    pub total_ms: Stat,
}

pub fn aggregate(reports: &[ErrorReport]) -> Result<(AccuracySummary, TimingSummary)> {
    if reports.is_empty() {
        return Err(Error::InvalidScenario(
            "cannot aggregate an empty batch".into(),
        ));
    }
    let pos = Stat::of(
        reports
            .iter()
            .flat_map(|r| r.position_m.iter().map(|p| p * 1e3)),
    );
    let rot = Stat::of(
        reports
            .iter()
            .flat_map(|r| r.orientation_rad.iter().map(|a| a.to_degrees())),
    );
    let nodes: usize = reports.iter().map(|r| r.strain_abs.len()).sum();
    let mut strain = [0.0; 6];
    for r in reports {
        for e in &r.strain_abs {
            for k in 0..6 {
                strain[k] += e[k];
            }
        }
    }
    if nodes > 0 {
        strain.iter_mut().for_each(|v| *v /= nodes as f64);
    }
    let accuracy = AccuracySummary {
        trials: reports.len(),
        converged: reports.iter().filter(|r| r.converged).count(),
        position_error_mm: pos,
        orientation_error_deg: rot,
        iterations: Stat::of(reports.iter().map(|r| r.iterations as f64)),
        strain_error_mean: strain,
        orientation_metric: "geodesic angle |log(R_true^T R_est)|".into(),
    };
    let timing = TimingSummary {
        solve_ms: Stat::of(reports.iter().map(|r| r.solve_ms)),
        query_ms: Stat::of(reports.iter().map(|r| r.query_ms)),
        total_ms: Stat::of(reports.iter().map(|r| r.solve_ms + r.query_ms)),
    };
    Ok((accuracy, timing))
}

pub const TABLE_HEADER: &str =
    "Scenario | Pos. Error, mm | Rot. Error, deg | Total Time, ms | Iterations";

/// One row in the layout `name | pos ± std | rot ± std | time | iterations ± std`.
pub fn table_row(name: &str, accuracy: &AccuracySummary, timing: &TimingSummary) -> String {
    format!(
        "{name} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:.2} | {:.2} ± {:.2}",
        accuracy.position_error_mm.mean,
        accuracy.position_error_mm.std,
        accuracy.orientation_error_deg.mean,
        accuracy.orientation_error_deg.std,
        timing.total_ms.mean,
        accuracy.iterations.mean,
        accuracy.iterations.std,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::StrainComponent;
    use nalgebra::{DVector, Vector3};
    use proptest::prelude::*;

    fn table(n: usize) -> (Vec<f64>, Vec<Pose>) {
        let s: Vec<f64> = (0..n).map(|i| 0.4 * i as f64 / (n - 1) as f64).collect();
        let poses = s
            .iter()
            .map(|&x| Pose::exp(&Twist::new(0.0, 2.0 * x, 0.1 * x, 0.0, 0.0, x)))
            .collect();
        (s, poses)
    }

    #[test]
    fn identical_tables_have_zero_error() {
        let (s, p) = table(11);
        let (pos, rot) = pose_errors(&s, &p, &s, &p).unwrap();
        assert!(pos.iter().chain(&rot).all(|v| *v == 0.0));
    }

    #[test]
    fn translated_estimate() {
        let (s, p) = table(11);
        let shifted: Vec<Pose> = p
            .iter()
            .map(|g| Pose::new(g.rotation, g.translation + Vector3::new(0.001, 0.0, 0.0)).unwrap())
            .collect();
        let (pos, rot) = pose_errors(&s, &shifted, &s, &p).unwrap();
        assert!(pos.iter().all(|v| (v - 0.001).abs() < 1e-15));
        assert!(rot.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rotated_node_gives_geodesic_angle() {
        let (s, p) = table(11);
        let mut est = p.clone();
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        let rot = Pose::exp(&crate::lie::twist(
            axis * 5f64.to_radians(),
            Vector3::zeros(),
        ));
        est[4] = Pose::new(rot.rotation * p[4].rotation, p[4].translation).unwrap();
        let (_, err) = pose_errors(&s, &est, &s, &p).unwrap();
        assert!((err[4] - 5f64.to_radians()).abs() < 1e-12);
        assert!(err.iter().enumerate().all(|(i, e)| i == 4 || *e == 0.0));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (s, p) = table(11);
        let (s2, p2) = table(12);
        assert!(matches!(
            pose_errors(&s, &p, &s2, &p2),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn strain_errors_cases() {
        let cfg = BasisConfig::new(0.4, [8, 10, 5, 0, 0, 5]).unwrap();
        let s: Vec<f64> = (0..41).map(|i| 0.01 * i as f64).collect();
        let straight: Vec<Twist> = s.iter().map(|_| *cfg.reference()).collect();
        let zero = DVector::zeros(cfg.dim());
        let e = strain_errors(&cfg, &zero, &s, &straight).unwrap();
        assert!(e.iter().flatten().all(|v| *v == 0.0));

        // Quartic field: errors at the samples equal the fit residuals.
        let quartic = |x: f64| Twist::new(30.0 * (x - 0.2).powi(4), 0.0, 0.0, 0.0, 0.0, 1.0);
        let samples: Vec<(f64, Twist)> = s.iter().map(|&x| (x, quartic(x))).collect();
        let fit = cfg.fit_coeffs(&samples).unwrap();
        let truth: Vec<Twist> = s.iter().map(|&x| quartic(x)).collect();
        let e = strain_errors(&cfg, &fit.coeffs, &s, &truth).unwrap();
        let norm: f64 = e.iter().map(|r| r[0] * r[0]).sum::<f64>().sqrt();
        assert!((norm - fit.residual_norm).abs() < 1e-12);
        assert!(cfg.is_active(StrainComponent::Kx));
    }

    #[test]
    fn aggregate_basics() {
        let zero = ErrorReport {
            s_m: vec![0.0, 0.2],
            position_m: vec![0.0, 0.0],
            orientation_rad: vec![0.0, 0.0],
            strain_abs: vec![[0.0; 6]; 2],
            converged: true,
            ..Default::default()
        };
        let (acc, _) = aggregate(std::slice::from_ref(&zero)).unwrap();
        assert_eq!(acc.position_error_mm, Stat::default());
        let mut a = zero.clone();
        a.position_m = vec![0.002; 2];
        let mut b = zero.clone();
        b.position_m = vec![0.004; 2];
        let (acc, _) = aggregate(&[a, b]).unwrap();
        assert!((acc.position_error_mm.mean - 3.0).abs() < 1e-12);
        assert!(aggregate(&[]).is_err());
        let row = table_row("S1", &acc, &TimingSummary::default());
        assert_eq!(row.matches('|').count(), TABLE_HEADER.matches('|').count());
        assert!(row.starts_with("S1 | 3.00 ± 1.00 | 0.00 ± 0.00"));
    }

    #[test]
    fn csv_has_both_normalizations() {
        let r = ErrorReport {
            s_m: vec![0.0, 0.4],
            position_m: vec![0.001, 0.002],
            orientation_rad: vec![0.0, 0.01],
            strain_abs: vec![[0.0; 6]; 2],
            ..Default::default()
        };
        let csv = r.to_csv(0.4);
        let last: Vec<f64> = csv
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(last.len(), 12);
        assert!((last[2] - 0.005).abs() < 1e-15);
        assert_eq!(last[3], 1.0);
    }

    proptest! {
        #[test]
        fn orientation_error_left_invariant(
            a in prop::array::uniform6(-1.0f64..1.0),
            b in prop::array::uniform6(-1.0f64..1.0),
            c in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let est = Pose::exp(&Twist::from_row_slice(&a));
            let truth = Pose::exp(&Twist::from_row_slice(&b));
            let common = Pose::exp(&Twist::new(c[0], c[1], c[2], 0.0, 0.0, 0.0));
            let s = [0.0];
            let (_, r0) = pose_errors(&s, &[est], &s, &[truth]).unwrap();
            let (_, r1) = pose_errors(&s, &[common * est], &s, &[common * truth]).unwrap();
            prop_assert!((r0[0] - r1[0]).abs() < 1e-9);
        }

        #[test]
        fn aggregate_permutation_invariant(errs in prop::collection::vec(0.0f64..0.01, 2..8), shift in 1usize..7) {
            let reports: Vec<ErrorReport> = errs.iter().map(|e| ErrorReport {
                s_m: vec![0.0],
                position_m: vec![*e],
                orientation_rad: vec![*e],
                strain_abs: vec![[*e; 6]],
                ..Default::default()
            }).collect();
            let mut rotated = reports.clone();
            rotated.rotate_left(shift % reports.len());
            let (a, _) = aggregate(&reports).unwrap();
            let (b, _) = aggregate(&rotated).unwrap();
            prop_assert!((a.position_error_mm.mean - b.position_error_mm.mean).abs() < 1e-12);
            prop_assert!((a.orientation_error_deg.std - b.orientation_error_deg.std).abs() < 1e-9);
            prop_assert_eq!(a.position_error_mm.max, b.position_error_mm.max);
        }
    }
}
