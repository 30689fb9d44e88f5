//! Ground-truth backbones and simulated sensor readings.
//!
//! Two generators: a prescribed spline strain field integrated densely, and
//! the static equilibrium of a Cosserat rod clamped at the base and loaded by
//! a tip wrench, found by shooting on the base wrench.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, BasisSpec, StrainCoeffs};
use crate::error::{Error, Result};
use crate::graph::{MeasurementSet, PoseReading, PositionReading, StrainReading};
use crate::lie::{ad, hat, Pose, Twist};
use crate::magnus::magnus_omega;
use crate::ode;

/// Default number of table rows (grid step 1 mm on a 0.4 m rod).
pub const DEFAULT_TABLE_POINTS: usize = 401;
/// RK4 steps per table interval.
const SUBSTEPS: usize = 10;
const SHOOTING_MAX_ITERATIONS: usize = 100;
const SHOOTING_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RodProperties {
    pub length_m: f64,
    pub radius_m: f64,
    pub youngs_modulus_pa: f64,
    pub poisson_ratio: f64,
}

impl Default for RodProperties {
    fn default() -> Self {
        Self {
            length_m: 0.4,
            radius_m: 1e-3,
            youngs_modulus_pa: 54e9,
            poisson_ratio: 0.3,
        }
    }
}

impl RodProperties {
    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus_pa / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius_m.powi(2)
    }

    pub fn second_moment(&self) -> f64 {
        std::f64::consts::PI * self.radius_m.powi(4) / 4.0
    }

    pub fn bending_stiffness(&self) -> f64 {
        self.youngs_modulus_pa * self.second_moment()
    }

    /// `diag(EI, EI, GJ, GA, GA, EA)` with `J = 2I`.
    pub fn stiffness(&self) -> Vector6<f64> {
        let (e, g) = (self.youngs_modulus_pa, self.shear_modulus());
        let (a, i) = (self.area(), self.second_moment());
        Vector6::new(e * i, e * i, g * 2.0 * i, g * a, g * a, e * a)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_m > 0.0
            && self.radius_m > 0.0
            && self.youngs_modulus_pa > 0.0
            && self.poisson_ratio > -1.0
            && self.poisson_ratio < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!(
                "invalid rod properties {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TipWrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_omega_rad: f64,
    pub sigma_r_m: f64,
    pub sigma_k: f64,
    pub sigma_p: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_omega_rad: 0.01,
            sigma_r_m: 1e-3,
            sigma_k: 0.05,
            sigma_p: 0.05,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            sigma_omega_rad: 0.0,
            sigma_r_m: 0.0,
            sigma_k: 0.0,
            sigma_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [
            self.sigma_omega_rad,
            self.sigma_r_m,
            self.sigma_k,
            self.sigma_p,
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "noise standard deviation {v} must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Provenance {
    Prescribed {
        basis: BasisSpec,
        q: Vec<f64>,
    },
    TipWrench {
        rod: RodProperties,
        wrench: TipWrench,
    },
    Table,
}

/// Dense pose and strain tables on a uniform arclength grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub s: Vec<f64>,
    pub poses: Vec<Pose>,
    pub strains: Vec<Twist>,
    /// Internal wrench (body frame) for equilibrium solutions.
    pub wrenches: Option<Vec<Vector6<f64>>>,
    pub provenance: Provenance,
}

fn grid(length: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidScenario(format!(
            "need at least 2 table points, got {points}"
        )));
    }
    let n = (points - 1) as f64;
    Ok((0..points).map(|m| length * m as f64 / n).collect())
}

/// Spline strain field integrated with RK4 at `SUBSTEPS` steps per row.
pub fn gen_prescribed(cfg: &BasisConfig, q: &StrainCoeffs, points: usize) -> Result<GroundTruth> {
    if q.len() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim(),
            got: q.len(),
        });
    }
    let length = cfg.length();
    let s = grid(length, points)?;
    let strains = s
        .iter()
        .map(|&x| cfg.eval_strain(q, x))
        .collect::<Result<Vec<_>>>()?;
    let mut poses = Vec::with_capacity(points);
    poses.push(Pose::identity());
    for m in 1..points {
        let prev = poses[m - 1];
        let next = ode::integrate(&prev, s[m - 1], s[m], SUBSTEPS, |x| {
            cfg.eval_strain(q, x.clamp(0.0, length))
                .expect("arclength clamped to rod")
        });
        poses.push(next);
    }
    Ok(GroundTruth {
        s,
        poses,
        strains,
        wrenches: None,
        provenance: Provenance::Prescribed {
            basis: cfg.spec(),
            q: q.iter().copied().collect(),
        },
    })
}

struct Rod {
    reference: Twist,
    compliance: Vector6<f64>,
    length: f64,
    substeps: usize,
}

impl Rod {
    fn new(props: &RodProperties, substeps: usize) -> Self {
        Self {
            reference: Twist::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            compliance: props.stiffness().map(|k| 1.0 / k),
            length: props.length_m,
            substeps,
        }
    }

    fn strain(&self, w: &Vector6<f64>) -> Twist {
        self.reference + self.compliance.component_mul(w)
    }

    /// `(g', W') = (g ξ̂, ad(ξ)ᵀ W)`.
    fn rate(&self, g: &Matrix4<f64>, w: &Vector6<f64>) -> (Matrix4<f64>, Vector6<f64>) {
        let xi = self.strain(w);
        (g * hat(&xi), ad(&xi).transpose() * w)
    }

    /// Integrates from the clamped base with base wrench `w0`; optionally
    /// records the state at every table row.
    fn shoot(
        &self,
        w0: &Vector6<f64>,
        rows: usize,
        mut record: Option<&mut Vec<(Matrix4<f64>, Vector6<f64>)>>,
    ) -> (Matrix4<f64>, Vector6<f64>) {
        let steps = (rows - 1) * self.substeps;
        let h = self.length / steps as f64;
        let mut g = Matrix4::identity();
        let mut w = *w0;
        if let Some(r) = record.as_deref_mut() {
            r.push((g, w));
        }
        for n in 0..steps {
            let (g1, w1) = self.rate(&g, &w);
            let (g2, w2) = self.rate(&(g + g1 * (0.5 * h)), &(w + w1 * (0.5 * h)));
            let (g3, w3) = self.rate(&(g + g2 * (0.5 * h)), &(w + w2 * (0.5 * h)));
            let (g4, w4) = self.rate(&(g + g3 * h), &(w + w3 * h));
            g += (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);
            w += (w1 + w2 * 2.0 + w3 * 2.0 + w4) * (h / 6.0);
            if (n + 1) % self.substeps == 0 {
                if let Some(r) = record.as_deref_mut() {
                    r.push((g, w));
                }
            }
        }
        (g, w)
    }

    /// Tip wrench mismatch `W(L) − [Rᵀm; Rᵀf]`.
    fn residual(&self, w0: &Vector6<f64>, load: &TipWrench, rows: usize) -> Vector6<f64> {
        let (g, w) = self.shoot(w0, rows, None);
        let r: Matrix3<f64> = g.fixed_view::<3, 3>(0, 0).into_owned();
        let rt = r.transpose();
        let target_m = rt * load.moment;
        let target_f = rt * load.force;
        Vector6::new(
            w[0] - target_m.x,
            w[1] - target_m.y,
            w[2] - target_m.z,
            w[3] - target_f.x,
            w[4] - target_f.y,
            w[5] - target_f.z,
        )
    }

    /// Damped Newton on the base wrench with a forward-difference Jacobian.
    fn newton(
        &self,
        start: &Vector6<f64>,
        load: &TipWrench,
        rows: usize,
    ) -> (Vector6<f64>, f64, usize, bool) {
        let mut w0 = *start;
        let mut r = self.residual(&w0, load, rows);
        let mut norm = r.norm();
        for it in 0..SHOOTING_MAX_ITERATIONS {
            if norm < SHOOTING_TOLERANCE {
                return (w0, norm, it, true);
            }
            let mut jac = Matrix6::zeros();
            for k in 0..6 {
                let step = 1e-7 * w0[k].abs().max(1e-3);
                let mut wp = w0;
                wp[k] += step;
                jac.set_column(k, &((self.residual(&wp, load, rows) - r) / step));
            }
            let Some(delta) = jac.lu().solve(&(-r)) else {
                return (w0, norm, it, false);
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-4 {
                let trial = w0 + delta * alpha;
                let rt = self.residual(&trial, load, rows);
                if rt.iter().all(|v| v.is_finite()) && rt.norm() < norm {
                    w0 = trial;
                    r = rt;
                    norm = r.norm();
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return (w0, norm, it, norm < SHOOTING_TOLERANCE);
            }
        }
        (w0, norm, SHOOTING_MAX_ITERATIONS, norm < SHOOTING_TOLERANCE)
    }
}

/// Base wrench of the undeformed rod under the tip load.
fn straight_guess(length: f64, load: &TipWrench) -> Vector6<f64> {
    let m = Vector3::new(0.0, 0.0, length).cross(&load.force) + load.moment;
    Vector6::new(m.x, m.y, m.z, load.force.x, load.force.y, load.force.z)
}

fn scaled(load: &TipWrench, t: f64) -> TipWrench {
    TipWrench {
        force: load.force * t,
        moment: load.moment * t,
    }
}

/// Static equilibrium of a clamped rod under a tip wrench.
pub fn gen_cosserat_tip_wrench(
    props: &RodProperties,
    load: &TipWrench,
    points: usize,
) -> Result<GroundTruth> {
    props.validate()?;
    if load.force.amax() > 5.0 {
        return Err(Error::InvalidScenario(format!(
            "tip force {:?} N exceeds the 5 N per-axis envelope",
            load.force.as_slice()
        )));
    }
    let s = grid(props.length_m, points)?;
    // Converge on a coarse grid first, then polish at full resolution.
    let coarse = Rod::new(props, 1);
    let rod = Rod::new(props, SUBSTEPS);

    let (mut w0, mut residual, mut iterations, mut ok) =
        coarse.newton(&straight_guess(props.length_m, load), load, points);
    if !ok {
        // Load continuation from the straight rod.
        log::debug!("shooting from straight guess stalled at {residual:e}; continuing in load");
        ok = true;
        for k in 1..=8 {
            let step = scaled(load, k as f64 / 8.0);
            let guess = if k == 1 {
                straight_guess(props.length_m, &step)
            } else {
                w0
            };
            let (w, r, it, conv) = coarse.newton(&guess, &step, points);
            w0 = w;
            residual = r;
            iterations += it;
            if !conv {
                ok = false;
                break;
            }
        }
    }
    if ok {
        let (w, r, it, conv) = rod.newton(&w0, load, points);
        w0 = w;
        residual = r;
        iterations += it;
        ok = conv;
    }
    if !ok {
        return Err(Error::ShootingDiverged {
            iterations,
            residual,
        });
    }

    let mut states = Vec::with_capacity(points);
    rod.shoot(&w0, points, Some(&mut states));
    let poses = states.iter().map(|(g, _)| Pose::from_matrix(g)).collect();
    let strains = states.iter().map(|(_, w)| rod.strain(w)).collect();
    let wrenches = states.iter().map(|(_, w)| *w).collect();
    Ok(GroundTruth {
        s,
        poses,
        strains,
        wrenches: Some(wrenches),
        provenance: Provenance::TipWrench {
            rod: props.clone(),
            wrench: *load,
        },
    })
}

/// Four-point Lagrange interpolation of the strain table.
fn lagrange(s: &[f64], values: &[Twist], x: f64) -> Twist {
    let n = s.len();
    let h = s[1] - s[0];
    let m = ((x - s[0]) / h).floor() as isize;
    let start = (m - 1).clamp(0, n as isize - 4) as usize;
    let mut out = Twist::zeros();
    for j in start..start + 4 {
        let mut w = 1.0;
        for k in start..start + 4 {
            if k != j {
                w *= (x - s[k]) / (s[j] - s[k]);
            }
        }
        out += values[j] * w;
    }
    out
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.s.last().expect("non-empty table")
    }

    pub fn tip(&self) -> &Pose {
        self.poses.last().expect("non-empty table")
    }

    fn spacing(&self) -> f64 {
        self.s[1] - self.s[0]
    }

    /// Row index whose arclength equals `s` up to rounding.
    pub fn row_at(&self, s: f64) -> Option<usize> {
        let m = (s / self.spacing()).round();
        if m < 0.0 || m as usize >= self.len() {
            return None;
        }
        let m = m as usize;
        ((self.s[m] - s).abs() <= 1e-12 * self.length().max(1.0)).then_some(m)
    }

    fn check_range(&self, s: f64) -> Result<()> {
        if s >= 0.0 && s <= self.length() {
            Ok(())
        } else {
            Err(Error::ArclengthOutOfRange {
                s,
                length: self.length(),
            })
        }
    }

    /// Strain at any arclength; interpolated between rows.
    pub fn strain_at(&self, s: f64) -> Result<Twist> {
        self.check_range(s)?;
        Ok(match self.row_at(s) {
            Some(m) => self.strains[m],
            None => lagrange(&self.s, &self.strains, s),
        })
    }

    /// Pose at any arclength; between rows, one two-point Magnus step from
    /// the nearest lower row on the interpolated strain.
    pub fn pose_at(&self, s: f64) -> Result<Pose> {
        self.check_range(s)?;
        if let Some(m) = self.row_at(s) {
            return Ok(self.poses[m]);
        }
        let m = (((s - self.s[0]) / self.spacing()).floor() as usize).min(self.len() - 2);
        let h = s - self.s[m];
        let off = 0.288_675_134_594_812_9 * h;
        let mid = self.s[m] + 0.5 * h;
        let xi1 = lagrange(&self.s, &self.strains, mid - off);
        let xi2 = lagrange(&self.s, &self.strains, mid + off);
        let omega = (xi1 + xi2) * (0.5 * h)
            + crate::lie::bracket(&xi1, &xi2) * (0.144_337_567_297_406_43 * h * h);
        Ok(self.poses[m].compose(&Pose::exp(&omega)))
    }

    /// Largest pose mismatch when each row is re-integrated from the previous
    /// one with RK4 on the interpolated strain table.
    pub fn consistency_residual(&self) -> Result<f64> {
        if self.len() < 4 {
            return Err(Error::InvalidScenario(
                "consistency check needs at least 4 rows".into(),
            ));
        }
        let mut worst: f64 = self.poses[0].log()?.norm();
        for m in 1..self.len() {
            let predicted = ode::integrate(&self.poses[m - 1], self.s[m - 1], self.s[m], 4, |x| {
                lagrange(&self.s, &self.strains, x)
            });
            worst = worst.max(predicted.between(&self.poses[m]).log()?.norm());
        }
        Ok(worst)
    }

    /// Largest `‖W − K(ξ − ξ*)‖` over the rows of an equilibrium solution.
    pub fn constitutive_residual(&self, props: &RodProperties) -> Option<f64> {
        let wrenches = self.wrenches.as_ref()?;
        let k = props.stiffness();
        let reference = Twist::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        Some(
            wrenches
                .iter()
                .zip(&self.strains)
                .map(|(w, xi)| (w - k.component_mul(&(xi - reference))).amax() / w.amax().max(1.0))
                .fold(0.0, f64::max),
        )
    }

    /// Tip boundary mismatch of an equilibrium solution.
    pub fn tip_wrench_residual(&self) -> Option<f64> {
        let (Provenance::TipWrench { wrench, .. }, Some(ws)) = (&self.provenance, &self.wrenches)
        else {
            return None;
        };
        let rt = self.tip().rotation.transpose();
        let w = ws.last()?;
        let m = rt * wrench.moment;
        let f = rt * wrench.force;
        Some((w - Vector6::new(m.x, m.y, m.z, f.x, f.y, f.z)).norm())
    }

    /// Straight-line distance of the tip from the undeformed tip position.
    pub fn tip_displacement(&self) -> f64 {
        (self.tip().translation - Vector3::new(0.0, 0.0, self.length())).norm()
    }

    /// Columnar text: `s R(row-major, 9) t(3) ξ(6)` per row, `#` header lines.
    pub fn to_columnar(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# rodshape ground truth v1");
        let _ = writeln!(
            out,
            "# provenance {}",
            serde_json::to_string(&self.provenance).expect("provenance serializes")
        );
        let _ = writeln!(
            out,
            "# s_m r11 r12 r13 r21 r22 r23 r31 r32 r33 tx_m ty_m tz_m kx_rad_per_m ky_rad_per_m kz_rad_per_m px py pz"
        );
        for m in 0..self.len() {
            let g = &self.poses[m];
            let mut fields = vec![self.s[m]];
            for r in 0..3 {
                for c in 0..3 {
                    fields.push(g.rotation[(r, c)]);
                }
            }
            fields.extend(g.translation.iter());
            fields.extend(self.strains[m].iter());
            let line: Vec<String> = fields.iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_columnar(text: &str, path: &str) -> Result<GroundTruth> {
        let parse_err = |reason: String| Error::Parse {
            path: path.to_string(),
            reason,
        };
        let mut provenance = Provenance::Table;
        let (mut s, mut poses, mut strains) = (Vec::new(), Vec::new(), Vec::new());
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(json) = rest.trim().strip_prefix("provenance ") {
                    provenance = serde_json::from_str(json)
                        .map_err(|e| parse_err(format!("line {}: {e}", ln + 1)))?;
                }
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("line {}: {e}", ln + 1)))?;
            if vals.len() != 19 {
                return Err(parse_err(format!(
                    "line {}: expected 19 columns, got {}",
                    ln + 1,
                    vals.len()
                )));
            }
            let rotation = Matrix3::from_row_slice(&vals[1..10]);
            let translation = Vector3::new(vals[10], vals[11], vals[12]);
            let pose = Pose::new(rotation, translation)
                .or_else(|_| Pose::projected(rotation, translation))
                .map_err(|e| parse_err(format!("line {}: {e}", ln + 1)))?;
            s.push(vals[0]);
            poses.push(pose);
            strains.push(Twist::from_column_slice(&vals[13..19]));
        }
        if s.len() < 4 {
            return Err(parse_err(format!("need at least 4 rows, got {}", s.len())));
        }
        let h = s[1] - s[0];
        if !(h > 0.0)
            || s[0] != 0.0
            || s.windows(2)
                .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0))
        {
            return Err(parse_err(
                "arclengths must start at 0 and be uniformly spaced".into(),
            ));
        }
        Ok(GroundTruth {
            s,
            poses,
            strains,
            wrenches: None,
            provenance,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_columnar())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<GroundTruth> {
        let text = std::fs::read_to_string(path)?;
        Self::from_columnar(&text, &path.display().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Pose,
    Position,
    Strain,
}

/// One sensor: where it sits and the covariance the estimator assigns to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSite {
    pub kind: SensorKind,
    pub s: f64,
    /// Diagonal covariance, 6 entries for pose and strain, 3 for position.
    pub covariance_diag: Vec<f64>,
}

/// Per-(seed, trial) random stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Stream for measurement noise, disjoint from the shape-drawing streams.
pub fn noise_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    trial_rng(seed, trial | (1 << 63))
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite nonnegative sigma");
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Noisy readings at the sensor sites. Pose noise is a body-frame
/// perturbation `g·exp([δω; δr]^)`.
pub fn sample_measurements(
    truth: &GroundTruth,
    sensors: &[SensorSite],
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementSet> {
    noise.validate()?;
    let mut out = MeasurementSet::default();
    for sensor in sensors {
        let expected = if sensor.kind == SensorKind::Position {
            3
        } else {
            6
        };
        if sensor.covariance_diag.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: sensor.covariance_diag.len(),
            });
        }
        match sensor.kind {
            SensorKind::Pose => {
                let g = truth.pose_at(sensor.s)?;
                let dw = gaussian3(rng, noise.sigma_omega_rad);
                let dr = gaussian3(rng, noise.sigma_r_m);
                let value = g.retract(&crate::lie::twist(dw, dr));
                out.pose.push(PoseReading {
                    s: sensor.s,
                    value,
                    covariance: Matrix6::from_diagonal(&Vector6::from_column_slice(
                        &sensor.covariance_diag,
                    )),
                });
            }
            SensorKind::Position => {
                let g = truth.pose_at(sensor.s)?;
                out.position.push(PositionReading {
                    s: sensor.s,
                    value: g.translation + gaussian3(rng, noise.sigma_r_m),
                    covariance: Matrix3::from_diagonal(&Vector3::from_column_slice(
                        &sensor.covariance_diag,
                    )),
                });
            }
            SensorKind::Strain => {
                let xi = truth.strain_at(sensor.s)?;
                let dk = gaussian3(rng, noise.sigma_k);
                let dp = gaussian3(rng, noise.sigma_p);
                out.strain.push(StrainReading {
                    s: sensor.s,
                    value: xi + crate::lie::twist(dk, dp),
                    covariance: Matrix6::from_diagonal(&Vector6::from_column_slice(
                        &sensor.covariance_diag,
                    )),
                });
            }
        }
    }
    Ok(out)
}

/// Sampling box for random tip wrenches, per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrenchBounds {
    pub force_n: f64,
    pub moment_nm: f64,
}

impl Default for WrenchBounds {
    fn default() -> Self {
        Self {
            force_n: 1.5,
            moment_nm: 0.02,
        }
    }
}

impl WrenchBounds {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> TipWrench {
        let mut axis = |bound: f64| {
            if bound == 0.0 {
                0.0
            } else {
                rng.random_range(-bound..=bound)
            }
        };
        let force = Vector3::new(axis(self.force_n), axis(self.force_n), axis(self.force_n));
        let moment = Vector3::new(
            axis(self.moment_nm),
            axis(self.moment_nm),
            axis(self.moment_nm),
        );
        TipWrench { force, moment }
    }
}

/// Converged draws and the reasons for the skipped ones.
#[derive(Clone, Debug)]
pub struct Batch {
    pub truths: Vec<(usize, GroundTruth)>,
    pub failures: Vec<(usize, String)>,
}

/// Draws `count` tip wrenches and solves each equilibrium in parallel.
pub fn batch_generate(
    props: &RodProperties,
    bounds: &WrenchBounds,
    count: usize,
    seed: u64,
    points: usize,
) -> Result<Batch> {
    if count == 0 {
        return Err(Error::InvalidScenario(
            "batch size must be at least 1".into(),
        ));
    }
    let results: Vec<(usize, Result<GroundTruth>)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k as u64);
            let load = bounds.draw(&mut rng);
            (k, gen_cosserat_tip_wrench(props, &load, points))
        })
        .collect();
    let mut batch = Batch {
        truths: Vec::with_capacity(count),
        failures: Vec::new(),
    };
    for (k, r) in results {
        match r {
            Ok(t) => batch.truths.push((k, t)),
            Err(e) => {
                log::warn!("draw {k} skipped: {e}");
                batch.failures.push((k, e.to_string()));
            }
        }
    }
    if batch.failures.len() * 5 > count {
        return Err(Error::BatchAborted {
            failed: batch.failures.len(),
            requested: count,
        });
    }
    Ok(batch)
}

/// Magnus-propagated poses at the given arclengths from a prescribed field;
/// used to cross-check table lookups.
pub fn prescribed_pose(cfg: &BasisConfig, q: &StrainCoeffs, s: f64) -> Result<Pose> {
    let steps = ((s / cfg.length()) * 4000.0).ceil().max(1.0) as usize;
    let mut g = Pose::identity();
    for k in 0..steps {
        let a = s * k as f64 / steps as f64;
        let b = s * (k + 1) as f64 / steps as f64;
        g = g.compose(&Pose::exp(&magnus_omega(cfg, q, a, b)?));
    }
    Ok(g)
}
