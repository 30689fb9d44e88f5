//! Scenario configuration: rod, basis, sensors, noise, priors and solver
//! settings, loaded from TOML or taken from the built-in presets.
//!
//! Every dimensional key carries its unit in the name.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisConfig, BasisSpec, StrainCoeffs, StrainComponent};
use crate::error::{Error, Result};
use crate::graph::GraphSettings;
use crate::solver::SolverSettings;
use crate::truth::{
    NoiseSpec, RodProperties, SensorKind, SensorSite, WrenchBounds, DEFAULT_TABLE_POINTS,
};

pub const PRESETS: [&str; 3] = ["S1", "S2", "S3"];

/// Where the ground-truth shapes come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// Static equilibrium under a random tip wrench.
    #[default]
    Cosserat,
    /// Random strain field drawn inside the estimator's own basis.
    Prescribed,
}

/// Distribution of random in-span strain fields: every active component gets
/// a uniform offset in `±offset`, and each of its coefficients an extra
/// uniform ripple in `±ripple`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrescribedSpec {
    pub angular_offset_rad_per_m: f64,
    pub angular_ripple_rad_per_m: f64,
    pub linear_offset: f64,
    pub linear_ripple: f64,
}

impl Default for PrescribedSpec {
    fn default() -> Self {
        Self {
            angular_offset_rad_per_m: 3.0,
            angular_ripple_rad_per_m: 0.5,
            linear_offset: 0.005,
            linear_ripple: 0.001,
        }
    }
}

impl PrescribedSpec {
    pub fn draw(&self, cfg: &BasisConfig, rng: &mut ChaCha8Rng) -> StrainCoeffs {
        let mut q = StrainCoeffs::zeros(cfg.dim());
        let uniform = |rng: &mut ChaCha8Rng, a: f64| {
            if a > 0.0 {
                rng.random_range(-a..=a)
            } else {
                0.0
            }
        };
        for c in StrainComponent::ALL {
            let Some(range) = cfg.block(c) else { continue };
            let (offset, ripple) = if c.is_angular() {
                (self.angular_offset_rad_per_m, self.angular_ripple_rad_per_m)
            } else {
                (self.linear_offset, self.linear_ripple)
            };
            let base = uniform(rng, offset);
            for j in range {
                q[j] = base + uniform(rng, ripple);
            }
        }
        q
    }
}

/// Variances of the strain-coefficient prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub angular_variance: f64,
    pub linear_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            angular_variance: 3000.0,
            linear_variance: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub s_m: f64,
    /// Overrides the inflated noise variance. 6 entries for pose and strain
    /// sensors (angular first), 3 for position sensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_diag: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Number of Magnus intervals `N`; the graph has `N + 1` pose nodes.
    pub intervals: usize,
    #[serde(default = "default_points")]
    pub table_points: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub truth: TruthMode,
    /// Measurement covariances are this factor times the noise variance.
    #[serde(default = "default_inflation")]
    pub covariance_inflation: f64,
    #[serde(default = "default_magnus_variance")]
    pub magnus_variance: f64,
    #[serde(default = "default_true")]
    pub root_constraint: bool,
    pub basis: BasisSpec,
    #[serde(default)]
    pub rod: RodProperties,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub wrench_bounds: WrenchBounds,
    #[serde(default)]
    pub prescribed: PrescribedSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    pub sensors: Vec<SensorSpec>,
}

fn default_points() -> usize {
    DEFAULT_TABLE_POINTS
}
fn default_trials() -> usize {
    60
}
fn default_inflation() -> f64 {
    10.0
}
fn default_magnus_variance() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

impl Scenario {
    fn base(name: &str, basis: BasisSpec, sensors: Vec<SensorSpec>) -> Scenario {
        Scenario {
            name: name.into(),
            intervals: 10,
            table_points: DEFAULT_TABLE_POINTS,
            trials: 60,
            seed: 0,
            truth: TruthMode::Cosserat,
            covariance_inflation: 10.0,
            magnus_variance: 1e-6,
            root_constraint: true,
            basis,
            rod: RodProperties::default(),
            noise: NoiseSpec::default(),
            prior: PriorSpec::default(),
            wrench_bounds: WrenchBounds::default(),
            prescribed: PrescribedSpec::default(),
            solver: SolverSettings::default(),
            sensors,
        }
    }

    /// Built-in scenarios on a 0.4 m rod with ten intervals.
    pub fn preset(name: &str) -> Result<Scenario> {
        let length = RodProperties::default().length_m;
        let at = |kind, fraction: f64| SensorSpec {
            kind,
            s_m: fraction * length,
            covariance_diag: None,
        };
        let sc = match name.to_ascii_uppercase().as_str() {
            "S1" => Self::base(
                "S1",
                BasisSpec {
                    kx: 8,
                    ky: 10,
                    kz: 5,
                    pz: 5,
                    ..Default::default()
                },
                vec![at(SensorKind::Pose, 0.5), at(SensorKind::Pose, 1.0)],
            ),
            "S2" => Self::base(
                "S2",
                BasisSpec {
                    kx: 8,
                    ky: 10,
                    kz: 5,
                    ..Default::default()
                },
                vec![
                    at(SensorKind::Strain, 0.25),
                    at(SensorKind::Strain, 0.5),
                    at(SensorKind::Strain, 0.75),
                    at(SensorKind::Pose, 1.0),
                ],
            ),
            "S3" => Self::base(
                "S3",
                BasisSpec {
                    kx: 4,
                    ky: 4,
                    ..Default::default()
                },
                (1..=5)
                    .map(|k| at(SensorKind::Position, k as f64 / 5.0))
                    .collect(),
            ),
            other => {
                return Err(Error::InvalidScenario(format!(
                    "unknown preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        Ok(sc)
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Self::from_toml(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// A preset name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Scenario> {
        if PRESETS.iter().any(|p| p.eq_ignore_ascii_case(name_or_path)) {
            Self::preset(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Self::load(Path::new(name_or_path))
        } else {
            Err(Error::InvalidScenario(format!(
                "{name_or_path} is neither a preset ({}) nor a scenario file",
                PRESETS.join(", ")
            )))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn length(&self) -> f64 {
        self.rod.length_m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("{}: {msg}", self.name)));
        if self.intervals < 2 {
            return bad(format!("need at least 2 intervals, got {}", self.intervals));
        }
        if self.table_points < 2 {
            return bad("table_points must be at least 2".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.covariance_inflation > 0.0) || !(self.magnus_variance > 0.0) {
            return bad("covariance_inflation and magnus_variance must be positive".into());
        }
        if !(self.prior.angular_variance > 0.0) || !(self.prior.linear_variance > 0.0) {
            return bad("prior variances must be positive".into());
        }
        self.rod.validate()?;
        self.noise.validate()?;
        self.solver.validate()?;
        self.basis_config()?;
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        self.sensor_sites().map(|_| ())
    }

    pub fn basis_config(&self) -> Result<BasisConfig> {
        BasisConfig::from_spec(self.length(), &self.basis)
    }

    pub fn graph_settings(&self) -> Result<GraphSettings> {
        Ok(GraphSettings {
            basis: self.basis_config()?,
            intervals: self.intervals,
            magnus_variance: self.magnus_variance,
            strain_prior_angular: self.prior.angular_variance,
            strain_prior_linear: self.prior.linear_variance,
            root_constraint: self.root_constraint,
        })
    }

    /// Sensor sites with their estimator covariances filled in.
    pub fn sensor_sites(&self) -> Result<Vec<SensorSite>> {
        let n = &self.noise;
        let c = self.covariance_inflation;
        self.sensors
            .iter()
            .map(|spec| {
                if !(0.0..=self.length()).contains(&spec.s_m) {
                    return Err(Error::ArclengthOutOfRange {
                        s: spec.s_m,
                        length: self.length(),
                    });
                }
                let default = match spec.kind {
                    SensorKind::Pose => {
                        let (w, r) = (c * n.sigma_omega_rad.powi(2), c * n.sigma_r_m.powi(2));
                        vec![w, w, w, r, r, r]
                    }
                    SensorKind::Position => vec![c * n.sigma_r_m.powi(2); 3],
                    SensorKind::Strain => {
                        let (k, p) = (c * n.sigma_k.powi(2), c * n.sigma_p.powi(2));
                        vec![k, k, k, p, p, p]
                    }
                };
                let cov = spec.covariance_diag.clone().unwrap_or(default);
                let expected = if spec.kind == SensorKind::Position { 3 } else { 6 };
                if cov.len() != expected {
                    return Err(Error::DimensionMismatch {
                        expected,
                        got: cov.len(),
                    });
                }
                if let Some(v) = cov.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidScenario(format!(
                        "{}: sensor at s = {} has covariance entry {v}; zero-noise scenarios need an explicit covariance_diag",
                        self.name, spec.s_m
                    )));
                }
                Ok(SensorSite {
                    kind: spec.kind,
                    s: spec.s_m,
                    covariance_diag: cov,
                })
            })
            .collect()
    }
}
