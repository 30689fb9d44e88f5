//! Gaussian factors over backbone poses and strain coefficients.
//!
//! Poses are perturbed on the right, `g ← g·exp(δ̂)`, and every Jacobian below
//! is taken with respect to that local coordinate. The strain coefficients
//! live in a vector space and are perturbed additively.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, StrainCoeffs};
use crate::error::{Error, Result};
use crate::lie::{right_jacobian, right_jacobian_inverse, Pose, Twist};
use crate::magnus::magnus_increment;

/// Information weight per axis of a hard-constrained residual.
pub const CONSTRAINED_INFORMATION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableIndex {
    Pose(usize),
    Strain,
}

/// Whitening operator `W` with `WᵀW = Σ⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    sqrt_information: DMatrix<f64>,
}

impl NoiseModel {
    /// Full covariance, factored by Cholesky.
    pub fn from_covariance(covariance: &DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::InvalidScenario("covariance must be square".into()));
        }
        if (covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax().max(1.0) {
            return Err(Error::InvalidScenario(
                "covariance must be symmetric".into(),
            ));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidScenario("covariance is not positive definite".into()))?;
        // Σ = L Lᵀ, so W = L⁻¹ gives WᵀW = Σ⁻¹.
        let l = chol.l();
        let w = l
            .solve_lower_triangular(&DMatrix::identity(covariance.nrows(), covariance.nrows()))
            .ok_or_else(|| Error::InvalidScenario("covariance is singular".into()))?;
        Ok(Self {
            sqrt_information: w,
        })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "variance {v} must be positive"
            )));
        }
        let w = DVector::from_iterator(variances.len(), variances.iter().map(|v| 1.0 / v.sqrt()));
        Ok(Self {
            sqrt_information: DMatrix::from_diagonal(&w),
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::diagonal(&vec![variance; dim])
    }

    /// Zero covariance, realised as a very stiff residual.
    pub fn constrained(dim: usize) -> Self {
        Self {
            sqrt_information: DMatrix::identity(dim, dim) * CONSTRAINED_INFORMATION.sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.sqrt_information.nrows()
    }

    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_information
    }

    pub fn whiten(&self, e: &DVector<f64>) -> DVector<f64> {
        &self.sqrt_information * e
    }

    pub fn whiten_jacobian(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.sqrt_information * j
    }

    /// `eᵀ Σ⁻¹ e`.
    pub fn mahalanobis_squared(&self, e: &DVector<f64>) -> f64 {
        self.whiten(e).norm_squared()
    }
}

#[derive(Clone, Debug)]
pub struct MagnusLinearization {
    pub residual: Twist,
    pub j_start: Matrix6<f64>,
    pub j_end: Matrix6<f64>,
    pub j_q: Matrix6xX<f64>,
}

/// `e = log(exp(−Ω̂) g_i⁻¹ g_{i+1})`.
pub fn magnus_factor_residual(
    cfg: &BasisConfig,
    g_i: &Pose,
    g_ip1: &Pose,
    q: &StrainCoeffs,
    s_i: f64,
    s_ip1: f64,
) -> Result<MagnusLinearization> {
    let inc = magnus_increment(cfg, q, s_i, s_ip1)?;
    let relative = g_i.between(g_ip1);
    let e_pose = Pose::exp(&(-inc.omega)).compose(&relative);
    let e = e_pose.log()?;
    let jr_inv = right_jacobian_inverse(&e);
    let j_start = -jr_inv * relative.inverse().adjoint();
    let d_e_d_omega = -jr_inv * e_pose.inverse().adjoint() * right_jacobian(&inc.omega);
    Ok(MagnusLinearization {
        residual: e,
        j_start,
        j_end: jr_inv,
        j_q: d_e_d_omega * inc.d_omega_dq,
    })
}

/// `e = Φ(s) q + ξ* − ξ̃`; the Jacobian is the basis row itself.
pub fn strain_factor_residual(
    cfg: &BasisConfig,
    q: &StrainCoeffs,
    s: f64,
    measured: &Twist,
) -> Result<(Twist, Matrix6xX<f64>)> {
    let e = cfg.eval_strain(q, s)? - measured;
    Ok((e, cfg.basis_row(s)?))
}

/// `e = log(g̃⁻¹ g)`.
pub fn pose_factor_residual(g: &Pose, measured: &Pose) -> Result<(Twist, Matrix6<f64>)> {
    let e = measured.between(g).log()?;
    Ok((e, right_jacobian_inverse(&e)))
}

/// `e = t(g) − r̃`, blind to orientation.
pub fn position_factor_residual(
    g: &Pose,
    measured: &Vector3<f64>,
) -> (Vector3<f64>, nalgebra::Matrix3x6<f64>) {
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&g.rotation);
    (g.translation - measured, j)
}

/// `e = log(g₀)`, pinning the base frame to the identity.
pub fn root_prior_residual(g0: &Pose) -> Result<(Twist, Matrix6<f64>)> {
    let e = g0.log()?;
    Ok((e, right_jacobian_inverse(&e)))
}

#[derive(Clone, Debug, PartialEq)]
pub enum FactorKind {
    RootPrior,
    StrainPrior,
    Magnus {
        node: usize,
        s_start: f64,
        s_end: f64,
    },
    Strain {
        s: f64,
        measured: Twist,
    },
    Pose {
        node: usize,
        measured: Pose,
    },
    Position {
        node: usize,
        measured: Vector3<f64>,
    },
}

impl FactorKind {
    pub fn label(&self) -> &'static str {
        match self {
            FactorKind::RootPrior => "root_prior",
            FactorKind::StrainPrior => "strain_prior",
            FactorKind::Magnus { .. } => "magnus",
            FactorKind::Strain { .. } => "strain",
            FactorKind::Pose { .. } => "pose",
            FactorKind::Position { .. } => "position",
        }
    }
}

/// Unwhitened residual with one Jacobian block per connected variable.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub blocks: Vec<(VariableIndex, DMatrix<f64>)>,
}

#[derive(Clone, Debug)]
pub struct Factor {
    pub kind: FactorKind,
    pub noise: NoiseModel,
}

fn dyn_vec<const D: usize>(v: &nalgebra::SVector<f64, D>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn dyn_mat<R: nalgebra::Dim, C: nalgebra::Dim, S>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> DMatrix<f64>
where
    S: nalgebra::storage::Storage<f64, R, C>,
{
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

impl Factor {
    pub fn new(kind: FactorKind, noise: NoiseModel) -> Result<Self> {
        let expected = match &kind {
            FactorKind::Position { .. } => Some(3),
            FactorKind::StrainPrior => None,
            _ => Some(6),
        };
        if let Some(d) = expected {
            if noise.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: noise.dim(),
                });
            }
        }
        Ok(Self { kind, noise })
    }

    pub fn keys(&self) -> Vec<VariableIndex> {
        match self.kind {
            FactorKind::RootPrior => vec![VariableIndex::Pose(0)],
            FactorKind::StrainPrior | FactorKind::Strain { .. } => vec![VariableIndex::Strain],
            FactorKind::Magnus { node, .. } => vec![
                VariableIndex::Pose(node),
                VariableIndex::Pose(node + 1),
                VariableIndex::Strain,
            ],
            FactorKind::Pose { node, .. } | FactorKind::Position { node, .. } => {
                vec![VariableIndex::Pose(node)]
            }
        }
    }

    pub fn linearize(
        &self,
        cfg: &BasisConfig,
        poses: &[Pose],
        q: &StrainCoeffs,
    ) -> Result<Linearization> {
        let pose = |i: usize| {
            poses.get(i).ok_or(Error::DimensionMismatch {
                expected: i + 1,
                got: poses.len(),
            })
        };
        Ok(match &self.kind {
            FactorKind::RootPrior => {
                let (e, j) = root_prior_residual(pose(0)?)?;
                Linearization {
                    residual: dyn_vec(&e),
                    blocks: vec![(VariableIndex::Pose(0), dyn_mat(&j))],
                }
            }
            FactorKind::StrainPrior => Linearization {
                residual: q.clone(),
                blocks: vec![(VariableIndex::Strain, DMatrix::identity(q.len(), q.len()))],
            },
            FactorKind::Magnus {
                node,
                s_start,
                s_end,
            } => {
                let m = magnus_factor_residual(
                    cfg,
                    pose(*node)?,
                    pose(node + 1)?,
                    q,
                    *s_start,
                    *s_end,
                )?;
                Linearization {
                    residual: dyn_vec(&m.residual),
                    blocks: vec![
                        (VariableIndex::Pose(*node), dyn_mat(&m.j_start)),
                        (VariableIndex::Pose(node + 1), dyn_mat(&m.j_end)),
                        (VariableIndex::Strain, dyn_mat(&m.j_q)),
                    ],
                }
            }
            FactorKind::Strain { s, measured } => {
                let (e, j) = strain_factor_residual(cfg, q, *s, measured)?;
                Linearization {
                    residual: dyn_vec(&e),
                    blocks: vec![(VariableIndex::Strain, dyn_mat(&j))],
                }
            }
            FactorKind::Pose { node, measured } => {
                let (e, j) = pose_factor_residual(pose(*node)?, measured)?;
                Linearization {
                    residual: dyn_vec(&e),
                    blocks: vec![(VariableIndex::Pose(*node), dyn_mat(&j))],
                }
            }
            FactorKind::Position { node, measured } => {
                let (e, j) = position_factor_residual(pose(*node)?, measured);
                Linearization {
                    residual: dyn_vec(&e),
                    blocks: vec![(VariableIndex::Pose(*node), dyn_mat(&j))],
                }
            }
        })
    }

    /// Residual only. The Magnus factor skips the sensitivity.
    pub fn residual(
        &self,
        cfg: &BasisConfig,
        poses: &[Pose],
        q: &StrainCoeffs,
    ) -> Result<DVector<f64>> {
        match &self.kind {
            FactorKind::Magnus {
                node,
                s_start,
                s_end,
            } => {
                let (g_i, g_ip1) = match (poses.get(*node), poses.get(node + 1)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::DimensionMismatch {
                            expected: node + 2,
                            got: poses.len(),
                        })
                    }
                };
                let omega = crate::magnus::magnus_omega(cfg, q, *s_start, *s_end)?;
                let e = Pose::exp(&(-omega)).compose(&g_i.between(g_ip1)).log()?;
                Ok(dyn_vec(&e))
            }
            FactorKind::StrainPrior => Ok(q.clone()),
            _ => Ok(self.linearize(cfg, poses, q)?.residual),
        }
    }
}

/// Diagonal prior covariance on `q`: angular coefficients get `angular`,
/// linear-strain coefficients get `linear`.
pub fn strain_prior_noise(cfg: &BasisConfig, angular: f64, linear: f64) -> Result<NoiseModel> {
    let variances: Vec<f64> = (0..cfg.dim())
        .map(|col| {
            if cfg.component_of(col).is_some_and(|c| c.is_angular()) {
                angular
            } else {
                linear
            }
        })
        .collect();
    NoiseModel::diagonal(&variances)
}

/// Block-diagonal `diag(σ_ω² I₃, σ_r² I₃)` as used for pose readings.
pub fn pose_covariance(rot_variance: f64, pos_variance: f64) -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::new(
        rot_variance,
        rot_variance,
        rot_variance,
        pos_variance,
        pos_variance,
        pos_variance,
    ))
}

pub fn isotropic3(variance: f64) -> Matrix3<f64> {
    Matrix3::identity() * variance
}
