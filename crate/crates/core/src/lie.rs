//! SO(3)/SE(3) group operations with analytic differentials.
//!
//! Twists are ordered angular-first, `ξ = [k; p]`, matching the strain
//! convention used throughout the crate: `k` is the angular part (curvature
//! and torsion, rad/m) and `p` the linear part (shear and elongation).
//! The right Jacobian follows the convention
//! `log(exp(ξ)⁻¹ exp(ξ + δ)) ≈ Jr(ξ) δ`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Twist = Vector6<f64>;

/// Below this rotation angle the Rodrigues, V and SO(3) Jacobian
/// coefficients switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Switch point for the coupling coefficients of the SE(3) Jacobian. Their
/// closed forms cancel to `O(θ⁵)` and lose `eps/θ⁴` absolute accuracy, so the
/// series is kept over a much wider band.
const COUPLING_SMALL_ANGLE: f64 = 1e-2;

/// Minimum distance from π tolerated by the logarithm.
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

const SKEW_TOLERANCE: f64 = 1e-9;
const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

pub fn twist(k: Vector3<f64>, p: Vector3<f64>) -> Twist {
    Vector6::new(k.x, k.y, k.z, p.x, p.y, p.z)
}

pub fn angular(xi: &Twist) -> Vector3<f64> {
    xi.fixed_rows::<3>(0).into_owned()
}

pub fn linear(xi: &Twist) -> Vector3<f64> {
    xi.fixed_rows::<3>(3).into_owned()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&skew(&angular(xi)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&linear(xi));
    m
}

/// Inverse of [`hat`]. The bottom row is ignored; an asymmetric rotation
/// block is rejected.
pub fn vee(x: &Matrix4<f64>) -> Result<Twist> {
    let w = x.fixed_view::<3, 3>(0, 0);
    let asymmetry = (w + w.transpose()).amax();
    if !(asymmetry <= SKEW_TOLERANCE) {
        return Err(Error::NotSkewSymmetric { asymmetry });
    }
    Ok(Vector6::new(
        0.5 * (x[(2, 1)] - x[(1, 2)]),
        0.5 * (x[(0, 2)] - x[(2, 0)]),
        0.5 * (x[(1, 0)] - x[(0, 1)]),
        x[(0, 3)],
        x[(1, 3)],
        x[(2, 3)],
    ))
}

/// Which evaluation route to use for the angle-dependent coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Auto,
    Series,
    ClosedForm,
}

/// Scalar coefficients shared by exp, log and the SO(3) Jacobians.
#[derive(Clone, Copy, Debug)]
struct RotationCoeffs {
    /// sin θ / θ
    a: f64,
    /// (1 - cos θ) / θ²
    b: f64,
    /// (θ - sin θ) / θ³
    c: f64,
}

impl RotationCoeffs {
    fn new(theta: f64, branch: Branch) -> Self {
        let series = match branch {
            Branch::Auto => theta < SMALL_ANGLE,
            Branch::Series => true,
            Branch::ClosedForm => false,
        };
        if series {
            let t2 = theta * theta;
            let t4 = t2 * t2;
            RotationCoeffs {
                a: 1.0 - t2 / 6.0 + t4 / 120.0,
                b: 0.5 - t2 / 24.0 + t4 / 720.0,
                c: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            }
        } else {
            let s = theta.sin();
            let half = (0.5 * theta).sin();
            RotationCoeffs {
                a: s / theta,
                b: 2.0 * half * half / (theta * theta),
                c: (theta - s) / (theta * theta * theta),
            }
        }
    }
}

/// `(1 - θ sin θ / (2 (1 - cos θ))) / θ²`, the K² coefficient of the inverse
/// SO(3) Jacobians.
fn inverse_coeff(theta: f64, branch: Branch) -> f64 {
    let series = match branch {
        Branch::Auto => theta < SMALL_ANGLE,
        Branch::Series => true,
        Branch::ClosedForm => false,
    };
    if series {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        // θ sin θ / (2 (1 - cos θ)) = (θ/2) cot(θ/2)
        (1.0 - half / half.tan()) / (theta * theta)
    }
}

fn coupling_coeffs(theta: f64, branch: Branch) -> (f64, f64, f64) {
    let series = match branch {
        Branch::Auto => theta < COUPLING_SMALL_ANGLE,
        Branch::Series => true,
        Branch::ClosedForm => false,
    };
    let t2 = theta * theta;
    let t4 = t2 * t2;
    if series {
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        (
            (theta - s) / (t2 * theta),
            (t2 - 4.0 * half * half) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    }
}

pub fn so3_exp(k: &Vector3<f64>) -> Matrix3<f64> {
    so3_exp_with(k, Branch::Auto)
}

pub fn so3_exp_with(k: &Vector3<f64>, branch: Branch) -> Matrix3<f64> {
    let kk = skew(k);
    let co = RotationCoeffs::new(k.norm(), branch);
    Matrix3::identity() + kk * co.a + kk * kk * co.b
}

/// SO(3) left Jacobian, which is also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian_with(k: &Vector3<f64>, branch: Branch) -> Matrix3<f64> {
    let kk = skew(k);
    let co = RotationCoeffs::new(k.norm(), branch);
    Matrix3::identity() + kk * co.b + kk * kk * co.c
}

pub fn so3_left_jacobian_inverse_with(k: &Vector3<f64>, branch: Branch) -> Matrix3<f64> {
    let kk = skew(k);
    Matrix3::identity() - kk * 0.5 + kk * kk * inverse_coeff(k.norm(), branch)
}

pub fn so3_right_jacobian(k: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_with(&(-k), Branch::Auto)
}

pub fn so3_right_jacobian_inverse(k: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inverse_with(&(-k), Branch::Auto)
}

/// Rotation vector of `r`. Fails when the angle is within
/// [`LOG_BRANCH_MARGIN`] of π.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let w = Vector3::new(
        0.5 * (r[(2, 1)] - r[(1, 2)]),
        0.5 * (r[(0, 2)] - r[(2, 0)]),
        0.5 * (r[(1, 0)] - r[(0, 1)]),
    );
    let sin_theta = w.norm();
    let cos_theta = 0.5 * (r.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta > std::f64::consts::PI - LOG_BRANCH_MARGIN {
        return Err(Error::LogBranch {
            angle: theta,
            margin: LOG_BRANCH_MARGIN,
        });
    }
    let scale = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    } else {
        theta / sin_theta
    };
    Ok(w * scale)
}

/// Q block coupling the linear and angular parts of the SE(3) left Jacobian.
fn coupling_block(k: &Vector3<f64>, p: &Vector3<f64>, branch: Branch) -> Matrix3<f64> {
    let kk = skew(k);
    let pp = skew(p);
    let (c1, c2, c3) = coupling_coeffs(k.norm(), branch);
    let kp = kk * pp;
    let pk = pp * kk;
    let kpk = kk * pp * kk;
    let kkp = kk * kp;
    let pkk = pk * kk;
    pp * 0.5 + (kp + pk + kpk) * c1 + (kkp + pkk - kpk * 3.0) * c2 + (kpk * kk + kk * kpk) * c3
}

/// SE(3) left Jacobian `Jl(ξ)`.
pub fn left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let k = angular(xi);
    let p = linear(xi);
    let j = so3_left_jacobian_with(&k, Branch::Auto);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&coupling_block(&k, &p, Branch::Auto));
    out
}

/// SE(3) right Jacobian `Jr(ξ) = Jl(-ξ)`.
pub fn right_jacobian(xi: &Twist) -> Matrix6<f64> {
    left_jacobian(&(-xi))
}

pub fn right_jacobian_with(xi: &Twist, rot: Branch, coupling: Branch) -> Matrix6<f64> {
    let k = -angular(xi);
    let p = -linear(xi);
    let j = so3_left_jacobian_with(&k, rot);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&coupling_block(&k, &p, coupling));
    out
}

/// Inverse of [`right_jacobian`], assembled block-wise.
pub fn right_jacobian_inverse(xi: &Twist) -> Matrix6<f64> {
    let k = -angular(xi);
    let p = -linear(xi);
    let j_inv = so3_left_jacobian_inverse_with(&k, Branch::Auto);
    let q = coupling_block(&k, &p, Branch::Auto);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

/// Lie-algebra adjoint: `ad(ξ₁) ξ₂ = vee([hat(ξ₁), hat(ξ₂)])`.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let kk = skew(&angular(xi));
    let pp = skew(&linear(xi));
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&kk);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&kk);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&pp);
    out
}

/// `vee([hat(a), hat(b)])` without forming 4×4 matrices.
pub fn bracket(a: &Twist, b: &Twist) -> Twist {
    let (ka, pa) = (angular(a), linear(a));
    let (kb, pb) = (angular(b), linear(b));
    twist(ka.cross(&kb), ka.cross(&pb) - kb.cross(&pa))
}

/// A rigid transform: cross-section frame of the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validated constructor; rejects a non-orthonormal or reflected rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.check()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from user-supplied data, projecting the rotation onto
    /// SO(3) (polar decomposition). Only for input boundaries.
    pub fn projected(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut fix = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            fix[(2, 2)] = -1.0;
        }
        Pose::new(u * fix * v_t, translation)
    }

    pub fn check(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if ortho > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "‖RᵀR − I‖ = {ortho:e} exceeds {ORTHONORMAL_TOLERANCE:e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidPose(format!("det(R) = {det}")));
        }
        Ok(())
    }

    pub fn exp(xi: &Twist) -> Self {
        Self::exp_with(xi, Branch::Auto)
    }

    pub fn exp_with(xi: &Twist, branch: Branch) -> Self {
        let k = angular(xi);
        let kk = skew(&k);
        let co = RotationCoeffs::new(k.norm(), branch);
        let k2 = kk * kk;
        let rotation = Matrix3::identity() + kk * co.a + k2 * co.b;
        let v = Matrix3::identity() + kk * co.b + k2 * co.c;
        Pose {
            rotation,
            translation: v * linear(xi),
        }
    }

    pub fn log(&self) -> Result<Twist> {
        let k = so3_log(&self.rotation)?;
        let v_inv = so3_left_jacobian_inverse_with(&k, Branch::Auto);
        Ok(twist(k, v_inv * self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// `self⁻¹ · other` without forming the inverse explicitly.
    pub fn between(&self, other: &Pose) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt * other.rotation,
            translation: rt * (other.translation - self.translation),
        }
    }

    /// Right-perturbation retraction `g · exp(δ)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Group adjoint `Ad(g)`: `Ad(g) ξ = vee(g hat(ξ) g⁻¹)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        out.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.translation) * self.rotation));
        out
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Geodesic distance on SO(3) between the two orientations, in rad.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        let w = Vector3::new(
            0.5 * (r[(2, 1)] - r[(1, 2)]),
            0.5 * (r[(0, 2)] - r[(2, 0)]),
            0.5 * (r[(1, 0)] - r[(0, 1)]),
        );
        w.norm().atan2(0.5 * (r.trace() - 1.0))
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}
