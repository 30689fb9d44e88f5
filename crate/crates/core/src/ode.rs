//! Classical RK4 integration of the backbone kinematics `g'(s) = g(s) ξ̂(s)`
//! on raw 4×4 matrices. Independent of the Magnus machinery, so it serves
//! as both the ground-truth integrator and the reference in accuracy tests.

use nalgebra::Matrix4;

use crate::lie::{hat, Pose, Twist};

/// Integrates from `start` at `s0` to `s1` with `steps` equal RK4 steps.
/// `strain(s)` must be defined on `[s0, s1]`.
pub fn integrate<F>(start: &Pose, s0: f64, s1: f64, steps: usize, mut strain: F) -> Pose
where
    F: FnMut(f64) -> Twist,
{
    let steps = steps.max(1);
    let h = (s1 - s0) / steps as f64;
    let mut g = start.matrix();
    for n in 0..steps {
        let s = s0 + h * n as f64;
        let a1 = hat(&strain(s));
        let a2 = hat(&strain(s + 0.5 * h));
        let a4 = hat(&strain(s + h));
        g = rk4_step(&g, &a1, &a2, &a4, h);
    }
    Pose::from_matrix(&g)
}

/// One RK4 step for `Y' = Y A(s)` given `A` at the start, midpoint and end.
pub fn rk4_step(
    g: &Matrix4<f64>,
    a_start: &Matrix4<f64>,
    a_mid: &Matrix4<f64>,
    a_end: &Matrix4<f64>,
    h: f64,
) -> Matrix4<f64> {
    let k1 = g * a_start;
    let k2 = (g + k1 * (0.5 * h)) * a_mid;
    let k3 = (g + k2 * (0.5 * h)) * a_mid;
    let k4 = (g + k3 * h) * a_end;
    g + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}
