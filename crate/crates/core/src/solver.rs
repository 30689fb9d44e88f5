//! Levenberg–Marquardt on `SE(3)^{N+1} × ℝ^S` with dense normal equations.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Values};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub relative_cost_tolerance: f64,
    /// Infinity norm of the gradient `Jᵀe` below which the solve ends.
    pub gradient_tolerance: f64,
    pub lambda_initial: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Consecutive rejected steps before the solve is reported as stalled.
    pub max_rejections: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_cost_tolerance: 1e-9,
            gradient_tolerance: 1e-10,
            lambda_initial: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_rejections: 10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("relative_cost_tolerance", self.relative_cost_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
            ("lambda_initial", self.lambda_initial),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "solver.{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 || self.max_rejections == 0 {
            return Err(Error::InvalidScenario(
                "solver iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    CostTolerance,
    GradientTolerance,
    /// The model predicts no further decrease (cost at rounding level).
    ZeroDecrease,
    MaxIterations,
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::CostTolerance | Termination::GradientTolerance | Termination::ZeroDecrease
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub termination: Termination,
    /// Accepted steps.
    pub iterations: usize,
    pub rejected_steps: usize,
    /// Cost before the first step and after every accepted one.
    pub cost_history: Vec<f64>,
    pub final_cost: f64,
    /// Whitened residual norm of every factor at the solution.
    pub factor_norms: Vec<f64>,
    /// Actual over predicted decrease of each accepted step.
    pub gain_ratios: Vec<f64>,
    pub wall_time_ms: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Candidate produced by one damped Gauss–Newton step.
#[derive(Clone, Debug)]
pub struct Step {
    pub values: Values,
    pub delta: DVector<f64>,
    /// Decrease of the quadratic model `½‖e + Jδ‖²`.
    pub predicted_decrease: f64,
}

/// Normal equations of a linearization: `H = JᵀJ`, `b = Jᵀe`.
struct Normal {
    h: DMatrix<f64>,
    b: DVector<f64>,
}

impl Normal {
    fn from_graph(graph: &FactorGraph, values: &Values) -> Result<Self> {
        let sys = graph.linearize(values)?;
        let jt = sys.jacobian.transpose();
        Ok(Self {
            h: &jt * &sys.jacobian,
            b: jt * sys.residual,
        })
    }

    /// Solves `(H + λ diag(H)) δ = −b`. `None` if the damped matrix is not
    /// numerically positive definite.
    fn solve(&self, lambda: f64) -> Option<(DVector<f64>, f64)> {
        let mut a = self.h.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * self.h[(i, i)];
        }
        let delta = a.cholesky()?.solve(&(-&self.b));
        if delta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let predicted = -self.b.dot(&delta) - 0.5 * delta.dot(&(&self.h * &delta));
        Some((delta, predicted))
    }
}

/// Variable blocks whose columns span the numerical null space of `JᵀJ`.
fn null_blocks(graph: &FactorGraph, values: &Values, h: &DMatrix<f64>) -> Vec<String> {
    let n = h.nrows();
    let diag: Vec<f64> = (0..n).map(|i| h[(i, i)]).collect();
    let mut names: Vec<String> = Vec::new();
    let mut push = |name: String| {
        if !names.contains(&name) {
            names.push(name);
        }
    };
    let scale: Vec<f64> = diag
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    for (i, d) in diag.iter().enumerate() {
        if *d == 0.0 {
            push(values.block_name(i, graph.basis()));
        }
    }
    let scaled = DMatrix::from_fn(n, n, |r, c| h[(r, c)] * scale[r] * scale[c]);
    let eig = SymmetricEigen::new(scaled);
    let top = eig.eigenvalues.amax();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda <= 1e-13 * top {
            let v = eig.eigenvectors.column(k);
            for (i, x) in v.iter().enumerate() {
                if diag[i] > 0.0 && x.abs() > 0.1 {
                    push(values.block_name(i, graph.basis()));
                }
            }
        }
    }
    names
}

/// Checks the Gauss–Newton system at `values` for rank deficiency.
pub fn check_rank(graph: &FactorGraph, values: &Values) -> Result<()> {
    let normal = Normal::from_graph(graph, values)?;
    let blocks = null_blocks(graph, values, &normal.h);
    if blocks.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficientSystem { blocks })
    }
}

/// One damped step from `values`. Retries with growing damping when the
/// factorisation fails.
pub fn linearize_and_step(graph: &FactorGraph, values: &Values, lambda: f64) -> Result<Step> {
    let normal = Normal::from_graph(graph, values)?;
    step_from(&normal, values, lambda, 10.0, 8)
}

fn step_from(
    normal: &Normal,
    values: &Values,
    lambda: f64,
    up: f64,
    retries: usize,
) -> Result<Step> {
    let mut lambda = lambda;
    for _ in 0..=retries {
        if let Some((delta, predicted)) = normal.solve(lambda) {
            return Ok(Step {
                values: values.retract(&delta)?,
                delta,
                predicted_decrease: predicted,
            });
        }
        lambda = if lambda > 0.0 { lambda * up } else { 1e-12 };
    }
    Err(Error::RankDeficientSystem {
        blocks: vec!["damped normal equations not positive definite".into()],
    })
}

pub fn solve(
    graph: &FactorGraph,
    init: &Values,
    settings: &SolverSettings,
) -> Result<(Values, SolveReport)> {
    settings.validate()?;
    let started = Instant::now();
    let mut values = init.clone();
    let mut cost = graph.cost(&values)?;
    let mut lambda = settings.lambda_initial;
    let mut history = vec![cost];
    let mut gains = Vec::new();
    let mut iterations = 0;
    let mut rejected = 0;
    let mut consecutive_rejections = 0;
    let initial = Normal::from_graph(graph, &values)?;
    let blocks = null_blocks(graph, &values, &initial.h);
    if !blocks.is_empty() {
        return Err(Error::RankDeficientSystem { blocks });
    }
    let mut normal = Some(initial);

    let termination = loop {
        if cost == 0.0 {
            break Termination::ZeroDecrease;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        if normal.is_none() {
            normal = Some(Normal::from_graph(graph, &values)?);
        }
        let lin = normal.as_ref().expect("linearization present");
        if lin.b.amax() < settings.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        let step = match step_from(lin, &values, lambda, settings.lambda_up, 0) {
            Ok(s) => s,
            Err(_) => {
                lambda *= settings.lambda_up;
                rejected += 1;
                consecutive_rejections += 1;
                if consecutive_rejections >= settings.max_rejections {
                    break Termination::Stalled;
                }
                continue;
            }
        };
        if !(step.predicted_decrease > f64::EPSILON * cost) {
            break Termination::ZeroDecrease;
        }
        let candidate_cost = match graph.cost(&step.values) {
            Ok(c) => c,
            Err(Error::DivergedLinearization { .. }) | Err(Error::LogBranch { .. }) => {
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        if candidate_cost < cost {
            let decrease = cost - candidate_cost;
            gains.push(decrease / step.predicted_decrease);
            values = step.values;
            iterations += 1;
            history.push(candidate_cost);
            let previous = cost;
            cost = candidate_cost;
            lambda = (lambda / settings.lambda_down).max(1e-12);
            consecutive_rejections = 0;
            normal = None;
            if decrease <= settings.relative_cost_tolerance * previous {
                break Termination::CostTolerance;
            }
        } else {
            lambda *= settings.lambda_up;
            rejected += 1;
            consecutive_rejections += 1;
            if consecutive_rejections >= settings.max_rejections {
                break Termination::Stalled;
            }
        }
    };

    let factor_norms = graph.factor_norms(&values)?;
    let report = SolveReport {
        termination,
        iterations,
        rejected_steps: rejected,
        cost_history: history,
        final_cost: cost,
        factor_norms,
        gain_ratios: gains,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    if !report.converged() {
        log::warn!(
            "solve ended without convergence ({:?}) after {} iterations, cost {:e}",
            report.termination,
            report.iterations,
            report.final_cost
        );
    }
    Ok((values, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisConfig, StrainComponent};
    use crate::factors::{pose_covariance, Factor, FactorKind, NoiseModel};
    use crate::graph::{build_graph, GraphSettings, MeasurementSet, PoseReading, StrainReading};
    use crate::lie::{Pose, Twist};
    use crate::magnus::integrate_nodes;
    use nalgebra::{Matrix6, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L: f64 = 0.4;

    fn s1_settings() -> GraphSettings {
        GraphSettings::new(BasisConfig::new(L, [8, 10, 5, 0, 0, 5]).unwrap(), 10)
    }

    fn smooth_q(cfg: &BasisConfig, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(cfg.dim(), |i, _| match cfg.component_of(i).unwrap() {
            StrainComponent::Pz => rng.random_range(-0.01..0.01),
            _ => rng.random_range(-2.0..2.0),
        })
    }

    #[test]
    fn prior_only_fixed_point() {
        let settings = s1_settings();
        let graph = build_graph(&settings, &MeasurementSet::default()).unwrap();
        let init = Values::straight(&settings.basis, 10);
        let (sol, report) = solve(&graph, &init, &SolverSettings::default()).unwrap();
        assert!(report.converged());
        assert!(report.final_cost < 1e-16);
        assert_eq!(sol.q, DVector::zeros(settings.basis.dim()));
        for (i, g) in sol.poses.iter().enumerate() {
            assert!((g.translation - Vector3::new(0.0, 0.0, 0.04 * i as f64)).norm() < 1e-15);
        }
    }

    #[test]
    fn huge_damping_gives_tiny_step() {
        let settings = s1_settings();
        let meas = MeasurementSet {
            pose: vec![PoseReading {
                s: L,
                value: Pose::exp(&Twist::new(0.0, 0.5, 0.0, 0.0, 0.0, 0.4)),
                covariance: pose_covariance(1e-3, 1e-5),
            }],
            ..Default::default()
        };
        let graph = build_graph(&settings, &meas).unwrap();
        let init = Values::straight(&settings.basis, 10);
        let small = linearize_and_step(&graph, &init, 1e-4).unwrap();
        let big = linearize_and_step(&graph, &init, 1e12).unwrap();
        assert!(big.delta.norm() < 1e-10 * small.delta.norm());
    }

    #[test]
    fn linear_problem_solved_in_one_gauss_newton_step() {
        let cfg = BasisConfig::new(L, [6, 6, 4, 0, 0, 4]).unwrap();
        let mut graph = crate::graph::FactorGraph::empty(cfg.clone(), 2);
        graph.push(
            Factor::new(
                FactorKind::StrainPrior,
                NoiseModel::isotropic(cfg.dim(), 10.0).unwrap(),
            )
            .unwrap(),
        );
        graph.push(Factor::new(FactorKind::RootPrior, NoiseModel::constrained(6)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for k in 0..15 {
            let s = L * k as f64 / 14.0;
            let _ = StrainReading {
                s,
                value: Twist::zeros(),
                covariance: Matrix6::identity(),
            };
            graph.push(
                Factor::new(
                    FactorKind::Strain {
                        s,
                        measured: Twist::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    },
                    NoiseModel::isotropic(6, 0.01).unwrap(),
                )
                .unwrap(),
            );
        }
        // Poses 1 and 2 are otherwise unconstrained; pin them.
        for node in 1..=2 {
            graph.push(
                Factor::new(
                    FactorKind::Pose {
                        node,
                        measured: Pose::identity(),
                    },
                    NoiseModel::isotropic(6, 1.0).unwrap(),
                )
                .unwrap(),
            );
        }
        let init = Values {
            poses: vec![Pose::identity(); 3],
            q: DVector::zeros(cfg.dim()),
        };
        let step = linearize_and_step(&graph, &init, 0.0).unwrap();
        let again = linearize_and_step(&graph, &step.values, 0.0).unwrap();
        assert!(again.delta.rows(18, cfg.dim()).amax() < 1e-12);
        let c0 = graph.cost(&init).unwrap();
        let c1 = graph.cost(&step.values).unwrap();
        assert!(((c0 - c1) - step.predicted_decrease).abs() < 1e-9 * c0);
    }

    #[test]
    fn missing_root_prior_is_rank_deficient() {
        let mut settings = s1_settings();
        settings.root_constraint = false;
        let graph = build_graph(&settings, &MeasurementSet::default()).unwrap();
        let init = Values::straight(&settings.basis, 10);
        match solve(&graph, &init, &SolverSettings::default()) {
            Err(Error::RankDeficientSystem { blocks }) => {
                assert!(blocks.iter().any(|b| b.starts_with("g_")))
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn unconstrained_component_named() {
        let settings = s1_settings();
        let mut graph = crate::graph::FactorGraph::empty(settings.basis.clone(), 10);
        graph.push(Factor::new(FactorKind::RootPrior, NoiseModel::constrained(6)).unwrap());
        let init = Values::straight(&settings.basis, 10);
        match check_rank(&graph, &init) {
            Err(Error::RankDeficientSystem { blocks }) => {
                assert!(blocks.contains(&"g_1".to_string()));
                assert!(blocks.contains(&"q[k_x:0]".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn recovers_q_from_noiseless_node_poses() {
        let mut settings = s1_settings();
        settings.strain_prior_angular = 1e12;
        settings.strain_prior_linear = 1e12;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = smooth_q(&settings.basis, &mut rng);
        let truth = integrate_nodes(&settings.basis, &q, 10).unwrap();
        let meas = MeasurementSet {
            pose: (1..=10)
                .map(|i| PoseReading {
                    s: 0.04 * i as f64,
                    value: truth[i],
                    covariance: pose_covariance(1e-10, 1e-12),
                })
                .collect(),
            ..Default::default()
        };
        let graph = build_graph(&settings, &meas).unwrap();
        let init = Values::straight(&settings.basis, 10);
        let (sol, report) = solve(&graph, &init, &SolverSettings::default()).unwrap();
        assert!(report.converged(), "{:?}", report.termination);
        let err = (&sol.q - &q).amax();
        assert!(err < 1e-6, "{err:e} {:?}", report);
        for w in report.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn deterministic() {
        let settings = s1_settings();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let q = smooth_q(&settings.basis, &mut rng);
        let truth = integrate_nodes(&settings.basis, &q, 10).unwrap();
        let meas = MeasurementSet {
            pose: [5usize, 10]
                .iter()
                .map(|&i| PoseReading {
                    s: 0.04 * i as f64,
                    value: truth[i].retract(&Twist::from_fn(|_, _| rng.random_range(-0.01..0.01))),
                    covariance: pose_covariance(1e-3, 1e-5),
                })
                .collect(),
            ..Default::default()
        };
        let graph = build_graph(&settings, &meas).unwrap();
        let init = Values::straight(&settings.basis, 10);
        let (a, ra) = solve(&graph, &init, &SolverSettings::default()).unwrap();
        let (b, rb) = solve(&graph, &init, &SolverSettings::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.iterations, rb.iterations);
        assert_eq!(ra.cost_history, rb.cost_history);
    }

    #[test]
    fn settings_validation() {
        let bad = SolverSettings {
            lambda_up: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let parsed: SolverSettings = toml::from_str("max_iterations = 20").unwrap();
        assert_eq!(parsed.max_iterations, 20);
        assert_eq!(parsed.lambda_initial, 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn accepted_steps_decrease_cost(seed in any::<u64>()) {
            let settings = s1_settings();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = smooth_q(&settings.basis, &mut rng);
            let truth = integrate_nodes(&settings.basis, &q, 10).unwrap();
            let meas = MeasurementSet {
                pose: [5usize, 10]
                    .iter()
                    .map(|&i| PoseReading {
                        s: 0.04 * i as f64,
                        value: truth[i].retract(&Twist::from_fn(|_, _| rng.random_range(-0.01..0.01))),
                        covariance: pose_covariance(1e-3, 1e-5),
                    })
                    .collect(),
                ..Default::default()
            };
            let graph = build_graph(&settings, &meas).unwrap();
            let init = Values::straight(&settings.basis, 10);
            let (sol, report) = solve(&graph, &init, &SolverSettings::default()).unwrap();
            prop_assert_eq!(report.cost_history.len(), report.iterations + 1);
            for w in report.cost_history.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
            for g in &sol.poses {
                prop_assert!(g.check().is_ok());
            }
        }
    }
}
