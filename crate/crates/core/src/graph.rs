//! Variable container, measurement set and factor-graph assembly.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, StrainCoeffs};
use crate::error::{Error, Result};
use crate::factors::{strain_prior_noise, Factor, FactorKind, NoiseModel, VariableIndex};
use crate::lie::{Pose, Twist};
use crate::magnus::node_arclength;

/// Node poses `g_0..g_N` and the strain coefficients `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Values {
    pub poses: Vec<Pose>,
    pub q: StrainCoeffs,
}

impl Values {
    /// `q = 0` and `g_i = (I, [0, 0, s_i])`.
    pub fn straight(cfg: &BasisConfig, intervals: usize) -> Self {
        let poses = (0..=intervals)
            .map(|i| {
                Pose::from_translation(Vector3::new(
                    0.0,
                    0.0,
                    node_arclength(cfg.length(), intervals, i),
                ))
            })
            .collect();
        Self {
            poses,
            q: DVector::zeros(cfg.dim()),
        }
    }

    pub fn tangent_dim(&self) -> usize {
        6 * self.poses.len() + self.q.len()
    }

    /// Column offset of a variable in the tangent ordering `[δg_0, …, δg_N, δq]`.
    pub fn offset(&self, var: VariableIndex) -> usize {
        match var {
            VariableIndex::Pose(i) => 6 * i,
            VariableIndex::Strain => 6 * self.poses.len(),
        }
    }

    /// Right-perturbs every pose and adds to `q`.
    pub fn retract(&self, delta: &DVector<f64>) -> Result<Values> {
        if delta.len() != self.tangent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.tangent_dim(),
                got: delta.len(),
            });
        }
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, g)| g.retract(&delta.fixed_rows::<6>(6 * i).into_owned()))
            .collect();
        let q = &self.q + delta.rows(6 * self.poses.len(), self.q.len());
        Ok(Values { poses, q })
    }

    pub fn block_name(&self, col: usize, cfg: &BasisConfig) -> String {
        let pose_dims = 6 * self.poses.len();
        if col < pose_dims {
            format!("g_{}", col / 6)
        } else {
            let j = col - pose_dims;
            match cfg.component_of(j) {
                Some(c) => {
                    let start = cfg.block(c).map(|r| r.start).unwrap_or(0);
                    format!("q[{}:{}]", c.name(), j - start)
                }
                None => format!("q[{j}]"),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainReading {
    pub s: f64,
    pub value: Twist,
    pub covariance: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseReading {
    pub s: f64,
    pub value: Pose,
    pub covariance: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionReading {
    pub s: f64,
    pub value: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub strain: Vec<StrainReading>,
    pub pose: Vec<PoseReading>,
    pub position: Vec<PositionReading>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.strain.len() + self.pose.len() + self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything about the graph that is not a measurement.
#[derive(Clone, Debug)]
pub struct GraphSettings {
    pub basis: BasisConfig,
    pub intervals: usize,
    /// Isotropic variance of each Magnus residual.
    pub magnus_variance: f64,
    pub strain_prior_angular: f64,
    pub strain_prior_linear: f64,
    pub root_constraint: bool,
}

impl GraphSettings {
    pub fn new(basis: BasisConfig, intervals: usize) -> Self {
        Self {
            basis,
            intervals,
            magnus_variance: 1e-6,
            strain_prior_angular: 3000.0,
            strain_prior_linear: 30.0,
            root_constraint: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorGraph {
    basis: BasisConfig,
    intervals: usize,
    factors: Vec<Factor>,
}

/// Whitened residual vector and Jacobian of the whole graph.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

fn dyn_cov<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>) -> DMatrix<f64> {
    DMatrix::from_column_slice(D, D, m.as_slice())
}

fn snap(kind: &'static str, s: f64, length: f64, intervals: usize) -> Result<usize> {
    if !(s >= 0.0 && s <= length) {
        return Err(Error::ArclengthOutOfRange { s, length });
    }
    let nearest = ((s / length) * intervals as f64).round() as usize;
    let nearest = nearest.min(intervals);
    let s_node = node_arclength(length, intervals, nearest);
    if (s - s_node).abs() <= 1e-9 * length.max(1.0) {
        Ok(nearest)
    } else {
        Err(Error::MeasurementOffGrid {
            kind,
            s,
            nearest_node: nearest,
            nearest_s: s_node,
        })
    }
}

/// Root prior, `q` prior, one Magnus factor per interval, then one factor
/// per reading in the order strain, pose, position.
pub fn build_graph(settings: &GraphSettings, meas: &MeasurementSet) -> Result<FactorGraph> {
    let n = settings.intervals;
    if n < 2 {
        return Err(Error::InvalidScenario(format!(
            "need at least 2 intervals, got {n}"
        )));
    }
    let cfg = &settings.basis;
    let length = cfg.length();
    let mut graph = FactorGraph {
        basis: cfg.clone(),
        intervals: n,
        factors: Vec::with_capacity(n + 2 + meas.len()),
    };
    if settings.root_constraint {
        graph.push(Factor::new(
            FactorKind::RootPrior,
            NoiseModel::constrained(6),
        )?);
    }
    graph.push(Factor::new(
        FactorKind::StrainPrior,
        strain_prior_noise(
            cfg,
            settings.strain_prior_angular,
            settings.strain_prior_linear,
        )?,
    )?);
    let magnus_noise = NoiseModel::isotropic(6, settings.magnus_variance)?;
    for i in 0..n {
        graph.push(Factor::new(
            FactorKind::Magnus {
                node: i,
                s_start: node_arclength(length, n, i),
                s_end: node_arclength(length, n, i + 1),
            },
            magnus_noise.clone(),
        )?);
    }
    for r in &meas.strain {
        if !(r.s >= 0.0 && r.s <= length) {
            return Err(Error::ArclengthOutOfRange { s: r.s, length });
        }
        graph.push(Factor::new(
            FactorKind::Strain {
                s: r.s,
                measured: r.value,
            },
            NoiseModel::from_covariance(&dyn_cov(&r.covariance))?,
        )?);
    }
    for r in &meas.pose {
        let node = snap("pose", r.s, length, n)?;
        graph.push(Factor::new(
            FactorKind::Pose {
                node,
                measured: r.value,
            },
            NoiseModel::from_covariance(&dyn_cov(&r.covariance))?,
        )?);
    }
    for r in &meas.position {
        let node = snap("position", r.s, length, n)?;
        graph.push(Factor::new(
            FactorKind::Position {
                node,
                measured: r.value,
            },
            NoiseModel::from_covariance(&dyn_cov(&r.covariance))?,
        )?);
    }
    Ok(graph)
}

impl FactorGraph {
    /// An empty graph over `intervals + 1` poses; factors are added with [`FactorGraph::push`].
    pub fn empty(basis: BasisConfig, intervals: usize) -> Self {
        Self {
            basis,
            intervals,
            factors: Vec::new(),
        }
    }

    pub fn push(&mut self, factor: Factor) {
        self.factors.push(factor);
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn basis(&self) -> &BasisConfig {
        &self.basis
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn count(&self, label: &str) -> usize {
        self.factors
            .iter()
            .filter(|f| f.kind.label() == label)
            .count()
    }

    fn check_values(&self, values: &Values) -> Result<()> {
        if values.poses.len() != self.intervals + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.intervals + 1,
                got: values.poses.len(),
            });
        }
        if values.q.len() != self.basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dim(),
                got: values.q.len(),
            });
        }
        Ok(())
    }

    fn wrap(index: usize, err: Error) -> Error {
        match err {
            e @ Error::LogBranch { .. } => Error::DivergedLinearization {
                factor: index,
                source: Box::new(e),
            },
            e => e,
        }
    }

    /// Whitened residual norm `‖W e‖` of every factor.
    pub fn factor_norms(&self, values: &Values) -> Result<Vec<f64>> {
        self.check_values(values)?;
        self.factors
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.residual(&self.basis, &values.poses, &values.q)
                    .map(|e| f.noise.whiten(&e).norm())
                    .map_err(|e| Self::wrap(k, e))
            })
            .collect()
    }

    /// `½ Σ ‖W_k e_k‖²`, the negative log-posterior up to a constant.
    pub fn cost(&self, values: &Values) -> Result<f64> {
        Ok(0.5
            * self
                .factor_norms(values)?
                .iter()
                .map(|n| n * n)
                .sum::<f64>())
    }

    /// Stacks the whitened residuals and Jacobians in factor order.
    pub fn linearize(&self, values: &Values) -> Result<LinearSystem> {
        self.check_values(values)?;
        let rows: usize = self.factors.iter().map(|f| f.noise.dim()).sum();
        let cols = values.tangent_dim();
        let mut jacobian = DMatrix::zeros(rows, cols);
        let mut residual = DVector::zeros(rows);
        let mut row = 0;
        for (k, f) in self.factors.iter().enumerate() {
            let lin = f
                .linearize(&self.basis, &values.poses, &values.q)
                .map_err(|e| Self::wrap(k, e))?;
            let d = f.noise.dim();
            residual
                .rows_mut(row, d)
                .copy_from(&f.noise.whiten(&lin.residual));
            for (var, block) in &lin.blocks {
                let col = values.offset(*var);
                let w = f.noise.whiten_jacobian(block);
                jacobian.view_mut((row, col), (d, w.ncols())).copy_from(&w);
            }
            row += d;
        }
        Ok(LinearSystem { jacobian, residual })
    }
}
