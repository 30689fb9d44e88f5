//! Cubic B-spline strain parameterization `ξ(s; q) = Φ(s) q + ξ*`.
//!
//! Each of the six strain components is either inactive or carries its own
//! clamped, uniform cubic B-spline with `n_c ≥ 4` control points. The
//! coefficient vector `q` concatenates the active blocks in the fixed order
//! `[k_x, k_y, k_z, p_x, p_y, p_z]`.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Twist;

pub type StrainCoeffs = DVector<f64>;

pub const DEGREE: usize = 3;

/// Straight, unstretched rod: unit elongation along the local z axis.
pub const REFERENCE_STRAIN: [f64; 6] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainComponent {
    Kx,
    Ky,
    Kz,
    Px,
    Py,
    Pz,
}

impl StrainComponent {
    pub const ALL: [StrainComponent; 6] = [
        StrainComponent::Kx,
        StrainComponent::Ky,
        StrainComponent::Kz,
        StrainComponent::Px,
        StrainComponent::Py,
        StrainComponent::Pz,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StrainComponent::Kx => "k_x",
            StrainComponent::Ky => "k_y",
            StrainComponent::Kz => "k_z",
            StrainComponent::Px => "p_x",
            StrainComponent::Py => "p_y",
            StrainComponent::Pz => "p_z",
        }
    }

    pub fn is_angular(self) -> bool {
        self.index() < 3
    }
}

/// On-disk form of the basis layout: control-point counts per component,
/// zero meaning inactive.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default)]
    pub kx: usize,
    #[serde(default)]
    pub ky: usize,
    #[serde(default)]
    pub kz: usize,
    #[serde(default)]
    pub px: usize,
    #[serde(default)]
    pub py: usize,
    #[serde(default)]
    pub pz: usize,
}

impl BasisSpec {
    pub fn counts(&self) -> [usize; 6] {
        [self.kx, self.ky, self.kz, self.px, self.py, self.pz]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ComponentBasis {
    component: StrainComponent,
    control_points: usize,
    /// First column of this component's block in `q`.
    offset: usize,
    knots: Vec<f64>,
}

impl ComponentBasis {
    fn new(component: StrainComponent, control_points: usize, offset: usize, length: f64) -> Self {
        let segments = control_points - DEGREE;
        let mut knots = Vec::with_capacity(control_points + DEGREE + 1);
        knots.extend(std::iter::repeat_n(0.0, DEGREE + 1));
        knots.extend((1..segments).map(|j| length * j as f64 / segments as f64));
        knots.extend(std::iter::repeat_n(length, DEGREE + 1));
        ComponentBasis {
            component,
            control_points,
            offset,
            knots,
        }
    }

    /// Index `i` with `knots[i] ≤ s < knots[i+1]`, clamped so that `s = L`
    /// lands in the last non-empty span.
    fn span(&self, s: f64) -> usize {
        let n = self.control_points;
        if s >= self.knots[n] {
            return n - 1;
        }
        let (mut lo, mut hi) = (DEGREE, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if s < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `DEGREE + 1` nonzero basis values at `s` and the index of the
    /// first one (triangular Cox–de Boor scheme).
    fn nonzero(&self, s: f64) -> (usize, [f64; DEGREE + 1]) {
        let span = self.span(s);
        let t = &self.knots;
        let mut values = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        values[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = s - t[span + 1 - j];
            right[j] = t[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - DEGREE, values)
    }
}

/// Per-component B-spline layout for the strain field of a rod of length `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisConfig {
    length: f64,
    reference: Twist,
    components: Vec<ComponentBasis>,
    dim: usize,
}

impl BasisConfig {
    /// `counts[c]` is the number of control points for component `c`
    /// (`[k_x, k_y, k_z, p_x, p_y, p_z]`), zero for inactive.
    pub fn new(length: f64, counts: [usize; 6]) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidBasis(format!(
                "rod length {length} must be positive"
            )));
        }
        let mut components = Vec::new();
        let mut offset = 0;
        for (component, &n) in StrainComponent::ALL.iter().zip(counts.iter()) {
            if n == 0 {
                continue;
            }
            if n < DEGREE + 1 {
                return Err(Error::InvalidBasis(format!(
                    "{} needs at least {} control points, got {n}",
                    component.name(),
                    DEGREE + 1
                )));
            }
            components.push(ComponentBasis::new(*component, n, offset, length));
            offset += n;
        }
        if offset == 0 {
            return Err(Error::InvalidBasis("no active strain component".into()));
        }
        Ok(BasisConfig {
            length,
            reference: Vector6::from_row_slice(&REFERENCE_STRAIN),
            components,
            dim: offset,
        })
    }

    pub fn from_spec(length: f64, spec: &BasisSpec) -> Result<Self> {
        Self::new(length, spec.counts())
    }

    pub fn spec(&self) -> BasisSpec {
        let c = self.counts();
        BasisSpec {
            kx: c[0],
            ky: c[1],
            kz: c[2],
            px: c[3],
            py: c[4],
            pz: c[5],
        }
    }

    pub fn with_reference(mut self, reference: Twist) -> Self {
        self.reference = reference;
        self
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn reference(&self) -> &Twist {
        &self.reference
    }

    /// Total number of coefficients `S`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> [usize; 6] {
        let mut out = [0; 6];
        for c in &self.components {
            out[c.component.index()] = c.control_points;
        }
        out
    }

    pub fn is_active(&self, component: StrainComponent) -> bool {
        self.components.iter().any(|c| c.component == component)
    }

    /// Columns of `q` belonging to `component`, if active.
    pub fn block(&self, component: StrainComponent) -> Option<std::ops::Range<usize>> {
        self.components
            .iter()
            .find(|c| c.component == component)
            .map(|c| c.offset..c.offset + c.control_points)
    }

    /// Strain component owning column `col` of `q`.
    pub fn component_of(&self, col: usize) -> Option<StrainComponent> {
        self.components
            .iter()
            .find(|c| (c.offset..c.offset + c.control_points).contains(&col))
            .map(|c| c.component)
    }

    pub fn knots(&self, component: StrainComponent) -> Option<&[f64]> {
        self.components
            .iter()
            .find(|c| c.component == component)
            .map(|c| c.knots.as_slice())
    }

    fn check_arclength(&self, s: f64) -> Result<()> {
        if !(s >= 0.0 && s <= self.length) {
            return Err(Error::ArclengthOutOfRange {
                s,
                length: self.length,
            });
        }
        Ok(())
    }

    fn check_dim(&self, q: &StrainCoeffs) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Sparse form of `Φ(s)`: for each active component, its row, first
    /// column and the four nonzero values.
    pub fn row_entries(&self, s: f64) -> Result<Vec<(usize, usize, [f64; DEGREE + 1])>> {
        self.check_arclength(s)?;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let (first, values) = c.nonzero(s);
                (c.component.index(), c.offset + first, values)
            })
            .collect())
    }

    /// Dense `Φ(s)`, a 6×S matrix.
    pub fn basis_row(&self, s: f64) -> Result<Matrix6xX<f64>> {
        let mut phi = Matrix6xX::zeros(self.dim);
        for (row, col, values) in self.row_entries(s)? {
            for (j, v) in values.iter().enumerate() {
                phi[(row, col + j)] = *v;
            }
        }
        Ok(phi)
    }

    pub fn eval_strain(&self, q: &StrainCoeffs, s: f64) -> Result<Twist> {
        self.check_dim(q)?;
        let mut xi = self.reference;
        for (row, col, values) in self.row_entries(s)? {
            xi[row] += values
                .iter()
                .enumerate()
                .map(|(j, v)| v * q[col + j])
                .sum::<f64>();
        }
        Ok(xi)
    }

    /// Coefficients whose spline is the constant `value` on `component`
    /// (partition of unity), zero elsewhere.
    pub fn constant_coeffs(&self, values: &[(StrainComponent, f64)]) -> StrainCoeffs {
        let mut q = DVector::zeros(self.dim);
        for (component, value) in values {
            if let Some(block) = self.block(*component) {
                q.rows_mut(block.start, block.len()).fill(*value);
            }
        }
        q
    }

    /// Least-squares projection of sampled strains onto the basis.
    ///
    /// Components are independent, so each active block is fit on its own;
    /// inactive components contribute their fixed mismatch to the residual.
    pub fn fit_coeffs(&self, samples: &[(f64, Twist)]) -> Result<StrainFit> {
        for (s, _) in samples {
            self.check_arclength(*s)?;
        }
        let mut q = DVector::zeros(self.dim);
        for comp in &self.components {
            let n = comp.control_points;
            if samples.len() < n {
                return Err(Error::RankDeficientFit {
                    component: comp.component.name(),
                });
            }
            let row = comp.component.index();
            let mut design = DMatrix::zeros(samples.len(), n);
            let mut target = DVector::zeros(samples.len());
            for (j, (s, xi)) in samples.iter().enumerate() {
                let (first, values) = comp.nonzero(*s);
                for (i, v) in values.iter().enumerate() {
                    design[(j, first + i)] = *v;
                }
                target[j] = xi[row] - self.reference[row];
            }
            let svd = design.svd(true, true);
            let max_sv = svd.singular_values.max();
            let min_sv = svd.singular_values.min();
            if !(min_sv > 1e-10 * max_sv) {
                return Err(Error::RankDeficientFit {
                    component: comp.component.name(),
                });
            }
            let block = svd
                .solve(&target, 0.0)
                .map_err(|_| Error::RankDeficientFit {
                    component: comp.component.name(),
                })?;
            q.rows_mut(comp.offset, n).copy_from(&block);
        }
        let mut sq = 0.0;
        for (s, xi) in samples {
            sq += (self.eval_strain(&q, *s)? - xi).norm_squared();
        }
        Ok(StrainFit {
            coeffs: q,
            residual_norm: sq.sqrt(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct StrainFit {
    pub coeffs: StrainCoeffs,
    pub residual_norm: f64,
}
