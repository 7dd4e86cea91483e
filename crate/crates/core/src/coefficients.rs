//! Diffusion and drift fields with their derivatives and the Stratonovich
//! correction `(σσ′)_i = Σ_j Σ_k ∂_k σ_ij · σ_kj`.
//!
//! Matrices are stored as nested rows in configs; evaluation writes into
//! flat row-major buffers (`σ` is `d × m`, `∂σ` is indexed `(i·m + j)·d + k`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, CLOSURE_TOL};
use crate::vecmath::dot;

/// Built-in diffusion fields `σ: R^d → R^{d×m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Diffusion {
    Constant {
        value: Vec<Vec<f64>>,
    },
    /// `σ_ij(y) = offset_ij + Σ_k linear_ijk y_k`.
    Affine {
        linear: Vec<Vec<Vec<f64>>>,
        offset: Vec<Vec<f64>>,
    },
    /// `σ_ij(y) = a_ij + b_ij sin(c_ij·y + phase_ij)`.
    Trig {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phase: Option<Vec<Vec<f64>>>,
    },
}

/// Built-in drift fields `b: R^d → R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Drift {
    Constant {
        value: Vec<f64>,
    },
    /// `b(y) = matrix · y + offset`.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

impl Diffusion {
    pub fn constant(value: Vec<Vec<f64>>) -> Self {
        Self::Constant { value }
    }

    /// Scalar `σ(y) = a + b sin(y)` for `d = m = 1`.
    pub fn scalar_sine(a: f64, b: f64) -> Self {
        Self::Trig {
            a: vec![vec![a]],
            b: vec![vec![b]],
            c: vec![vec![vec![1.0]]],
            phase: None,
        }
    }

    fn shape(&self) -> (usize, usize) {
        let rows = match self {
            Self::Constant { value } => value,
            Self::Affine { offset, .. } => offset,
            Self::Trig { a, .. } => a,
        };
        (rows.len(), rows.first().map_or(0, Vec::len))
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let (d, m) = self.shape();
        if d == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "sigma must be a nonempty d×m matrix".into(),
            ));
        }
        let matrix_ok = |mat: &Vec<Vec<f64>>| mat.len() == d && mat.iter().all(|r| r.len() == m);
        let tensor_ok = |t: &Vec<Vec<Vec<f64>>>| {
            t.len() == d
                && t.iter()
                    .all(|r| r.len() == m && r.iter().all(|c| c.len() == d))
        };
        let ok = match self {
            Self::Constant { value } => matrix_ok(value),
            Self::Affine { linear, offset } => matrix_ok(offset) && tensor_ok(linear),
            Self::Trig { a, b, c, phase } => {
                matrix_ok(a) && matrix_ok(b) && tensor_ok(c) && phase.as_ref().is_none_or(matrix_ok)
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "sigma parameters are inconsistent with a {d}×{m} field on R^{d}"
            )));
        }
        Ok((d, m))
    }

    fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        let (d, m) = self.shape();
        for i in 0..d {
            for j in 0..m {
                out[i * m + j] = match self {
                    Self::Constant { value } => value[i][j],
                    Self::Affine { linear, offset } => offset[i][j] + dot(&linear[i][j], y),
                    Self::Trig { a, b, c, phase } => {
                        let shift = phase.as_ref().map_or(0.0, |p| p[i][j]);
                        a[i][j] + b[i][j] * (dot(&c[i][j], y) + shift).sin()
                    }
                };
            }
        }
    }

    fn grad_into(&self, y: &[f64], out: &mut [f64]) {
        let (d, m) = self.shape();
        for i in 0..d {
            for j in 0..m {
                let base = (i * m + j) * d;
                match self {
                    Self::Constant { .. } => out[base..base + d].iter_mut().for_each(|g| *g = 0.0),
                    Self::Affine { linear, .. } => {
                        out[base..base + d].copy_from_slice(&linear[i][j])
                    }
                    Self::Trig { b, c, phase, .. } => {
                        let shift = phase.as_ref().map_or(0.0, |p| p[i][j]);
                        let w = b[i][j] * (dot(&c[i][j], y) + shift).cos();
                        for k in 0..d {
                            out[base + k] = w * c[i][j][k];
                        }
                    }
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::Affine { linear, .. } => frobenius3(linear),
            Self::Trig { b, c, .. } => {
                let mut s = 0.0;
                for (brow, crow) in b.iter().zip(c) {
                    for (bij, cij) in brow.iter().zip(crow) {
                        s += bij * bij * dot(cij, cij);
                    }
                }
                s.sqrt()
            }
        }
    }

    fn grad_lipschitz(&self) -> f64 {
        match self {
            Self::Trig { b, c, .. } => {
                let mut s = 0.0;
                for (brow, crow) in b.iter().zip(c) {
                    for (bij, cij) in brow.iter().zip(crow) {
                        let c2 = dot(cij, cij);
                        s += bij * bij * c2 * c2;
                    }
                }
                s.sqrt()
            }
            _ => 0.0,
        }
    }
}

impl Drift {
    pub fn zero(dim: usize) -> Self {
        Self::Constant {
            value: vec![0.0; dim],
        }
    }

    /// Scalar `b(y) = slope · y` for `d = 1`.
    pub fn scalar_linear(slope: f64) -> Self {
        Self::Affine {
            matrix: vec![vec![slope]],
            offset: vec![0.0],
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let ok = match self {
            Self::Constant { value } => value.len() == d,
            Self::Affine { matrix, offset } => {
                offset.len() == d && matrix.len() == d && matrix.iter().all(|r| r.len() == d)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "drift parameters do not describe a field on R^{d}"
            )))
        }
    }

    fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant { value } => out.copy_from_slice(value),
            Self::Affine { matrix, offset } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = offset[i] + dot(&matrix[i], y);
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::Affine { matrix, .. } => {
                matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
            }
        }
    }
}

fn frobenius3(t: &[Vec<Vec<f64>>]) -> f64 {
    t.iter()
        .flatten()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// A validated pair of diffusion and drift fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientParts", into = "CoefficientParts")]
pub struct CoefficientSet {
    sigma: Diffusion,
    drift: Drift,
    dim_state: usize,
    dim_noise: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientParts {
    sigma: Diffusion,
    drift: Drift,
}

impl TryFrom<CoefficientParts> for CoefficientSet {
    type Error = Error;
    fn try_from(p: CoefficientParts) -> Result<Self> {
        Self::new(p.sigma, p.drift)
    }
}

impl From<CoefficientSet> for CoefficientParts {
    fn from(c: CoefficientSet) -> Self {
        Self {
            sigma: c.sigma,
            drift: c.drift,
        }
    }
}

/// Reusable buffers for evaluating the correction term without allocation.
#[derive(Debug, Clone)]
pub struct Scratch {
    sigma: Vec<f64>,
    grad: Vec<f64>,
    correction: Vec<f64>,
}

impl CoefficientSet {
    pub fn new(sigma: Diffusion, drift: Drift) -> Result<Self> {
        let (d, m) = sigma.validate()?;
        drift.validate(d)?;
        Ok(Self {
            sigma,
            drift,
            dim_state: d,
            dim_noise: m,
        })
    }

    pub fn sigma_field(&self) -> &Diffusion {
        &self.sigma
    }

    pub fn drift_field(&self) -> &Drift {
        &self.drift
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn scratch(&self) -> Scratch {
        let (d, m) = (self.dim_state, self.dim_noise);
        Scratch {
            sigma: vec![0.0; d * m],
            grad: vec![0.0; d * m * d],
            correction: vec![0.0; d],
        }
    }

    /// Row-major `d × m` diffusion matrix at `y`.
    pub fn sigma(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.sigma.eval_into(y, &mut out);
        out
    }

    pub fn sigma_into(&self, y: &[f64], out: &mut [f64]) {
        self.sigma.eval_into(y, out);
    }

    pub fn drift(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift.eval_into(y, &mut out);
        out
    }

    pub fn drift_into(&self, y: &[f64], out: &mut [f64]) {
        self.drift.eval_into(y, out);
    }

    /// `∂σ_ij/∂y_k` at `(i·m + j)·d + k`.
    pub fn grad_sigma(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise * self.dim_state];
        self.sigma.grad_into(y, &mut out);
        out
    }

    pub fn lipschitz_sigma(&self) -> f64 {
        self.sigma.lipschitz()
    }

    pub fn lipschitz_b(&self) -> f64 {
        self.drift.lipschitz()
    }

    pub fn lipschitz_grad_sigma(&self) -> f64 {
        self.sigma.grad_lipschitz()
    }

    /// `σσ′(y)`; unchecked, defined on all of `R^d`.
    pub fn correction_into(&self, y: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
        let (d, m) = (self.dim_state, self.dim_noise);
        self.sigma.eval_into(y, &mut scratch.sigma);
        self.sigma.grad_into(y, &mut scratch.grad);
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut acc = 0.0;
            for j in 0..m {
                let base = (i * m + j) * d;
                for k in 0..d {
                    acc += scratch.grad[base + k] * scratch.sigma[k * m + j];
                }
            }
            *o = acc;
        }
    }

    /// Itô drift `b(y) + ½σσ′(y)`; unchecked.
    pub fn ito_drift_into(&self, y: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
        let mut correction = std::mem::take(&mut scratch.correction);
        self.correction_into(y, scratch, &mut correction);
        self.drift.eval_into(y, out);
        for (o, c) in out.iter_mut().zip(&correction) {
            *o += 0.5 * c;
        }
        scratch.correction = correction;
    }
}

fn check_point(coeffs: &CoefficientSet, domain: &DomainSpec, y: &[f64]) -> Result<()> {
    if y.len() != coeffs.dim_state || domain.dim() != coeffs.dim_state {
        return Err(Error::DimensionMismatch {
            expected: coeffs.dim_state,
            actual: y.len(),
        });
    }
    let distance = domain.boundary_distance(y);
    if distance > CLOSURE_TOL {
        return Err(Error::OutOfDomain { distance });
    }
    Ok(())
}

/// The Stratonovich correction `σσ′(y)` at a point of `D̄`.
pub fn stratonovich_correction(
    coeffs: &CoefficientSet,
    domain: &DomainSpec,
    y: &[f64],
) -> Result<Vec<f64>> {
    check_point(coeffs, domain, y)?;
    let mut out = vec![0.0; coeffs.dim_state];
    coeffs.correction_into(y, &mut coeffs.scratch(), &mut out);
    Ok(out)
}

/// The Itô drift `b(y) + ½σσ′(y)` at a point of `D̄`.
pub fn ito_drift(coeffs: &CoefficientSet, domain: &DomainSpec, y: &[f64]) -> Result<Vec<f64>> {
    check_point(coeffs, domain, y)?;
    let mut out = vec![0.0; coeffs.dim_state];
    coeffs.ito_drift_into(y, &mut coeffs.scratch(), &mut out);
    Ok(out)
}
