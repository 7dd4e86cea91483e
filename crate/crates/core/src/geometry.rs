//! Bounded domains, reflection directions and the discrete Skorokhod map.
//!
//! A domain `D` comes with a signed boundary distance (negative inside),
//! a set-valued field of admissible reflection directions `ν(x)` on `∂D`,
//! a test function `φ` with gradient and Hessian, and the certified
//! constants `c0` (interior-cone inequality) and `alpha` (lower bound of
//! `∇φ·ν` on the boundary).
//!
//! All built-in domains reflect along the inward normal (the normal cone
//! generators at box edges and corners), so resolving a step reduces to
//! the closest-point projection onto `D̄`, with the regulator increment
//! taken as the projection residual.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::vecmath::{dist_sq, dot, norm};

/// States with boundary distance above this are outside `D̄`.
pub const CLOSURE_TOL: f64 = 1e-10;
/// Slack granted to the inequality checks of the domain conditions.
pub const CONDITION_TOL: f64 = 1e-9;
/// Largest admissible angle between a regulator increment and the cone of
/// reflection directions at its contact point.
pub const CONE_ANGLE_TOL: f64 = 1e-6;

const MAX_BISECTION_ITERS: usize = 200;

fn default_dim() -> usize {
    2
}

/// Built-in domains, selectable by name in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    /// `(a, b) ⊂ R`.
    Interval { a: f64, b: f64 },
    /// Axis-aligned box `Π (lo_i, hi_i)`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Ball of the given radius centred at the origin.
    Ball {
        radius: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Spherical shell `r1 < |x| < r2` centred at the origin. Non-convex,
    /// with interior-cone constant `1/(2 r1)`.
    Annulus {
        r1: f64,
        r2: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

/// Outcome of one discrete Skorokhod step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkorokhodStepResult {
    pub state: Vec<f64>,
    pub regulator_increment: Vec<f64>,
    pub variation_increment: f64,
}

/// The certified constants of a domain, `{c0, alpha, phi_name}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCertificate {
    pub c0: f64,
    pub alpha: f64,
    pub phi_name: String,
}

/// A finite cover of `∂D` by balls `B(x_i, K)` with unit directions `a_i`
/// such that `ν·a_i ≥ λ` on `∂D ∩ B(x_i, 2K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCoverCertificate {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
    pub directions: Vec<Vec<f64>>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D1Report {
    /// Smallest `C ≥ 0` with `(x'-x)·ν + C|x-x'|² ≥ -1e-9` over all sampled pairs.
    pub c0_hat: f64,
    pub certified_c0: f64,
    /// Minimum of `(x'-x)·ν + c0|x-x'|²` at the certified constant.
    pub worst_violation: f64,
    pub worst_boundary_point: Vec<f64>,
    pub worst_partner: Vec<f64>,
    pub pairs: usize,
}

impl D1Report {
    pub fn holds(&self) -> bool {
        self.worst_violation >= -CONDITION_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D2Report {
    /// Minimum of `∇φ·ν` over sampled boundary points and directions.
    pub alpha_hat: f64,
    pub certified_alpha: f64,
    pub worst_point: Vec<f64>,
    pub samples: usize,
}

impl D2Report {
    pub fn holds(&self) -> bool {
        self.alpha_hat >= self.certified_alpha - CONDITION_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D3Report {
    pub pass: bool,
    /// Largest distance from a sampled boundary point to its nearest centre.
    pub worst_cover_distance: f64,
    /// Smallest `ν·a_i - λ` over sampled points within `2K` of centre `i`.
    pub worst_margin: f64,
    pub centers_on_boundary: bool,
    pub samples: usize,
}

impl DomainSpec {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let d = Self::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_box(dim: usize) -> Result<Self> {
        Self::boxed(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(radius: f64, dim: usize) -> Result<Self> {
        let d = Self::Ball { radius, dim };
        d.validate()?;
        Ok(d)
    }

    pub fn annulus(r1: f64, r2: f64, dim: usize) -> Result<Self> {
        let d = Self::Annulus { r1, r2, dim };
        d.validate()?;
        Ok(d)
    }

    /// Checks parameters; configs deserialized from JSON must pass through here.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            Self::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return bad(format!("interval needs finite a < b, got [{a}, {b}]"));
                }
            }
            Self::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return bad("box needs lo and hi of equal nonzero length".into());
                }
                if lo.len() > 16 {
                    return bad("box dimension above 16 is not supported".into());
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
                {
                    return bad("box needs finite lo[i] < hi[i]".into());
                }
            }
            Self::Ball { radius, dim } => {
                if !(radius.is_finite() && *radius > 0.0) || *dim == 0 {
                    return bad(format!(
                        "ball needs radius > 0 and dim ≥ 1, got {radius}, {dim}"
                    ));
                }
            }
            Self::Annulus { r1, r2, dim } => {
                if !(r1.is_finite() && r2.is_finite() && *r1 > 0.0 && r1 < r2) || *dim < 2 {
                    return bad(format!(
                        "annulus needs 0 < r1 < r2 and dim ≥ 2, got {r1}, {r2}, {dim}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Interval { .. } => "interval",
            Self::Box { .. } => "box",
            Self::Ball { .. } => "ball",
            Self::Annulus { .. } => "annulus",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Box { lo, .. } => lo.len(),
            Self::Ball { dim, .. } | Self::Annulus { dim, .. } => *dim,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Self::Interval { a, b } => b - a,
            Self::Box { lo, hi } => {
                let span: Vec<f64> = hi.iter().zip(lo).map(|(h, l)| h - l).collect();
                norm(&span)
            }
            Self::Ball { radius, .. } => 2.0 * radius,
            Self::Annulus { r2, .. } => 2.0 * r2,
        }
    }

    /// Thickness `ε_b` of the numerical boundary used for contact tests.
    pub fn boundary_tolerance(&self) -> f64 {
        1e-9 * self.diameter()
    }

    /// Largest displacement a single [`skorokhod_step`](Self::skorokhod_step)
    /// accepts. Convex built-ins project any point, the annulus only points
    /// away from its centre.
    pub fn reach_hint(&self) -> f64 {
        match self {
            Self::Annulus { r1, .. } => 0.5 * r1,
            _ => f64::INFINITY,
        }
    }

    pub fn c0(&self) -> f64 {
        match self {
            Self::Annulus { r1, .. } => 0.5 / r1,
            _ => 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Self::Interval { a, b } => b - a,
            Self::Box { lo, hi } => hi
                .iter()
                .zip(lo)
                .map(|(h, l)| h - l)
                .fold(f64::INFINITY, f64::min),
            Self::Ball { radius, .. } => 2.0 * radius,
            Self::Annulus { r1, r2, .. } => r2 - r1,
        }
    }

    pub fn phi_name(&self) -> &'static str {
        match self {
            Self::Interval { .. } => "interval_quadratic",
            Self::Box { .. } => "box_quadratic",
            Self::Ball { .. } => "ball_quadratic",
            Self::Annulus { .. } => "annulus_shell",
        }
    }

    pub fn certificate(&self) -> DomainCertificate {
        DomainCertificate {
            c0: self.c0(),
            alpha: self.alpha(),
            phi_name: self.phi_name().to_string(),
        }
    }

    /// A point of `D` used as the anchor of the bisection fallback.
    pub fn anchor(&self) -> Vec<f64> {
        match self {
            Self::Interval { a, b } => vec![0.5 * (a + b)],
            Self::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Self::Ball { dim, .. } => vec![0.0; *dim],
            Self::Annulus { r1, r2, dim } => {
                let mut p = vec![0.0; *dim];
                p[0] = 0.5 * (r1 + r2);
                p
            }
        }
    }

    /// Signed distance to `∂D`: negative in `D`, zero on `∂D`, positive outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Self::Interval { a, b } => (a - x[0]).max(x[0] - b),
            Self::Box { lo, hi } => box_distance(lo, hi, x),
            Self::Ball { radius, .. } => norm(x) - radius,
            Self::Annulus { r1, r2, .. } => {
                let r = norm(x);
                (r1 - r).max(r - r2)
            }
        }
    }

    /// Membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) < 0.0
    }

    pub fn in_closure(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) <= CLOSURE_TOL
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.boundary_distance(x).abs() <= self.boundary_tolerance()
    }

    /// Admissible reflection directions at a boundary point; empty away from `∂D`.
    pub fn nu(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let eps = self.boundary_tolerance();
        if self.boundary_distance(x).abs() > eps {
            return Vec::new();
        }
        match self {
            Self::Interval { a, b } => box_normals(&[*a], &[*b], x, eps),
            Self::Box { lo, hi } => box_normals(lo, hi, x, eps),
            Self::Ball { .. } => radial(x, -1.0).into_iter().collect(),
            Self::Annulus { r1, r2, .. } => {
                let r = norm(x);
                let sign = if (r - r1).abs() <= (r - r2).abs() {
                    1.0
                } else {
                    -1.0
                };
                radial(x, sign).into_iter().collect()
            }
        }
    }

    /// Angle between `u` and the cone generated by `nu(p)`.
    ///
    /// The built-in generator sets are orthonormal, so the cone projection is
    /// the sum of the positive parts of the coordinates along the generators.
    pub fn cone_angle(&self, p: &[f64], u: &[f64]) -> f64 {
        angle_to_orthonormal_cone(u, &self.nu(p))
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        match self {
            Self::Interval { a, b } => (x[0] - a) * (b - x[0]),
            Self::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(x)
                .map(|((l, h), xi)| (xi - l) * (h - xi))
                .sum(),
            Self::Ball { radius, .. } => radius * radius - dot(x, x),
            Self::Annulus { r1, r2, .. } => {
                let mid = 0.5 * (r1 + r2);
                let s = norm(x) - mid;
                -s * s
            }
        }
    }

    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Interval { a, b } => vec![a + b - 2.0 * x[0]],
            Self::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(x)
                .map(|((l, h), xi)| l + h - 2.0 * xi)
                .collect(),
            Self::Ball { .. } => x.iter().map(|v| -2.0 * v).collect(),
            Self::Annulus { r1, r2, .. } => {
                let mid = 0.5 * (r1 + r2);
                let r = norm(x);
                if r == 0.0 {
                    return vec![0.0; x.len()];
                }
                let c = -2.0 * (r - mid) / r;
                x.iter().map(|v| c * v).collect()
            }
        }
    }

    /// Row-major `d × d` Hessian of `φ`.
    pub fn hessian_phi(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        match self {
            Self::Annulus { r1, r2, .. } => {
                let mid = 0.5 * (r1 + r2);
                let r = norm(x);
                if r == 0.0 {
                    return h;
                }
                let tangential = -2.0 * (r - mid) / r;
                for i in 0..d {
                    for j in 0..d {
                        let radial = x[i] * x[j] / (r * r);
                        let eye = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = -2.0 * radial + tangential * (eye - radial);
                    }
                }
            }
            _ => {
                for i in 0..d {
                    h[i * d + i] = -2.0;
                }
            }
        }
        h
    }

    /// `(min, max)` of `φ` over `D̄`.
    pub fn phi_range(&self) -> (f64, f64) {
        match self {
            Self::Interval { a, b } => (0.0, 0.25 * (b - a) * (b - a)),
            Self::Box { lo, hi } => (
                0.0,
                lo.iter()
                    .zip(hi)
                    .map(|(l, h)| 0.25 * (h - l) * (h - l))
                    .sum(),
            ),
            Self::Ball { radius, .. } => (0.0, radius * radius),
            Self::Annulus { r1, r2, .. } => (-0.25 * (r2 - r1) * (r2 - r1), 0.0),
        }
    }

    /// Closest point of `D̄` to `y`.
    pub fn project_to_closure(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let mut p = y.to_vec();
        let mut residual = vec![0.0; y.len()];
        self.project_in_place(&mut p, &mut residual)?;
        Ok(p)
    }

    /// Projects `y` onto `D̄` in place and writes the residual (projection
    /// minus original point) to `residual`. The residual is assembled in
    /// closed form so its direction stays exact for tiny overshoots.
    fn project_in_place(&self, y: &mut [f64], residual: &mut [f64]) -> Result<()> {
        residual.iter_mut().for_each(|r| *r = 0.0);
        match self {
            Self::Interval { a, b } => clip(&[*a], &[*b], y, residual),
            Self::Box { lo, hi } => clip(lo, hi, y, residual),
            Self::Ball { radius, .. } => {
                let r = norm(y);
                if r > *radius {
                    radial_move(y, residual, r, *radius);
                }
            }
            Self::Annulus { r1, r2, .. } => {
                let r = norm(y);
                if r > *r2 {
                    radial_move(y, residual, r, *r2);
                } else if r < *r1 {
                    if r == 0.0 {
                        return Err(Error::ProjectionDiverged { iterations: 0 });
                    }
                    radial_move(y, residual, r, *r1);
                }
            }
        }
        Ok(())
    }

    /// Generic fallback: bisection on the segment from [`anchor`](Self::anchor)
    /// to `y`, returning the last point of the segment inside `D̄`. Exact
    /// for star-shaped domains along rays through the anchor; not a
    /// closest-point projection in general.
    pub fn project_by_bisection(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        if self.boundary_distance(y) <= 0.0 {
            return Ok(y.to_vec());
        }
        let anchor = self.anchor();
        let at = |s: f64| -> Vec<f64> {
            anchor
                .iter()
                .zip(y)
                .map(|(a, yi)| a + s * (yi - a))
                .collect()
        };
        let length = dist_sq(&anchor, y).sqrt();
        let target = 1e-14 * self.diameter();
        let (mut inside, mut outside) = (0.0_f64, 1.0_f64);
        for _ in 0..MAX_BISECTION_ITERS {
            if (outside - inside) * length <= target {
                return Ok(at(inside));
            }
            let mid = 0.5 * (inside + outside);
            if self.boundary_distance(&at(mid)) <= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Err(Error::ProjectionDiverged {
            iterations: MAX_BISECTION_ITERS,
        })
    }

    /// One discrete Skorokhod step from `x ∈ D̄` with free displacement `v`.
    pub fn skorokhod_step(&self, x: &[f64], v: &[f64]) -> Result<SkorokhodStepResult> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        let mut state = x.to_vec();
        let mut dl = vec![0.0; x.len()];
        let variation = self.skorokhod_step_in_place(&mut state, v, &mut dl)?;
        Ok(SkorokhodStepResult {
            state,
            regulator_increment: dl,
            variation_increment: variation,
        })
    }

    /// Allocation-free form of [`skorokhod_step`](Self::skorokhod_step):
    /// updates `x`, writes the regulator increment into `dl` and returns
    /// the variation increment `|ΔL|`.
    pub fn skorokhod_step_in_place(&self, x: &mut [f64], v: &[f64], dl: &mut [f64]) -> Result<f64> {
        let start = self.boundary_distance(x);
        if start > CLOSURE_TOL {
            return Err(Error::OutOfDomain { distance: start });
        }
        let step = norm(v);
        let reach = self.reach_hint();
        if step > reach {
            return Err(Error::StepExceedsReach { norm: step, reach });
        }
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += vi;
        }
        if self.boundary_distance(x) <= 0.0 {
            dl.iter_mut().for_each(|r| *r = 0.0);
            return Ok(0.0);
        }
        self.project_in_place(x, dl)
            .map_err(|e| Error::InfeasibleStep {
                reason: e.to_string(),
            })?;
        let push = norm(dl);
        if push == 0.0 {
            return Ok(0.0);
        }
        let landed = self.boundary_distance(x);
        if landed > CLOSURE_TOL {
            return Err(Error::InfeasibleStep {
                reason: format!("resolved state still outside (distance {landed:e})"),
            });
        }
        let angle = self.cone_angle(x, dl);
        if angle > CONE_ANGLE_TOL {
            return Err(Error::InfeasibleStep {
                reason: format!("push leaves the reflection cone by {angle:e} rad"),
            });
        }
        Ok(push)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Deterministic boundary samples. Boxes list their corners first;
    /// spheres are sampled uniformly, the two annulus spheres alternately.
    pub fn boundary_samples(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(&[seed, 0xB0]);
        let mut out = Vec::with_capacity(n);
        match self {
            Self::Interval { a, b } => {
                for i in 0..n {
                    out.push(vec![if i % 2 == 0 { *a } else { *b }]);
                }
            }
            Self::Box { lo, hi } => {
                let d = lo.len();
                let corners = 1usize << d;
                for c in 0..corners.min(n) {
                    out.push(
                        (0..d)
                            .map(|i| if c >> i & 1 == 0 { lo[i] } else { hi[i] })
                            .collect(),
                    );
                }
                while out.len() < n {
                    let mut p: Vec<f64> = (0..d).map(|i| rng.random_range(lo[i]..=hi[i])).collect();
                    let face = rng.random_range(0..d);
                    p[face] = if rng.random_bool(0.5) {
                        lo[face]
                    } else {
                        hi[face]
                    };
                    out.push(p);
                }
            }
            Self::Ball { radius, dim } => {
                for _ in 0..n {
                    out.push(sphere_point(&mut rng, *dim, *radius));
                }
            }
            Self::Annulus { r1, r2, dim } => {
                for i in 0..n {
                    let r = if i % 2 == 0 { *r1 } else { *r2 };
                    out.push(sphere_point(&mut rng, *dim, r));
                }
            }
        }
        out
    }

    /// Uniform samples of the open domain by rejection from its bounding box.
    pub fn interior_samples(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(&[seed, 0x1A]);
        let (lo, hi) = self.bounding_box();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| rng.random_range(*l..*h))
                .collect();
            if self.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Interval { a, b } => (vec![*a], vec![*b]),
            Self::Box { lo, hi } => (lo.clone(), hi.clone()),
            Self::Ball { radius: r, dim } | Self::Annulus { r2: r, dim, .. } => {
                (vec![-r; *dim], vec![*r; *dim])
            }
        }
    }
}

/// Estimates the interior-cone constant of the domain.
///
/// Partners `x'` range over interior samples and over the boundary samples
/// themselves (limits of interior points), skipping `x' = x`.
pub fn check_d1(
    domain: &DomainSpec,
    n_boundary: usize,
    n_interior: usize,
    seed: u64,
) -> Result<D1Report> {
    let boundary = domain.boundary_samples(n_boundary, seed);
    if boundary.is_empty() {
        return Err(Error::NoBoundarySamples);
    }
    let interior = domain.interior_samples(n_interior, seed);
    let c0 = domain.c0();
    let mut report = D1Report {
        c0_hat: 0.0,
        certified_c0: c0,
        worst_violation: f64::INFINITY,
        worst_boundary_point: boundary[0].clone(),
        worst_partner: boundary[0].clone(),
        pairs: 0,
    };
    let mut best_ratio = f64::NEG_INFINITY;
    for x in &boundary {
        for nu in domain.nu(x) {
            for xp in interior.iter().chain(&boundary) {
                let d2 = dist_sq(x, xp);
                if d2 == 0.0 {
                    continue;
                }
                let lean: f64 = xp
                    .iter()
                    .zip(x)
                    .zip(&nu)
                    .map(|((a, b), n)| (a - b) * n)
                    .sum();
                report.pairs += 1;
                report.worst_violation = report.worst_violation.min(lean + c0 * d2);
                let ratio = -(lean + CONDITION_TOL) / d2;
                if ratio > best_ratio {
                    best_ratio = ratio;
                    report.worst_boundary_point = x.clone();
                    report.worst_partner = xp.clone();
                }
            }
        }
    }
    if report.pairs == 0 {
        return Err(Error::NoBoundarySamples);
    }
    report.c0_hat = best_ratio.max(0.0);
    Ok(report)
}

/// Estimates `α` as the minimum of `∇φ·ν` over sampled boundary points.
pub fn check_d2(domain: &DomainSpec, n_boundary: usize, seed: u64) -> Result<D2Report> {
    let boundary = domain.boundary_samples(n_boundary, seed);
    if boundary.is_empty() {
        return Err(Error::NoBoundarySamples);
    }
    let mut alpha_hat = f64::INFINITY;
    let mut worst_point = boundary[0].clone();
    for x in &boundary {
        let grad = domain.grad_phi(x);
        for nu in domain.nu(x) {
            let g = dot(&grad, &nu);
            if g < alpha_hat {
                alpha_hat = g;
                worst_point = x.clone();
            }
        }
    }
    Ok(D2Report {
        alpha_hat,
        certified_alpha: domain.alpha(),
        worst_point,
        samples: boundary.len(),
    })
}

/// Verifies a caller-supplied cone cover on sampled boundary points.
pub fn check_d3(
    domain: &DomainSpec,
    cert: &ConeCoverCertificate,
    n_boundary: usize,
    seed: u64,
) -> Result<D3Report> {
    let d = domain.dim();
    if cert.centers.is_empty() || cert.centers.len() != cert.directions.len() {
        return Err(Error::InvalidArgument(
            "cone cover needs one direction per centre and at least one centre".into(),
        ));
    }
    if !(cert.radius > 0.0 && cert.lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "cone cover needs K > 0 and λ > 0".into(),
        ));
    }
    for v in cert.centers.iter().chain(&cert.directions) {
        domain.check_dim(v)?;
    }
    if cert
        .directions
        .iter()
        .any(|a| (norm(a) - 1.0).abs() > 1e-12)
    {
        return Err(Error::InvalidArgument(
            "cone cover directions must be unit vectors".into(),
        ));
    }
    let boundary = domain.boundary_samples(n_boundary, seed);
    if boundary.is_empty() {
        return Err(Error::NoBoundarySamples);
    }
    let centers_on_boundary = cert.centers.iter().all(|c| domain.on_boundary(c));
    let mut worst_cover = 0.0_f64;
    let mut worst_margin = f64::INFINITY;
    for x in &boundary {
        let nus = domain.nu(x);
        let mut nearest = f64::INFINITY;
        for (c, a) in cert.centers.iter().zip(&cert.directions) {
            let dist = dist_sq(x, c).sqrt();
            nearest = nearest.min(dist);
            if dist <= 2.0 * cert.radius {
                for nu in &nus {
                    worst_margin = worst_margin.min(dot(nu, a) - cert.lambda);
                }
            }
        }
        worst_cover = worst_cover.max(nearest);
    }
    debug_assert_eq!(d, boundary[0].len());
    let pass = centers_on_boundary
        && worst_cover <= cert.radius + CONDITION_TOL
        && worst_margin >= -CONDITION_TOL;
    Ok(D3Report {
        pass,
        worst_cover_distance: worst_cover,
        worst_margin,
        centers_on_boundary,
        samples: boundary.len(),
    })
}

/// Angle between `u` and the cone spanned by pairwise orthogonal unit
/// generators; `π/2` or more when `u` has no component inside the cone.
pub fn angle_to_orthonormal_cone(u: &[f64], generators: &[Vec<f64>]) -> f64 {
    let mut proj = vec![0.0; u.len()];
    for g in generators {
        let c = dot(u, g);
        if c > 0.0 {
            for (p, gi) in proj.iter_mut().zip(g) {
                *p += c * gi;
            }
        }
    }
    let inside = norm(&proj);
    let off: Vec<f64> = u.iter().zip(&proj).map(|(a, b)| a - b).collect();
    norm(&off).atan2(inside)
}

fn box_distance(lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let mut outside = 0.0;
    let mut depth = f64::INFINITY;
    for ((l, h), xi) in lo.iter().zip(hi).zip(x) {
        let excess = (l - xi).max(xi - h);
        if excess > 0.0 {
            outside += excess * excess;
        }
        depth = depth.min(-excess);
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        -depth
    }
}

fn box_normals(lo: &[f64], hi: &[f64], x: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let d = lo.len();
    let mut out = Vec::new();
    for i in 0..d {
        for (face, sign) in [(lo[i], 1.0), (hi[i], -1.0)] {
            if (x[i] - face).abs() <= eps {
                let mut e = vec![0.0; d];
                e[i] = sign;
                out.push(e);
            }
        }
    }
    out
}

fn clip(lo: &[f64], hi: &[f64], y: &mut [f64], residual: &mut [f64]) {
    for i in 0..y.len() {
        let c = y[i].clamp(lo[i], hi[i]);
        residual[i] = c - y[i];
        y[i] = c;
    }
}

/// Moves `y` (with `|y| = r`) radially onto the sphere of radius `target`.
fn radial_move(y: &mut [f64], residual: &mut [f64], r: f64, target: f64) {
    let shift = target - r;
    for (yi, ri) in y.iter_mut().zip(residual.iter_mut()) {
        let u = *yi / r;
        *ri = shift * u;
        *yi = target * u;
    }
}

fn radial(x: &[f64], sign: f64) -> Option<Vec<f64>> {
    let r = norm(x);
    (r > 0.0).then(|| x.iter().map(|v| sign * v / r).collect())
}

fn sphere_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&g);
        if r > 1e-12 {
            return g.iter().map(|v| radius * v / r).collect();
        }
    }
}
