//! The two coupled reflected processes.
//!
//! [`solve_wz`] integrates `Ẋ^n = σ(X^n) Ẇ^n + b(X^n) + L̇^n` with explicit
//! Euler substeps of size `2^-n / substeps_per_knot`, each followed by a
//! Skorokhod step. The driver `Ẇ^n` is constant on every knot interval.
//!
//! [`solve_reference`] runs projected Euler-Maruyama for the Itô form
//! `dX = σ(X) dW + (b + ½σσ′)(X) dt + dL` on the fine grid of the path.
//!
//! Output times must lie on the fine grid of the path. Internally the
//! Wong-Zakai solver counts time in units of `1 / (substeps · 2^N)`, so
//! substep boundaries and output times are merged exactly; an output time
//! inside a substep splits it.

use std::io::{self, Write};

use serde::Serialize;

use crate::brownian::BrownianPath;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, CLOSURE_TOL};
use crate::vecmath::{all_finite, dist_sq, norm};

pub const DEFAULT_SUBSTEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub substeps_per_knot: usize,
    /// Keep a [`ContactEvent`] for every step with a nonzero push.
    pub record_contacts: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            substeps_per_knot: DEFAULT_SUBSTEPS,
            record_contacts: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    WongZakai,
    Reference,
}

/// One step at which the constraint acted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactEvent {
    /// End time of the step.
    pub t: f64,
    pub state: Vec<f64>,
    pub increment: Vec<f64>,
    pub variation_increment: f64,
    pub boundary_distance: f64,
    pub cone_angle: f64,
}

/// States, cumulative regulator `L` and its variation `|L|` at output times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectedPath {
    pub kind: PathKind,
    /// `n` for Wong-Zakai paths, the fine level for references.
    pub level: u32,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `len × dim`.
    pub states: Vec<f64>,
    /// Row-major `len × dim`.
    pub regulator: Vec<f64>,
    pub variation: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<ContactEvent>,
}

impl ReflectedPath {
    fn new(kind: PathKind, level: u32, dim: usize, capacity: usize) -> Self {
        Self {
            kind,
            level,
            dim,
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity * dim),
            regulator: Vec::with_capacity(capacity * dim),
            variation: Vec::with_capacity(capacity),
            contacts: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, x: &[f64], l: &[f64], var: f64) {
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.regulator.extend_from_slice(l);
        self.variation.push(var);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn regulator_at(&self, i: usize) -> &[f64] {
        &self.regulator[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn last_variation(&self) -> f64 {
        *self.variation.last().unwrap_or(&0.0)
    }

    fn check_aligned(&self, other: &ReflectedPath) -> Result<()> {
        if self.times != other.times || self.dim != other.dim {
            return Err(Error::MismatchedTimes);
        }
        Ok(())
    }

    /// `|X_a(t_i) - X_b(t_i)|` at every output time.
    pub fn distances(&self, other: &ReflectedPath) -> Result<Vec<f64>> {
        self.check_aligned(other)?;
        Ok((0..self.len())
            .map(|i| dist_sq(self.state(i), other.state(i)).sqrt())
            .collect())
    }

    /// `max_i |X_a(t_i) - X_b(t_i)|^p` over the output times.
    pub fn sup_distance_pow(&self, other: &ReflectedPath, p: f64) -> Result<f64> {
        Ok(self
            .distances(other)?
            .into_iter()
            .fold(0.0, f64::max)
            .powf(p))
    }

    /// CSV with columns `t, X_1..X_d, L_1..L_d, |L|`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("X_{i}")));
        header.extend((1..=self.dim).map(|i| format!("L_{i}")));
        header.push("|L|".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.state(i).iter().map(f64::to_string));
            row.extend(self.regulator_at(i).iter().map(f64::to_string));
            row.push(self.variation[i].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Output grid shared by coupled solves: the knots `j / 2^level` up to the
/// path horizon, plus the horizon itself.
pub fn output_grid(path: &BrownianPath, level: u32) -> Result<Vec<f64>> {
    if level > path.fine_level() {
        return Err(Error::LevelTooFine {
            level,
            fine_level: path.fine_level(),
        });
    }
    let stride = 1usize << (path.fine_level() - level);
    let dt = path.fine_dt();
    let mut grid: Vec<f64> = (0..)
        .map(|j| j * stride)
        .take_while(|&k| k <= path.steps())
        .map(|k| k as f64 * dt)
        .collect();
    if !path.steps().is_multiple_of(stride) {
        grid.push(path.horizon());
    }
    Ok(grid)
}

fn fine_indices(path: &BrownianPath, times: &[f64]) -> Result<Vec<usize>> {
    let scale = (path.fine_level() as f64).exp2();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t <= path.horizon()) {
            return Err(Error::InvalidArgument(format!(
                "output time {t} outside [0, {}]",
                path.horizon()
            )));
        }
        let scaled = t * scale;
        let k = scaled.round();
        if (scaled - k).abs() > 1e-9 {
            return Err(Error::OffGrid {
                t,
                level: path.fine_level(),
            });
        }
        let k = k as usize;
        if out.last().is_some_and(|&prev| prev >= k) {
            return Err(Error::InvalidArgument(
                "output times must be strictly increasing".into(),
            ));
        }
        out.push(k);
    }
    Ok(out)
}

fn check_inputs(
    domain: &DomainSpec,
    coeffs: &CoefficientSet,
    path: &BrownianPath,
    x0: &[f64],
) -> Result<()> {
    let d = domain.dim();
    for actual in [coeffs.dim_state(), x0.len()] {
        if actual != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual,
            });
        }
    }
    if coeffs.dim_noise() != path.dim_noise() {
        return Err(Error::DimensionMismatch {
            expected: coeffs.dim_noise(),
            actual: path.dim_noise(),
        });
    }
    let distance = domain.boundary_distance(x0);
    if distance > CLOSURE_TOL || distance.is_nan() {
        return Err(Error::OutOfDomain { distance });
    }
    Ok(())
}

/// Mutable state shared by both integrators.
struct Stepper<'a> {
    domain: &'a DomainSpec,
    record_contacts: bool,
    x: Vec<f64>,
    l: Vec<f64>,
    var: f64,
    v: Vec<f64>,
    dl: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(domain: &'a DomainSpec, x0: &[f64], record_contacts: bool) -> Self {
        let d = x0.len();
        Self {
            domain,
            record_contacts,
            x: x0.to_vec(),
            l: vec![0.0; d],
            var: 0.0,
            v: vec![0.0; d],
            dl: vec![0.0; d],
        }
    }

    /// Applies the free displacement held in `self.v`, ending at time `t`.
    fn advance(&mut self, t: f64, out: &mut ReflectedPath) -> Result<()> {
        if !all_finite(&self.v) {
            return Err(Error::NonFiniteState { t });
        }
        let push = self
            .domain
            .skorokhod_step_in_place(&mut self.x, &self.v, &mut self.dl)?;
        if !all_finite(&self.x) {
            return Err(Error::NonFiniteState { t });
        }
        if push > 0.0 {
            for (li, di) in self.l.iter_mut().zip(&self.dl) {
                *li += di;
            }
            self.var += push;
            if self.record_contacts {
                out.contacts.push(ContactEvent {
                    t,
                    state: self.x.clone(),
                    increment: self.dl.clone(),
                    variation_increment: push,
                    boundary_distance: self.domain.boundary_distance(&self.x),
                    cone_angle: self.domain.cone_angle(&self.x, &self.dl),
                });
            }
        }
        Ok(())
    }
}

/// Wong-Zakai approximation `X^n` driven by the lagged interpolant of `path`.
pub fn solve_wz(
    domain: &DomainSpec,
    coeffs: &CoefficientSet,
    path: &BrownianPath,
    n: u32,
    settings: &SolverSettings,
    x0: &[f64],
    output_times: &[f64],
) -> Result<ReflectedPath> {
    check_inputs(domain, coeffs, path, x0)?;
    if n > path.fine_level() {
        return Err(Error::LevelTooFine {
            level: n,
            fine_level: path.fine_level(),
        });
    }
    let substeps = settings.substeps_per_knot;
    if substeps == 0 {
        return Err(Error::InvalidArgument(
            "substeps_per_knot must be at least 1".into(),
        ));
    }
    let outputs: Vec<usize> = fine_indices(path, output_times)?
        .into_iter()
        .map(|k| k * substeps)
        .collect();
    let (d, m) = (domain.dim(), path.dim_noise());
    let substep_units = 1usize << (path.fine_level() - n);
    let knot_units = substep_units * substeps;
    let total = path.steps() * substeps;
    let unit_dt = path.fine_dt() / substeps as f64;

    let mut out = ReflectedPath::new(PathKind::WongZakai, n, d, outputs.len());
    let mut stepper = Stepper::new(domain, x0, settings.record_contacts);
    let mut sigma = vec![0.0; d * m];
    let mut drift = vec![0.0; d];
    let mut slope = vec![0.0; m];
    let mut next = 0;
    while next < outputs.len() && outputs[next] == 0 {
        out.record(0.0, &stepper.x, &stepper.l, 0.0);
        next += 1;
    }

    let mut u = 0usize;
    for k in 0..path.knots(n) {
        path.knot_slope_into(n, k as u64, &mut slope);
        let knot_end = ((k + 1) * knot_units).min(total);
        while u < knot_end {
            let mut seg_end = ((u / substep_units + 1) * substep_units).min(knot_end);
            if next < outputs.len() && outputs[next] > u {
                seg_end = seg_end.min(outputs[next]);
            }
            let dt = (seg_end - u) as f64 * unit_dt;
            coeffs.sigma_into(&stepper.x, &mut sigma);
            coeffs.drift_into(&stepper.x, &mut drift);
            for i in 0..d {
                let noise: f64 = (0..m).map(|j| sigma[i * m + j] * slope[j]).sum();
                stepper.v[i] = (noise + drift[i]) * dt;
            }
            let t = seg_end as f64 * unit_dt;
            stepper.advance(t, &mut out)?;
            u = seg_end;
            while next < outputs.len() && outputs[next] == u {
                out.record(t, &stepper.x, &stepper.l, stepper.var);
                next += 1;
            }
        }
    }
    Ok(out)
}

/// Projected Euler-Maruyama on the fine grid of `path`.
pub fn solve_reference(
    domain: &DomainSpec,
    coeffs: &CoefficientSet,
    path: &BrownianPath,
    settings: &SolverSettings,
    x0: &[f64],
    output_times: &[f64],
) -> Result<ReflectedPath> {
    check_inputs(domain, coeffs, path, x0)?;
    let outputs = fine_indices(path, output_times)?;
    let (d, m) = (domain.dim(), path.dim_noise());
    let dt = path.fine_dt();
    let mut out = ReflectedPath::new(PathKind::Reference, path.fine_level(), d, outputs.len());
    let mut stepper = Stepper::new(domain, x0, settings.record_contacts);
    let mut scratch = coeffs.scratch();
    let mut sigma = vec![0.0; d * m];
    let mut drift = vec![0.0; d];
    let mut dw = vec![0.0; m];
    let mut next = 0;
    if next < outputs.len() && outputs[next] == 0 {
        out.record(0.0, &stepper.x, &stepper.l, 0.0);
        next += 1;
    }
    let last = outputs.last().copied().unwrap_or(0);
    for k in 0..last {
        path.increment_into(k, &mut dw);
        coeffs.sigma_into(&stepper.x, &mut sigma);
        coeffs.ito_drift_into(&stepper.x, &mut scratch, &mut drift);
        for i in 0..d {
            let noise: f64 = (0..m).map(|j| sigma[i * m + j] * dw[j]).sum();
            stepper.v[i] = noise + drift[i] * dt;
        }
        let t = (k + 1) as f64 * dt;
        stepper.advance(t, &mut out)?;
        if outputs[next] == k + 1 {
            out.record(t, &stepper.x, &stepper.l, stepper.var);
            next += 1;
        }
    }
    Ok(out)
}

/// `(X^n, X)` on one Brownian path with shared output times.
pub fn coupled_solve(
    domain: &DomainSpec,
    coeffs: &CoefficientSet,
    path: &BrownianPath,
    n: u32,
    settings: &SolverSettings,
    x0: &[f64],
    output_times: &[f64],
) -> Result<(ReflectedPath, ReflectedPath)> {
    let approx = solve_wz(domain, coeffs, path, n, settings, x0, output_times)?;
    let reference = solve_reference(domain, coeffs, path, settings, x0, output_times)?;
    Ok((approx, reference))
}

/// Largest `|L(t_j) - L(t_i)| - (|L|(t_j) - |L|(t_i))` over consecutive
/// outputs; nonpositive up to rounding for a valid regulator.
pub fn regulator_excess(path: &ReflectedPath) -> f64 {
    (1..path.len())
        .map(|i| {
            let dl: Vec<f64> = path
                .regulator_at(i)
                .iter()
                .zip(path.regulator_at(i - 1))
                .map(|(a, b)| a - b)
                .collect();
            norm(&dl) - (path.variation[i] - path.variation[i - 1])
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_path;
    use crate::coefficients::{Diffusion, Drift};

    fn interval() -> DomainSpec {
        DomainSpec::interval(-1.0, 1.0).unwrap()
    }

    fn additive(sigma: f64) -> CoefficientSet {
        CoefficientSet::new(Diffusion::constant(vec![vec![sigma]]), Drift::zero(1)).unwrap()
    }

    fn push_right() -> CoefficientSet {
        CoefficientSet::new(
            Diffusion::constant(vec![vec![0.0]]),
            Drift::Constant { value: vec![1.0] },
        )
        .unwrap()
    }

    #[test]
    fn additive_noise_is_exact_at_knots() {
        let wide = DomainSpec::interval(-50.0, 50.0).unwrap();
        let coeffs = additive(0.4);
        let path = sample_path(1, 1.0, 10, 8).unwrap();
        let n = 5;
        let grid = output_grid(&path, n).unwrap();
        let (xn, x) = coupled_solve(
            &wide,
            &coeffs,
            &path,
            n,
            &SolverSettings::default(),
            &[0.0],
            &grid,
        )
        .unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let k = (t * 32.0).round() as usize;
            let lagged = path.value_at_fine(k.saturating_sub(1) * 32)[0];
            assert!((xn.state(i)[0] - 0.4 * lagged).abs() < 1e-12);
            let w = path.value_at_fine(k * 32)[0];
            assert!((x.state(i)[0] - 0.4 * w).abs() < 1e-12);
        }
        assert!(xn.regulator.iter().all(|&l| l == 0.0));
        assert!(x.variation.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_dynamics() {
        let coeffs = CoefficientSet::new(
            Diffusion::constant(vec![vec![0.0, 0.0], vec![0.0, 0.0]]),
            Drift::zero(2),
        )
        .unwrap();
        let ball = DomainSpec::ball(1.0, 2).unwrap();
        let path = sample_path(2, 1.0, 6, 1).unwrap();
        let grid = output_grid(&path, 4).unwrap();
        let (xn, x) = coupled_solve(
            &ball,
            &coeffs,
            &path,
            4,
            &SolverSettings::default(),
            &[0.3, -0.2],
            &grid,
        )
        .unwrap();
        for i in 0..grid.len() {
            assert_eq!(xn.state(i), &[0.3, -0.2]);
            assert_eq!(x.state(i), &[0.3, -0.2]);
        }
        assert_eq!(xn.last_variation(), 0.0);
        assert_eq!(xn.sup_distance_pow(&x, 2.0).unwrap(), 0.0);
    }

    /// Closed form for `dX = dt + dL` on `[-1, 1]` from 0: `X = min(t, 1)`,
    /// `L(t) = -(t - 1)^+`.
    #[test]
    fn deterministic_reflected_drift() {
        let path = sample_path(1, 2.0, 8, 0).unwrap();
        let grid = output_grid(&path, 4).unwrap();
        let settings = SolverSettings::default();
        let xn = solve_wz(
            &interval(),
            &push_right(),
            &path,
            4,
            &settings,
            &[0.0],
            &grid,
        )
        .unwrap();
        let x =
            solve_reference(&interval(), &push_right(), &path, &settings, &[0.0], &grid).unwrap();
        for p in [&xn, &x] {
            for (i, &t) in grid.iter().enumerate() {
                assert!((p.state(i)[0] - t.min(1.0)).abs() < 1e-12);
                assert!((p.regulator_at(i)[0] + (t - 1.0).max(0.0)).abs() < 1e-12);
            }
            assert!((p.last_variation() - 1.0).abs() < 1e-12);
            assert!((p.regulator_at(p.len() - 1)[0] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn off_grid_outputs_are_rejected() {
        let path = sample_path(1, 1.0, 4, 0).unwrap();
        let r = solve_reference(
            &interval(),
            &additive(0.1),
            &path,
            &SolverSettings::default(),
            &[0.0],
            &[0.1],
        );
        assert!(matches!(r, Err(Error::OffGrid { .. })));
        let r = solve_wz(
            &interval(),
            &additive(0.1),
            &path,
            5,
            &SolverSettings::default(),
            &[0.0],
            &[0.5],
        );
        assert!(matches!(r, Err(Error::LevelTooFine { .. })));
        let r = solve_wz(
            &interval(),
            &additive(0.1),
            &path,
            2,
            &SolverSettings::default(),
            &[2.0],
            &[0.5],
        );
        assert!(matches!(r, Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn boundary_start_resolves_on_first_step() {
        let path = sample_path(1, 1.0, 6, 2).unwrap();
        let grid = output_grid(&path, 6).unwrap();
        let r = solve_wz(
            &interval(),
            &push_right(),
            &path,
            3,
            &SolverSettings::default(),
            &[1.0],
            &grid,
        )
        .unwrap();
        assert!(r.states.iter().all(|&x| x == 1.0));
        assert!((r.last_variation() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_substeps_follow_outputs() {
        // Output times finer than the substep grid split substeps; with
        // additive noise the result is unchanged at shared times.
        let wide = DomainSpec::interval(-50.0, 50.0).unwrap();
        let path = sample_path(1, 1.0, 9, 3).unwrap();
        let coarse = output_grid(&path, 3).unwrap();
        let fine = output_grid(&path, 9).unwrap();
        let s = SolverSettings {
            substeps_per_knot: 3,
            record_contacts: false,
        };
        let a = solve_wz(&wide, &additive(0.7), &path, 3, &s, &[0.0], &coarse).unwrap();
        let b = solve_wz(&wide, &additive(0.7), &path, 3, &s, &[0.0], &fine).unwrap();
        for (i, t) in coarse.iter().enumerate() {
            let j = fine.iter().position(|u| u == t).unwrap();
            assert!((a.state(i)[0] - b.state(j)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_coefficients_abort() {
        let coeffs =
            CoefficientSet::new(Diffusion::constant(vec![vec![f64::NAN]]), Drift::zero(1)).unwrap();
        let path = sample_path(1, 1.0, 4, 0).unwrap();
        let grid = output_grid(&path, 4).unwrap();
        let r = solve_reference(
            &interval(),
            &coeffs,
            &path,
            &SolverSettings::default(),
            &[0.0],
            &grid,
        );
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn csv_layout() {
        let path = sample_path(1, 2.0, 3, 0).unwrap();
        let grid = output_grid(&path, 1).unwrap();
        let x = solve_reference(
            &interval(),
            &push_right(),
            &path,
            &SolverSettings::default(),
            &[0.0],
            &grid,
        )
        .unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,X_1,L_1,|L|");
        assert_eq!(lines.len(), grid.len() + 1);
        assert_eq!(lines.last().unwrap(), &"2,1,-1,1");
        assert!(!text.contains('\r'));
    }
}
