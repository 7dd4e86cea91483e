//! Monte Carlo studies on coupled paths.
//!
//! Each path `i` draws its Brownian motion from `derive_seed(&[seed, i])` at
//! level `max(levels) + fine_margin`. The reference `X` is solved once and
//! every `X^n` reads the same increments, so per-level errors share one
//! probability space. Per-path scalars are reduced with Welford moments;
//! with `deterministic_reduction` the reduction runs sequentially in path
//! order after a parallel map, which makes reports bit-reproducible for any
//! worker count.
//!
//! Standard errors are leave-one-out jackknife errors of sample means, which
//! reduce to `s / √M`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brownian::{sample_path, BrownianPath};
use crate::coefficients::{CoefficientSet, Diffusion, Drift};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, CLOSURE_TOL};
use crate::seed::derive_seed;
use crate::solvers::{output_grid, solve_reference, solve_wz, ReflectedPath, SolverSettings};
use crate::vecmath::dist_sq;

/// Fraction of failed paths above which a study aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;
pub const HOLDER_TOLERANCE: f64 = 0.2;

/// Domain, coefficients, start point and horizon of one reflected SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub domain: DomainSpec,
    pub coeffs: CoefficientSet,
    pub x0: Vec<f64>,
    pub horizon: f64,
}

impl Problem {
    pub fn new(
        domain: DomainSpec,
        coeffs: CoefficientSet,
        x0: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        domain.validate()?;
        if coeffs.dim_state() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                actual: coeffs.dim_state(),
            });
        }
        if x0.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                actual: x0.len(),
            });
        }
        let distance = domain.boundary_distance(&x0);
        if distance > CLOSURE_TOL || distance.is_nan() {
            return Err(Error::OutOfDomain { distance });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidHorizon(horizon));
        }
        Ok(Self {
            domain,
            coeffs,
            x0,
            horizon,
        })
    }

    /// `[-1, 1]`, `σ(y) = 0.5 + 0.2 sin y`, `b(y) = -0.3 y`, `x0 = 0`, `T = 1`.
    pub fn interval_benchmark() -> Self {
        let coeffs =
            CoefficientSet::new(Diffusion::scalar_sine(0.5, 0.2), Drift::scalar_linear(-0.3))
                .expect("benchmark coefficients are valid");
        Self::new(
            DomainSpec::interval(-1.0, 1.0).expect("valid interval"),
            coeffs,
            vec![0.0],
            1.0,
        )
        .expect("benchmark problem is valid")
    }

    /// `[-1, 1]` with constant `σ`, no drift, started at 0.
    pub fn additive_interval(sigma: f64, horizon: f64) -> Result<Self> {
        let coeffs = CoefficientSet::new(Diffusion::constant(vec![vec![sigma]]), Drift::zero(1))?;
        Self::new(DomainSpec::interval(-1.0, 1.0)?, coeffs, vec![0.0], horizon)
    }
}

/// Default Lyapunov exponent: `-2c0/α - 0.5` when `c0 > 0`, else `-1`.
pub fn default_lyapunov_rate(domain: &DomainSpec) -> f64 {
    let c0 = domain.c0();
    if c0 > 0.0 {
        -2.0 * c0 / domain.alpha() - 0.5
    } else {
        -1.0
    }
}

fn check_lyapunov_rate(domain: &DomainSpec, r: f64) -> Result<()> {
    let threshold = -2.0 * domain.c0() / domain.alpha();
    if !(r.is_finite() && r < threshold) {
        return Err(Error::InvalidLyapunovRate { r, threshold });
    }
    Ok(())
}

/// Sandwich constants `(c1, c2)` from the φ range of the domain.
pub fn sandwich_constants(domain: &DomainSpec, r: f64) -> (f64, f64) {
    let (lo, hi) = domain.phi_range();
    ((r * (hi + hi)).exp(), (r * (lo + lo)).exp())
}

/// `g = exp(r(φ(x) + φ(x^n)))` with φ clamped to its range, so the sandwich
/// holds exactly in floating point.
fn lyapunov_weight(domain: &DomainSpec, r: f64, x: &[f64], xn: &[f64]) -> f64 {
    let (lo, hi) = domain.phi_range();
    let y1 = domain.phi(x).clamp(lo, hi);
    let y2 = domain.phi(xn).clamp(lo, hi);
    (r * (y1 + y2)).exp()
}

/// `f_n`, `g_n` and `|X^n - X|^2` along one coupled pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovTrace {
    pub r: f64,
    pub times: Vec<f64>,
    pub f_values: Vec<f64>,
    pub g_values: Vec<f64>,
    pub distances_sq: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl LyapunovTrace {
    /// `c1·|X^n−X|² ≤ f_n ≤ c2·|X^n−X|²` at every stored time.
    pub fn sandwich_holds(&self) -> bool {
        self.f_values
            .iter()
            .zip(&self.distances_sq)
            .all(|(&f, &y3)| self.c1 * y3 <= f && f <= self.c2 * y3)
    }
}

pub fn lyapunov_trace(
    domain: &DomainSpec,
    x: &ReflectedPath,
    xn: &ReflectedPath,
    r: f64,
) -> Result<LyapunovTrace> {
    check_lyapunov_rate(domain, r)?;
    if x.times != xn.times || x.dim != xn.dim {
        return Err(Error::MismatchedTimes);
    }
    let (c1, c2) = sandwich_constants(domain, r);
    let mut trace = LyapunovTrace {
        r,
        times: x.times.clone(),
        f_values: Vec::with_capacity(x.len()),
        g_values: Vec::with_capacity(x.len()),
        distances_sq: Vec::with_capacity(x.len()),
        c1,
        c2,
    };
    for i in 0..x.len() {
        let g = lyapunov_weight(domain, r, x.state(i), xn.state(i));
        let y3 = dist_sq(x.state(i), xn.state(i));
        trace.g_values.push(g);
        trace.distances_sq.push(y3);
        trace.f_values.push(g * y3);
    }
    Ok(trace)
}

/// Least squares of `log2(error)` on `n`. Returns `(slope, intercept)` where
/// `slope` is the decay rate (the negated regression coefficient) and
/// `intercept` the fitted `log2` error at the first level.
pub fn fit_rate(levels: &[u32], errors: &[f64]) -> Result<(f64, f64)> {
    let xs: Vec<f64> = levels.iter().map(|&n| n as f64).collect();
    let (beta, intercept) = log2_fit(&xs, errors)?;
    Ok((-beta, intercept))
}

/// OLS of `log2(y)` on `x`; the intercept is evaluated at `x[0]`.
fn log2_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("fit inputs differ in length".into()));
    }
    if ys.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if let Some(bad) = ys.iter().find(|&&y| !(y.is_finite() && y > 0.0)) {
        return Err(Error::DegenerateFit(format!(
            "nonpositive or non-finite value {bad}"
        )));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::DegenerateFit("all values are equal".into()));
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = logs.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&logs)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let beta = sxy / sxx;
    Ok((beta, ybar + beta * (xs[0] - xbar)))
}

/// Streaming mean and variance (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64).max(0.0)
    }

    /// Jackknife standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// How per-path work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Parallelism {
    /// Thread count; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub deterministic_reduction: bool,
}

#[derive(Default)]
struct Accumulator {
    moments: Vec<Moments>,
    failed: usize,
    first_failure: Option<(usize, Error)>,
}

impl Accumulator {
    fn push(mut self, index: usize, result: Result<Vec<f64>>) -> Self {
        match result {
            Ok(values) => {
                if self.moments.is_empty() {
                    self.moments = vec![Moments::default(); values.len()];
                }
                for (m, v) in self.moments.iter_mut().zip(values) {
                    m.push(v);
                }
            }
            Err(e) => {
                self.failed += 1;
                if self.first_failure.as_ref().is_none_or(|(i, _)| index < *i) {
                    self.first_failure = Some((index, e));
                }
            }
        }
        self
    }

    fn merge(mut self, other: Self) -> Self {
        if self.moments.is_empty() {
            self.moments = other.moments;
        } else {
            for (a, b) in self.moments.iter_mut().zip(&other.moments) {
                a.merge(b);
            }
        }
        self.failed += other.failed;
        if let Some((j, e)) = other.first_failure {
            if self.first_failure.as_ref().is_none_or(|(i, _)| j < *i) {
                self.first_failure = Some((j, e));
            }
        }
        self
    }
}

/// Per-path scalars reduced to moments, plus the failure count.
fn reduce_paths<F>(
    total: usize,
    parallelism: Parallelism,
    per_path: F,
) -> Result<(Vec<Moments>, usize)>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let run = || -> Accumulator {
        if parallelism.deterministic_reduction {
            let results: Vec<Result<Vec<f64>>> =
                (0..total).into_par_iter().map(&per_path).collect();
            results
                .into_iter()
                .enumerate()
                .fold(Accumulator::default(), |acc, (i, r)| acc.push(i, r))
        } else {
            (0..total)
                .into_par_iter()
                .fold(Accumulator::default, |acc, i| acc.push(i, per_path(i)))
                .reduce(Accumulator::default, Accumulator::merge)
        }
    };
    let acc = match parallelism.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    if acc.failed as f64 > MAX_FAILURE_FRACTION * total as f64 || acc.moments.is_empty() {
        return Err(Error::TooManyFailures {
            failed: acc.failed,
            total,
            first: acc
                .first_failure
                .map(|(i, e)| format!("path {i}: {e}"))
                .unwrap_or_default(),
        });
    }
    Ok((acc.moments, acc.failed))
}

/// Per-level Monte Carlo means of one error functional with a rate fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// `"sup"` (over the output grid) or `"terminal"` (at `t = T`).
    pub statistic: String,
    pub p: f64,
    pub levels: Vec<u32>,
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Decay rate of `log2(error)` per level; absent when degenerate.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub degenerate: bool,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub seed: u64,
}

impl RateReport {
    fn from_moments(
        statistic: &str,
        p: f64,
        levels: &[u32],
        moments: &[Moments],
        failed: usize,
        seed: u64,
    ) -> Self {
        let errors: Vec<f64> = moments.iter().map(|m| m.mean).collect();
        let fit = fit_rate(levels, &errors).ok();
        Self {
            statistic: statistic.into(),
            p,
            levels: levels.to_vec(),
            stderrs: moments.iter().map(Moments::stderr).collect(),
            errors,
            slope: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            degenerate: fit.is_none(),
            n_paths: moments.first().map_or(0, |m| m.count as usize),
            failed_paths: failed,
            seed,
        }
    }

    /// CSV with columns `n, error, stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,error,stderr")?;
        for i in 0..self.levels.len() {
            writeln!(
                w,
                "{},{},{}",
                self.levels[i], self.errors[i], self.stderrs[i]
            )?;
        }
        Ok(())
    }
}

/// Per-level `E[f_n(T)]` next to `E|X^n(T) − X(T)|²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovDecay {
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    pub levels: Vec<u32>,
    pub mean_f: Vec<f64>,
    pub stderr_f: Vec<f64>,
    pub mean_distance_sq: Vec<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub degenerate: bool,
}

impl LyapunovDecay {
    /// `E[f_n] / E|X^n − X|² ∈ [c1, c2]` at every level with nonzero error.
    pub fn ratios_within_sandwich(&self) -> bool {
        self.mean_f
            .iter()
            .zip(&self.mean_distance_sq)
            .all(|(&f, &d)| d == 0.0 && f == 0.0 || d > 0.0 && f >= self.c1 * d && f <= self.c2 * d)
    }
}

/// `E[|L^n|(T)²]` across levels, next to the reference value `E[|L|(T)²]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatorTrend {
    pub levels: Vec<u32>,
    pub mean_variation_sq: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// `E[|L|(T)²]` of the reference on the same paths.
    pub reference_variation_sq: f64,
    pub reference_stderr: f64,
    /// Paired `E[|L^n|(T)² − |L|(T)²]` per level and its standard error.
    pub excess: Vec<f64>,
    pub excess_stderrs: Vec<f64>,
    /// Least-squares slope of `E[|L^n|(T)²]` against `n`.
    pub slope: f64,
    /// Jackknife standard error of the slope over paths.
    pub slope_stderr: f64,
}

impl RegulatorTrend {
    /// Uniform bound in `n`: no level exceeds the limiting second moment by
    /// more than two standard errors of the paired excess.
    pub fn bounded(&self) -> bool {
        self.excess
            .iter()
            .zip(&self.excess_stderrs)
            .all(|(&e, &se)| e <= 2.0 * se)
    }

    /// The fitted slope is within two standard errors of zero or negative.
    /// Convergence from below registers as a trend here, so this is
    /// informational only.
    pub fn flat(&self) -> bool {
        self.slope <= 2.0 * self.slope_stderr
    }
}

/// Paired difference `E[s_n − s_{n'}]` of a per-path error between levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDecrease {
    pub from: u32,
    pub to: u32,
    pub p: f64,
    pub mean_difference: f64,
    pub stderr: f64,
}

impl LevelDecrease {
    /// The decrease exceeds `k` standard errors.
    pub fn significant(&self, k: f64) -> bool {
        self.mean_difference > k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub sup: Vec<RateReport>,
    pub terminal: Vec<RateReport>,
    pub lyapunov: LyapunovDecay,
    pub regulator: RegulatorTrend,
    /// Sup-error decreases between consecutive levels, per moment order.
    pub decreases: Vec<LevelDecrease>,
    pub fine_level: u32,
}

impl StudyReport {
    pub fn sup_report(&self, p: f64) -> Option<&RateReport> {
        self.sup.iter().find(|r| r.p == p)
    }

    pub fn terminal_report(&self, p: f64) -> Option<&RateReport> {
        self.terminal.iter().find(|r| r.p == p)
    }
}

/// Strong-error study over a set of Wong-Zakai levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub problem: Problem,
    pub levels: Vec<u32>,
    pub p_list: Vec<f64>,
    pub paths: usize,
    pub fine_margin: u32,
    pub substeps_per_knot: usize,
    pub seed: u64,
    /// `None` selects [`default_lyapunov_rate`].
    pub lyapunov_r: Option<f64>,
    /// Extra bridge refinements of every path beyond `fine_margin`; the
    /// coarse knots, and hence every `X^n`, are unchanged.
    pub reference_refinements: u32,
    pub parallelism: Parallelism,
}

impl ConvergenceStudy {
    pub fn new(problem: Problem, levels: Vec<u32>, paths: usize, seed: u64) -> Self {
        Self {
            problem,
            levels,
            p_list: vec![2.0],
            paths,
            fine_margin: 4,
            substeps_per_knot: SolverSettings::default().substeps_per_knot,
            seed,
            lyapunov_r: None,
            reference_refinements: 0,
            parallelism: Parallelism {
                workers: None,
                deterministic_reduction: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("levels must be nonempty".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "levels must be strictly increasing".into(),
            ));
        }
        if self.levels[0] == 0 {
            return Err(Error::InvalidArgument("levels start at 1".into()));
        }
        if self.paths < 2 {
            return Err(Error::InvalidArgument(
                "at least two paths are required".into(),
            ));
        }
        if self.fine_margin < 2 {
            return Err(Error::InvalidArgument(
                "fine_margin must be at least 2".into(),
            ));
        }
        if self.substeps_per_knot == 0 {
            return Err(Error::InvalidArgument(
                "substeps_per_knot must be at least 1".into(),
            ));
        }
        if self.p_list.is_empty() || self.p_list.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::InvalidArgument(
                "moment orders must be positive".into(),
            ));
        }
        check_lyapunov_rate(&self.problem.domain, self.lyapunov_rate())
    }

    pub fn lyapunov_rate(&self) -> f64 {
        self.lyapunov_r
            .unwrap_or_else(|| default_lyapunov_rate(&self.problem.domain))
    }

    pub fn fine_level(&self) -> u32 {
        self.levels.last().copied().unwrap_or(0) + self.fine_margin
    }

    /// The Brownian path of path index `i`.
    pub fn path(&self, i: usize) -> Result<BrownianPath> {
        let mut path = sample_path(
            self.problem.coeffs.dim_noise(),
            self.problem.horizon,
            self.fine_level(),
            derive_seed(&[self.seed, i as u64]),
        )?;
        for _ in 0..self.reference_refinements {
            path = path.refine();
        }
        Ok(path)
    }

    /// The coupled pair `(X^n, X)` of path `i` on the study's output grid.
    pub fn coupled_pair(&self, i: usize, n: u32) -> Result<(ReflectedPath, ReflectedPath)> {
        let path = self.path(i)?;
        let grid = output_grid(&path, *self.levels.last().unwrap_or(&n))?;
        let pb = &self.problem;
        let settings = self.settings();
        let xn = solve_wz(&pb.domain, &pb.coeffs, &path, n, &settings, &pb.x0, &grid)?;
        let x = solve_reference(&pb.domain, &pb.coeffs, &path, &settings, &pb.x0, &grid)?;
        Ok((xn, x))
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings {
            substeps_per_knot: self.substeps_per_knot,
            record_contacts: false,
        }
    }

    /// Scalars of one path. Layout per level `l` (`P = p_list.len()`):
    /// `P` sup powers, `P` terminal powers, `f_n(T)`, `|X^n(T) − X(T)|²`,
    /// `|L^n|(T)²`, `|L^n|(T)² − |L|(T)²`; then the regulator trend
    /// combination, `|L|(T)²`, and the paired sup differences
    /// `(level l, level l+1)` for every `p`.
    fn path_scalars(&self, i: usize) -> Result<Vec<f64>> {
        let pb = &self.problem;
        let path = self.path(i)?;
        let grid = output_grid(&path, *self.levels.last().expect("validated"))?;
        let settings = self.settings();
        let x = solve_reference(&pb.domain, &pb.coeffs, &path, &settings, &pb.x0, &grid)?;
        let r = self.lyapunov_rate();
        let np = self.p_list.len();
        let stride = 2 * np + 4;
        let mut out = vec![0.0; self.levels.len() * stride];
        for (l, &n) in self.levels.iter().enumerate() {
            let xn = solve_wz(&pb.domain, &pb.coeffs, &path, n, &settings, &pb.x0, &grid)?;
            let distances = xn.distances(&x)?;
            let sup = distances.iter().copied().fold(0.0, f64::max);
            let terminal = *distances.last().expect("grid is nonempty");
            let row = &mut out[l * stride..(l + 1) * stride];
            for (j, &p) in self.p_list.iter().enumerate() {
                row[j] = sup.powf(p);
                row[np + j] = terminal.powf(p);
            }
            let d2 = dist_sq(x.last_state(), xn.last_state());
            row[2 * np] = lyapunov_weight(&pb.domain, r, x.last_state(), xn.last_state()) * d2;
            row[2 * np + 1] = d2;
            row[2 * np + 2] = xn.last_variation().powi(2);
            row[2 * np + 3] = row[2 * np + 2] - x.last_variation().powi(2);
        }
        let weights = ols_weights(&self.levels);
        let trend: f64 = (0..self.levels.len())
            .map(|l| weights[l] * out[l * stride + 2 * np + 2])
            .sum();
        out.push(trend);
        out.push(x.last_variation().powi(2));
        for l in 0..self.levels.len().saturating_sub(1) {
            for j in 0..np {
                out.push(out[l * stride + j] - out[(l + 1) * stride + j]);
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<StudyReport> {
        self.validate()?;
        let (moments, failed) =
            reduce_paths(self.paths, self.parallelism, |i| self.path_scalars(i))?;
        let np = self.p_list.len();
        let stride = 2 * np + 4;
        let nl = self.levels.len();
        let column = |offset: usize| -> Vec<Moments> {
            (0..nl).map(|l| moments[l * stride + offset]).collect()
        };

        let sup = self
            .p_list
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                RateReport::from_moments("sup", p, &self.levels, &column(j), failed, self.seed)
            })
            .collect();
        let terminal = self
            .p_list
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                RateReport::from_moments(
                    "terminal",
                    p,
                    &self.levels,
                    &column(np + j),
                    failed,
                    self.seed,
                )
            })
            .collect();

        let r = self.lyapunov_rate();
        let (c1, c2) = sandwich_constants(&self.problem.domain, r);
        let f = column(2 * np);
        let mean_f: Vec<f64> = f.iter().map(|m| m.mean).collect();
        let fit = fit_rate(&self.levels, &mean_f).ok();
        let lyapunov = LyapunovDecay {
            r,
            c1,
            c2,
            levels: self.levels.clone(),
            stderr_f: f.iter().map(Moments::stderr).collect(),
            mean_f,
            mean_distance_sq: column(2 * np + 1).iter().map(|m| m.mean).collect(),
            slope: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            degenerate: fit.is_none(),
        };

        let var = column(2 * np + 2);
        let excess = column(2 * np + 3);
        let trend = moments[nl * stride];
        let reference = moments[nl * stride + 1];
        let regulator = RegulatorTrend {
            levels: self.levels.clone(),
            mean_variation_sq: var.iter().map(|m| m.mean).collect(),
            stderrs: var.iter().map(Moments::stderr).collect(),
            reference_variation_sq: reference.mean,
            reference_stderr: reference.stderr(),
            excess: excess.iter().map(|m| m.mean).collect(),
            excess_stderrs: excess.iter().map(Moments::stderr).collect(),
            slope: trend.mean,
            slope_stderr: trend.stderr(),
        };

        let mut decreases = Vec::new();
        for l in 0..nl.saturating_sub(1) {
            for (j, &p) in self.p_list.iter().enumerate() {
                let m = moments[nl * stride + 2 + l * np + j];
                decreases.push(LevelDecrease {
                    from: self.levels[l],
                    to: self.levels[l + 1],
                    p,
                    mean_difference: m.mean,
                    stderr: m.stderr(),
                });
            }
        }
        Ok(StudyReport {
            sup,
            terminal,
            lyapunov,
            regulator,
            decreases,
            fine_level: self.fine_level() + self.reference_refinements,
        })
    }
}

/// Weights `w_l` with `Σ w_l y_l` the least-squares slope of `y` on `n`.
fn ols_weights(levels: &[u32]) -> Vec<f64> {
    let k = levels.len() as f64;
    let mean = levels.iter().map(|&n| n as f64).sum::<f64>() / k;
    let sxx: f64 = levels.iter().map(|&n| (n as f64 - mean).powi(2)).sum();
    if sxx == 0.0 {
        return vec![0.0; levels.len()];
    }
    levels.iter().map(|&n| (n as f64 - mean) / sxx).collect()
}

/// `E[sup_t |X^n − X|^p]` per level; see [`ConvergenceStudy`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_strong_error(
    problem: &Problem,
    levels: &[u32],
    p: f64,
    paths: usize,
    fine_margin: u32,
    substeps_per_knot: usize,
    seed: u64,
) -> Result<RateReport> {
    let mut study = ConvergenceStudy::new(problem.clone(), levels.to_vec(), paths, seed);
    study.p_list = vec![p];
    study.fine_margin = fine_margin;
    study.substeps_per_knot = substeps_per_knot;
    Ok(study.run()?.sup.remove(0))
}

/// Per-level `E[f_n(T)]` with its rate fit.
pub fn lyapunov_decay_check(
    problem: &Problem,
    levels: &[u32],
    paths: usize,
    seed: u64,
) -> Result<LyapunovDecay> {
    Ok(
        ConvergenceStudy::new(problem.clone(), levels.to_vec(), paths, seed)
            .run()?
            .lyapunov,
    )
}

/// Process whose increments a [`HolderStudy`] measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HolderTarget {
    WongZakai { level: u32 },
    Reference,
}

/// Moments `E|X(t+h) − X(t)|^p` over dyadic lags `h = 2^-j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderStudy {
    pub problem: Problem,
    pub target: HolderTarget,
    pub p_list: Vec<u32>,
    pub paths: usize,
    /// Lags `2^-j` for `j` in this inclusive range.
    pub lag_levels: (u32, u32),
    pub fine_margin: u32,
    pub substeps_per_knot: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderRow {
    pub p: u32,
    pub moments: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Slope of `log E|ΔX|^p` against `log h`.
    pub slope: Option<f64>,
    pub threshold: f64,
    pub degenerate: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub target: HolderTarget,
    pub lags: Vec<f64>,
    pub rows: Vec<HolderRow>,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub seed: u64,
}

impl HolderReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn degenerate(&self) -> bool {
        self.rows.iter().any(|r| r.degenerate)
    }

    /// CSV with columns `p, lag, moment, stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "p,lag,moment,stderr")?;
        for row in &self.rows {
            for (i, lag) in self.lags.iter().enumerate() {
                writeln!(w, "{},{},{},{}", row.p, lag, row.moments[i], row.stderrs[i])?;
            }
        }
        Ok(())
    }
}

impl HolderStudy {
    pub fn new(
        problem: Problem,
        target: HolderTarget,
        p_list: Vec<u32>,
        paths: usize,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            target,
            p_list,
            paths,
            lag_levels: (3, 8),
            fine_margin: 4,
            substeps_per_knot: SolverSettings::default().substeps_per_knot,
            seed,
            parallelism: Parallelism {
                workers: None,
                deterministic_reduction: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() || self.p_list.iter().any(|p| ![2, 4, 6].contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "moment orders must be drawn from {{2, 4, 6}}, got {:?}",
                self.p_list
            )));
        }
        let (lo, hi) = self.lag_levels;
        if lo >= hi {
            return Err(Error::InvalidArgument(
                "lag levels need at least two lags".into(),
            ));
        }
        if (-(lo as f64)).exp2() > self.problem.horizon {
            return Err(Error::InvalidArgument(
                "largest lag exceeds the horizon".into(),
            ));
        }
        if self.paths < 2 {
            return Err(Error::InvalidArgument(
                "at least two paths are required".into(),
            ));
        }
        if self.substeps_per_knot == 0 {
            return Err(Error::InvalidArgument(
                "substeps_per_knot must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn fine_level(&self) -> u32 {
        let base = match self.target {
            HolderTarget::WongZakai { level } => level.max(self.lag_levels.1),
            HolderTarget::Reference => self.lag_levels.1,
        };
        base + self.fine_margin
    }

    /// Per path: for every `(p, lag)` the average of `|ΔX|^p` over
    /// non-overlapping increments.
    fn path_scalars(&self, i: usize) -> Result<Vec<f64>> {
        let pb = &self.problem;
        let path = sample_path(
            pb.coeffs.dim_noise(),
            pb.horizon,
            self.fine_level(),
            derive_seed(&[self.seed, i as u64]),
        )?;
        let (lo, hi) = self.lag_levels;
        let grid = output_grid(&path, hi)?;
        let settings = SolverSettings {
            substeps_per_knot: self.substeps_per_knot,
            record_contacts: false,
        };
        let x = match self.target {
            HolderTarget::WongZakai { level } => solve_wz(
                &pb.domain, &pb.coeffs, &path, level, &settings, &pb.x0, &grid,
            )?,
            HolderTarget::Reference => {
                solve_reference(&pb.domain, &pb.coeffs, &path, &settings, &pb.x0, &grid)?
            }
        };
        // Knots j / 2^hi with j·2^-hi ≤ T; a trailing off-grid T is ignored.
        let knots = (pb.horizon * (hi as f64).exp2() + 1e-9).floor() as usize;
        let mut out = Vec::with_capacity(self.p_list.len() * (hi - lo + 1) as usize);
        for &p in &self.p_list {
            for j in lo..=hi {
                let stride = 1usize << (hi - j);
                let count = knots / stride;
                let sum: f64 = (0..count)
                    .map(|a| {
                        dist_sq(x.state((a + 1) * stride), x.state(a * stride)).powi(p as i32 / 2)
                    })
                    .sum();
                out.push(sum / count as f64);
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<HolderReport> {
        self.validate()?;
        let (moments, failed) =
            reduce_paths(self.paths, self.parallelism, |i| self.path_scalars(i))?;
        let (lo, hi) = self.lag_levels;
        let lags: Vec<f64> = (lo..=hi).map(|j| (-(j as f64)).exp2()).collect();
        let log_lags: Vec<f64> = lags.iter().map(|h| h.log2()).collect();
        let nlag = lags.len();
        let rows = self
            .p_list
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let ms = &moments[k * nlag..(k + 1) * nlag];
                let means: Vec<f64> = ms.iter().map(|m| m.mean).collect();
                let slope = log2_fit(&log_lags, &means).ok().map(|f| f.0);
                let threshold = p as f64 / 2.0 - HOLDER_TOLERANCE;
                HolderRow {
                    p,
                    stderrs: ms.iter().map(Moments::stderr).collect(),
                    moments: means,
                    slope,
                    threshold,
                    degenerate: slope.is_none(),
                    pass: slope.is_none_or(|s| s >= threshold),
                }
            })
            .collect();
        Ok(HolderReport {
            target: self.target,
            lags,
            rows,
            n_paths: moments.first().map_or(0, |m| m.count as usize),
            failed_paths: failed,
            seed: self.seed,
        })
    }
}
