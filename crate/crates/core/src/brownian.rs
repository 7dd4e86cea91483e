//! Dyadic Brownian paths and the lagged piecewise-linear interpolant.
//!
//! A [`BrownianPath`] stores `W` at the knots `k / 2^N` of its fine level.
//! Coarser interpolants `W^n` (`n ≤ N`) read the same values, so one path
//! couples every Wong-Zakai level to the reference solver.
//!
//! On `[k/2^n, (k+1)/2^n)` the interpolant runs over the *previous* dyadic
//! increment:
//!
//! ```text
//! W^n(t) = W((k-1)/2^n) + 2^n (t - k/2^n) (W(k/2^n) - W((k-1)/2^n))
//! ```
//!
//! with `W(s) = W(0) = 0` for `s < 0`. This is not the usual current-interval
//! interpolation: `W^n` lags `W` by one knot, is adapted, and vanishes on
//! the first interval `[0, 2^-n)`. Its slope is right-continuous at knots.

use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_for;

const ROOT_STREAM: u64 = 0x5A;
const BRIDGE_STREAM: u64 = 0xB7;
const MAX_LEVEL: u32 = 40;

/// `W` sampled at `k / 2^N`, `k = 0..=steps`, for an `m`-dimensional
/// Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim_noise: usize,
    fine_level: u32,
    steps: usize,
    seed: u64,
    /// Row-major `(steps + 1) × m`; the first row is zero.
    values: Vec<f64>,
}

/// The dyadic knot containing a time: `t ∈ [k/2^n, (k+1)/2^n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicIndex {
    pub level: u32,
    pub knot: u64,
    /// `((k-1)/2^n) ∨ 0`.
    pub s_minus: f64,
    /// `k / 2^n`.
    pub s_n: f64,
}

impl DyadicIndex {
    pub fn locate(level: u32, t: f64) -> Self {
        let scale = (level as f64).exp2();
        let knot = (t * scale).floor().max(0.0) as u64;
        Self {
            level,
            knot,
            s_minus: (knot.saturating_sub(1)) as f64 / scale,
            s_n: knot as f64 / scale,
        }
    }
}

/// Number of fine steps covering `[0, horizon]`, padding up to the grid.
pub fn steps_for(horizon: f64, level: u32) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidHorizon(horizon));
    }
    let scaled = horizon * (level as f64).exp2();
    let rounded = scaled.round();
    let steps = if (scaled - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        scaled.ceil()
    };
    Ok(steps.max(1.0) as usize)
}

/// Samples `W` on `[0, T]` at fine level `N`. Each increment is drawn from
/// a generator keyed by `(seed, N, k)`, so the path does not depend on the
/// order of generation.
pub fn sample_path(m: usize, horizon: f64, fine_level: u32, seed: u64) -> Result<BrownianPath> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "noise dimension must be positive".into(),
        ));
    }
    if fine_level == 0 || fine_level > MAX_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "fine level must lie in 1..={MAX_LEVEL}, got {fine_level}"
        )));
    }
    let steps = steps_for(horizon, fine_level)?;
    let sd = (-(fine_level as f64) / 2.0).exp2();
    let mut values = vec![0.0; (steps + 1) * m];
    for k in 0..steps {
        let mut rng = rng_for(&[seed, ROOT_STREAM, fine_level as u64, k as u64]);
        for j in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            values[(k + 1) * m + j] = values[k * m + j] + sd * z;
        }
    }
    Ok(BrownianPath {
        dim_noise: m,
        fine_level,
        steps,
        seed,
        values,
    })
}

impl BrownianPath {
    /// Builds a path from explicit increments (row-major `steps × m`).
    pub fn from_increments(
        m: usize,
        fine_level: u32,
        increments: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if m == 0 || increments.is_empty() || !increments.len().is_multiple_of(m) {
            return Err(Error::InvalidArgument(
                "increments must be a nonempty multiple of the noise dimension".into(),
            ));
        }
        if fine_level == 0 || fine_level > MAX_LEVEL {
            return Err(Error::InvalidArgument(format!(
                "fine level {fine_level} out of range"
            )));
        }
        let steps = increments.len() / m;
        let mut values = vec![0.0; (steps + 1) * m];
        for k in 0..steps {
            for j in 0..m {
                values[(k + 1) * m + j] = values[k * m + j] + increments[k * m + j];
            }
        }
        Ok(Self {
            dim_noise: m,
            fine_level,
            steps,
            seed,
            values,
        })
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn fine_level(&self) -> u32 {
        self.fine_level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.fine_dt()
    }

    pub fn fine_dt(&self) -> f64 {
        (-(self.fine_level as f64)).exp2()
    }

    /// `W(k / 2^N)`.
    pub fn value_at_fine(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim_noise..(k + 1) * self.dim_noise]
    }

    /// `ΔW_k = W((k+1)/2^N) - W(k/2^N)`, written into `out`.
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let m = self.dim_noise;
        let (lo, hi) = (
            &self.values[k * m..(k + 1) * m],
            &self.values[(k + 1) * m..(k + 2) * m],
        );
        for ((o, a), b) in out.iter_mut().zip(hi).zip(lo) {
            *o = a - b;
        }
    }

    /// All fine increments, row-major `steps × m`.
    pub fn increments(&self) -> Vec<f64> {
        let m = self.dim_noise;
        let mut out = vec![0.0; self.steps * m];
        for k in 0..self.steps {
            self.increment_into(k, &mut out[k * m..(k + 1) * m]);
        }
        out
    }

    fn check_level(&self, n: u32) -> Result<()> {
        if n > self.fine_level {
            return Err(Error::LevelTooFine {
                level: n,
                fine_level: self.fine_level,
            });
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// `W(j / 2^n)` with `j` clamped below at zero.
    fn coarse_value(&self, n: u32, j: u64) -> &[f64] {
        let stride = 1usize << (self.fine_level - n);
        self.value_at_fine(j as usize * stride)
    }

    /// Number of level-`n` knot intervals meeting `[0, T)`.
    pub fn knots(&self, n: u32) -> usize {
        let stride = 1usize << (self.fine_level - n);
        self.steps.div_ceil(stride)
    }

    /// Slope of `W^n` on the `k`-th level-`n` interval.
    pub(crate) fn knot_slope_into(&self, n: u32, k: u64, out: &mut [f64]) {
        if k == 0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let scale = (n as f64).exp2();
        let hi = self.coarse_value(n, k);
        let lo = self.coarse_value(n, k - 1);
        for j in 0..self.dim_noise {
            out[j] = scale * (hi[j] - lo[j]);
        }
    }

    /// `W^n(t)`.
    pub fn wz_value(&self, n: u32, t: f64) -> Result<Vec<f64>> {
        self.check_level(n)?;
        self.check_time(t)?;
        let idx = DyadicIndex::locate(n, t);
        let lo = self.coarse_value(n, idx.knot.saturating_sub(1));
        let mut slope = vec![0.0; self.dim_noise];
        self.knot_slope_into(n, idx.knot, &mut slope);
        let elapsed = t - idx.s_n;
        Ok(lo
            .iter()
            .zip(&slope)
            .map(|(w, s)| w + elapsed * s)
            .collect())
    }

    /// `Ẇ^n(t)`, right-continuous at knots.
    pub fn wz_slope(&self, n: u32, t: f64) -> Result<Vec<f64>> {
        self.check_level(n)?;
        self.check_time(t)?;
        let idx = DyadicIndex::locate(n, t);
        let mut slope = vec![0.0; self.dim_noise];
        self.knot_slope_into(n, idx.knot, &mut slope);
        Ok(slope)
    }

    /// Inserts Brownian-bridge midpoints: the result has fine level `N + 1`
    /// and agrees with `self` on every level-`N` knot. The residual at
    /// interval `k` is `N(0, 2^{-(N+2)} I)`, drawn from `(seed, N+1, k)`.
    pub fn refine(&self) -> BrownianPath {
        let m = self.dim_noise;
        let level = self.fine_level + 1;
        let sd = (-(level as f64 + 1.0) / 2.0).exp2();
        let mut values = vec![0.0; (2 * self.steps + 1) * m];
        for k in 0..self.steps {
            let mut rng = rng_for(&[self.seed, BRIDGE_STREAM, level as u64, k as u64]);
            for j in 0..m {
                let left = self.values[k * m + j];
                let right = self.values[(k + 1) * m + j];
                let z: f64 = rng.sample(StandardNormal);
                values[2 * k * m + j] = left;
                values[(2 * k + 1) * m + j] = 0.5 * (left + right) + sd * z;
            }
        }
        let last = self.steps * m;
        values[2 * last..2 * last + m].copy_from_slice(&self.values[last..last + m]);
        BrownianPath {
            dim_noise: m,
            fine_level: level,
            steps: 2 * self.steps,
            seed: self.seed,
            values,
        }
    }

    /// The path read at the knots of a coarser level.
    pub fn restrict(&self, level: u32) -> Result<BrownianPath> {
        self.check_level(level)?;
        if level == 0 {
            return Err(Error::InvalidArgument("level must be at least 1".into()));
        }
        let stride = 1usize << (self.fine_level - level);
        if !self.steps.is_multiple_of(stride) {
            return Err(Error::OffGrid {
                t: self.horizon(),
                level,
            });
        }
        let steps = self.steps / stride;
        let m = self.dim_noise;
        let mut values = Vec::with_capacity((steps + 1) * m);
        for k in 0..=steps {
            values.extend_from_slice(self.value_at_fine(k * stride));
        }
        Ok(BrownianPath {
            dim_noise: m,
            fine_level: level,
            steps,
            seed: self.seed,
            values,
        })
    }

    /// Binary dump: little-endian `m: u64, N: u64, T: f64, seed: u64`,
    /// followed by the `steps × m` increments as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.dim_noise as u64).to_le_bytes())?;
        w.write_all(&(self.fine_level as u64).to_le_bytes())?;
        w.write_all(&self.horizon().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.increments() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let level = u64::from_le_bytes(next(&mut r)?) as u32;
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let invalid = |e: Error| io::Error::new(io::ErrorKind::InvalidData, e.to_string());
        let steps = steps_for(horizon, level).map_err(invalid)?;
        let mut increments = vec![0.0; steps * m];
        for v in increments.iter_mut() {
            *v = f64::from_le_bytes(next(&mut r)?);
        }
        Self::from_increments(m, level, &increments, seed).map_err(invalid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the lagged interpolant from fine increments.
    fn interpolant_oracle(increments: &[f64], fine: u32, n: u32, t: f64) -> f64 {
        let w = |s: f64| -> f64 {
            let s = s.max(0.0);
            let k = (s * (fine as f64).exp2()).round() as usize;
            increments[..k].iter().sum()
        };
        let h = (-(n as f64)).exp2();
        let k = (t / h).floor();
        w((k - 1.0) * h) + (t - k * h) / h * (w(k * h) - w((k - 1.0) * h))
    }

    #[test]
    fn deterministic_and_sized() {
        let a = sample_path(1, 1.0, 3, 42).unwrap();
        let b = sample_path(1, 1.0, 3, 42).unwrap();
        assert_eq!(a.increments().len(), 8);
        let bytes = |p: &BrownianPath| {
            p.increments()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<_>>()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(a, sample_path(1, 1.0, 3, 43).unwrap());
        assert_eq!(a.value_at_fine(0), &[0.0]);
    }

    #[test]
    fn horizon_padding_and_errors() {
        let p = sample_path(2, 0.3, 2, 1).unwrap();
        assert_eq!(p.steps(), 2);
        assert_eq!(p.horizon(), 0.5);
        assert!(matches!(
            sample_path(1, 0.0, 3, 1),
            Err(Error::InvalidHorizon(_))
        ));
        assert!(matches!(
            sample_path(1, -1.0, 3, 1),
            Err(Error::InvalidHorizon(_))
        ));
    }

    #[test]
    fn aggregate_moments_of_terminal_value() {
        let paths = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..paths {
            let p = sample_path(1, 1.0, 3, i as u64).unwrap();
            let w = p.value_at_fine(p.steps())[0];
            s += w;
            s2 += w * w;
        }
        let mean = s / paths as f64;
        let var = s2 / paths as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn refine_preserves_knots() {
        let p = sample_path(2, 1.0, 4, 9).unwrap();
        let r = p.refine();
        assert_eq!(r.fine_level(), 5);
        assert_eq!(r.restrict(4).unwrap(), p);
        assert_eq!(r.restrict(4).unwrap().increments(), p.increments());
        assert_eq!(p.refine(), r);
    }

    #[test]
    fn midpoint_residual_variance() {
        let level = 3;
        let draws = 100_000;
        let mut s2 = 0.0;
        for i in 0..draws {
            let p = sample_path(1, 0.125, level, i as u64).unwrap();
            let r = p.refine();
            let mid = r.value_at_fine(1)[0];
            let resid = mid - 0.5 * (p.value_at_fine(0)[0] + p.value_at_fine(1)[0]);
            s2 += resid * resid;
        }
        let var = s2 / draws as f64;
        let target = (-(level as f64 + 2.0)).exp2();
        assert!((var / target - 1.0).abs() < 0.02, "{var} vs {target}");
    }

    #[test]
    fn interpolant_on_first_interval_vanishes() {
        let p = sample_path(3, 1.0, 6, 5).unwrap();
        for t in [0.0, 0.1, 0.2, 0.2499] {
            assert_eq!(p.wz_value(2, t).unwrap(), vec![0.0; 3]);
            assert_eq!(p.wz_slope(2, t).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn lag_identity_at_knots() {
        let p = sample_path(2, 1.0, 7, 3).unwrap();
        for n in 1..=7u32 {
            let stride = 1usize << (7 - n);
            for k in 1..=(1usize << n) {
                let t = k as f64 * (-(n as f64)).exp2();
                assert_eq!(p.wz_value(n, t).unwrap(), p.value_at_fine((k - 1) * stride));
            }
        }
    }

    #[test]
    fn midpoints_match_oracle() {
        let fine = 6;
        let p = sample_path(1, 1.0, fine, 77).unwrap();
        let inc = p.increments();
        for n in [2u32, 4, 6] {
            let h = (-(n as f64)).exp2();
            for k in 0..(1u32 << n) {
                let t = (k as f64 + 0.5) * h;
                let ours = p.wz_value(n, t).unwrap()[0];
                let oracle = interpolant_oracle(&inc, fine, n, t);
                assert!((ours - oracle).abs() < 1e-12);
                if k >= 1 {
                    let w = |j: usize| p.value_at_fine(j * (1 << (fine - n)))[0];
                    let half = 0.5 * w(k as usize - 1) + 0.5 * w(k as usize);
                    assert!((ours - half).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn value_is_integral_of_slope() {
        let p = sample_path(2, 1.0, 8, 21).unwrap();
        let n = 5;
        let h = (-(n as f64)).exp2();
        for t in [0.013, 0.3, 0.55, 0.999, 1.0] {
            let idx = DyadicIndex::locate(n, t);
            let mut acc = [0.0; 2];
            for k in 0..idx.knot {
                let s = p.wz_slope(n, k as f64 * h).unwrap();
                acc.iter_mut().zip(&s).for_each(|(a, v)| *a += v * h);
            }
            let s = p.wz_slope(n, t).unwrap();
            acc.iter_mut()
                .zip(&s)
                .for_each(|(a, v)| *a += v * (t - idx.s_n));
            let w = p.wz_value(n, t).unwrap();
            for j in 0..2 {
                assert!((acc[j] - w[j]).abs() < 1e-12);
            }
            let eps = 1e-4 * h;
            if t + eps < (idx.knot + 1) as f64 * h && t + eps <= 1.0 {
                assert_eq!(p.wz_slope(n, t + eps).unwrap(), s);
            }
        }
    }

    #[test]
    fn level_checks() {
        let p = sample_path(1, 1.0, 4, 0).unwrap();
        assert!(matches!(
            p.wz_value(5, 0.5),
            Err(Error::LevelTooFine { .. })
        ));
        assert!(matches!(
            p.wz_slope(5, 0.5),
            Err(Error::LevelTooFine { .. })
        ));
        let idx = DyadicIndex::locate(3, 0.0);
        assert_eq!((idx.knot, idx.s_minus, idx.s_n), (0, 0.0, 0.0));
        let idx = DyadicIndex::locate(3, 0.4);
        assert_eq!((idx.knot, idx.s_minus, idx.s_n), (3, 0.25, 0.375));
    }

    #[test]
    fn adapted_to_past_increments() {
        let fine = 7;
        let p = sample_path(1, 1.0, fine, 4).unwrap();
        let n = 4;
        for t in [0.2, 0.5, 0.77] {
            let idx = DyadicIndex::locate(n, t);
            let keep = idx.knot as usize * (1 << (fine - n));
            let mut inc = p.increments();
            inc[keep..].iter_mut().for_each(|v| *v = 0.0);
            let truncated = BrownianPath::from_increments(1, fine, &inc, 4).unwrap();
            let a = p.wz_value(n, t).unwrap()[0];
            let b = truncated.wz_value(n, t).unwrap()[0];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_dump_round_trip() {
        let p = sample_path(2, 0.5, 5, 123).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * p.increments().len());
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        let q = BrownianPath::read_binary(buf.as_slice()).unwrap();
        assert_eq!(q.steps(), p.steps());
        assert_eq!(q.seed(), 123);
        for k in 0..=p.steps() {
            for j in 0..2 {
                assert!((q.value_at_fine(k)[j] - p.value_at_fine(k)[j]).abs() < 1e-14);
            }
        }
    }
}
