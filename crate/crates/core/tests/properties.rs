use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use wz_core::brownian::sample_path;
use wz_core::geometry::{CLOSURE_TOL, CONE_ANGLE_TOL};
use wz_core::harness::{ConvergenceStudy, HolderStudy, HolderTarget, Problem};
use wz_core::seed::rng_for;
use wz_core::solvers::{output_grid, regulator_excess, solve_reference, solve_wz};
use wz_core::{CoefficientSet, Diffusion, DomainSpec, Drift, SolverSettings};

#[test]
fn box_reflection_is_coordinate_clipping() {
    let unit = DomainSpec::unit_box(2).unwrap();
    let mut rng = rng_for(&[11]);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..=1.0)).collect();
        let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let step = unit.skorokhod_step(&x, &v).unwrap();
        for i in 0..2 {
            let trial = x[i] + v[i];
            let clipped = trial.clamp(0.0, 1.0);
            assert!((step.state[i] - clipped).abs() <= 1e-14);
            assert!((step.regulator_increment[i] - (clipped - trial)).abs() <= 1e-14);
        }
    }
}

/// Bridge midpoints, standardised against their conditional law, are
/// N(0, 1): Kolmogorov-Smirnov at the 1% level.
#[test]
fn bridge_residuals_are_standard_normal() {
    let path = sample_path(1, 1.0, 10, 4).unwrap();
    let fine = path.refine();
    let sd = (-(12.0_f64) / 2.0).exp2();
    let mut z: Vec<f64> = (0..path.steps())
        .map(|k| {
            let mid = fine.value_at_fine(2 * k + 1)[0];
            let avg = 0.5 * (path.value_at_fine(k)[0] + path.value_at_fine(k + 1)[0]);
            (mid - avg) / sd
        })
        .collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = z.len() as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
}

/// `E[sup_k |W^n(k/2^n) - W(k/2^n)|^2]` decays like `2^{-n}` up to a log
/// factor, so the sup-norm decays at rate ≈ ½ per level.
#[test]
fn lagged_interpolant_uniform_error() {
    let levels: Vec<u32> = (3..=9).collect();
    let mut means = vec![0.0; levels.len()];
    let paths = 400;
    for s in 0..paths {
        let w = sample_path(1, 1.0, 12, s).unwrap();
        for (l, &n) in levels.iter().enumerate() {
            let stride = 1 << (12 - n);
            let sup = (0..=(1usize << n))
                .map(|k| {
                    let t = k as f64 / (n as f64).exp2();
                    let wn = w.wz_value(n, t.min(1.0)).unwrap()[0];
                    (wn - w.value_at_fine(k * stride)[0]).abs()
                })
                .fold(0.0, f64::max);
            means[l] += sup / paths as f64;
        }
    }
    let (slope, _) = wz_core::harness::fit_rate(&levels, &means).unwrap();
    assert!((slope - 0.5).abs() < 0.15, "slope {slope}");
}

/// Additive noise far from the boundary: the harness error is the lagged
/// interpolation error `E[max_t σ²|W^n(t) − W(t)|²]`, computed here directly.
#[test]
fn additive_noise_harness_matches_interpolant_oracle() {
    let sigma = 0.3;
    let coeffs =
        CoefficientSet::new(Diffusion::constant(vec![vec![sigma]]), Drift::zero(1)).unwrap();
    let problem = Problem::new(
        DomainSpec::interval(-40.0, 40.0).unwrap(),
        coeffs,
        vec![0.0],
        1.0,
    )
    .unwrap();
    let levels: Vec<u32> = (3..=7).collect();
    let mut study = ConvergenceStudy::new(problem, levels.clone(), 300, 21);
    study.fine_margin = 3;
    let report = study.run().unwrap();
    let sup = &report.sup[0];
    assert!(sup.slope.unwrap() > 0.7, "slope {:?}", sup.slope);

    let fine = 10;
    let grid_level = *levels.last().unwrap();
    for (l, &n) in levels.iter().enumerate() {
        let mut oracle = 0.0;
        for i in 0..300 {
            let w = study.path(i).unwrap();
            let stride = 1usize << (fine - grid_level);
            let worst = (0..=(1usize << grid_level))
                .map(|k| {
                    let t = k as f64 / (grid_level as f64).exp2();
                    let wn = w.wz_value(n, t).unwrap()[0];
                    (sigma * (wn - w.value_at_fine(k * stride)[0])).powi(2)
                })
                .fold(0.0, f64::max);
            oracle += worst / 300.0;
        }
        assert!(
            (sup.errors[l] - oracle).abs() <= 1e-10 * oracle,
            "level {n}: {} vs {oracle}",
            sup.errors[l]
        );
    }
}

#[test]
fn error_decreases_between_distant_levels() {
    let coeffs = CoefficientSet::new(Diffusion::scalar_sine(0.5, 0.2), Drift::zero(1)).unwrap();
    let problem = Problem::new(
        DomainSpec::interval(-1.0, 1.0).unwrap(),
        coeffs,
        vec![0.0],
        1.0,
    )
    .unwrap();
    let report = ConvergenceStudy::new(problem, vec![3, 8], 100, 8)
        .run()
        .unwrap();
    let e = &report.sup[0].errors;
    assert!(e[0] > e[1], "{e:?}");
}

#[test]
fn errors_are_monotone_for_builtin_problems() {
    let ball = Problem::new(
        DomainSpec::ball(1.0, 2).unwrap(),
        CoefficientSet::new(
            Diffusion::Trig {
                a: vec![vec![0.4, 0.0], vec![0.0, 0.4]],
                b: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
                c: vec![
                    vec![vec![1.0, 0.0], vec![0.0, 0.0]],
                    vec![vec![0.0, 0.0], vec![0.0, 1.0]],
                ],
                phase: None,
            },
            Drift::zero(2),
        )
        .unwrap(),
        vec![0.2, 0.0],
        1.0,
    )
    .unwrap();
    for problem in [Problem::interval_benchmark(), ball] {
        let report = ConvergenceStudy::new(problem, (3..=7).collect(), 200, 6)
            .run()
            .unwrap();
        let sup = &report.sup[0];
        for w in 0..sup.errors.len() - 1 {
            let slack = 2.0 * (sup.stderrs[w].powi(2) + sup.stderrs[w + 1].powi(2)).sqrt();
            assert!(
                sup.errors[w + 1] <= sup.errors[w] + slack,
                "{:?}",
                sup.errors
            );
        }
        assert!(report.lyapunov.ratios_within_sandwich());
    }
}

#[test]
fn reference_is_converged_against_the_gap() {
    let mut study =
        ConvergenceStudy::new(Problem::interval_benchmark(), (4..=8).collect(), 200, 13);
    let base = study.run().unwrap();
    study.reference_refinements = 2;
    let finer = study.run().unwrap();
    for (a, b) in base.sup[0].errors.iter().zip(&finer.sup[0].errors) {
        assert!((a - b).abs() < 0.1 * a, "{a} vs {b}");
    }
}

#[test]
fn substep_refinement_is_stable() {
    let pb = Problem::interval_benchmark();
    let n = 6;
    let (mut change, mut error) = (0.0, 0.0);
    for i in 0..100 {
        let path = sample_path(1, 1.0, 10, i).unwrap();
        let grid = output_grid(&path, n).unwrap();
        let run = |s| {
            let settings = SolverSettings {
                substeps_per_knot: s,
                record_contacts: false,
            };
            solve_wz(&pb.domain, &pb.coeffs, &path, n, &settings, &pb.x0, &grid).unwrap()
        };
        let (a, b) = (run(8), run(16));
        let x = solve_reference(
            &pb.domain,
            &pb.coeffs,
            &path,
            &SolverSettings::default(),
            &pb.x0,
            &grid,
        )
        .unwrap();
        change += a.sup_distance_pow(&b, 1.0).unwrap();
        error += a.sup_distance_pow(&x, 1.0).unwrap();
    }
    assert!(change / error < 0.3, "ratio {}", change / error);
}

#[test]
fn additive_holder_exponent() {
    let pb = Problem::additive_interval(0.05, 1.0).unwrap();
    let report = HolderStudy::new(pb, HolderTarget::Reference, vec![2], 2000, 3)
        .run()
        .unwrap();
    let row = &report.rows[0];
    assert!(
        (row.slope.unwrap() - 1.0).abs() < 0.05,
        "slope {:?}",
        row.slope
    );
    for (m, h) in row.moments.iter().zip(&report.lags) {
        assert!((m / (0.0025 * h) - 1.0).abs() < 0.1);
    }
}

fn domains() -> impl Strategy<Value = DomainSpec> {
    prop_oneof![
        Just(DomainSpec::interval(-1.0, 1.0).unwrap()),
        Just(DomainSpec::unit_box(2).unwrap()),
        Just(DomainSpec::ball(1.0, 2).unwrap()),
        Just(DomainSpec::ball(1.0, 3).unwrap()),
        Just(DomainSpec::annulus(0.5, 1.5, 2).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn skorokhod_step_contract(domain in domains(), seed in any::<u64>(), scale in 0.01f64..0.17) {
        let d = domain.dim();
        let x = domain.interior_samples(1, seed).remove(0);
        let mut rng = rng_for(&[seed, 1]);
        let v: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let step = domain.skorokhod_step(&x, &v).unwrap();
        prop_assert!(domain.boundary_distance(&step.state) <= CLOSURE_TOL);
        let dl = wz_core_norm(&step.regulator_increment);
        prop_assert!(step.variation_increment >= dl - 1e-12);
        prop_assert_eq!(step.variation_increment == 0.0, step.regulator_increment.iter().all(|&c| c == 0.0));
        if step.variation_increment > 0.0 {
            prop_assert!(domain.boundary_distance(&step.state) >= -domain.boundary_tolerance());
            prop_assert!(domain.cone_angle(&step.state, &step.regulator_increment) <= CONE_ANGLE_TOL);
        }
    }

    #[test]
    fn reflected_path_invariants(seed in 0u64..10_000, n in 2u32..7) {
        let pb = Problem::interval_benchmark();
        let path = sample_path(1, 1.0, 9, seed).unwrap();
        let grid = output_grid(&path, 9).unwrap();
        let settings = SolverSettings { substeps_per_knot: 4, record_contacts: true };
        let xn = solve_wz(&pb.domain, &pb.coeffs, &path, n, &settings, &pb.x0, &grid).unwrap();
        let x = solve_reference(&pb.domain, &pb.coeffs, &path, &settings, &pb.x0, &grid).unwrap();
        for p in [&xn, &x] {
            for i in 0..p.len() {
                prop_assert!(pb.domain.boundary_distance(p.state(i)) <= CLOSURE_TOL);
            }
            prop_assert!(p.variation.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(regulator_excess(p) <= 1e-12);
            for c in &p.contacts {
                prop_assert!(c.boundary_distance >= -pb.domain.boundary_tolerance());
                prop_assert!(c.cone_angle <= CONE_ANGLE_TOL);
            }
        }
    }

    #[test]
    fn refine_then_restrict_is_identity(seed in any::<u64>(), level in 1u32..8, m in 1usize..3) {
        let path = sample_path(m, 0.75, level, seed).unwrap();
        prop_assert_eq!(path.refine().restrict(level).unwrap(), path);
    }
}

fn wz_core_norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}
