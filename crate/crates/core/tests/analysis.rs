use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;
use rayon::prelude::*;
use toadwave_core::analysis::*;
use toadwave_core::grid::make_trait_grid;
use toadwave_core::slab::solve_slab;
use toadwave_core::spectral::minimize_speed;
use toadwave_core::*;

/// Minimal constant of one suite polynomial, with the signal evaluated
/// by plain cos/sin sums and the two branches tried explicitly.
fn required_constant_by_direct_summation(i: usize) -> f64 {
    let cfg = InterpolationSuiteConfig::default();
    let (g, _) = suite_polynomial(cfg.seed, i, cfg.k_max, cfg.period);
    let k_max = g.k_max() as i64;
    let n = 4096;
    let samples: Vec<f64> = (0..n)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / n as f64;
            let mut s = g.coefficient(0).re;
            for k in 1..=k_max {
                let c = g.coefficient(k);
                s += 2.0 * (c.re * (k as f64 * phi).cos() - c.im * (k as f64 * phi).sin());
            }
            s
        })
        .collect();
    let l1 = samples.iter().map(|v| v.abs()).sum::<f64>() / n as f64 * cfg.period;
    let linf = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h32 = (-k_max..=k_max)
        .filter(|&k| k != 0)
        .map(|k| (k.abs() as f64).powi(3) * g.coefficient(k).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let first = linf.powi(3) / (l1 * h32 * h32);
    assert!(l1 * first <= h32, "case {i} left the first branch");
    first
}

#[test]
fn frozen_interpolation_constant_matches_the_sweep() {
    let n = InterpolationSuiteConfig::default().n_polys;
    let worst = (0..n)
        .into_par_iter()
        .map(required_constant_by_direct_summation)
        .reduce(|| 0.0, f64::max);
    let oracle = 1.1 * worst;
    assert!(
        (oracle / INTERPOLATION_C_ORACLE - 1.0).abs() < 1e-9,
        "{oracle} vs {INTERPOLATION_C_ORACLE}"
    );
}

#[test]
fn random_suite_passes_with_the_frozen_constant() {
    let report = interpolation_suite(&InterpolationSuiteConfig::default()).unwrap();
    assert_eq!(report.n_pairs, 100_000);
    assert_eq!(
        report.holder_violations, 0,
        "max ratio {}",
        report.holder_max_ratio
    );
    assert_eq!(report.interpolation_failures, 0);
    assert!(report.min_slack >= 1.0);
}

#[test]
fn suite_is_reproducible() {
    let cfg = InterpolationSuiteConfig {
        n_polys: 50,
        ..Default::default()
    };
    assert_eq!(
        interpolation_suite(&cfg).unwrap(),
        interpolation_suite(&cfg).unwrap()
    );
}

fn slab(tau: f64, a: f64, per_unit: f64, n_theta: usize) -> SlabSolution {
    let grid = SlabGrid::with_resolution(a, per_unit, make_trait_grid(1.0, 2.0, n_theta).unwrap())
        .unwrap();
    solve_slab(
        tau,
        0.01,
        &grid,
        &ModelParams::default(),
        &SlabSettings::default(),
    )
    .unwrap()
}

#[test]
fn harnack_ratio_is_one_without_trait_dependence() {
    let s = slab(0.0, 10.0, 10.0, 11);
    let h = harnack_ratios(&s.mu);
    assert!((h.global_ratio - 1.0).abs() < 1e-8, "{}", h.global_ratio);
    // the Dirichlet column is identically zero
    assert_eq!(h.skipped, 1);
    assert!(!h.nodes.contains(&(s.grid.n_xi() - 1)));
}

#[test]
fn harnack_ratio_is_stable_under_refinement() {
    let coarse = harnack_ratios(&slab(1.0, 10.0, 5.0, 11).mu).global_ratio;
    let fine = harnack_ratios(&slab(1.0, 10.0, 10.0, 21).mu).global_ratio;
    assert!(coarse.is_finite() && fine.is_finite());
    assert!((coarse / fine - 1.0).abs() < 0.1, "{coarse} vs {fine}");
}

fn min_speed_coarse() -> &'static MinSpeedResult {
    static CELL: OnceLock<MinSpeedResult> = OnceLock::new();
    CELL.get_or_init(|| {
        minimize_speed(
            1.0,
            &ModelParams::default(),
            &make_trait_grid(1.0, 2.0, 21).unwrap(),
            &SpeedSearch::default(),
        )
        .unwrap()
    })
}

#[test]
fn wave_limits_on_growing_slabs() {
    let slabs: Vec<SlabSolution> = [10.0, 20.0, 40.0]
        .into_par_iter()
        .map(|a| slab(1.0, a, 5.0, 11))
        .collect();
    let r = wave_limit_checks(&slabs, min_speed_coarse()).unwrap();
    assert!(r.gaps_decreasing, "{:?}", r.gaps);
    assert!(r.lower_ratio > 0.0);
    assert!(r.nu_ahead_ok, "{}", r.nu_ahead);
    assert!(
        (r.decay_slope / r.lambda_star - 1.0).abs() < 0.15,
        "{}",
        r.decay_slope
    );
}

#[test]
fn wave_limits_reject_unordered_slabs() {
    let s = slab(1.0, 5.0, 5.0, 5);
    assert!(wave_limit_checks(&[s.clone(), s], min_speed_coarse()).is_err());
    assert!(wave_limit_checks(&[], min_speed_coarse()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lower_ratio_is_the_true_minimum(values in prop::collection::vec(0.0f64..1.0, 21 * 11)) {
        let tg = make_trait_grid(1.0, 2.0, 11).unwrap();
        let grid = SlabGrid::new(2.0, 21, tg.clone()).unwrap();
        let mu = Field2D::from_values(21, 11, values).unwrap();
        let nu = mu.marginal(&tg);
        let s = SlabSolution {
            grid: grid.clone(),
            tau: 1.0,
            epsilon: nu[grid.center()].max(1e-3),
            c: 2.0,
            mu: mu.clone(),
            nu,
            iterations: 0,
            residual: 0.0,
            c_star: 2.0,
        };
        let ms = min_speed_coarse();
        let r = wave_limit_checks(std::slice::from_ref(&s), ms).unwrap_or_else(|_| panic!());
        let q: Vec<f64> = tg.nodes().iter().map(|&t| ms.grid.interpolate(&ms.q_star, t)).collect();
        let qm = tg.integrate(&q).unwrap();
        let mut brute = f64::INFINITY;
        for i in 0..21 {
            if grid.xi()[i] <= 0.0 {
                for (j, qj) in q.iter().enumerate() {
                    brute = brute.min(mu.get(i, j) * qm / qj);
                }
            }
        }
        prop_assert!((r.lower_ratio - brute).abs() <= 1e-14 * brute.max(1.0));
    }
}
