//! Desk-scale run of every invariant suite, reported check by check.

use rayon::prelude::*;
use serde::Serialize;
use toadwave_core::analysis::{
    harnack_ratios, interpolation_check, interpolation_suite, sobolev_norms, suite_polynomial,
    wave_limit_checks, InterpolationBranch,
};
use toadwave_core::evolution::{initial_field, total_mass, Stepper};
use toadwave_core::slab::{solve_kpp_slab, solve_slab, KppParams};
use toadwave_core::spectral::{minimize_speed, profile_shape, rel1_refinement};
use toadwave_core::{Advection, Field2D, MinSpeedResult, SlabGrid, SlabSettings, SlabSolution};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

pub const SUITES: [&str; 6] = [
    "spectral",
    "slab",
    "evolution",
    "harnack",
    "appendixB",
    "limits",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub suite: &'static str,
    /// The property being checked.
    pub anchor: &'static str,
    pub criterion: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<&'static str>,
    pub checks: Vec<Check>,
    pub failed: Vec<String>,
    pub passed: bool,
}

struct Suite {
    name: &'static str,
    checks: Vec<Check>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    fn add(
        &mut self,
        id: &str,
        anchor: &'static str,
        criterion: impl Into<String>,
        value: f64,
        passed: bool,
    ) {
        self.checks.push(Check {
            id: id.to_string(),
            suite: self.name,
            anchor,
            criterion: criterion.into(),
            value,
            passed,
        });
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn spectral_at(config: &RunConfig, tau: f64, n_theta: usize) -> CliResult<MinSpeedResult> {
    Ok(minimize_speed(
        tau,
        &config.model_params(),
        &config.trait_grid(n_theta)?,
        &config.speed_search(),
    )?)
}

fn small_slab(
    config: &RunConfig,
    tau: f64,
    a: f64,
    per_unit: f64,
    n_theta: usize,
) -> CliResult<SlabSolution> {
    let grid = SlabGrid::with_resolution(a, per_unit, config.trait_grid(n_theta)?)?;
    Ok(solve_slab(
        tau,
        config.slab.epsilon,
        &grid,
        &config.model_params(),
        &SlabSettings::default(),
    )?)
}

fn spectral_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("spectral");
    let p = &config.params;
    let ms = spectral_at(config, 1.0, 201)?;
    let res = ms.residuals;
    s.add(
        "rel1",
        "mean-trait identity on the dispersion curve",
        "R1 <= 1e-6",
        res.r1,
        res.r1 <= 1e-6,
    );
    s.add(
        "rel2",
        "spatial sorting: mean trait above the midpoint",
        "R2 > 0",
        res.r2,
        res.r2 > 0.0,
    );
    s.add(
        "rel3",
        "stationarity of c at the minimizing decay rate",
        "|R3| <= 1e-5 c*",
        res.r3,
        res.r3.abs() <= 1e-5 * ms.c_star,
    );
    s.add(
        "rel4",
        "lower bound c* >= lambda* (theta_min + theta_max)",
        "R4 >= -1e-8",
        res.r4,
        res.r4 >= -1e-8,
    );
    s.add(
        "rel6",
        "c* above the KPP speed of the mean trait",
        "R6 > 0",
        res.r6,
        res.r6 > 0.0,
    );

    let study = rel1_refinement(
        ms.lambda_star,
        1.0,
        &config.model_params(),
        p.theta_min,
        p.theta_max,
        50,
        3,
    )?;
    let worst = study
        .ratios
        .iter()
        .fold(0.0f64, |m, r| m.max((r - 4.0).abs()));
    s.add(
        "rel1_order",
        "second-order convergence of the mean-trait identity",
        "|ratio - 4| <= 0.5 per grid doubling",
        worst,
        worst <= 0.5,
    );

    let kpp = spectral_at(config, 0.0, 51)?;
    let c_exact = 2.0 * (p.r * p.theta_min).sqrt();
    let l_exact = (p.r / p.theta_min).sqrt();
    let err = ((kpp.c_star - c_exact) / c_exact)
        .abs()
        .max(((kpp.lambda_star - l_exact) / l_exact).abs());
    s.add(
        "kpp_anchor",
        "constant diffusivity gives c* = 2 sqrt(r theta_min)",
        "relative error <= 1e-6",
        err,
        err <= 1e-6,
    );

    let shape = profile_shape(&ms.q_star, &ms.solution(), &ms.grid)?;
    let min_q = ms.q_star.iter().copied().fold(f64::INFINITY, f64::min);
    s.add(
        "profile_positive",
        "principal eigenfunction is positive",
        "min Q* > 0",
        min_q,
        min_q > 0.0,
    );
    s.add(
        "profile_increasing",
        "Q* increasing in the trait",
        "strictly increasing",
        f64::from(u8::from(shape.is_increasing)),
        shape.is_increasing,
    );
    let gap = match (shape.theta0_empirical, shape.theta0_predicted) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => f64::INFINITY,
    };
    let h = ms.grid.spacing();
    s.add(
        "inflection",
        "inflection of Q* where -lambda c + lambda^2 theta + r vanishes",
        "within 2 grid spacings",
        gap,
        gap <= 2.0 * h,
    );
    let min_c = ms.scan.iter().map(|d| d.c).fold(f64::INFINITY, f64::min);
    s.add(
        "dispersion_minimum",
        "c(lambda) >= c* on the scan",
        "min scan c >= c* - 1e-12",
        min_c - ms.c_star,
        min_c >= ms.c_star - 1e-12,
    );
    Ok(s)
}

fn slab_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("slab");
    let eps = config.slab.epsilon;
    let sol = small_slab(config, 1.0, 10.0, 5.0, 11)?;
    let min_mu = sol.mu.min();
    s.add(
        "slab_nonnegative",
        "slab solution is nonnegative",
        "min mu >= 0",
        min_mu,
        min_mu >= 0.0,
    );
    let norm = (sol.nu_at_center() - eps).abs();
    s.add(
        "slab_normalization",
        "nu(0) = epsilon",
        "|nu(0) - epsilon| <= 1e-8",
        norm,
        norm <= 1e-8,
    );
    s.add(
        "slab_ceiling",
        "slab speed below the minimal speed",
        "0 < c <= c* + 1e-3",
        sol.c - sol.c_star,
        sol.c > 0.0 && sol.c <= sol.c_star + 1e-3,
    );
    let nu_max = sol.nu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    s.add(
        "slab_nu_bounded",
        "nu stays in [0, 1]",
        "max nu <= 1 + 1e-10",
        nu_max,
        nu_max <= 1.0 + 1e-10,
    );

    let p = &config.params;
    let kp = KppParams {
        r: p.r,
        theta_min: p.theta_min,
    };
    let flat = small_slab(config, 0.0, 10.0, 5.0, 11)?;
    let kpp = solve_kpp_slab(flat.c, 10.0, flat.grid.n_xi(), &kp, Advection::Hybrid)?;
    let gap = max_abs_diff(&flat.nu, &kpp.nu);
    s.add(
        "tau0_reduction",
        "trait-independent slab reduces to the scalar KPP slab",
        "max |nu - nu_KPP| <= 1e-8",
        gap,
        gap <= 1e-8,
    );
    let speeds = [0.5, 1.0, 1.5];
    let kpps = speeds
        .iter()
        .map(|&c| solve_kpp_slab(c, 10.0, 101, &kp, Advection::Hybrid))
        .collect::<toadwave_core::Result<Vec<_>>>()?;
    let all_ok = kpps
        .iter()
        .all(|k| k.decreasing && k.nu.iter().all(|v| (0.0..=1.0).contains(v)));
    s.add(
        "kpp_profile",
        "scalar KPP slab profile decreasing in [0, 1]",
        "all three speeds",
        f64::from(u8::from(all_ok)),
        all_ok,
    );
    let centers: Vec<f64> = kpps.iter().map(|k| k.nu_at_center()).collect();
    let ordered = centers.windows(2).all(|w| w[1] < w[0]);
    s.add(
        "kpp_speed_order",
        "nu_c(0) decreasing in c",
        "strictly decreasing over c = 0.5, 1, 1.5",
        centers[2] - centers[0],
        ordered,
    );
    Ok(s)
}

fn evolution_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("evolution");
    let base = {
        let mut c = config.evolution_config()?;
        c.x_min = 0.0;
        c.x_max = 40.0;
        c.n_x = 401;
        c.trait_grid = config.trait_grid(11)?;
        c.dt = 0.01;
        c.t_end = if c.r > 0.0 { 10.0 / c.r } else { 10.0 };
        c.initial_mass_width = 5.0;
        c
    };
    let m = base.trait_grid.len();
    let measure = base.trait_grid.measure();

    let mut st = Stepper::new(&base)?;
    let mut zero = Field2D::zeros(base.n_x, m);
    for _ in 0..20 {
        st.step(&mut zero)?;
    }
    let z = zero.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    s.add(
        "evo_zero",
        "extinction is a fixed point",
        "max |n| = 0",
        z,
        z == 0.0,
    );

    let mut st = Stepper::new(&base)?;
    let mut sat = Field2D::from_fn(base.n_x, m, |_, _| 1.0 / measure);
    let before = sat.clone();
    st.step(&mut sat)?;
    let drift = (100..301)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .fold(0.0f64, |a, (i, j)| {
            a.max((sat.get(i, j) - before.get(i, j)).abs())
        });
    s.add(
        "evo_saturated",
        "saturated uniform state is invariant",
        "interior drift per step <= 1e-12",
        drift,
        drift <= 1e-12,
    );

    if base.r > 0.0 {
        let mut st = Stepper::new(&base)?;
        let eta = 1e-6;
        let mut small = Field2D::from_fn(base.n_x, m, |_, _| eta / measure);
        for _ in 0..100 {
            st.step(&mut small)?;
        }
        let rho = small.marginal(&base.trait_grid)[200];
        let err = (rho / (eta * base.r.exp()) - 1.0).abs();
        s.add(
            "evo_growth",
            "linearized growth eta e^{rt}",
            "relative error < 1%",
            err,
            err < 0.01,
        );
    }

    let mut cons = base.clone();
    cons.r = 0.0;
    cons.x_max = 60.0;
    cons.n_x = 601;
    let mut st = Stepper::new(&cons)?;
    let mut n = Field2D::from_fn(cons.n_x, m, |i, _| {
        let x = i as f64 * 0.1 - 30.0;
        (-x * x).exp()
    });
    let m0 = total_mass(&n, &cons);
    for _ in 0..100 {
        st.step(&mut n)?;
    }
    let rel = ((total_mass(&n, &cons) - m0) / m0).abs();
    s.add(
        "evo_mass",
        "mass conservation without reaction",
        "relative drift per unit time <= 1e-8",
        rel,
        rel <= 1e-8,
    );

    let mut st = Stepper::new(&base)?;
    let mut n = initial_field(&base);
    let mut lowest = f64::INFINITY;
    for _ in 0..200 {
        st.step(&mut n)?;
        lowest = lowest.min(n.min());
    }
    s.add(
        "evo_nonnegative",
        "nonnegativity under the step cap",
        "min n >= -1e-12",
        lowest,
        lowest >= -1e-12,
    );
    Ok(s)
}

fn harnack_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("harnack");
    let sol = small_slab(config, 1.0, 10.0, 5.0, 11)?;
    let h = harnack_ratios(&sol.mu);
    let lowest = h.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    s.add(
        "harnack_at_least_one",
        "ratios are at least one",
        "min ratio >= 1",
        lowest,
        lowest >= 1.0,
    );
    s.add(
        "harnack_finite",
        "global ratio finite",
        "finite",
        h.global_ratio,
        h.global_ratio.is_finite(),
    );
    let scaled = harnack_ratios(&sol.mu.scaled(3.7));
    let diff = max_abs_diff(&h.ratios, &scaled.ratios);
    s.add(
        "harnack_scale",
        "ratios invariant under mu -> s mu",
        "max change <= 1e-12",
        diff,
        diff <= 1e-12,
    );
    let flat = small_slab(config, 0.0, 10.0, 5.0, 11)?;
    let g = (harnack_ratios(&flat.mu).global_ratio - 1.0).abs();
    s.add(
        "harnack_tau0",
        "trait-independent slab has ratio one",
        "|ratio - 1| <= 1e-8",
        g,
        g <= 1e-8,
    );
    Ok(s)
}

fn appendix_b_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("appendixB");
    let cfg = config.interpolation_suite();
    let report = interpolation_suite(&cfg)?;
    s.add(
        "log_holder",
        "log-Holder bound for |theta - theta'| <= e^-4",
        format!("no violation over {} pairs", report.n_pairs),
        report.holder_max_ratio,
        report.holder_violations == 0,
    );
    s.add(
        "interpolation",
        "two-branch interpolation inequality",
        format!(
            "all {} polynomials pass with C = {}",
            cfg.n_polys, cfg.constant
        ),
        report.min_slack,
        report.interpolation_failures == 0,
    );

    let cases: Vec<_> = (0..64)
        .into_par_iter()
        .map(|i| {
            let (f, _) = suite_polynomial(cfg.seed ^ 0x5eed, 2 * i, cfg.k_max, cfg.period);
            let (g, _) = suite_polynomial(cfg.seed ^ 0x5eed, 2 * i + 1, cfg.k_max, cfg.period);
            let sum = sobolev_norms(&f.add(&g).expect("same period")).h32;
            let triangle = sum - sobolev_norms(&f).h32 - sobolev_norms(&g).h32;
            let mut scale_err = 0.0f64;
            let mut branches_ok = true;
            for (c, branch) in [
                (1e-3, InterpolationBranch::Sobolev),
                (1e6, InterpolationBranch::Lebesgue),
            ] {
                let a = interpolation_check(&f, c);
                let b = interpolation_check(&f.scaled(5.5), c);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        branches_ok &= a.branch == branch && b.branch == branch;
                        scale_err = scale_err.max((a.slack / b.slack - 1.0).abs());
                    }
                    _ => branches_ok = false,
                }
            }
            (triangle, scale_err, branches_ok)
        })
        .collect();
    let triangle = cases.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    s.add(
        "h32_triangle",
        "triangle inequality for the H^{3/2} norm",
        "h(f+g) - h(f) - h(g) <= 1e-10",
        triangle,
        triangle <= 1e-10,
    );
    let scale = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let branches = cases.iter().all(|c| c.2);
    s.add(
        "slack_scaling",
        "interpolation slack invariant under g -> s g in both branches",
        "relative change <= 1e-10",
        scale,
        scale <= 1e-10 && branches,
    );
    Ok(s)
}

fn limits_suite(config: &RunConfig) -> CliResult<Suite> {
    let mut s = Suite::new("limits");
    let ms = spectral_at(config, 1.0, 11)?;
    let slabs = [10.0, 20.0, 40.0]
        .into_par_iter()
        .map(|a| small_slab(config, 1.0, a, 5.0, 11))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let r = wave_limit_checks(&slabs, &ms)?;
    let last_gap = *r.gaps.last().expect("three slabs");
    s.add(
        "limits_speed_trend",
        "|c(a) - c*| decreasing in a",
        "strictly decreasing over a = 10, 20, 40",
        last_gap,
        r.gaps_decreasing,
    );
    s.add(
        "limits_lower_bound",
        "mu >= m Q* behind the front with m > 0",
        "m > 0",
        r.lower_ratio,
        r.lower_ratio > 0.0,
    );
    let last = slabs.last().expect("three slabs");
    let tg = last.grid.trait_grid();
    let q: Vec<f64> = tg
        .nodes()
        .iter()
        .map(|&t| ms.grid.interpolate(&ms.q_star, t))
        .collect();
    let qm = tg.integrate(&q)?;
    let mut brute = f64::INFINITY;
    for (i, &xi) in last.grid.xi().iter().enumerate() {
        if xi <= 0.0 {
            for (j, qj) in q.iter().enumerate() {
                brute = brute.min(last.mu.get(i, j) * qm / qj);
            }
        }
    }
    let diff = (brute - r.lower_ratio).abs();
    s.add(
        "limits_lower_bound_scan",
        "reported m equals the exhaustive minimum over xi <= 0",
        "difference <= 1e-14",
        diff,
        diff <= 1e-14 * brute.max(1.0),
    );
    s.add(
        "limits_decay_ahead",
        "nu vanishes ahead of the front",
        "nu(0.8 a) < epsilon / 10",
        r.nu_ahead,
        r.nu_ahead_ok,
    );
    Ok(s)
}

pub fn run_verify(config: &RunConfig, only: Option<&str>) -> CliResult<VerifyReport> {
    let selected: Vec<&'static str> = match only {
        None => SUITES.to_vec(),
        Some(name) => match SUITES.iter().find(|s| **s == name) {
            Some(s) => vec![*s],
            None => {
                return Err(CliError::Config(format!(
                    "unknown suite {name:?}; expected one of {}",
                    SUITES.join(", ")
                )))
            }
        },
    };
    let mut checks = Vec::new();
    for name in &selected {
        let suite = match *name {
            "spectral" => spectral_suite(config)?,
            "slab" => slab_suite(config)?,
            "evolution" => evolution_suite(config)?,
            "harnack" => harnack_suite(config)?,
            "appendixB" => appendix_b_suite(config)?,
            _ => limits_suite(config)?,
        };
        checks.extend(suite.checks);
    }
    for c in &mut checks {
        if config.verify.inject_failures.contains(&c.id) {
            c.value = -c.value;
            c.passed = !c.passed;
        }
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.id.clone())
        .collect();
    Ok(VerifyReport {
        suites: selected,
        passed: failed.is_empty(),
        failed,
        checks,
    })
}

/// Runs the suites, writes `verify_report.json`, and fails with the list
/// of failed check ids.
pub fn cmd_verify(config: &RunConfig, only: Option<&str>) -> CliResult<VerifyReport> {
    let report = run_verify(config, only)?;
    ensure_dir(&config.output_dir)?;
    write_json(
        &config.output_dir.join("verify_report.json"),
        config,
        &report,
    )?;
    if report.passed {
        Ok(report)
    } else {
        Err(CliError::Verify(report.failed.clone()))
    }
}
