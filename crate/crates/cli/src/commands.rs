use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use toadwave_core::analysis::harnack_ratios;
use toadwave_core::evolution::{edge_profile_check, simulate, EdgeReport};
use toadwave_core::spectral::{minimize_speed, profile_shape, ProfileShape, RelationResiduals};
use toadwave_core::{MinSpeedResult, SlabGrid, SlabSettings, SlabSolution};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_csv, write_field_csv, write_json};

#[derive(Debug, Clone, Serialize)]
struct ParamsOut {
    alpha: f64,
    r: f64,
    theta_min: f64,
    theta_max: f64,
}

impl ParamsOut {
    fn from(config: &RunConfig) -> Self {
        let p = &config.params;
        Self {
            alpha: p.alpha,
            r: p.r,
            theta_min: p.theta_min,
            theta_max: p.theta_max,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct MinSpeedOut<'a> {
    tau: f64,
    c_star: f64,
    lambda_star: f64,
    mean_trait: f64,
    theta0: f64,
    residuals: RelationResiduals,
    params: ParamsOut,
    local_minima: &'a [(f64, f64)],
    profile: ProfileShape,
    theta: &'a [f64],
    q_star: &'a [f64],
}

pub struct SpectralOutcome {
    pub min_speed: MinSpeedResult,
    pub files: Vec<PathBuf>,
}

fn spectral_result(config: &RunConfig, tau: f64, n_theta: usize) -> CliResult<MinSpeedResult> {
    let grid = config.trait_grid(n_theta)?;
    Ok(minimize_speed(
        tau,
        &config.model_params(),
        &grid,
        &config.speed_search(),
    )?)
}

pub fn cmd_spectral(config: &RunConfig) -> CliResult<SpectralOutcome> {
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let ms = spectral_result(config, config.spectral.tau, config.spectral.n_theta)?;
    let shape = profile_shape(&ms.q_star, &ms.solution(), &ms.grid)?;

    let mut scan = ms.scan.clone();
    scan.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let dispersion = write_csv(
        &dir.join("dispersion.csv"),
        &["lambda", "gamma", "c"],
        scan.iter().map(|p| vec![p.lambda, p.gamma, p.c]),
    )?;
    let body = MinSpeedOut {
        tau: ms.tau,
        c_star: ms.c_star,
        lambda_star: ms.lambda_star,
        mean_trait: ms.mean_trait,
        theta0: ms.theta0,
        residuals: ms.residuals,
        params: ParamsOut::from(config),
        local_minima: &ms.local_minima,
        profile: shape,
        theta: ms.grid.nodes(),
        q_star: &ms.q_star,
    };
    let minspeed = write_json(&dir.join("minspeed.json"), config, &body)?;
    Ok(SpectralOutcome {
        min_speed: ms,
        files: vec![dispersion, minspeed],
    })
}

#[derive(Debug, Clone, Serialize)]
struct SlabHeader {
    a: f64,
    tau: f64,
    epsilon: f64,
    c: f64,
    iterations: usize,
    residual: f64,
    c_star: f64,
    nu_at_center: f64,
    min_mu: f64,
    harnack_ratio: f64,
    mu_csv: String,
    nu_csv: String,
}

#[derive(Debug, Clone, Serialize)]
struct ConvergenceEntry {
    a: f64,
    c: f64,
    gap: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ConvergenceOut {
    tau: f64,
    epsilon: f64,
    c_star: f64,
    entries: Vec<ConvergenceEntry>,
    gaps_decreasing: bool,
    below_ceiling: bool,
}

pub struct SlabOutcome {
    pub c_star: f64,
    pub solutions: Vec<SlabSolution>,
    pub files: Vec<PathBuf>,
}

/// Slab solutions for every half-width, solved concurrently.
pub fn solve_slabs(config: &RunConfig) -> CliResult<(f64, Vec<SlabSolution>)> {
    let s = &config.slab;
    let ms = spectral_result(config, s.tau, s.n_theta)?;
    let settings = SlabSettings {
        c_star: Some(ms.c_star),
        ..SlabSettings::default()
    };
    let grid = config.trait_grid(s.n_theta)?;
    let params = config.model_params();
    let solutions = s
        .a_list
        .par_iter()
        .map(|&a| {
            let g = SlabGrid::with_resolution(a, s.n_xi_per_unit, grid.clone())?;
            toadwave_core::slab::solve_slab(s.tau, s.epsilon, &g, &params, &settings)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<toadwave_core::Result<Vec<_>>>()?;
    Ok((ms.c_star, solutions))
}

pub fn cmd_slab(config: &RunConfig) -> CliResult<SlabOutcome> {
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let (c_star, solutions) = solve_slabs(config)?;
    let mut files = Vec::new();
    for sol in &solutions {
        let a = sol.grid.half_width();
        let stem = format!("slab_a{a}");
        let tg = sol.grid.trait_grid();
        let mu_csv = format!("{stem}_mu.csv");
        let nu_csv = format!("{stem}_nu.csv");
        files.push(write_field_csv(
            &dir.join(&mu_csv),
            ["xi", "theta", "mu"],
            sol.grid.xi(),
            tg,
            &sol.mu,
        )?);
        files.push(write_csv(
            &dir.join(&nu_csv),
            &["xi", "nu"],
            sol.grid.xi().iter().zip(&sol.nu).map(|(x, v)| vec![*x, *v]),
        )?);
        let header = SlabHeader {
            a,
            tau: sol.tau,
            epsilon: sol.epsilon,
            c: sol.c,
            iterations: sol.iterations,
            residual: sol.residual,
            c_star: sol.c_star,
            nu_at_center: sol.nu_at_center(),
            min_mu: sol.mu.min(),
            harnack_ratio: harnack_ratios(&sol.mu).global_ratio,
            mu_csv,
            nu_csv,
        };
        files.push(write_json(
            &dir.join(format!("{stem}.json")),
            config,
            &header,
        )?);
    }
    let entries: Vec<ConvergenceEntry> = solutions
        .iter()
        .map(|s| ConvergenceEntry {
            a: s.grid.half_width(),
            c: s.c,
            gap: (s.c - c_star).abs(),
        })
        .collect();
    let report = ConvergenceOut {
        tau: config.slab.tau,
        epsilon: config.slab.epsilon,
        c_star,
        gaps_decreasing: entries.windows(2).all(|w| w[1].gap < w[0].gap),
        below_ceiling: entries.iter().all(|e| e.c > 0.0 && e.c <= c_star + 1e-3),
        entries,
    };
    files.push(write_json(&dir.join("convergence.json"), config, &report)?);
    Ok(SlabOutcome {
        c_star,
        solutions,
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedSummary {
    pub threshold: f64,
    pub fitted_speed: Option<f64>,
    /// `(fitted - c*) / c*`.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionSummary {
    /// `None` when the spectral problem was not solved (`r = 0`).
    pub c_star: Option<f64>,
    pub lambda_star: Option<f64>,
    pub speeds: Vec<SpeedSummary>,
    pub fit_window: (f64, f64),
    pub final_time: f64,
    pub steps: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest `|dM/dt| / M(0)` between records.
    pub mass_drift_per_unit_time: f64,
    pub edge: Option<EdgeReport>,
}

pub struct EvolutionOutcome {
    pub summary: EvolutionSummary,
    pub files: Vec<PathBuf>,
}

pub fn cmd_evolve(config: &RunConfig) -> CliResult<EvolutionOutcome> {
    let dir = &config.output_dir;
    let cfg = config.evolution_config()?;
    cfg.validate(None)
        .map_err(|e| CliError::Config(format!("evolution: {e}")))?;
    let min_speed = if config.params.r > 0.0 {
        Some(spectral_result(config, 1.0, config.spectral.n_theta)?)
    } else {
        None
    };
    if let Some(ms) = &min_speed {
        let needed = 1.2 * ms.c_star * cfg.t_end;
        let length = cfg.x_max - cfg.x_min;
        if length < needed {
            return Err(CliError::Guard(format!(
                "window too small: front reached window edge before t_end is predicted \
                 (x_max - x_min = {length} < 1.2 c* t_end = {needed})"
            )));
        }
    }
    ensure_dir(dir)?;
    let sim = simulate(&cfg)?;

    let mut files = Vec::new();
    let rows = sim.trace.times.iter().enumerate().flat_map(|(k, &t)| {
        sim.trace
            .fronts
            .iter()
            .filter_map(move |f| f.positions[k].map(|x| vec![t, f.threshold, x]))
    });
    files.push(write_csv(
        &dir.join("front_trace.csv"),
        &["t", "threshold", "position"],
        rows,
    )?);
    files.push(write_field_csv(
        &dir.join("final_field.csv"),
        ["x", "theta", "n"],
        &sim.x,
        &cfg.trait_grid,
        &sim.final_field,
    )?);

    let speeds = sim
        .trace
        .fronts
        .iter()
        .map(|f| SpeedSummary {
            threshold: f.threshold,
            fitted_speed: f.fitted_speed,
            relative_error: match (f.fitted_speed, &min_speed) {
                (Some(s), Some(ms)) => Some((s - ms.c_star) / ms.c_star),
                _ => None,
            },
        })
        .collect();
    let m0 = sim.mass_history.first().map_or(0.0, |m| m.1);
    let drift = sim
        .mass_history
        .windows(2)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
        .fold(0.0, f64::max)
        / if m0 > 0.0 { m0 } else { 1.0 };
    let summary = EvolutionSummary {
        c_star: min_speed.as_ref().map(|m| m.c_star),
        lambda_star: min_speed.as_ref().map(|m| m.lambda_star),
        speeds,
        fit_window: sim.trace.fit_window,
        final_time: sim.final_time,
        steps: sim.steps,
        initial_mass: m0,
        final_mass: sim.mass_history.last().map_or(0.0, |m| m.1),
        mass_drift_per_unit_time: drift,
        edge: min_speed
            .as_ref()
            .and_then(|ms| edge_profile_check(&sim, &cfg, ms).ok()),
    };
    files.push(write_json(&dir.join("summary.json"), config, &summary)?);
    Ok(EvolutionOutcome { summary, files })
}
