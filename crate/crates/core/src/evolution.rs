//! Time integration of
//!
//! ```text
//! n_t - theta n_xx - alpha n_thetatheta = r n (1 - rho)
//! ```
//!
//! on a bounded space window, with Neumann conditions in the trait and
//! homogeneous Dirichlet conditions at both ends of the window.
//!
//! Each step is a Lie splitting: explicit reaction with `rho` frozen at
//! the start of the step, then implicit Euler in `theta`, then implicit
//! Euler in `x`. Every implicit sweep is a batch of independent
//! tridiagonal solves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field2D, TraitGrid};
use crate::linalg::{Tridiagonal, TridiagonalLu};
use crate::spectral::MinSpeedResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub trait_grid: TraitGrid,
    pub alpha: f64,
    pub r: f64,
    pub dt: f64,
    pub t_end: f64,
    pub initial_mass_width: f64,
    pub thresholds: Vec<f64>,
    /// Front positions are recorded every `record_every` time units.
    pub record_every: f64,
}

impl EvolutionConfig {
    pub fn h_x(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        let h = self.h_x();
        (0..self.n_x).map(|i| self.x_min + i as f64 * h).collect()
    }

    /// Checks the configuration. With `c_star` given, also checks that the
    /// window is wide enough for a front moving at that speed.
    pub fn validate(&self, c_star: Option<f64>) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        if !(self.x_max > self.x_min) || self.n_x < 3 {
            return fail(format!(
                "need x_max > x_min and n_x >= 3, got [{}, {}] with {} nodes",
                self.x_min, self.x_max, self.n_x
            ));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !(self.record_every > 0.0) {
            return fail("dt, t_end and record_every must be positive".into());
        }
        if !(self.alpha > 0.0) || !(self.r >= 0.0) {
            return fail(format!(
                "need alpha > 0 and r >= 0, got alpha = {}, r = {}",
                self.alpha, self.r
            ));
        }
        if self.r > 0.0 && self.t_end < 10.0 / self.r {
            return fail(format!(
                "t_end = {} is shorter than 10 / r = {}",
                self.t_end,
                10.0 / self.r
            ));
        }
        if self.r * self.dt > 1.0 {
            return fail(format!(
                "dt = {} exceeds the nonnegativity cap 1 / r = {}",
                self.dt,
                1.0 / self.r
            ));
        }
        if !(self.initial_mass_width > 0.0) || self.x_min + self.initial_mass_width >= self.x_max {
            return fail(format!(
                "initial mass width {} does not fit the window",
                self.initial_mass_width
            ));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return fail("thresholds must be a nonempty list of values in (0, 1)".into());
        }
        if let Some(c) = c_star {
            let need = c * self.t_end * 1.2;
            if self.x_max - self.x_min < need {
                return fail(format!(
                    "window length {} is below 1.2 c* t_end = {need}",
                    self.x_max - self.x_min
                ));
            }
        }
        Ok(())
    }
}

/// Prefactored implicit sweeps for a fixed configuration.
pub struct Stepper {
    config: EvolutionConfig,
    // dense inverse of (I + dt alpha A), row-major, A the mirrored
    // Neumann Laplacian
    trait_solve: Vec<f64>,
    space_solves: Vec<TridiagonalLu>,
    steps: usize,
}

impl Stepper {
    pub fn new(config: &EvolutionConfig) -> Result<Self> {
        config.validate(None)?;
        let tg = &config.trait_grid;
        let m = tg.len();
        let trait_solve =
            trait_smoother(m, config.dt * config.alpha / (tg.spacing() * tg.spacing()));

        let n = config.n_x;
        let hx = config.h_x();
        let space_solves = tg
            .nodes()
            .iter()
            .map(|&theta| {
                let kx = config.dt * theta / (hx * hx);
                let mut lower = vec![-kx; n];
                let mut diag = vec![1.0 + 2.0 * kx; n];
                let mut upper = vec![-kx; n];
                for i in [0, n - 1] {
                    lower[i] = 0.0;
                    upper[i] = 0.0;
                    diag[i] = 1.0;
                }
                Tridiagonal::new(lower, diag, upper).factor()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            trait_solve,
            space_solves,
            steps: 0,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances `n` by one time step in place.
    pub fn step(&mut self, n: &mut Field2D) -> Result<()> {
        let cfg = &self.config;
        let tg = &cfg.trait_grid;
        let m = tg.len();
        if n.n_space() != cfg.n_x || n.n_trait() != m {
            return Err(Error::LengthMismatch {
                expected: cfg.n_x * m,
                found: n.values().len(),
            });
        }
        let (r, dt) = (cfg.r, cfg.dt);
        let trait_solve = &self.trait_solve;
        n.values_mut().par_chunks_mut(m).for_each(|row| {
            let rho = tg.integrate_unchecked(row);
            let growth = 1.0 + dt * r * (1.0 - rho);
            let before: Vec<f64> = row.iter().map(|v| v * growth).collect();
            for (out, coeffs) in row.iter_mut().zip(trait_solve.chunks_exact(m)) {
                *out = coeffs.iter().zip(&before).map(|(a, b)| a * b).sum();
            }
        });

        let nx = cfg.n_x;
        let values = n.values();
        let columns: Vec<Vec<f64>> = self
            .space_solves
            .par_iter()
            .enumerate()
            .map(|(j, lu)| {
                let mut col: Vec<f64> = (0..nx).map(|i| values[i * m + j]).collect();
                col[0] = 0.0;
                col[nx - 1] = 0.0;
                lu.solve_in_place(&mut col);
                col
            })
            .collect();
        let values = n.values_mut();
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * m + j] = if v.abs() < FLUSH_BELOW { 0.0 } else { v };
            }
        }
        self.steps += 1;

        if let Some(k) = n
            .values()
            .iter()
            .position(|v| !v.is_finite() || *v < -1e-10)
        {
            return Err(Error::Instability {
                step: self.steps,
                detail: format!(
                    "value {} at x node {}, trait node {}",
                    n.values()[k],
                    k / m,
                    k % m
                ),
            });
        }
        Ok(())
    }
}

/// Densities below this are set to zero after each step. The implicit solves
/// otherwise leave a tail of subnormal numbers ahead of the front, which
/// slows the first few hundred steps by an order of magnitude.
const FLUSH_BELOW: f64 = 1e-200;

/// Inverse of `I + k A` for the mirrored Neumann second difference `A`
/// (unit spacing), assembled from its cosine eigenbasis. Unlike an LU of
/// the tridiagonal matrix this stays exact when `k` is huge (a nearly
/// degenerate trait interval), where it reduces to the trapezoid mean.
fn trait_smoother(m: usize, k: f64) -> Vec<f64> {
    let n = (m - 1) as f64;
    let w = |j: usize| if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
    let mut out = vec![0.0; m * m];
    for q in 0..m {
        let norm = if q == 0 || q == m - 1 { n } else { 0.5 * n };
        let freq = std::f64::consts::PI * q as f64 / n;
        let eig = 2.0 - 2.0 * freq.cos();
        let damp = 1.0 / (1.0 + k * eig) / norm;
        if damp == 0.0 {
            continue;
        }
        let v: Vec<f64> = (0..m).map(|j| (freq * j as f64).cos()).collect();
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] += v[i] * v[j] * w(j) * damp;
            }
        }
    }
    out
}

/// Total mass `int int n dx dtheta` (trapezoid in both directions).
pub fn total_mass(n: &Field2D, config: &EvolutionConfig) -> f64 {
    let rho = n.marginal(&config.trait_grid);
    let last = rho.len() - 1;
    let inner: f64 = rho[1..last].iter().sum();
    config.h_x() * (inner + 0.5 * (rho[0] + rho[last]))
}

/// Rightmost `x` where `rho` crosses `threshold`, interpolated linearly
/// between nodes. `None` if `rho` never reaches the threshold.
pub fn front_position(rho: &[f64], x: &[f64], threshold: f64) -> Option<f64> {
    let i = rho.iter().rposition(|&v| v >= threshold)?;
    if i + 1 == rho.len() {
        return Some(x[i]);
    }
    let (a, b) = (rho[i], rho[i + 1]);
    Some(x[i] + (a - threshold) / (a - b) * (x[i + 1] - x[i]))
}

/// Least-squares slope of `y` against `t`.
pub fn least_squares_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    if t.len() < 2 || t.len() != y.len() {
        return None;
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTrace {
    pub threshold: f64,
    pub positions: Vec<Option<f64>>,
    pub fitted_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub times: Vec<f64>,
    pub fronts: Vec<ThresholdTrace>,
    pub fit_window: (f64, f64),
}

impl FrontTrace {
    pub fn speed(&self, threshold: f64) -> Option<f64> {
        self.fronts
            .iter()
            .find(|f| f.threshold == threshold)
            .and_then(|f| f.fitted_speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub trace: FrontTrace,
    pub x: Vec<f64>,
    pub final_field: Field2D,
    pub final_time: f64,
    /// `(t, total mass)` at every recording time.
    pub mass_history: Vec<(f64, f64)>,
    pub steps: usize,
}

/// Initial data `1/|Θ|` on `x <= x_min + initial_mass_width`, zero
/// elsewhere (and at the Dirichlet end nodes).
pub fn initial_field(config: &EvolutionConfig) -> Field2D {
    let tg = &config.trait_grid;
    let x = config.x_nodes();
    let inv = 1.0 / tg.measure();
    let edge = config.x_min + config.initial_mass_width;
    let last = config.n_x - 1;
    Field2D::from_fn(config.n_x, tg.len(), |i, _| {
        if i > 0 && i < last && x[i] <= edge {
            inv
        } else {
            0.0
        }
    })
}

/// Runs the model from the indicator initial data to `t_end`, recording
/// the front of `rho` at each threshold.
pub fn simulate(config: &EvolutionConfig) -> Result<SimulationResult> {
    let mut stepper = Stepper::new(config)?;
    let mut n = initial_field(config);
    run_from(&mut stepper, &mut n)
}

fn run_from(stepper: &mut Stepper, n: &mut Field2D) -> Result<SimulationResult> {
    let cfg = stepper.config().clone();
    let x = cfg.x_nodes();
    let total_steps = (cfg.t_end / cfg.dt).round() as usize;
    let record_stride = ((cfg.record_every / cfg.dt).round() as usize).max(1);
    let guard = x[cfg.n_x - 1 - 10];
    let lowest = cfg.thresholds.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut times = Vec::new();
    let mut positions: Vec<Vec<Option<f64>>> = vec![Vec::new(); cfg.thresholds.len()];
    let mut mass_history = Vec::new();
    let mut record = |t: f64, n: &Field2D| -> Result<()> {
        let rho = n.marginal(&cfg.trait_grid);
        if let Some(p) = front_position(&rho, &x, lowest) {
            if p >= guard {
                return Err(Error::WindowOverflow { time: t });
            }
        }
        times.push(t);
        for (k, &thr) in cfg.thresholds.iter().enumerate() {
            positions[k].push(front_position(&rho, &x, thr));
        }
        mass_history.push((t, total_mass(n, &cfg)));
        Ok(())
    };

    record(0.0, n)?;
    for s in 1..=total_steps {
        stepper.step(n)?;
        if s % record_stride == 0 || s == total_steps {
            record(s as f64 * cfg.dt, n)?;
        }
    }
    let final_time = total_steps as f64 * cfg.dt;
    let fit_window = (0.5 * final_time, final_time);
    let fronts = cfg
        .thresholds
        .iter()
        .zip(positions)
        .map(|(&threshold, pos)| {
            let (ts, ps): (Vec<f64>, Vec<f64>) = times
                .iter()
                .zip(&pos)
                .filter(|(t, _)| **t >= fit_window.0)
                .filter_map(|(t, p)| p.map(|p| (*t, p)))
                .unzip();
            ThresholdTrace {
                threshold,
                fitted_speed: least_squares_slope(&ts, &ps),
                positions: pos,
            }
        })
        .collect();
    Ok(SimulationResult {
        trace: FrontTrace {
            times,
            fronts,
            fit_window,
        },
        x,
        final_field: n.clone(),
        final_time,
        mass_history,
        steps: stepper.steps(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    /// Position where `rho` crosses `edge_level`.
    pub x_edge: f64,
    pub edge_level: f64,
    /// Trait slice at `x_edge`, normalized to unit integral.
    pub slice: Vec<f64>,
    /// `Q*` on the simulation trait grid, normalized to unit integral.
    pub q_star: Vec<f64>,
    /// Max-norm distance between `slice` and `q_star`, multiplied by the
    /// trait interval length.
    pub distance: f64,
    /// `-d log(rho)/dx` fitted ahead of the edge.
    pub decay_rate: f64,
    pub lambda_star: f64,
    /// `rho` range used for the decay fit.
    pub decay_window: (f64, f64),
}

/// Compares the trait profile at the leading edge with `Q*` and the
/// spatial decay ahead of the front with `lambda*`.
pub fn edge_profile_check(
    sim: &SimulationResult,
    config: &EvolutionConfig,
    min_speed: &MinSpeedResult,
) -> Result<EdgeReport> {
    let q: Vec<f64> = config
        .trait_grid
        .nodes()
        .iter()
        .map(|&t| min_speed.grid.interpolate(&min_speed.q_star, t))
        .collect();
    edge_profile_against(sim, config, &q, min_speed.lambda_star)
}

/// Same as [`edge_profile_check`] with an explicit reference profile
/// (sampled on the simulation trait grid, any normalization) and decay
/// rate.
pub fn edge_profile_against(
    sim: &SimulationResult,
    config: &EvolutionConfig,
    reference: &[f64],
    lambda_ref: f64,
) -> Result<EdgeReport> {
    const EDGE: f64 = 0.01;
    const DECAY_LO: f64 = 1e-6;
    let tg = &config.trait_grid;
    if reference.len() != tg.len() {
        return Err(Error::LengthMismatch {
            expected: tg.len(),
            found: reference.len(),
        });
    }
    let n = &sim.final_field;
    let rho = n.marginal(tg);
    let x = &sim.x;
    let x_edge = front_position(&rho, x, EDGE)
        .ok_or_else(|| Error::Domain("rho never reaches the edge level".into()))?;
    let i = rho.iter().rposition(|&v| v >= EDGE).unwrap();
    let j = (i + 1).min(rho.len() - 1);
    let w = if j > i {
        (x_edge - x[i]) / (x[j] - x[i])
    } else {
        0.0
    };
    let mut slice: Vec<f64> = (0..tg.len())
        .map(|k| (1.0 - w) * n.get(i, k) + w * n.get(j, k))
        .collect();
    let mass = tg.integrate(&slice)?;
    slice.iter_mut().for_each(|v| *v /= mass);

    let mut q = reference.to_vec();
    let qm = tg.integrate(&q)?;
    q.iter_mut().for_each(|v| *v /= qm);
    // compared in units of the uniform density so that the distance does
    // not depend on the trait interval length
    let scale = tg.measure();
    let distance = slice
        .iter()
        .zip(&q)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() * scale));

    let (xs, ls): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(&rho)
        .skip(i + 1)
        .take_while(|(_, &v)| v >= DECAY_LO)
        .map(|(xv, v)| (*xv, v.ln()))
        .unzip();
    let decay_rate = least_squares_slope(&xs, &ls)
        .map(|s| -s)
        .ok_or_else(|| Error::Domain("too few nodes ahead of the edge for a decay fit".into()))?;
    Ok(EdgeReport {
        x_edge,
        edge_level: EDGE,
        slice,
        q_star: q,
        distance,
        decay_rate,
        lambda_star: lambda_ref,
        decay_window: (DECAY_LO, EDGE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_trait_grid;

    fn config(x_max: f64, n_x: usize, t_end: f64) -> EvolutionConfig {
        EvolutionConfig {
            x_min: 0.0,
            x_max,
            n_x,
            trait_grid: make_trait_grid(1.0, 2.0, 11).unwrap(),
            alpha: 1.0,
            r: 1.0,
            dt: 0.01,
            t_end,
            initial_mass_width: 5.0,
            thresholds: vec![0.1, 0.01, 0.001],
            record_every: 1.0,
        }
    }

    #[test]
    fn zero_stays_zero() {
        let cfg = config(40.0, 401, 10.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let mut n = Field2D::zeros(401, 11);
        for _ in 0..50 {
            st.step(&mut n).unwrap();
        }
        assert!(n.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_uniform_state_is_invariant_away_from_the_ends() {
        let cfg = config(40.0, 401, 10.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let mut n = Field2D::from_fn(401, 11, |_, _| 1.0);
        let before = n.clone();
        st.step(&mut n).unwrap();
        for i in 100..301 {
            for j in 0..11 {
                assert!((n.get(i, j) - before.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn small_uniform_state_grows_exponentially() {
        let cfg = config(40.0, 401, 10.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let eta = 1e-6;
        let mut n = Field2D::from_fn(401, 11, |_, _| eta);
        for _ in 0..100 {
            st.step(&mut n).unwrap();
        }
        let rho = n.marginal(&cfg.trait_grid);
        let exact = eta * 1f64.exp();
        assert!(
            (rho[200] / exact - 1.0).abs() < 0.01,
            "{}",
            rho[200] / exact
        );
    }

    #[test]
    fn mass_is_conserved_without_reaction() {
        let mut cfg = config(60.0, 601, 10.0);
        cfg.r = 0.0;
        let mut st = Stepper::new(&cfg).unwrap();
        let x = cfg.x_nodes();
        let tg = cfg.trait_grid.clone();
        let mut n = Field2D::from_fn(601, 11, |i, j| {
            (-(x[i] - 30.0).powi(2)).exp() * (1.0 + 0.5 * (tg.nodes()[j] - 1.5))
        });
        let m0 = total_mass(&n, &cfg);
        for _ in 0..100 {
            st.step(&mut n).unwrap();
        }
        assert!((total_mass(&n, &cfg) - m0).abs() <= 1e-8 * m0);
    }

    #[test]
    fn negative_values_trip_the_instability_detector() {
        let cfg = config(40.0, 401, 10.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let mut n = Field2D::from_fn(401, 11, |i, _| if i == 200 { -1.0 } else { 0.0 });
        assert!(matches!(
            st.step(&mut n),
            Err(Error::Instability { step: 1, .. })
        ));
    }

    #[test]
    fn front_position_interpolates_the_last_crossing() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let rho = [1.0, 0.6, 0.2, 0.0];
        assert!((front_position(&rho, &x, 0.4).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(front_position(&rho, &x, 2.0), None);
    }

    #[test]
    fn slope_of_a_line_is_exact() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((least_squares_slope(&t, &y).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn window_guard_trips() {
        let cfg = config(30.0, 301, 20.0);
        assert!(matches!(simulate(&cfg), Err(Error::WindowOverflow { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = config(40.0, 401, 10.0);
        cfg.dt = 2.0;
        assert!(cfg.validate(None).is_err());
        let mut cfg = config(40.0, 401, 5.0);
        cfg.t_end = 5.0;
        assert!(cfg.validate(None).is_err());
        let cfg = config(40.0, 401, 10.0);
        assert!(cfg.validate(Some(4.0)).is_err());
        cfg.validate(Some(3.0)).unwrap();
    }

    #[test]
    fn trait_smoother_matches_the_tridiagonal_solve() {
        let m = 9;
        let k = 3.7;
        let mut lower = vec![-k; m];
        let mut upper = vec![-k; m];
        lower[0] = 0.0;
        upper[m - 1] = 0.0;
        upper[0] = -2.0 * k;
        lower[m - 1] = -2.0 * k;
        let t = Tridiagonal::new(lower, vec![1.0 + 2.0 * k; m], upper);
        let b: Vec<f64> = (0..m).map(|j| 1.0 + (j as f64).sin()).collect();
        let exact = t.solve(&b).unwrap();
        let inv = trait_smoother(m, k);
        for i in 0..m {
            let v: f64 = (0..m).map(|j| inv[i * m + j] * b[j]).sum();
            assert!((v - exact[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn trait_smoother_averages_on_a_degenerate_interval() {
        let m = 11;
        let inv = trait_smoother(m, 1e25);
        let b: Vec<f64> = (0..m).map(|j| j as f64).collect();
        let mean = 5.0;
        for i in 0..m {
            let v: f64 = (0..m).map(|j| inv[i * m + j] * b[j]).sum();
            assert!((v - mean).abs() < 1e-12);
        }
    }
}
