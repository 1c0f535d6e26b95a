//! Principal eigenproblem in the trait variable and the dispersion
//! relation `lambda -> c(lambda)` it induces.
//!
//! For a decay rate `lambda > 0` the edge profile `Q` solves
//!
//! ```text
//! alpha Q'' + (-lambda c + g(theta) lambda^2 + r) Q = 0,   Q' = 0 on the boundary,
//! ```
//!
//! with `Q > 0` and unit integral, where `g = g_tau` interpolates between
//! the constant diffusivity `theta_min` (`tau = 0`) and `g(theta) = theta`
//! (`tau = 1`). Writing `L u = -alpha u'' - (g - theta_max) lambda^2 u`,
//! the principal eigenvalue `gamma` of `L` gives
//! `lambda c = r + lambda^2 theta_max - gamma`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{second_derivative_neumann, TraitGrid};
use crate::linalg::Tridiagonal;

/// Mutation diffusivity and growth rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub r: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { alpha: 1.0, r: 1.0 }
    }
}

/// Homotopy of diffusivities `g_tau(theta) = theta_min + tau (theta - theta_min)`.
#[inline]
pub fn diffusivity(tau: f64, theta: f64, theta_min: f64) -> f64 {
    theta_min + tau * (theta - theta_min)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

/// Discrete `L` for one `(lambda, tau)`. Rows are not symmetric as a
/// matrix (the mirror rows carry a doubled off-diagonal) but the operator
/// is self-adjoint for the trapezoid inner product.
#[derive(Debug, Clone)]
pub struct TraitOperator {
    pub lambda: f64,
    pub tau: f64,
    matrix: Tridiagonal,
}

impl TraitOperator {
    pub fn matrix(&self) -> &Tridiagonal {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    pub fn norm_inf(&self) -> f64 {
        self.matrix.norm_inf()
    }

    /// Lower end of the Gershgorin enclosure of the spectrum.
    pub fn gershgorin_lower_bound(&self) -> f64 {
        let m = &self.matrix;
        let n = m.len();
        (0..n)
            .map(|i| {
                let mut off = 0.0;
                if i > 0 {
                    off += m.lower[i].abs();
                }
                if i + 1 < n {
                    off += m.upper[i].abs();
                }
                m.diag[i] - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn assemble_trait_operator(
    lambda: f64,
    tau: f64,
    params: &ModelParams,
    grid: &TraitGrid,
) -> Result<TraitOperator> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    check_tau(tau)?;
    if !(params.alpha > 0.0) {
        return Err(Error::domain(format!(
            "alpha must be positive, got {}",
            params.alpha
        )));
    }
    let n = grid.len();
    let h = grid.spacing();
    let k = params.alpha / (h * h);
    let l2 = lambda * lambda;
    let mut lower = vec![-k; n];
    let mut upper = vec![-k; n];
    let diag: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| 2.0 * k - (diffusivity(tau, t, grid.theta_min()) - grid.theta_max()) * l2)
        .collect();
    lower[0] = 0.0;
    upper[0] = -2.0 * k;
    lower[n - 1] = -2.0 * k;
    upper[n - 1] = 0.0;
    Ok(TraitOperator {
        lambda,
        tau,
        matrix: Tridiagonal::new(lower, diag, upper),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSettings {
    /// Target residual relative to `||L||_inf`.
    pub tol: f64,
    /// Residual (relative) that must be met for the solve to count as converged.
    pub accept: f64,
    pub max_iter: usize,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            accept: 1e-10,
            max_iter: 10_000,
        }
    }
}

pub fn principal_eigenpair(op: &TraitOperator, grid: &TraitGrid) -> Result<(f64, Vec<f64>)> {
    principal_eigenpair_with(op, grid, &EigenSettings::default())
}

/// Shifted inverse power iteration. The shift sits strictly below the
/// Gershgorin bound so `L - shift` is a nonsingular M-matrix and every
/// iterate stays positive.
pub fn principal_eigenpair_with(
    op: &TraitOperator,
    grid: &TraitGrid,
    settings: &EigenSettings,
) -> Result<(f64, Vec<f64>)> {
    let n = op.len();
    if grid.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: grid.len(),
        });
    }
    let norm = op.norm_inf();
    let lb = op.gershgorin_lower_bound();
    let shift = lb - 1e-3 * lb.abs().max(1.0);
    let mut shifted = op.matrix().clone();
    for d in shifted.diag.iter_mut() {
        *d -= shift;
    }
    let lu = shifted.factor()?;

    let w = grid.weights();
    let mut q = vec![1.0 / grid.measure(); n];
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut gamma = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=settings.max_iter {
        lu.solve_in_place(&mut q);
        let mass = grid.integrate_unchecked(&q);
        for v in q.iter_mut() {
            *v /= mass;
        }
        let lq = op.apply(&q);
        // Rayleigh quotient for the trapezoid inner product
        let num: f64 = (0..n).map(|i| w[i] * q[i] * lq[i]).sum();
        let den: f64 = (0..n).map(|i| w[i] * q[i] * q[i]).sum();
        gamma = num / den;
        residual = (0..n)
            .map(|i| (lq[i] - gamma * q[i]).abs())
            .fold(0.0, f64::max);
        let rel = residual / norm;
        if rel <= settings.tol {
            return finish(gamma, q, rel, settings, it);
        }
        if residual < 0.5 * best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 8 {
                return finish(gamma, q, rel, settings, it);
            }
        }
    }
    let _ = gamma;
    Err(Error::EigenNotConverged {
        iterations: settings.max_iter,
        residual: residual / norm,
    })
}

fn finish(
    gamma: f64,
    q: Vec<f64>,
    rel: f64,
    settings: &EigenSettings,
    iterations: usize,
) -> Result<(f64, Vec<f64>)> {
    if rel > settings.accept || q.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::EigenNotConverged {
            iterations,
            residual: rel,
        });
    }
    Ok((gamma, q))
}

/// One point `(lambda, c(lambda), Q_lambda)` of the dispersion relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub lambda: f64,
    pub gamma: f64,
    pub c: f64,
    pub tau: f64,
    pub q: Vec<f64>,
    pub params: ModelParams,
}

impl SpectralSolution {
    /// `int g_tau(theta) Q(theta) dtheta`; the mean trait at `tau = 1`.
    pub fn mean_trait(&self, grid: &TraitGrid) -> f64 {
        mean_diffusivity(&self.q, self.tau, grid)
    }

    /// `dc/dlambda` from first-order eigenvalue perturbation:
    /// `(lambda c)' = 2 lambda <g Q, Q> / <Q, Q>`.
    pub fn slope(&self, grid: &TraitGrid) -> f64 {
        let ratio = squared_profile_mean(&self.q, self.tau, grid);
        (2.0 * self.lambda * ratio - self.c) / self.lambda
    }
}

pub(crate) fn mean_diffusivity(q: &[f64], tau: f64, grid: &TraitGrid) -> f64 {
    grid.nodes()
        .iter()
        .zip(q)
        .zip(grid.weights())
        .map(|((t, qi), w)| w * diffusivity(tau, *t, grid.theta_min()) * qi)
        .sum()
}

/// `int g Q^2 / int Q^2`.
pub(crate) fn squared_profile_mean(q: &[f64], tau: f64, grid: &TraitGrid) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((t, qi), w) in grid.nodes().iter().zip(q).zip(grid.weights()) {
        num += w * diffusivity(tau, *t, grid.theta_min()) * qi * qi;
        den += w * qi * qi;
    }
    num / den
}

pub fn dispersion_c(
    lambda: f64,
    tau: f64,
    params: &ModelParams,
    grid: &TraitGrid,
) -> Result<SpectralSolution> {
    let op = assemble_trait_operator(lambda, tau, params, grid)?;
    let (gamma, q) = principal_eigenpair(&op, grid)?;
    let c = (params.r + lambda * lambda * grid.theta_max() - gamma) / lambda;
    Ok(SpectralSolution {
        lambda,
        gamma,
        c,
        tau,
        q,
        params: *params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSearch {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Absolute tolerance on the minimizer.
    pub tol: f64,
    pub n_scan: usize,
}

impl Default for SpeedSearch {
    fn default() -> Self {
        Self {
            lambda_lo: 0.05,
            lambda_hi: 20.0,
            tol: 1e-8,
            n_scan: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub c: f64,
}

/// Residuals of the relations satisfied by the dispersion curve and its
/// minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationResiduals {
    /// `|-lambda c + lambda^2 <g> + r|` at the curve point.
    #[serde(rename = "R1")]
    pub r1: f64,
    /// `<g> - (theta_max + theta_min) / 2` at the curve point.
    #[serde(rename = "R2")]
    pub r2: f64,
    /// `|c* - 2 lambda* <g Q*^2> / <Q*^2>|`.
    #[serde(rename = "R3")]
    pub r3: f64,
    /// `c* - lambda* (theta_max + theta_min)`.
    #[serde(rename = "R4")]
    pub r4: f64,
    /// `c* - 2 sqrt(r <theta*>)`.
    #[serde(rename = "R6")]
    pub r6: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinSpeedResult {
    pub tau: f64,
    pub params: ModelParams,
    pub grid: TraitGrid,
    pub c_star: f64,
    pub lambda_star: f64,
    pub q_star: Vec<f64>,
    /// `<theta*> = int g_tau Q*`.
    pub mean_trait: f64,
    /// `(lambda* c* - r) / lambda*^2`: the diffusivity value at the
    /// inflection point of `Q*` (equal to the inflection trait at `tau = 1`).
    pub theta0: f64,
    pub residuals: RelationResiduals,
    /// Every interior local minimum of the coarse scan, `(lambda, c)`.
    pub local_minima: Vec<(f64, f64)>,
    pub scan: Vec<DispersionPoint>,
}

impl MinSpeedResult {
    pub fn solution(&self) -> SpectralSolution {
        let gamma = self.params.r + self.lambda_star * self.lambda_star * self.grid.theta_max()
            - self.lambda_star * self.c_star;
        SpectralSolution {
            lambda: self.lambda_star,
            gamma,
            c: self.c_star,
            tau: self.tau,
            q: self.q_star.clone(),
            params: self.params,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Coarse log-spaced scan, golden-section refinement around the best
/// sample, then a derivative polish that drives `c'(lambda)` to zero.
pub fn minimize_speed(
    tau: f64,
    params: &ModelParams,
    grid: &TraitGrid,
    search: &SpeedSearch,
) -> Result<MinSpeedResult> {
    check_tau(tau)?;
    if !(search.lambda_lo > 0.0 && search.lambda_hi > search.lambda_lo) {
        return Err(Error::domain(format!(
            "need 0 < lambda_lo < lambda_hi, got [{}, {}]",
            search.lambda_lo, search.lambda_hi
        )));
    }
    if search.n_scan < 3 {
        return Err(Error::domain("scan needs at least 3 samples"));
    }
    let n = search.n_scan;
    let (l0, l1) = (search.lambda_lo.ln(), search.lambda_hi.ln());
    let lambdas: Vec<f64> = (0..n)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp())
        .collect();
    let scan: Vec<DispersionPoint> = lambdas
        .par_iter()
        .map(|&l| {
            dispersion_c(l, tau, params, grid).map(|s| DispersionPoint {
                lambda: s.lambda,
                gamma: s.gamma,
                c: s.c,
            })
        })
        .collect::<Result<_>>()?;

    let local_minima: Vec<(f64, f64)> = (1..n - 1)
        .filter(|&k| scan[k].c < scan[k - 1].c && scan[k].c <= scan[k + 1].c)
        .map(|k| (scan[k].lambda, scan[k].c))
        .collect();
    let best = (0..n)
        .min_by(|&a, &b| scan[a].c.total_cmp(&scan[b].c).then(a.cmp(&b)))
        .unwrap();
    if best == 0 || best == n - 1 {
        return Err(Error::Bracket(format!(
            "dispersion minimum at scan edge lambda = {}; widen [{}, {}]",
            scan[best].lambda, search.lambda_lo, search.lambda_hi
        )));
    }

    let eval = |l: f64| dispersion_c(l, tau, params, grid);
    let (mut a, mut b) = (scan[best - 1].lambda, scan[best + 1].lambda);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1)?.c;
    let mut f2 = eval(x2)?.c;
    while b - a > search.tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1)?.c;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2)?.c;
        }
    }
    let golden = if f1 <= f2 { x1 } else { x2 };
    let lambda_star = polish_minimizer(
        golden,
        scan[best - 1].lambda,
        scan[best + 1].lambda,
        &eval,
        grid,
    )?;
    let at_star = eval(lambda_star)?;

    let mean_trait = at_star.mean_trait(grid);
    let mut out = MinSpeedResult {
        tau,
        params: *params,
        grid: grid.clone(),
        c_star: at_star.c,
        lambda_star,
        q_star: at_star.q.clone(),
        mean_trait,
        theta0: (lambda_star * at_star.c - params.r) / (lambda_star * lambda_star),
        residuals: RelationResiduals {
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            r4: 0.0,
            r6: 0.0,
        },
        local_minima,
        scan,
    };
    out.residuals = verify_relations(&out, &at_star);
    Ok(out)
}

/// Safeguarded secant/bisection on the analytic slope `c'(lambda)`
/// inside the scan bracket. Falls back to the golden-section point when
/// the slope does not change sign.
fn polish_minimizer<F>(golden: f64, lo: f64, hi: f64, eval: &F, grid: &TraitGrid) -> Result<f64>
where
    F: Fn(f64) -> Result<SpectralSolution>,
{
    let slope = |l: f64| -> Result<f64> { Ok(eval(l)?.slope(grid)) };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (slope(a)?, slope(b)?);
    if !(fa < 0.0 && fb > 0.0) {
        return Ok(golden);
    }
    // start from a tight bracket around the golden-section point when possible
    let width = 1e-4 * golden.max(1.0);
    let (ga, gb) = ((golden - width).max(a), (golden + width).min(b));
    let (fga, fgb) = (slope(ga)?, slope(gb)?);
    if fga < 0.0 && fgb > 0.0 {
        a = ga;
        b = gb;
        fa = fga;
        fb = fgb;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        // Illinois variant of regula falsi
        let x = (a * fb - b * fa) / (fb - fa);
        let x = if x > a && x < b { x } else { 0.5 * (a + b) };
        let fx = slope(x)?;
        if fx == 0.0 || (b - a) <= 4.0 * f64::EPSILON * x {
            return Ok(x);
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if fx.abs() <= 1e-13 * x.max(1.0) {
            return Ok(x);
        }
    }
    Ok(0.5 * (a + b))
}

/// Residuals of the mean-trait identity, the sorting inequality, the
/// stationarity identity at the minimum and the two speed bounds.
pub fn verify_relations(sol: &MinSpeedResult, curve_point: &SpectralSolution) -> RelationResiduals {
    let grid = &sol.grid;
    let p = curve_point;
    let mean = p.mean_trait(grid);
    let r1 = (-p.lambda * p.c + p.lambda * p.lambda * mean + p.params.r).abs();
    let r2 = mean - grid.midpoint();
    let ratio = squared_profile_mean(&sol.q_star, sol.tau, grid);
    let r3 = (sol.c_star - 2.0 * sol.lambda_star * ratio).abs();
    let r4 = sol.c_star - sol.lambda_star * (grid.theta_max() + grid.theta_min());
    let r6 = sol.c_star - 2.0 * (sol.params.r * sol.mean_trait).sqrt();
    RelationResiduals { r1, r2, r3, r4, r6 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub n_nodes: usize,
    pub c: f64,
    pub mean_trait: f64,
    /// R1 from the discrete pair `(c_n, <g>_n)`.
    pub r1_discrete: f64,
    /// `|-lambda c_n + lambda^2 <g>_limit + r|`.
    pub r1_continuum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub lambda: f64,
    pub levels: Vec<RefinementLevel>,
    /// `r1_continuum` of each level over that of the next one.
    pub ratios: Vec<f64>,
    pub mean_limit: f64,
}

/// Grid-doubling study of the mean-trait identity at fixed `lambda`.
///
/// With trapezoid weights the discrete eigenpair satisfies the identity
/// exactly, so the discrete R1 only shows solver round-off. The
/// discretization error is measured against `<g>_limit`, the Richardson
/// limit of two further doublings beyond the reported levels.
pub fn rel1_refinement(
    lambda: f64,
    tau: f64,
    params: &ModelParams,
    theta_min: f64,
    theta_max: f64,
    coarse_intervals: usize,
    n_levels: usize,
) -> Result<RefinementStudy> {
    if coarse_intervals < 2 || n_levels < 2 {
        return Err(Error::domain(
            "a refinement study needs at least two levels of two intervals",
        ));
    }
    let solved = (0..n_levels + 2)
        .map(|k| {
            let n = coarse_intervals * (1 << k) + 1;
            let grid = TraitGrid::new(theta_min, theta_max, n)?;
            let s = dispersion_c(lambda, tau, params, &grid)?;
            Ok((n, s.c, s.mean_trait(&grid)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (m1, m2) = (solved[n_levels].2, solved[n_levels + 1].2);
    let mean_limit = m2 + (m2 - m1) / 3.0;
    let r = params.r;
    let levels: Vec<RefinementLevel> = solved[..n_levels]
        .iter()
        .map(|&(n_nodes, c, mean)| RefinementLevel {
            n_nodes,
            c,
            mean_trait: mean,
            r1_discrete: (-lambda * c + lambda * lambda * mean + r).abs(),
            r1_continuum: (-lambda * c + lambda * lambda * mean_limit + r).abs(),
        })
        .collect();
    let ratios = levels
        .windows(2)
        .map(|w| w[0].r1_continuum / w[1].r1_continuum)
        .collect();
    Ok(RefinementStudy {
        lambda,
        levels,
        ratios,
        mean_limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileShape {
    pub is_increasing: bool,
    /// Trait where the discrete second derivative of `Q` changes sign,
    /// linearly interpolated; `None` for a flat profile.
    pub theta0_empirical: Option<f64>,
    /// Inflection trait predicted by `-lambda c + lambda^2 g(theta0) + r = 0`.
    pub theta0_predicted: Option<f64>,
}

pub fn profile_shape(q: &[f64], sol: &SpectralSolution, grid: &TraitGrid) -> Result<ProfileShape> {
    if q.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            found: q.len(),
        });
    }
    let qmax = q.iter().copied().fold(0.0, f64::max);
    let is_increasing = q.windows(2).all(|w| w[1] - w[0] >= -1e-10 * qmax);

    let h = grid.spacing();
    let d2 = second_derivative_neumann(q, h)?;
    let floor = 1e3 * f64::EPSILON * qmax / (h * h);
    let sign = |v: f64| {
        if v > floor {
            1
        } else if v < -floor {
            -1
        } else {
            0
        }
    };
    let mut theta0_empirical = None;
    let mut last: Option<(usize, i32)> = None;
    for (i, &v) in d2.iter().enumerate() {
        let s = sign(v);
        if s == 0 {
            continue;
        }
        if let Some((j, sj)) = last {
            if sj != s {
                let (t0, t1) = (grid.nodes()[j], grid.nodes()[i]);
                let (v0, v1) = (d2[j], v);
                theta0_empirical = Some(t0 + (t1 - t0) * v0 / (v0 - v1));
                break;
            }
        }
        last = Some((i, s));
    }

    let theta0_predicted = if sol.tau > 0.0 {
        let g0 = (sol.lambda * sol.c - sol.params.r) / (sol.lambda * sol.lambda);
        Some(grid.theta_min() + (g0 - grid.theta_min()) / sol.tau)
    } else {
        None
    };
    Ok(ProfileShape {
        is_increasing,
        theta0_empirical,
        theta0_predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_trait_grid;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn default_grid(n: usize) -> TraitGrid {
        make_trait_grid(1.0, 2.0, n).unwrap()
    }

    /// Smallest eigenvalue of `W^{1/2} L W^{-1/2}` by dense decomposition.
    fn dense_principal(op: &TraitOperator, grid: &TraitGrid) -> f64 {
        let n = op.len();
        let m = op.matrix();
        let w: Vec<f64> = grid.weights().iter().map(|v| v.sqrt()).collect();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = m.diag[i];
            if i > 0 {
                a[(i, i - 1)] = m.lower[i] * w[i] / w[i - 1];
            }
            if i + 1 < n {
                a[(i, i + 1)] = m.upper[i] * w[i] / w[i + 1];
            }
        }
        let sym = 0.5 * (&a + a.transpose());
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn constant_potential_at_tau_zero() {
        let g = default_grid(21);
        let p = ModelParams::default();
        let op = assemble_trait_operator(1.7, 0.0, &p, &g).unwrap();
        let k = 1.0 / (g.spacing() * g.spacing());
        for d in &op.matrix().diag {
            assert_relative_eq!(d - 2.0 * k, 1.7 * 1.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn hand_assembled_three_node_stencil() {
        // h = 0.5, alpha = 1 -> alpha/h^2 = 4; lambda = 1, tau = 1:
        // potential -(theta - 2) at theta = 1, 1.5, 2 -> 1, 0.5, 0
        let g = default_grid(3);
        let op = assemble_trait_operator(1.0, 1.0, &ModelParams::default(), &g).unwrap();
        let m = op.matrix();
        assert_eq!(m.diag, vec![9.0, 8.5, 8.0]);
        assert_eq!(m.upper[..2], [-8.0, -4.0]);
        assert_eq!(m.lower[1..], [-4.0, -8.0]);
    }

    #[test]
    fn potential_nonincreasing_in_theta() {
        let g = default_grid(11);
        let op = assemble_trait_operator(0.8, 0.6, &ModelParams::default(), &g).unwrap();
        let d = &op.matrix().diag;
        assert!(d.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = default_grid(11);
        let p = ModelParams::default();
        assert!(assemble_trait_operator(0.0, 0.5, &p, &g).is_err());
        assert!(assemble_trait_operator(1.0, 1.5, &p, &g).is_err());
        let bad = ModelParams { alpha: 0.0, r: 1.0 };
        assert!(assemble_trait_operator(1.0, 0.5, &bad, &g).is_err());
    }

    #[test]
    fn tau_zero_ground_state_is_constant() {
        let g = default_grid(51);
        let op = assemble_trait_operator(1.3, 0.0, &ModelParams::default(), &g).unwrap();
        let (gamma, q) = principal_eigenpair(&op, &g).unwrap();
        assert_relative_eq!(gamma, 1.3 * 1.3, epsilon = 1e-12);
        for v in q {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_dense_oracle_on_400_nodes() {
        let g = default_grid(400);
        let op = assemble_trait_operator(1.0, 1.0, &ModelParams::default(), &g).unwrap();
        let (gamma, q) = principal_eigenpair(&op, &g).unwrap();
        let dense = dense_principal(&op, &g);
        assert!((gamma - dense).abs() <= 1e-8 * dense.abs());
        assert!(q.iter().all(|v| *v > 0.0));
        assert_relative_eq!(g.integrate(&q).unwrap(), 1.0, epsilon = 1e-12);
        let lq = op.apply(&q);
        let res = lq
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - gamma * b).abs())
            .fold(0.0, f64::max);
        assert!(res <= 1e-10 * op.norm_inf());
    }

    #[test]
    fn large_mutation_rate_averages_the_trait() {
        let g = default_grid(400);
        let p = ModelParams { alpha: 1e6, r: 1.0 };
        let op = assemble_trait_operator(1.0, 1.0, &p, &g).unwrap();
        let (gamma, q) = principal_eigenpair(&op, &g).unwrap();
        // ||L|| ~ 6e11 here, so the dense route only resolves gamma to ~eps ||L||
        let dense = dense_principal(&op, &g);
        assert!((gamma - dense).abs() <= 1e-3 * dense.abs());
        // averaging limit lambda^2 (theta_max - midpoint) = 0.5
        assert!((gamma - 0.5).abs() < 0.005);
        assert!(q.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn kpp_dispersion_at_tau_zero() {
        let g = default_grid(41);
        let p = ModelParams::default();
        let s = dispersion_c(1.0, 0.0, &p, &g).unwrap();
        assert_relative_eq!(s.c, 2.0, epsilon = 1e-12);
        for l in [0.3, 0.9, 2.5] {
            let s = dispersion_c(l, 0.0, &p, &g).unwrap();
            assert_relative_eq!(s.c, (1.0 + l * l) / l, epsilon = 1e-11);
        }
    }

    #[test]
    fn dispersion_two_sided_bound() {
        let g = default_grid(101);
        let p = ModelParams::default();
        for tau in [0.0, 0.3, 1.0] {
            for l in [0.1, 0.7, 1.0, 3.0] {
                let s = dispersion_c(l, tau, &p, &g).unwrap();
                let lc = l * s.c;
                assert!(lc >= l * l * g.theta_min() + p.r - 1e-10);
                assert!(lc <= l * l * g.theta_max() + p.r + 1e-10);
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let g = default_grid(101);
        let p = ModelParams::default();
        let l = 0.7;
        let s = dispersion_c(l, 1.0, &p, &g).unwrap();
        let h = 1e-5;
        let fd = (dispersion_c(l + h, 1.0, &p, &g).unwrap().c
            - dispersion_c(l - h, 1.0, &p, &g).unwrap().c)
            / (2.0 * h);
        assert!((s.slope(&g) - fd).abs() < 1e-7);
    }

    #[test]
    fn kpp_minimal_speed() {
        let g = default_grid(41);
        let s = minimize_speed(0.0, &ModelParams::default(), &g, &SpeedSearch::default()).unwrap();
        assert!((s.c_star - 2.0).abs() < 1e-9);
        assert!((s.lambda_star - 1.0).abs() < 1e-6);
        let p = ModelParams { alpha: 1.0, r: 4.0 };
        let s = minimize_speed(0.0, &p, &g, &SpeedSearch::default()).unwrap();
        assert!((s.c_star - 4.0).abs() < 1e-9);
        assert!((s.lambda_star - 2.0).abs() < 1e-6);
    }

    #[test]
    fn tau_zero_relations_are_degenerate() {
        let g = default_grid(41);
        let s = minimize_speed(0.0, &ModelParams::default(), &g, &SpeedSearch::default()).unwrap();
        assert!(s.residuals.r1 < 1e-12);
        assert_relative_eq!(s.residuals.r2, -0.5, epsilon = 1e-12);
        let shape = profile_shape(&s.q_star, &s.solution(), &g).unwrap();
        assert!(shape.theta0_empirical.is_none());
        assert!(shape.theta0_predicted.is_none());
    }

    #[test]
    fn edge_of_scan_is_a_bracket_failure() {
        let g = default_grid(41);
        let search = SpeedSearch {
            lambda_lo: 2.0,
            lambda_hi: 10.0,
            ..SpeedSearch::default()
        };
        assert!(matches!(
            minimize_speed(1.0, &ModelParams::default(), &g, &search),
            Err(Error::Bracket(_))
        ));
    }

    #[test]
    fn rel1_converges_at_second_order() {
        let p = ModelParams::default();
        let study = rel1_refinement(0.812, 1.0, &p, 1.0, 2.0, 50, 3).unwrap();
        for r in &study.ratios {
            assert!((r - 4.0).abs() < 0.25, "{:?}", study.ratios);
        }
        for level in &study.levels {
            assert!(level.r1_discrete < 1e-9);
        }
    }
}
