//! Travelling-wave problem on the bounded slab `(-a, a) x Θ`:
//!
//! ```text
//! -c mu_xi - g_tau(theta) mu_xixi - alpha mu_thetatheta = r mu (1 - nu),
//! mu_theta = 0 on the trait boundary,
//! mu(-a, .) = 1/|Θ|,  mu(a, .) = 0,  nu(0) = epsilon,
//! ```
//!
//! where `nu = int mu dtheta`. The speed is selected by bisection on
//! `c -> nu_c(0) - epsilon`, with `nu_c` the solution at fixed speed.
//! The scalar Fisher-KPP slab problem used as the `tau = 0` reference
//! lives here too.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field2D, SlabGrid, TraitGrid};
use crate::linalg::{BlockTridiagonal, BlockTridiagonalLu, Tridiagonal};
use crate::spectral::{check_tau, diffusivity, minimize_speed, ModelParams, SpeedSearch};

/// Discretization of the `-c mu_xi` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Advection {
    /// Second-order central differences.
    Central,
    /// First-order upwind differences.
    Upwind,
    /// Central where the cell Peclet number `|c| h / (2 g)` is at most
    /// one, upwind elsewhere. Keeps the M-matrix structure for every `c`.
    #[default]
    Hybrid,
}

impl Advection {
    /// Coefficients `(lower, diag, upper)` of `-c d/dxi - g d2/dxi2` at
    /// one node.
    #[inline]
    fn stencil(self, c: f64, g: f64, h: f64) -> (f64, f64, f64) {
        let dif = g / (h * h);
        let central = match self {
            Advection::Central => true,
            Advection::Upwind => false,
            Advection::Hybrid => c.abs() * h <= 2.0 * g,
        };
        if central {
            let adv = c / (2.0 * h);
            (adv - dif, 2.0 * dif, -adv - dif)
        } else if c >= 0.0 {
            // information travels towards -xi: forward difference
            (-dif, 2.0 * dif + c / h, -dif - c / h)
        } else {
            (-dif + c / h, 2.0 * dif - c / h, -dif)
        }
    }

    /// Derivative of [`Advection::stencil`] with respect to `c`, with the
    /// scheme choice held fixed.
    #[inline]
    fn stencil_dc(self, c: f64, g: f64, h: f64) -> (f64, f64, f64) {
        let central = match self {
            Advection::Central => true,
            Advection::Upwind => false,
            Advection::Hybrid => c.abs() * h <= 2.0 * g,
        };
        if central {
            (0.5 / h, 0.0, -0.5 / h)
        } else if c >= 0.0 {
            (0.0, 1.0 / h, -1.0 / h)
        } else {
            (1.0 / h, -1.0 / h, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSettings {
    pub advection: Advection,
    /// Picard relaxation `mu <- (1 - omega) mu + omega K(mu)`.
    pub omega: f64,
    /// Picard hands over to Newton once `||K(mu) - mu||_inf` drops below this.
    pub picard_switch: f64,
    /// Zeroth-order shift of the Picard iteration, in units of `r`.
    pub picard_shift: f64,
    pub max_picard: usize,
    pub newton_tol: f64,
    /// Budget of pseudo-time / Newton steps per fixed-speed solve.
    pub max_newton: usize,
    /// Initial pseudo-time step.
    pub pseudo_dt: f64,
    /// Least growth factor of the pseudo-time step after an accepted step.
    pub pseudo_growth: f64,
    /// Required `|nu(0) - epsilon|`.
    pub nu_tol: f64,
    /// The speed search hands over to Newton on `(mu, c)` once
    /// `|nu(0) - epsilon| <= polish_window * epsilon`.
    pub polish_window: f64,
    /// Speed distance within which a neighbouring solution seeds the next
    /// fixed-speed solve.
    pub warm_start_radius: f64,
    /// Largest negative value of `mu` attributed to rounding; such values
    /// are reset to zero.
    pub negative_tol: f64,
    pub max_bisection: usize,
    pub epsilon_cap: f64,
    /// Upper end of the speed bracket is `c*_tau + speed_margin`.
    pub speed_margin: f64,
    /// Allowed excess of the selected speed over `c*_tau`.
    pub ceiling_tol: f64,
    /// Minimal speed for this `tau`; computed on the slab trait grid when absent.
    pub c_star: Option<f64>,
}

impl Default for SlabSettings {
    fn default() -> Self {
        Self {
            advection: Advection::Hybrid,
            omega: 0.5,
            picard_switch: 1e-4,
            picard_shift: 2.0,
            max_picard: 500,
            newton_tol: 1e-12,
            max_newton: 400,
            pseudo_dt: 1.0,
            pseudo_growth: 1.5,
            nu_tol: 1e-10,
            polish_window: 0.5,
            negative_tol: 1e-12,
            warm_start_radius: 1e-3,
            max_bisection: 200,
            epsilon_cap: 0.1,
            speed_margin: 1.0,
            ceiling_tol: 1e-3,
            c_star: None,
        }
    }
}

/// Converged travelling wave on the slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSolution {
    pub grid: SlabGrid,
    pub tau: f64,
    pub epsilon: f64,
    pub c: f64,
    pub mu: Field2D,
    pub nu: Vec<f64>,
    /// Inner iterations (Picard + Newton) summed over the speed search.
    pub iterations: usize,
    pub residual: f64,
    /// `c*_tau` used for the bracket and the ceiling check.
    pub c_star: f64,
}

impl SlabSolution {
    pub fn nu_at_center(&self) -> f64 {
        self.nu[self.grid.center()]
    }
}

/// Solution at a prescribed speed, before speed selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSpeedSolution {
    pub c: f64,
    pub mu: Field2D,
    pub nu: Vec<f64>,
    pub picard_iterations: usize,
    pub newton_iterations: usize,
    pub residual: f64,
}

/// Linear part of the slab operator with Dirichlet rows at `xi = +-a`.
struct LinearSlab {
    matrix: BlockTridiagonal,
    n_xi: usize,
    n_theta: usize,
    /// `d/dc` of the `xi` stencil at each trait node.
    stencil_dc: Vec<(f64, f64, f64)>,
}

impl LinearSlab {
    fn new(
        c: f64,
        tau: f64,
        grid: &SlabGrid,
        params: &ModelParams,
        advection: Advection,
        shift: f64,
    ) -> Self {
        let tg = grid.trait_grid();
        let (n_xi, m) = (grid.n_xi(), tg.len());
        let h = grid.h_xi();
        let k = params.alpha / (tg.spacing() * tg.spacing());
        let g: Vec<f64> = tg
            .nodes()
            .iter()
            .map(|&t| diffusivity(tau, t, tg.theta_min()))
            .collect();
        let stencils: Vec<(f64, f64, f64)> =
            g.iter().map(|&gj| advection.stencil(c, gj, h)).collect();

        let mut diag = Vec::with_capacity(n_xi);
        let mut lower = Vec::with_capacity(n_xi);
        let mut upper = Vec::with_capacity(n_xi);
        for i in 0..n_xi {
            if i == 0 || i == n_xi - 1 {
                diag.push(DMatrix::identity(m, m));
                lower.push(vec![0.0; m]);
                upper.push(vec![0.0; m]);
                continue;
            }
            let mut d = DMatrix::zeros(m, m);
            for j in 0..m {
                d[(j, j)] = stencils[j].1 + 2.0 * k + shift;
                if j == 0 {
                    d[(0, 1)] = -2.0 * k;
                } else if j == m - 1 {
                    d[(j, j - 1)] = -2.0 * k;
                } else {
                    d[(j, j - 1)] = -k;
                    d[(j, j + 1)] = -k;
                }
            }
            diag.push(d);
            lower.push(stencils.iter().map(|s| s.0).collect());
            upper.push(stencils.iter().map(|s| s.2).collect());
        }
        Self {
            matrix: BlockTridiagonal { diag, lower, upper },
            n_xi,
            n_theta: m,
            stencil_dc: g.iter().map(|&gj| advection.stencil_dc(c, gj, h)).collect(),
        }
    }

    fn boundary_value(&self, i: usize, tg: &TraitGrid) -> Option<f64> {
        if i == 0 {
            Some(1.0 / tg.measure())
        } else if i == self.n_xi - 1 {
            Some(0.0)
        } else {
            None
        }
    }

    /// Right-hand side vector with the boundary data written into the
    /// Dirichlet rows.
    fn rhs_with_boundary(&self, source: &Field2D, tg: &TraitGrid) -> Vec<f64> {
        let mut b = source.values().to_vec();
        let m = self.n_theta;
        for i in [0, self.n_xi - 1] {
            let v = self.boundary_value(i, tg).unwrap();
            b[i * m..(i + 1) * m].fill(v);
        }
        b
    }
}

fn validate_params(params: &ModelParams) -> Result<()> {
    if !(params.alpha > 0.0) || !(params.r >= 0.0) {
        return Err(Error::domain(format!(
            "need alpha > 0 and r >= 0, got alpha = {}, r = {}",
            params.alpha, params.r
        )));
    }
    Ok(())
}

/// Solves `-c Z_xi - g_tau Z_xixi - alpha Z_thetatheta = rhs` with the slab
/// boundary data. The boundary rows of `rhs` are ignored.
pub fn solve_linear_slab(
    c: f64,
    tau: f64,
    rhs: &Field2D,
    grid: &SlabGrid,
    params: &ModelParams,
    advection: Advection,
) -> Result<Field2D> {
    check_tau(tau)?;
    validate_params(params)?;
    if !rhs.matches(grid) {
        return Err(Error::LengthMismatch {
            expected: grid.n_xi() * grid.trait_grid().len(),
            found: rhs.values().len(),
        });
    }
    if !rhs.all_finite() {
        return Err(Error::domain("right-hand side is not finite"));
    }
    let op = LinearSlab::new(c, tau, grid, params, advection, 0.0);
    let lu = op.matrix.factor()?;
    solve_with(&op, &lu, rhs, grid)
}

fn solve_with(
    op: &LinearSlab,
    lu: &BlockTridiagonalLu,
    rhs: &Field2D,
    grid: &SlabGrid,
) -> Result<Field2D> {
    let b = op.rhs_with_boundary(rhs, grid.trait_grid());
    let z = lu.solve(&b)?;
    Field2D::from_values(op.n_xi, op.n_theta, z)
}

fn reaction_source(mu: &Field2D, nu: &[f64], r: f64) -> Field2D {
    let m = mu.n_trait();
    Field2D::from_fn(mu.n_space(), m, |i, j| r * mu.get(i, j) * (1.0 - nu[i]))
}

/// One application of the fixed-point map: `Z` solving the linear slab
/// problem with source `r mu (1 - nu)`.
pub fn picard_step(
    mu: &Field2D,
    c: f64,
    tau: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    advection: Advection,
) -> Result<Field2D> {
    if !mu.matches(grid) {
        return Err(Error::LengthMismatch {
            expected: grid.n_xi() * grid.trait_grid().len(),
            found: mu.values().len(),
        });
    }
    let nu = mu.marginal(grid.trait_grid());
    let src = reaction_source(mu, &nu, params.r);
    solve_linear_slab(c, tau, &src, grid, params, advection)
}

/// Residual of the discrete slab equations; Dirichlet rows measure the
/// boundary-data mismatch.
fn residual_field(op: &LinearSlab, mu: &Field2D, nu: &[f64], grid: &SlabGrid, r: f64) -> Vec<f64> {
    let mut f = op.matrix.matvec(mu.values());
    let m = op.n_theta;
    let tg = grid.trait_grid();
    for i in 0..op.n_xi {
        match op.boundary_value(i, tg) {
            Some(v) => {
                for j in 0..m {
                    f[i * m + j] -= v;
                }
            }
            None => {
                for j in 0..m {
                    f[i * m + j] -= r * mu.get(i, j) * (1.0 - nu[i]);
                }
            }
        }
    }
    f
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Discrete residual `||F(mu)||_inf` of the slab equations at speed `c`.
pub fn slab_residual(
    mu: &Field2D,
    c: f64,
    tau: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    advection: Advection,
) -> f64 {
    let op = LinearSlab::new(c, tau, grid, params, advection, 0.0);
    let nu = mu.marginal(grid.trait_grid());
    max_abs(&residual_field(&op, mu, &nu, grid, params.r))
}

fn newton_jacobian(
    op: &LinearSlab,
    mu: &Field2D,
    nu: &[f64],
    tg: &TraitGrid,
    r: f64,
) -> BlockTridiagonal {
    let mut jac = op.matrix.clone();
    let m = op.n_theta;
    let w = tg.weights();
    for (i, &nu_i) in nu.iter().enumerate().take(op.n_xi - 1).skip(1) {
        let d = &mut jac.diag[i];
        for j in 0..m {
            d[(j, j)] -= r * (1.0 - nu_i);
            let mij = mu.get(i, j);
            for k in 0..m {
                d[(j, k)] += r * mij * w[k];
            }
        }
    }
    jac
}

/// `dF/dc` of the slab residual; zero on the Dirichlet rows.
fn speed_derivative(op: &LinearSlab, mu: &Field2D) -> Vec<f64> {
    let m = op.n_theta;
    let mut out = vec![0.0; op.n_xi * m];
    for i in 1..op.n_xi - 1 {
        for j in 0..m {
            let (l, d, u) = op.stencil_dc[j];
            out[i * m + j] = l * mu.get(i - 1, j) + d * mu.get(i, j) + u * mu.get(i + 1, j);
        }
    }
    out
}

/// Newton on the unknowns `(mu, c)` with `nu(0) = epsilon` appended. The
/// normalization removes the near-translation mode that makes the
/// fixed-speed Jacobian ill-conditioned close to the selected speed, so
/// `nu(0)` is met to rounding. Each step solves the block system twice
/// and eliminates the speed correction from the appended row.
fn bordered_newton(
    start: &FixedSpeedSolution,
    epsilon: f64,
    tau: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    settings: &SlabSettings,
) -> Result<FixedSpeedSolution> {
    let tg = grid.trait_grid();
    let m = tg.len();
    let center = grid.center();
    let w = tg.weights();
    let eval = |mu: &Field2D, c: f64| {
        let op = LinearSlab::new(c, tau, grid, params, settings.advection, 0.0);
        let nu = mu.marginal(tg);
        let f = residual_field(&op, mu, &nu, grid, params.r);
        let gap = nu[center] - epsilon;
        let norm = max_abs(&f).max(gap.abs());
        (op, nu, f, gap, norm)
    };
    let mut mu = start.mu.clone();
    let mut c = start.c;
    let (mut op, mut nu, mut f, mut gap, mut norm) = eval(&mu, c);
    let mut history = vec![norm];
    let mut steps = 0;
    loop {
        if norm <= settings.newton_tol && steps > 0 {
            break;
        }
        if steps >= 30 {
            return Err(Error::NewtonDiverged { history });
        }
        steps += 1;
        let lu = newton_jacobian(&op, &mu, &nu, tg, params.r).factor()?;
        let x = lu.solve(&f)?;
        let y = lu.solve(&speed_derivative(&op, &mu))?;
        let ex: f64 = (0..m).map(|j| w[j] * x[center * m + j]).sum();
        let ey: f64 = (0..m).map(|j| w[j] * y[center * m + j]).sum();
        if ey == 0.0 || !ey.is_finite() {
            return Err(Error::Singular("bordered system has a zero pivot".into()));
        }
        let dc = (ex - gap) / ey;
        let mut t = 1.0;
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..12 {
            let trial: Vec<f64> = mu
                .values()
                .iter()
                .zip(x.iter().zip(&y))
                .map(|(v, (xv, yv))| v - t * (xv - yv * dc))
                .collect();
            let trial = Field2D::from_values(mu.n_space(), m, trial)?;
            let tc = c - t * dc;
            let (top, tnu, tf, tgap, tn) = eval(&trial, tc);
            if tn < (1.0 - 1e-4 * t) * norm || (norm < 1e-9 && tn <= 2.0 * norm) {
                stalled = norm < 1e-9 && tn > 0.5 * norm;
                mu = trial;
                c = tc;
                op = top;
                nu = tnu;
                f = tf;
                gap = tgap;
                norm = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(norm);
        if !accepted {
            return Err(Error::NewtonDiverged { history });
        }
        if stalled {
            break;
        }
    }
    Ok(FixedSpeedSolution {
        c,
        mu,
        nu,
        picard_iterations: 0,
        newton_iterations: history.len() - 1,
        residual: norm,
    })
}

/// Initial guess: the scalar Fisher-KPP slab profile with diffusivity
/// `theta_eff`, spread uniformly over the traits, falling back to the
/// linear ramp.
fn initial_guess(
    c: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    advection: Advection,
    theta_eff: f64,
) -> Field2D {
    let tg = grid.trait_grid();
    let inv = 1.0 / tg.measure();
    let kpp = solve_kpp_slab(
        c,
        grid.half_width(),
        grid.n_xi(),
        &KppParams {
            r: params.r,
            theta_min: theta_eff,
        },
        advection,
    );
    match kpp {
        Ok(s) => Field2D::from_fn(grid.n_xi(), tg.len(), |i, _| s.nu[i] * inv),
        Err(_) => {
            let a = grid.half_width();
            Field2D::from_fn(grid.n_xi(), tg.len(), |i, _| {
                (a - grid.xi()[i]) / (2.0 * a) * inv
            })
        }
    }
}

/// Solves the slab equations at a fixed speed `c` (no normalization):
/// from a cold start, damped shifted Picard until the update drops below
/// `picard_switch`; then pseudo-transient continuation into Newton.
pub fn solve_at_speed(
    c: f64,
    tau: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    init: Option<&Field2D>,
    settings: &SlabSettings,
) -> Result<FixedSpeedSolution> {
    check_tau(tau)?;
    validate_params(params)?;
    let tg = grid.trait_grid();
    let op = LinearSlab::new(c, tau, grid, params, settings.advection, 0.0);
    // The bare fixed-point map has linearization r L^-1, which is far from
    // contractive on wide slabs; iterate (L + s) Z = r mu (1 - nu) + s mu
    // instead, which has the same fixed points.
    let shift = settings.picard_shift * params.r;
    let pic = LinearSlab::new(c, tau, grid, params, settings.advection, shift);
    let mut mu = match init {
        Some(f) if f.matches(grid) => f.clone(),
        Some(f) => {
            return Err(Error::LengthMismatch {
                expected: grid.n_xi() * tg.len(),
                found: f.values().len(),
            })
        }
        None => {
            // a scalar front with the same minimal speed sits on the same
            // side of the slab as the sought solution
            let theta_eff = match settings.c_star {
                Some(cs) if params.r > 0.0 && cs > 0.0 => cs * cs / (4.0 * params.r),
                _ => tg.midpoint(),
            };
            initial_guess(c, grid, params, settings.advection, theta_eff)
        }
    };

    let mut picard_iterations = 0;
    if init.is_none() {
        // Starting from a nonnegative guess the shifted iteration keeps
        // mu >= 0 while nu stays below 1 + s / r.
        let lu = pic.matrix.factor()?;
        let om = settings.omega;
        for _ in 0..settings.max_picard {
            let nu = mu.marginal(tg);
            let mut src = reaction_source(&mu, &nu, params.r);
            for (sv, m) in src.values_mut().iter_mut().zip(mu.values()) {
                *sv += shift * m;
            }
            let z = solve_with(&pic, &lu, &src, grid)?;
            let diff = z.max_abs_diff(&mu);
            for (m, zv) in mu.values_mut().iter_mut().zip(z.values()) {
                *m = (1.0 - om) * *m + om * zv;
            }
            picard_iterations += 1;
            if diff < settings.picard_switch {
                break;
            }
        }
    }

    // Plain Newton from a loose iterate readily lands on sign-changing
    // solutions. Implicit Euler steps of the moving-frame parabolic problem
    // with mu clamped at zero stay on the nonnegative branch; the pseudo
    // time step grows with the residual ratio until the steps are Newton
    // steps.
    let mut nu = mu.marginal(tg);
    let mut f = residual_field(&op, &mu, &nu, grid, params.r);
    let mut norm = max_abs(&f);
    let mut history = vec![norm];
    let mut dt = settings.pseudo_dt;
    let mut newton_iterations = 0;
    // At least one step is taken so a warm start from a neighbouring speed
    // is never returned unchanged; below 1e-9 a step that fails to halve
    // the residual marks the rounding floor.
    loop {
        if norm <= settings.newton_tol && newton_iterations > 0 {
            break;
        }
        if newton_iterations >= settings.max_newton || dt < 1e-8 {
            if history.len() > 20 {
                history.drain(..history.len() - 20);
            }
            return Err(Error::NewtonDiverged { history });
        }
        newton_iterations += 1;
        let mut jac = newton_jacobian(&op, &mu, &nu, tg, params.r);
        if dt.is_finite() {
            for d in &mut jac.diag[1..grid.n_xi() - 1] {
                for j in 0..d.nrows() {
                    d[(j, j)] += 1.0 / dt;
                }
            }
        }
        let step = jac.solve(&f)?;
        let trial: Vec<f64> = mu
            .values()
            .iter()
            .zip(&step)
            .map(|(m, s)| (m - s).max(0.0))
            .collect();
        let trial = Field2D::from_values(mu.n_space(), mu.n_trait(), trial)?;
        let tnu = trial.marginal(tg);
        let tf = residual_field(&op, &trial, &tnu, grid, params.r);
        let tn = max_abs(&tf);
        if !(tn <= 4.0 * norm) {
            dt = dt.min(1e6) * 0.1;
            history.push(norm);
            continue;
        }
        dt = if tn > 0.0 {
            (dt * (norm / tn).max(settings.pseudo_growth)).min(1e14)
        } else {
            f64::INFINITY
        };
        let stalled = norm < 1e-9 && tn > 0.5 * norm;
        mu = trial;
        nu = tnu;
        f = tf;
        norm = tn;
        history.push(norm);
        if stalled {
            break;
        }
    }
    Ok(FixedSpeedSolution {
        c,
        mu,
        nu,
        picard_iterations,
        newton_iterations,
        residual: norm,
    })
}

/// Finds `(c, mu)` with `nu(0) = epsilon`.
///
/// The speed is bracketed on `[c*_tau - speed_margin, c*_tau + speed_margin]`
/// (the lower end drops to 0 if needed) and narrowed by safeguarded regula
/// falsi; the last step solves for `(mu, c)` jointly. When the direct
/// search fails for `tau > 0`, `tau` is continued from 0 in four steps.
pub fn solve_slab(
    tau: f64,
    epsilon: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    settings: &SlabSettings,
) -> Result<SlabSolution> {
    check_tau(tau)?;
    validate_params(params)?;
    if !(epsilon > 0.0 && epsilon < settings.epsilon_cap) {
        return Err(Error::domain(format!(
            "epsilon must lie in (0, {}), got {epsilon}",
            settings.epsilon_cap
        )));
    }
    let tg = grid.trait_grid();
    let center = grid.center();
    let c_star = match settings.c_star {
        Some(c) => c,
        None => minimize_speed(tau, params, tg, &SpeedSearch::default())?.c_star,
    };

    let kpp = KppParams {
        r: params.r,
        theta_min: tg.theta_min(),
    };
    let kpp_threshold = solve_kpp_slab(
        0.0,
        grid.half_width(),
        grid.n_xi(),
        &kpp,
        settings.advection,
    )?
    .nu[center];
    if epsilon >= kpp_threshold {
        return Err(Error::EpsilonAboveThreshold {
            epsilon,
            threshold: kpp_threshold,
            which: "Fisher-KPP c = 0",
        });
    }

    let settings = &SlabSettings {
        c_star: Some(c_star),
        ..*settings
    };
    let (s, iterations) = match search_speed(tau, epsilon, grid, params, settings) {
        Ok(found) => found,
        Err(direct) if tau > 0.0 => {
            tau_homotopy(tau, epsilon, grid, params, settings).map_err(|_| direct)?
        }
        Err(e) => return Err(e),
    };
    finish_slab(s, iterations, tau, epsilon, grid, settings, c_star)
}

/// Speed search at fixed `tau`: Illinois steps on the speed, each with a
/// fixed-speed solve, finished by Newton on `(mu, c)`.
fn search_speed(
    tau: f64,
    epsilon: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    settings: &SlabSettings,
) -> Result<(FixedSpeedSolution, usize)> {
    let center = grid.center();
    let c_star = settings.c_star.expect("speed search needs c*");

    let mut iterations = 0;
    let mut polish_iterations = 0;
    let mut eval = |c: f64, init: Option<&Field2D>| -> Result<FixedSpeedSolution> {
        let s = match solve_at_speed(c, tau, grid, params, init, settings) {
            Ok(s) => s,
            Err(_) if init.is_some() => solve_at_speed(c, tau, grid, params, None, settings)?,
            Err(e) => return Err(e),
        };
        iterations += s.picard_iterations + s.newton_iterations;
        Ok(s)
    };
    // nu(0) is nearly flat in c except in a narrow window below c*, which
    // defeats secant steps. The point where nu first drops to epsilon
    // moves steadily across the slab instead, and is positive exactly when
    // nu(0) > epsilon.
    let xi = grid.xi();
    let front_gap = |s: &FixedSpeedSolution| -> f64 {
        match s.nu.iter().position(|&v| v <= epsilon) {
            Some(0) => xi[0],
            Some(k) => {
                let (v0, v1) = (s.nu[k - 1], s.nu[k]);
                xi[k - 1] + (v0 - epsilon) / (v0 - v1) * (xi[k] - xi[k - 1])
            }
            None => xi[xi.len() - 1],
        }
    };

    // The sign change sits just below c*; start the bracket there when
    // that end already has nu(0) > epsilon.
    let near = (c_star - settings.speed_margin).max(0.0);
    let mut lo_sol = eval(near, None)?;
    if lo_sol.nu[center] <= epsilon && near > 0.0 {
        lo_sol = eval(0.0, None)?;
    }
    if lo_sol.nu[center] <= epsilon {
        return Err(Error::EpsilonAboveThreshold {
            epsilon,
            threshold: lo_sol.nu[center],
            which: "slab c = 0",
        });
    }
    let mut c_hi = c_star + settings.speed_margin;
    let mut hi_sol = eval(c_hi, None)?;
    let mut widen = 0;
    while hi_sol.nu[center] >= epsilon {
        widen += 1;
        if widen > 4 {
            return Err(Error::Bracket(format!(
                "nu(0) - epsilon does not change sign on [0, {c_hi}]; the slab is too small for epsilon = {epsilon}"
            )));
        }
        c_hi += settings.speed_margin;
        hi_sol = eval(c_hi, None)?;
    }

    // Illinois regula falsi on the front position, with a bisection step whenever
    // the bracket fails to halve over two steps.
    let (mut lo, mut hi) = (lo_sol.c, c_hi);
    let (mut f_lo, mut f_hi) = (front_gap(&lo_sol), front_gap(&hi_sol));
    let (mut lo_sol, mut hi_sol) = (lo_sol, hi_sol);
    let mut side = 0i8;
    let mut width_before = [hi - lo; 2];
    let mut best: Option<FixedSpeedSolution> = None;
    for step in 0..settings.max_bisection {
        let width = hi - lo;
        let bisect = step >= 2 && width > 0.5 * width_before[step % 2];
        width_before[step % 2] = width;
        let mut c = if bisect {
            0.5 * (lo + hi)
        } else {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        };
        if !(c > lo && c < hi) {
            c = 0.5 * (lo + hi);
        }
        // A distant neighbour carries its front to the wrong place and
        // pseudo-time must move it back; the scalar guess is better then.
        let (near_c, near_mu) = if c - lo <= hi - c {
            (lo, &lo_sol.mu)
        } else {
            (hi, &hi_sol.mu)
        };
        let init = ((c - near_c).abs() <= settings.warm_start_radius).then_some(near_mu);
        let s = eval(c, init)?;
        let done = (s.nu[center] - epsilon).abs() <= settings.nu_tol
            || width <= 4.0 * f64::EPSILON * hi.max(1.0);
        if done {
            best = Some(s);
            break;
        }
        if (s.nu[center] - epsilon).abs() <= settings.polish_window * epsilon {
            if let Ok(b) = bordered_newton(&s, epsilon, tau, grid, params, settings) {
                polish_iterations += b.newton_iterations;
                let on_branch = b.c > lo && b.c < hi && b.mu.min() >= -settings.negative_tol;
                if on_branch && (b.nu[center] - epsilon).abs() <= settings.nu_tol {
                    best = Some(b);
                    break;
                }
            }
        }
        let f = front_gap(&s);
        if f > 0.0 {
            lo = c;
            f_lo = f;
            lo_sol = s;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = c;
            f_hi = f;
            hi_sol = s;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    let s = best.ok_or_else(|| {
        Error::Bracket(format!(
            "speed search did not reach |nu(0) - epsilon| <= {} within {} steps",
            settings.nu_tol, settings.max_bisection
        ))
    })?;
    Ok((s, iterations + polish_iterations))
}

/// Fallback when the direct solve stalls: solve at `tau = 0`, where the
/// problem is scalar, then step `tau` up in four equal steps, each started
/// from the previous solution by Newton on `(mu, c)`.
fn tau_homotopy(
    tau: f64,
    epsilon: f64,
    grid: &SlabGrid,
    params: &ModelParams,
    settings: &SlabSettings,
) -> Result<(FixedSpeedSolution, usize)> {
    let c0 = minimize_speed(0.0, params, grid.trait_grid(), &SpeedSearch::default())?.c_star;
    let base = SlabSettings {
        c_star: Some(c0),
        ..*settings
    };
    let (mut s, mut iterations) = search_speed(0.0, epsilon, grid, params, &base)?;
    for k in 1..=4 {
        let t = tau * k as f64 / 4.0;
        s = bordered_newton(&s, epsilon, t, grid, params, settings)?;
        iterations += s.newton_iterations;
    }
    Ok((s, iterations))
}

fn finish_slab(
    mut s: FixedSpeedSolution,
    iterations: usize,
    tau: f64,
    epsilon: f64,
    grid: &SlabGrid,
    settings: &SlabSettings,
    c_star: f64,
) -> Result<SlabSolution> {
    let center = grid.center();
    if s.mu.min() < 0.0 {
        if s.mu.min() < -settings.negative_tol {
            return Err(Error::Domain(format!(
                "slab profile has a negative value {:e}",
                s.mu.min()
            )));
        }
        s.mu.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        s.nu = s.mu.marginal(grid.trait_grid());
    }
    if (s.nu[center] - epsilon).abs() > settings.nu_tol {
        return Err(Error::Bracket(format!(
            "speed bracket collapsed at c = {} with nu(0) - epsilon = {:e}",
            s.c,
            s.nu[center] - epsilon
        )));
    }
    if s.c > c_star + settings.ceiling_tol {
        return Err(Error::Bracket(format!(
            "selected speed {} exceeds the minimal speed {} by more than {}",
            s.c, c_star, settings.ceiling_tol
        )));
    }
    Ok(SlabSolution {
        grid: grid.clone(),
        tau,
        epsilon,
        c: s.c,
        mu: s.mu,
        nu: s.nu,
        iterations,
        residual: s.residual,
        c_star,
    })
}

/// Growth rate and diffusivity of the scalar Fisher-KPP slab problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KppParams {
    pub r: f64,
    pub theta_min: f64,
}

/// Solution of `-c nu' - theta_min nu'' = r nu (1 - nu)`, `nu(-a) = 1`,
/// `nu(a) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppSlabSolution {
    pub a: f64,
    pub c: f64,
    pub xi: Vec<f64>,
    pub nu: Vec<f64>,
    pub decreasing: bool,
}

impl KppSlabSolution {
    pub fn nu_at_center(&self) -> f64 {
        self.nu[self.nu.len() / 2]
    }
}

pub fn solve_kpp_slab(
    c: f64,
    a: f64,
    n_xi: usize,
    params: &KppParams,
    advection: Advection,
) -> Result<KppSlabSolution> {
    solve_kpp_slab_from(c, a, n_xi, params, advection, None)
}

fn solve_kpp_slab_from(
    c: f64,
    a: f64,
    n_xi: usize,
    params: &KppParams,
    advection: Advection,
    init: Option<&[f64]>,
) -> Result<KppSlabSolution> {
    if !(c >= 0.0) || !(a > 0.0) {
        return Err(Error::domain(format!(
            "need c >= 0 and a > 0, got c = {c}, a = {a}"
        )));
    }
    if n_xi < 3 || n_xi.is_multiple_of(2) {
        return Err(Error::domain(format!(
            "n_xi must be odd and >= 3, got {n_xi}"
        )));
    }
    if !(params.theta_min > 0.0) {
        return Err(Error::domain("theta_min must be positive"));
    }
    let n = n_xi;
    let h = 2.0 * a / (n - 1) as f64;
    let mid = n / 2;
    let xi: Vec<f64> = (0..n)
        .map(|i| {
            if i == mid {
                0.0
            } else {
                (i as f64 - mid as f64) * h
            }
        })
        .collect();
    let (sl, sd, su) = advection.stencil(c, params.theta_min, h);
    let r = params.r;

    let residual = |v: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; n];
        f[0] = v[0] - 1.0;
        f[n - 1] = v[n - 1];
        for i in 1..n - 1 {
            f[i] = sl * v[i - 1] + sd * v[i] + su * v[i + 1] - r * v[i] * (1.0 - v[i]);
        }
        f
    };
    let mut v: Vec<f64> = match init {
        Some(x) if x.len() == n => x.to_vec(),
        _ => xi.iter().map(|x| (a - x) / (2.0 * a)).collect(),
    };
    // Pseudo-transient continuation: implicit Euler steps of the parabolic
    // problem whose step grows as the residual falls, ending in Newton.
    let mut f = residual(&v);
    let mut norm = max_abs(&f);
    let mut history = vec![norm];
    let tol = 1e-12;
    let mut dt: f64 = 1.0;
    for _ in 0..2000 {
        if norm <= tol {
            break;
        }
        let shift = if dt.is_finite() { 1.0 / dt } else { 0.0 };
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            lower[i] = sl;
            upper[i] = su;
            diag[i] = sd - r * (1.0 - 2.0 * v[i]) + shift;
        }
        let step = Tridiagonal::new(lower, diag, upper).solve(&f)?;
        let trial: Vec<f64> = v
            .iter()
            .zip(&step)
            .map(|(x, s)| (x - s).clamp(0.0, 1.0))
            .collect();
        let tf = residual(&trial);
        let tn = max_abs(&tf);
        if !tn.is_finite() {
            break;
        }
        dt = if tn > 0.0 {
            (dt * norm / tn).clamp(1e-2, 1e12)
        } else {
            f64::INFINITY
        };
        v = trial;
        f = tf;
        norm = tn;
        history.push(norm);
    }
    if !(norm <= 1e-9) {
        if history.len() > 20 {
            history.drain(..history.len() - 20);
        }
        return Err(Error::NewtonDiverged { history });
    }
    let decreasing = v.windows(2).all(|w| w[1] <= w[0] + 4.0 * f64::EPSILON) && v[n - 2] < v[1];
    Ok(KppSlabSolution {
        a,
        c,
        xi,
        nu: v,
        decreasing,
    })
}

/// Newton on the unknowns `(nu, c)` of the scalar problem with
/// `nu(0) = epsilon` appended.
fn kpp_bordered_newton(
    start: &KppSlabSolution,
    epsilon: f64,
    params: &KppParams,
    advection: Advection,
) -> Result<KppSlabSolution> {
    let n = start.nu.len();
    let mid = n / 2;
    let h = 2.0 * start.a / (n - 1) as f64;
    let r = params.r;
    let residual = |v: &[f64], c: f64| -> (Vec<f64>, f64) {
        let (sl, sd, su) = advection.stencil(c, params.theta_min, h);
        let mut f = vec![0.0; n];
        f[0] = v[0] - 1.0;
        f[n - 1] = v[n - 1];
        for i in 1..n - 1 {
            f[i] = sl * v[i - 1] + sd * v[i] + su * v[i + 1] - r * v[i] * (1.0 - v[i]);
        }
        let norm = max_abs(&f).max((v[mid] - epsilon).abs());
        (f, norm)
    };
    let mut v = start.nu.clone();
    let mut c = start.c;
    let (mut f, mut norm) = residual(&v, c);
    let mut history = vec![norm];
    for step in 0..40 {
        if norm <= 1e-13 && step > 0 {
            break;
        }
        let (sl, sd, su) = advection.stencil(c, params.theta_min, h);
        let (dl, dd, du) = advection.stencil_dc(c, params.theta_min, h);
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut fc = vec![0.0; n];
        for i in 1..n - 1 {
            lower[i] = sl;
            upper[i] = su;
            diag[i] = sd - r * (1.0 - 2.0 * v[i]);
            fc[i] = dl * v[i - 1] + dd * v[i] + du * v[i + 1];
        }
        let lu = Tridiagonal::new(lower, diag, upper).factor()?;
        let mut x = f.clone();
        lu.solve_in_place(&mut x);
        let mut y = fc;
        lu.solve_in_place(&mut y);
        if y[mid] == 0.0 || !y[mid].is_finite() {
            return Err(Error::Singular("bordered system has a zero pivot".into()));
        }
        let dc = (x[mid] - (v[mid] - epsilon)) / y[mid];
        let mut t = 1.0;
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..20 {
            let trial: Vec<f64> = v
                .iter()
                .zip(x.iter().zip(&y))
                .map(|(vi, (xi, yi))| vi - t * (xi - yi * dc))
                .collect();
            let tc = c - t * dc;
            let (tf, tn) = residual(&trial, tc);
            if tn < (1.0 - 1e-4 * t) * norm || (norm < 1e-9 && tn <= 2.0 * norm) {
                stalled = norm < 1e-9 && tn > 0.5 * norm;
                v = trial;
                c = tc;
                f = tf;
                norm = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(norm);
        if !accepted {
            return Err(Error::NewtonDiverged { history });
        }
        if stalled {
            break;
        }
    }
    if !(norm <= 1e-9) {
        return Err(Error::NewtonDiverged { history });
    }
    let decreasing = v.windows(2).all(|w| w[1] <= w[0] + 4.0 * f64::EPSILON) && v[n - 2] < v[1];
    Ok(KppSlabSolution {
        a: start.a,
        c,
        xi: start.xi.clone(),
        nu: v,
        decreasing,
    })
}

/// `nu_{c=0}(0)` of the scalar problem: the largest admissible normalization.
pub fn kpp_threshold(a: f64, n_xi: usize, params: &KppParams, advection: Advection) -> Result<f64> {
    Ok(solve_kpp_slab(0.0, a, n_xi, params, advection)?.nu_at_center())
}

/// The speed `c0` in `[0, 2 sqrt(r theta_min)]` with `nu_{c0}(0) = epsilon`,
/// by bisection on the decreasing map `c -> nu_c(0)`.
pub fn find_c0(
    a: f64,
    epsilon: f64,
    n_xi: usize,
    params: &KppParams,
    advection: Advection,
) -> Result<f64> {
    let c_max = 2.0 * (params.r * params.theta_min).sqrt();
    let lo_sol = solve_kpp_slab(0.0, a, n_xi, params, advection)?;
    if lo_sol.nu_at_center() <= epsilon {
        return Err(Error::Bracket(format!(
            "epsilon = {epsilon} is not below nu_(c=0)(0) = {}",
            lo_sol.nu_at_center()
        )));
    }
    let hi_sol = solve_kpp_slab(c_max, a, n_xi, params, advection)?;
    if hi_sol.nu_at_center() >= epsilon {
        return Err(Error::Bracket(format!(
            "nu at c = 2 sqrt(r theta_min) is {} >= epsilon = {epsilon}; increase a",
            hi_sol.nu_at_center()
        )));
    }
    let (mut lo, mut hi) = (0.0, c_max);
    let (mut lo_nu, mut hi_nu) = (lo_sol.nu, hi_sol.nu);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let init = if mid - lo <= hi - mid { &lo_nu } else { &hi_nu };
        let s = match solve_kpp_slab_from(mid, a, n_xi, params, advection, Some(init)) {
            Ok(s) => s,
            Err(_) => solve_kpp_slab(mid, a, n_xi, params, advection)?,
        };
        let phi = s.nu_at_center() - epsilon;
        if phi.abs() <= 1e-10 {
            return Ok(mid);
        }
        // Close to the root nu_c(0) is too sensitive to the solver residual
        // for bisection alone; finish with Newton on (nu, c).
        if phi.abs() <= 0.5 * epsilon || hi - lo <= 4.0 * f64::EPSILON {
            if let Ok(b) = kpp_bordered_newton(&s, epsilon, params, advection) {
                if b.c >= lo && b.c <= hi && (b.nu_at_center() - epsilon).abs() <= 1e-10 {
                    return Ok(b.c);
                }
            }
        }
        if hi - lo <= 4.0 * f64::EPSILON {
            return Err(Error::Bracket(format!(
                "bisection collapsed at c = {mid} with residual {phi:e}"
            )));
        }
        if phi > 0.0 {
            lo = mid;
            lo_nu = s.nu;
        } else {
            hi = mid;
            hi_nu = s.nu;
        }
    }
    Err(Error::Bracket("c0 bisection did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_trait_grid;

    fn small_grid(a: f64, n_xi: usize, n_theta: usize) -> SlabGrid {
        SlabGrid::new(a, n_xi, make_trait_grid(1.0, 2.0, n_theta).unwrap()).unwrap()
    }

    #[test]
    fn hybrid_switches_to_upwind_at_large_peclet() {
        let (l, d, u) = Advection::Hybrid.stencil(1.0, 1.0, 0.1);
        assert!(l < 0.0 && u < 0.0 && (d + l + u).abs() < 1e-9);
        let (l, d, u) = Advection::Hybrid.stencil(100.0, 1.0, 0.1);
        assert_eq!((l, d, u), Advection::Upwind.stencil(100.0, 1.0, 0.1));
        assert!(l <= 0.0 && u <= 0.0);
    }

    #[test]
    fn harmonic_interpolant_obeys_maximum_principle() {
        let grid = small_grid(5.0, 51, 9);
        let p = ModelParams::default();
        let zero = Field2D::zeros_on(&grid);
        for (c, tau) in [(0.0, 0.0), (0.0, 1.0), (1.5, 1.0), (3.0, 0.5)] {
            let z = solve_linear_slab(c, tau, &zero, &grid, &p, Advection::Hybrid).unwrap();
            assert!(z.min() >= 0.0);
            assert!(z.max() <= 1.0 + 1e-12);
            if c == 0.0 && tau == 0.0 {
                for &v in z.row(grid.center()) {
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }

    #[test]
    fn linear_solve_reproduces_affine_manufactured_solution() {
        // Z = (a - xi) / (2 a |Θ|) has zero second derivatives, so its
        // source is -c Z_xi = c / (2 a |Θ|) under every scheme.
        let grid = small_grid(4.0, 41, 7);
        let p = ModelParams::default();
        let a = grid.half_width();
        for adv in [Advection::Central, Advection::Upwind, Advection::Hybrid] {
            let c = 1.3;
            let rhs = Field2D::from_fn(grid.n_xi(), 7, |_, _| c / (2.0 * a));
            let z = solve_linear_slab(c, 1.0, &rhs, &grid, &p, adv).unwrap();
            let exact = Field2D::from_fn(grid.n_xi(), 7, |i, _| (a - grid.xi()[i]) / (2.0 * a));
            assert!(z.max_abs_diff(&exact) < 1e-8);
        }
    }

    #[test]
    fn zero_source_picard_step_is_the_harmonic_lift() {
        let grid = small_grid(5.0, 51, 9);
        let p = ModelParams::default();
        let mut mu = Field2D::zeros_on(&grid);
        mu.row_mut(0).fill(1.0);
        let z = picard_step(&mu, 0.7, 1.0, &grid, &p, Advection::Hybrid).unwrap();
        let lift = solve_linear_slab(
            0.7,
            1.0,
            &Field2D::zeros_on(&grid),
            &grid,
            &p,
            Advection::Hybrid,
        )
        .unwrap();
        assert!(z.max_abs_diff(&lift) < 1e-14);
    }

    #[test]
    fn kpp_solution_is_decreasing_in_unit_interval() {
        let p = KppParams {
            r: 1.0,
            theta_min: 1.0,
        };
        for c in [0.0, 1.0, 2.0, 3.0] {
            let s = solve_kpp_slab(c, 20.0, 401, &p, Advection::Hybrid).unwrap();
            assert!(s.decreasing);
            assert_eq!(s.nu[0], 1.0);
            assert_eq!(*s.nu.last().unwrap(), 0.0);
            assert!(s.nu.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn kpp_rejects_even_grids() {
        let p = KppParams {
            r: 1.0,
            theta_min: 1.0,
        };
        assert!(solve_kpp_slab(1.0, 10.0, 100, &p, Advection::Hybrid).is_err());
    }

    #[test]
    fn epsilon_outside_window_is_rejected() {
        let grid = small_grid(10.0, 101, 5);
        let p = ModelParams::default();
        let s = SlabSettings::default();
        assert!(matches!(
            solve_slab(1.0, 0.2, &grid, &p, &s),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_slab(1.0, 0.0, &grid, &p, &s),
            Err(Error::Domain(_))
        ));
    }

    fn slab(a: f64, per_unit: f64, n_theta: usize) -> SlabGrid {
        SlabGrid::with_resolution(a, per_unit, make_trait_grid(1.0, 2.0, n_theta).unwrap()).unwrap()
    }

    fn kpp1() -> KppParams {
        KppParams {
            r: 1.0,
            theta_min: 1.0,
        }
    }

    #[test]
    fn converged_slab_is_a_fixed_point_of_the_map() {
        let grid = slab(10.0, 5.0, 9);
        let p = ModelParams::default();
        let s = solve_slab(1.0, 0.01, &grid, &p, &SlabSettings::default()).unwrap();
        let z = picard_step(&s.mu, s.c, 1.0, &grid, &p, Advection::Hybrid).unwrap();
        assert!(z.max_abs_diff(&s.mu) < 1e-9, "{}", z.max_abs_diff(&s.mu));
        assert!((s.nu_at_center() - 0.01).abs() <= 1e-10);
        assert!(s.mu.min() >= 0.0);
        assert!(s.mu.row(0).iter().all(|&v| v == 1.0));
        assert!(s.mu.row(grid.n_xi() - 1).iter().all(|&v| v == 0.0));
        assert!(slab_residual(&s.mu, s.c, 1.0, &grid, &p, Advection::Hybrid) < 1e-9);
        assert!(s.c > 0.0 && s.c <= s.c_star + 1e-3);
    }

    #[test]
    fn trait_independent_problem_reduces_to_scalar_kpp() {
        let grid = slab(15.0, 10.0, 7);
        let p = ModelParams::default();
        let s = solve_slab(0.0, 0.01, &grid, &p, &SlabSettings::default()).unwrap();
        let k = solve_kpp_slab(s.c, 15.0, grid.n_xi(), &kpp1(), Advection::Hybrid).unwrap();
        let gap =
            s.nu.iter()
                .zip(&k.nu)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-8, "{gap}");
        for i in 0..grid.n_xi() {
            let row = s.mu.row(i);
            assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-10));
        }
    }

    #[test]
    fn tau_homotopy_reaches_the_direct_solution() {
        let grid = slab(10.0, 5.0, 9);
        let p = ModelParams::default();
        let direct = solve_slab(1.0, 0.01, &grid, &p, &SlabSettings::default()).unwrap();
        let settings = SlabSettings {
            c_star: Some(direct.c_star),
            ..Default::default()
        };
        let (h, _) = tau_homotopy(1.0, 0.01, &grid, &p, &settings).unwrap();
        assert!((h.c - direct.c).abs() < 1e-8, "{} vs {}", h.c, direct.c);
        assert!(h.mu.max_abs_diff(&direct.mu) < 1e-7);
    }

    #[test]
    fn zero_speed_marginal_obeys_trait_ratio_bound() {
        let grid = slab(20.0, 10.0, 11);
        let p = ModelParams::default();
        let s = solve_at_speed(0.0, 1.0, &grid, &p, None, &SlabSettings::default()).unwrap();
        let bound = 2.0 * (1.0 + 10.0 * grid.h_xi());
        assert!(s.nu.iter().all(|&v| v <= bound));
    }

    #[test]
    fn kpp_threshold_is_bounded_below_uniformly_in_a() {
        let t30 = kpp_threshold(30.0, 601, &kpp1(), Advection::Hybrid).unwrap();
        let t60 = kpp_threshold(60.0, 1201, &kpp1(), Advection::Hybrid).unwrap();
        assert!(t30 > 0.5 && t60 > 0.5);
    }

    #[test]
    fn kpp_fast_speed_gives_small_center_value() {
        let s = solve_kpp_slab(20.0, 40.0, 801, &kpp1(), Advection::Hybrid).unwrap();
        assert!(s.nu_at_center() < 1e-6);
    }

    #[test]
    fn kpp_solutions_are_ordered_in_speed() {
        let speeds = [0.5, 1.5, 1.9];
        let sols: Vec<KppSlabSolution> = speeds
            .iter()
            .map(|&c| solve_kpp_slab(c, 10.0, 201, &kpp1(), Advection::Hybrid).unwrap())
            .collect();
        for w in sols.windows(2) {
            assert!(w[0].nu.iter().zip(&w[1].nu).all(|(lo, hi)| hi <= lo));
            assert!(w[1].nu_at_center() < w[0].nu_at_center());
        }
    }

    // frozen from find_c0(40, 0.01, 801) with hybrid differencing
    const C0_A40: f64 = 1.992463280152388;

    #[test]
    fn c0_regression_and_grid_convergence() {
        let c0 = find_c0(40.0, 0.01, 801, &kpp1(), Advection::Hybrid).unwrap();
        assert!((0.0..=2.0).contains(&c0));
        assert!((c0 - C0_A40).abs() < 1e-9, "{c0}");
        // independent check: Richardson limit of two finer grids
        let f1 = find_c0(40.0, 0.01, 1601, &kpp1(), Advection::Hybrid).unwrap();
        let f2 = find_c0(40.0, 0.01, 3201, &kpp1(), Advection::Hybrid).unwrap();
        let ratio = (f1 - c0) / (f2 - f1);
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
        let limit = f2 + (f2 - f1) / 3.0;
        assert!((c0 - limit).abs() < 3e-3);
    }

    #[test]
    fn c0_vanishes_as_epsilon_approaches_threshold() {
        let t = kpp_threshold(4.0, 81, &kpp1(), Advection::Hybrid).unwrap();
        let far = find_c0(4.0, 0.5 * t, 81, &kpp1(), Advection::Hybrid).unwrap();
        let near = find_c0(4.0, t - 1e-6, 81, &kpp1(), Advection::Hybrid).unwrap();
        assert!(near > 0.0 && near < 1e-3 && near < far, "{near} {far}");
    }

    #[test]
    fn c0_rejects_epsilon_above_threshold() {
        let t = kpp_threshold(4.0, 81, &kpp1(), Advection::Hybrid).unwrap();
        assert!(matches!(
            find_c0(4.0, t + 1e-3, 81, &kpp1(), Advection::Hybrid),
            Err(Error::Bracket(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // With nu <= 1 the source r mu (1 - nu) is nonnegative and the
            // operator is an M-matrix, so one map application keeps mu >= 0.
            #[test]
            fn picard_step_preserves_nonnegativity(
                raw in proptest::collection::vec(0.0f64..1.0, 31 * 5),
                c in 0.0f64..5.0,
                tau in 0.0f64..=1.0,
            ) {
                let grid = small_grid(3.0, 31, 5);
                let tg = grid.trait_grid();
                let mut mu = Field2D::from_values(31, 5, raw).unwrap();
                let nu = mu.marginal(tg);
                for (i, v) in nu.iter().enumerate() {
                    let s = v.max(1.0);
                    mu.row_mut(i).iter_mut().for_each(|v| *v /= s);
                }
                let z = picard_step(&mu, c, tau, &grid, &ModelParams::default(), Advection::Hybrid).unwrap();
                prop_assert!(z.min() >= -1e-14);
            }
        }
    }
}
