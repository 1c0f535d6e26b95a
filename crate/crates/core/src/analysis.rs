//! Quantitative checks on computed waves: Harnack ratios across the trait
//! interval, a Fourier interpolation inequality for trait profiles, and
//! the limits of slab solutions as the slab grows.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::least_squares_slope;
use crate::grid::Field2D;
use crate::slab::SlabSolution;
use crate::spectral::MinSpeedResult;

pub const DEFAULT_HARNACK_FLOOR: f64 = 1e-300;

/// Number of samples used for the `L1` and `L-infinity` norms.
pub const NORM_SAMPLES: usize = 4096;

/// Smallest constant for which the two-branch interpolation inequality
/// holds on the default random suite (seed 20240607, 1000 polynomials,
/// `K_max = 64`, unit period), times 1.1.
pub const INTERPOLATION_C_ORACLE: f64 = 2.143_719_806_108_044e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    /// Space nodes at which a ratio was computed.
    pub nodes: Vec<usize>,
    /// `max_theta mu / min_theta mu` at each of `nodes`.
    pub ratios: Vec<f64>,
    /// Largest ratio, 1 when no column qualifies.
    pub global_ratio: f64,
    pub argmax: Option<usize>,
    /// Columns whose minimum is at or below `floor`.
    pub skipped: usize,
    pub floor: f64,
}

pub fn harnack_ratios(mu: &Field2D) -> HarnackReport {
    harnack_ratios_with_floor(mu, DEFAULT_HARNACK_FLOOR)
}

pub fn harnack_ratios_with_floor(mu: &Field2D, floor: f64) -> HarnackReport {
    let mut nodes = Vec::new();
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for i in 0..mu.n_space() {
        let row = mu.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo > floor && lo.is_finite() && hi.is_finite() {
            nodes.push(i);
            ratios.push(hi / lo);
        } else {
            skipped += 1;
        }
    }
    let best =
        ratios
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (k, &r)| match acc {
                Some((_, m)) if m >= r => acc,
                _ => Some((k, r)),
            });
    HarnackReport {
        global_ratio: best.map_or(1.0, |b| b.1),
        argmax: best.map(|b| nodes[b.0]),
        nodes,
        ratios,
        skipped,
        floor,
    }
}

/// Real trigonometric polynomial
///
/// ```text
/// g(phi) = sum_{|k| <= K} ghat(k) e^{i k phi},   ghat(-k) = conj(ghat(k)),
/// ```
///
/// in the angle `phi in [0, 2 pi)`, which corresponds to a trait interval
/// of length `period` through `theta = period phi / (2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    /// `ghat(k)` for `k = 0..=K`; the negative modes are the conjugates.
    coefficients: Vec<Complex64>,
    period: f64,
}

impl TrigPolynomial {
    pub fn new(mut coefficients: Vec<Complex64>, period: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::domain(
                "a trigonometric polynomial needs the k = 0 coefficient",
            ));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::domain("period must be positive"));
        }
        if coefficients
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::domain("coefficients must be finite"));
        }
        if coefficients[0].im != 0.0 {
            return Err(Error::domain(
                "the k = 0 coefficient of a real signal is real",
            ));
        }
        while coefficients.len() > 1 && coefficients.last() == Some(&Complex64::new(0.0, 0.0)) {
            coefficients.pop();
        }
        Ok(Self {
            coefficients,
            period,
        })
    }

    pub fn constant(value: f64, period: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(value, 0.0)], period)
    }

    /// `cos(k phi)`: `ghat(k) = ghat(-k) = 1/2`.
    pub fn cosine(k: usize, period: f64) -> Result<Self> {
        let mut c = vec![Complex64::new(0.0, 0.0); k + 1];
        c[k] += Complex64::new(if k == 0 { 1.0 } else { 0.5 }, 0.0);
        Self::new(c, period)
    }

    /// Standard normal real and imaginary parts for `1 <= k <= k_max`,
    /// standard normal real `ghat(0)`.
    pub fn random<R: Rng + ?Sized>(k_max: usize, period: f64, rng: &mut R) -> Result<Self> {
        let mut c = Vec::with_capacity(k_max + 1);
        c.push(Complex64::new(rng.sample(StandardNormal), 0.0));
        for _ in 0..k_max {
            c.push(Complex64::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ));
        }
        Self::new(c, period)
    }

    pub fn k_max(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `ghat(k)` for any integer `k`.
    pub fn coefficient(&self, k: i64) -> Complex64 {
        match self.coefficients.get(k.unsigned_abs() as usize) {
            Some(c) if k < 0 => c.conj(),
            Some(c) => *c,
            None => Complex64::new(0.0, 0.0),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|c| c * s).collect(),
            period: self.period,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.period != other.period {
            return Err(Error::domain("periods differ"));
        }
        let n = self.coefficients.len().max(other.coefficients.len());
        let c = (0..n)
            .map(|k| self.coefficient(k as i64) + other.coefficient(k as i64))
            .collect();
        Self::new(c, self.period)
    }

    pub fn eval_angle(&self, phi: f64) -> f64 {
        let step = Complex64::from_polar(1.0, phi);
        let mut rot = step;
        let mut s = 0.0;
        for c in &self.coefficients[1..] {
            s += (c * rot).re;
            rot *= step;
        }
        self.coefficients[0].re + 2.0 * s
    }

    /// Value at trait offset `theta` (measured from the left end).
    pub fn eval(&self, theta: f64) -> f64 {
        self.eval_angle(2.0 * PI * theta / self.period)
    }

    /// Values at `phi_j = 2 pi j / n`, `j = 0..n`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| self.eval_angle(2.0 * PI * j as f64 / n as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevNorms {
    /// `int |g| dtheta` over one period of the trait variable.
    pub l1: f64,
    pub linf: f64,
    /// `(sum_{k != 0} |k|^3 |ghat(k)|^2)^(1/2)`.
    pub h32: f64,
}

pub fn sobolev_norms(g: &TrigPolynomial) -> SobolevNorms {
    let samples = g.sample(NORM_SAMPLES);
    let l1 = samples.iter().map(|v| v.abs()).sum::<f64>() * g.period / NORM_SAMPLES as f64;
    let linf = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h32 = (2.0
        * g.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| (k as f64).powi(3) * c.norm_sqr())
            .sum::<f64>())
    .sqrt();
    SobolevNorms { l1, linf, h32 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpolationBranch {
    /// `L1 / H32 <= 1 / C`: `linf^3 <= C L1 H32^2`.
    Sobolev,
    /// Otherwise: `linf <= C L1`.
    Lebesgue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub branch: InterpolationBranch,
    pub constant: f64,
    pub norms: SobolevNorms,
    /// Right-hand side over left-hand side of the branch inequality.
    pub slack: f64,
    pub passed: bool,
}

pub fn interpolation_check(g: &TrigPolynomial, constant: f64) -> Result<InterpolationCheck> {
    interpolation_from_norms(sobolev_norms(g), constant)
}

pub fn interpolation_from_norms(norms: SobolevNorms, constant: f64) -> Result<InterpolationCheck> {
    if norms.linf == 0.0 {
        return Err(Error::domain(
            "the interpolation inequality needs a nonzero signal",
        ));
    }
    if constant.is_nan() || constant <= 0.0 {
        return Err(Error::domain("the interpolation constant must be positive"));
    }
    let SobolevNorms { l1, linf, h32 } = norms;
    let (branch, slack) = if l1 * constant <= h32 {
        (
            InterpolationBranch::Sobolev,
            constant * l1 * h32 * h32 / (linf * linf * linf),
        )
    } else {
        (InterpolationBranch::Lebesgue, constant * l1 / linf)
    };
    Ok(InterpolationCheck {
        branch,
        constant,
        norms,
        slack,
        passed: slack >= 1.0,
    })
}

/// Smallest constant that makes the two-branch inequality hold for a
/// signal with these norms.
pub fn minimal_interpolation_constant(norms: SobolevNorms) -> f64 {
    let SobolevNorms { l1, linf, h32 } = norms;
    let sobolev = linf.powi(3) / (l1 * h32 * h32);
    let switch = h32 / l1;
    if sobolev <= switch {
        sobolev
    } else {
        // the Lebesgue branch applies strictly above the switch
        (linf / l1).max(switch.next_up())
    }
}

/// The explicit form with `e`-power constants:
/// `linf <= (L1 H32)^(1/2) (log(H32/L1)/2 + 2) / 2` when
/// `L1/H32 <= e^-8`, `linf <= 3 e^4 L1` otherwise. Returns the slack.
pub fn explicit_interpolation_slack(norms: SobolevNorms) -> f64 {
    let SobolevNorms { l1, linf, h32 } = norms;
    if l1 <= (-8f64).exp() * h32 {
        0.5 * (l1 * h32).sqrt() * (0.5 * (h32 / l1).ln() + 2.0) / linf
    } else {
        3.0 * 4f64.exp() * l1 / linf
    }
}

/// `|g(phi) - g(phi')| / (H32 d log(1/d) / 2)` with `d = |phi - phi'|`
/// in the angle variable. The bound is claimed for `d <= e^-4`.
pub fn log_holder_ratio(g: &TrigPolynomial, h32: f64, phi: f64, phi_prime: f64) -> f64 {
    let d = (phi - phi_prime).abs();
    let diff = (g.eval_angle(phi) - g.eval_angle(phi_prime)).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / (0.5 * h32 * d * (1.0 / d).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSuiteConfig {
    pub seed: u64,
    pub n_polys: usize,
    pub k_max: usize,
    pub pairs_per_poly: usize,
    pub period: f64,
    pub constant: f64,
}

impl Default for InterpolationSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 20240607,
            n_polys: 1000,
            k_max: 64,
            pairs_per_poly: 100,
            period: 1.0,
            constant: INTERPOLATION_C_ORACLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSuiteReport {
    pub config: InterpolationSuiteConfig,
    pub n_pairs: usize,
    pub holder_max_ratio: f64,
    pub holder_violations: usize,
    pub interpolation_failures: usize,
    pub min_slack: f64,
    pub sobolev_branch: usize,
    pub lebesgue_branch: usize,
    /// Largest per-polynomial minimal constant.
    pub required_constant: f64,
    pub explicit_failures: usize,
    pub explicit_min_slack: f64,
}

impl InterpolationSuiteReport {
    pub fn passed(&self) -> bool {
        self.holder_violations == 0 && self.interpolation_failures == 0
    }
}

/// The `i`-th polynomial of a seeded suite. Each polynomial draws from
/// its own ChaCha stream, so the suite is reproducible in any order.
pub fn suite_polynomial(
    seed: u64,
    i: usize,
    k_max: usize,
    period: f64,
) -> (TrigPolynomial, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let g = TrigPolynomial::random(k_max, period, &mut rng).expect("finite normal samples");
    (g, rng)
}

struct CaseResult {
    holder_max: f64,
    holder_violations: usize,
    check: InterpolationCheck,
    required: f64,
    explicit: f64,
}

pub fn interpolation_suite(config: &InterpolationSuiteConfig) -> Result<InterpolationSuiteReport> {
    if config.n_polys == 0 {
        return Err(Error::domain("the suite needs at least one polynomial"));
    }
    let max_gap = (-4f64).exp();
    let cases = (0..config.n_polys)
        .into_par_iter()
        .map(|i| {
            let (g, mut rng) = suite_polynomial(config.seed, i, config.k_max, config.period);
            let norms = sobolev_norms(&g);
            let mut holder_max = 0.0f64;
            let mut holder_violations = 0;
            for _ in 0..config.pairs_per_poly {
                let phi = rng.random_range(0.0..2.0 * PI);
                let d = rng.random_range(0.0..max_gap);
                let ratio = log_holder_ratio(&g, norms.h32, phi, phi + d);
                holder_max = holder_max.max(ratio);
                if ratio > 1.0 {
                    holder_violations += 1;
                }
            }
            Ok(CaseResult {
                holder_max,
                holder_violations,
                check: interpolation_from_norms(norms, config.constant)?,
                required: minimal_interpolation_constant(norms),
                explicit: explicit_interpolation_slack(norms),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = |b| cases.iter().filter(|c| c.check.branch == b).count();
    Ok(InterpolationSuiteReport {
        config: config.clone(),
        n_pairs: config.n_polys * config.pairs_per_poly,
        holder_max_ratio: cases.iter().map(|c| c.holder_max).fold(0.0, f64::max),
        holder_violations: cases.iter().map(|c| c.holder_violations).sum(),
        interpolation_failures: cases.iter().filter(|c| !c.check.passed).count(),
        min_slack: cases
            .iter()
            .map(|c| c.check.slack)
            .fold(f64::INFINITY, f64::min),
        sobolev_branch: count(InterpolationBranch::Sobolev),
        lebesgue_branch: count(InterpolationBranch::Lebesgue),
        required_constant: cases.iter().map(|c| c.required).fold(0.0, f64::max),
        explicit_failures: cases.iter().filter(|c| c.explicit < 1.0).count(),
        explicit_min_slack: cases
            .iter()
            .map(|c| c.explicit)
            .fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveLimitReport {
    pub half_widths: Vec<f64>,
    pub speeds: Vec<f64>,
    pub c_star: f64,
    /// `|c(a) - c*|` for each slab.
    pub gaps: Vec<f64>,
    pub gaps_decreasing: bool,
    /// Aitken extrapolation of the last three speeds (meaningful when the
    /// half-widths grow geometrically).
    pub extrapolated_speed: Option<f64>,
    /// `min mu / Q*` over `xi <= 0` on the widest slab.
    pub lower_ratio: f64,
    /// `(xi, theta)` node where `lower_ratio` is attained.
    pub lower_ratio_at: (usize, usize),
    /// `nu` at `xi = 0.8 a`, linearly interpolated.
    pub nu_ahead: f64,
    pub epsilon: f64,
    pub nu_ahead_ok: bool,
    /// `-d log(nu)/d xi` fitted on `[0, a/2]`.
    pub decay_slope: f64,
    pub lambda_star: f64,
}

pub fn wave_limit_checks(
    slabs: &[SlabSolution],
    min_speed: &MinSpeedResult,
) -> Result<WaveLimitReport> {
    let last = slabs
        .last()
        .ok_or_else(|| Error::domain("wave limit checks need at least one slab solution"))?;
    if slabs
        .windows(2)
        .any(|w| w[1].grid.half_width() <= w[0].grid.half_width())
    {
        return Err(Error::domain("slab half-widths must increase"));
    }
    let c_star = min_speed.c_star;
    let half_widths: Vec<f64> = slabs.iter().map(|s| s.grid.half_width()).collect();
    let speeds: Vec<f64> = slabs.iter().map(|s| s.c).collect();
    let gaps: Vec<f64> = speeds.iter().map(|c| (c - c_star).abs()).collect();
    let gaps_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let extrapolated_speed = match speeds.len() {
        n if n >= 3 => {
            let (c1, c2, c3) = (speeds[n - 3], speeds[n - 2], speeds[n - 1]);
            let denom = (c3 - c2) - (c2 - c1);
            (denom != 0.0).then(|| c3 - (c3 - c2) * (c3 - c2) / denom)
        }
        _ => None,
    };

    let grid = &last.grid;
    let tg = grid.trait_grid();
    let q: Vec<f64> = tg
        .nodes()
        .iter()
        .map(|&t| min_speed.grid.interpolate(&min_speed.q_star, t))
        .collect();
    let qm = tg.integrate(&q)?;
    let mut lower_ratio = f64::INFINITY;
    let mut lower_ratio_at = (0, 0);
    for (i, &xi) in grid.xi().iter().enumerate() {
        if xi > 0.0 {
            break;
        }
        for (j, qj) in q.iter().enumerate() {
            let ratio = last.mu.get(i, j) / (qj / qm);
            if ratio < lower_ratio {
                lower_ratio = ratio;
                lower_ratio_at = (i, j);
            }
        }
    }

    let a = grid.half_width();
    let xi = grid.xi();
    let target = 0.8 * a;
    let k = xi.partition_point(|&x| x <= target).clamp(1, xi.len() - 1);
    let w = (target - xi[k - 1]) / (xi[k] - xi[k - 1]);
    let nu_ahead = (1.0 - w) * last.nu[k - 1] + w * last.nu[k];

    let (xs, ls): (Vec<f64>, Vec<f64>) = xi
        .iter()
        .zip(&last.nu)
        .filter(|(x, v)| **x >= 0.0 && **x <= 0.5 * a && **v > 0.0)
        .map(|(x, v)| (*x, v.ln()))
        .unzip();
    let decay_slope = least_squares_slope(&xs, &ls)
        .map(|s| -s)
        .ok_or_else(|| Error::domain("too few positive nodes ahead of the front"))?;

    Ok(WaveLimitReport {
        half_widths,
        speeds,
        c_star,
        gaps,
        gaps_decreasing,
        extrapolated_speed,
        lower_ratio,
        lower_ratio_at,
        nu_ahead,
        epsilon: last.epsilon,
        nu_ahead_ok: nu_ahead < last.epsilon / 10.0,
        decay_slope,
        lambda_star: min_speed.lambda_star,
    })
}
