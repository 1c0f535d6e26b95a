//! Discretizations shared by every solver: the trait interval, the
//! travelling-wave slab and two-dimensional fields on them.
//!
//! All grids are uniform. Integrals over the trait interval use the
//! trapezoid rule and second derivatives in the trait direction use a
//! ghost-node mirror closure, which together give an exact discrete
//! integration-by-parts identity: `sum_i w_i (D f)_i == 0` for every `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on the trait interval `(theta_min, theta_max)` with
/// trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitGrid {
    theta_min: f64,
    theta_max: f64,
    nodes: Vec<f64>,
    spacing: f64,
    weights: Vec<f64>,
}

impl TraitGrid {
    pub fn new(theta_min: f64, theta_max: f64, n_nodes: usize) -> Result<Self> {
        if !(theta_min.is_finite() && theta_max.is_finite()) {
            return Err(Error::domain("trait bounds must be finite"));
        }
        if theta_min <= 0.0 {
            return Err(Error::domain(format!(
                "theta_min must be positive, got {theta_min}"
            )));
        }
        if theta_max <= theta_min {
            return Err(Error::domain(format!(
                "theta_max ({theta_max}) must exceed theta_min ({theta_min})"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::domain(format!(
                "trait grid needs at least 3 nodes, got {n_nodes}"
            )));
        }
        let spacing = (theta_max - theta_min) / (n_nodes - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_nodes)
            .map(|i| theta_min + i as f64 * spacing)
            .collect();
        nodes[n_nodes - 1] = theta_max;
        let mut weights = vec![spacing; n_nodes];
        weights[0] = 0.5 * spacing;
        weights[n_nodes - 1] = 0.5 * spacing;
        Ok(Self {
            theta_min,
            theta_max,
            nodes,
            spacing,
            weights,
        })
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Length `|Θ|` of the trait interval.
    pub fn measure(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.theta_min + self.theta_max)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Trapezoid integral of nodal values over the trait interval.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Piecewise-linear interpolation of nodal values at `theta`
    /// (clamped to the interval).
    pub fn interpolate(&self, f: &[f64], theta: f64) -> f64 {
        let n = self.len();
        let s = ((theta - self.theta_min) / self.spacing).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        (1.0 - t) * f[i] + t * f[i + 1]
    }
}

pub fn make_trait_grid(theta_min: f64, theta_max: f64, n_nodes: usize) -> Result<TraitGrid> {
    TraitGrid::new(theta_min, theta_max, n_nodes)
}

pub fn integrate_trait(f: &[f64], grid: &TraitGrid) -> Result<f64> {
    grid.integrate(f)
}

/// Second difference with homogeneous Neumann closure by ghost-node
/// reflection: `f[-1] = f[1]` and `f[n] = f[n-2]`.
pub fn second_derivative_neumann(f: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 3 {
        return Err(Error::domain(format!(
            "Neumann second difference needs at least 3 values, got {n}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::domain(format!("spacing must be positive, got {h}")));
    }
    let mut out = vec![0.0; n];
    second_derivative_neumann_into(f, h, &mut out);
    Ok(out)
}

pub(crate) fn second_derivative_neumann_into(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let inv = 1.0 / (h * h);
    out[0] = 2.0 * (f[1] - f[0]) * inv;
    for i in 1..n - 1 {
        out[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) * inv;
    }
    out[n - 1] = 2.0 * (f[n - 2] - f[n - 1]) * inv;
}

/// Uniform grid on the slab `[-a, a]` crossed with a trait grid. The
/// node count is odd so that `xi = 0` is a grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabGrid {
    half_width: f64,
    xi: Vec<f64>,
    h_xi: f64,
    trait_grid: TraitGrid,
}

impl SlabGrid {
    pub fn new(half_width: f64, n_xi: usize, trait_grid: TraitGrid) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::domain(format!(
                "slab half-width must be positive, got {half_width}"
            )));
        }
        if n_xi < 3 {
            return Err(Error::domain(format!(
                "slab needs at least 3 xi nodes, got {n_xi}"
            )));
        }
        if n_xi.is_multiple_of(2) {
            return Err(Error::domain(format!(
                "slab node count must be odd so that xi = 0 is a node, got {n_xi}"
            )));
        }
        let h_xi = 2.0 * half_width / (n_xi - 1) as f64;
        let mid = n_xi / 2;
        let xi = (0..n_xi)
            .map(|i| {
                if i == mid {
                    0.0
                } else {
                    (i as f64 - mid as f64) * h_xi
                }
            })
            .collect();
        Ok(Self {
            half_width,
            xi,
            h_xi,
            trait_grid,
        })
    }

    /// Grid with `per_unit` xi intervals per unit length (rounded so the
    /// node count is odd).
    pub fn with_resolution(half_width: f64, per_unit: f64, trait_grid: TraitGrid) -> Result<Self> {
        let intervals = (2.0 * half_width * per_unit).round().max(2.0) as usize;
        let intervals = intervals + intervals % 2;
        Self::new(half_width, intervals + 1, trait_grid)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn n_xi(&self) -> usize {
        self.xi.len()
    }

    pub fn h_xi(&self) -> f64 {
        self.h_xi
    }

    /// Index of the node at `xi = 0`.
    pub fn center(&self) -> usize {
        self.xi.len() / 2
    }

    pub fn trait_grid(&self) -> &TraitGrid {
        &self.trait_grid
    }

    /// Index of the node closest to `xi`.
    pub fn nearest(&self, xi: f64) -> usize {
        let s = (xi + self.half_width) / self.h_xi;
        (s.round().max(0.0) as usize).min(self.n_xi() - 1)
    }
}

/// Nodal values on a (space, trait) product grid, row-major by space
/// then trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field2D {
    n_space: usize,
    n_trait: usize,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(n_space: usize, n_trait: usize) -> Self {
        Self {
            n_space,
            n_trait,
            values: vec![0.0; n_space * n_trait],
        }
    }

    pub fn zeros_on(grid: &SlabGrid) -> Self {
        Self::zeros(grid.n_xi(), grid.trait_grid().len())
    }

    pub fn from_values(n_space: usize, n_trait: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_space * n_trait {
            return Err(Error::LengthMismatch {
                expected: n_space * n_trait,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "field value at flat index {pos} is not finite"
            )));
        }
        Ok(Self {
            n_space,
            n_trait,
            values,
        })
    }

    pub fn from_fn(n_space: usize, n_trait: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_space * n_trait);
        for i in 0..n_space {
            for j in 0..n_trait {
                values.push(f(i, j));
            }
        }
        Self {
            n_space,
            n_trait,
            values,
        }
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_trait(&self) -> usize {
        self.n_trait
    }

    pub fn matches(&self, grid: &SlabGrid) -> bool {
        self.n_space == grid.n_xi() && self.n_trait == grid.trait_grid().len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_trait + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_trait + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_trait..(i + 1) * self.n_trait]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_trait..(i + 1) * self.n_trait]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Trait marginal `int f(x, theta) dtheta` at every space node.
    pub fn marginal(&self, trait_grid: &TraitGrid) -> Vec<f64> {
        debug_assert_eq!(trait_grid.len(), self.n_trait);
        (0..self.n_space)
            .map(|i| trait_grid.integrate_unchecked(self.row(i)))
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n_space: self.n_space,
            n_trait: self.n_trait,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Field2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
