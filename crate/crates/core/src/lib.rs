//! Numerical laboratory for travelling waves of the trait-structured
//! cane-toad invasion model
//!
//! ```text
//! n_t - theta n_xx - alpha n_thetatheta = r n (1 - rho),   rho = int n dtheta,
//! ```
//!
//! posed on a bounded trait interval with Neumann conditions. The crate
//! computes the minimal speed from the trait eigenproblem, solves the
//! travelling-wave problem on a bounded slab, integrates the
//! time-dependent model and measures the quantitative properties of the
//! resulting waves.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod linalg;
pub mod slab;
pub mod spectral;

pub use analysis::{HarnackReport, TrigPolynomial, WaveLimitReport};
pub use error::{Error, Result};
pub use evolution::{EvolutionConfig, FrontTrace, SimulationResult};
pub use grid::{Field2D, SlabGrid, TraitGrid};
pub use slab::{Advection, KppSlabSolution, SlabSettings, SlabSolution};
pub use spectral::{MinSpeedResult, ModelParams, SpectralSolution, SpeedSearch};
