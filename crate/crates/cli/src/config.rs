use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toadwave_core::analysis::{InterpolationSuiteConfig, INTERPOLATION_C_ORACLE};
use toadwave_core::grid::make_trait_grid;
use toadwave_core::{EvolutionConfig, ModelParams, SpeedSearch, TraitGrid};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub alpha: f64,
    pub r: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            r: 1.0,
            theta_min: 1.0,
            theta_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub tau: f64,
    pub n_theta: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol: f64,
    pub n_scan: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        let s = SpeedSearch::default();
        Self {
            tau: 1.0,
            n_theta: 400,
            lambda_lo: s.lambda_lo,
            lambda_hi: s.lambda_hi,
            tol: s.tol,
            n_scan: s.n_scan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlabSection {
    pub a_list: Vec<f64>,
    pub tau: f64,
    pub epsilon: f64,
    pub n_xi_per_unit: f64,
    pub n_theta: usize,
}

impl Default for SlabSection {
    fn default() -> Self {
        Self {
            a_list: vec![20.0, 40.0, 80.0],
            tau: 1.0,
            epsilon: 0.01,
            n_xi_per_unit: 10.0,
            n_theta: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub n_theta: usize,
    pub dt: f64,
    pub t_end: f64,
    pub initial_mass_width: f64,
    pub thresholds: Vec<f64>,
    pub record_every: f64,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 250.0,
            n_x: 2501,
            n_theta: 21,
            dt: 0.01,
            t_end: 80.0,
            initial_mass_width: 5.0,
            thresholds: vec![0.1, 0.01, 0.001],
            record_every: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub seed: u64,
    pub n_polys: usize,
    pub k_max: usize,
    pub pairs_per_poly: usize,
    pub constant: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let s = InterpolationSuiteConfig::default();
        Self {
            seed: s.seed,
            n_polys: s.n_polys,
            k_max: s.k_max,
            pairs_per_poly: s.pairs_per_poly,
            constant: INTERPOLATION_C_ORACLE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Check ids whose outcome is inverted. A test fixture for the
    /// reporting path.
    pub inject_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    pub spectral: SpectralSection,
    pub slab: SlabSection,
    pub evolution: EvolutionSection,
    pub analysis: AnalysisSection,
    pub verify: VerifySection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsSection::default(),
            spectral: SpectralSection::default(),
            slab: SlabSection::default(),
            evolution: EvolutionSection::default(),
            analysis: AnalysisSection::default(),
            verify: VerifySection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be positive (got {v})"
        )))
    }
}

fn tau_in_range(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must lie in [0, 1] (got {v})"
        )))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = &self.params;
        positive("params.alpha", p.alpha)?;
        // r = 0 is the conservative regime, meaningful for `evolve` only
        if !(p.r >= 0.0 && p.r.is_finite()) {
            return Err(CliError::Config(format!(
                "params.r must be nonnegative (got {})",
                p.r
            )));
        }
        positive("params.theta_min", p.theta_min)?;
        positive("params.theta_max", p.theta_max)?;
        if p.theta_min >= p.theta_max {
            return Err(CliError::Config(format!(
                "params.theta_min must be below params.theta_max (got {} >= {})",
                p.theta_min, p.theta_max
            )));
        }

        let s = &self.spectral;
        tau_in_range("spectral.tau", s.tau)?;
        positive("spectral.lambda_lo", s.lambda_lo)?;
        positive("spectral.tol", s.tol)?;
        if s.lambda_hi <= s.lambda_lo {
            return Err(CliError::Config(format!(
                "spectral.lambda_hi must exceed spectral.lambda_lo (got {} <= {})",
                s.lambda_hi, s.lambda_lo
            )));
        }
        if s.n_theta < 3 {
            return Err(CliError::Config(
                "spectral.n_theta must be at least 3".into(),
            ));
        }

        let sl = &self.slab;
        tau_in_range("slab.tau", sl.tau)?;
        if !(sl.epsilon > 0.0 && sl.epsilon < 0.1) {
            return Err(CliError::Config(format!(
                "slab.epsilon must lie in (0, 0.1) (got {})",
                sl.epsilon
            )));
        }
        positive("slab.n_xi_per_unit", sl.n_xi_per_unit)?;
        if sl.a_list.is_empty() {
            return Err(CliError::Config("slab.a_list must not be empty".into()));
        }
        for &a in &sl.a_list {
            positive("slab.a_list entry", a)?;
        }
        if sl.a_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config(
                "slab.a_list must be strictly increasing".into(),
            ));
        }
        if sl.n_theta < 3 {
            return Err(CliError::Config("slab.n_theta must be at least 3".into()));
        }

        let e = &self.evolution;
        if e.n_theta < 3 {
            return Err(CliError::Config(
                "evolution.n_theta must be at least 3".into(),
            ));
        }
        self.evolution_config()?
            .validate(None)
            .map_err(|err| CliError::Config(format!("evolution: {err}")))?;

        let an = &self.analysis;
        positive("analysis.constant", an.constant)?;
        if an.n_polys == 0 {
            return Err(CliError::Config("analysis.n_polys must be positive".into()));
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            alpha: self.params.alpha,
            r: self.params.r,
        }
    }

    pub fn trait_grid(&self, n_nodes: usize) -> CliResult<TraitGrid> {
        make_trait_grid(self.params.theta_min, self.params.theta_max, n_nodes)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn speed_search(&self) -> SpeedSearch {
        SpeedSearch {
            lambda_lo: self.spectral.lambda_lo,
            lambda_hi: self.spectral.lambda_hi,
            tol: self.spectral.tol,
            n_scan: self.spectral.n_scan,
        }
    }

    pub fn evolution_config(&self) -> CliResult<EvolutionConfig> {
        let e = &self.evolution;
        Ok(EvolutionConfig {
            x_min: e.x_min,
            x_max: e.x_max,
            n_x: e.n_x,
            trait_grid: self.trait_grid(e.n_theta)?,
            alpha: self.params.alpha,
            r: self.params.r,
            dt: e.dt,
            t_end: e.t_end,
            initial_mass_width: e.initial_mass_width,
            thresholds: e.thresholds.clone(),
            record_every: e.record_every,
        })
    }

    pub fn interpolation_suite(&self) -> InterpolationSuiteConfig {
        let a = &self.analysis;
        InterpolationSuiteConfig {
            seed: a.seed,
            n_polys: a.n_polys,
            k_max: a.k_max,
            pairs_per_poly: a.pairs_per_poly,
            period: self.params.theta_max - self.params.theta_min,
            constant: a.constant,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"params": {"r": 2.0}}"#).unwrap();
        assert_eq!(c.params.r, 2.0);
        assert_eq!(c.params.theta_max, 2.0);
        assert_eq!(c.slab, SlabSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"parms": {}}"#).is_err());
    }

    #[test]
    fn violations_name_the_field() {
        let mut c = RunConfig::default();
        c.params.theta_min = 0.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("params.theta_min"), "{msg}");

        let mut c = RunConfig::default();
        c.slab.epsilon = 0.2;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("slab.epsilon"));

        let mut c = RunConfig::default();
        c.params.theta_max = 0.5;
        assert!(c.validate().unwrap_err().to_string().contains("theta_max"));
    }
}
