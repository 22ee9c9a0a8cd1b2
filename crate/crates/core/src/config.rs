//! Experiment manifest (TOML). Every block has defaults reproducing the
//! shallow-water setup of the reference experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assimilation::SolverConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub decomposition: DecompositionConfig,
    pub model: ModelConfig,
    pub truth: TruthConfig,
    pub observations: ObservationConfig,
    pub covariance: CovarianceConfig,
    pub solver: SolverSection,
    pub consistency: ConsistencyConfig,
    pub stability: StabilityConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// state length (both SWE variables counted)
    pub n_p: usize,
    pub n: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { x_min: 0.0, x_max: 1.0, t_min: 0.0, t_max: 1.5, n_p: 640, n: 9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    pub n_sub: usize,
    pub n_t: usize,
    pub delta: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { n_sub: 4, n_t: 4, delta: 2 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindConfig {
    Swe,
    Advection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    pub gravity: f64,
    pub mean_depth: f64,
    /// advection speed
    pub speed: f64,
    pub boundary_value: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKindConfig::Swe, gravity: 0.008, mean_depth: 0.008, speed: 0.5, boundary_value: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TruthSource {
    /// discrete model run from the exact initial condition
    Model,
    /// closed-form solution of the continuous problem
    Analytic,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub source: TruthSource,
    pub bump_center: f64,
    pub bump_width: f64,
    /// amplitude of the initial-condition error of the background
    pub background_error: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { source: TruthSource::Model, bump_center: 0.5, bump_width: 0.05, background_error: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_obs: usize,
    pub sigma_02: f64,
    pub seed: u64,
    /// add Gaussian noise of variance sigma_02 to the synthetic observations
    pub noise: bool,
    /// observed variable within an interleaved state (0 = surface elevation)
    pub observed_var: usize,
    /// locations appended to the uniform network
    pub extra_locations: Vec<f64>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { n_obs: 64, sigma_02: 0.5, seed: 20130101, noise: true, observed_var: 0, extra_locations: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub sigma_m2: f64,
    /// step used in ρ = exp(−Δ²/2); 1.0 means correlation measured in index units
    pub correlation_dx: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self { sigma_m2: 0.5, correlation_dx: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub alpha: f64,
    pub beta: f64,
    pub n_stop: usize,
    pub r_bar: usize,
    pub asm_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub outer_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            alpha: 1.0,
            beta: s.beta,
            n_stop: s.n_stop,
            r_bar: s.r_bar,
            asm_tol: s.asm_tol,
            cg_tol: s.cg_tol,
            cg_max_iter: s.cg_max_iter,
            outer_tol: s.outer_tol,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            beta: self.beta,
            n_stop: self.n_stop,
            r_bar: self.r_bar,
            asm_tol: self.asm_tol,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
            outer_tol: self.outer_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub d_list: Vec<usize>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { d_list: vec![1, 2, 4] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// 1-based slab receiving the perturbation
    pub slab: usize,
    pub perturbations: Vec<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { slab: 2, perturbations: vec![3.03e-6, 3.03e-5, 3.03e-4, 3.03e-3] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: "out".into() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_vars(&self) -> usize {
        match self.model.kind {
            ModelKindConfig::Swe => 2,
            ModelKindConfig::Advection => 1,
        }
    }

    /// Cheap checks; module preconditions are re-checked when the experiment is built.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.observations.observed_var >= self.n_vars() {
            return bad("observed_var exceeds the number of state variables");
        }
        if !(self.observations.sigma_02 > 0.0) || !(self.covariance.sigma_m2 > 0.0) {
            return bad("variances must be > 0");
        }
        if !(self.covariance.correlation_dx > 0.0) {
            return bad("correlation_dx must be > 0");
        }
        if !(self.truth.bump_width > 0.0) {
            return bad("bump_width must be > 0");
        }
        if self.observations.n_obs + self.observations.extra_locations.len() >= self.domain.n_p {
            return bad("need n_obs < n_p");
        }
        if self.stability.slab == 0 {
            return bad("stability.slab is 1-based");
        }
        if self.consistency.d_list.iter().any(|&d| d == 0) {
            return bad("refinement factors must be >= 1");
        }
        self.solver.solver_config().validate()
    }
}
