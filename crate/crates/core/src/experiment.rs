//! Twin experiment: truth, background and synthetic observations built from a config.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::assimilation::{DdSolver, GlobalProblem, SolverConfig};
use crate::config::{ExperimentConfig, ModelKindConfig, TruthSource};
use crate::covariance::BackgroundCovariance;
use crate::domain::{build_stacked_domain, decompose, Decomposition, DiscreteDomain};
use crate::error::Result;
use crate::model::{advection_analytic, build_advection_model, build_swe_model, run_background, swe_analytic, LinearModel, ModelKind};
use crate::observations::{build_interpolation, synthesize_observations, uniform_locations};

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub domain: DiscreteDomain,
    pub decomp: Decomposition,
    pub problem: GlobalProblem,
    pub truth: DMatrix<f64>,
}

fn exact_state(domain: &DiscreteDomain, model: &LinearModel, f: &dyn Fn(f64) -> f64, t: f64) -> DVector<f64> {
    match model.kind {
        ModelKind::Swe { gravity, mean_depth } => swe_analytic(domain, gravity, mean_depth, f, t),
        ModelKind::Advection { speed } => advection_analytic(domain, speed, f, t),
    }
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let domain = build_stacked_domain(c.domain.x_min, c.domain.x_max, c.domain.t_min, c.domain.t_max, c.domain.n_p, c.domain.n, c.n_vars())?;
        let decomp = decompose(&domain, c.decomposition.n_sub, c.decomposition.n_t, c.decomposition.delta)?;
        let model = match c.model.kind {
            ModelKindConfig::Swe => build_swe_model(&domain, c.model.gravity, c.model.mean_depth, c.model.boundary_value)?,
            ModelKindConfig::Advection => build_advection_model(&domain, c.model.speed, c.model.boundary_value)?,
        };
        let (x0, w) = (c.truth.bump_center, c.truth.bump_width);
        let eps = c.truth.background_error;
        let len = c.domain.x_max - c.domain.x_min;
        let bump = move |x: f64| (-((x - x0) / w).powi(2)).exp();
        let bg_bump = move |x: f64| {
            let s = (x - c.domain.x_min) / len;
            bump(x) + eps * (2.0 * PI * s).sin() * (-((s - 0.5) / 0.2).powi(2)).exp()
        };
        let truth = match c.truth.source {
            TruthSource::Model => run_background(&model, &exact_state(&domain, &model, &bump, 0.0), domain.n)?,
            TruthSource::Analytic => {
                let ts = domain.times();
                let mut t = DMatrix::zeros(domain.n_p, domain.n);
                for (l, &tl) in ts.iter().enumerate() {
                    t.set_column(l, &exact_state(&domain, &model, &bump, tl - c.domain.t_min));
                }
                t
            }
        };
        let background = run_background(&model, &exact_state(&domain, &model, &bg_bump, 0.0), domain.n)?;
        let mut locations = uniform_locations(&domain, c.observations.n_obs);
        locations.extend_from_slice(&c.observations.extra_locations);
        let ops = build_interpolation(&domain, &locations, c.observations.observed_var)?;
        let sigma_0 = if c.observations.noise { c.observations.sigma_02.sqrt() } else { 0.0 };
        let obs = synthesize_observations(&truth, &ops, sigma_0, c.observations.seed)?;
        let cov = BackgroundCovariance::gaussian(domain.n_p, c.covariance.correlation_dx, c.covariance.sigma_m2)?;
        let problem = GlobalProblem { alpha: c.solver.alpha, cov, sigma_02: c.observations.sigma_02, ops, obs, background, model };
        Ok(Self { config: config.clone(), domain, decomp, problem, truth })
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.config.solver.solver_config()
    }

    pub fn solver(&self) -> Result<DdSolver<'_>> {
        DdSolver::new(&self.problem, &self.decomp, self.solver_config())
    }
}
