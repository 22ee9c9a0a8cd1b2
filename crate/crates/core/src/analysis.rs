//! Error analysis: truncation errors, consistency and stability sweeps,
//! condition numbers and the minimum-equality check.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::assimilation::{solve_global_4dvar, AssimilationState, DdSolver, GlobalAnalysis, GlobalProblem, Perturbation};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::Experiment;

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    /// ‖reference − local model run‖ on Ω_i × Δ_k, indexed [i][k]
    pub e_model: Vec<Vec<f64>>,
    /// ‖u^DA − first-pass ASM analysis‖
    pub e_asm: Vec<Vec<f64>>,
    /// ‖u^DA − u_ik‖
    pub e_ik: Vec<Vec<f64>>,
    /// ‖u^DA − ũ^DD‖
    pub e_g: f64,
}

fn block_norm(global: &DMatrix<f64>, rows: &[usize], cols: &[usize], local: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for (a, &g) in rows.iter().enumerate() {
        for (b, &l) in cols.iter().enumerate() {
            s += (global[(g, l)] - local[(a, b)]).powi(2);
        }
    }
    s.sqrt()
}

pub fn compute_truncation_errors(
    oracle: &GlobalAnalysis,
    solver: &DdSolver,
    state: &AssimilationState,
    fine_truth: &DMatrix<f64>,
) -> Result<TruncationReport> {
    let shape = solver.problem.background.shape();
    if oracle.u.shape() != shape || state.field.shape() != shape || fine_truth.shape() != shape {
        return Err(Error::MismatchedInstance(format!("expected {shape:?} fields")));
    }
    let dec = solver.decomp;
    let per = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..dec.n_sub).map(|i| (0..dec.n_t).map(|k| f(i, k)).collect()).collect()
    };
    let e_model = per(&|i, k| block_norm(fine_truth, &dec.subdomains[i], &dec.slabs[k], &state.anchor[i][k]));
    let e_asm = per(&|i, k| block_norm(&oracle.u, &dec.subdomains[i], &dec.slabs[k], &state.u_asm_first[i][k]));
    let e_ik = per(&|i, k| block_norm(&oracle.u, &dec.subdomains[i], &dec.slabs[k], &state.u[i][k]));
    Ok(TruncationReport { e_model, e_asm, e_ik, e_g: (&oracle.u - &state.field).norm() })
}

#[derive(Debug, Clone, Serialize)]
pub struct EqualityReport {
    pub j_da: f64,
    pub j_dd: f64,
    pub relative_gap: f64,
    /// ‖u^DA − ũ^DD‖₂
    pub e_p: f64,
    pub relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn verify_minimum_equality(problem: &GlobalProblem, oracle: &GlobalAnalysis, state: &AssimilationState, tolerance: f64) -> EqualityReport {
    let j_dd = problem.evaluate_j(&state.field);
    let relative_gap = (oracle.j - j_dd).abs() / oracle.j.abs().max(f64::MIN_POSITIVE);
    let e_p = (&oracle.u - &state.field).norm();
    EqualityReport {
        j_da: oracle.j,
        j_dd,
        relative_gap,
        e_p,
        relative_error: e_p / oracle.u.norm().max(f64::MIN_POSITIVE),
        tolerance,
        pass: relative_gap <= tolerance,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRow {
    pub d: usize,
    pub n_p: usize,
    pub n: usize,
    pub dx: f64,
    pub dt: f64,
    /// dx(d=1)/dx(d); equals d up to the rounding forced by divisibility
    pub refinement: f64,
    pub e_p: f64,
    pub e_p_pred: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    /// fitted order p in e_p ∝ refinement^{−p}; None with fewer than two rows
    pub order: Option<f64>,
}

/// Config with Δx/d, Δt/d. The node count is moved to the nearest value the
/// decomposition accepts, so the spatial ratio can differ slightly from d.
pub fn refine(base: &ExperimentConfig, d: usize) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    let nv = base.n_vars();
    let nodes = base.domain.n_p / nv;
    let target = d * (nodes + 1) - 1;
    let legal = |m: usize| m >= 1 && (m * nv) % base.decomposition.n_sub == 0;
    let m = (0..=target)
        .flat_map(|k| [target + k, target.wrapping_sub(k)])
        .find(|&m| m <= 2 * target && legal(m))
        .ok_or_else(|| Error::Indivisible(format!("no legal grid near {target} nodes")))?;
    c.domain.n_p = m * nv;
    c.domain.n = d * (base.domain.n - 1) + 1;
    Ok(c)
}

/// Least-squares order p of e ∝ r^{−p}.
pub fn fit_order(refinement: &[f64], e: &[f64]) -> Option<f64> {
    if refinement.len() < 2 || e.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = refinement.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(-sxy / sxx)
}

/// One point of the consistency sweep: e_p = ‖u^DA − ũ^DD‖₂ on the refined grid.
pub fn consistency_point(cfg: &ExperimentConfig) -> Result<(Experiment, f64)> {
    let exp = Experiment::build(cfg)?;
    let oracle = solve_global_4dvar(&exp.problem)?;
    let state = exp.solver()?.solve(None)?;
    let e_p = (&oracle.u - &state.field).norm();
    Ok((exp, e_p))
}

pub fn consistency_sweep(base: &ExperimentConfig, d_values: &[usize]) -> Result<ConsistencyReport> {
    if d_values.is_empty() || d_values.iter().any(|&d| d == 0) {
        return Err(Error::Config("d values must be a non-empty list of integers >= 1".into()));
    }
    let base_dx = (base.domain.x_max - base.domain.x_min) / (base.domain.n_p / base.n_vars() + 1) as f64;
    let points: Vec<(usize, Experiment, f64)> = d_values
        .par_iter()
        .map(|&d| consistency_point(&refine(base, d)?).map(|(e, p)| (d, e, p)))
        .collect::<Result<_>>()?;
    let first = points[0].2;
    let d_first = points[0].0 as f64;
    let rows: Vec<ConsistencyRow> = points
        .iter()
        .map(|(d, exp, e_p)| ConsistencyRow {
            d: *d,
            n_p: exp.domain.n_p,
            n: exp.domain.n,
            dx: exp.domain.dx,
            dt: exp.domain.dt,
            refinement: base_dx / exp.domain.dx,
            e_p: *e_p,
            e_p_pred: first * (d_first / *d as f64).powi(2),
        })
        .collect();
    let order = fit_order(&rows.iter().map(|r| r.refinement).collect::<Vec<_>>(), &rows.iter().map(|r| r.e_p).collect::<Vec<_>>());
    Ok(ConsistencyReport { rows, order })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub e_bar_k: f64,
    pub big_e_bar_k: f64,
    pub c_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// 1-based
    pub slab: usize,
    pub rows: Vec<StabilityRow>,
    pub max_c_k: f64,
}

/// `slab` is 0-based. Ē_k = ‖ũ|Δ_k − ṽ|Δ_k‖₂ between the unperturbed run and
/// the run whose local models on slab k start from initial values shifted by ē.
pub fn stability_sweep(exp: &Experiment, perturbations: &[f64], slab: usize) -> Result<StabilityReport> {
    if perturbations.is_empty() {
        return Err(Error::Config("perturbation list is empty".into()));
    }
    if perturbations.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
        return Err(Error::Config("perturbations must be finite and >= 0".into()));
    }
    if slab >= exp.decomp.n_t {
        return Err(Error::Config(format!("slab {} out of range", slab + 1)));
    }
    let solver = exp.solver()?;
    let base = solver.solve(None)?.field;
    let cols = &exp.decomp.slabs[slab];
    let rows: Vec<StabilityRow> = perturbations
        .par_iter()
        .map(|&e| {
            let v = solver.solve(Some(Perturbation { slab, value: e }))?.field;
            let diff = (&base - &v).select_columns(cols.iter()).norm();
            Ok(StabilityRow { e_bar_k: e, big_e_bar_k: diff, c_k: if e > 0.0 { diff / e } else { 0.0 } })
        })
        .collect::<Result<_>>()?;
    let max_c_k = rows.iter().map(|r| r.c_k).fold(0.0, f64::max);
    Ok(StabilityReport { slab: slab + 1, rows, max_c_k })
}

/// σ_max / σ_min over the nonzero singular values.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::ZeroMatrix("empty matrix".into()));
    }
    let s = m.singular_values();
    let max = s.max();
    if !(max > 0.0) {
        return Err(Error::ZeroMatrix("all singular values vanish".into()));
    }
    let floor = max * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    let min = s.iter().copied().filter(|&x| x > floor).fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// μ^DD = [1 + σ_0⁻² μ²(V_i) μ²(G_ik) + ad_i μ²(V_ij)] · μ(M_ik)
pub fn composite_mu(mu_v: f64, mu_g: f64, mu_m: f64, mu_vij: f64, ad: usize, sigma_02: f64) -> f64 {
    (1.0 + mu_v * mu_v * mu_g * mu_g / sigma_02 + ad as f64 * mu_vij * mu_vij) * mu_m
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    /// 1-based
    pub i: usize,
    pub k: usize,
    pub ad: usize,
    pub mu_v_i: f64,
    pub mu_g_ik: f64,
    pub mu_m_ik: f64,
    pub mu_v_ij: f64,
    pub mu_dd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    /// μ̄_k = max_i μ^DD_ik
    pub mu_bar: Vec<f64>,
}

pub fn condition_numbers(solver: &DdSolver) -> Result<ConditionReport> {
    let dec = solver.decomp;
    let mut rows = Vec::new();
    for (i, sub) in solver.subs.iter().enumerate() {
        let mu_v = condition_number(&sub.v)?;
        // with δ = 0 there is no overlap operator, so its term drops out
        let ad = sub.overlaps.len();
        let mu_vij = sub.overlaps.iter().map(|o| condition_number(&o.block.l())).collect::<Result<Vec<_>>>()?.into_iter().fold(1.0, f64::max);
        for k in 0..dec.n_t {
            let g = solver.local_obs[i][k].g_ik();
            let mu_g = condition_number(&g).map_err(|_| Error::ZeroMatrix(format!("G_{{{},{}}} has no observations", i + 1, k + 1)))?;
            let mu_m = condition_number(&solver.models[i][k].slab_matrix())?;
            rows.push(ConditionRow {
                i: i + 1,
                k: k + 1,
                ad,
                mu_v_i: mu_v,
                mu_g_ik: mu_g,
                mu_m_ik: mu_m,
                mu_v_ij: mu_vij,
                mu_dd: composite_mu(mu_v, mu_g, mu_m, mu_vij, ad, solver.problem.sigma_02),
            });
        }
    }
    let mu_bar = (1..=dec.n_t).map(|k| rows.iter().filter(|r| r.k == k).map(|r| r.mu_dd).fold(0.0, f64::max)).collect();
    Ok(ConditionReport { rows, mu_bar })
}
