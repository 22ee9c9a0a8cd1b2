//! Global 4D-Var oracle and the DD-4DVAR solver (model reduction, ASM inner
//! loop with CG local solves, outer loop, gather).
//!
//! The functional is J(u) = α Σ_l ‖u_l − u^M_l‖²_{B⁻¹} + ‖H u_l − y_l‖²_{R⁻¹}
//! with u the N_p × N trajectory.  On Ω_i × Δ_k the local functional is
//!
//!   J_ik(u) = α‖u − ū_ik‖²_{B_i⁻¹} + ‖H_i u − y_ik‖²_{R⁻¹}
//!           + β Σ_j ‖u|Ω_ij − u_j|Ω_ij‖²_{B_ij⁻¹}
//!
//! where ū_ik is the local model run from the background initial values and
//! B_ij the δ × δ block of B on the overlap.  Unknowns are w with
//! u = F + V_i w, F the model-reduction first guess.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cg::{cg, CgStats};
use crate::covariance::{overlap_block, restrict_covariance, BackgroundCovariance};
use crate::domain::{gather, Decomposition};
use crate::error::{Error, Result};
use crate::model::{local_model, run_local_model, LinearModel, LocalModel};
use crate::observations::{restrict_obs, LocalObservations, ObservationOperator, ObservationSet};

type Fields = Vec<Vec<DMatrix<f64>>>;

#[derive(Debug, Clone)]
pub struct GlobalProblem {
    pub alpha: f64,
    pub cov: BackgroundCovariance,
    pub sigma_02: f64,
    pub ops: ObservationOperator,
    pub obs: ObservationSet,
    /// u^M, N_p × N
    pub background: DMatrix<f64>,
    pub model: LinearModel,
}

impl GlobalProblem {
    pub fn n_p(&self) -> usize {
        self.background.nrows()
    }

    pub fn n(&self) -> usize {
        self.background.ncols()
    }

    pub fn evaluate_j(&self, u: &DMatrix<f64>) -> f64 {
        let d = u - &self.background;
        let r = self.ops.apply(u) - &self.obs.values;
        self.alpha * self.cov.weighted_norm2(&d) + r.norm_squared() / self.sigma_02
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.cov.n_p() != self.n_p() {
            return Err(Error::DimensionMismatch { expected: self.n_p(), got: self.cov.n_p() });
        }
        if self.obs.values.shape() != (self.ops.n_obs(), self.n()) {
            return Err(Error::DimensionMismatch { expected: self.ops.n_obs() * self.n(), got: self.obs.values.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlobalAnalysis {
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub j: f64,
}

/// Direct solve of (VᵀHᵀR⁻¹HV + αI) w = VᵀHᵀR⁻¹(y − H u^M) at every instant.
pub fn solve_global_4dvar(p: &GlobalProblem) -> Result<GlobalAnalysis> {
    p.check()?;
    let hv = p.ops.h() * &p.cov.v;
    let mut a = hv.tr_mul(&hv) / p.sigma_02;
    for d in 0..a.nrows() {
        a[(d, d)] += p.alpha;
    }
    let innov = &p.obs.values - p.ops.apply(&p.background);
    let rhs = hv.tr_mul(&innov) / p.sigma_02;
    let w = a.cholesky().ok_or(Error::Singular)?.solve(&rhs);
    let u = &p.background + &p.cov.v * &w;
    let j = p.evaluate_j(&u);
    Ok(GlobalAnalysis { u, w, j })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// overlap weight β_j
    pub beta: f64,
    pub n_stop: usize,
    /// maximum ASM sweeps per outer iteration
    pub r_bar: usize,
    /// ASM stops early once max |w^{r+1} − w^r| falls below this
    pub asm_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub outer_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            n_stop: 20,
            r_bar: 60,
            asm_tol: 1e-12,
            cg_tol: 1e-8,
            cg_max_iter: 500,
            outer_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 0.0
            && self.n_stop > 0
            && self.r_bar > 0
            && self.asm_tol >= 0.0
            && self.cg_tol > 0.0
            && self.cg_tol < 1.0
            && self.cg_max_iter > 0
            && self.outer_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Overlap {
    pub j: usize,
    /// local positions of I_ij inside I_i and inside I_j
    pub pos_i: Vec<usize>,
    pub pos_j: Vec<usize>,
    pub block: Cholesky<f64, Dyn>,
    /// E_j V_j (δ × |I_j|)
    pub ev_j: DMatrix<f64>,
    /// −β (E_i V_i)ᵀ B_ij⁻¹ (|I_i| × δ)
    pub left: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Subdomain {
    pub i: usize,
    pub indices: Vec<usize>,
    /// V_i from a direct factorization of B_i
    pub v: DMatrix<f64>,
    pub overlaps: Vec<Overlap>,
    /// A_i; identical for every slab because H does not depend on the instant
    pub a: DMatrix<f64>,
    /// H_i V_i
    pub hv: DMatrix<f64>,
}

impl Subdomain {
    /// C_ij w_j: the coupling block applied to a neighbour's increment.
    pub fn couple(&self, o: &Overlap, w_j: &DMatrix<f64>) -> DMatrix<f64> {
        &o.left * (&o.ev_j * w_j)
    }

    /// Dense C_ij (|I_i| × |I_j|).
    pub fn coupling_matrix(&self, o: &Overlap) -> DMatrix<f64> {
        &o.left * &o.ev_j
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    /// 0-based slab whose local models get the shifted initial condition
    pub slab: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    pub r: usize,
    pub max_dw: f64,
    pub cg_iters: usize,
    pub cg_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub n: usize,
    pub j: f64,
    pub step: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct AssimilationState {
    pub w: Fields,
    pub u: Fields,
    /// F^n of the last outer iteration
    pub first_guess: Fields,
    /// ū_ik, local model runs from the background initial values
    pub anchor: Fields,
    /// local ASM analyses of the first outer iteration
    pub u_asm_first: Fields,
    pub field: DMatrix<f64>,
    pub max_discrepancy: f64,
    /// J(ũ^n), n = 0 is the gathered first guess
    pub j_history: Vec<f64>,
    pub outer: Vec<OuterRecord>,
    pub sweeps: Vec<SweepRecord>,
    pub converged: bool,
}

pub struct DdSolver<'a> {
    pub problem: &'a GlobalProblem,
    pub decomp: &'a Decomposition,
    pub config: SolverConfig,
    pub subs: Vec<Subdomain>,
    pub models: Vec<Vec<LocalModel>>,
    pub local_obs: Vec<Vec<LocalObservations>>,
}

impl<'a> DdSolver<'a> {
    pub fn new(problem: &'a GlobalProblem, decomp: &'a Decomposition, config: SolverConfig) -> Result<Self> {
        problem.check()?;
        config.validate()?;
        if decomp.n_p != problem.n_p() || decomp.n != problem.n() {
            return Err(Error::MismatchedInstance("decomposition and problem sizes differ".into()));
        }
        let b = &problem.cov.b;
        let local_obs: Vec<Vec<LocalObservations>> = (0..decomp.n_sub)
            .map(|i| (0..decomp.n_t).map(|k| restrict_obs(decomp, &problem.ops, &problem.obs, problem.sigma_02, i, k)).collect())
            .collect();
        let vs: Vec<DMatrix<f64>> = (0..decomp.n_sub)
            .map(|i| restrict_covariance(decomp, b, i, None).and_then(|bi| crate::covariance::factor_covariance(&bi)))
            .collect::<Result<_>>()?;
        let mut subs = Vec::with_capacity(decomp.n_sub);
        for i in 0..decomp.n_sub {
            let v = vs[i].clone();
            let n_i = v.nrows();
            let hv = &local_obs[i][0].h * &v;
            let mut a = hv.tr_mul(&hv) / problem.sigma_02;
            for d in 0..n_i {
                a[(d, d)] += problem.alpha;
            }
            let mut overlaps = Vec::new();
            for &j in &decomp.adjacency[i] {
                let pos_i = decomp.overlap_positions(i, j);
                if pos_i.is_empty() {
                    continue;
                }
                let pos_j = decomp.overlap_positions(j, i);
                let block = overlap_block(decomp, b, i, j)?.cholesky().ok_or(Error::NotSpd)?;
                let ev_i = v.select_rows(pos_i.iter());
                let ev_j = vs[j].select_rows(pos_j.iter());
                let wev_i = block.solve(&ev_i);
                a += ev_i.tr_mul(&wev_i) * config.beta;
                let left = wev_i.transpose() * -config.beta;
                overlaps.push(Overlap { j, pos_i, pos_j, block, ev_j, left });
            }
            // symmetrize away round-off from the products above
            let a = (&a + a.transpose()) * 0.5;
            subs.push(Subdomain { i, indices: decomp.subdomains[i].clone(), v, overlaps, a, hv });
        }
        let models = (0..decomp.n_sub)
            .map(|i| (0..decomp.n_t).map(|k| local_model(&problem.model, decomp, i, k)).collect())
            .collect();
        Ok(Self { problem, decomp, config, subs, models, local_obs })
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.decomp.n_sub).flat_map(|i| (0..self.decomp.n_t).map(move |k| (i, k))).collect()
    }

    fn pert(p: Option<Perturbation>, k: usize) -> f64 {
        match p {
            Some(p) if p.slab == k => p.value,
            _ => 0.0,
        }
    }

    /// Local models started from the background (+ perturbation) with background traces.
    pub fn anchors(&self, pert: Option<Perturbation>) -> Result<Fields> {
        let bg = &self.problem.background;
        self.per_subdomain(|i, k| {
            let k0 = self.decomp.slabs[k][0];
            let ic = DVector::from_iterator(self.subs[i].indices.len(), self.subs[i].indices.iter().map(|&g| bg[(g, k0)] + Self::pert(pert, k)));
            run_local_model(&self.models[i][k], &ic, bg)
        })
    }

    /// Model reduction: chained initial values from slab k−1, lagged traces from ũ^n.
    fn model_reduction(&self, u: &Fields, traces: &DMatrix<f64>, pert: Option<Perturbation>) -> Result<Fields> {
        let bg = &self.problem.background;
        self.per_subdomain(|i, k| {
            let ic = if k == 0 {
                DVector::from_iterator(self.subs[i].indices.len(), self.subs[i].indices.iter().map(|&g| bg[(g, 0)]))
            } else {
                let prev = &u[i][k - 1];
                prev.column(prev.ncols() - 1).into_owned()
            };
            let ic = ic.add_scalar(Self::pert(pert, k));
            run_local_model(&self.models[i][k], &ic, traces)
        })
    }

    fn per_subdomain<F>(&self, f: F) -> Result<Fields>
    where
        F: Fn(usize, usize) -> Result<DMatrix<f64>> + Sync,
    {
        let flat: Vec<DMatrix<f64>> = self.pairs().par_iter().map(|&(i, k)| f(i, k)).collect::<Result<_>>()?;
        Ok(self.unflatten(flat))
    }

    fn unflatten(&self, flat: Vec<DMatrix<f64>>) -> Fields {
        let mut it = flat.into_iter();
        (0..self.decomp.n_sub).map(|_| (0..self.decomp.n_t).map(|_| it.next().unwrap()).collect()).collect()
    }

    /// c_ik for first guess F and anchors ū.
    pub fn rhs_core(&self, i: usize, k: usize, f: &Fields, anchor: &Fields) -> DMatrix<f64> {
        let p = self.problem;
        let sub = &self.subs[i];
        let lo = &self.local_obs[i][k];
        let fi = &f[i][k];
        let mut c = sub.hv.tr_mul(&(&lo.y - &lo.h * fi)) / p.sigma_02;
        let z = sub.v.solve_lower_triangular(&(fi - &anchor[i][k])).expect("V_i nonsingular");
        c -= z * p.alpha;
        for o in &sub.overlaps {
            let d = fi.select_rows(o.pos_i.iter()) - f[o.j][k].select_rows(o.pos_j.iter());
            c += &o.left * d;
        }
        c
    }

    /// J_ik at physical local fields; `neighbours` follows `subs[i].overlaps`.
    pub fn local_j_at(&self, i: usize, k: usize, u: &DMatrix<f64>, neighbours: &[&DMatrix<f64>], anchor: &DMatrix<f64>) -> Result<f64> {
        let p = self.problem;
        let sub = &self.subs[i];
        if neighbours.len() != sub.overlaps.len() {
            return Err(Error::Config(format!("missing neighbour: need {}, got {}", sub.overlaps.len(), neighbours.len())));
        }
        let lo = &self.local_obs[i][k];
        let z = sub.v.solve_lower_triangular(&(u - anchor)).expect("V_i nonsingular");
        let r = &lo.h * u - &lo.y;
        let mut j = p.alpha * z.norm_squared() + r.norm_squared() / p.sigma_02;
        for (o, uj) in sub.overlaps.iter().zip(neighbours) {
            let d = u.select_rows(o.pos_i.iter()) - uj.select_rows(o.pos_j.iter());
            j += self.config.beta * d.dot(&o.block.solve(&d));
        }
        Ok(j)
    }

    /// J_ik evaluated on the current state.
    pub fn evaluate_local_j(&self, state: &AssimilationState, i: usize, k: usize) -> Result<f64> {
        let nb: Vec<&DMatrix<f64>> = self.subs[i].overlaps.iter().map(|o| &state.u[o.j][k]).collect();
        self.local_j_at(i, k, &state.u[i][k], &nb, &state.anchor[i][k])
    }

    pub fn local_problem(&self, i: usize, k: usize, f: &Fields, anchor: &Fields) -> LocalProblem<'_> {
        LocalProblem {
            solver: self,
            i,
            k,
            first_guess: f[i][k].clone(),
            neighbour_first_guess: self.subs[i].overlaps.iter().map(|o| f[o.j][k].clone()).collect(),
            anchor: anchor[i][k].clone(),
            c: self.rhs_core(i, k, f, anchor),
        }
    }

    /// ½∇_w J_ik at the current state.
    pub fn local_gradient(&self, state: &AssimilationState, i: usize, k: usize) -> DMatrix<f64> {
        let lp = self.local_problem(i, k, &state.first_guess, &state.anchor);
        let wn: Vec<&DMatrix<f64>> = self.subs[i].overlaps.iter().map(|o| &state.w[o.j][k]).collect();
        lp.gradient(&state.w[i][k], &wn)
    }

    /// One additive-Schwarz sweep: every (i,k) solves A_i w = c_ik − Σ_j C_ij w_j^r.
    pub fn asm_sweep(&self, c: &Fields, w: &Fields) -> Result<(Fields, CgStats)> {
        let results: Vec<(DMatrix<f64>, CgStats)> = self
            .pairs()
            .par_iter()
            .map(|&(i, k)| {
                let sub = &self.subs[i];
                let mut rhs = c[i][k].clone();
                for o in &sub.overlaps {
                    rhs -= sub.couple(o, &w[o.j][k]);
                }
                cg(&sub.a, &rhs, &w[i][k], self.config.cg_tol, self.config.cg_max_iter)
            })
            .collect::<Result<_>>()?;
        let mut stats = CgStats::default();
        let flat = results
            .into_iter()
            .map(|(x, s)| {
                stats.iters = stats.iters.max(s.iters);
                stats.residual = stats.residual.max(s.residual);
                x
            })
            .collect();
        Ok((self.unflatten(flat), stats))
    }

    /// Run the outer loop to `outer_tol` or `n_stop`.
    pub fn solve(&self, pert: Option<Perturbation>) -> Result<AssimilationState> {
        let anchor = self.anchors(pert)?;
        let mut f = anchor.clone();
        let g0 = gather(self.decomp, &f)?;
        let mut field = g0.field;
        let mut state = AssimilationState {
            w: Vec::new(),
            u: f.clone(),
            first_guess: f.clone(),
            anchor: anchor.clone(),
            u_asm_first: Vec::new(),
            j_history: vec![self.problem.evaluate_j(&field)],
            field: field.clone(),
            max_discrepancy: g0.max_discrepancy,
            outer: Vec::new(),
            sweeps: Vec::new(),
            converged: false,
        };
        for n in 0..self.config.n_stop {
            if n > 0 {
                f = self.model_reduction(&state.u, &field, pert)?;
            }
            let c = self.per_subdomain(|i, k| Ok(self.rhs_core(i, k, &f, &anchor)))?;
            let mut w: Fields = f.iter().map(|row| row.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect()).collect();
            let mut sweeps = 0;
            for r in 0..self.config.r_bar {
                let (nw, st) = self.asm_sweep(&c, &w)?;
                let max_dw = nw
                    .iter()
                    .flatten()
                    .zip(w.iter().flatten())
                    .map(|(a, b)| (a - b).amax())
                    .fold(0.0, f64::max);
                w = nw;
                sweeps += 1;
                state.sweeps.push(SweepRecord { n, r, max_dw, cg_iters: st.iters, cg_residual: st.residual });
                if max_dw < self.config.asm_tol {
                    break;
                }
            }
            let u: Fields = (0..self.decomp.n_sub)
                .map(|i| (0..self.decomp.n_t).map(|k| &f[i][k] + &self.subs[i].v * &w[i][k]).collect())
                .collect();
            let g = gather(self.decomp, &u)?;
            let step = (&g.field - &field).norm();
            field = g.field;
            let j = self.problem.evaluate_j(&field);
            state.j_history.push(j);
            state.outer.push(OuterRecord { n, j, step, sweeps });
            if n == 0 {
                state.u_asm_first = u.clone();
            }
            state.u = u;
            state.w = w;
            state.first_guess = f.clone();
            state.field = field.clone();
            state.max_discrepancy = g.max_discrepancy;
            if step < self.config.outer_tol {
                state.converged = true;
                break;
            }
        }
        Ok(state)
    }
}

pub fn solve_dd4dvar(problem: &GlobalProblem, decomp: &Decomposition, config: &SolverConfig) -> Result<AssimilationState> {
    DdSolver::new(problem, decomp, config.clone())?.solve(None)
}

/// The quadratic local problem of one (i, k) with its first guesses frozen.
pub struct LocalProblem<'s> {
    solver: &'s DdSolver<'s>,
    pub i: usize,
    pub k: usize,
    pub first_guess: DMatrix<f64>,
    pub neighbour_first_guess: Vec<DMatrix<f64>>,
    pub anchor: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LocalProblem<'_> {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.solver.subs[self.i].a
    }

    /// J_ik as a function of the increments.
    pub fn j_of_w(&self, w: &DMatrix<f64>, wn: &[&DMatrix<f64>]) -> Result<f64> {
        let sub = &self.solver.subs[self.i];
        let u = &self.first_guess + &sub.v * w;
        let un: Vec<DMatrix<f64>> = sub
            .overlaps
            .iter()
            .zip(&self.neighbour_first_guess)
            .zip(wn)
            .map(|((o, fj), wj)| fj + &self.solver.subs[o.j].v * *wj)
            .collect();
        let refs: Vec<&DMatrix<f64>> = un.iter().collect();
        self.solver.local_j_at(self.i, self.k, &u, &refs, &self.anchor)
    }

    /// ½∇_w J_ik = A_i w − c_ik + Σ_j C_ij w_j.
    pub fn gradient(&self, w: &DMatrix<f64>, wn: &[&DMatrix<f64>]) -> DMatrix<f64> {
        let sub = &self.solver.subs[self.i];
        let mut g = &sub.a * w - &self.c;
        for (o, wj) in sub.overlaps.iter().zip(wn) {
            g += sub.couple(o, wj);
        }
        g
    }
}
