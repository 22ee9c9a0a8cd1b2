//! Linear propagators: Lax–Wendroff for q_t + A q_x = 0 with Dirichlet data.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::domain::{Decomposition, DiscreteDomain};
use crate::error::{Error, Result};

pub type Trajectory = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Swe { gravity: f64, mean_depth: f64 },
    Advection { speed: f64 },
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub step: CsrMatrix<f64>,
    /// Ghost-node contribution of the boundary data, added every step.
    pub forcing: DVector<f64>,
    pub dx: f64,
    pub dt: f64,
    pub scheme_orders: (u32, u32),
    pub cfl: f64,
    pub boundary_value: f64,
}

pub fn build_swe_model(domain: &DiscreteDomain, gravity: f64, mean_depth: f64, boundary_value: f64) -> Result<LinearModel> {
    if domain.n_vars != 2 {
        return Err(Error::Config(format!("swe needs 2 interleaved variables, domain has {}", domain.n_vars)));
    }
    if !(gravity > 0.0 && mean_depth > 0.0) {
        return Err(Error::Config("gravity and mean_depth must be > 0".into()));
    }
    let a = DMatrix::from_row_slice(2, 2, &[0.0, mean_depth, gravity, 0.0]);
    let cfl = (gravity * mean_depth).sqrt() * domain.dt / domain.dx;
    lax_wendroff(domain, &a, cfl, ModelKind::Swe { gravity, mean_depth }, boundary_value)
}

pub fn build_advection_model(domain: &DiscreteDomain, speed: f64, boundary_value: f64) -> Result<LinearModel> {
    if domain.n_vars != 1 {
        return Err(Error::Config("advection needs a scalar state".into()));
    }
    let a = DMatrix::from_element(1, 1, speed);
    let cfl = speed.abs() * domain.dt / domain.dx;
    lax_wendroff(domain, &a, cfl, ModelKind::Advection { speed }, boundary_value)
}

fn lax_wendroff(domain: &DiscreteDomain, a: &DMatrix<f64>, cfl: f64, kind: ModelKind, boundary_value: f64) -> Result<LinearModel> {
    if cfl > 1.0 + 1e-12 {
        return Err(Error::CflViolation(cfl));
    }
    let nv = domain.n_vars;
    let m = domain.n_nodes();
    let nu = domain.dt / domain.dx;
    let a2 = a * a;
    let centre = DMatrix::identity(nv, nv) - &a2 * (nu * nu);
    let left = a * (nu / 2.0) + &a2 * (nu * nu / 2.0);
    let right = a * (-nu / 2.0) + &a2 * (nu * nu / 2.0);
    let mut coo = CooMatrix::new(domain.n_p, domain.n_p);
    let mut push = |node: usize, other: usize, blk: &DMatrix<f64>| {
        for r in 0..nv {
            for c in 0..nv {
                if blk[(r, c)] != 0.0 {
                    coo.push(node * nv + r, other * nv + c, blk[(r, c)]);
                }
            }
        }
    };
    for node in 0..m {
        push(node, node, &centre);
        if node > 0 {
            push(node, node - 1, &left);
        }
        if node + 1 < m {
            push(node, node + 1, &right);
        }
    }
    let ghost = DVector::from_element(nv, boundary_value);
    let mut forcing = DVector::zeros(domain.n_p);
    let fl = &left * &ghost;
    let fr = &right * &ghost;
    for r in 0..nv {
        forcing[r] += fl[r];
        forcing[(m - 1) * nv + r] += fr[r];
    }
    Ok(LinearModel {
        kind,
        step: CsrMatrix::from(&coo),
        forcing,
        dx: domain.dx,
        dt: domain.dt,
        scheme_orders: (2, 2),
        cfl,
        boundary_value,
    })
}

fn spmv(m: &CsrMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, row) in m.row_iter().enumerate() {
        out[r] = row.col_indices().iter().zip(row.values()).map(|(&c, &v)| v * x[c]).sum();
    }
}

impl LinearModel {
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.forcing.clone();
        let mut su = DVector::zeros(u.len());
        spmv(&self.step, u.as_slice(), su.as_mut_slice());
        out += su;
        out
    }

    pub fn step_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.step.nrows(), self.step.ncols());
        for (r, c, v) in self.step.triplet_iter() {
            d[(r, c)] = *v;
        }
        d
    }
}

pub fn run_background(model: &LinearModel, u0: &DVector<f64>, n: usize) -> Result<Trajectory> {
    if u0.len() != model.step.nrows() {
        return Err(Error::DimensionMismatch { expected: model.step.nrows(), got: u0.len() });
    }
    let mut traj = DMatrix::zeros(u0.len(), n);
    traj.set_column(0, u0);
    for l in 1..n {
        let next = model.apply(&traj.column(l - 1).into_owned());
        traj.set_column(l, &next);
    }
    Ok(traj)
}

/// M_k: product of the step matrices across slab k.
pub fn compose_slab(model: &LinearModel, decomp: &Decomposition, k: usize) -> DMatrix<f64> {
    let s = model.step_dense();
    let steps = decomp.slabs[k].len() - 1;
    let mut m = DMatrix::identity(s.nrows(), s.ncols());
    for _ in 0..steps {
        m = &s * m;
    }
    m
}

/// M_{i,k}: the propagator restricted to Ω_i, plus the couplings feeding b_{i,k}.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub i: usize,
    pub k: usize,
    pub indices: Vec<usize>,
    pub instants: Vec<usize>,
    pub m_ik: CsrMatrix<f64>,
    /// (local row, global column outside Ω_i, weight)
    pub couplings: Vec<(usize, usize, f64)>,
    pub forcing: DVector<f64>,
}

pub fn local_model(model: &LinearModel, decomp: &Decomposition, i: usize, k: usize) -> LocalModel {
    let indices = decomp.subdomains[i].clone();
    let (lo, hi) = (indices[0], *indices.last().unwrap());
    let n = indices.len();
    let mut coo = CooMatrix::new(n, n);
    let mut couplings = Vec::new();
    for (r, &g) in indices.iter().enumerate() {
        let row = model.step.row(g);
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if (lo..=hi).contains(&c) {
                coo.push(r, c - lo, v);
            } else {
                couplings.push((r, c, v));
            }
        }
    }
    let forcing = DVector::from_iterator(n, indices.iter().map(|&g| model.forcing[g]));
    LocalModel {
        i,
        k,
        indices,
        instants: decomp.slabs[k].clone(),
        m_ik: CsrMatrix::from(&coo),
        couplings,
        forcing,
    }
}

impl LocalModel {
    /// Dense M_{i,k} over the whole slab (product of the restricted steps).
    pub fn slab_matrix(&self) -> DMatrix<f64> {
        let n = self.indices.len();
        let mut s = DMatrix::zeros(n, n);
        for (r, c, v) in self.m_ik.triplet_iter() {
            s[(r, c)] = *v;
        }
        let mut m = DMatrix::identity(n, n);
        for _ in 1..self.instants.len() {
            m = &s * m;
        }
        m
    }
}

/// Run P^M_{i,k} from `initial`; interface values come from `traces`, a global
/// N_p × N array of which only the columns feeding Ω_i are read.
pub fn run_local_model(local: &LocalModel, initial: &DVector<f64>, traces: &DMatrix<f64>) -> Result<Trajectory> {
    let n = local.indices.len();
    if initial.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: initial.len() });
    }
    let last = *local.instants.last().unwrap();
    if let Some(&(_, g, _)) = local.couplings.iter().find(|&&(_, g, _)| g >= traces.nrows()) {
        return Err(Error::MissingTrace(format!("global node {g} absent from traces")));
    }
    if !local.couplings.is_empty() && traces.ncols() < last {
        return Err(Error::MissingTrace(format!("traces cover {} instants, need {last}", traces.ncols())));
    }
    let mut out = DMatrix::zeros(n, local.instants.len());
    out.set_column(0, initial);
    let mut buf = vec![0.0; n];
    for q in 1..local.instants.len() {
        let prev = local.instants[q - 1];
        spmv(&local.m_ik, out.column(q - 1).as_slice(), &mut buf);
        for &(r, g, v) in &local.couplings {
            buf[r] += v * traces[(g, prev)];
        }
        for r in 0..n {
            out[(r, q)] = buf[r] + local.forcing[r];
        }
    }
    Ok(out)
}

/// d'Alembert solution of the linear SWE with u(x,0) = 0, interleaved (η, u).
pub fn swe_analytic(domain: &DiscreteDomain, gravity: f64, mean_depth: f64, eta0: &dyn Fn(f64) -> f64, t: f64) -> DVector<f64> {
    let c = (gravity * mean_depth).sqrt();
    let xs = domain.nodes();
    let mut out = DVector::zeros(2 * xs.len());
    for (m, &x) in xs.iter().enumerate() {
        let (em, ep) = (eta0(x - c * t), eta0(x + c * t));
        out[2 * m] = 0.5 * (em + ep);
        out[2 * m + 1] = 0.5 * c / mean_depth * (em - ep);
    }
    out
}

pub fn advection_analytic(domain: &DiscreteDomain, speed: f64, u0: &dyn Fn(f64) -> f64, t: f64) -> DVector<f64> {
    DVector::from_iterator(domain.n_p, domain.nodes().into_iter().map(|x| u0(x - speed * t)))
}
