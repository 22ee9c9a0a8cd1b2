//! Conjugate gradients for SPD systems with several right-hand sides.
//!
//! Each column runs its own CG recurrence; only the products with A are
//! batched so a slab's instants share one dense multiply per iteration.
//! A column stops once ‖r‖ ≤ tol·‖r₀‖ (r₀ from the warm start) or the
//! residual reaches round-off relative to ‖b‖.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CgStats {
    pub iters: usize,
    /// worst relative residual ‖b − Ax‖/‖b‖ over the columns
    pub residual: f64,
}

pub fn cg(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(DMatrix<f64>, CgStats)> {
    let ncol = b.ncols();
    let mut x = x0.clone();
    let mut r = b - a * &x;
    let bnorm: Vec<f64> = (0..ncol).map(|j| b.column(j).norm()).collect();
    let mut rs: Vec<f64> = (0..ncol).map(|j| r.column(j).norm_squared()).collect();
    let r0: Vec<f64> = rs.iter().map(|x| x.sqrt()).collect();
    let done = |j: usize, rs: f64| {
        let r = rs.sqrt();
        r <= tol * r0[j] || r <= 1e-15 * bnorm[j] || rs == 0.0
    };
    let mut active: Vec<bool> = (0..ncol).map(|j| rs[j] > 0.0 && r0[j] > 1e-15 * bnorm[j]).collect();
    let mut p = r.clone();
    for j in 0..ncol {
        if !active[j] {
            p.column_mut(j).fill(0.0);
        }
    }
    let mut iters = 0;
    while active.iter().any(|&x| x) && iters < max_iter {
        let ap = a * &p;
        for j in 0..ncol {
            if !active[j] {
                continue;
            }
            let pap = p.column(j).dot(&ap.column(j));
            if pap <= 0.0 {
                return Err(Error::NotSpd);
            }
            let alpha = rs[j] / pap;
            x.column_mut(j).axpy(alpha, &p.column(j), 1.0);
            r.column_mut(j).axpy(-alpha, &ap.column(j), 1.0);
            let new = r.column(j).norm_squared();
            if done(j, new) {
                active[j] = false;
                p.column_mut(j).fill(0.0);
            } else {
                let beta = new / rs[j];
                let rj = r.column(j).into_owned();
                let mut pj = p.column_mut(j);
                pj *= beta;
                pj += rj;
            }
            rs[j] = new;
        }
        iters += 1;
    }
    let residual = (0..ncol)
        .map(|j| if bnorm[j] > 0.0 { rs[j].sqrt() / bnorm[j] } else { rs[j].sqrt() })
        .fold(0.0, f64::max);
    if active.iter().any(|&x| x) {
        return Err(Error::CgNoConvergence { residual, iters });
    }
    Ok((x, CgStats { iters, residual }))
}
