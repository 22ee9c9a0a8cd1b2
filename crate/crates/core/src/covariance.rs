use nalgebra::{DMatrix, DVector};

use crate::domain::Decomposition;
use crate::error::{Error, Result};

/// Gaussian correlation c_ij = ρ^{|i−j|²}, ρ = exp(−dx²/2), cut off at |i−j| ≥ n_p/2.
pub fn build_gaussian_correlation(n_p: usize, dx: f64) -> DMatrix<f64> {
    let rho = (-dx * dx / 2.0).exp();
    DMatrix::from_fn(n_p, n_p, |i, j| {
        let d = i.abs_diff(j);
        if 2 * d < n_p {
            rho.powi((d * d) as i32)
        } else {
            0.0
        }
    })
}

/// Lower-triangular V with V Vᵀ = B.
pub fn factor_covariance(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    b.clone().cholesky().map(|c| c.l()).ok_or(Error::NotSpd)
}

#[derive(Debug, Clone)]
pub struct BackgroundCovariance {
    pub sigma_m2: f64,
    pub c: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl BackgroundCovariance {
    /// `correlation_dx` is the step fed to ρ; see README for why it is in index units.
    pub fn gaussian(n_p: usize, correlation_dx: f64, sigma_m2: f64) -> Result<Self> {
        let c = build_gaussian_correlation(n_p, correlation_dx);
        let b = &c * sigma_m2;
        let v = factor_covariance(&b)?;
        Ok(Self { sigma_m2, c, b, v })
    }

    pub fn n_p(&self) -> usize {
        self.b.nrows()
    }

    /// ‖x‖²_{B⁻¹} for each column, summed.
    pub fn weighted_norm2(&self, x: &DMatrix<f64>) -> f64 {
        let y = self.v.solve_lower_triangular(x).expect("V is nonsingular");
        y.norm_squared()
    }
}

/// B_i (j = None) or the cross block B_ij = R_i B R_ijᵀ (|I_i| × δ).
pub fn restrict_covariance(
    decomp: &Decomposition,
    b: &DMatrix<f64>,
    i: usize,
    j: Option<usize>,
) -> Result<DMatrix<f64>> {
    let rows = &decomp.subdomains[i];
    match j {
        None => Ok(b.select_rows(rows.iter()).select_columns(rows.iter())),
        Some(j) => {
            if !decomp.adjacency[i].contains(&j) {
                return Err(Error::NotAdjacent { i, j });
            }
            let cols = decomp.overlap(i, j);
            Ok(b.select_rows(rows.iter()).select_columns(cols.iter()))
        }
    }
}

/// B_ij embedded in |I_i| × |I_i| with its columns at the local overlap positions.
pub fn embed_cross(decomp: &Decomposition, b: &DMatrix<f64>, i: usize, j: usize) -> Result<DMatrix<f64>> {
    let cross = restrict_covariance(decomp, b, i, Some(j))?;
    let n = decomp.subdomains[i].len();
    let mut out = DMatrix::zeros(n, n);
    for (c, &p) in decomp.overlap_positions(i, j).iter().enumerate() {
        out.set_column(p, &cross.column(c));
    }
    Ok(out)
}

/// The δ × δ block B restricted to I_ij on both sides; weights the overlap penalty.
pub fn overlap_block(decomp: &Decomposition, b: &DMatrix<f64>, i: usize, j: usize) -> Result<DMatrix<f64>> {
    if !decomp.adjacency[i].contains(&j) {
        return Err(Error::NotAdjacent { i, j });
    }
    let ov = decomp.overlap(i, j);
    Ok(b.select_rows(ov.iter()).select_columns(ov.iter()))
}

#[derive(Debug, Clone)]
pub struct ObservationCovariance {
    pub sigma_02: f64,
    pub n_obs: usize,
    pub n: usize,
}

impl ObservationCovariance {
    pub fn new(sigma_02: f64, n_obs: usize, n: usize) -> Result<Self> {
        if !(sigma_02 > 0.0) {
            return Err(Error::Config(format!("sigma_0^2 must be > 0, got {sigma_02}")));
        }
        Ok(Self { sigma_02, n_obs, n })
    }

    pub fn r_l(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.n_obs, self.n_obs, self.sigma_02)
    }

    pub fn r(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_element(self.n_obs * self.n, self.sigma_02))
    }
}
