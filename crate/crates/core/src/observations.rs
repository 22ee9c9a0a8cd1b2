use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{Decomposition, DiscreteDomain};
use crate::error::{Error, Result};

/// Piecewise-linear interpolation H (identical at every instant).
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    pub n_p: usize,
    pub locations: Vec<f64>,
    /// sparse rows of H_l: (state index, weight)
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// `observed_var` picks which interleaved variable is sampled.
pub fn build_interpolation(domain: &DiscreteDomain, locations: &[f64], observed_var: usize) -> Result<ObservationOperator> {
    let nv = domain.n_vars;
    let m = domain.n_nodes();
    let idx = |node: usize| (node - 1) * nv + observed_var;
    let mut rows = Vec::with_capacity(locations.len());
    for &z in locations {
        if !(z > domain.x_min && z < domain.x_max) {
            return Err(Error::OutOfDomain(z));
        }
        let s = (z - domain.x_min) / domain.dx;
        let near = s.round();
        if (s - near).abs() < 1e-9 && near >= 1.0 && near <= m as f64 {
            rows.push(vec![(idx(near as usize), 1.0)]);
            continue;
        }
        let lo = s.floor() as usize;
        let w = s - lo as f64;
        // between the wall and the first/last inner node only one inner neighbour exists
        let row = if lo == 0 {
            vec![(idx(1), 1.0)]
        } else if lo >= m {
            vec![(idx(m), 1.0)]
        } else {
            vec![(idx(lo), 1.0 - w), (idx(lo + 1), w)]
        };
        rows.push(row);
    }
    Ok(ObservationOperator { n_p: domain.n_p, locations: locations.to_vec(), rows })
}

/// n_obs points evenly spaced strictly inside Ω.
pub fn uniform_locations(domain: &DiscreteDomain, n_obs: usize) -> Vec<f64> {
    let len = domain.x_max - domain.x_min;
    (1..=n_obs).map(|j| domain.x_min + len * j as f64 / (n_obs + 1) as f64).collect()
}

impl ObservationOperator {
    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn h(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_obs(), self.n_p);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                h[(r, c)] += w;
            }
        }
        h
    }

    /// H applied column-wise to a space-time array.
    pub fn apply(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_obs(), u.ncols(), |r, l| self.rows[r].iter().map(|&(c, w)| w * u[(c, l)]).sum())
    }

    /// G_upto = [H_0; …; H_{upto−1}].
    pub fn stack_g(&self, upto: usize) -> DMatrix<f64> {
        let h = self.h();
        let mut g = DMatrix::zeros(upto * self.n_obs(), self.n_p);
        for l in 0..upto {
            g.view_mut((l * self.n_obs(), 0), (self.n_obs(), self.n_p)).copy_from(&h);
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub locations: Vec<f64>,
    /// n_obs × N
    pub values: DMatrix<f64>,
    pub noise_seed: u64,
    pub sigma_0: f64,
}

pub fn synthesize_observations(truth: &DMatrix<f64>, ops: &ObservationOperator, sigma_0: f64, seed: u64) -> Result<ObservationSet> {
    if !(sigma_0 >= 0.0) {
        return Err(Error::Config(format!("sigma_0 must be >= 0, got {sigma_0}")));
    }
    let mut values = ops.apply(truth);
    if sigma_0 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma_0).expect("finite sigma");
        for l in 0..values.ncols() {
            for r in 0..values.nrows() {
                values[(r, l)] += normal.sample(&mut rng);
            }
        }
    }
    Ok(ObservationSet { locations: ops.locations.clone(), values, noise_seed: seed, sigma_0 })
}

/// Observations seen by Ω_i × Δ_k.
#[derive(Debug, Clone)]
pub struct LocalObservations {
    /// indices into the global observation list
    pub rows: Vec<usize>,
    /// H restricted: rows × |I_i|
    pub h: DMatrix<f64>,
    /// rows × |K_k|
    pub y: DMatrix<f64>,
    pub sigma_02: f64,
}

impl LocalObservations {
    /// G_{i,k}: H_i stacked once per instant of the slab.
    pub fn g_ik(&self) -> DMatrix<f64> {
        let (nr, nc) = self.h.shape();
        let nk = self.y.ncols();
        let mut g = DMatrix::zeros(nr * nk, nc);
        for q in 0..nk {
            g.view_mut((q * nr, 0), (nr, nc)).copy_from(&self.h);
        }
        g
    }

    pub fn r_ik(&self) -> DMatrix<f64> {
        let n = self.rows.len() * self.y.ncols();
        DMatrix::from_diagonal(&DVector::from_element(n, self.sigma_02))
    }
}

/// An observation belongs to Ω_i when all nodes it interpolates from lie in I_i,
/// so an observation inside an overlap is seen by both neighbours.
pub fn restrict_obs(
    decomp: &Decomposition,
    ops: &ObservationOperator,
    obs: &ObservationSet,
    sigma_02: f64,
    i: usize,
    k: usize,
) -> LocalObservations {
    let set = &decomp.subdomains[i];
    let first = set[0];
    let inside = |g: usize| g >= first && g <= *set.last().unwrap();
    let rows: Vec<usize> = (0..ops.n_obs()).filter(|&r| ops.rows[r].iter().all(|&(c, _)| inside(c))).collect();
    let mut h = DMatrix::zeros(rows.len(), set.len());
    for (a, &r) in rows.iter().enumerate() {
        for &(c, w) in &ops.rows[r] {
            h[(a, c - first)] += w;
        }
    }
    let ks = &decomp.slabs[k];
    let y = DMatrix::from_fn(rows.len(), ks.len(), |a, b| obs.values[(rows[a], ks[b])]);
    LocalObservations { rows, h, y, sigma_02 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, build_stacked_domain, decompose};

    fn dom() -> DiscreteDomain {
        build_domain(0.0, 1.0, 0.0, 1.0, 9, 4).unwrap()
    }

    #[test]
    fn node_and_midpoint_rows() {
        let d = dom();
        let ops = build_interpolation(&d, &[0.5, 0.35], 0).unwrap();
        // x = 0.5 is node 5 (1-based)
        assert_eq!(ops.rows[0], vec![(4, 1.0)]);
        let h = ops.h();
        assert!((h[(1, 2)] - 0.5).abs() < 1e-12 && (h[(1, 3)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_reproduction_and_row_sums() {
        let d = dom();
        let locs = [0.13, 0.21, 0.5, 0.77, 0.899];
        let ops = build_interpolation(&d, &locs, 0).unwrap();
        let x = DMatrix::from_fn(9, 1, |m, _| d.nodes()[m]);
        let hx = ops.apply(&x);
        for (a, &z) in locs.iter().enumerate() {
            assert!((hx[(a, 0)] - z).abs() < 1e-12);
        }
        for row in &ops.rows {
            assert!(row.len() <= 2);
            assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(row.iter().all(|r| r.1 >= 0.0));
        }
    }

    #[test]
    fn stacked_operator_samples_one_variable() {
        let d = build_stacked_domain(0.0, 1.0, 0.0, 1.0, 18, 3, 2).unwrap();
        let ops = build_interpolation(&d, &[0.35], 0).unwrap();
        assert_eq!(ops.rows[0].iter().map(|r| r.0).collect::<Vec<_>>(), vec![4, 6]);
        let ops = build_interpolation(&d, &[0.35], 1).unwrap();
        assert_eq!(ops.rows[0].iter().map(|r| r.0).collect::<Vec<_>>(), vec![5, 7]);
    }

    #[test]
    fn out_of_domain() {
        assert!(matches!(build_interpolation(&dom(), &[1.0], 0), Err(Error::OutOfDomain(_))));
        assert!(matches!(build_interpolation(&dom(), &[-0.2], 0), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn stacking() {
        let d = dom();
        let ops = build_interpolation(&d, &[0.3, 0.62], 0).unwrap();
        assert_eq!(ops.stack_g(1), ops.h());
        let g = ops.stack_g(3);
        assert_eq!(g.shape(), (6, 9));
        for l in 0..3 {
            assert_eq!(g.view((2 * l, 0), (2, 9)).into_owned(), ops.h());
        }
    }

    #[test]
    fn synthesis() {
        let d = dom();
        let ops = build_interpolation(&d, &uniform_locations(&d, 4), 0).unwrap();
        let truth = DMatrix::from_fn(9, 4, |m, l| (m + l) as f64);
        let exact = synthesize_observations(&truth, &ops, 0.0, 1).unwrap();
        assert_eq!(exact.values, ops.apply(&truth));
        let a = synthesize_observations(&truth, &ops, 0.5f64.sqrt(), 9).unwrap();
        let b = synthesize_observations(&truth, &ops, 0.5f64.sqrt(), 9).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn noise_variance() {
        let d = build_domain(0.0, 1.0, 0.0, 1.0, 200, 200).unwrap();
        let ops = build_interpolation(&d, &uniform_locations(&d, 100), 0).unwrap();
        let truth = DMatrix::zeros(200, 200);
        let obs = synthesize_observations(&truth, &ops, 0.5f64.sqrt(), 4).unwrap();
        let var = obs.values.norm_squared() / obs.values.len() as f64;
        assert!((var - 0.5).abs() < 0.05, "{var}");
    }

    #[test]
    fn restriction() {
        let d = build_domain(0.0, 1.0, 0.0, 1.0, 8, 3).unwrap();
        let dec = decompose(&d, 2, 2, 2).unwrap();
        // node 4.5 (between 1-based nodes 4 and 5) sits in the overlap; 0.2 only in Ω_1
        let locs = [4.5 / 9.0, 0.2, 0.8];
        let ops = build_interpolation(&d, &locs, 0).unwrap();
        let truth = DMatrix::from_fn(8, 3, |m, l| (m * 3 + l) as f64);
        let obs = synthesize_observations(&truth, &ops, 0.0, 0).unwrap();
        let l0 = restrict_obs(&dec, &ops, &obs, 0.5, 0, 1);
        let l1 = restrict_obs(&dec, &ops, &obs, 0.5, 1, 1);
        assert_eq!(l0.rows, vec![0, 1]);
        assert_eq!(l1.rows, vec![0, 2]);
        assert_eq!(l0.y.ncols(), 2);
        assert_eq!(l0.y[(0, 0)], obs.values[(0, 1)]);
        assert_eq!(l0.g_ik().shape(), (4, 5));
        assert_eq!(l0.r_ik(), DMatrix::identity(4, 4) * 0.5);

        let one = decompose(&d, 1, 1, 0).unwrap();
        let all = restrict_obs(&one, &ops, &obs, 0.5, 0, 0);
        assert_eq!(all.h, ops.h());
        assert_eq!(all.y, obs.values);

        let none = build_interpolation(&d, &[0.8], 0).unwrap();
        let obs = synthesize_observations(&truth, &none, 0.0, 0).unwrap();
        assert_eq!(restrict_obs(&dec, &none, &obs, 0.5, 0, 0).rows.len(), 0);
    }
}
