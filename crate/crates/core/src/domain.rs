//! Space-time grid, its overlapping decomposition and the restriction /
//! extension / gather machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid Ω_I × Δ_K.
///
/// `n_p` is the length of the state vector. With `n_vars > 1` several
/// physical variables are interleaved per node, so the grid has
/// `n_p / n_vars` physical nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_p: usize,
    pub n: usize,
    pub n_vars: usize,
    pub dx: f64,
    pub dt: f64,
}

pub fn build_domain(
    x_min: f64,
    x_max: f64,
    t_min: f64,
    t_max: f64,
    n_p: usize,
    n: usize,
) -> Result<DiscreteDomain> {
    build_stacked_domain(x_min, x_max, t_min, t_max, n_p, n, 1)
}

pub fn build_stacked_domain(
    x_min: f64,
    x_max: f64,
    t_min: f64,
    t_max: f64,
    n_p: usize,
    n: usize,
    n_vars: usize,
) -> Result<DiscreteDomain> {
    if !(x_min < x_max) {
        return Err(Error::InvalidExtent(format!("x_min={x_min} >= x_max={x_max}")));
    }
    if !(t_min < t_max) {
        return Err(Error::InvalidExtent(format!("t_min={t_min} >= t_max={t_max}")));
    }
    if n_vars == 0 || n_p % n_vars != 0 {
        return Err(Error::Indivisible(format!("n_p={n_p} not a multiple of n_vars={n_vars}")));
    }
    if n_p < 2 || n < 2 {
        return Err(Error::TooSmall(format!("need n_p >= 2 and n >= 2, got n_p={n_p}, n={n}")));
    }
    let nodes = n_p / n_vars;
    Ok(DiscreteDomain {
        x_min,
        x_max,
        t_min,
        t_max,
        n_p,
        n,
        n_vars,
        dx: (x_max - x_min) / (nodes + 1) as f64,
        dt: (t_max - t_min) / (n - 1) as f64,
    })
}

impl DiscreteDomain {
    pub fn n_nodes(&self) -> usize {
        self.n_p / self.n_vars
    }

    /// Coordinates of the physical inner nodes.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n_nodes()).map(|m| self.x_min + m as f64 * self.dx).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|l| self.t_min + l as f64 * self.dt).collect()
    }

    /// Coordinate of the node carrying state entry `idx`.
    pub fn coord(&self, idx: usize) -> f64 {
        self.x_min + (idx / self.n_vars + 1) as f64 * self.dx
    }
}

/// Index selection R: ℝ^source_dim → ℝ^|target|.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionMap {
    pub source_dim: usize,
    pub target_indices: Vec<usize>,
}

impl RestrictionMap {
    pub fn new(source_dim: usize, target_indices: Vec<usize>) -> Result<Self> {
        if target_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("restriction indices must be sorted and unique".into()));
        }
        if let Some(&last) = target_indices.last() {
            if last >= source_dim {
                return Err(Error::DimensionMismatch { expected: source_dim, got: last + 1 });
            }
        }
        Ok(Self { source_dim, target_indices })
    }

    pub fn len(&self) -> usize {
        self.target_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_indices.is_empty()
    }
}

pub fn restrict(map: &RestrictionMap, field: &DVector<f64>) -> Result<DVector<f64>> {
    if field.len() != map.source_dim {
        return Err(Error::DimensionMismatch { expected: map.source_dim, got: field.len() });
    }
    Ok(DVector::from_iterator(map.len(), map.target_indices.iter().map(|&g| field[g])))
}

/// Restrict every column of a space-time array.
pub fn restrict_cols(map: &RestrictionMap, field: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if field.nrows() != map.source_dim {
        return Err(Error::DimensionMismatch { expected: map.source_dim, got: field.nrows() });
    }
    Ok(field.select_rows(map.target_indices.iter()))
}

pub fn extend(map: &RestrictionMap, field: &DVector<f64>) -> Result<DVector<f64>> {
    if field.len() != map.len() {
        return Err(Error::DimensionMismatch { expected: map.len(), got: field.len() });
    }
    let mut out = DVector::zeros(map.source_dim);
    for (l, &g) in map.target_indices.iter().enumerate() {
        out[g] = field[l];
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub n_sub: usize,
    pub n_t: usize,
    pub delta: usize,
    pub n_p: usize,
    pub n: usize,
    /// I_i, 0-based sorted global indices.
    pub subdomains: Vec<Vec<usize>>,
    /// K_k, 0-based instants.
    pub slabs: Vec<Vec<usize>>,
    /// J_i, 0-based.
    pub adjacency: Vec<Vec<usize>>,
    /// owner of each global node (subdomain) and instant (slab).
    node_owner: Vec<usize>,
    instant_owner: Vec<usize>,
}

pub fn decompose(domain: &DiscreteDomain, n_sub: usize, n_t: usize, delta: usize) -> Result<Decomposition> {
    let (n_p, n) = (domain.n_p, domain.n);
    if n_sub == 0 || n_t == 0 {
        return Err(Error::TooSmall("n_sub and n_t must be >= 1".into()));
    }
    if n_p % n_sub != 0 {
        return Err(Error::Indivisible(format!("n_sub={n_sub} does not divide n_p={n_p}")));
    }
    if (n - 1) % n_t != 0 {
        return Err(Error::Indivisible(format!("n_t={n_t} does not divide n-1={}", n - 1)));
    }
    if delta % 2 != 0 {
        return Err(Error::OddOverlap(delta));
    }
    let width = n_p / n_sub;
    if delta >= width && !(n_sub == 1 && delta == 0) {
        return Err(Error::OverlapTooLarge { delta, width });
    }
    let h = delta / 2;
    let subdomains: Vec<Vec<usize>> = (0..n_sub)
        .map(|i| {
            let lo = if i > 0 { i * width - h } else { 0 };
            let hi = if i + 1 < n_sub { (i + 1) * width + h } else { n_p };
            (lo..hi).collect()
        })
        .collect();
    let len = (n - 1) / n_t;
    let slabs: Vec<Vec<usize>> = (0..n_t).map(|k| (k * len..=(k + 1) * len).collect()).collect();
    let adjacency = (0..n_sub)
        .map(|i| {
            let mut j = Vec::new();
            if i > 0 {
                j.push(i - 1);
            }
            if i + 1 < n_sub {
                j.push(i + 1);
            }
            j
        })
        .collect();
    let mut node_owner = vec![usize::MAX; n_p];
    for (i, set) in subdomains.iter().enumerate() {
        for &g in set {
            if node_owner[g] == usize::MAX {
                node_owner[g] = i;
            }
        }
    }
    let mut instant_owner = vec![usize::MAX; n];
    for (k, set) in slabs.iter().enumerate() {
        for &l in set {
            if instant_owner[l] == usize::MAX {
                instant_owner[l] = k;
            }
        }
    }
    Ok(Decomposition {
        n_sub,
        n_t,
        delta,
        n_p,
        n,
        subdomains,
        slabs,
        adjacency,
        node_owner,
        instant_owner,
    })
}

impl Decomposition {
    pub fn ad(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn map(&self, i: usize) -> RestrictionMap {
        RestrictionMap { source_dim: self.n_p, target_indices: self.subdomains[i].clone() }
    }

    /// I_ij = I_i ∩ I_j (empty when not adjacent or δ = 0).
    pub fn overlap(&self, i: usize, j: usize) -> Vec<usize> {
        let b = &self.subdomains[j];
        self.subdomains[i].iter().copied().filter(|g| b.binary_search(g).is_ok()).collect()
    }

    /// Local positions of I_ij inside I_i.
    pub fn overlap_positions(&self, i: usize, j: usize) -> Vec<usize> {
        let first = self.subdomains[i][0];
        self.overlap(i, j).into_iter().map(|g| g - first).collect()
    }

    pub fn gather_owner(&self, node: usize, instant: usize) -> (usize, usize) {
        (self.node_owner[node], self.instant_owner[instant])
    }

    /// Restrict a global space-time field to every (i, k); indexed `[i][k]`.
    pub fn restrict_all(&self, u: &DMatrix<f64>) -> Vec<Vec<DMatrix<f64>>> {
        self.subdomains
            .iter()
            .map(|set| {
                self.slabs
                    .iter()
                    .map(|ks| DMatrix::from_fn(set.len(), ks.len(), |a, b| u[(set[a], ks[b])]))
                    .collect()
            })
            .collect()
    }
}

/// Result of a gather: the global field plus the largest disagreement seen
/// between a non-owning local and the owner.
#[derive(Debug, Clone)]
pub struct Gathered {
    pub field: DMatrix<f64>,
    pub max_discrepancy: f64,
}

pub fn gather(decomp: &Decomposition, locals: &[Vec<DMatrix<f64>>]) -> Result<Gathered> {
    let mut field = DMatrix::zeros(decomp.n_p, decomp.n);
    for (i, set) in decomp.subdomains.iter().enumerate() {
        for (k, ks) in decomp.slabs.iter().enumerate() {
            let loc = &locals[i][k];
            if loc.shape() != (set.len(), ks.len()) {
                return Err(Error::ShapeMismatch {
                    i,
                    k,
                    expected: (set.len(), ks.len()),
                    got: loc.shape(),
                });
            }
        }
    }
    let mut max_discrepancy = 0.0f64;
    for (i, set) in decomp.subdomains.iter().enumerate() {
        for (k, ks) in decomp.slabs.iter().enumerate() {
            for (a, &g) in set.iter().enumerate() {
                for (b, &l) in ks.iter().enumerate() {
                    if decomp.gather_owner(g, l) == (i, k) {
                        field[(g, l)] = locals[i][k][(a, b)];
                    }
                }
            }
        }
    }
    for (i, set) in decomp.subdomains.iter().enumerate() {
        for (k, ks) in decomp.slabs.iter().enumerate() {
            for (a, &g) in set.iter().enumerate() {
                for (b, &l) in ks.iter().enumerate() {
                    let d = (locals[i][k][(a, b)] - field[(g, l)]).abs();
                    max_discrepancy = max_discrepancy.max(d);
                }
            }
        }
    }
    Ok(Gathered { field, max_discrepancy })
}
