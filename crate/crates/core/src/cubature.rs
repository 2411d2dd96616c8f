//! Gauss–Hermite product rules for expectations under a Gaussian.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, Mat, Vector};

pub const DEFAULT_ORDER: usize = 20;
const MAX_DIM: usize = 3;

/// Nodes and weights for `E_{N(0, I)}[g(ξ)] ≈ Σ w_i g(ξ_i)`.
#[derive(Debug, Clone)]
pub struct CubatureRule {
    pub dim: usize,
    pub order: usize,
    /// Flattened nodes, `dim` values per point.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CubatureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Evaluation points `μ + L ξ_i` for `N(μ, Σ)`.
    pub fn points(&self, mean: &Vector, cov: &Mat) -> Vec<Vector> {
        let l = psd_sqrt(cov);
        (0..self.len())
            .map(|i| mean + &l * Vector::from_column_slice(self.node(i)))
            .collect()
    }
}

/// One-dimensional rule normalised for the standard normal, from the
/// eigendecomposition of the probabilists' Hermite Jacobi matrix.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = Mat::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise to remove eigensolver round-off.
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        x[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        w[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (x, w)
}

fn build(dim: usize, order: usize) -> CubatureRule {
    let (x, w) = gauss_hermite_normal(order);
    let total = order.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut wt = 1.0;
        for _ in 0..dim {
            let k = rem % order;
            rem /= order;
            nodes.push(x[k]);
            wt *= w[k];
        }
        weights.push(wt);
    }
    CubatureRule {
        dim,
        order,
        nodes,
        weights,
    }
}

/// Shared product rule of the given order over `dim` dimensions.
pub fn rule(dim: usize, order: usize) -> Result<Arc<CubatureRule>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    if order == 0 {
        return Err(Error::ParameterDomain(
            "cubature order must be positive".into(),
        ));
    }
    type Cache = Mutex<HashMap<(usize, usize), Arc<CubatureRule>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
    Ok(guard
        .entry((dim, order))
        .or_insert_with(|| Arc::new(build(dim, order)))
        .clone())
}
