//! Small dense linear-algebra helpers shared by the inference code.
//!
//! Every Gaussian product or quotient goes through [`condition_on_exp_quadratic`],
//! which works from a square root of the covariance so that singular
//! covariances (e.g. a state that is pinned by a zero-length transition) are
//! handled without ever forming a precision matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter ladder used before declaring a matrix non positive definite.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Moment-form multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Mat,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Mat) -> Self {
        Gaussian {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn zero_mean(cov: Mat) -> Self {
        let n = cov.nrows();
        Gaussian::new(Vector::zeros(n), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal over the index range `start..start + len`.
    pub fn block(&self, start: usize, len: usize) -> Gaussian {
        Gaussian {
            mean: self.mean.rows(start, len).into_owned(),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        }
    }

    /// Distribution of `W x + noise`, with `noise ~ N(0, nu)`.
    pub fn project(&self, w: &Mat, nu: &Mat) -> Gaussian {
        let mean = w * &self.mean;
        let cov = w * &self.cov * w.transpose() + nu;
        Gaussian::new(mean, cov)
    }

    pub fn log_pdf(&self, x: &Vector) -> Result<f64> {
        let chol = cholesky_jitter(&self.cov)?;
        let r = x - &self.mean;
        let sol = chol.solve(&r);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (r.dot(&sol) + log_det + self.dim() as f64 * LN_2PI))
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn mean_abs_diag(m: &Mat) -> f64 {
    let n = m.nrows().max(1);
    let s = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Cholesky factorisation with relative jitter escalating from 1e-10 to 1e-6.
pub fn cholesky_jitter(m: &Mat) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize(m);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    let scale = mean_abs_diag(&sym);
    let n = sym.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let shifted = &sym + Mat::identity(n, n) * (jitter * scale);
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "{n}x{n} matrix failed Cholesky with jitter up to {JITTER_MAX:e}"
    )))
}

pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    let c = cholesky_jitter(m)?;
    Ok(symmetrize(&c.inverse()))
}

pub fn log_det_spd(m: &Mat) -> Result<f64> {
    let c = cholesky_jitter(m)?;
    Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Square root `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Uses Cholesky when the matrix is comfortably PD and falls back to an
/// eigendecomposition (negative eigenvalues clamped to zero) otherwise.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let sym = symmetrize(m);
    if let Some(c) = Cholesky::new(sym.clone()) {
        let l = c.l();
        if l.diagonal()
            .iter()
            .all(|v| v.is_finite() && *v > 1e-9 * mean_abs_diag(&sym).sqrt())
        {
            return l;
        }
    }
    let eig = SymmetricEigen::new(sym);
    let mut l = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Symmetric eigenvalue floor: eigenvalues below `floor` are raised to it.
pub fn floor_eigenvalues(m: &Mat, floor: f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Inverse of a symmetric matrix after flooring its eigenvalues.
pub fn floored_inverse(m: &Mat, floor: f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| 1.0 / v.max(floor));
    symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Multiply `N(mean, cov)` by `exp(xᵀa − ½ xᵀBx)` and renormalise.
///
/// Returns the normalised product and `log E_{N(mean,cov)}[exp(xᵀa − ½ xᵀBx)]`.
/// `B` may be indefinite (Gaussian division); the call fails when the
/// resulting precision is not positive definite.
pub fn condition_on_exp_quadratic(g: &Gaussian, a: &Vector, b: &Mat) -> Result<(Gaussian, f64)> {
    let n = g.dim();
    let l = psd_sqrt(&g.cov);
    let s = Mat::identity(n, n) + l.transpose() * b * &l;
    let chol = Cholesky::new(symmetrize(&s)).ok_or_else(|| {
        Error::NotPositiveDefinite(
            "precision of the Gaussian product is not positive definite".into(),
        )
    })?;
    let lt_inv_l = {
        // L S⁻¹ Lᵀ, the covariance of the product.
        let x = chol.solve(&l.transpose());
        symmetrize(&(&l * x))
    };
    let resid = a - b * &g.mean;
    let mean = &g.mean + &lt_inv_l * &resid;
    let log_det_s = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let c0 = g.mean.dot(a) - 0.5 * g.mean.dot(&(b * &g.mean));
    let log_z = c0 - 0.5 * log_det_s + 0.5 * resid.dot(&(&lt_inv_l * &resid));
    Ok((
        Gaussian {
            mean,
            cov: lt_inv_l,
        },
        log_z,
    ))
}

/// `log E_{N(mean,cov)}[exp(xᵀa − ½ xᵀBx)]`.
pub fn log_expect_exp_quadratic(g: &Gaussian, a: &Vector, b: &Mat) -> Result<f64> {
    condition_on_exp_quadratic(g, a, b).map(|(_, z)| z)
}

/// Kronecker product.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn ln_2pi() -> f64 {
    LN_2PI
}
