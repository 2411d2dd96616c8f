//! Observation models and the Gaussian expectations the site updates need.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cubature::{rule, CubatureRule, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{ln_2pi, psd_sqrt, Mat, Vector};

/// `∂V/∂Σ` for `V(Σ) = Σ_i w_i g(μ + L ξ_i)` with `L = chol(Σ)`, given
/// `G = Σ_i w_i ∇g_i ξ_iᵀ`. Uses `dL = L Φ(L⁻¹ dΣ L⁻ᵀ)`, with `Φ` taking the
/// lower triangle and halving the diagonal. `None` if `l` is not an invertible
/// lower-triangular factor.
fn cholesky_cov_gradient(l: &Mat, grad_node: &Mat) -> Option<Mat> {
    let o = l.nrows();
    let lower = (0..o).all(|i| l[(i, i)] > 0.0 && (i + 1..o).all(|j| l[(i, j)] == 0.0));
    if !lower {
        return None;
    }
    let b = l.transpose() * grad_node;
    let phi = Mat::from_fn(o, o, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => b[(i, j)],
        std::cmp::Ordering::Equal => 0.5 * b[(i, i)],
        std::cmp::Ordering::Less => 0.0,
    });
    let l_inv = l.clone().solve_lower_triangular(&Mat::identity(o, o))?;
    let d = l_inv.transpose() * phi * l_inv;
    Some((&d + d.transpose()) * 0.5)
}

fn default_bin_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    Gaussian {
        variance: f64,
    },
    BernoulliLogit,
    /// Counts with intensity `bin_width · exp(f)`.
    PoissonLog {
        #[serde(default = "default_bin_width")]
        bin_width: f64,
    },
    /// `y ~ N(f₁, softplus(f₂)²)`.
    HeteroscedasticGaussian,
}

/// `E_q[log p]` and its derivatives with respect to the mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalExpectation {
    pub value: f64,
    pub d_mean: Vector,
    pub d_cov: Mat,
}

/// `log E_q[p^α]` and its first two derivatives with respect to the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPartition {
    pub log_z: f64,
    pub d1: Vector,
    pub d2: Mat,
}

/// Statistical linear regression moments of `E[y|f]` under `q(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slr {
    /// `E_q[E[y|f]]`.
    pub mean: f64,
    /// `E_q[Var[y|f]] + Var_q[E[y|f]]`.
    pub var: f64,
    /// `Cov_q[f, E[y|f]]`.
    pub cross: Vector,
}

/// `E[y|f]`, `Var[y|f]` and `dE[y|f]/df`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub var: f64,
    pub d_mean: Vector,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Likelihood {
    pub fn latent_dim(&self) -> usize {
        match self {
            Likelihood::HeteroscedasticGaussian => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::BernoulliLogit => "bernoulli_logit",
            Likelihood::PoissonLog { .. } => "poisson_log",
            Likelihood::HeteroscedasticGaussian => "heteroscedastic_gaussian",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Gaussian { variance } if !(variance.is_finite() && *variance > 0.0) => {
                Err(Error::ParameterDomain(format!(
                    "Gaussian variance must be positive, got {variance}"
                )))
            }
            Likelihood::PoissonLog { bin_width }
                if !(bin_width.is_finite() && *bin_width > 0.0) =>
            {
                Err(Error::ParameterDomain(format!(
                    "bin width must be positive, got {bin_width}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn check_y(&self, y: f64) -> Result<()> {
        let ok = match self {
            Likelihood::Gaussian { .. } | Likelihood::HeteroscedasticGaussian => y.is_finite(),
            Likelihood::BernoulliLogit => y == 0.0 || y == 1.0,
            Likelihood::PoissonLog { .. } => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::LikelihoodDomain {
                likelihood: self.name(),
                y,
            })
        }
    }

    /// Trainable parameters in log space (the Gaussian noise variance only).
    pub fn log_params(&self) -> Vec<f64> {
        match self {
            Likelihood::Gaussian { variance } => vec![variance.ln()],
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Likelihood::Gaussian { .. } => vec!["noise_variance".into()],
            _ => Vec::new(),
        }
    }

    pub fn with_log_params(&self, p: &[f64]) -> Result<Likelihood> {
        if p.len() != self.log_params().len() {
            return Err(Error::Dimension(format!(
                "expected {} likelihood parameters",
                self.log_params().len()
            )));
        }
        Ok(match self {
            Likelihood::Gaussian { .. } => Likelihood::Gaussian {
                variance: p[0].exp(),
            },
            other => other.clone(),
        })
    }

    fn check_latent(&self, mean: &Vector, cov: &Mat) -> Result<()> {
        let o = self.latent_dim();
        if mean.len() != o || cov.nrows() != o || cov.ncols() != o {
            return Err(Error::Dimension(format!(
                "{} likelihood expects {o} latents, got mean of length {} and {}x{} covariance",
                self.name(),
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(())
    }

    /// `log p(y | f)`, assuming `y` already validated.
    pub(crate) fn log_density_unchecked(&self, y: f64, f: &[f64]) -> f64 {
        match self {
            Likelihood::Gaussian { variance } => {
                -0.5 * (ln_2pi() + variance.ln() + (y - f[0]).powi(2) / variance)
            }
            Likelihood::BernoulliLogit => y * f[0] - softplus(f[0]),
            Likelihood::PoissonLog { bin_width } => {
                y * (f[0] + bin_width.ln()) - bin_width * f[0].exp() - ln_gamma(y + 1.0)
            }
            Likelihood::HeteroscedasticGaussian => {
                let s = softplus(f[1]);
                -0.5 * ln_2pi() - s.ln() - (y - f[0]).powi(2) / (2.0 * s * s)
            }
        }
    }

    pub fn log_density(&self, y: f64, f: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        if f.len() != self.latent_dim() {
            return Err(Error::Dimension(format!(
                "expected {} latents, got {}",
                self.latent_dim(),
                f.len()
            )));
        }
        Ok(self.log_density_unchecked(y, f))
    }

    /// Gradient and Hessian of `log p(y | f)` with respect to `f`.
    pub fn log_density_derivatives(&self, y: f64, f: &[f64]) -> (Vector, Mat) {
        match self {
            Likelihood::Gaussian { variance } => (
                Vector::from_element(1, (y - f[0]) / variance),
                Mat::from_element(1, 1, -1.0 / variance),
            ),
            Likelihood::BernoulliLogit => {
                let s = sigmoid(f[0]);
                (
                    Vector::from_element(1, y - s),
                    Mat::from_element(1, 1, -s * (1.0 - s)),
                )
            }
            Likelihood::PoissonLog { bin_width } => {
                let rate = bin_width * f[0].exp();
                (
                    Vector::from_element(1, y - rate),
                    Mat::from_element(1, 1, -rate),
                )
            }
            Likelihood::HeteroscedasticGaussian => {
                let r = y - f[0];
                let s = softplus(f[1]);
                let ds = sigmoid(f[1]);
                let d2s = ds * (1.0 - ds);
                let g1 = r / (s * s);
                let dg_ds = -1.0 / s + r * r / (s * s * s);
                let d2g_ds2 = 1.0 / (s * s) - 3.0 * r * r / (s * s * s * s);
                let h11 = -1.0 / (s * s);
                let h12 = -2.0 * r * ds / (s * s * s);
                let h22 = d2g_ds2 * ds * ds + dg_ds * d2s;
                (
                    Vector::from_vec(vec![g1, dg_ds * ds]),
                    Mat::from_row_slice(2, 2, &[h11, h12, h12, h22]),
                )
            }
        }
    }

    pub fn conditional_moments(&self, f: &[f64]) -> ConditionalMoments {
        match self {
            Likelihood::Gaussian { variance } => ConditionalMoments {
                mean: f[0],
                var: *variance,
                d_mean: Vector::from_element(1, 1.0),
            },
            Likelihood::BernoulliLogit => {
                let s = sigmoid(f[0]);
                ConditionalMoments {
                    mean: s,
                    var: s * (1.0 - s),
                    d_mean: Vector::from_element(1, s * (1.0 - s)),
                }
            }
            Likelihood::PoissonLog { bin_width } => {
                let rate = bin_width * f[0].exp();
                ConditionalMoments {
                    mean: rate,
                    var: rate,
                    d_mean: Vector::from_element(1, rate),
                }
            }
            Likelihood::HeteroscedasticGaussian => {
                let s = softplus(f[1]);
                ConditionalMoments {
                    mean: f[0],
                    var: s * s,
                    d_mean: Vector::from_vec(vec![1.0, 0.0]),
                }
            }
        }
    }

    pub fn variational_expectation(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
    ) -> Result<VariationalExpectation> {
        self.variational_expectation_order(y, mean, cov, DEFAULT_ORDER)
    }

    pub fn variational_expectation_order(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
        order: usize,
    ) -> Result<VariationalExpectation> {
        self.check_y(y)?;
        self.check_latent(mean, cov)?;
        match self {
            Likelihood::Gaussian { variance } => {
                let (mu, s) = (mean[0], cov[(0, 0)]);
                Ok(VariationalExpectation {
                    value: -0.5 * (ln_2pi() + variance.ln())
                        - ((y - mu).powi(2) + s) / (2.0 * variance),
                    d_mean: Vector::from_element(1, (y - mu) / variance),
                    d_cov: Mat::from_element(1, 1, -0.5 / variance),
                })
            }
            Likelihood::PoissonLog { bin_width } => {
                let (mu, s) = (mean[0], cov[(0, 0)]);
                let rate = bin_width * (mu + 0.5 * s).exp();
                Ok(VariationalExpectation {
                    value: y * (mu + bin_width.ln()) - rate - ln_gamma(y + 1.0),
                    d_mean: Vector::from_element(1, y - rate),
                    d_cov: Mat::from_element(1, 1, -0.5 * rate),
                })
            }
            _ => {
                let r = rule(self.latent_dim(), order)?;
                Ok(self.variational_expectation_cubature(y, mean, cov, &r))
            }
        }
    }

    /// Cubature form. `∂/∂μ = E[∇ log p]`; `∂/∂Σ` is the exact derivative of the
    /// cubature sum through the Cholesky factor, falling back to `½ E[∇² log p]`
    /// when the covariance is singular.
    pub fn variational_expectation_cubature(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
        r: &CubatureRule,
    ) -> VariationalExpectation {
        let o = self.latent_dim();
        let l = psd_sqrt(cov);
        let mut value = 0.0;
        let mut d_mean = Vector::zeros(o);
        let mut hess = Mat::zeros(o, o);
        let mut grad_node = Mat::zeros(o, o);
        let mut f = Vector::zeros(o);
        for i in 0..r.len() {
            let xi = Vector::from_column_slice(r.node(i));
            f.copy_from(mean);
            f.gemv(1.0, &l, &xi, 1.0);
            let w = r.weights[i];
            value += w * self.log_density_unchecked(y, f.as_slice());
            let (g, h) = self.log_density_derivatives(y, f.as_slice());
            d_mean.axpy(w, &g, 1.0);
            grad_node.ger(w, &g, &xi, 1.0);
            hess += h * w;
        }
        let d_cov = cholesky_cov_gradient(&l, &grad_node).unwrap_or(hess * 0.5);
        VariationalExpectation {
            value,
            d_mean,
            d_cov,
        }
    }

    pub fn log_partition(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
        alpha: f64,
    ) -> Result<LogPartition> {
        self.log_partition_order(y, mean, cov, alpha, DEFAULT_ORDER)
    }

    pub fn log_partition_order(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
        alpha: f64,
        order: usize,
    ) -> Result<LogPartition> {
        self.check_y(y)?;
        self.check_latent(mean, cov)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        match self {
            Likelihood::Gaussian { variance } => {
                let s = cov[(0, 0)] + variance / alpha;
                let r = y - mean[0];
                let log_z = 0.5 * (1.0 - alpha) * (ln_2pi() + variance.ln())
                    - 0.5 * alpha.ln()
                    - 0.5 * (ln_2pi() + s.ln() + r * r / s);
                Ok(LogPartition {
                    log_z,
                    d1: Vector::from_element(1, r / s),
                    d2: Mat::from_element(1, 1, -1.0 / s),
                })
            }
            _ => {
                let r = rule(self.latent_dim(), order)?;
                Ok(self.log_partition_cubature(y, mean, cov, alpha, &r))
            }
        }
    }

    /// Cubature form. Derivatives are tilted expectations of the
    /// log-density gradient and Hessian, so they are exact derivatives of the
    /// cubature value itself.
    pub fn log_partition_cubature(
        &self,
        y: f64,
        mean: &Vector,
        cov: &Mat,
        alpha: f64,
        r: &CubatureRule,
    ) -> LogPartition {
        let o = self.latent_dim();
        let l = psd_sqrt(cov);
        let mut f = Vector::zeros(o);
        let mut logw = Vec::with_capacity(r.len());
        let mut derivs = Vec::with_capacity(r.len());
        for i in 0..r.len() {
            f.copy_from(mean);
            f.gemv(1.0, &l, &Vector::from_column_slice(r.node(i)), 1.0);
            logw.push(r.weights[i].ln() + alpha * self.log_density_unchecked(y, f.as_slice()));
            derivs.push(self.log_density_derivatives(y, f.as_slice()));
        }
        let log_z = log_sum_exp(&logw);
        let mut g_bar = Vector::zeros(o);
        let mut ggt = Mat::zeros(o, o);
        let mut h_bar = Mat::zeros(o, o);
        for (lw, (g, h)) in logw.iter().zip(&derivs) {
            let p = (lw - log_z).exp();
            g_bar.axpy(p, g, 1.0);
            ggt += g * g.transpose() * p;
            h_bar += h * p;
        }
        let d1 = &g_bar * alpha;
        let d2 = h_bar * alpha + (ggt - &g_bar * g_bar.transpose()) * (alpha * alpha);
        LogPartition {
            log_z,
            d1,
            d2: crate::linalg::symmetrize(&d2),
        }
    }

    /// Moments of `E[y|f]` under `q(f)`.
    pub fn slr(&self, mean: &Vector, cov: &Mat) -> Result<Slr> {
        self.slr_order(mean, cov, DEFAULT_ORDER)
    }

    pub fn slr_order(&self, mean: &Vector, cov: &Mat, order: usize) -> Result<Slr> {
        self.check_latent(mean, cov)?;
        let r = rule(self.latent_dim(), order)?;
        let o = self.latent_dim();
        let l = psd_sqrt(cov);
        let mut f = Vector::zeros(o);
        let mut pts = Vec::with_capacity(r.len());
        let mut e_mean = 0.0;
        let mut e_var = 0.0;
        for i in 0..r.len() {
            f.copy_from(mean);
            f.gemv(1.0, &l, &Vector::from_column_slice(r.node(i)), 1.0);
            let cm = self.conditional_moments(f.as_slice());
            e_mean += r.weights[i] * cm.mean;
            e_var += r.weights[i] * cm.var;
            pts.push((f.clone(), cm.mean));
        }
        let mut cross = Vector::zeros(o);
        let mut var_mean = 0.0;
        for ((fi, ei), w) in pts.iter().zip(&r.weights) {
            let de = ei - e_mean;
            cross.axpy(w * de, &(fi - mean), 1.0);
            var_mean += w * de * de;
        }
        Ok(Slr {
            mean: e_mean,
            var: e_var + var_mean,
            cross,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn log_density_reference_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((Likelihood::BernoulliLogit.log_density(1.0, &[0.0]).unwrap() + ln2).abs() < 1e-15);
        let g = Likelihood::Gaussian { variance: 1.0 };
        assert!((g.log_density(0.3, &[0.3]).unwrap() + 0.5 * ln_2pi()).abs() < 1e-15);
        let p = Likelihood::PoissonLog { bin_width: 1.0 };
        assert!((p.log_density(1.0, &[0.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_domain_targets() {
        assert!(Likelihood::BernoulliLogit.log_density(0.5, &[0.0]).is_err());
        let p = Likelihood::PoissonLog { bin_width: 1.0 };
        assert!(p.log_density(-1.0, &[0.0]).is_err());
        assert!(p.log_density(1.5, &[0.0]).is_err());
    }

    #[test]
    fn conditional_moment_values() {
        let p = Likelihood::PoissonLog { bin_width: 1.0 }.conditional_moments(&[0.0]);
        assert_eq!((p.mean, p.var), (1.0, 1.0));
        let b = Likelihood::BernoulliLogit.conditional_moments(&[0.0]);
        assert_eq!((b.mean, b.var, b.d_mean[0]), (0.5, 0.25, 0.25));
        let g = Likelihood::Gaussian { variance: 0.3 }.conditional_moments(&[1.7]);
        assert_eq!((g.mean, g.var, g.d_mean[0]), (1.7, 0.3, 1.0));
    }

    #[test]
    fn poisson_variational_expectation() {
        let p = Likelihood::PoissonLog { bin_width: 1.0 };
        let ve = p.variational_expectation(1.0, &v1(0.0), &m1(1.0)).unwrap();
        assert!((ve.value + 0.5f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_point_mass_expectation() {
        let g = Likelihood::Gaussian { variance: 1.0 };
        let ve = g.variational_expectation(0.0, &v1(0.0), &m1(0.0)).unwrap();
        assert!((ve.value + 0.5 * ln_2pi()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_log_partition() {
        let g = Likelihood::Gaussian { variance: 1.0 };
        let lp = g.log_partition(0.0, &v1(0.0), &m1(1.0), 1.0).unwrap();
        assert!((lp.log_z + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        for alpha in [0.1, 0.5, 1.0] {
            let lp = g.log_partition(0.4, &v1(0.4), &m1(0.7), alpha).unwrap();
            assert_eq!(lp.d1[0], 0.0);
        }
    }

    #[test]
    fn cubature_matches_closed_form_for_gaussian() {
        let g = Likelihood::Gaussian { variance: 0.5 };
        let r = rule(1, 80).unwrap();
        for alpha in [0.3, 1.0] {
            let closed = g.log_partition(0.2, &v1(-0.4), &m1(0.9), alpha).unwrap();
            let cub = g.log_partition_cubature(0.2, &v1(-0.4), &m1(0.9), alpha, &r);
            assert!(
                (closed.log_z - cub.log_z).abs() < 1e-12,
                "{alpha} {} {}",
                closed.log_z,
                cub.log_z
            );
            assert!((closed.d1[0] - cub.d1[0]).abs() < 1e-12);
            assert!((closed.d2[(0, 0)] - cub.d2[(0, 0)]).abs() < 1e-12);
        }
        let closed = g.variational_expectation(0.2, &v1(-0.4), &m1(0.9)).unwrap();
        let cub = g.variational_expectation_cubature(0.2, &v1(-0.4), &m1(0.9), &r);
        assert!((closed.value - cub.value).abs() < 1e-12);
        assert!((closed.d_cov[(0, 0)] - cub.d_cov[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn heteroscedastic_density_formula() {
        let h = Likelihood::HeteroscedasticGaussian;
        let (y, f1, f2): (f64, f64, f64) = (0.7, 0.1, -0.4);
        let s = (1.0 + f2.exp()).ln();
        let expect = -0.5 * ln_2pi() - s.ln() - (y - f1) * (y - f1) / (2.0 * s * s);
        assert!((h.log_density(y, &[f1, f2]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn slr_limits() {
        let b = Likelihood::BernoulliLogit
            .slr(&v1(0.0), &m1(1e-10))
            .unwrap();
        let omega = b.cross[0] / 1e-10;
        let resid = b.var - b.cross[0] * b.cross[0] / 1e-10;
        assert!((omega - 0.25).abs() < 1e-6);
        assert!((resid - 0.25).abs() < 1e-6);
        let p = Likelihood::PoissonLog { bin_width: 1.0 }
            .slr(&v1(0.0), &m1(1.0))
            .unwrap();
        assert!((p.mean - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn log_params_only_for_gaussian_noise() {
        let g = Likelihood::Gaussian { variance: 0.25 };
        assert_eq!(g.with_log_params(&g.log_params()).unwrap(), g);
        assert!(Likelihood::BernoulliLogit.log_params().is_empty());
    }
}
