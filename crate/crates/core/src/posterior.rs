//! Tied sites and the chain posterior (forward filter, backward smoother).

use crate::chain::{FunctionConditional, MarkovChain};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_jitter, condition_on_exp_quadratic, log_det_spd, log_expect_exp_quadratic,
    spd_inverse, symmetrize, Gaussian, Mat, Vector,
};

/// Unnormalised Gaussian factor `exp(logz + vᵀλ1 − ½ vᵀλ2 v)` over a state pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedSite {
    pub lambda1: Vector,
    pub lambda2: Mat,
    pub logz: f64,
}

impl TiedSite {
    /// Identity site over a pair of `d`-dimensional states.
    pub fn zeros(d: usize) -> Self {
        TiedSite {
            lambda1: Vector::zeros(2 * d),
            lambda2: Mat::zeros(2 * d, 2 * d),
            logz: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda1.len()
    }

    /// `t^k`: natural parameters and log constant scaled by `k ∈ (0, 1]`.
    pub fn powered(&self, k: f64) -> Result<TiedSite> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "site fraction must lie in (0, 1], got {k}"
            )));
        }
        Ok(self.scaled(k))
    }

    pub(crate) fn scaled(&self, k: f64) -> TiedSite {
        TiedSite {
            lambda1: &self.lambda1 * k,
            lambda2: &self.lambda2 * k,
            logz: self.logz * k,
        }
    }

    /// Natural-parameter combination `a·self + b·other`.
    pub(crate) fn mix(&self, a: f64, other: &TiedSite, b: f64) -> TiedSite {
        TiedSite {
            lambda1: &self.lambda1 * a + &other.lambda1 * b,
            lambda2: symmetrize(&(&self.lambda2 * a + &other.lambda2 * b)),
            logz: self.logz * a + other.logz * b,
        }
    }

    /// `E_{N(μ,Σ)}[log t(v)]`.
    pub fn expected_log(&self, q: &Gaussian) -> f64 {
        let tr = (&self.lambda2 * &q.cov).trace();
        self.logz + q.mean.dot(&self.lambda1) - 0.5 * (tr + q.mean.dot(&(&self.lambda2 * &q.mean)))
    }

    /// Scalars stored per site.
    pub fn storage_len(&self) -> usize {
        self.lambda1.len() + self.lambda2.len() + 1
    }
}

/// Total number of scalars held by a site vector.
pub fn site_storage_len(sites: &[TiedSite]) -> usize {
    sites.iter().map(TiedSite::storage_len).sum()
}

/// Result of the forward pass.
#[derive(Debug, Clone)]
pub struct Filtered {
    /// `q^f(u_m)`: prior conditioned on sites strictly before `m`.
    pub marginals: Vec<Gaussian>,
    /// `q^f(v_m)`: includes site `m`.
    pub pairs: Vec<Gaussian>,
    /// `log c_m` per step, site constant included.
    pub log_c: Vec<f64>,
}

impl Filtered {
    pub fn log_norm(&self) -> f64 {
        self.log_c.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct ChainPosterior {
    pub marginals: Vec<Gaussian>,
    pub pairs: Vec<Gaussian>,
    pub log_norm: f64,
    pub filtered: Filtered,
}

fn check_sites(chain: &MarkovChain, sites: &[TiedSite]) -> Result<()> {
    if sites.len() != chain.num_segments() {
        return Err(Error::Dimension(format!(
            "{} sites for {} segments",
            sites.len(),
            chain.num_segments()
        )));
    }
    let d2 = 2 * chain.state_dim();
    if let Some(s) = sites
        .iter()
        .find(|s| s.dim() != d2 || s.lambda2.nrows() != d2)
    {
        return Err(Error::Dimension(format!(
            "site of dimension {} on a chain with pair dimension {d2}",
            s.dim()
        )));
    }
    Ok(())
}

/// Prior joint over `(u_m, u_{m+1})` given `q(u_m)`.
fn propagate_pair(q: &Gaussian, a: &Mat, qn: &Mat) -> Gaussian {
    let d = q.dim();
    let mut mean = Vector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(&q.mean);
    mean.rows_mut(d, d).copy_from(&(a * &q.mean));
    let cross = &q.cov * a.transpose();
    let mut cov = Mat::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&q.cov);
    cov.view_mut((0, d), (d, d)).copy_from(&cross);
    cov.view_mut((d, 0), (d, d)).copy_from(&cross.transpose());
    cov.view_mut((d, d), (d, d)).copy_from(&(a * &cross + qn));
    Gaussian::new(mean, cov)
}

pub fn filter(chain: &MarkovChain, sites: &[TiedSite]) -> Result<Filtered> {
    check_sites(chain, sites)?;
    let d = chain.state_dim();
    let mut marginals = Vec::with_capacity(chain.num_inducing());
    let mut pairs = Vec::with_capacity(sites.len());
    let mut log_c = Vec::with_capacity(sites.len());
    marginals.push(Gaussian::zero_mean(chain.p0().clone()));
    for (m, (site, tr)) in sites.iter().zip(&chain.transitions).enumerate() {
        let joint = propagate_pair(&marginals[m], &tr.a, &tr.q);
        let (post, lz) =
            condition_on_exp_quadratic(&joint, &site.lambda1, &site.lambda2).map_err(|e| {
                Error::FilterDivergence {
                    step: m,
                    reason: e.to_string(),
                }
            })?;
        if !lz.is_finite() || post.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::FilterDivergence {
                step: m,
                reason: "non-finite filtered moments".into(),
            });
        }
        log_c.push(lz + site.logz);
        marginals.push(post.block(d, d));
        pairs.push(post);
    }
    Ok(Filtered {
        marginals,
        pairs,
        log_c,
    })
}

pub fn smooth(chain: &MarkovChain, filtered: Filtered) -> Result<ChainPosterior> {
    let d = chain.state_dim();
    let big_m = chain.num_inducing();
    let mut marginals = vec![Gaussian::zero_mean(Mat::zeros(d, d)); big_m];
    let mut pairs = vec![Gaussian::zero_mean(Mat::zeros(2 * d, 2 * d)); big_m - 1];
    marginals[big_m - 1] = filtered.marginals[big_m - 1].clone();
    for m in (0..big_m - 1).rev() {
        let joint = &filtered.pairs[m];
        let c11 = joint.cov.view((0, 0), (d, d)).into_owned();
        let c12 = joint.cov.view((0, d), (d, d)).into_owned();
        let c22 = joint.cov.view((d, d), (d, d)).into_owned();
        let m1 = joint.mean.rows(0, d).into_owned();
        let m2 = joint.mean.rows(d, d).into_owned();
        let next = &marginals[m + 1];
        let chol = cholesky_jitter(&c22).map_err(|e| Error::FilterDivergence {
            step: m,
            reason: e.to_string(),
        })?;
        // G = C12 C22⁻¹
        let g = chol.solve(&c12.transpose()).transpose();
        let cs22 = &next.cov;
        let mean1 = &m1 + &g * (&next.mean - &m2);
        let cov11 = symmetrize(&(&c11 + &g * (cs22 - &c22) * g.transpose()));
        let cross = &g * cs22;
        let mut mean = Vector::zeros(2 * d);
        mean.rows_mut(0, d).copy_from(&mean1);
        mean.rows_mut(d, d).copy_from(&next.mean);
        let mut cov = Mat::zeros(2 * d, 2 * d);
        cov.view_mut((0, 0), (d, d)).copy_from(&cov11);
        cov.view_mut((0, d), (d, d)).copy_from(&cross);
        cov.view_mut((d, 0), (d, d)).copy_from(&cross.transpose());
        cov.view_mut((d, d), (d, d)).copy_from(cs22);
        pairs[m] = Gaussian::new(mean, cov);
        marginals[m] = Gaussian::new(mean1, cov11);
    }
    let log_norm = filtered.log_norm();
    Ok(ChainPosterior {
        marginals,
        pairs,
        log_norm,
        filtered,
    })
}

/// Filter then smooth.
pub fn posterior(chain: &MarkovChain, sites: &[TiedSite]) -> Result<ChainPosterior> {
    smooth(chain, filter(chain, sites)?)
}

/// `log ∫ p(u) ∏ t_m du` by a backward information filter.
///
/// Requires every process noise `Q_m` to be positive definite.
pub fn log_norm_backward(chain: &MarkovChain, sites: &[TiedSite]) -> Result<f64> {
    check_sites(chain, sites)?;
    let d = chain.state_dim();
    let mut big_b = Mat::zeros(d, d);
    let mut b = Vector::zeros(d);
    let mut c = 0.0;
    for (m, (site, tr)) in sites.iter().zip(&chain.transitions).enumerate().rev() {
        let step = |e: Error| Error::FilterDivergence {
            step: m,
            reason: e.to_string(),
        };
        let j = spd_inverse(&tr.q).map_err(step)?;
        let l2 = &site.lambda2;
        let l2aa = l2.view((0, 0), (d, d)).into_owned();
        let l2ba = l2.view((d, 0), (d, d)).into_owned();
        let l2bb = l2.view((d, d), (d, d)).into_owned();
        let kyy = symmetrize(&(&j + &l2bb + &big_b));
        let gm = &j * &tr.a - l2ba;
        let g = site.lambda1.rows(d, d).into_owned() + &b;
        let chol = cholesky_jitter(&kyy).map_err(step)?;
        let kg = chol.solve(&gm);
        let kv = chol.solve(&g);
        let new_b = symmetrize(&(tr.a.transpose() * &j * &tr.a + l2aa - gm.transpose() * &kg));
        let new_lin = site.lambda1.rows(0, d).into_owned() + gm.transpose() * &kv;
        let log_det_q = log_det_spd(&tr.q).map_err(step)?;
        let log_det_k = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        // The (2π)^{d/2} factors of N(y; Au, Q) and of the y-integral cancel.
        c += site.logz - 0.5 * log_det_q - 0.5 * log_det_k + 0.5 * g.dot(&kv);
        big_b = new_b;
        b = new_lin;
    }
    let prior = Gaussian::zero_mean(chain.p0().clone());
    Ok(c + log_expect_exp_quadratic(&prior, &b, &big_b)?)
}

/// Predictive `q(f(x))` given the conditional `N(W v, ν)`.
pub fn predict_from_conditional(
    post: &ChainPosterior,
    m: usize,
    fc: &FunctionConditional,
) -> Gaussian {
    post.pairs[m].project(&fc.w, &fc.nu)
}

/// `q(f(x))` at a temporal query, extrapolating with prior transitions off-grid.
pub fn predict_f(post: &ChainPosterior, chain: &MarkovChain, x: f64) -> Result<Gaussian> {
    let z = chain.grid.z();
    let h = &chain.sde.h;
    let zero = Mat::zeros(h.nrows(), h.nrows());
    if x < z[0] {
        let state = extrapolate_before(chain, &post.marginals[0], z[0] - x)?;
        return Ok(state.project(h, &zero));
    }
    if x > z[z.len() - 1] {
        let last = post.marginals.len() - 1;
        let state = extrapolate_after(chain, &post.marginals[last], x - z[z.len() - 1]);
        return Ok(state.project(h, &zero));
    }
    let m = chain.grid.segment_of(x)?;
    let fc = chain.function_conditional(m, x)?;
    Ok(predict_from_conditional(post, m, &fc))
}

/// State distribution `dt` before the first inducing input.
pub fn extrapolate_before(chain: &MarkovChain, first: &Gaussian, dt: f64) -> Result<Gaussian> {
    let p0 = chain.p0();
    let (a, _) = chain.sde.transition(dt);
    let p0_inv = spd_inverse(p0)?;
    let gain = p0 * a.transpose() * p0_inv;
    let resid = symmetrize(&(p0 - &gain * &a * p0));
    Ok(Gaussian::new(
        &gain * &first.mean,
        &gain * &first.cov * gain.transpose() + resid,
    ))
}

/// State distribution `dt` after the last inducing input.
pub fn extrapolate_after(chain: &MarkovChain, last: &Gaussian, dt: f64) -> Gaussian {
    let (a, q) = chain.sde.transition(dt);
    Gaussian::new(&a * &last.mean, &a * &last.cov * a.transpose() + q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::InducingGrid;
    use crate::kernels::{to_state_space, KernelSpec};

    fn scalar_chain() -> MarkovChain {
        let sde = to_state_space(&KernelSpec::Matern12 {
            variance: 1.0,
            lengthscale: 1.0,
        })
        .unwrap();
        MarkovChain::discretize(sde, InducingGrid::new(vec![0.0, 1.0]).unwrap())
    }

    #[test]
    fn zero_sites_recover_prior() {
        let sde = to_state_space(&KernelSpec::Matern32 {
            variance: 1.3,
            lengthscale: 0.8,
        })
        .unwrap();
        let chain = MarkovChain::discretize(sde, InducingGrid::linspace(0.0, 3.0, 5).unwrap());
        let sites = vec![TiedSite::zeros(2); 4];
        let post = posterior(&chain, &sites).unwrap();
        assert!(post.log_norm.abs() < 1e-14);
        for (m, g) in post.marginals.iter().enumerate() {
            assert!((&g.cov - chain.p0()).abs().max() < 1e-12, "marginal {m}");
            assert!(g.mean.amax() < 1e-14);
        }
        let top_right = post.pairs[1].cov.view((0, 2), (2, 2)).into_owned();
        let expect = chain.p0() * chain.transitions[1].a.transpose();
        assert!((top_right - expect).abs().max() < 1e-12);
    }

    #[test]
    fn scalar_bayes_on_left_state() {
        let chain = scalar_chain();
        let mut site = TiedSite::zeros(1);
        site.lambda1[0] = 2.0;
        site.lambda2[(0, 0)] = 1.0;
        let post = posterior(&chain, &[site]).unwrap();
        assert!((post.marginals[0].mean[0] - 1.0).abs() < 1e-12);
        assert!((post.marginals[0].cov[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn powered_site_checks_range() {
        let s = TiedSite {
            lambda1: Vector::from_vec(vec![1.0, 2.0]),
            lambda2: Mat::identity(2, 2),
            logz: -1.0,
        };
        assert_eq!(s.powered(1.0).unwrap(), s);
        let half = s.powered(0.5).unwrap();
        assert_eq!(half.mix(1.0, &half, 1.0), s);
        assert!(s.powered(0.0).is_err());
        assert!(s.powered(1.5).is_err());
    }

    #[test]
    fn predictions_at_inducing_inputs_use_marginals() {
        let chain = scalar_chain();
        let mut site = TiedSite::zeros(1);
        site.lambda1[1] = 1.0;
        site.lambda2[(1, 1)] = 2.0;
        let post = posterior(&chain, &[site]).unwrap();
        let p = predict_f(&post, &chain, 1.0).unwrap();
        assert!((p.mean[0] - post.marginals[1].mean[0]).abs() < 1e-14);
        assert!((p.cov[(0, 0)] - post.marginals[1].cov[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn extrapolation_reverts_to_prior() {
        let chain = scalar_chain();
        let mut site = TiedSite::zeros(1);
        site.lambda1[0] = 3.0;
        site.lambda2[(0, 0)] = 5.0;
        let post = posterior(&chain, &[site]).unwrap();
        let far = predict_f(&post, &chain, -100.0).unwrap();
        assert!(far.mean[0].abs() < 1e-12);
        assert!((far.cov[(0, 0)] - 1.0).abs() < 1e-12);
        let far = predict_f(&post, &chain, 100.0).unwrap();
        assert!((far.cov[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
