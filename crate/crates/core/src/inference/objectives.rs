//! Training objectives: ELBO, PEP energy and the filtering marginal likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::pep::cavity;
use crate::inference::InferenceState;
use crate::likelihoods::Likelihood;
use crate::linalg::{condition_on_exp_quadratic, ln_2pi, symmetrize, Gaussian, Mat, Vector};
use crate::posterior::TiedSite;
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Elbo,
    PepEnergy,
    FilterMarglik,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Elbo => "elbo",
            Objective::PepEnergy => "pep_energy",
            Objective::FilterMarglik => "filter_marglik",
        }
    }
}

fn sum_segments<F>(problem: &Problem, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let parts = (0..problem.chain.num_segments())
        .into_par_iter()
        .map(f)
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}

/// `Σ E_q log p(y_n|f_n) + log 𝓩 − Σ_m E_{q(v_m)} log t_m`.
pub fn elbo(problem: &Problem, state: &InferenceState) -> Result<f64> {
    state.check(problem)?;
    let post = state.posterior();
    let expected = sum_segments(problem, |m| {
        let q = &post.pairs[m];
        let mut s = 0.0;
        for &i in &problem.by_segment[m] {
            let d = &problem.data[i];
            let qf = q.project(&d.w, &d.nu);
            s += problem
                .lik
                .variational_expectation(d.y, &qf.mean, &qf.cov)?
                .value;
        }
        Ok(s - state.sites()[m].expected_log(q))
    })?;
    Ok(expected + post.log_norm)
}

/// `log E_cav[∏_n g_n^α]` for a Gaussian likelihood, exact over the segment.
fn gaussian_joint_log_z(
    problem: &Problem,
    variance: f64,
    idx: &[usize],
    cav: &Gaussian,
    alpha: f64,
) -> Result<f64> {
    let n = idx.len();
    let dim = cav.dim();
    let mut w = Mat::zeros(n, dim);
    let mut y = Vector::zeros(n);
    let mut noise = Mat::zeros(n, n);
    for (r, &i) in idx.iter().enumerate() {
        let d = &problem.data[i];
        w.row_mut(r).copy_from(&d.w.row(0));
        y[r] = d.y;
        noise[(r, r)] = variance / alpha + d.nu[(0, 0)];
    }
    let pred = cav.project(&w, &noise);
    let per_datum = 0.5 * (1.0 - alpha) * (ln_2pi() + variance.ln()) - 0.5 * alpha.ln();
    Ok(n as f64 * per_datum + pred.log_pdf(&y)?)
}

/// `(1/α) Σ_m [log Z_lik,m − log E_cav[t̃_m^α]] + log 𝓩 − Σ_m logz_m`, with
/// segment cavities `q(v_m) / t̃_m^α`.
pub fn pep_energy(problem: &Problem, state: &InferenceState, alpha: f64) -> Result<f64> {
    state.check(problem)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::ParameterDomain(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let post = state.posterior();
    let terms = sum_segments(problem, |m| {
        let site = &state.sites()[m];
        let idx = &problem.by_segment[m];
        let (cav, log_inv) =
            cavity(&post.pairs[m], site, alpha).map_err(|e| Error::FilterDivergence {
                step: m,
                reason: format!("cavity: {e}"),
            })?;
        // log E_cav[t̃^α] = −log E_q[t̃^{−α}]
        let log_site = -log_inv;
        let log_lik = match (&problem.lik, idx.is_empty()) {
            (_, true) => 0.0,
            (Likelihood::Gaussian { variance }, false) => {
                gaussian_joint_log_z(problem, *variance, idx, &cav, alpha)?
            }
            _ => {
                let mut s = 0.0;
                for &i in idx {
                    let d = &problem.data[i];
                    let qf = cav.project(&d.w, &d.nu);
                    s += problem
                        .lik
                        .log_partition(d.y, &qf.mean, &qf.cov, alpha)?
                        .log_z;
                }
                s
            }
        };
        Ok((log_lik - log_site) / alpha - site.logz)
    })?;
    Ok(terms + post.log_norm)
}

/// Marginal of `t(u_m, u_{m+1})` over `u_{m+1}`, with a pseudo-inverse for
/// rank-deficient right blocks.
fn left_marginal(site: &TiedSite, d: usize) -> (Vector, Mat) {
    let l2 = &site.lambda2;
    let aa = l2.view((0, 0), (d, d)).into_owned();
    let ab = l2.view((0, d), (d, d)).into_owned();
    let bb = l2.view((d, d), (d, d)).into_owned();
    let scale = bb.amax().max(1.0);
    let bb_pinv = symmetrize(&bb)
        .pseudo_inverse(1e-12 * scale)
        .unwrap_or_else(|_| Mat::zeros(d, d));
    let gain = &ab * bb_pinv;
    let l1 = site.lambda1.rows(0, d).into_owned() - &gain * site.lambda1.rows(d, d);
    let l2 = symmetrize(&(aa - &gain * ab.transpose()));
    (l1, l2)
}

/// `Σ_n log ∫ p(y_n|f_n) p(f_n|u_m) q^f(u_m) t^{k_n}(u_m) du_m` with
/// `k_n = N_left / N_m`.
pub fn filter_marglik(problem: &Problem, state: &InferenceState) -> Result<f64> {
    state.check(problem)?;
    let d = problem.state_dim();
    let filtered = &state.posterior().filtered;
    sum_segments(problem, |m| {
        let idx = &problem.by_segment[m];
        if idx.is_empty() {
            return Ok(0.0);
        }
        let n_m = idx.len() as f64;
        let prior = &filtered.marginals[m];
        let (l1, l2) = left_marginal(&state.sites()[m], d);
        let mut s = 0.0;
        for &i in idx {
            let datum = &problem.data[i];
            let k = datum.n_left as f64 / n_m;
            let q = if k == 0.0 {
                prior.clone()
            } else {
                condition_on_exp_quadratic(prior, &(&l1 * k), &(&l2 * k))
                    .map_err(|e| Error::FilterDivergence {
                        step: m,
                        reason: e.to_string(),
                    })?
                    .0
            };
            let qf = q.project(&datum.w_left, &datum.nu_left);
            s += problem
                .lik
                .log_partition(datum.y, &qf.mean, &qf.cov, 1.0)?
                .log_z;
        }
        Ok(s)
    })
}

pub fn evaluate(
    problem: &Problem,
    state: &InferenceState,
    objective: Objective,
    alpha: f64,
) -> Result<f64> {
    match objective {
        Objective::Elbo => elbo(problem, state),
        Objective::PepEnergy => pep_energy(problem, state, alpha),
        Objective::FilterMarglik => filter_marglik(problem, state),
    }
}
