//! Conjugate-computation variational inference on tied sites.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::InferenceState;
use crate::linalg::{symmetrize, Mat, Vector};
use crate::posterior::TiedSite;
use crate::problem::Problem;

/// Natural-gradient target for one segment: `λ2 = −2 Σ Wᵀ(∂L/∂Σ)W`,
/// `λ1 = Σ Wᵀ ∂L/∂μ − 2 Wᵀ(∂L/∂Σ)W μ_v`.
fn segment_target(problem: &Problem, state: &InferenceState, m: usize) -> Result<TiedSite> {
    let q = &state.posterior().pairs[m];
    let dim = q.dim();
    let mut g1 = Vector::zeros(dim);
    let mut g2 = Mat::zeros(dim, dim);
    for &i in &problem.by_segment[m] {
        let d = &problem.data[i];
        let qf = q.project(&d.w, &d.nu);
        let ve = problem
            .lik
            .variational_expectation(d.y, &qf.mean, &qf.cov)?;
        let g2n = d.w.transpose() * &ve.d_cov * &d.w;
        g1 += d.w.transpose() * &ve.d_mean - (&g2n * &q.mean) * 2.0;
        g2 += g2n;
    }
    Ok(TiedSite {
        lambda1: g1,
        lambda2: symmetrize(&(g2 * -2.0)),
        logz: 0.0,
    })
}

/// `λ ← (1 − ρ) λ + ρ g`, segment by segment.
pub fn cvi_update(problem: &Problem, state: &InferenceState, rho: f64) -> Result<Vec<TiedSite>> {
    state.check(problem)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::ParameterDomain(format!(
            "rho must lie in [0, 1], got {rho}"
        )));
    }
    if rho == 0.0 {
        return Ok(state.sites().to_vec());
    }
    (0..problem.chain.num_segments())
        .into_par_iter()
        .map(|m| {
            let target = segment_target(problem, state, m)?;
            let mut site = state.sites()[m].mix(1.0 - rho, &target, rho);
            site.logz = 0.0;
            Ok(site)
        })
        .collect()
}
