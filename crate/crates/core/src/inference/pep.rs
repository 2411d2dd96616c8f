//! Power expectation propagation on tied sites.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::InferenceState;
use crate::linalg::{
    condition_on_exp_quadratic, log_expect_exp_quadratic, symmetrize, Gaussian, Mat,
};
use crate::posterior::TiedSite;
use crate::problem::{Datum, Problem};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// `q(v) / t̃^k`, ignoring the site constant. Also returns `log E_q[t̃^{-k}]`.
pub fn cavity(q: &Gaussian, site: &TiedSite, k: f64) -> Result<(Gaussian, f64)> {
    condition_on_exp_quadratic(q, &(&site.lambda1 * -k), &(&site.lambda2 * -k))
}

/// New site fraction `q*/cavity` for one datum, with its log constant chosen
/// so that `∫ cavity · fraction = Z_n`. `None` when the tilted moments
/// cannot be turned into a proper update.
pub fn site_fraction(problem: &Problem, cav: &Gaussian, d: &Datum, alpha: f64) -> Option<TiedSite> {
    let o = d.w.nrows();
    let mean_f = &d.w * &cav.mean;
    let s_v = symmetrize(&(&d.w * &cav.cov * d.w.transpose()));
    let s_f = &s_v + &d.nu;
    let lp = problem.lik.log_partition(d.y, &mean_f, &s_f, alpha).ok()?;
    if !lp.log_z.is_finite() {
        return None;
    }
    let a = Mat::identity(o, o) + &lp.d2 * &s_v;
    let a_inv = a.try_inverse()?;
    let pi = symmetrize(&(-(&a_inv * &lp.d2)));
    let b = &pi * &mean_f + &a_inv * &lp.d1;
    // The fraction only depends on v through W v, so its normaliser under
    // the cavity is an o-dimensional expectation.
    let norm = log_expect_exp_quadratic(&Gaussian::new(mean_f, s_v), &b, &pi).ok()?;
    let lambda2 = symmetrize(&(d.w.transpose() * &pi * &d.w));
    let lambda1 = d.w.transpose() * b;
    let frac = TiedSite {
        lambda1,
        lambda2,
        logz: lp.log_z - norm,
    };
    frac.lambda1.iter().all(|v| v.is_finite()).then_some(frac)
}

/// All data see cavities from the same posterior; `λ ← (1 − α) λ + Σ_n fraction_n`.
pub fn pep_update_parallel(
    problem: &Problem,
    state: &InferenceState,
    alpha: f64,
    damping: f64,
) -> Result<(Vec<TiedSite>, usize)> {
    state.check(problem)?;
    check_alpha(alpha)?;
    let d = problem.state_dim();
    let out: Vec<(TiedSite, usize)> = (0..problem.chain.num_segments())
        .into_par_iter()
        .map(|m| {
            let old = &state.sites()[m];
            let idx = &problem.by_segment[m];
            let n_m = idx.len();
            if n_m == 0 {
                return (old.clone(), 0);
            }
            let k = alpha / n_m as f64;
            let Ok((cav, _)) = cavity(&state.posterior().pairs[m], old, k) else {
                return (old.clone(), n_m);
            };
            let mut acc = TiedSite::zeros(d);
            let mut skipped = 0;
            for &i in idx {
                match site_fraction(problem, &cav, &problem.data[i], alpha) {
                    Some(f) => acc = acc.mix(1.0, &f, 1.0),
                    None => skipped += 1,
                }
            }
            let kept = ((n_m - skipped) as f64 * (1.0 - alpha) + skipped as f64) / n_m as f64;
            let target = acc.mix(1.0, old, kept);
            (old.mix(1.0 - damping, &target, damping), skipped)
        })
        .collect();
    let skips = out.iter().map(|(_, s)| s).sum();
    Ok((out.into_iter().map(|(s, _)| s).collect(), skips))
}

/// Datum-by-datum updates. Within a segment the pairwise marginal is updated
/// in place; the full posterior is rebuilt after each segment.
pub fn pep_update_sequential(
    problem: &Problem,
    state: &mut InferenceState,
    alpha: f64,
    damping: f64,
) -> Result<usize> {
    state.check(problem)?;
    check_alpha(alpha)?;
    let mut skips = 0;
    for m in 0..problem.chain.num_segments() {
        let idx = &problem.by_segment[m];
        if idx.is_empty() {
            continue;
        }
        let k = alpha / idx.len() as f64;
        let mut q = state.posterior().pairs[m].clone();
        let mut site = state.sites()[m].clone();
        for &i in idx {
            let Ok((cav, _)) = cavity(&q, &site, k) else {
                skips += 1;
                continue;
            };
            let Some(frac) = site_fraction(problem, &cav, &problem.data[i], alpha) else {
                skips += 1;
                continue;
            };
            let proposed = site.mix(1.0 - k, &frac, 1.0);
            let next = site.mix(1.0 - damping, &proposed, damping);
            let delta = next.mix(1.0, &site, -1.0);
            match condition_on_exp_quadratic(&q, &delta.lambda1, &delta.lambda2) {
                Ok((q_new, _)) => {
                    q = q_new;
                    site = next;
                }
                Err(_) => skips += 1,
            }
        }
        let mut sites = state.sites().to_vec();
        sites[m] = site;
        state.set_sites(problem, sites)?;
    }
    Ok(skips)
}
