//! Posterior linearisation (statistical linear regression) and the extended
//! Kalman variant (first-order Taylor expansion at the posterior mean).

use rayon::prelude::*;

use crate::error::Result;
use crate::inference::InferenceState;
use crate::linalg::{cholesky_jitter, symmetrize, Mat, Vector};
use crate::posterior::TiedSite;
use crate::problem::{Datum, Problem};

/// Linearised observation `y ≈ Ω f + b + e`, `e ~ N(0, Σ̃)`.
struct Linearization {
    omega: Vector,
    offset_mean: f64,
    noise: f64,
}

#[derive(Clone, Copy)]
enum Kind {
    Statistical,
    Taylor,
}

fn linearize(problem: &Problem, kind: Kind, mean: &Vector, cov: &Mat) -> Option<Linearization> {
    match kind {
        Kind::Statistical => {
            let slr = problem.lik.slr(mean, cov).ok()?;
            let chol = cholesky_jitter(cov).ok()?;
            let omega = chol.solve(&slr.cross);
            let noise = slr.var - slr.cross.dot(&omega);
            Some(Linearization {
                omega,
                offset_mean: slr.mean,
                noise,
            })
        }
        Kind::Taylor => {
            let cm = problem.lik.conditional_moments(mean.as_slice());
            Some(Linearization {
                omega: cm.d_mean,
                offset_mean: cm.mean,
                noise: cm.var,
            })
        }
    }
}

/// Site contribution `λ2 = WᵀΩᵀΣ̃⁻¹ΩW`, `λ1 = λ2 μ_v + WᵀΩᵀΣ̃⁻¹(y − ω)`.
fn datum_site(
    problem: &Problem,
    kind: Kind,
    d: &Datum,
    mu_v: &Vector,
    q: &crate::linalg::Gaussian,
) -> Option<TiedSite> {
    let qf = q.project(&d.w, &d.nu);
    let lin = linearize(problem, kind, &qf.mean, &qf.cov)?;
    if !(lin.noise.is_finite() && lin.noise > 0.0) || lin.omega.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ow = d.w.transpose() * &lin.omega;
    let lambda2 = symmetrize(&(&ow * ow.transpose() / lin.noise));
    let lambda1 = &lambda2 * mu_v + &ow * ((d.y - lin.offset_mean) / lin.noise);
    Some(TiedSite {
        lambda1,
        lambda2,
        logz: 0.0,
    })
}

fn update(
    problem: &Problem,
    state: &InferenceState,
    damping: f64,
    kind: Kind,
) -> Result<(Vec<TiedSite>, usize)> {
    state.check(problem)?;
    let d = problem.state_dim();
    let out: Vec<(TiedSite, usize)> = (0..problem.chain.num_segments())
        .into_par_iter()
        .map(|m| {
            let q = &state.posterior().pairs[m];
            let old = &state.sites()[m];
            let idx = &problem.by_segment[m];
            if idx.is_empty() {
                return (old.clone(), 0);
            }
            let mut acc = TiedSite::zeros(d);
            let mut skipped = 0;
            for &i in idx {
                match datum_site(problem, kind, &problem.data[i], &q.mean, q) {
                    Some(s) => acc = acc.mix(1.0, &s, 1.0),
                    None => skipped += 1,
                }
            }
            let target = acc.mix(1.0, old, skipped as f64 / idx.len() as f64);
            let mut site = old.mix(1.0 - damping, &target, damping);
            site.logz = 0.0;
            (site, skipped)
        })
        .collect();
    let skips = out.iter().map(|(_, s)| s).sum();
    Ok((out.into_iter().map(|(s, _)| s).collect(), skips))
}

pub fn pl_update(
    problem: &Problem,
    state: &InferenceState,
    damping: f64,
) -> Result<(Vec<TiedSite>, usize)> {
    update(problem, state, damping, Kind::Statistical)
}

pub fn eks_update(
    problem: &Problem,
    state: &InferenceState,
    damping: f64,
) -> Result<(Vec<TiedSite>, usize)> {
    update(problem, state, damping, Kind::Taylor)
}
