//! Site updates, training objectives and the outer training loop.

pub mod cvi;
pub mod linearization;
pub mod objectives;
pub mod pep;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;
use crate::posterior::{posterior, ChainPosterior, TiedSite};
use crate::problem::Problem;

pub use objectives::Objective;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Site-update rule and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Cvi {
        #[serde(default = "one")]
        rho: f64,
    },
    Pep {
        alpha: f64,
        #[serde(default = "yes")]
        parallel: bool,
        /// Defaults to 0.5 for sequential updates on non-Gaussian likelihoods, 1 otherwise.
        #[serde(default)]
        damping: Option<f64>,
    },
    Pl {
        #[serde(default = "one")]
        damping: f64,
    },
    Eks {
        #[serde(default = "one")]
        damping: f64,
    },
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "{name} must lie in (0, 1], got {v}"
        )))
    }
}

impl Algorithm {
    pub fn validate(&self) -> Result<()> {
        match self {
            Algorithm::Cvi { rho } => check_unit("rho", *rho),
            Algorithm::Pep { alpha, damping, .. } => {
                check_unit("alpha", *alpha)?;
                damping.map_or(Ok(()), |d| check_unit("damping", d))
            }
            Algorithm::Pl { damping } | Algorithm::Eks { damping } => {
                check_unit("damping", *damping)
            }
        }
    }

    /// Short label such as `cvi`, `pep@0.01`, `pl`.
    pub fn label(&self) -> String {
        match self {
            Algorithm::Cvi { .. } => "cvi".into(),
            Algorithm::Pep { alpha, .. } => format!("pep@{alpha}"),
            Algorithm::Pl { .. } => "pl".into(),
            Algorithm::Eks { .. } => "eks".into(),
        }
    }

    /// Objective used for hyperparameter training by default.
    pub fn default_objective(&self) -> Objective {
        match self {
            Algorithm::Cvi { .. } => Objective::Elbo,
            _ => Objective::PepEnergy,
        }
    }

    /// Power used when evaluating the PEP energy for this algorithm.
    pub fn energy_alpha(&self) -> f64 {
        match self {
            Algorithm::Pep { alpha, .. } => *alpha,
            _ => 1.0,
        }
    }

    pub(crate) fn pep_damping(&self, lik: &Likelihood) -> f64 {
        match self {
            Algorithm::Pep {
                damping: Some(d), ..
            } => *d,
            Algorithm::Pep {
                parallel: false, ..
            } if !matches!(lik, Likelihood::Gaussian { .. }) => 0.5,
            _ => 1.0,
        }
    }
}

/// Sites together with the posterior they imply.
#[derive(Debug, Clone)]
pub struct InferenceState {
    sites: Vec<TiedSite>,
    posterior: ChainPosterior,
    /// Data skipped during the last sweep.
    pub skips: usize,
    pub iteration: usize,
}

impl InferenceState {
    /// Zero sites: the posterior equals the prior.
    pub fn new(problem: &Problem) -> Result<Self> {
        let sites = vec![TiedSite::zeros(problem.state_dim()); problem.chain.num_segments()];
        InferenceState::with_sites(problem, sites)
    }

    pub fn with_sites(problem: &Problem, sites: Vec<TiedSite>) -> Result<Self> {
        let posterior = posterior(&problem.chain, &sites)?;
        Ok(InferenceState {
            sites,
            posterior,
            skips: 0,
            iteration: 0,
        })
    }

    pub fn sites(&self) -> &[TiedSite] {
        &self.sites
    }

    pub fn posterior(&self) -> &ChainPosterior {
        &self.posterior
    }

    /// Replace the sites and rebuild the posterior.
    pub fn set_sites(&mut self, problem: &Problem, sites: Vec<TiedSite>) -> Result<()> {
        let post = posterior(&problem.chain, &sites)?;
        self.sites = sites;
        self.posterior = post;
        Ok(())
    }

    /// Rebuild the posterior, e.g. after the prior changed.
    pub fn refresh(&mut self, problem: &Problem) -> Result<()> {
        self.posterior = posterior(&problem.chain, &self.sites)?;
        Ok(())
    }

    pub(crate) fn check(&self, problem: &Problem) -> Result<()> {
        let segs = problem.chain.num_segments();
        let d2 = 2 * problem.state_dim();
        if self.sites.len() != segs || self.posterior.pairs.len() != segs {
            return Err(Error::Contract(format!(
                "state has {} sites and {} pairwise marginals for {segs} segments",
                self.sites.len(),
                self.posterior.pairs.len()
            )));
        }
        if self.posterior.pairs.first().is_some_and(|p| p.dim() != d2) {
            return Err(Error::Contract(
                "posterior does not match the problem's state dimension".into(),
            ));
        }
        Ok(())
    }
}

/// Largest absolute change in any natural parameter.
pub fn site_change(a: &[TiedSite], b: &[TiedSite]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(s, t)| {
            let d1 = (&s.lambda1 - &t.lambda1).amax();
            let d2 = (&s.lambda2 - &t.lambda2).amax();
            d1.max(d2)
        })
        .fold(0.0, f64::max)
}

/// One full site update; the posterior is refreshed afterwards.
pub fn sweep(problem: &Problem, state: &mut InferenceState, algorithm: &Algorithm) -> Result<()> {
    algorithm.validate()?;
    state.check(problem)?;
    let (sites, skips) = match algorithm {
        Algorithm::Cvi { rho } => (cvi::cvi_update(problem, state, *rho)?, 0),
        Algorithm::Pep {
            alpha,
            parallel: true,
            ..
        } => pep::pep_update_parallel(problem, state, *alpha, algorithm.pep_damping(&problem.lik))?,
        Algorithm::Pep {
            alpha,
            parallel: false,
            ..
        } => {
            let damping = algorithm.pep_damping(&problem.lik);
            let skips = pep::pep_update_sequential(problem, state, *alpha, damping)?;
            state.skips = skips;
            state.iteration += 1;
            return Ok(());
        }
        Algorithm::Pl { damping } => linearization::pl_update(problem, state, *damping)?,
        Algorithm::Eks { damping } => linearization::eks_update(problem, state, *damping)?,
    };
    state.set_sites(problem, sites)?;
    state.skips = skips;
    state.iteration += 1;
    Ok(())
}

/// Sweep until the largest site change drops to `tol` or `max_sweeps` is hit.
/// Returns the number of sweeps performed.
pub fn run_to_convergence(
    problem: &Problem,
    state: &mut InferenceState,
    algorithm: &Algorithm,
    max_sweeps: usize,
    tol: f64,
) -> Result<usize> {
    for i in 0..max_sweeps {
        let before = state.sites.clone();
        sweep(problem, state, algorithm)?;
        if site_change(&before, &state.sites) <= tol {
            return Ok(i + 1);
        }
    }
    Ok(max_sweeps)
}
