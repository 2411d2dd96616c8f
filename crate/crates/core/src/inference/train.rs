//! Alternating site sweeps and Adam steps on log-space hyperparameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::InducingGrid;
use crate::error::{Error, Result};
use crate::inference::objectives::{self, Objective};
use crate::inference::{sweep, Algorithm, InferenceState};
use crate::kernels::KernelSpec;
use crate::likelihoods::Likelihood;
use crate::posterior::TiedSite;
use crate::problem::Problem;

/// Anything that can rebuild a [`Problem`] from log-space hyperparameters.
pub trait ModelBuilder: Sync {
    fn initial_params(&self) -> Vec<f64>;
    fn param_names(&self) -> Vec<String>;
    fn build(&self, log_params: &[f64]) -> Result<Problem>;
}

/// Temporal model on a fixed inducing grid.
#[derive(Debug, Clone)]
pub struct TemporalModel {
    pub kernel: KernelSpec,
    pub lik: Likelihood,
    pub grid: InducingGrid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ModelBuilder for TemporalModel {
    fn initial_params(&self) -> Vec<f64> {
        let mut p = self.kernel.log_params();
        p.extend(self.lik.log_params());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self
            .kernel
            .param_names()
            .into_iter()
            .map(|s| format!("kernel.{s}"))
            .collect();
        n.extend(
            self.lik
                .param_names()
                .into_iter()
                .map(|s| format!("likelihood.{s}")),
        );
        n
    }

    fn build(&self, p: &[f64]) -> Result<Problem> {
        let nk = self.kernel.log_params().len();
        if p.len() != nk + self.lik.log_params().len() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.initial_params().len(),
                p.len()
            )));
        }
        let kernel = self.kernel.with_log_params(&p[..nk])?;
        let lik = self.lik.with_log_params(&p[nk..])?;
        Problem::temporal(&kernel, lik, self.grid.clone(), &self.x, &self.y)
    }
}

fn default_iterations() -> usize {
    500
}

fn default_lr() -> f64 {
    0.01
}

fn default_eps() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_eps")]
    pub fd_epsilon: f64,
    /// Defaults to the algorithm's own objective.
    #[serde(default)]
    pub objective: Option<Objective>,
    #[serde(default)]
    pub seed: u64,
    /// Hyperparameter names held at their initial values.
    #[serde(default)]
    pub fixed: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: default_iterations(),
            learning_rate: default_lr(),
            fd_epsilon: default_eps(),
            objective: None,
            seed: 0,
            fixed: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.fd_epsilon > 0.0) {
            return Err(Error::Config(
                "learning_rate and fd_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Hyperparameters on their natural (exponentiated) scale.
    pub params: Vec<f64>,
    pub skips: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub log_params: Vec<f64>,
    pub param_names: Vec<String>,
    pub problem: Problem,
    pub state: InferenceState,
    pub trace: Vec<TraceRow>,
}

fn objective_at(
    builder: &dyn ModelBuilder,
    params: &[f64],
    sites: &[TiedSite],
    objective: Objective,
    alpha: f64,
) -> Result<f64> {
    let problem = builder.build(params)?;
    let state = InferenceState::with_sites(&problem, sites.to_vec())?;
    objectives::evaluate(&problem, &state, objective, alpha)
}

/// Central finite-difference gradient over the free parameters, sites held fixed.
pub fn objective_gradient(
    builder: &dyn ModelBuilder,
    params: &[f64],
    free: &[usize],
    sites: &[TiedSite],
    objective: Objective,
    alpha: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    let evals: Vec<Result<f64>> = free
        .par_iter()
        .flat_map_iter(|&i| [(i, eps), (i, -eps)])
        .map(|(i, h)| {
            let mut p = params.to_vec();
            p[i] += h;
            objective_at(builder, &p, sites, objective, alpha)
        })
        .collect();
    let evals = evals.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut grad = vec![0.0; params.len()];
    for (j, &i) in free.iter().enumerate() {
        grad[i] = (evals[2 * j] - evals[2 * j + 1]) / (2.0 * eps);
    }
    Ok(grad)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// Ascent step.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Train sites and hyperparameters. Each iteration runs one site sweep and
/// then one Adam step on the objective.
pub fn fit(
    builder: &dyn ModelBuilder,
    algorithm: &Algorithm,
    config: &TrainConfig,
) -> Result<FitResult> {
    algorithm.validate()?;
    config.validate()?;
    let names = builder.param_names();
    if let Some(bad) = config.fixed.iter().find(|f| !names.contains(f)) {
        return Err(Error::Config(format!(
            "unknown hyperparameter `{bad}`; known: {}",
            names.join(", ")
        )));
    }
    let free: Vec<usize> = (0..names.len())
        .filter(|&i| !config.fixed.contains(&names[i]))
        .collect();
    let objective = config
        .objective
        .unwrap_or_else(|| algorithm.default_objective());
    let alpha = algorithm.energy_alpha();

    let mut params = builder.initial_params();
    let mut problem = builder.build(&params)?;
    let mut state = InferenceState::new(&problem)?;
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let wrap = |e: Error| Error::Training {
            iteration,
            source: Box::new(e),
        };
        sweep(&problem, &mut state, algorithm).map_err(wrap)?;
        let value = objectives::evaluate(&problem, &state, objective, alpha).map_err(wrap)?;
        trace.push(TraceRow {
            iteration,
            objective: value,
            params: params.iter().map(|p| p.exp()).collect(),
            skips: state.skips,
        });
        if free.is_empty() {
            continue;
        }
        let grad = objective_gradient(
            builder,
            &params,
            &free,
            state.sites(),
            objective,
            alpha,
            config.fd_epsilon,
        )
        .map_err(wrap)?;
        adam.step(&mut params, &grad);
        problem = builder.build(&params).map_err(wrap)?;
        state.refresh(&problem).map_err(wrap)?;
    }
    Ok(FitResult {
        log_params: params,
        param_names: names,
        problem,
        state,
        trace,
    })
}
