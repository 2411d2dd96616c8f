//! Predictive metrics.

use serde::Serialize;

use crate::cubature::{rule, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;
use crate::linalg::Gaussian;

/// Per-point quantities from which every summary metric is recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointScore {
    /// `log ∫ p(y|f) q(f) df`.
    pub log_pred: f64,
    /// Predictive mean of `y`.
    pub y_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean negative log predictive density per test point.
    pub nlpd: f64,
    pub rmse: f64,
    /// Fraction misclassified at threshold 0.5 (Bernoulli only).
    pub error_rate: Option<f64>,
}

/// `E_q[E[y | f]]`.
pub fn predictive_mean(lik: &Likelihood, q: &Gaussian) -> Result<f64> {
    match lik {
        Likelihood::Gaussian { .. } | Likelihood::HeteroscedasticGaussian => Ok(q.mean[0]),
        Likelihood::PoissonLog { bin_width } => {
            Ok(bin_width * (q.mean[0] + 0.5 * q.cov[(0, 0)]).exp())
        }
        Likelihood::BernoulliLogit => {
            let r = rule(q.dim(), DEFAULT_ORDER)?;
            Ok(r.points(&q.mean, &q.cov)
                .iter()
                .zip(&r.weights)
                .map(|(p, w)| w * lik.conditional_moments(p.as_slice()).mean)
                .sum())
        }
    }
}

pub fn score_points(lik: &Likelihood, preds: &[Gaussian], y: &[f64]) -> Result<Vec<PointScore>> {
    if preds.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            preds.len(),
            y.len()
        )));
    }
    preds
        .iter()
        .zip(y)
        .map(|(q, &yi)| {
            Ok(PointScore {
                log_pred: lik.log_partition(yi, &q.mean, &q.cov, 1.0)?.log_z,
                y_mean: predictive_mean(lik, q)?,
            })
        })
        .collect()
}

pub fn summarize(lik: &Likelihood, scores: &[PointScore], y: &[f64]) -> Metrics {
    let n = scores.len().max(1) as f64;
    let nlpd = -scores.iter().map(|s| s.log_pred).sum::<f64>() / n;
    let rmse = (scores
        .iter()
        .zip(y)
        .map(|(s, yi)| (s.y_mean - yi).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let error_rate = matches!(lik, Likelihood::BernoulliLogit).then(|| {
        scores
            .iter()
            .zip(y)
            .filter(|(s, &yi)| (s.y_mean >= 0.5) != (yi == 1.0))
            .count() as f64
            / n
    });
    Metrics {
        nlpd,
        rmse,
        error_rate,
    }
}

pub fn evaluate(lik: &Likelihood, preds: &[Gaussian], y: &[f64]) -> Result<Metrics> {
    Ok(summarize(lik, &score_points(lik, preds, y)?, y))
}
