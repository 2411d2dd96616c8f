//! Covariance functions and their state-space (LTI-SDE) form.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, inf_norm, kron, symmetrize, Mat};

/// Continuous-time linear SDE `ds = F s dt + L dβ`, `f = H s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSde {
    pub f: Mat,
    pub l: Mat,
    pub h: Mat,
    pub qc: Mat,
    pub p0: Mat,
}

impl LtiSde {
    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.l.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    /// `‖F P0 + P0 Fᵀ + L Qc Lᵀ‖_∞ / ‖P0‖_∞`.
    pub fn lyapunov_residual(&self) -> f64 {
        let r = &self.f * &self.p0
            + &self.p0 * self.f.transpose()
            + &self.l * &self.qc * self.l.transpose();
        inf_norm(&r) / inf_norm(&self.p0).max(f64::MIN_POSITIVE)
    }

    /// Transition `A = expm(F Δ)` and process noise `Q = P0 − A P0 Aᵀ`.
    pub fn transition(&self, dt: f64) -> (Mat, Mat) {
        let d = self.state_dim();
        if dt == 0.0 {
            return (Mat::identity(d, d), Mat::zeros(d, d));
        }
        let a = (&self.f * dt).exp();
        let q = symmetrize(&(&self.p0 - &a * &self.p0 * a.transpose()));
        (a, q)
    }
}

/// Kernel description; also the serialised form used in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Matern12 {
        variance: f64,
        lengthscale: f64,
    },
    Matern32 {
        variance: f64,
        lengthscale: f64,
    },
    Matern52 {
        variance: f64,
        lengthscale: f64,
    },
    Matern72 {
        variance: f64,
        lengthscale: f64,
    },
    Cosine {
        variance: f64,
        frequency: f64,
    },
    /// Cosine(frequency) × Matern12(variance, lengthscale).
    QuasiPeriodic {
        variance: f64,
        lengthscale: f64,
        frequency: f64,
    },
    Sum {
        components: Vec<KernelSpec>,
    },
    IndependentStack {
        components: Vec<KernelSpec>,
    },
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn check_frequency(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "frequency must be non-negative, got {v}"
        )))
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u64) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        use KernelSpec::*;
        match self {
            Matern12 {
                variance,
                lengthscale,
            }
            | Matern32 {
                variance,
                lengthscale,
            }
            | Matern52 {
                variance,
                lengthscale,
            }
            | Matern72 {
                variance,
                lengthscale,
            } => {
                check_positive("variance", *variance)?;
                check_positive("lengthscale", *lengthscale)
            }
            Cosine {
                variance,
                frequency,
            } => {
                check_positive("variance", *variance)?;
                check_frequency(*frequency)
            }
            QuasiPeriodic {
                variance,
                lengthscale,
                frequency,
            } => {
                check_positive("variance", *variance)?;
                check_positive("lengthscale", *lengthscale)?;
                check_frequency(*frequency)
            }
            Sum { components } | IndependentStack { components } => {
                if components.is_empty() {
                    return Err(Error::ParameterDomain(
                        "composite kernel needs at least one component".into(),
                    ));
                }
                components.iter().try_for_each(|c| c.validate())
            }
        }
    }

    /// Number of latent outputs.
    pub fn output_dim(&self) -> usize {
        match self {
            KernelSpec::IndependentStack { components } => {
                components.iter().map(|c| c.output_dim()).sum()
            }
            _ => 1,
        }
    }

    pub fn state_dim(&self) -> usize {
        use KernelSpec::*;
        match self {
            Matern12 { .. } => 1,
            Matern32 { .. } | Cosine { .. } | QuasiPeriodic { .. } => 2,
            Matern52 { .. } => 3,
            Matern72 { .. } => 4,
            Sum { components } | IndependentStack { components } => {
                components.iter().map(|c| c.state_dim()).sum()
            }
        }
    }

    /// Trainable hyperparameters in log space. Frequencies are held fixed.
    pub fn log_params(&self) -> Vec<f64> {
        use KernelSpec::*;
        match self {
            Matern12 {
                variance,
                lengthscale,
            }
            | Matern32 {
                variance,
                lengthscale,
            }
            | Matern52 {
                variance,
                lengthscale,
            }
            | Matern72 {
                variance,
                lengthscale,
            }
            | QuasiPeriodic {
                variance,
                lengthscale,
                ..
            } => vec![variance.ln(), lengthscale.ln()],
            Cosine { variance, .. } => vec![variance.ln()],
            Sum { components } | IndependentStack { components } => {
                components.iter().flat_map(|c| c.log_params()).collect()
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        use KernelSpec::*;
        match self {
            Cosine { .. } => vec!["variance".into()],
            Sum { components } | IndependentStack { components } => components
                .iter()
                .enumerate()
                .flat_map(|(i, c)| c.param_names().into_iter().map(move |n| format!("{i}.{n}")))
                .collect(),
            _ => vec!["variance".into(), "lengthscale".into()],
        }
    }

    /// Copy of `self` with hyperparameters replaced from a log-space vector.
    pub fn with_log_params(&self, p: &[f64]) -> Result<KernelSpec> {
        let (k, used) = self.take_log_params(p)?;
        if used != p.len() {
            return Err(Error::Dimension(format!(
                "expected {used} kernel parameters, got {}",
                p.len()
            )));
        }
        Ok(k)
    }

    fn take_log_params(&self, p: &[f64]) -> Result<(KernelSpec, usize)> {
        use KernelSpec::*;
        let need = |n: usize| -> Result<()> {
            if p.len() < n {
                Err(Error::Dimension(format!(
                    "kernel parameter vector too short: {}",
                    p.len()
                )))
            } else {
                Ok(())
            }
        };
        let out = match self {
            Matern12 { .. } => {
                need(2)?;
                (
                    Matern12 {
                        variance: p[0].exp(),
                        lengthscale: p[1].exp(),
                    },
                    2,
                )
            }
            Matern32 { .. } => {
                need(2)?;
                (
                    Matern32 {
                        variance: p[0].exp(),
                        lengthscale: p[1].exp(),
                    },
                    2,
                )
            }
            Matern52 { .. } => {
                need(2)?;
                (
                    Matern52 {
                        variance: p[0].exp(),
                        lengthscale: p[1].exp(),
                    },
                    2,
                )
            }
            Matern72 { .. } => {
                need(2)?;
                (
                    Matern72 {
                        variance: p[0].exp(),
                        lengthscale: p[1].exp(),
                    },
                    2,
                )
            }
            Cosine { frequency, .. } => {
                need(1)?;
                (
                    Cosine {
                        variance: p[0].exp(),
                        frequency: *frequency,
                    },
                    1,
                )
            }
            QuasiPeriodic { frequency, .. } => {
                need(2)?;
                (
                    QuasiPeriodic {
                        variance: p[0].exp(),
                        lengthscale: p[1].exp(),
                        frequency: *frequency,
                    },
                    2,
                )
            }
            Sum { components } | IndependentStack { components } => {
                let mut used = 0;
                let mut out = Vec::with_capacity(components.len());
                for c in components {
                    let (k, n) = c.take_log_params(&p[used..])?;
                    out.push(k);
                    used += n;
                }
                let k = if matches!(self, Sum { .. }) {
                    Sum { components: out }
                } else {
                    IndependentStack { components: out }
                };
                (k, used)
            }
        };
        Ok(out)
    }
}

/// Companion-form Matérn system of order `p + 1` (smoothness `p + ½`).
fn matern_sde(p: u64, variance: f64, lengthscale: f64) -> Result<LtiSde> {
    let d = (p + 1) as usize;
    let nu = p as f64 + 0.5;
    let lam = (2.0 * nu).sqrt() / lengthscale;
    let mut f = Mat::zeros(d, d);
    for i in 0..d - 1 {
        f[(i, i + 1)] = 1.0;
    }
    for k in 0..d {
        f[(d - 1, k)] = -binomial(p + 1, k as u64) * lam.powi((p + 1 - k as u64) as i32);
    }
    let mut l = Mat::zeros(d, 1);
    l[(d - 1, 0)] = 1.0;
    let mut h = Mat::zeros(1, d);
    h[(0, 0)] = 1.0;
    let fp = factorial(p);
    let q = variance * 2.0 * fp * fp * 4f64.powi(p as i32) / factorial(2 * p)
        * lam.powi(2 * p as i32 + 1);
    let qc = Mat::from_element(1, 1, q);
    let p0 = solve_stationary(&f, &l, &qc)?;
    Ok(LtiSde { f, l, h, qc, p0 })
}

fn cosine_sde(variance: f64, frequency: f64) -> LtiSde {
    LtiSde {
        f: Mat::from_row_slice(2, 2, &[0.0, -frequency, frequency, 0.0]),
        l: Mat::identity(2, 2),
        h: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        qc: Mat::zeros(2, 2),
        p0: Mat::identity(2, 2) * variance,
    }
}

/// Build the LTI-SDE of a kernel.
pub fn to_state_space(spec: &KernelSpec) -> Result<LtiSde> {
    spec.validate()?;
    use KernelSpec::*;
    match spec {
        Matern12 {
            variance,
            lengthscale,
        } => matern_sde(0, *variance, *lengthscale),
        Matern32 {
            variance,
            lengthscale,
        } => matern_sde(1, *variance, *lengthscale),
        Matern52 {
            variance,
            lengthscale,
        } => matern_sde(2, *variance, *lengthscale),
        Matern72 {
            variance,
            lengthscale,
        } => matern_sde(3, *variance, *lengthscale),
        Cosine {
            variance,
            frequency,
        } => Ok(cosine_sde(*variance, *frequency)),
        QuasiPeriodic {
            variance,
            lengthscale,
            frequency,
        } => {
            let c = cosine_sde(1.0, *frequency);
            let m = matern_sde(0, *variance, *lengthscale)?;
            let dm = m.state_dim();
            let f = kron(&c.f, &Mat::identity(dm, dm)) + kron(&Mat::identity(2, 2), &m.f);
            Ok(LtiSde {
                f,
                l: kron(&Mat::identity(2, 2), &m.l),
                h: kron(&c.h, &m.h),
                qc: kron(&Mat::identity(2, 2), &m.qc),
                p0: kron(&c.p0, &m.p0),
            })
        }
        Sum { components } | IndependentStack { components } => {
            let parts = components
                .iter()
                .map(to_state_space)
                .collect::<Result<Vec<_>>>()?;
            let f = block_diag(&parts.iter().map(|s| s.f.clone()).collect::<Vec<_>>());
            let l = block_diag(&parts.iter().map(|s| s.l.clone()).collect::<Vec<_>>());
            let qc = block_diag(&parts.iter().map(|s| s.qc.clone()).collect::<Vec<_>>());
            let p0 = block_diag(&parts.iter().map(|s| s.p0.clone()).collect::<Vec<_>>());
            let hs: Vec<Mat> = parts.iter().map(|s| s.h.clone()).collect();
            let h = if matches!(spec, Sum { .. }) {
                let stacked = block_diag(&hs);
                let mut row = Mat::zeros(1, stacked.ncols());
                for r in stacked.row_iter() {
                    row += r;
                }
                row
            } else {
                block_diag(&hs)
            };
            Ok(LtiSde { f, l, h, qc, p0 })
        }
    }
}

/// Eigenvalues of a real square matrix.
fn eigenvalues(f: &Mat) -> Vec<Complex<f64>> {
    f.clone().complex_eigenvalues().iter().copied().collect()
}

/// Solve `F P + P Fᵀ + L Qc Lᵀ = 0` by vectorisation.
pub fn solve_stationary(f: &Mat, l: &Mat, qc: &Mat) -> Result<Mat> {
    let d = f.nrows();
    if let Some(bad) = eigenvalues(f).into_iter().find(|e| e.re >= 0.0) {
        return Err(Error::Stability(format!(
            "eigenvalue {} + {}i has non-negative real part",
            bad.re, bad.im
        )));
    }
    let id = Mat::identity(d, d);
    let sys = kron(&id, f) + kron(f, &id);
    let rhs = -(l * qc * l.transpose());
    let vec_rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = sys
        .lu()
        .solve(&vec_rhs)
        .ok_or_else(|| Error::Stability("Lyapunov system is singular".into()))?;
    Ok(symmetrize(&Mat::from_column_slice(d, d, sol.as_slice())))
}

fn matern_closed_form(p: u32, variance: f64, lengthscale: f64, tau: f64) -> f64 {
    let r = tau.abs();
    let a = (2.0 * p as f64 + 1.0).sqrt() * r / lengthscale;
    let poly = match p {
        0 => 1.0,
        1 => 1.0 + a,
        2 => 1.0 + a + a * a / 3.0,
        _ => 1.0 + a + 0.4 * a * a + a * a * a / 15.0,
    };
    variance * poly * (-a).exp()
}

/// Closed-form covariance matrix (o×o) at offset `tau`.
pub fn kernel_matrix(spec: &KernelSpec, tau: f64) -> Mat {
    use KernelSpec::*;
    let scalar = |v: f64| Mat::from_element(1, 1, v);
    match spec {
        Matern12 {
            variance,
            lengthscale,
        } => scalar(matern_closed_form(0, *variance, *lengthscale, tau)),
        Matern32 {
            variance,
            lengthscale,
        } => scalar(matern_closed_form(1, *variance, *lengthscale, tau)),
        Matern52 {
            variance,
            lengthscale,
        } => scalar(matern_closed_form(2, *variance, *lengthscale, tau)),
        Matern72 {
            variance,
            lengthscale,
        } => scalar(matern_closed_form(3, *variance, *lengthscale, tau)),
        Cosine {
            variance,
            frequency,
        } => scalar(variance * (frequency * tau).cos()),
        QuasiPeriodic {
            variance,
            lengthscale,
            frequency,
        } => scalar((frequency * tau).cos() * matern_closed_form(0, *variance, *lengthscale, tau)),
        Sum { components } => scalar(
            components
                .iter()
                .map(|c| kernel_matrix(c, tau)[(0, 0)])
                .sum(),
        ),
        IndependentStack { components } => block_diag(
            &components
                .iter()
                .map(|c| kernel_matrix(c, tau))
                .collect::<Vec<_>>(),
        ),
    }
}

/// Closed-form covariance of the first latent output at offset `tau`.
pub fn kernel_eval(spec: &KernelSpec, tau: f64) -> f64 {
    kernel_matrix(spec, tau)[(0, 0)]
}

/// `H expm(F τ) P0 Hᵀ` for `τ ≥ 0`.
pub fn reconstruct_covariance(sde: &LtiSde, tau: f64) -> Mat {
    let a = (&sde.f * tau).exp();
    &sde.h * a * &sde.p0 * sde.h.transpose()
}
