//! Dense reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smgp::chain::{InducingGrid, MarkovChain};
use smgp::kernels::{kernel_eval, to_state_space, KernelSpec};
use smgp::posterior::TiedSite;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn max_rel_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Joint prior over the stacked inducing states `[u_0; …; u_{M-1}]`.
pub fn stacked_prior(chain: &MarkovChain) -> Mat {
    let d = chain.state_dim();
    let m = chain.num_inducing();
    let mut k = Mat::zeros(m * d, m * d);
    for i in 0..m {
        // Cov(u_j, u_i) = A_{j-1} ⋯ A_i P0 for j ≥ i.
        let mut c = chain.p0().clone();
        for j in i..m {
            if j > i {
                c = &chain.transitions[j - 1].a * c;
            }
            k.view_mut((j * d, i * d), (d, d)).copy_from(&c);
            k.view_mut((i * d, j * d), (d, d)).copy_from(&c.transpose());
        }
    }
    k
}

/// Sum of all sites as one exp-quadratic over the stacked states.
pub fn stacked_sites(sites: &[TiedSite], d: usize) -> (Vector, Mat, f64) {
    let n = (sites.len() + 1) * d;
    let mut b = Vector::zeros(n);
    let mut big = Mat::zeros(n, n);
    let mut logz = 0.0;
    for (m, s) in sites.iter().enumerate() {
        let mut bv = b.rows_mut(m * d, 2 * d);
        bv += &s.lambda1;
        let mut bb = big.view_mut((m * d, m * d), (2 * d, 2 * d));
        bb += &s.lambda2;
        logz += s.logz;
    }
    (b, big, logz)
}

/// Posterior mean, covariance and `log E_prior[∏ sites]` by brute force:
/// `Σ = K (I + B K)⁻¹`, `μ = Σ b`.
pub fn brute_force(chain: &MarkovChain, sites: &[TiedSite]) -> (Vector, Mat, f64) {
    let d = chain.state_dim();
    let k = stacked_prior(chain);
    let (b, big, logz) = stacked_sites(sites, d);
    let n = k.nrows();
    let a = Mat::identity(n, n) + &big * &k;
    let lu = a.clone().lu();
    let inv = lu.try_inverse().expect("I + BK is invertible");
    let cov = &k * inv;
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = &cov * &b;
    let log_det = a.lu().determinant().ln();
    let log_norm = logz + 0.5 * b.dot(&mean) - 0.5 * log_det;
    (mean, cov, log_norm)
}

/// Exact GP regression with a Cholesky factorisation.
pub struct DenseGp {
    pub mean: Vector,
    pub cov: Mat,
    pub log_marglik: f64,
}

pub fn dense_gp(k: &Mat, y: &[f64], noise: f64) -> DenseGp {
    let n = y.len();
    let y = Vector::from_column_slice(y);
    let ky = k + Mat::identity(n, n) * noise;
    let chol = ky.clone().cholesky().expect("noisy Gram is PD");
    let alpha = chol.solve(&y);
    let mean = k * &alpha;
    let cov = k - k * chol.solve(k);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_marglik =
        -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    DenseGp {
        mean,
        cov,
        log_marglik,
    }
}

pub fn gram(kernel: &KernelSpec, x: &[f64]) -> Mat {
    Mat::from_fn(x.len(), x.len(), |i, j| kernel_eval(kernel, x[i] - x[j]))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A random scalar-output kernel with state dimension 1–3.
pub fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    let variance = rng.random_range(0.5..2.0);
    let lengthscale = rng.random_range(0.3..3.0);
    match rng.random_range(0..6) {
        0 => KernelSpec::Matern12 {
            variance,
            lengthscale,
        },
        1 => KernelSpec::Matern32 {
            variance,
            lengthscale,
        },
        2 => KernelSpec::Matern52 {
            variance,
            lengthscale,
        },
        3 => KernelSpec::QuasiPeriodic {
            variance,
            lengthscale,
            frequency: rng.random_range(0.5..3.0),
        },
        4 => KernelSpec::Sum {
            components: vec![
                KernelSpec::Matern12 {
                    variance,
                    lengthscale,
                },
                KernelSpec::Matern12 {
                    variance: 0.5,
                    lengthscale: lengthscale * 2.0,
                },
            ],
        },
        _ => KernelSpec::Sum {
            components: vec![
                KernelSpec::Matern12 {
                    variance,
                    lengthscale,
                },
                KernelSpec::Matern32 {
                    variance: 0.5,
                    lengthscale,
                },
            ],
        },
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, m: usize) -> InducingGrid {
    let mut z = vec![rng.random_range(-1.0..1.0)];
    for _ in 1..m {
        let last = z[z.len() - 1];
        z.push(last + rng.random_range(0.1..1.5));
    }
    InducingGrid::new(z).unwrap()
}

/// PSD site of random rank (possibly zero).
pub fn random_site(rng: &mut ChaCha8Rng, d: usize) -> TiedSite {
    let rank = rng.random_range(0..=2 * d);
    let g = Mat::from_fn(2 * d, rank, |_, _| normal(rng) * 0.8);
    TiedSite {
        lambda1: Vector::from_fn(2 * d, |_, _| normal(rng)),
        lambda2: &g * g.transpose(),
        logz: normal(rng),
    }
}

/// Random chain with `m` inducing inputs and random sites.
pub fn random_case(seed: u64, m: usize) -> (MarkovChain, Vec<TiedSite>) {
    let mut r = rng(seed);
    let kernel = random_kernel(&mut r);
    let sde = to_state_space(&kernel).unwrap();
    let d = sde.state_dim();
    let chain = MarkovChain::discretize(sde, random_grid(&mut r, m));
    let sites = (0..m - 1).map(|_| random_site(&mut r, d)).collect();
    (chain, sites)
}

/// Largest relative discrepancy between the chain posterior and brute force.
pub fn posterior_discrepancy(chain: &MarkovChain, sites: &[TiedSite]) -> f64 {
    let d = chain.state_dim();
    let post = smgp::posterior::posterior(chain, sites).unwrap();
    let (mean, cov, log_norm) = brute_force(chain, sites);
    let mut worst = (post.log_norm - log_norm).abs() / log_norm.abs().max(1.0);
    for (m, g) in post.marginals.iter().enumerate() {
        let mu = mean.rows(m * d, d).into_owned();
        let s = cov.view((m * d, m * d), (d, d)).into_owned();
        worst = worst.max(max_rel_diff(
            &Mat::from_column_slice(d, 1, g.mean.as_slice()),
            &Mat::from_column_slice(d, 1, mu.as_slice()),
        ));
        worst = worst.max(max_rel_diff(&g.cov, &s));
    }
    for (m, g) in post.pairs.iter().enumerate() {
        let mu = mean.rows(m * d, 2 * d).into_owned();
        let s = cov.view((m * d, m * d), (2 * d, 2 * d)).into_owned();
        worst = worst.max(max_rel_diff(
            &Mat::from_column_slice(2 * d, 1, g.mean.as_slice()),
            &Mat::from_column_slice(2 * d, 1, mu.as_slice()),
        ));
        worst = worst.max(max_rel_diff(&g.cov, &s));
    }
    worst
}

pub fn matern_family() -> Vec<(&'static str, KernelSpec)> {
    vec![
        (
            "matern12",
            KernelSpec::Matern12 {
                variance: 1.5,
                lengthscale: 1.2,
            },
        ),
        (
            "matern32",
            KernelSpec::Matern32 {
                variance: 1.5,
                lengthscale: 1.2,
            },
        ),
        (
            "matern52",
            KernelSpec::Matern52 {
                variance: 1.5,
                lengthscale: 1.2,
            },
        ),
        (
            "matern72",
            KernelSpec::Matern72 {
                variance: 1.5,
                lengthscale: 1.2,
            },
        ),
    ]
}
