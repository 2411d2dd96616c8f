//! Seeded synthetic tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::data::Dataset;
use crate::kernels::{to_state_space, KernelSpec, LtiSde};
use crate::likelihoods::{softplus, Likelihood};
use crate::linalg::{psd_sqrt, Vector};

pub const TASKS: [&str; 5] = [
    "binary-sign",
    "poisson-cox",
    "heteroscedastic",
    "banana-like-2d",
    "conjugate-matern",
];

/// Ground truth of the `conjugate-matern` task.
pub const CONJUGATE_KERNEL: KernelSpec = KernelSpec::Matern32 {
    variance: 2.0,
    lengthscale: 1.5,
};
pub const CONJUGATE_NOISE: f64 = 0.1;
pub const CONJUGATE_SPAN: f64 = 150.0;

/// Likelihood each task is generated under.
pub fn task_likelihood(task: &str) -> Result<Likelihood> {
    Ok(match task {
        "binary-sign" | "banana-like-2d" => Likelihood::BernoulliLogit,
        "poisson-cox" => Likelihood::PoissonLog { bin_width: 1.0 },
        "heteroscedastic" => Likelihood::HeteroscedasticGaussian,
        "conjugate-matern" => Likelihood::Gaussian {
            variance: CONJUGATE_NOISE,
        },
        _ => return Err(Error::UnknownTask(task.to_string())),
    })
}

fn uniform_sorted(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    x.sort_by(f64::total_cmp);
    x
}

/// Exact draw of the first output of `sde` at sorted inputs.
pub fn sample_prior(sde: &LtiSde, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = sde.state_dim();
    let mut noise = |n: usize| Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    let mut s = psd_sqrt(&sde.p0) * noise(d);
    let mut out = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        if i > 0 {
            let (a, q) = sde.transition(xi - x[i - 1]);
            s = a * s + psd_sqrt(&q) * noise(d);
        }
        out.push((&sde.h * &s)[0]);
    }
    out
}

fn binary_sign(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let x = uniform_sorted(rng, n, 0.0, 4.0);
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let y = x
        .iter()
        .map(|&v| {
            let g = 12.0 * (4.0 * std::f64::consts::PI * v).sin()
                / (0.25 * std::f64::consts::PI * v + 1.0);
            if g + jitter.sample(rng) > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Dataset::new(x, Vec::new(), y)
}

fn poisson_cox(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let x = uniform_sorted(rng, n, 0.0, 100.0);
    let sde = to_state_space(&KernelSpec::Matern52 {
        variance: 1.0,
        lengthscale: 8.0,
    })?;
    let f = sample_prior(&sde, &x, rng);
    let y = f
        .iter()
        .map(|v| Poisson::new(v.exp()).map(|p| p.sample(rng)).unwrap_or(0.0))
        .collect();
    Dataset::new(x, Vec::new(), y)
}

fn heteroscedastic(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let x = uniform_sorted(rng, n, 0.0, 10.0);
    let y = x
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            2.0 * v.sin() + (0.05 + softplus(v - 5.0)) * e
        })
        .collect();
    Dataset::new(x, Vec::new(), y)
}

/// Two interleaved arcs; horizontal coordinate is `x`, vertical is `r`.
fn banana(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let noise = Normal::new(0.0, 0.2).expect("valid normal");
    let mut x = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (a, b, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 1.0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 0.0)
        };
        x.push(a + noise.sample(rng));
        r.push(vec![b + noise.sample(rng)]);
        y.push(label);
    }
    Dataset::new(x, r, y)
}

fn conjugate_matern(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let x = uniform_sorted(rng, n, 0.0, CONJUGATE_SPAN);
    let f = sample_prior(&to_state_space(&CONJUGATE_KERNEL)?, &x, rng);
    let y = f
        .iter()
        .map(|v| {
            v + CONJUGATE_NOISE.sqrt() * {
                let e: f64 = StandardNormal.sample(rng);
                e
            }
        })
        .collect();
    Dataset::new(x, Vec::new(), y)
}

pub fn generate(task: &str, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        "binary-sign" => binary_sign(&mut rng, n),
        "poisson-cox" => poisson_cox(&mut rng, n),
        "heteroscedastic" => heteroscedastic(&mut rng, n),
        "banana-like-2d" => banana(&mut rng, n),
        "conjugate-matern" => conjugate_matern(&mut rng, n),
        _ => Err(Error::UnknownTask(task.to_string())),
    }
}
