//! Acceptance criteria, one pass/fail line each. Set `ACCEPTANCE_ONLY=2,5` to run a
//! subset and `ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use smgp::chain::InducingGrid;
use smgp::harness::generate::{generate, CONJUGATE_KERNEL, CONJUGATE_NOISE};
use smgp::inference::objectives::{evaluate, Objective};
use smgp::inference::train::{fit, ModelBuilder, TemporalModel, TrainConfig};
use smgp::inference::{run_to_convergence, sweep, Algorithm, InferenceState};
use smgp::kernels::{kernel_matrix, reconstruct_covariance, to_state_space, KernelSpec};
use smgp::likelihoods::Likelihood;
use smgp::posterior::{predict_f, site_storage_len};
use smgp::problem::Problem;
use smgp::spatiotemporal::{
    build_st_chain, st_predict, st_problem, SpatialConfig, SpatioTemporalModel,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn four_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Cvi { rho: 1.0 },
        Algorithm::Pep {
            alpha: 1.0,
            parallel: true,
            damping: None,
        },
        Algorithm::Pl { damping: 1.0 },
        Algorithm::Eks { damping: 1.0 },
    ]
}

fn dense_oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let (chain, sites) = random_case(seed, 2 + (seed % 5) as usize);
        worst = worst.max(posterior_discrepancy(&chain, &sites));
    }
    outcome(
        worst < 1e-8,
        format!("200 cases, worst relative error {worst:.2e}"),
    )
}

fn conjugate_exactness() -> Outcome {
    let mut r = rng(2);
    let mut x: Vec<f64> = (0..100).map(|_| r.random_range(0.0..10.0)).collect();
    x.sort_by(f64::total_cmp);
    let y: Vec<f64> = x.iter().map(|v| v.sin() + 0.3 * normal(&mut r)).collect();
    let noise = 0.1;
    let mut worst_post = 0.0f64;
    let mut worst_obj = (0.0f64, String::new());
    for (name, kernel) in matern_family() {
        let dense = dense_gp(&gram(&kernel, &x), &y, noise);
        let grid = InducingGrid::new(x.clone()).unwrap();
        let p = Problem::temporal(
            &kernel,
            Likelihood::Gaussian { variance: noise },
            grid,
            &x,
            &y,
        )
        .unwrap();
        for alg in four_algorithms() {
            let mut s = InferenceState::new(&p).unwrap();
            sweep(&p, &mut s, &alg).unwrap();
            for (i, &xi) in x.iter().enumerate() {
                let g = predict_f(s.posterior(), &p.chain, xi).unwrap();
                let e = (g.mean[0] - dense.mean[i])
                    .abs()
                    .max((g.cov[(0, 0)] - dense.cov[(i, i)]).abs());
                worst_post = worst_post.max(e);
            }
            for obj in [
                Objective::Elbo,
                Objective::PepEnergy,
                Objective::FilterMarglik,
            ] {
                let v = evaluate(&p, &s, obj, 1.0).unwrap();
                let e = (v - dense.log_marglik).abs() / dense.log_marglik.abs().max(1.0);
                if e > worst_obj.0 {
                    worst_obj = (e, format!("{name}/{}/{}", alg.label(), obj.name()));
                }
            }
        }
    }
    outcome(
        worst_post < 1e-7 && worst_obj.0 < 1e-7,
        format!(
            "posterior max error {worst_post:.2e}; objective max rel error {:.2e} ({})",
            worst_obj.0, worst_obj.1
        ),
    )
}

fn kernel_reconstruction() -> Outcome {
    let kernels = vec![
        KernelSpec::Matern12 {
            variance: 1.3,
            lengthscale: 0.7,
        },
        KernelSpec::Matern32 {
            variance: 1.3,
            lengthscale: 0.7,
        },
        KernelSpec::Matern52 {
            variance: 1.3,
            lengthscale: 0.7,
        },
        KernelSpec::Matern72 {
            variance: 1.3,
            lengthscale: 0.7,
        },
        KernelSpec::Cosine {
            variance: 0.8,
            frequency: 2.1,
        },
        KernelSpec::QuasiPeriodic {
            variance: 1.1,
            lengthscale: 1.9,
            frequency: 3.0,
        },
        KernelSpec::Sum {
            components: vec![
                KernelSpec::Matern52 {
                    variance: 1.0,
                    lengthscale: 2.0,
                },
                KernelSpec::Cosine {
                    variance: 0.5,
                    frequency: 1.0,
                },
            ],
        },
        KernelSpec::IndependentStack {
            components: vec![
                KernelSpec::Matern32 {
                    variance: 1.0,
                    lengthscale: 1.0,
                },
                KernelSpec::Matern12 {
                    variance: 0.4,
                    lengthscale: 0.3,
                },
            ],
        },
    ];
    let mut worst = 0.0f64;
    for k in &kernels {
        let sde = to_state_space(k).unwrap();
        for i in 0..50 {
            let tau = i as f64 * 0.1;
            let diff = (reconstruct_covariance(&sde, tau) - kernel_matrix(k, tau)).amax();
            worst = worst.max(diff);
        }
    }
    outcome(
        worst <= 1e-9,
        format!(
            "{} kernels x 50 lags, max abs error {worst:.2e}",
            kernels.len()
        ),
    )
}

fn random_y(lik: &Likelihood, r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    match lik {
        Likelihood::BernoulliLogit => r.random_range(0..2) as f64,
        Likelihood::PoissonLog { .. } => r.random_range(0..8) as f64,
        _ => 2.0 * normal(r),
    }
}

fn random_cov(o: usize, r: &mut rand_chacha::ChaCha8Rng) -> Mat {
    let g = Mat::from_fn(o, o, |_, _| 0.6 * normal(r));
    &g * g.transpose() + Mat::identity(o, o) * 0.05
}

/// Worst `|analytic − fd| / max(1, |fd|)` for every derivative operation.
fn gradient_errors(lik: &Likelihood, seed: u64) -> Vec<(&'static str, f64)> {
    let o = lik.latent_dim();
    let mut r = rng(seed);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst = [0.0f64; 7];
    for _ in 0..100 {
        let y = random_y(lik, &mut r);
        let mean = Vector::from_fn(o, |_, _| 1.2 * normal(&mut r));
        let cov = random_cov(o, &mut r);
        let alpha = r.random_range(0.05..1.0);
        let f = mean.as_slice().to_vec();
        let (g, hess) = lik.log_density_derivatives(y, &f);
        let ve = lik.variational_expectation(y, &mean, &cov).unwrap();
        let lp = lik.log_partition(y, &mean, &cov, alpha).unwrap();
        let cm = lik.conditional_moments(&f);
        for i in 0..o {
            let shift = |v: &[f64], s: f64| {
                let mut w = v.to_vec();
                w[i] += s;
                w
            };
            let fd = (lik.log_density(y, &shift(&f, h)).unwrap()
                - lik.log_density(y, &shift(&f, -h)).unwrap())
                / (2.0 * h);
            worst[0] = worst[0].max(rel(g[i], fd));
            let (gp, _) = lik.log_density_derivatives(y, &shift(&f, h));
            let (gm, _) = lik.log_density_derivatives(y, &shift(&f, -h));
            for j in 0..o {
                worst[1] = worst[1].max(rel(hess[(j, i)], (gp[j] - gm[j]) / (2.0 * h)));
            }
            let mp = Vector::from_column_slice(&shift(mean.as_slice(), h));
            let mm = Vector::from_column_slice(&shift(mean.as_slice(), -h));
            let fd = (lik.variational_expectation(y, &mp, &cov).unwrap().value
                - lik.variational_expectation(y, &mm, &cov).unwrap().value)
                / (2.0 * h);
            worst[2] = worst[2].max(rel(ve.d_mean[i], fd));
            for j in 0..=i {
                let mut dc = Mat::zeros(o, o);
                dc[(i, j)] = h;
                dc[(j, i)] = h;
                let fd = (lik
                    .variational_expectation(y, &mean, &(&cov + &dc))
                    .unwrap()
                    .value
                    - lik
                        .variational_expectation(y, &mean, &(&cov - &dc))
                        .unwrap()
                        .value)
                    / (2.0 * h);
                let fd = if i == j { fd } else { fd / 2.0 };
                worst[3] = worst[3].max(rel(ve.d_cov[(i, j)], fd));
            }
            let lpp = lik.log_partition(y, &mp, &cov, alpha).unwrap();
            let lpm = lik.log_partition(y, &mm, &cov, alpha).unwrap();
            worst[4] = worst[4].max(rel(lp.d1[i], (lpp.log_z - lpm.log_z) / (2.0 * h)));
            for j in 0..o {
                worst[5] = worst[5].max(rel(lp.d2[(j, i)], (lpp.d1[j] - lpm.d1[j]) / (2.0 * h)));
            }
            let fd = (lik.conditional_moments(&shift(&f, h)).mean
                - lik.conditional_moments(&shift(&f, -h)).mean)
                / (2.0 * h);
            worst[6] = worst[6].max(rel(cm.d_mean[i], fd));
        }
    }
    let names = [
        "grad",
        "hessian",
        "ve_d_mean",
        "ve_d_cov",
        "logz_d1",
        "logz_d2",
        "cond_mean_d",
    ];
    names.into_iter().zip(worst).collect()
}

fn gradient_suite() -> Outcome {
    let liks = [
        Likelihood::Gaussian { variance: 0.3 },
        Likelihood::BernoulliLogit,
        Likelihood::PoissonLog { bin_width: 1.5 },
        Likelihood::HeteroscedasticGaussian,
    ];
    let mut worst = (0.0f64, String::new());
    for (k, lik) in liks.iter().enumerate() {
        for (op, e) in gradient_errors(lik, 40 + k as u64) {
            if e > worst.0 {
                worst = (e, format!("{}/{op}", lik.name()));
            }
        }
    }
    outcome(
        worst.0 <= 1e-5,
        format!(
            "4 likelihoods x 7 operations x 100 points, worst rel error {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

fn elbo_trace(problem: &Problem, iterations: usize) -> Vec<f64> {
    let mut s = InferenceState::new(problem).unwrap();
    let mut out = vec![evaluate(problem, &s, Objective::Elbo, 1.0).unwrap()];
    for _ in 0..iterations {
        sweep(problem, &mut s, &Algorithm::Cvi { rho: 0.5 }).unwrap();
        out.push(evaluate(problem, &s, Objective::Elbo, 1.0).unwrap());
    }
    out
}

fn elbo_monotonicity() -> Outcome {
    let bin = generate("binary-sign", 500, 5).unwrap();
    let pois = generate("poisson-cox", 500, 5).unwrap();
    let cases = [
        (
            "bernoulli",
            KernelSpec::Matern72 {
                variance: 4.0,
                lengthscale: 0.3,
            },
            Likelihood::BernoulliLogit,
            bin,
        ),
        (
            "poisson",
            KernelSpec::Matern52 {
                variance: 1.0,
                lengthscale: 8.0,
            },
            Likelihood::PoissonLog { bin_width: 1.0 },
            pois,
        ),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, kernel, lik, data) in cases {
        let grid = InducingGrid::spanning(&data.x, 30).unwrap();
        let p = Problem::temporal(&kernel, lik, grid, &data.x, &data.y).unwrap();
        let trace = elbo_trace(&p, 100);
        let worst_drop = trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::NEG_INFINITY, f64::max);
        pass &= worst_drop <= 1e-9;
        details.push(format!(
            "{name}: largest decrease {worst_drop:.2e}, ELBO {:.3} -> {:.3}",
            trace[0],
            trace[trace.len() - 1]
        ));
    }
    outcome(pass, details.join("; "))
}

fn alpha_limit() -> Outcome {
    let data = generate("binary-sign", 1000, 6).unwrap();
    let kernel = KernelSpec::Matern72 {
        variance: 4.0,
        lengthscale: 0.3,
    };
    let grid = InducingGrid::spanning(&data.x, 50).unwrap();
    let p = Problem::temporal(&kernel, Likelihood::BernoulliLogit, grid, &data.x, &data.y).unwrap();
    let mut cvi = InferenceState::new(&p).unwrap();
    let n_cvi =
        run_to_convergence(&p, &mut cvi, &Algorithm::Cvi { rho: 1.0 }, 2000, 1e-10).unwrap();
    let mut pep = InferenceState::with_sites(&p, cvi.sites().to_vec()).unwrap();
    let alg = Algorithm::Pep {
        alpha: 0.01,
        parallel: true,
        damping: None,
    };
    let n_pep = run_to_convergence(&p, &mut pep, &alg, 20_000, 1e-9).unwrap();
    let mut worst = 0.0f64;
    for &x in &data.x {
        let a = predict_f(cvi.posterior(), &p.chain, x).unwrap();
        let b = predict_f(pep.posterior(), &p.chain, x).unwrap();
        worst = worst.max((a.mean[0] - b.mean[0]).abs());
    }
    outcome(
        worst < 1e-3,
        format!("max |mean difference| {worst:.2e} (CVI {n_cvi} sweeps, PEP {n_pep} sweeps)"),
    )
}

fn banana_model(data: &smgp::harness::data::Dataset, m: usize) -> SpatioTemporalModel {
    let r: Vec<f64> = data.r.iter().map(|v| v[0]).collect();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SpatioTemporalModel {
        temporal_kernel: KernelSpec::Matern52 {
            variance: 3.0,
            lengthscale: 0.7,
        },
        spatial_kernel: KernelSpec::Matern52 {
            variance: 1.0,
            lengthscale: 0.7,
        },
        spatial_z: InducingGrid::linspace(lo, hi, m)
            .unwrap()
            .z()
            .iter()
            .map(|&v| vec![v])
            .collect(),
        jitter: 1e-6,
        lik: Likelihood::BernoulliLogit,
        grid: InducingGrid::spanning(&data.x, m).unwrap(),
        x: data.x.clone(),
        r: data.r.clone(),
        y: data.y.clone(),
    }
}

fn inversions(v: &[f64]) -> usize {
    v.windows(2)
        .filter(|w| w[1] > w[0] + 1e-6 * w[0].abs().max(1.0))
        .count()
}

fn banana_trend() -> Outcome {
    let data = generate("banana-like-2d", 1000, 7).unwrap();
    let ms = [4usize, 8, 16, 32];
    let algs = [
        (Algorithm::Cvi { rho: 1.0 }, Objective::Elbo),
        (
            Algorithm::Pep {
                alpha: 1.0,
                parallel: true,
                damping: Some(0.5),
            },
            Objective::PepEnergy,
        ),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (alg, obj) in &algs {
        let mut nlml = Vec::new();
        for &m in &ms {
            let model = banana_model(&data, m);
            let p = model.build(&model.initial_params()).unwrap();
            let mut s = InferenceState::new(&p).unwrap();
            run_to_convergence(&p, &mut s, alg, 300, 1e-6).unwrap();
            nlml.push(-evaluate(&p, &s, *obj, 1.0).unwrap());
        }
        let inv = inversions(&nlml);
        pass &= inv <= 1;
        details.push(format!(
            "{}: NLML {:?} ({inv} inversions)",
            alg.label(),
            nlml.iter()
                .map(|v| (v * 10.0).round() / 10.0)
                .collect::<Vec<_>>()
        ));
    }
    outcome(pass, details.join("; "))
}

fn spatio_temporal_oracle() -> Outcome {
    let kx = KernelSpec::Matern52 {
        variance: 1.2,
        lengthscale: 0.9,
    };
    let kr = KernelSpec::Matern32 {
        variance: 0.7,
        lengthscale: 1.3,
    };
    let zr: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.3],
        vec![-0.4, 1.1],
        vec![0.8, -0.9],
    ];
    let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let kr_gram = Mat::from_fn(4, 4, |i, j| {
        smgp::kernels::kernel_eval(&kr, dist(&zr[i], &zr[j]))
    });

    // Prior Gram over the grid.
    let spatial = SpatialConfig::new(kr.clone(), zr.clone(), 0.0).unwrap();
    let gx = InducingGrid::linspace(0.0, 2.0, 4).unwrap();
    let st = build_st_chain(&kx, spatial.clone(), gx.clone()).unwrap();
    let k = stacked_prior(&st.chain);
    let h = &st.chain.sde.h;
    let big_h = smgp::linalg::kron(&Mat::identity(4, 4), h);
    let f_cov = &big_h * k * big_h.transpose();
    let expected = smgp::linalg::kron(&gram(&kx, gx.z()), &kr_gram);
    let gram_err = (&f_cov - &expected).amax();

    // Conjugate regression on the grid.
    let gx = InducingGrid::linspace(0.0, 4.0, 8).unwrap();
    let st = build_st_chain(&kx, spatial, gx.clone()).unwrap();
    let mut r = rng(8);
    let (mut xs, mut rs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for &x in gx.z() {
        for z in &zr {
            xs.push(x);
            rs.push(z.clone());
            ys.push(x.sin() * z[0].cos() + 0.2 * normal(&mut r));
        }
    }
    let n = xs.len();
    let noise = 0.05;
    let prod = Mat::from_fn(n, n, |i, j| {
        smgp::kernels::kernel_eval(&kx, xs[i] - xs[j])
            * smgp::kernels::kernel_eval(&kr, dist(&rs[i], &rs[j]))
    });
    let dense = dense_gp(&prod, &ys, noise);
    let p = st_problem(&st, Likelihood::Gaussian { variance: noise }, &xs, &rs, &ys).unwrap();
    let mut s = InferenceState::new(&p).unwrap();
    sweep(&p, &mut s, &Algorithm::Cvi { rho: 1.0 }).unwrap();
    let mut reg_err = 0.0f64;
    for i in 0..n {
        let g = st_predict(s.posterior(), &st, xs[i], &rs[i]).unwrap();
        reg_err = reg_err
            .max((g.mean[0] - dense.mean[i]).abs())
            .max((g.cov[(0, 0)] - dense.cov[(i, i)]).abs());
    }
    let elbo = evaluate(&p, &s, Objective::Elbo, 1.0).unwrap();
    let lml_err = (elbo - dense.log_marglik).abs() / dense.log_marglik.abs().max(1.0);
    outcome(
        gram_err < 1e-8 && reg_err < 1e-7 && lml_err < 1e-7,
        format!("Gram error {gram_err:.2e}; regression error {reg_err:.2e}; log-marginal rel error {lml_err:.2e}"),
    )
}

fn large_problem(n: usize, m: usize) -> (Problem, Duration) {
    let mut r = rng(9);
    let mut x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1000.0)).collect();
    x.sort_by(f64::total_cmp);
    let y: Vec<f64> = x
        .iter()
        .map(|v| (v / 10.0).sin() + 0.3 * normal(&mut r))
        .collect();
    let kernel = KernelSpec::Matern32 {
        variance: 1.0,
        lengthscale: 5.0,
    };
    let grid = InducingGrid::linspace(0.0, 1000.0, m).unwrap();
    let t = Instant::now();
    let p = Problem::temporal(
        &kernel,
        Likelihood::Gaussian { variance: 0.1 },
        grid,
        &x,
        &y,
    )
    .unwrap();
    (p, t.elapsed())
}

fn scaling_smoke() -> Outcome {
    let m = 500;
    let d = 2;
    let mut times = Vec::new();
    let mut storage_ok = true;
    for n in [25_000usize, 50_000, 100_000] {
        let mut best = f64::INFINITY;
        for _ in 0..2 {
            let (p, build) = large_problem(n, m);
            let t = Instant::now();
            let mut s = InferenceState::new(&p).unwrap();
            sweep(&p, &mut s, &Algorithm::Cvi { rho: 1.0 }).unwrap();
            best = best.min((build + t.elapsed()).as_secs_f64());
            storage_ok &= site_storage_len(s.sites()) == (m - 1) * (2 * d + 4 * d * d + 1);
        }
        times.push(best);
    }
    let slope = (times[2] / times[0]).ln() / 4f64.ln();
    outcome(
        storage_ok && slope < 2.0,
        format!(
            "site storage {} scalars; times {:.3}s / {:.3}s / {:.3}s, log-log slope {slope:.2}",
            (m - 1) * (2 * d + 4 * d * d + 1),
            times[0],
            times[1],
            times[2]
        ),
    )
}

fn hyperparameter_recovery() -> Outcome {
    let data = generate("conjugate-matern", 200, 0).unwrap();
    let (true_var, true_len) = match CONJUGATE_KERNEL {
        KernelSpec::Matern32 {
            variance,
            lengthscale,
        } => (variance, lengthscale),
        _ => unreachable!(),
    };
    let model = TemporalModel {
        kernel: KernelSpec::Matern32 {
            variance: 1.0,
            lengthscale: 1.0,
        },
        lik: Likelihood::Gaussian {
            variance: CONJUGATE_NOISE,
        },
        grid: InducingGrid::new(data.x.clone()).unwrap(),
        x: data.x.clone(),
        y: data.y.clone(),
    };
    let runs = [
        (Algorithm::Cvi { rho: 1.0 }, Objective::Elbo),
        (
            Algorithm::Pep {
                alpha: 1.0,
                parallel: true,
                damping: None,
            },
            Objective::PepEnergy,
        ),
        (
            Algorithm::Pep {
                alpha: 1.0,
                parallel: true,
                damping: None,
            },
            Objective::FilterMarglik,
        ),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (alg, obj) in runs {
        let cfg = TrainConfig {
            iterations: 500,
            objective: Some(obj),
            ..TrainConfig::default()
        };
        let res = fit(&model, &alg, &cfg).unwrap();
        let var = res.log_params[0].exp();
        let len = res.log_params[1].exp();
        let ok = (len / true_len - 1.0).abs() <= 0.1 && (var / true_var - 1.0).abs() <= 0.2;
        pass &= ok;
        details.push(format!(
            "{}: variance {var:.3}, lengthscale {len:.3}",
            obj.name()
        ));
    }
    outcome(pass, details.join("; "))
}

type Criterion = (usize, &'static str, fn() -> Outcome, u64);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "dense-oracle equivalence", dense_oracle_equivalence, 30),
        (2, "conjugate exactness", conjugate_exactness, 10),
        (3, "kernel reconstruction", kernel_reconstruction, 5),
        (4, "likelihood gradient suite", gradient_suite, 30),
        (5, "CVI ELBO monotonicity", elbo_monotonicity, 60),
        (6, "PEP alpha -> 0 matches CVI", alpha_limit, 60),
        (7, "banana NLML trend in M", banana_trend, 300),
        (8, "space-time separability", spatio_temporal_oracle, 30),
        (9, "memory and scaling", scaling_smoke, 120),
        (10, "hyperparameter recovery", hyperparameter_recovery, 120),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run);
        let secs = t.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && secs < budget as f64, o.detail),
            Err(e) => (
                false,
                format!(
                    "panicked: {}",
                    e.downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default()
                ),
            ),
        };
        println!(
            "criterion {id:>2} {}: {name} [{secs:.1}s / {budget}s] {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
