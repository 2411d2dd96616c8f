//! Separable space-time priors: a temporal SDE stacked over spatial inducing
//! locations, with Kronecker-structured transitions.

use nalgebra::Cholesky;
use nalgebra::Dyn;
use rayon::prelude::*;

use crate::chain::{assign_segments, FunctionConditional, InducingGrid, MarkovChain, Transition};
use crate::error::{Error, Result};
use crate::inference::train::ModelBuilder;
use crate::kernels::{kernel_eval, to_state_space, KernelSpec, LtiSde};
use crate::likelihoods::Likelihood;
use crate::linalg::{cholesky_jitter, inf_norm, kron, symmetrize, Gaussian, Mat, Vector};
use crate::posterior::{extrapolate_after, extrapolate_before, ChainPosterior};
use crate::problem::{Datum, Problem};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn as_row(v: &Vector) -> Mat {
    Mat::from_row_slice(1, v.len(), v.as_slice())
}

/// Spatial kernel and inducing locations, with the Gram factor cached.
#[derive(Debug, Clone)]
pub struct SpatialConfig {
    pub kernel: KernelSpec,
    pub z: Vec<Vec<f64>>,
    pub jitter: f64,
    gram: Mat,
    chol: Cholesky<f64, Dyn>,
}

impl SpatialConfig {
    pub fn new(kernel: KernelSpec, z: Vec<Vec<f64>>, jitter: f64) -> Result<Self> {
        kernel.validate()?;
        if !matches!(
            kernel,
            KernelSpec::Matern12 { .. }
                | KernelSpec::Matern32 { .. }
                | KernelSpec::Matern52 { .. }
                | KernelSpec::Matern72 { .. }
        ) {
            return Err(Error::Config(
                "spatial kernel must be a Matérn kernel".into(),
            ));
        }
        if z.is_empty() {
            return Err(Error::Grid("no spatial inducing locations".into()));
        }
        let p = z[0].len();
        if p == 0
            || z.iter()
                .any(|v| v.len() != p || v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Grid(
                "spatial inducing locations must be finite and share a dimension".into(),
            ));
        }
        for i in 0..z.len() {
            for j in 0..i {
                if distance(&z[i], &z[j]) == 0.0 {
                    return Err(Error::Grid(format!(
                        "spatial inducing locations {j} and {i} coincide"
                    )));
                }
            }
        }
        if jitter.is_nan() || jitter < 0.0 {
            return Err(Error::ParameterDomain(format!(
                "jitter must be nonnegative, got {jitter}"
            )));
        }
        let n = z.len();
        let gram = Mat::from_fn(n, n, |i, j| kernel_eval(&kernel, distance(&z[i], &z[j])))
            + Mat::identity(n, n) * jitter;
        let chol = cholesky_jitter(&gram)
            .map_err(|e| Error::NotPositiveDefinite(format!("spatial Gram: {e}")))?;
        let gram = chol.l() * chol.l().transpose();
        Ok(SpatialConfig {
            kernel,
            z,
            jitter,
            gram,
            chol,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.z[0].len()
    }

    /// Gram matrix actually used by the prior (after any jitter).
    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    /// Interpolation weights `K⁻¹ k(z, r)` and residual variance at `r`.
    pub fn weights(&self, r: &[f64]) -> Result<(Vector, f64)> {
        if r.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "spatial input has {} coordinates, expected {}",
                r.len(),
                self.input_dim()
            )));
        }
        let k = Vector::from_iterator(
            self.len(),
            self.z
                .iter()
                .map(|zi| kernel_eval(&self.kernel, distance(zi, r))),
        );
        let b = self.chol.solve(&k);
        let c = (kernel_eval(&self.kernel, 0.0) - k.dot(&b)).max(0.0);
        Ok((b, c))
    }
}

/// `(B, C)` with `f(x, r) | s(x) ~ N(B s(x), C)`.
pub fn spatial_conditional(spatial: &SpatialConfig, h: &Mat, r: &[f64]) -> Result<(Mat, f64)> {
    let (b, c) = spatial.weights(r)?;
    Ok((kron(&as_row(&b), h), c))
}

/// Joint chain over all spatial nodes plus the per-node temporal chain it was built from.
#[derive(Debug, Clone)]
pub struct SpatioTemporalChain {
    pub chain: MarkovChain,
    pub temporal: MarkovChain,
    pub spatial: SpatialConfig,
}

impl SpatioTemporalChain {
    pub fn state_dim(&self) -> usize {
        self.chain.state_dim()
    }

    /// Temporal state dimension per spatial node.
    pub fn node_dim(&self) -> usize {
        self.temporal.state_dim()
    }

    /// Temporal prior variance; the spatial residual is scaled by it so the
    /// marginal prior is the product kernel.
    pub fn temporal_variance(&self) -> f64 {
        let h = &self.temporal.sde.h;
        (h * &self.temporal.sde.p0 * h.transpose())[(0, 0)]
    }
}

fn kron_sde(x: &LtiSde, k: &Mat) -> LtiSde {
    let n = k.nrows();
    let eye = Mat::identity(n, n);
    LtiSde {
        f: kron(&eye, &x.f),
        l: kron(&eye, &x.l),
        h: kron(&eye, &x.h),
        qc: kron(k, &x.qc),
        p0: symmetrize(&kron(k, &x.p0)),
    }
}

pub fn build_st_chain(
    temporal_kernel: &KernelSpec,
    spatial: SpatialConfig,
    grid: InducingGrid,
) -> Result<SpatioTemporalChain> {
    if temporal_kernel.output_dim() != 1 {
        return Err(Error::Config(
            "temporal kernel of a space-time model must have one output".into(),
        ));
    }
    let sde_x = to_state_space(temporal_kernel)?;
    let temporal = MarkovChain::discretize(sde_x.clone(), grid.clone());
    let k = spatial.gram().clone();
    let sde = kron_sde(&sde_x, &k);
    let floor = 1e-12 * inf_norm(&sde.p0);
    let n = k.nrows();
    let eye = Mat::identity(n, n);
    let transitions = temporal
        .transitions
        .iter()
        .map(|t| Transition::new(kron(&eye, &t.a), kron(&k, &t.q), floor))
        .collect();
    let chain = MarkovChain::from_parts(sde, grid, transitions)?;
    Ok(SpatioTemporalChain {
        chain,
        temporal,
        spatial,
    })
}

/// Split `[a | b]` (o × 2d) into Kronecker-expanded halves.
fn expand_pair(b: &Vector, w: &Mat, d: usize) -> Mat {
    let bt = as_row(b);
    let left = kron(&bt, &w.columns(0, d).into_owned());
    let right = kron(&bt, &w.columns(d, d).into_owned());
    let mut out = Mat::zeros(1, left.ncols() + right.ncols());
    out.view_mut((0, 0), (1, left.ncols())).copy_from(&left);
    out.view_mut((0, left.ncols()), (1, right.ncols()))
        .copy_from(&right);
    out
}

/// `p(f(x, r) | v_m)` without forming any joint-state matrix exponential.
pub fn st_function_conditional(
    st: &SpatioTemporalChain,
    m: usize,
    x: f64,
    r: &[f64],
) -> Result<FunctionConditional> {
    let (b, c) = st.spatial.weights(r)?;
    let fc = st.temporal.function_conditional(m, x)?;
    let quad = b.dot(&(st.spatial.gram() * &b));
    let w = expand_pair(&b, &fc.w, st.node_dim());
    let nu = Mat::from_element(1, 1, quad * fc.nu[(0, 0)] + st.temporal_variance() * c);
    Ok(FunctionConditional { w, nu })
}

/// `p(f(x, r) | u_m)` through the forward transition only.
pub fn st_left_conditional(
    st: &SpatioTemporalChain,
    m: usize,
    x: f64,
    r: &[f64],
) -> Result<FunctionConditional> {
    let (b, c) = st.spatial.weights(r)?;
    let fc = st.temporal.left_conditional(m, x)?;
    let quad = b.dot(&(st.spatial.gram() * &b));
    Ok(FunctionConditional {
        w: kron(&as_row(&b), &fc.w),
        nu: Mat::from_element(1, 1, quad * fc.nu[(0, 0)] + st.temporal_variance() * c),
    })
}

/// Problem over space-time observations `(x_n, r_n, y_n)`.
pub fn st_problem(
    st: &SpatioTemporalChain,
    lik: Likelihood,
    x: &[f64],
    r: &[Vec<f64>],
    y: &[f64],
) -> Result<Problem> {
    if x.len() != y.len() || r.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} times, {} locations and {} targets",
            x.len(),
            r.len(),
            y.len()
        )));
    }
    if lik.latent_dim() != 1 {
        return Err(Error::Config(format!(
            "the {} likelihood needs several latents; space-time models have one",
            lik.name()
        )));
    }
    let (segments, _) = assign_segments(x, &st.chain.grid)?;
    let data = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let m = segments[i];
            let FunctionConditional { w, nu } = st_function_conditional(st, m, x[i], &r[i])?;
            let left = st_left_conditional(st, m, x[i], &r[i])?;
            Ok(Datum {
                segment: m,
                x: x[i],
                y: y[i],
                w,
                nu,
                w_left: left.w,
                nu_left: left.nu,
                n_left: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::from_parts(st.chain.clone(), lik, data)
}

/// Posterior `q(f(x, r))`, extrapolating in time with prior transitions.
pub fn st_predict(
    post: &ChainPosterior,
    st: &SpatioTemporalChain,
    x: f64,
    r: &[f64],
) -> Result<Gaussian> {
    let z = st.chain.grid.z();
    let (lo, hi) = (z[0], z[z.len() - 1]);
    if x >= lo && x <= hi {
        let m = st.chain.grid.segment_of(x)?;
        let fc = st_function_conditional(st, m, x, r)?;
        return Ok(post.pairs[m].project(&fc.w, &fc.nu));
    }
    let state = if x < lo {
        extrapolate_before(&st.chain, &post.marginals[0], lo - x)?
    } else {
        extrapolate_after(&st.chain, &post.marginals[post.marginals.len() - 1], x - hi)
    };
    let (bh, c) = spatial_conditional(&st.spatial, &st.temporal.sde.h, r)?;
    Ok(state.project(&bh, &Mat::from_element(1, 1, st.temporal_variance() * c)))
}

/// Trainable space-time model: temporal kernel, spatial kernel and likelihood
/// hyperparameters, on fixed inducing grids.
#[derive(Debug, Clone)]
pub struct SpatioTemporalModel {
    pub temporal_kernel: KernelSpec,
    pub spatial_kernel: KernelSpec,
    pub spatial_z: Vec<Vec<f64>>,
    pub jitter: f64,
    pub lik: Likelihood,
    pub grid: InducingGrid,
    pub x: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl SpatioTemporalModel {
    fn split(&self, p: &[f64]) -> Result<(KernelSpec, KernelSpec, Likelihood)> {
        let nt = self.temporal_kernel.log_params().len();
        let ns = self.spatial_kernel.log_params().len();
        if p.len() != nt + ns + self.lik.log_params().len() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.initial_params().len(),
                p.len()
            )));
        }
        Ok((
            self.temporal_kernel.with_log_params(&p[..nt])?,
            self.spatial_kernel.with_log_params(&p[nt..nt + ns])?,
            self.lik.with_log_params(&p[nt + ns..])?,
        ))
    }

    pub fn chain(&self, log_params: &[f64]) -> Result<SpatioTemporalChain> {
        let (kt, ks, _) = self.split(log_params)?;
        let spatial = SpatialConfig::new(ks, self.spatial_z.clone(), self.jitter)?;
        build_st_chain(&kt, spatial, self.grid.clone())
    }
}

impl ModelBuilder for SpatioTemporalModel {
    fn initial_params(&self) -> Vec<f64> {
        let mut p = self.temporal_kernel.log_params();
        p.extend(self.spatial_kernel.log_params());
        p.extend(self.lik.log_params());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self
            .temporal_kernel
            .param_names()
            .into_iter()
            .map(|s| format!("temporal.{s}"))
            .collect();
        n.extend(
            self.spatial_kernel
                .param_names()
                .into_iter()
                .map(|s| format!("spatial.{s}")),
        );
        n.extend(
            self.lik
                .param_names()
                .into_iter()
                .map(|s| format!("likelihood.{s}")),
        );
        n
    }

    fn build(&self, p: &[f64]) -> Result<Problem> {
        let (_, _, lik) = self.split(p)?;
        let st = self.chain(p)?;
        st_problem(&st, lik, &self.x, &self.r, &self.y)
    }
}
