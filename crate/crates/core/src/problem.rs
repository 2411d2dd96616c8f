//! Per-datum projections of the inducing chain, shared by every algorithm.

use rayon::prelude::*;

use crate::chain::{assign_segments, FunctionConditional, InducingGrid, MarkovChain};
use crate::error::{Error, Result};
use crate::kernels::{to_state_space, KernelSpec};
use crate::likelihoods::Likelihood;
use crate::linalg::Mat;

#[derive(Debug, Clone)]
pub struct Datum {
    pub segment: usize,
    pub x: f64,
    pub y: f64,
    /// `p(f_n | v_m) = N(W v_m, ν)`.
    pub w: Mat,
    pub nu: Mat,
    /// `p(f_n | u_m) = N(W_left u_m, ν_left)` via the forward transition only.
    pub w_left: Mat,
    pub nu_left: Mat,
    /// Data in the same segment strictly to the left.
    pub n_left: usize,
}

/// Chain, likelihood and data layout.
#[derive(Debug, Clone)]
pub struct Problem {
    pub chain: MarkovChain,
    pub lik: Likelihood,
    pub data: Vec<Datum>,
    pub counts: Vec<usize>,
    /// Data indices grouped by segment.
    pub by_segment: Vec<Vec<usize>>,
}

impl Problem {
    /// Assemble from precomputed conditionals. `n_left` is recomputed here.
    pub fn from_parts(chain: MarkovChain, lik: Likelihood, mut data: Vec<Datum>) -> Result<Self> {
        lik.validate()?;
        let o = lik.latent_dim();
        let d = chain.state_dim();
        let segs = chain.num_segments();
        let mut by_segment = vec![Vec::new(); segs];
        for (i, datum) in data.iter().enumerate() {
            lik.check_y(datum.y)?;
            if datum.segment >= segs {
                return Err(Error::Dimension(format!(
                    "datum {i} in segment {} of {segs}",
                    datum.segment
                )));
            }
            if datum.w.nrows() != o || datum.w.ncols() != 2 * d || datum.w_left.ncols() != d {
                return Err(Error::Dimension(format!(
                    "datum {i}: projection {}x{} does not match {o} latents and state dimension {d}",
                    datum.w.nrows(),
                    datum.w.ncols()
                )));
            }
            by_segment[datum.segment].push(i);
        }
        for idx in &by_segment {
            let mut order = idx.clone();
            order.sort_by(|&a, &b| data[a].x.total_cmp(&data[b].x));
            let mut smaller = 0;
            for (pos, &i) in order.iter().enumerate() {
                if pos > 0 && data[order[pos - 1]].x < data[i].x {
                    smaller = pos;
                }
                data[i].n_left = smaller;
            }
        }
        let counts = by_segment.iter().map(Vec::len).collect();
        Ok(Problem {
            chain,
            lik,
            data,
            counts,
            by_segment,
        })
    }

    /// Temporal model on a given grid.
    pub fn temporal(
        kernel: &KernelSpec,
        lik: Likelihood,
        grid: InducingGrid,
        x: &[f64],
        y: &[f64],
    ) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        if kernel.output_dim() != lik.latent_dim() {
            return Err(Error::Dimension(format!(
                "kernel has {} outputs but the {} likelihood needs {}",
                kernel.output_dim(),
                lik.name(),
                lik.latent_dim()
            )));
        }
        let sde = to_state_space(kernel)?;
        let chain = MarkovChain::discretize(sde, grid);
        let (segments, _) = assign_segments(x, &chain.grid)?;
        let data = segments
            .par_iter()
            .zip(x.par_iter().zip(y))
            .map(|(&m, (&xi, &yi))| {
                let FunctionConditional { w, nu } = chain.function_conditional(m, xi)?;
                let left = chain.left_conditional(m, xi)?;
                Ok(Datum {
                    segment: m,
                    x: xi,
                    y: yi,
                    w,
                    nu,
                    w_left: left.w,
                    nu_left: left.nu,
                    n_left: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Problem::from_parts(chain, lik, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.chain.state_dim()
    }
}
