//! Inducing grid, discretised prior chain, and the within-segment conditionals.

use crate::error::{Error, Result};
use crate::kernels::LtiSde;
use crate::linalg::{floored_inverse, inf_norm, symmetrize, Mat};

/// Sorted inducing inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingGrid {
    z: Vec<f64>,
}

impl InducingGrid {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 inducing inputs, got {}",
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Grid("inducing inputs must be finite".into()));
        }
        if let Some(w) = z.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Grid(format!(
                "inducing inputs not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(InducingGrid { z })
    }

    /// `m` equally spaced points over `[lo, hi]` inclusive.
    pub fn linspace(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 2 || hi.is_nan() || lo.is_nan() || hi <= lo {
            return Err(Error::Grid(format!(
                "cannot place {m} points on [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (m - 1) as f64;
        let mut z: Vec<f64> = (0..m).map(|i| lo + step * i as f64).collect();
        z[m - 1] = hi;
        InducingGrid::new(z)
    }

    /// Default grid spanning the data.
    pub fn spanning(x: &[f64], m: usize) -> Result<Self> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Grid("no finite data to span".into()));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        InducingGrid::linspace(lo, hi, m)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.z.len() - 1
    }

    /// Segment of `x`: `z_m ≤ x < z_{m+1}`, with `x = z_M` in the last segment.
    pub fn segment_of(&self, x: f64) -> Result<usize> {
        let (lo, hi) = (self.z[0], self.z[self.z.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(Error::Coverage { x, lo, hi });
        }
        let idx = self.z.partition_point(|&v| v <= x);
        Ok((idx - 1).min(self.num_segments() - 1))
    }
}

/// Segment index of every input together with the per-segment counts.
pub fn assign_segments(x: &[f64], grid: &InducingGrid) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut counts = vec![0; grid.num_segments()];
    let seg = x
        .iter()
        .map(|&xi| {
            let m = grid.segment_of(xi)?;
            counts[m] += 1;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((seg, counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub a: Mat,
    pub q: Mat,
    /// `Q⁻¹` after eigenvalue flooring; used by the conditionals.
    pub q_inv: Mat,
}

impl Transition {
    pub fn new(a: Mat, q: Mat, floor: f64) -> Self {
        let q = symmetrize(&q);
        let q_inv = floored_inverse(&q, floor);
        Transition { a, q, q_inv }
    }
}

/// `p(s(x) | u_m, u_{m+1}) = N(R v, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateConditional {
    pub r: Mat,
    pub t: Mat,
}

/// `p(f(x) | v_m) = N(W v, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionConditional {
    pub w: Mat,
    pub nu: Mat,
}

/// Prior over inducing states.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub sde: LtiSde,
    pub grid: InducingGrid,
    pub transitions: Vec<Transition>,
    floor: f64,
}

impl MarkovChain {
    pub fn discretize(sde: LtiSde, grid: InducingGrid) -> Self {
        let floor = 1e-12 * inf_norm(&sde.p0);
        let transitions = grid
            .z()
            .windows(2)
            .map(|w| {
                let (a, q) = sde.transition(w[1] - w[0]);
                Transition::new(a, q, floor)
            })
            .collect();
        MarkovChain {
            sde,
            grid,
            transitions,
            floor,
        }
    }

    /// Assemble from precomputed transitions (used by structured priors).
    pub fn from_parts(
        sde: LtiSde,
        grid: InducingGrid,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        if transitions.len() != grid.num_segments() {
            return Err(Error::Dimension(format!(
                "{} transitions for {} segments",
                transitions.len(),
                grid.num_segments()
            )));
        }
        let floor = 1e-12 * inf_norm(&sde.p0);
        Ok(MarkovChain {
            sde,
            grid,
            transitions,
            floor,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.sde.state_dim()
    }

    pub fn num_inducing(&self) -> usize {
        self.grid.len()
    }

    pub fn num_segments(&self) -> usize {
        self.grid.num_segments()
    }

    pub fn p0(&self) -> &Mat {
        &self.sde.p0
    }

    pub fn eig_floor(&self) -> f64 {
        self.floor
    }

    fn check_segment(&self, m: usize, x: f64) -> Result<(f64, f64)> {
        if m >= self.num_segments() {
            return Err(Error::Dimension(format!("segment {m} out of range")));
        }
        let (lo, hi) = (self.grid.z()[m], self.grid.z()[m + 1]);
        if !(x >= lo && x <= hi) {
            return Err(Error::Segment {
                segment: m,
                x,
                lo,
                hi,
            });
        }
        Ok((lo, hi))
    }

    pub fn state_conditional(&self, m: usize, x: f64) -> Result<StateConditional> {
        let (lo, hi) = self.check_segment(m, x)?;
        let d = self.state_dim();
        let mut r = Mat::zeros(d, 2 * d);
        if x == lo {
            r.view_mut((0, 0), (d, d)).fill_with_identity();
            return Ok(StateConditional {
                r,
                t: Mat::zeros(d, d),
            });
        }
        if x == hi {
            r.view_mut((0, d), (d, d)).fill_with_identity();
            return Ok(StateConditional {
                r,
                t: Mat::zeros(d, d),
            });
        }
        let (a1, q1) = self.sde.transition(x - lo);
        let (a2, _) = self.sde.transition(hi - x);
        let tr = &self.transitions[m];
        let r2 = &q1 * a2.transpose() * &tr.q_inv;
        let r1 = &a1 - &r2 * &tr.a;
        let t = symmetrize(&(&q1 - &r2 * &a2 * &q1));
        r.view_mut((0, 0), (d, d)).copy_from(&r1);
        r.view_mut((0, d), (d, d)).copy_from(&r2);
        Ok(StateConditional { r, t })
    }

    pub fn function_conditional(&self, m: usize, x: f64) -> Result<FunctionConditional> {
        let sc = self.state_conditional(m, x)?;
        let h = &self.sde.h;
        Ok(FunctionConditional {
            w: h * &sc.r,
            nu: symmetrize(&(h * &sc.t * h.transpose())),
        })
    }

    /// `p(f(x) | u_m)` using only the forward transition from `z_m`.
    pub fn left_conditional(&self, m: usize, x: f64) -> Result<FunctionConditional> {
        let (lo, _) = self.check_segment(m, x)?;
        let (a, q) = self.sde.transition(x - lo);
        let h = &self.sde.h;
        Ok(FunctionConditional {
            w: h * a,
            nu: symmetrize(&(h * q * h.transpose())),
        })
    }
}
