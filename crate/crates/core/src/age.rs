//! Age-structured kernels on a grid whose time step equals the cell width.
//!
//! Over one step a particle in cell `j` moves to the next cell with survival
//! factor `S(k, j)` (or leaves the state space), and produces `B(k, j)`
//! expected newborns that end the step in cell 0. The right action is
//! `(K f)_j = S f_{next(j)} + B f_0` and the left action is its transpose.
//!
//! Unrolling the right action along a characteristic gives a discrete
//! Duhamel formula; [`AgeSemigroup::boundary_trace`] marches its scalar
//! boundary equation backward in time and [`AgeSemigroup::duhamel_steps`]
//! reconstructs the full profile from it.

use crate::error::{Error, Result};
use crate::measures::Grid;
use crate::semigroup::KernelSemigroup;

/// Per-step transport and birth coefficients.
pub trait AgeCoefficients: Send + Sync {
    /// Target cell and survival factor of cell `j` over step `k`; `None` means death.
    fn transport(&self, k: usize, j: usize) -> Option<(usize, f64)>;

    /// Expected newborns in cell 0 at the end of step `k` per unit mass in cell `j`.
    fn births(&self, k: usize, j: usize) -> f64;

    fn is_active(&self, _k: usize, _j: usize) -> bool {
        true
    }
}

/// `(1 − e^{−x h}) / x`, continuous at `x = 0`.
pub(crate) fn phi1(x: f64, h: f64) -> f64 {
    if (x * h).abs() < 1e-12 {
        h
    } else {
        -(-x * h).exp_m1() / x
    }
}

/// `(e^{x h} − 1) / x`, continuous at `x = 0`.
pub(crate) fn psi1(x: f64, h: f64) -> f64 {
    if (x * h).abs() < 1e-12 {
        h
    } else {
        (x * h).exp_m1() / x
    }
}

/// Survival and birth coefficients of a binary-fission step of length `h`.
///
/// `beta` is the mean division rate along the old particle's path and `b0`
/// the rate felt by newborns during the step. Old particles divide into two
/// newborns, and newborns may divide again before the step ends.
pub fn fission_step(beta: f64, b0: f64, h: f64) -> (f64, f64) {
    let s = (-beta * h).exp();
    let b = 2.0 * beta * (b0 * h).exp() * phi1(b0 + beta, h);
    (s, b)
}

/// Coefficients of a renewal kernel with an age-capped last cell, stored for
/// `period` distinct phases.
#[derive(Clone, Debug)]
pub struct FissionTable {
    n: usize,
    period: usize,
    survive: Vec<f64>,
    births: Vec<f64>,
}

impl FissionTable {
    /// Builds the table from `rates(phase, j) = (beta, b0)`.
    pub fn build(n: usize, period: usize, h: f64, rates: impl Fn(usize, usize) -> (f64, f64) + Sync) -> Self {
        use rayon::prelude::*;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..period)
            .into_par_iter()
            .map(|p| (0..n).map(|j| { let (beta, b0) = rates(p, j); fission_step(beta, b0, h) }).unzip())
            .collect();
        let mut survive = Vec::with_capacity(n * period);
        let mut births = Vec::with_capacity(n * period);
        for (s, b) in rows {
            survive.extend(s);
            births.extend(b);
        }
        Self { n, period, survive, births }
    }

    pub fn period(&self) -> usize {
        self.period
    }
}

impl AgeCoefficients for FissionTable {
    fn transport(&self, k: usize, j: usize) -> Option<(usize, f64)> {
        Some(((j + 1).min(self.n - 1), self.survive[(k % self.period) * self.n + j]))
    }

    fn births(&self, k: usize, j: usize) -> f64 {
        self.births[(k % self.period) * self.n + j]
    }
}

/// Semigroup generated by age coefficients on a grid with `dt = spacing`.
#[derive(Clone, Debug)]
pub struct AgeSemigroup<C> {
    grid: Grid,
    coeffs: C,
    homogeneous: bool,
    period: Option<usize>,
}

impl<C: AgeCoefficients> AgeSemigroup<C> {
    pub fn new(grid: Grid, coeffs: C, homogeneous: bool, period: Option<usize>) -> Result<Self> {
        if grid.lower() != 0.0 {
            return Err(Error::InvalidParameter("age grids start at 0".into()));
        }
        Ok(Self { grid, coeffs, homogeneous, period })
    }

    pub fn coefficients(&self) -> &C {
        &self.coeffs
    }

    /// `g[i] = (M_{k0+i, k1} f)(0)` for `i = 0..=k1−k0`, marched backward.
    pub fn boundary_trace(&self, k0: usize, k1: usize, f: &[f64]) -> Vec<f64> {
        let l = k1 - k0;
        let mut g = vec![0.0; l + 1];
        g[l] = f[0];
        for i in (0..l).rev() {
            g[i] = self.characteristic(k0 + i, k1, 0, f, &g, k0);
        }
        g
    }

    /// `M_{k0,k1} f` through the boundary trace and the discrete Duhamel formula.
    pub fn duhamel_steps(&self, k0: usize, k1: usize, f: &[f64]) -> Vec<f64> {
        if k1 == k0 {
            return f.to_vec();
        }
        let g = self.boundary_trace(k0, k1, f);
        (0..self.grid.n_cells())
            .map(|j| if self.coeffs.is_active(k0, j) { self.characteristic(k0, k1, j, f, &g, k0) } else { 0.0 })
            .collect()
    }

    /// Value at cell `start` and step `k` of `M_{k,k1} f`, given the boundary trace from `k0`.
    fn characteristic(&self, k: usize, k1: usize, start: usize, f: &[f64], g: &[f64], k0: usize) -> f64 {
        let mut pos = start;
        let mut surv = 1.0;
        let mut acc = 0.0;
        for kk in k..k1 {
            acc += surv * self.coeffs.births(kk, pos) * g[kk + 1 - k0];
            match self.coeffs.transport(kk, pos) {
                Some((next, s)) => {
                    surv *= s;
                    pos = next;
                }
                None => return acc,
            }
        }
        acc + surv * f[pos]
    }
}

impl<C: AgeCoefficients> KernelSemigroup for AgeSemigroup<C> {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn dt(&self) -> f64 {
        self.grid.spacing()
    }

    fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    fn period_steps(&self) -> Option<usize> {
        self.period
    }

    fn is_active(&self, k: usize, j: usize) -> bool {
        self.coeffs.is_active(k, j)
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        let f0 = f[0];
        for (j, o) in out.iter_mut().enumerate() {
            *o = if self.coeffs.is_active(k, j) {
                let tr = self.coeffs.transport(k, j).map_or(0.0, |(nj, s)| s * f[nj]);
                tr + self.coeffs.births(k, j) * f0
            } else {
                0.0
            };
        }
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut newborn = 0.0;
        for (j, &w) in mu.iter().enumerate() {
            if w == 0.0 || !self.coeffs.is_active(k, j) {
                continue;
            }
            if let Some((nj, s)) = self.coeffs.transport(k, j) {
                out[nj] += s * w;
            }
            newborn += self.coeffs.births(k, j) * w;
        }
        out[0] += newborn;
    }
}
