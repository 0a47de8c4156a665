//! Discretized positive semigroups `M_{s,t}` on a time lattice, their mass
//! functions and the conservative normalization `P^{(t)}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{tv_cells, Grid, GridFunction, HybridMeasure};

/// A positive semigroup advanced in steps of `dt`.
///
/// Step `k` maps lattice time `k·dt` to `(k+1)·dt`. `step_right` is the action
/// on functions (`M_{k,k+1} f`) and `step_left` the dual action on cell masses;
/// implementations keep the two exactly transposed. Providers must be pure.
pub trait KernelSemigroup: Send + Sync {
    fn grid(&self) -> &Grid;

    fn dt(&self) -> f64;

    fn is_homogeneous(&self) -> bool {
        false
    }

    /// Number of steps in one period for periodic semigroups.
    fn period_steps(&self) -> Option<usize> {
        None
    }

    /// Relative tolerance for `M_{s,u} M_{u,t} = M_{s,t}`.
    fn composition_tolerance(&self) -> f64 {
        1e-6
    }

    /// Whether cell `j` belongs to the state space at lattice time `k`.
    fn is_active(&self, _k: usize, _j: usize) -> bool {
        true
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]);

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]);
}

/// Lattice index of `t`, rejecting times off the lattice.
pub fn lattice_index(dt: f64, t: f64) -> Result<usize> {
    let x = t / dt;
    let k = x.round();
    if !(t >= 0.0) || (x - k).abs() > 1e-7 * x.abs().max(1.0) {
        return Err(Error::OffLattice { t, dt });
    }
    Ok(k as usize)
}

fn indices<M: KernelSemigroup + ?Sized>(m: &M, s: f64, t: f64) -> Result<(usize, usize)> {
    let (a, b) = (lattice_index(m.dt(), s)?, lattice_index(m.dt(), t)?);
    if b < a {
        return Err(Error::InvalidParameter(format!("t = {t} precedes s = {s}")));
    }
    Ok((a, b))
}

/// `M_{k0,k1} f` on raw samples.
pub fn right_steps<M: KernelSemigroup + ?Sized>(m: &M, k0: usize, k1: usize, f: &[f64]) -> Vec<f64> {
    let mut cur = f.to_vec();
    let mut out = vec![0.0; cur.len()];
    for k in (k0..k1).rev() {
        m.step_right(k, &cur, &mut out);
        std::mem::swap(&mut cur, &mut out);
    }
    cur
}

/// `μ M_{k0,k1}` on raw cell masses.
pub fn left_steps<M: KernelSemigroup + ?Sized>(m: &M, k0: usize, k1: usize, mu: &[f64]) -> Vec<f64> {
    let mut cur = mu.to_vec();
    let mut out = vec![0.0; cur.len()];
    for k in k0..k1 {
        m.step_left(k, &cur, &mut out);
        std::mem::swap(&mut cur, &mut out);
    }
    cur
}

/// `M_{s,t} f`.
pub fn apply<M: KernelSemigroup + ?Sized>(m: &M, f: &GridFunction, s: f64, t: f64) -> Result<GridFunction> {
    let (a, b) = indices(m, s, t)?;
    if f.grid() != m.grid() {
        return Err(Error::GridMismatch("function grid differs from semigroup grid".into()));
    }
    if a == b {
        return Ok(f.clone());
    }
    GridFunction::from_values(m.grid(), right_steps(m, a, b, f.values()))
}

/// `μ M_{s,t}`; atoms are projected onto their cells first.
pub fn propagate<M: KernelSemigroup + ?Sized>(m: &M, mu: &HybridMeasure, s: f64, t: f64) -> Result<HybridMeasure> {
    let (a, b) = indices(m, s, t)?;
    if mu.grid() != m.grid() {
        return Err(Error::GridMismatch("measure grid differs from semigroup grid".into()));
    }
    HybridMeasure::from_cells(m.grid(), left_steps(m, a, b, &mu.project()))
}

/// `m_{s,t} = M_{s,t} 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassFunction {
    pub s: f64,
    pub t: f64,
    pub values: GridFunction,
}

/// Mass on raw lattice indices, checked for strong positivity on active cells.
pub fn mass_steps<M: KernelSemigroup + ?Sized>(m: &M, k0: usize, k1: usize) -> Result<Vec<f64>> {
    let ones = active_ones(m, k1);
    let v = right_steps(m, k0, k1, &ones);
    check_positive(m, k0, &v)?;
    Ok(v)
}

pub fn mass<M: KernelSemigroup + ?Sized>(m: &M, s: f64, t: f64) -> Result<MassFunction> {
    let (a, b) = indices(m, s, t)?;
    let v = mass_steps(m, a, b)?;
    Ok(MassFunction { s, t, values: GridFunction::from_values(m.grid(), v)? })
}

fn active_ones<M: KernelSemigroup + ?Sized>(m: &M, k: usize) -> Vec<f64> {
    (0..m.grid().n_cells()).map(|j| if m.is_active(k, j) { 1.0 } else { 0.0 }).collect()
}

fn check_positive<M: KernelSemigroup + ?Sized>(m: &M, k: usize, v: &[f64]) -> Result<()> {
    for (j, &x) in v.iter().enumerate() {
        if m.is_active(k, j) && !(x > 0.0) {
            return Err(Error::NonPositiveMass { cell: j, value: x });
        }
    }
    Ok(())
}

/// Masses `m_{k0,k}` for every `k` in `horizons` (sorted, all `>= k0`).
///
/// Homogeneous semigroups iterate one step at a time, periodic ones reuse the
/// monodromy when horizons are period-aligned, anything else recomputes.
pub fn mass_path<M: KernelSemigroup + ?Sized>(m: &M, k0: usize, horizons: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = m.grid().n_cells();
    let mut out = Vec::with_capacity(horizons.len());
    if m.is_homogeneous() {
        let mut cur = vec![1.0; n];
        let mut buf = vec![0.0; n];
        let mut at = k0;
        for &h in horizons {
            while at < h {
                m.step_right(0, &cur, &mut buf);
                std::mem::swap(&mut cur, &mut buf);
                at += 1;
            }
            check_positive(m, k0, &cur)?;
            out.push(cur.clone());
        }
        return Ok(out);
    }
    if let Some(p) = m.period_steps() {
        if horizons.iter().all(|&h| (h - k0) % p == 0) {
            let mut cur = active_ones(m, k0);
            let mut periods = 0;
            for &h in horizons {
                while periods < (h - k0) / p {
                    cur = right_steps(m, k0, k0 + p, &cur);
                    periods += 1;
                }
                check_positive(m, k0, &cur)?;
                out.push(cur.clone());
            }
            return Ok(out);
        }
    }
    for &h in horizons {
        out.push(mass_steps(m, k0, h)?);
    }
    Ok(out)
}

/// `P^{(t)}_{s,u} f = M_{s,u}(f m_{u,t}) / m_{s,t}`.
pub fn auxiliary_apply<M: KernelSemigroup + ?Sized>(
    m: &M,
    t_final: f64,
    s: f64,
    u: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    let (a, b) = indices(m, s, u)?;
    let (_, c) = indices(m, u, t_final)?;
    let m_ut = mass_steps(m, b, c)?;
    let m_st = right_steps(m, a, b, &m_ut);
    check_positive(m, a, &m_st)?;
    let g: Vec<f64> = f.values().iter().zip(&m_ut).map(|(x, y)| x * y).collect();
    let num = right_steps(m, a, b, &g);
    let vals = num
        .iter()
        .zip(&m_st)
        .enumerate()
        .map(|(j, (x, y))| if m.is_active(a, j) { x / y } else { 0.0 })
        .collect();
    GridFunction::from_values(m.grid(), vals)
}

/// `μ P^{(t)}_{s,u}` as a measure on the grid.
pub fn auxiliary_left<M: KernelSemigroup + ?Sized>(
    m: &M,
    t_final: f64,
    s: f64,
    u: f64,
    mu: &HybridMeasure,
) -> Result<HybridMeasure> {
    let (a, b) = indices(m, s, u)?;
    let (_, c) = indices(m, u, t_final)?;
    let m_ut = mass_steps(m, b, c)?;
    let m_st = right_steps(m, a, b, &m_ut);
    check_positive(m, a, &m_st)?;
    let w: Vec<f64> = mu.project().iter().zip(&m_st).map(|(x, y)| if *y > 0.0 { x / y } else { 0.0 }).collect();
    let img = left_steps(m, a, b, &w);
    HybridMeasure::from_cells(m.grid(), img.iter().zip(&m_ut).map(|(x, y)| x * y).collect())
}

/// Result of a power iteration over a block of steps.
#[derive(Clone, Debug)]
pub struct Dominant {
    /// Growth factor of the block.
    pub growth: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub increment: f64,
}

/// Left power iteration `γ ← γ M_{k0,k0+block} / mass`; `γ` stays a probability.
pub fn power_left<M: KernelSemigroup + ?Sized>(
    m: &M,
    k0: usize,
    block: usize,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Dominant> {
    let total: f64 = init.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut cur: Vec<f64> = init.iter().map(|x| x / total).collect();
    let mut increment = f64::INFINITY;
    for it in 1..=max_iter {
        let next = left_steps(m, k0, k0 + block, &cur);
        let growth: f64 = next.iter().sum();
        if !(growth > 0.0) {
            return Err(Error::ZeroMass);
        }
        let next: Vec<f64> = next.iter().map(|x| x / growth).collect();
        increment = tv_cells(&next, &cur);
        cur = next;
        if increment < tol {
            return Ok(Dominant { growth, vector: cur, iterations: it, increment });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, increment })
}

/// Right power iteration `h ← M_{k0,k0+block} h / ‖·‖_∞`.
pub fn power_right<M: KernelSemigroup + ?Sized>(
    m: &M,
    k0: usize,
    block: usize,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Dominant> {
    let sup = init.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(sup > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut cur: Vec<f64> = init.iter().map(|x| x / sup).collect();
    let mut increment = f64::INFINITY;
    for it in 1..=max_iter {
        let next = right_steps(m, k0, k0 + block, &cur);
        let growth = next.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if !(growth > 0.0) {
            return Err(Error::ZeroMass);
        }
        let next: Vec<f64> = next.iter().map(|x| x / growth).collect();
        increment = next.iter().zip(&cur).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        cur = next;
        if increment < tol {
            return Ok(Dominant { growth, vector: cur, iterations: it, increment });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, increment })
}

/// Dense kernels cycled with period `kernels.len()`; row `x` of a kernel is
/// `δ_x M_{k,k+1}` as cell masses.
#[derive(Clone, Debug)]
pub struct MatrixSemigroup {
    grid: Grid,
    dt: f64,
    kernels: Vec<Vec<f64>>,
}

impl MatrixSemigroup {
    pub fn new(grid: &Grid, dt: f64, kernels: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.n_cells();
        if kernels.is_empty() || kernels.iter().any(|k| k.len() != n * n) {
            return Err(Error::GridMismatch(format!("kernels must be {n}x{n}")));
        }
        if kernels.iter().flatten().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidParameter("kernel entries must be nonnegative".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        Ok(Self { grid: grid.clone(), dt, kernels })
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        &self.kernels[k % self.kernels.len()]
    }
}

impl KernelSemigroup for MatrixSemigroup {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn is_homogeneous(&self) -> bool {
        self.kernels.len() == 1
    }

    fn period_steps(&self) -> Option<usize> {
        Some(self.kernels.len())
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        let a = self.kernel(k);
        for (i, o) in out.iter_mut().enumerate() {
            *o = a[i * n..(i + 1) * n].iter().zip(f).map(|(x, y)| x * y).sum();
        }
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        let a = self.kernel(k);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &w) in mu.iter().enumerate() {
            if w != 0.0 {
                for (o, x) in out.iter_mut().zip(&a[i * n..(i + 1) * n]) {
                    *o += w * x;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::pair;

    fn toy() -> MatrixSemigroup {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        let a = vec![0.5, 0.3, 0.4, 0.1, 1.0, 0.2, 0.7, 0.2, 0.3];
        let b = vec![0.2, 0.2, 0.2, 0.9, 0.1, 0.3, 0.4, 0.4, 0.6];
        MatrixSemigroup::new(&g, 0.5, vec![a, b]).unwrap()
    }

    #[test]
    fn lattice_checks() {
        assert_eq!(lattice_index(0.25, 1.0).unwrap(), 4);
        assert!(lattice_index(0.25, 0.3).is_err());
        assert!(lattice_index(0.25, -0.25).is_err());
    }

    #[test]
    fn mass_at_equal_times_is_one() {
        let m = toy();
        let mf = mass(&m, 1.0, 1.0).unwrap();
        assert!(mf.values.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn left_right_compatible() {
        let m = toy();
        let g = m.grid().clone();
        let mu = HybridMeasure::from_cells(&g, vec![0.2, -0.5, 1.5]).unwrap();
        let f = GridFunction::from_values(&g, vec![1.0, 3.0, -2.0]).unwrap();
        let lhs = pair(&propagate(&m, &mu, 0.5, 2.5).unwrap(), &f).unwrap();
        let rhs = pair(&mu, &apply(&m, &f, 0.5, 2.5).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn auxiliary_is_conservative_and_matches_normalized_kernel() {
        let m = toy();
        let g = m.grid().clone();
        let one = GridFunction::constant(&g, 1.0);
        let p = auxiliary_apply(&m, 3.0, 0.5, 1.5, &one).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-14));

        let dx = HybridMeasure::dirac(&g, 0.5).unwrap();
        let lhs = auxiliary_left(&m, 2.0, 0.0, 2.0, &dx).unwrap();
        let mst = mass(&m, 0.0, 2.0).unwrap();
        let rhs = propagate(&m, &dx, 0.0, 2.0).unwrap().scaled(1.0 / mst.values.values()[1]);
        assert!(crate::measures::tv_norm(&lhs.sub(&rhs).unwrap()) < 1e-14);
    }

    #[test]
    fn auxiliary_semigroup_property() {
        let m = toy();
        let g = m.grid().clone();
        let f = GridFunction::from_values(&g, vec![0.3, -1.0, 2.0]).unwrap();
        let inner = auxiliary_apply(&m, 3.0, 1.0, 2.0, &f).unwrap();
        let two = auxiliary_apply(&m, 3.0, 0.0, 1.0, &inner).unwrap();
        let one = auxiliary_apply(&m, 3.0, 0.0, 2.0, &f).unwrap();
        for (a, b) in two.values().iter().zip(one.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_path_matches_direct() {
        let m = toy();
        let path = mass_path(&m, 1, &[1, 3, 5]).unwrap();
        for (h, v) in [1usize, 3, 5].iter().zip(&path) {
            let d = mass_steps(&m, 1, *h).unwrap();
            for (a, b) in v.iter().zip(&d) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_kernel_violates_strong_positivity() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        let m = MatrixSemigroup::new(&g, 1.0, vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(mass(&m, 0.0, 1.0), Err(Error::NonPositiveMass { cell: 1, .. })));
    }

    #[test]
    fn power_iteration_on_rank_one() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        // every row is 2 * (0.25, 0.75)
        let m = MatrixSemigroup::new(&g, 1.0, vec![vec![0.5, 1.5, 0.5, 1.5]]).unwrap();
        let d = power_left(&m, 0, 1, &[1.0, 0.0], 1e-14, 10).unwrap();
        assert!((d.growth - 2.0).abs() < 1e-14);
        assert!((d.vector[0] - 0.25).abs() < 1e-14);
        let r = power_right(&m, 0, 1, &[1.0, 0.3], 1e-14, 10).unwrap();
        assert!((r.vector[0] - 1.0).abs() < 1e-14 && (r.vector[1] - 1.0).abs() < 1e-14);
    }
}
