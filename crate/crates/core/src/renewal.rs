//! Homogeneous renewal semigroup: binary fission at age-dependent rate `b`.
//!
//! The dual equation is `∂_t f = ∂_a f + b(a)(2 f(0) − f(a))`. Rates are
//! sampled at cell midpoints, so crenel rates aligned with the grid are
//! represented exactly and all age integrals below are exact cell by cell.

use serde::{Deserialize, Serialize};

use crate::age::{phi1, AgeSemigroup, FissionTable};
use crate::error::{Error, Result};
use crate::measures::{pair, Grid, GridFunction, HybridMeasure};
use crate::report::Check;
use crate::semigroup::{lattice_index, left_steps, power_left, power_right, KernelSemigroup};

/// Shape of an age-dependent division rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RateProfile {
    Constant(f64),
    /// `on` on `[a0 + kp, a0 + kp + l)`, `off` elsewhere.
    Crenel { on: f64, off: f64 },
    /// Piecewise linear through `(age, rate)` points, flat outside.
    Tabulated(Vec<(f64, f64)>),
}

/// Division rate together with the crenel lower bound it satisfies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisionRate {
    pub profile: RateProfile,
    pub a0: f64,
    pub p: f64,
    pub l: f64,
    pub b_lower: f64,
}

impl DivisionRate {
    pub fn new(profile: RateProfile, a0: f64, p: f64, l: f64, b_lower: f64) -> Result<Self> {
        if !(a0 >= 0.0 && p > 0.0 && l > p / 2.0 && l <= p && b_lower > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "crenel parameters need a0 >= 0, p > 0, p/2 < l <= p, b_lower > 0 (got a0={a0}, p={p}, l={l}, b_lower={b_lower})"
            )));
        }
        if let RateProfile::Tabulated(pts) = &profile {
            if pts.is_empty() || pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidParameter("tabulated rate needs increasing ages".into()));
            }
        }
        let rate = Self { profile, a0, p, l, b_lower };
        let negative = match &rate.profile {
            RateProfile::Constant(b) => *b < 0.0,
            RateProfile::Crenel { on, off } => *on < 0.0 || *off < 0.0,
            RateProfile::Tabulated(pts) => pts.iter().any(|q| q.1 < 0.0),
        };
        if negative {
            return Err(Error::InvalidParameter("division rate must be nonnegative".into()));
        }
        let horizon = rate.default_a_max();
        let mut k = 0.0;
        while a0 + k * p < horizon {
            for i in 0..=64 {
                let a = a0 + k * p + l * (i as f64) / 64.0 * (1.0 - 1e-9);
                if rate.value(a) < b_lower - 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "rate {} at age {a} is below b_lower = {b_lower} on a crenel",
                        rate.value(a)
                    )));
                }
            }
            k += 1.0;
        }
        Ok(rate)
    }

    /// `b ≡ value`, viewed as a crenel rate with full-period crenels.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(RateProfile::Constant(value), 1.0, 1.0, 1.0, value)
    }

    pub fn value(&self, a: f64) -> f64 {
        match &self.profile {
            RateProfile::Constant(b) => *b,
            RateProfile::Crenel { on, off } => {
                if a >= self.a0 && (a - self.a0).rem_euclid(self.p) < self.l {
                    *on
                } else {
                    *off
                }
            }
            RateProfile::Tabulated(pts) => interp(pts, a),
        }
    }

    /// `∫_0^x b`.
    pub fn integral(&self, x: f64) -> f64 {
        match &self.profile {
            RateProfile::Constant(b) => b * x,
            RateProfile::Crenel { on, off } => {
                let overlap = if x <= self.a0 {
                    0.0
                } else {
                    let y = x - self.a0;
                    let k = (y / self.p).floor();
                    k * self.l + (y - k * self.p).min(self.l)
                };
                off * x + (on - off) * overlap
            }
            RateProfile::Tabulated(pts) => {
                let mut acc = 0.0;
                let mut prev = (0.0, interp(pts, 0.0));
                let knots = pts.iter().map(|q| q.0).filter(|&a| a > 0.0 && a < x).chain(std::iter::once(x));
                for a in knots {
                    let v = interp(pts, a);
                    acc += 0.5 * (prev.1 + v) * (a - prev.0);
                    prev = (a, v);
                }
                acc
            }
        }
    }

    /// `𝔟(x) = sup_{[0,x]} b`.
    pub fn sup_on(&self, x: f64) -> f64 {
        match &self.profile {
            RateProfile::Constant(b) => *b,
            RateProfile::Crenel { on, off } => {
                if x >= self.a0 {
                    on.max(*off)
                } else {
                    *off
                }
            }
            RateProfile::Tabulated(pts) => {
                pts.iter().filter(|q| q.0 <= x).map(|q| q.1).fold(interp(pts, 0.0).max(interp(pts, x)), f64::max)
            }
        }
    }

    /// Supremum of `b` over `[0, x]` sampled with the grid used for simulation majorants.
    pub fn sup(&self) -> f64 {
        match &self.profile {
            RateProfile::Constant(b) => *b,
            RateProfile::Crenel { on, off } => on.max(*off),
            RateProfile::Tabulated(pts) => pts.iter().map(|q| q.1).fold(0.0, f64::max),
        }
    }

    /// `a0 + p ⌈(12/b̲ + l)/p⌉ + l`: ends on a crenel, with tail mass below `e^{−12}` per unit `λ + b̲`.
    pub fn default_a_max(&self) -> f64 {
        self.a0 + self.p * ((12.0 / self.b_lower + self.l) / self.p).ceil() + self.l
    }

    /// Midpoint samples on the grid cells.
    pub fn cell_rates(&self, grid: &Grid) -> Vec<f64> {
        grid.midpoints().into_iter().map(|a| self.value(a)).collect()
    }
}

fn interp(pts: &[(f64, f64)], a: f64) -> f64 {
    let i = pts.partition_point(|q| q.0 <= a);
    if i == 0 {
        return pts[0].1;
    }
    if i == pts.len() {
        return pts[pts.len() - 1].1;
    }
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    y0 + (y1 - y0) * (a - x0) / (x1 - x0)
}

/// Age grid `[0, a_max)` with cells of width `spacing`.
pub fn age_grid(a_max: f64, spacing: f64) -> Result<Grid> {
    let n = (a_max / spacing).round();
    if !(n >= 1.0) || (n * spacing - a_max).abs() > 1e-9 * a_max {
        return Err(Error::InvalidParameter(format!("a_max = {a_max} is not a multiple of spacing = {spacing}")));
    }
    Grid::with_spacing(0.0, spacing, n as usize)
}

/// `(λ, γ, h)` with `γ` a probability and `γ(h) = 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenTriplet {
    pub lambda: f64,
    pub gamma: HybridMeasure,
    pub h: GridFunction,
}

/// Renewal semigroup on a truncated age grid with `dt = spacing`; the last
/// cell keeps its particles (ages beyond `a_max` are lumped there).
#[derive(Clone, Debug)]
pub struct RenewalSemigroup {
    rate: DivisionRate,
    inner: AgeSemigroup<FissionTable>,
}

impl RenewalSemigroup {
    pub fn new(rate: DivisionRate, a_max: f64, spacing: f64) -> Result<Self> {
        let grid = age_grid(a_max, spacing)?;
        let b = rate.cell_rates(&grid);
        let n = b.len();
        let table = FissionTable::build(n, 1, spacing, |_, j| {
            let beta = if j + 1 < n { 0.5 * (b[j] + b[j + 1]) } else { b[j] };
            (beta, b[0])
        });
        Ok(Self { rate, inner: AgeSemigroup::new(grid, table, true, Some(1))? })
    }

    pub fn rate(&self) -> &DivisionRate {
        &self.rate
    }

    pub fn kernel(&self) -> &AgeSemigroup<FissionTable> {
        &self.inner
    }

    /// `M_t f` through the boundary Volterra equation and the Duhamel formula.
    pub fn duhamel_apply(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        if f.grid() != self.grid() {
            return Err(Error::GridMismatch("function grid differs from the age grid".into()));
        }
        let k = lattice_index(self.dt(), t)?;
        if k == 0 {
            return Ok(f.clone());
        }
        GridFunction::from_values(self.grid(), self.inner.duhamel_steps(0, k, f.values()))
    }

    /// `t ↦ M_t f(0)` on the lattice `0, dt, …, t`.
    pub fn boundary_trace(&self, f: &GridFunction, t: f64) -> Result<Vec<f64>> {
        let k = lattice_index(self.dt(), t)?;
        let mut g = self.inner.boundary_trace(0, k, f.values());
        g.reverse();
        Ok(g)
    }

    /// Perron triplet of the discretized semigroup by power iteration over unit-time blocks.
    pub fn discrete_triplet(&self, tol: f64) -> Result<EigenTriplet> {
        let grid = self.grid().clone();
        let lambda0 = malthus_lambda(&self.rate, &grid)?;
        let block = (1.0 / self.dt()).round().max(1.0) as usize;
        let g0 = stationary_profile(&self.rate, lambda0, &grid)?.gamma.project();
        let left = power_left(self, 0, block, &g0, tol, 2000)?;
        let h0 = harmonic_h(&self.rate, lambda0, &grid)?;
        let right = power_right(self, 0, block, h0.values(), tol, 2000)?;
        let gamma = HybridMeasure::from_cells(&grid, left.vector)?;
        let norm: f64 = gamma.density_weights().iter().zip(&right.vector).map(|(a, b)| a * b).sum();
        let h = GridFunction::from_values(&grid, right.vector.iter().map(|x| x / norm).collect())?;
        Ok(EigenTriplet { lambda: left.growth.ln() / (block as f64 * self.dt()), gamma, h })
    }

    /// `‖e^{−λt} μ M_t − μ(h) γ‖_TV` at each lattice time in `times` (nondecreasing).
    pub fn decay_series(&self, triplet: &EigenTriplet, mu: &HybridMeasure, times: &[f64]) -> Result<Vec<f64>> {
        let mu_h = pair(mu, &triplet.h)?;
        let target: Vec<f64> = triplet.gamma.project().iter().map(|g| mu_h * g).collect();
        let mut cur = mu.project();
        let mut at = 0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let k = lattice_index(self.dt(), t)?;
            if k < at {
                return Err(Error::InvalidParameter("times must be nondecreasing".into()));
            }
            cur = left_steps(self, at, k, &cur);
            at = k;
            let scale = (-triplet.lambda * t).exp();
            out.push(cur.iter().zip(&target).map(|(x, y)| (scale * x - y).abs()).sum());
        }
        Ok(out)
    }
}

impl KernelSemigroup for RenewalSemigroup {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn is_homogeneous(&self) -> bool {
        true
    }

    fn period_steps(&self) -> Option<usize> {
        Some(1)
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        self.inner.step_right(k, f, out)
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        self.inner.step_left(k, mu, out)
    }
}

/// Characteristic function `2∫_0^{a_max} b e^{−∫_0^a(λ+b)} − 1`, exact for cellwise-constant `b`.
pub fn characteristic(rates: &[f64], h: f64, lambda: f64) -> f64 {
    let mut e = 0.0f64;
    let mut acc = 0.0;
    for &b in rates {
        acc += b * (-e).exp() * phi1(lambda + b, h);
        e += (lambda + b) * h;
    }
    2.0 * acc - 1.0
}

/// Root of the characteristic equation by bisection.
pub fn malthus_lambda(rate: &DivisionRate, grid: &Grid) -> Result<f64> {
    let b = rate.cell_rates(grid);
    let h = grid.spacing();
    let sup = b.iter().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = (-sup, 2.0 * sup + 1.0);
    let mut widen = 0;
    while characteristic(&b, h, lo) < 0.0 || characteristic(&b, h, hi) > 0.0 {
        widen += 1;
        if widen > 60 {
            return Err(Error::Bracket(format!(
                "no sign change on [{lo}, {hi}]; the truncated domain may be too short"
            )));
        }
        let w = hi - lo;
        lo -= w;
        hi += w;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if characteristic(&b, h, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let f = characteristic(&b, h, lambda);
    if f.abs() >= 1e-10 {
        return Err(Error::Bracket(format!("residual {f:e} at λ = {lambda}")));
    }
    Ok(lambda)
}

/// `γ(da) = κ e^{−∫_0^a(λ+b)} da` on the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryProfile {
    pub gamma: HybridMeasure,
    pub kappa: f64,
    /// Density at the cell midpoints.
    pub density: Vec<f64>,
    /// Upper estimate of the mass beyond `a_max` before normalization on the grid.
    pub tail_mass: f64,
}

pub fn stationary_profile(rate: &DivisionRate, lambda: f64, grid: &Grid) -> Result<StationaryProfile> {
    let b = rate.cell_rates(grid);
    let h = grid.spacing();
    let mut e = 0.0f64;
    let mut cells = Vec::with_capacity(b.len());
    let mut dens = Vec::with_capacity(b.len());
    for &bj in &b {
        cells.push((-e).exp() * phi1(lambda + bj, h));
        dens.push((-e - 0.5 * (lambda + bj) * h).exp());
        e += (lambda + bj) * h;
    }
    let total: f64 = cells.iter().sum();
    let tail = (-e).exp() / (lambda + rate.b_lower).max(1e-300);
    let kappa = 1.0 / total;
    Ok(StationaryProfile {
        gamma: HybridMeasure::from_cells(grid, cells.iter().map(|c| c * kappa).collect())?,
        kappa,
        density: dens.iter().map(|d| d * kappa).collect(),
        tail_mass: tail * kappa,
    })
}

/// `h(a) ∝ ∫_a^∞ b(a′) e^{−∫_a^{a′}(λ+b)} da′`, scaled so that `γ(h) = 1`.
///
/// Beyond `a_max` the last cell's rate is continued.
pub fn harmonic_h(rate: &DivisionRate, lambda: f64, grid: &Grid) -> Result<GridFunction> {
    let b = rate.cell_rates(grid);
    let h = grid.spacing();
    let n = b.len();
    let last = b[n - 1];
    let mut edge = if lambda + last > 0.0 { last / (lambda + last) } else { 1.0 };
    let mut mid = vec![0.0; n];
    for j in (0..n).rev() {
        let x = lambda + b[j];
        mid[j] = b[j] * phi1(x, 0.5 * h) + (-x * 0.5 * h).exp() * edge;
        edge = b[j] * phi1(x, h) + (-x * h).exp() * edge;
    }
    let gamma = stationary_profile(rate, lambda, grid)?.gamma;
    let raw = GridFunction::new(grid, mid, edge)?;
    let norm = pair(&gamma, &raw)?;
    GridFunction::new(grid, raw.values().iter().map(|v| v / norm).collect(), edge / norm)
}

/// Explicit triplet from the characteristic equation and the closed forms.
pub fn eigen_triplet(rate: &DivisionRate, grid: &Grid) -> Result<EigenTriplet> {
    let lambda = malthus_lambda(rate, grid)?;
    Ok(EigenTriplet {
        lambda,
        gamma: stationary_profile(rate, lambda, grid)?.gamma,
        h: harmonic_h(rate, lambda, grid)?,
    })
}

/// Rate `ρ` of the crenel spectral-gap bound with window `α = l − p/2`.
pub fn spectral_gap_rho(rate: &DivisionRate) -> Result<f64> {
    let (a0, p, l, bl) = (rate.a0, rate.p, rate.l, rate.b_lower);
    let alpha = l - p / 2.0;
    let w = 2.0 * l - p - alpha;
    if !(w > 0.0) {
        return Err(Error::InvalidParameter(format!("2l − p − α = {w} must be positive")));
    }
    let span = 2.0 * a0 + p + l;
    let expo = -2.0 * rate.integral(span) - 2.0 * span * rate.sup_on(span);
    let x = alpha * bl * (-(-bl * w).exp_m1()) * expo.exp();
    Ok(-(-x).ln_1p() / span)
}

/// Monotonicity, factor-two and sup-norm bounds of the mass on the lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructuralReport {
    pub monotone: Check,
    pub factor_two: Check,
    pub sup_bound: Check,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.monotone.pass && self.factor_two.pass && self.sup_bound.pass
    }
}

/// Checks `m_{t+dt} >= m_t`, `m_t(a) <= 2 m_t(0)` and `‖m_t‖_∞ <= 2e^{2𝔟(t)t}` at every lattice point up to `horizon`.
pub fn structural_checks(r: &RenewalSemigroup, horizon: f64) -> Result<StructuralReport> {
    let kmax = lattice_index(r.dt(), horizon)?;
    let n = r.grid().n_cells();
    let mut cur = vec![1.0; n];
    let mut next = vec![0.0; n];
    let (mut mono, mut two, mut sup) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for k in 0..=kmax {
        let t = k as f64 * r.dt();
        let m0 = cur[0];
        let top = cur.iter().copied().fold(0.0, f64::max);
        two = two.min(1.0 - top / (2.0 * m0));
        sup = sup.min(1.0 - top / (2.0 * (2.0 * r.rate().sup_on(t) * t).exp()));
        if k < kmax {
            r.step_right(k, &cur, &mut next);
            for (a, b) in next.iter().zip(&cur) {
                mono = mono.min((a - b) / b);
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }
    Ok(StructuralReport {
        monotone: Check::ge("mass_nondecreasing", mono, 0.0),
        factor_two: Check::ge("mass_factor_two", two, 0.0),
        sup_bound: Check::ge("mass_sup_bound", sup, 0.0),
    })
}

/// The window measure `ν(f) = ∫_0^α M_s f(0) ds / ∫_0^α m_s(0) ds` and the
/// analytic minorization constant at `t0 = a0 + n p + l`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H1Construction {
    pub nu: HybridMeasure,
    pub c: f64,
    /// Analytic domination constant `α / (2 ∫_0^α m_s(0) ds)`.
    pub d: f64,
    pub t0: f64,
    pub alpha: f64,
    pub mass_integral: f64,
}

pub fn h1_nu_construct(r: &RenewalSemigroup, alpha_window: f64) -> Result<H1Construction> {
    let rate = r.rate();
    let (a0, p, l, bl) = (rate.a0, rate.p, rate.l, rate.b_lower);
    if !(alpha_window > 0.0 && alpha_window < 2.0 * l - p) {
        return Err(Error::InvalidParameter(format!("window α = {alpha_window} outside (0, 2l − p)")));
    }
    let steps = lattice_index(r.dt(), alpha_window)?;
    let n_per = (a0 / p).floor() + 1.0;
    let t0 = a0 + n_per * p + l;
    let h = r.dt();
    let nc = r.grid().n_cells();
    let mut acc = vec![0.0; nc];
    let mut cur = vec![0.0; nc];
    cur[0] = 1.0;
    let mut buf = vec![0.0; nc];
    for k in 0..=steps {
        let wgt = if k == 0 || k == steps { 0.5 * h } else { h };
        acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += wgt * c);
        if k < steps {
            r.step_left(k, &cur, &mut buf);
            std::mem::swap(&mut cur, &mut buf);
        }
    }
    let mass_integral: f64 = acc.iter().sum();
    let nu = HybridMeasure::from_cells(r.grid(), acc.iter().map(|x| x / mass_integral).collect())?;
    let k0 = lattice_index(h, t0)?;
    let m_t0 = crate::semigroup::mass_steps(r, 0, k0)?;
    let sup = m_t0.iter().copied().fold(0.0, f64::max);
    let w = 2.0 * l - p - alpha_window;
    let c = 4.0 * (mass_integral / sup) * bl * (-(-bl * w).exp_m1()) * (-2.0 * rate.integral(t0)).exp();
    Ok(H1Construction { nu, c, d: alpha_window / (2.0 * mass_integral), t0, alpha: alpha_window, mass_integral })
}
