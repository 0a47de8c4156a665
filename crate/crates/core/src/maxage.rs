//! Renewal with a growing maximal age.
//!
//! Individuals age at unit speed, give birth to one newborn at rate `b(a)`
//! and die when their age reaches the ceiling `a_t`. The state space
//! `[0, a_t)` is realized as a fixed grid on `[0, a_inf)` with a per-step
//! active mask: cell `j` is active at step `k` when it meets `[0, a_{k dt})`.
//! Freezing the ceiling at `a_inf` gives the homogeneous limit semigroup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::age::{psi1, AgeCoefficients, AgeSemigroup};
use crate::error::{Error, Result};
use crate::measures::{tv_cells, Grid, GridFunction, HybridMeasure};
use crate::renewal::{age_grid, DivisionRate};
use crate::report::Check;
use crate::semigroup::{lattice_index, left_steps, power_left, KernelSemigroup};

const MAX_SCHEDULE_STEPS: usize = 10_000_000;

/// Maximal age `t ↦ a_t`, nondecreasing from `a0` to `a_inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaxAgeSchedule {
    /// `a_inf − (a_inf − a0) e^{−t}`.
    Saturating { a0: f64, a_inf: f64 },
    /// `min(a0 + slope·t, a_inf)`.
    LinearThenFlat { a0: f64, a_inf: f64, slope: f64 },
    Constant { a: f64 },
}

impl MaxAgeSchedule {
    pub fn a0(&self) -> f64 {
        match *self {
            Self::Saturating { a0, .. } | Self::LinearThenFlat { a0, .. } => a0,
            Self::Constant { a } => a,
        }
    }

    pub fn a_inf(&self) -> f64 {
        match *self {
            Self::Saturating { a_inf, .. } | Self::LinearThenFlat { a_inf, .. } => a_inf,
            Self::Constant { a } => a,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Saturating { a0, a_inf } => a_inf - (a_inf - a0) * (-t).exp(),
            Self::LinearThenFlat { a0, a_inf, slope } => (a0 + slope * t).min(a_inf),
            Self::Constant { a } => a,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Saturating { a0, a_inf } => a0 > 0.0 && a_inf >= a0 && a_inf - a0 < 1.0,
            Self::LinearThenFlat { a0, a_inf, slope } => a0 > 0.0 && a_inf >= a0 && slope > 0.0 && slope < 1.0,
            Self::Constant { a } => a > 0.0,
        };
        if ok && self.a_inf().is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("schedule {self:?} must satisfy 0 < a0 <= a_inf < inf with t - a_t increasing")))
        }
    }
}

/// Transport, birth and activity tables of the max-age scheme.
#[derive(Clone, Debug)]
pub struct MaxAgeCoefficients {
    rates: Vec<f64>,
    h: f64,
    /// Active cell counts for steps `0..counts.len()`; all cells afterwards.
    counts: Vec<usize>,
    n: usize,
}

impl MaxAgeCoefficients {
    fn build(schedule: &MaxAgeSchedule, rates: Vec<f64>, h: f64) -> Result<Self> {
        let n = rates.len();
        let count = |k: usize| {
            let a = schedule.at(k as f64 * h);
            (((a / h) - 1e-9).ceil().max(0.0) as usize).min(n)
        };
        let mut counts = Vec::new();
        let mut prev = schedule.at(0.0);
        for k in 0..MAX_SCHEDULE_STEPS {
            let c = count(k);
            if k > 0 {
                let a = schedule.at(k as f64 * h);
                if a - prev >= h {
                    return Err(Error::InvalidParameter(format!("t - a_t is not increasing at step {k} (dt = {h})")));
                }
                prev = a;
            }
            if c == 0 {
                return Err(Error::InvalidParameter("maximal age below one cell".into()));
            }
            if c == n {
                break;
            }
            counts.push(c);
        }
        Ok(Self { rates, h, counts, n })
    }

    /// Number of active cells at step `k`.
    pub fn active_count(&self, k: usize) -> usize {
        self.counts.get(k).copied().unwrap_or(self.n)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

impl AgeCoefficients for MaxAgeCoefficients {
    fn transport(&self, k: usize, j: usize) -> Option<(usize, f64)> {
        (j + 1 < self.active_count(k + 1)).then_some((j + 1, 1.0))
    }

    fn births(&self, k: usize, j: usize) -> f64 {
        let next = if j + 1 < self.active_count(k + 1) { self.rates[j + 1] } else { 0.0 };
        0.5 * (self.rates[j] + next) * psi1(self.rates[0], self.h)
    }

    fn is_active(&self, k: usize, j: usize) -> bool {
        j < self.active_count(k)
    }
}

/// Max-age semigroup on the lattice `dt = spacing`.
#[derive(Clone, Debug)]
pub struct MaxAgeSemigroup {
    schedule: MaxAgeSchedule,
    rate: DivisionRate,
    b_lower: f64,
    b_upper: f64,
    inner: AgeSemigroup<MaxAgeCoefficients>,
}

impl MaxAgeSemigroup {
    pub fn new(schedule: MaxAgeSchedule, rate: DivisionRate, spacing: f64) -> Result<Self> {
        schedule.validate()?;
        let grid = age_grid(schedule.a_inf(), spacing)?;
        let rates = rate.cell_rates(&grid);
        let b_lower = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let b_upper = rates.iter().copied().fold(0.0, f64::max);
        if !(b_lower > 0.0) {
            return Err(Error::InvalidParameter("birth rate must be bounded below by a positive constant".into()));
        }
        let coeffs = MaxAgeCoefficients::build(&schedule, rates, spacing)?;
        let homogeneous = matches!(schedule, MaxAgeSchedule::Constant { .. });
        let inner = AgeSemigroup::new(grid, coeffs, homogeneous, homogeneous.then_some(1))?;
        Ok(Self { schedule, rate, b_lower, b_upper, inner })
    }

    /// The homogeneous semigroup `N` with the ceiling frozen at `a_inf`.
    pub fn limit(&self) -> Result<LimitSemigroup> {
        let a = self.schedule.a_inf();
        Ok(LimitSemigroup(Self::new(MaxAgeSchedule::Constant { a }, self.rate.clone(), self.dt())?))
    }

    pub fn schedule(&self) -> &MaxAgeSchedule {
        &self.schedule
    }

    pub fn rate(&self) -> &DivisionRate {
        &self.rate
    }

    /// `b̲`, the smallest sampled rate.
    pub fn b_lower(&self) -> f64 {
        self.b_lower
    }

    /// `b̄`, the largest sampled rate.
    pub fn b_upper(&self) -> f64 {
        self.b_upper
    }

    pub fn coefficients(&self) -> &MaxAgeCoefficients {
        self.inner.coefficients()
    }

    /// `a_t` at lattice step `k`.
    pub fn ceiling(&self, k: usize) -> f64 {
        self.schedule.at(k as f64 * self.dt())
    }
}

impl KernelSemigroup for MaxAgeSemigroup {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn is_homogeneous(&self) -> bool {
        self.inner.is_homogeneous()
    }

    fn period_steps(&self) -> Option<usize> {
        self.inner.period_steps()
    }

    fn is_active(&self, k: usize, j: usize) -> bool {
        self.inner.is_active(k, j)
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        self.inner.step_right(k, f, out)
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        self.inner.step_left(k, mu, out)
    }
}

/// Homogeneous limit `N` on `[0, a_inf)`.
#[derive(Clone, Debug)]
pub struct LimitSemigroup(pub MaxAgeSemigroup);

impl LimitSemigroup {
    /// `sup_{t ≤ horizon} ‖n_t‖_∞` on the lattice.
    pub fn mass_sup(&self, horizon: f64) -> Result<f64> {
        let k = lattice_index(self.0.dt(), horizon)?;
        let n = self.0.grid().n_cells();
        let mut cur = vec![1.0; n];
        let mut buf = vec![0.0; n];
        let mut sup = 1.0f64;
        for _ in 0..k {
            self.0.step_right(0, &cur, &mut buf);
            std::mem::swap(&mut cur, &mut buf);
            sup = sup.max(cur.iter().copied().fold(0.0, f64::max));
        }
        Ok(sup)
    }

    /// Perron profile of `N` as a probability on the grid, with its growth rate.
    pub fn perron_profile(&self, tol: f64) -> Result<(f64, HybridMeasure)> {
        let m = &self.0;
        let block = (1.0 / m.dt()).round().max(1.0) as usize;
        let init = vec![1.0; m.grid().n_cells()];
        let dom = power_left(m, 0, block, &init, tol, 10_000)?;
        Ok((dom.growth.ln() / (block as f64 * m.dt()), HybridMeasure::from_cells(m.grid(), dom.vector)?))
    }
}

/// `M_{s,t} f` on `[0, a_s)` through the boundary trace and the Duhamel formula.
/// `f` is read on `[0, a_t)` only.
pub fn duhamel_maxage(m: &MaxAgeSemigroup, f: &GridFunction, s: f64, t: f64) -> Result<GridFunction> {
    if f.grid() != m.grid() {
        return Err(Error::GridMismatch("function grid differs from the age grid".into()));
    }
    let (k0, k1) = (lattice_index(m.dt(), s)?, lattice_index(m.dt(), t)?);
    if k1 < k0 {
        return Err(Error::InvalidParameter(format!("t = {t} precedes s = {s}")));
    }
    let c = m.coefficients();
    let masked: Vec<f64> = f.values().iter().enumerate().map(|(j, &v)| if j < c.active_count(k1) { v } else { 0.0 }).collect();
    let out = if k0 == k1 {
        masked.iter().enumerate().map(|(j, &v)| if j < c.active_count(k0) { v } else { 0.0 }).collect()
    } else {
        m.inner.duhamel_steps(k0, k1, &masked)
    };
    GridFunction::from_values(m.grid(), out)
}

/// `n` functions with `‖f‖_∞ = 1`: uniform values in `[−1, 1]` with one entry pinned to `±1`.
pub fn random_unit_functions(grid: &Grid, n: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let i = rng.gen_range(0..v.len());
            v[i] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            GridFunction::from_values(grid, v).expect("grid sizes agree")
        })
        .collect()
}

/// `‖M_{s,t} f‖_∞ ≤ e^{b̄(t−s)} ‖f‖_∞` for every sample.
pub fn gronwall_check(m: &MaxAgeSemigroup, s: f64, t: f64, samples: &[GridFunction]) -> Result<Check> {
    let factor = (m.b_upper() * (t - s)).exp();
    let checks = samples
        .par_iter()
        .map(|f| {
            let g = duhamel_maxage(m, f, s, t)?;
            Ok(Check::le("", g.sup_norm(), factor * f.sup_norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Check::worst("gronwall", checks))
}

/// `m_{s,t}(a) ≤ (b̄/b̲) m_{s,t}(0)` on the active cells at `s`.
pub fn mass_ratio_check(m: &MaxAgeSemigroup, s: f64, t: f64, slack: f64) -> Result<Check> {
    let one = GridFunction::constant(m.grid(), 1.0);
    let mass = duhamel_maxage(m, &one, s, t)?;
    let v = mass.values();
    if !(v[0] > 0.0) {
        return Err(Error::NonPositiveMass { cell: 0, value: v[0] });
    }
    let bound = m.b_upper() / m.b_lower() * v[0];
    let sup = v.iter().copied().fold(0.0, f64::max);
    Ok(Check::le_with("mass_ratio", sup, bound, slack))
}

/// Distance to the limit semigroup at one time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H0Report {
    pub t: f64,
    pub r: f64,
    pub a_t: f64,
    pub distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `max(b̄e^{b̄r}, (b̄e^{b̄r})² r)(a_inf − a_t)`.
pub fn h0_bound(b_upper: f64, r: f64, gap: f64) -> f64 {
    let x = b_upper * (b_upper * r).exp();
    x.max(x * x * r) * gap
}

/// `sup_x ‖δ_x M_{t,t+r} − δ_x N_r‖_TV` over the cells active at `t`.
pub fn h0_distance(m: &MaxAgeSemigroup, n: &LimitSemigroup, t: f64, r: f64) -> Result<H0Report> {
    let a_inf = m.schedule().a_inf();
    if r < a_inf - 1e-12 {
        return Err(Error::InvalidParameter(format!("r = {r} must be at least a_inf = {a_inf}")));
    }
    if n.0.grid() != m.grid() {
        return Err(Error::GridMismatch("limit semigroup grid differs".into()));
    }
    let (k, kr) = (lattice_index(m.dt(), t)?, lattice_index(m.dt(), r)?);
    let cells = m.grid().n_cells();
    let active = m.coefficients().active_count(k);
    let distance = (0..active)
        .into_par_iter()
        .map(|x| {
            let mut e = vec![0.0; cells];
            e[x] = 1.0;
            tv_cells(&left_steps(m, k, k + kr, &e), &left_steps(&n.0, 0, kr, &e))
        })
        .reduce(|| 0.0, f64::max);
    let a_t = m.ceiling(k);
    let bound = h0_bound(m.b_upper(), r, a_inf - a_t);
    let pass = Check::le("h0", distance, bound).pass;
    Ok(H0Report { t, r, a_t, distance, bound, pass })
}

/// Constants of the two-division minorization on `[s, s + 2Δ]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxAgeCertificate {
    pub s: f64,
    /// `Δ = a_inf − a_s`.
    pub delta: f64,
    /// `α = Δ/2`, the width of the window carrying `ν`.
    pub alpha: f64,
    /// Step `r = 2Δ` of the regular subdivision.
    pub r: f64,
    pub c: f64,
    pub d: f64,
    /// `1/d`, the bound on the harmonic function.
    pub beta: f64,
}

impl MaxAgeCertificate {
    /// `None` when `Δ > a_s/2`, where the construction does not apply.
    pub fn build(m: &MaxAgeSemigroup, s: f64) -> Option<Self> {
        let a_s = m.schedule().at(s);
        let delta = m.schedule().a_inf() - a_s;
        if delta > a_s / 2.0 {
            return None;
        }
        let (bl, bu) = (m.b_lower(), m.b_upper());
        let alpha = delta / 2.0;
        let q = alpha * bl * (-bu * delta).exp();
        let c = q.min(q * q);
        let d = alpha * bl.powi(3) / (bu * bu) * (-alpha * bu).exp();
        Some(Self { s, delta, alpha, r: 2.0 * delta, c, d, beta: 1.0 / d })
    }
}

/// Uniform probability on `[0, max(α, dt))`, weighted by cell overlap.
pub fn window_measure(grid: &Grid, alpha: f64) -> Result<HybridMeasure> {
    let h = grid.spacing();
    let width = alpha.max(h);
    let w = (0..grid.n_cells())
        .map(|j| {
            let lo = grid.left_edge(j);
            ((width - lo).min(h).max(0.0)) / width
        })
        .collect();
    HybridMeasure::from_cells(grid, w)
}

/// Gap against `μ(h_s) γ` at one horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    /// `sup_x ‖δ_x M_{s,t}/ν(m_{s,t}) − h_s(x) γ‖_TV`.
    pub tv_gap: f64,
    /// `max m_{s,t} / ν(m_{s,t})`, bounded by `1/d`.
    pub mass_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileReport {
    pub s: f64,
    /// `None` when `s` is too small for the minorization.
    pub certificate: Option<MaxAgeCertificate>,
    pub nu: Option<HybridMeasure>,
    pub gamma: Option<HybridMeasure>,
    pub lambda_limit: f64,
    /// Horizon at which `h_s` is read off.
    pub h_horizon: f64,
    pub h_sup: f64,
    pub points: Vec<ProfilePoint>,
}

impl ProfileReport {
    pub fn applicable(&self) -> bool {
        self.certificate.is_some()
    }

    pub fn strictly_decreasing(&self) -> Check {
        let ok = self.points.windows(2).all(|w| w[1].tv_gap < w[0].tv_gap);
        Check::flag("gap_strictly_decreasing", ok && !self.points.is_empty())
    }

    pub fn final_below(&self, floor: f64) -> Check {
        match self.points.last() {
            Some(p) => Check::le("gap_final", p.tv_gap, floor),
            None => Check::flag("gap_final", false),
        }
    }

    pub fn h_bound(&self) -> Check {
        match &self.certificate {
            Some(c) => Check::le("h_bound", self.h_sup, c.beta),
            None => Check::flag("h_bound", false),
        }
    }

    pub fn h2_bound(&self) -> Check {
        match &self.certificate {
            Some(c) => Check::worst("h2_bound", self.points.iter().map(|p| Check::le("", p.mass_ratio, c.beta))),
            None => Check::flag("h2_bound", false),
        }
    }
}

/// Normalized profile gap `sup_x ‖δ_x M_{s,t}/ν(m_{s,t}) − h_s(x)γ‖_TV` at each horizon.
///
/// `γ` is the Perron profile of the limit semigroup and `h_s` is read off at
/// `h_horizon` as `m_{s,·}/ν(m_{s,·})`.
pub fn profile_convergence(m: &MaxAgeSemigroup, s: f64, horizons: &[f64], h_horizon: f64) -> Result<ProfileReport> {
    let Some(cert) = MaxAgeCertificate::build(m, s) else {
        log::warn!("profile_convergence: s = {s} too small, a_inf - a_s exceeds a_s/2");
        return Ok(ProfileReport {
            s,
            certificate: None,
            nu: None,
            gamma: None,
            lambda_limit: f64::NAN,
            h_horizon,
            h_sup: f64::NAN,
            points: Vec::new(),
        });
    };
    let dt = m.dt();
    let ks = lattice_index(dt, s)?;
    let mut ks_list = horizons.iter().map(|&t| lattice_index(dt, t)).collect::<Result<Vec<_>>>()?;
    let kh = lattice_index(dt, h_horizon)?;
    if ks_list.windows(2).any(|w| w[1] < w[0]) || ks_list.first().is_some_and(|&k| k < ks) || ks_list.last().is_some_and(|&k| k > kh) {
        return Err(Error::InvalidParameter("horizons must be sorted within [s, h_horizon]".into()));
    }
    ks_list.push(kh);

    let grid = m.grid().clone();
    let n = grid.n_cells();
    let nu = window_measure(&grid, cert.alpha)?;
    let nu_w = nu.project();
    let (lambda_limit, gamma) = m.limit()?.perron_profile(1e-13)?;
    let gamma_w = gamma.project();
    let active = m.coefficients().active_count(ks);

    // rows[x][i] = δ_x M_{s,t_i} for every horizon including the reference.
    let rows: Vec<Vec<Vec<f64>>> = (0..active)
        .into_par_iter()
        .map(|x| {
            let mut cur = vec![0.0; n];
            cur[x] = 1.0;
            let mut at = ks;
            ks_list
                .iter()
                .map(|&k| {
                    cur = left_steps(m, at, k, &cur);
                    at = k;
                    cur.clone()
                })
                .collect()
        })
        .collect();
    let masses: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.iter().sum()).collect()).collect();
    let nu_mass = |i: usize| -> f64 { (0..active).map(|x| nu_w[x] * masses[x][i]).sum() };

    let last = ks_list.len() - 1;
    let nu_ref = nu_mass(last);
    if !(nu_ref > 0.0) {
        return Err(Error::ZeroMass);
    }
    let h_s: Vec<f64> = (0..active).map(|x| masses[x][last] / nu_ref).collect();
    let h_sup = h_s.iter().copied().fold(0.0, f64::max);

    let points = (0..last)
        .map(|i| {
            let nm = nu_mass(i);
            let tv_gap = (0..active)
                .map(|x| rows[x][i].iter().zip(&gamma_w).map(|(a, g)| (a / nm - h_s[x] * g).abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let mass_ratio = (0..active).map(|x| masses[x][i]).fold(0.0, f64::max) / nm;
            ProfilePoint { t: horizons[i], tv_gap, mass_ratio }
        })
        .collect();
    Ok(ProfileReport {
        s,
        certificate: Some(cert),
        nu: Some(nu),
        gamma: Some(gamma),
        lambda_limit,
        h_horizon,
        h_sup,
        points,
    })
}
