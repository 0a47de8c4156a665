//! Time-periodic renewal: Floquet families by monodromy power iteration and
//! the two periodic convergence rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::age::{AgeSemigroup, FissionTable};
use crate::error::{Error, Result};
use crate::measures::{pair, tv_cells, Grid, GridFunction, HybridMeasure};
use crate::renewal::{age_grid, DivisionRate};
use crate::report::Check;
use crate::semigroup::{lattice_index, left_steps, mass_steps, power_left, KernelSemigroup};

const GL_NODES: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * GL_NODES.iter().zip(&GL_WEIGHTS).map(|(x, w)| w * f(c + r * x)).sum::<f64>()
}

/// `mean + amplitude · sin(2πt/T + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub mean: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Harmonic {
    fn value(&self, t: f64, period: f64) -> f64 {
        self.mean + self.amplitude * (2.0 * std::f64::consts::PI * t / period + self.phase).sin()
    }

    fn integral(&self, s: f64, t: f64, period: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI / period;
        self.mean * (t - s) - self.amplitude / w * ((w * t + self.phase).cos() - (w * s + self.phase).cos())
    }
}

/// Periodic division rate `b(t, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PeriodicRateSpec {
    TimeOnly(Harmonic),
    /// `time(t) · age(a)`.
    Separable { time: Harmonic, age: DivisionRate },
    /// Bilinear in `(t, a)` over one period; flat in age outside the table.
    Tabulated { times: Vec<f64>, ages: Vec<f64>, values: Vec<Vec<f64>> },
}

/// Rate with period `T` and the bounds used by the general theorem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicRate {
    pub spec: PeriodicRateSpec,
    pub period: f64,
    /// Age `A` beyond which `b >= b_lower`.
    pub threshold_age: f64,
    pub b_lower: f64,
    pub b_upper: f64,
}

impl PeriodicRate {
    pub fn new(spec: PeriodicRateSpec, period: f64, threshold_age: f64, b_lower: f64, b_upper: f64) -> Result<Self> {
        if !(period > 0.0 && threshold_age >= 0.0 && b_lower >= 0.0 && b_upper > 0.0) {
            return Err(Error::InvalidParameter("periodic rate needs T > 0, A >= 0, b_lower >= 0, b_upper > 0".into()));
        }
        if let PeriodicRateSpec::Tabulated { times, ages, values } = &spec {
            let shape_ok = values.len() == times.len() && values.iter().all(|r| r.len() == ages.len());
            let sorted = times.windows(2).all(|w| w[0] < w[1]) && ages.windows(2).all(|w| w[0] < w[1]);
            if times.is_empty() || ages.is_empty() || !shape_ok || !sorted || times[0] != 0.0 || *times.last().unwrap() >= period {
                return Err(Error::InvalidParameter("tabulated rate needs sorted times in [0, T), sorted ages and a matching table".into()));
            }
        }
        let rate = Self { spec, period, threshold_age, b_lower, b_upper };
        for i in 0..=256 {
            let t = period * i as f64 / 256.0;
            for j in 0..=256 {
                let a = (threshold_age + 4.0 * period) * j as f64 / 256.0;
                let v = rate.value(t, a);
                if v < -1e-12 || v > b_upper + 1e-12 {
                    return Err(Error::InvalidParameter(format!("b({t}, {a}) = {v} outside [0, b_upper]")));
                }
                if a >= threshold_age && v < b_lower - 1e-12 {
                    return Err(Error::InvalidParameter(format!("b({t}, {a}) = {v} below b_lower beyond A")));
                }
            }
        }
        Ok(rate)
    }

    /// Time-only rate with `b_upper = mean + |amplitude|` and `b_lower = mean − |amplitude|`.
    pub fn time_only(h: Harmonic, period: f64) -> Result<Self> {
        Self::new(PeriodicRateSpec::TimeOnly(h), period, 0.0, h.mean - h.amplitude.abs(), h.mean + h.amplitude.abs())
    }

    pub fn value(&self, t: f64, a: f64) -> f64 {
        let t = t.rem_euclid(self.period);
        match &self.spec {
            PeriodicRateSpec::TimeOnly(h) => h.value(t, self.period),
            PeriodicRateSpec::Separable { time, age } => time.value(t, self.period) * age.value(a),
            PeriodicRateSpec::Tabulated { times, ages, values } => {
                let nt = times.len();
                let i = times.partition_point(|&x| x <= t) - 1;
                let (t0, t1, i1) = if i + 1 < nt { (times[i], times[i + 1], i + 1) } else { (times[i], self.period, 0) };
                let wt = (t - t0) / (t1 - t0);
                let along = |row: &Vec<f64>| {
                    let k = ages.partition_point(|&x| x <= a);
                    if k == 0 {
                        row[0]
                    } else if k == ages.len() {
                        row[k - 1]
                    } else {
                        row[k - 1] + (row[k] - row[k - 1]) * (a - ages[k - 1]) / (ages[k] - ages[k - 1])
                    }
                };
                (1.0 - wt) * along(&values[i]) + wt * along(&values[i1])
            }
        }
    }

    pub fn is_time_only(&self) -> bool {
        matches!(self.spec, PeriodicRateSpec::TimeOnly(_))
    }

    /// `∫_s^t b(τ) dτ` for a time-only rate.
    pub fn time_integral(&self, s: f64, t: f64) -> Option<f64> {
        match &self.spec {
            PeriodicRateSpec::TimeOnly(h) => Some(h.integral(s, t, self.period)),
            _ => None,
        }
    }
}

/// `(1/T) ∫_0^T b` by the trapezoid rule on `n` intervals.
pub fn floquet_lambda_time_only(rate: &PeriodicRate, n: usize) -> Result<f64> {
    if !rate.is_time_only() {
        return Err(Error::InvalidParameter("rate depends on age".into()));
    }
    let h = rate.period / n as f64;
    let sum: f64 = (0..=n).map(|i| if i == 0 || i == n { 0.5 } else { 1.0 } * rate.value(i as f64 * h, 0.0)).sum();
    Ok(sum * h / rate.period)
}

/// `2 ∫_s^t b`.
pub fn rate_sharp_time_only(rate: &PeriodicRate, s: f64, t: f64) -> Result<f64> {
    rate.time_integral(s, t).map(|v| 2.0 * v).ok_or_else(|| Error::InvalidParameter("rate depends on age".into()))
}

/// Rate of the general periodic theorem, evaluated as stated.
pub fn rate_general(a: f64, period: f64, b_lower: f64, b_upper: f64) -> Result<f64> {
    if !(a >= 0.0 && period > 0.0 && b_lower > 0.0 && b_upper > 0.0) {
        return Err(Error::InvalidParameter("rate_general needs positive parameters".into()));
    }
    let denom = 1.0 / (2.0 * b_upper * period) + a / period + 3.0 + 1.0 / (-(-b_lower * period).exp_m1());
    let x = 2.0 * b_lower * period * (-b_upper * (3.0 * a + 8.0 * period)).exp() / denom;
    Ok(-(-x).ln_1p() / (a + 2.0 * period))
}

/// Periodic renewal semigroup on a truncated age grid, `dt = spacing`.
#[derive(Clone, Debug)]
pub struct PeriodicSemigroup {
    rate: PeriodicRate,
    inner: AgeSemigroup<FissionTable>,
    period_steps: usize,
}

impl PeriodicSemigroup {
    pub fn new(rate: PeriodicRate, a_max: f64, spacing: f64) -> Result<Self> {
        let grid = age_grid(a_max, spacing)?;
        let period_steps = lattice_index(spacing, rate.period)
            .map_err(|_| Error::InvalidParameter(format!("T = {} is not a multiple of dt = {spacing}", rate.period)))?;
        let n = grid.n_cells();
        let mids = grid.midpoints();
        let h = spacing;
        let table = FissionTable::build(n, period_steps, h, |p, j| {
            let t0 = p as f64 * h;
            let next = mids[(j + 1).min(n - 1)];
            let beta = (gauss_legendre(|u| rate.value(u, mids[j]), t0, t0 + 0.5 * h)
                + gauss_legendre(|u| rate.value(u, next), t0 + 0.5 * h, t0 + h))
                / h;
            let b0 = (gauss_legendre(|u| rate.value(u, mids[0]), t0, t0 + 0.5 * h)
                + gauss_legendre(|u| rate.value(u, mids[0]), t0 + 0.5 * h, t0 + h))
                / h;
            (beta, b0)
        });
        Ok(Self { rate, inner: AgeSemigroup::new(grid, table, false, Some(period_steps))?, period_steps })
    }

    pub fn rate(&self) -> &PeriodicRate {
        &self.rate
    }

    pub fn steps_per_period(&self) -> usize {
        self.period_steps
    }
}

impl KernelSemigroup for PeriodicSemigroup {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn period_steps(&self) -> Option<usize> {
        Some(self.period_steps)
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        self.inner.step_right(k, f, out)
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        self.inner.step_left(k, mu, out)
    }
}

/// Dominant eigen-elements of the monodromy `M_{s,s+T}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonodromyEigen {
    pub s: f64,
    /// `Λ = γ_{s,s}(m_{s,s+T})`.
    pub growth: f64,
    pub lambda_f: f64,
    pub gamma_ss: HybridMeasure,
    pub iterations: usize,
    pub increment: f64,
}

/// Power iteration on the monodromy from `nu`, stopping on TV increments below `tol`.
pub fn monodromy_eigen<M: KernelSemigroup + ?Sized>(
    m: &M,
    s: f64,
    nu: &HybridMeasure,
    k_max: usize,
    tol: f64,
) -> Result<MonodromyEigen> {
    let p = m.period_steps().ok_or_else(|| Error::InvalidParameter("semigroup is not periodic".into()))?;
    let ks = lattice_index(m.dt(), s)?;
    let d = power_left(m, ks, p, &nu.project(), tol, k_max)?;
    let period = p as f64 * m.dt();
    Ok(MonodromyEigen {
        s,
        growth: d.growth,
        lambda_f: d.growth.ln() / period,
        gamma_ss: HybridMeasure::from_cells(m.grid(), d.vector)?,
        iterations: d.iterations,
        increment: d.increment,
    })
}

/// `γ_{s,t}` over one period and `h_{s,s}`, normalized by `γ_{s,s}(h_{s,s}) = 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FloquetFamily {
    pub lambda_f: f64,
    pub s: f64,
    /// `γ_{s,s+j dt}` for `j = 0..=P`.
    pub gammas: Vec<HybridMeasure>,
    pub h_ss: GridFunction,
    /// `‖γ_{s,s+T} − γ_{s,s}‖_TV`.
    pub periodicity_residual: f64,
}

impl FloquetFamily {
    /// `γ_{s,t}` for any lattice `t >= s`.
    pub fn gamma_at(&self, t: f64, dt: f64) -> Result<&HybridMeasure> {
        let p = self.gammas.len() - 1;
        let j = lattice_index(dt, t - self.s)?;
        Ok(&self.gammas[j % p])
    }
}

/// Builds the family from a converged monodromy eigenvector.
pub fn floquet_family_build<M: KernelSemigroup + ?Sized>(
    m: &M,
    eigen: &MonodromyEigen,
    k_max: usize,
    tol: f64,
) -> Result<FloquetFamily> {
    let p = m.period_steps().ok_or_else(|| Error::InvalidParameter("semigroup is not periodic".into()))?;
    let dt = m.dt();
    let ks = lattice_index(dt, eigen.s)?;
    let n = m.grid().n_cells();
    let mut gammas = Vec::with_capacity(p + 1);
    let mut cur = eigen.gamma_ss.project();
    let mut buf = vec![0.0; n];
    gammas.push(eigen.gamma_ss.clone());
    for j in 0..p {
        m.step_left(ks + j, &cur, &mut buf);
        std::mem::swap(&mut cur, &mut buf);
        let scale = (-eigen.lambda_f * (j + 1) as f64 * dt).exp();
        gammas.push(HybridMeasure::from_cells(m.grid(), cur.iter().map(|x| x * scale).collect())?);
    }
    let periodicity_residual = tv_cells(&gammas[p].project(), &gammas[0].project());

    let g = eigen.gamma_ss.project();
    let mut h = vec![1.0; n];
    let mut increment = f64::INFINITY;
    for _ in 0..k_max {
        let next = crate::semigroup::right_steps(m, ks, ks + p, &h);
        let norm: f64 = g.iter().zip(&next).map(|(a, b)| a * b).sum();
        let next: Vec<f64> = next.iter().map(|x| x / norm).collect();
        increment = next.iter().zip(&h).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        h = next;
        if increment < tol {
            break;
        }
    }
    if !(increment < tol) {
        return Err(Error::NotConverged { iterations: k_max, increment });
    }
    Ok(FloquetFamily {
        lambda_f: eigen.lambda_f,
        s: eigen.s,
        gammas,
        h_ss: GridFunction::from_values(m.grid(), h)?,
        periodicity_residual,
    })
}

/// `max_j ‖γ_{s+j dt, s+j dt} − γ_{s, s+j dt}/γ_{s, s+j dt}(1)‖_TV` over the given offsets, with the
/// left-hand side from independent power iterations.
pub fn offset_residual<M: KernelSemigroup + ?Sized>(
    m: &M,
    family: &FloquetFamily,
    offsets: &[usize],
    k_max: usize,
    tol: f64,
) -> Result<f64> {
    let dt = m.dt();
    let start = HybridMeasure::uniform(m.grid());
    let res = offsets
        .par_iter()
        .map(|&j| {
            let t = family.s + j as f64 * dt;
            let e = monodromy_eigen(m, t, &start, k_max, tol)?;
            Ok(tv_cells(&e.gamma_ss.project(), &family.gamma_at(t, dt)?.normalized()?.project()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// `‖e^{−λ_F(t−s)} μ M_{s,t} − μ(h_{s,s}) γ_{s,t}‖_TV` at each lattice time.
pub fn floquet_decay_series<M: KernelSemigroup + ?Sized>(
    m: &M,
    family: &FloquetFamily,
    mu: &HybridMeasure,
    times: &[f64],
) -> Result<Vec<f64>> {
    let dt = m.dt();
    let ks = lattice_index(dt, family.s)?;
    let mu_h = pair(mu, &family.h_ss)?;
    let mut cur = mu.project();
    let mut at = ks;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let kt = lattice_index(dt, t)?;
        if kt < at {
            return Err(Error::InvalidParameter("times must be nondecreasing and >= s".into()));
        }
        cur = left_steps(m, at, kt, &cur);
        at = kt;
        let scale = (-family.lambda_f * (t - family.s)).exp();
        let g = family.gamma_at(t, dt)?.project();
        out.push(cur.iter().zip(&g).map(|(x, y)| (scale * x - mu_h * y).abs()).sum());
    }
    Ok(out)
}

/// Monotonicity of `t ↦ m_{s,t}` and `m_{s+T,t} <= m_{s,t}` on the lattice up to `horizon`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicMassReport {
    pub monotone: Check,
    pub shift: Check,
}

impl PeriodicMassReport {
    pub fn passed(&self) -> bool {
        self.monotone.pass && self.shift.pass
    }
}

pub fn periodic_mass_monotone_check<M: KernelSemigroup + ?Sized>(m: &M, s: f64, horizon: f64) -> Result<PeriodicMassReport> {
    let p = m.period_steps().ok_or_else(|| Error::InvalidParameter("semigroup is not periodic".into()))?;
    let dt = m.dt();
    let (ks, kh) = (lattice_index(dt, s)?, lattice_index(dt, horizon)?);
    if kh < ks + p {
        return Err(Error::InvalidParameter("horizon must cover at least one period".into()));
    }
    let masses = (ks..=kh).into_par_iter().map(|k| mass_steps(m, ks, k)).collect::<Result<Vec<_>>>()?;
    let mono = masses
        .windows(2)
        .flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / b).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    let shift = (ks + p..=kh)
        .into_par_iter()
        .map(|k| {
            let shifted = mass_steps(m, ks + p, k)?;
            Ok(masses[k - ks].iter().zip(&shifted).map(|(a, b)| (a - b) / a).fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(PeriodicMassReport {
        monotone: Check::ge("periodic_mass_nondecreasing", mono, 0.0),
        shift: Check::ge("periodic_mass_shift", shift, 0.0),
    })
}

/// The window measure `ν(f) ∝ ∫_s^{s+T} M_{τ,s+T} f(0) dτ` and the constants of the general theorem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneralConstruction {
    pub nu: HybridMeasure,
    pub c: f64,
    pub d: f64,
    /// Step `(⌊A/T⌋ + 2) T` of the regular subdivision.
    pub step: f64,
    pub rho: f64,
}

pub fn general_construct(m: &PeriodicSemigroup, s: f64) -> Result<GeneralConstruction> {
    let r = m.rate();
    let (a, t, bl, bu) = (r.threshold_age, r.period, r.b_lower, r.b_upper);
    if !(bl > 0.0) {
        return Err(Error::InvalidParameter("the general theorem needs b_lower > 0".into()));
    }
    let p = m.steps_per_period();
    let ks = lattice_index(m.dt(), s)?;
    let n = m.grid().n_cells();
    let mut acc = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for j in 0..=p {
        acc[0] += if j == 0 || j == p { 0.5 } else { 1.0 } * m.dt();
        if j < p {
            m.step_left(ks + j, &acc, &mut buf);
            std::mem::swap(&mut acc, &mut buf);
        }
    }
    let total: f64 = acc.iter().sum();
    let nu = HybridMeasure::from_cells(m.grid(), acc.iter().map(|x| x / total).collect())?;
    let c = 2.0 * bl * t * (-3.0 * bu * (a + 2.0 * t)).exp();
    let d = (-2.0 * bu * t).exp() / (1.0 / (2.0 * bu * t) + a / t + 3.0 + 1.0 / (-(-bl * t).exp_m1()));
    Ok(GeneralConstruction { nu, c, d, step: ((a / t).floor() + 2.0) * t, rho: rate_general(a, t, bl, bu)? })
}
