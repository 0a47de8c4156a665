//! Growth-diffusion on `[0, 1]` with Neumann boundary, time-dependent
//! diffusivity `σ_t` and space-dependent growth `r(x)`.
//!
//! One step of length `dt` is `D K D` with `D = diag(e^{r dt/2})` and `K` the
//! cell-averaged reflected Gaussian kernel for the variance accumulated over
//! the step. `K` is symmetric, so the left and right actions coincide.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::certificate::{capacity, CouplingCertificate};
use crate::convergence::{GapReport, HarmonicProfile};
use crate::error::{Error, Result};
use crate::measures::{jordan, pair, Grid, HybridMeasure};
use crate::report::Check;
use crate::semigroup::{lattice_index, left_steps, KernelSemigroup};

/// Which Gaussian variance a window `[s, t]` is given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceConvention {
    /// `∫_s^t σ_u² du`, the variance of `∫ σ dB`.
    #[default]
    Ito,
    /// `σ_{s,t} = sqrt(2π ∫ σ²)` used directly as the variance.
    Printed,
}

/// Right-continuous diffusivity schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaSpec {
    Constant(f64),
    /// `values[i]` on `[times[i], times[i+1])`, the last value forever; `times[0] = 0`.
    Step { times: Vec<f64>, values: Vec<f64> },
    /// Alternating on/off windows with exponential durations, drawn up to `horizon`.
    OnOff { on_value: f64, mean_on: f64, mean_off: f64, horizon: f64, seed: u64 },
}

impl SigmaSpec {
    /// Resolves random schedules into explicit steps.
    pub fn to_steps(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            SigmaSpec::Constant(s) => Ok((vec![0.0], vec![*s])),
            SigmaSpec::Step { times, values } => {
                if times.is_empty() || times.len() != values.len() || times[0] != 0.0 {
                    return Err(Error::InvalidParameter("step schedule needs matching lists starting at t = 0".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter("step schedule times must increase".into()));
                }
                Ok((times.clone(), values.clone()))
            }
            SigmaSpec::OnOff { on_value, mean_on, mean_off, horizon, seed } => {
                if !(*mean_on > 0.0 && *mean_off > 0.0) {
                    return Err(Error::InvalidParameter("on/off means must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let (on, off) = (Exp::new(1.0 / mean_on).unwrap(), Exp::new(1.0 / mean_off).unwrap());
                let mut state = rng.gen_bool(mean_on / (mean_on + mean_off));
                let (mut times, mut values) = (vec![0.0], vec![if state { *on_value } else { 0.0 }]);
                let mut t = 0.0;
                while t < *horizon {
                    t += if state { on.sample(&mut rng) } else { off.sample(&mut rng) };
                    state = !state;
                    times.push(t);
                    values.push(if state { *on_value } else { 0.0 });
                }
                Ok((times, values))
            }
        }
    }
}

/// Growth rate as a function of position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GrowthSpec {
    Constant(f64),
    /// Piecewise linear through `(x, r)` points, flat outside.
    Tabulated(Vec<(f64, f64)>),
}

impl GrowthSpec {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            GrowthSpec::Constant(r) => *r,
            GrowthSpec::Tabulated(pts) => {
                let i = pts.partition_point(|q| q.0 <= x);
                if i == 0 {
                    pts[0].1
                } else if i == pts.len() {
                    pts[i - 1].1
                } else {
                    let ((x0, y0), (x1, y1)) = (pts[i - 1], pts[i]);
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                }
            }
        }
    }

    /// `(inf, sup)` over `[0, 1]`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            GrowthSpec::Constant(r) => (*r, *r),
            GrowthSpec::Tabulated(pts) => pts
                .iter()
                .filter(|q| (0.0..=1.0).contains(&q.0))
                .map(|q| q.1)
                .chain([self.value(0.0), self.value(1.0)])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v))),
        }
    }
}

/// Tabulated `∫_0^t σ_u² du` for a step schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaAccumulator {
    times: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SigmaAccumulator {
    pub fn new(spec: &SigmaSpec) -> Result<Self> {
        let (times, values) = spec.to_steps()?;
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("σ must be nonnegative".into()));
        }
        let mut cumulative = vec![0.0];
        for i in 1..times.len() {
            cumulative.push(cumulative[i - 1] + values[i - 1].powi(2) * (times[i] - times[i - 1]));
        }
        Ok(Self { times, values, cumulative })
    }

    pub fn sigma(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t).max(1);
        self.values[i - 1]
    }

    /// `∫_0^t σ²`.
    pub fn integral(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t).max(1) - 1;
        self.cumulative[i] + self.values[i].powi(2) * (t - self.times[i])
    }

    /// `∫_s^t σ²`.
    pub fn window(&self, s: f64, t: f64) -> f64 {
        (self.integral(t) - self.integral(s)).max(0.0)
    }

    /// `σ_{s,t} = sqrt(2π ∫_s^t σ²)`.
    pub fn sigma_st(&self, s: f64, t: f64) -> f64 {
        (2.0 * PI * self.window(s, t)).sqrt()
    }

    /// Smallest `u >= s` with `∫_s^u σ² >= target`, if reached before `limit`.
    pub fn reach(&self, s: f64, target: f64, limit: f64) -> Option<f64> {
        let base = self.integral(s);
        if self.integral(limit) - base < target {
            return None;
        }
        let (mut lo, mut hi) = (s, limit);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.integral(mid) - base >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// Environment of the growth-diffusion model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionEnv {
    pub sigma: SigmaAccumulator,
    pub growth: GrowthSpec,
    pub r_lower: f64,
    pub r_upper: f64,
    pub convention: VarianceConvention,
    /// Threshold on `σ_{t_i,t_{i+1}}` for the constrained gaps.
    pub gap_threshold: f64,
}

impl DiffusionEnv {
    pub fn new(sigma: &SigmaSpec, growth: GrowthSpec, convention: VarianceConvention) -> Result<Self> {
        let (r_lower, r_upper) = growth.bounds();
        if !(r_lower.is_finite() && r_upper.is_finite()) {
            return Err(Error::InvalidParameter("growth must be bounded on [0, 1]".into()));
        }
        Ok(Self { sigma: SigmaAccumulator::new(sigma)?, growth, r_lower, r_upper, convention, gap_threshold: 5.0 })
    }

    pub fn sigma_st(&self, s: f64, t: f64) -> f64 {
        self.sigma.sigma_st(s, t)
    }

    /// Gaussian variance of the window under the configured convention.
    pub fn variance(&self, s: f64, t: f64) -> f64 {
        match self.convention {
            VarianceConvention::Ito => self.sigma.window(s, t),
            VarianceConvention::Printed => self.sigma_st(s, t),
        }
    }

    pub fn spread(&self) -> f64 {
        self.r_upper - self.r_lower
    }

    /// `γ_s = 5 e^{(r̄ − r̲)s}`.
    pub fn gamma(&self, s: f64) -> f64 {
        5.0 * (self.spread() * s).exp()
    }
}

fn image_count(var: f64) -> i64 {
    3.max((4.0 * var.sqrt()).ceil() as i64 + 1)
}

fn gauss(u: f64, var: f64) -> f64 {
    (-u * u / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Density at `y` of the Gaussian of variance `var` started at `x` and folded into `[0, 1]`.
pub fn reflected_density_var(x: f64, var: f64, y: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::InvalidParameter("degenerate window: zero variance".into()));
    }
    let n = image_count(var);
    Ok((-n..=n).map(|k| gauss(y + 2.0 * k as f64 - x, var) + gauss(2.0 * k as f64 - y - x, var)).sum())
}

/// Transition density of the reflected diffusion from `x` at `s` to `y` at `t`.
pub fn reflected_density(env: &DiffusionEnv, x: f64, s: f64, t: f64, y: f64) -> Result<f64> {
    reflected_density_var(x, env.variance(s, t), y)
}

fn big_phi(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `Ψ(−|u|)` with `Ψ(u) = u Φ(u/sd) + sd φ(u/sd)`; `Ψ(u) = u + Ψ(−u)`.
fn psi_tail(u: f64, sd: f64) -> f64 {
    let v = -u.abs();
    v * big_phi(v / sd) + sd * (-(v / sd).powi(2) / 2.0).exp() / (2.0 * PI).sqrt()
}

/// `∫_{[a,a+h]} ∫_{[b,b+h]} g(y − x + c) dy dx = Ψ(d+h) − 2Ψ(d) + Ψ(d−h)` with `d = b − a + c`.
fn cell_pair(d: f64, h: f64, sd: f64) -> f64 {
    let lin = |u: f64| u.max(0.0);
    let tails = psi_tail(d + h, sd) - 2.0 * psi_tail(d, sd) + psi_tail(d - h, sd);
    let linear = lin(d + h) - 2.0 * lin(d) + lin(d - h);
    tails + linear
}

/// Row-major `K[i][j] = (1/h) ∫_{cell i} ∫_{cell j} p(x, y) dy dx`, where `p`
/// is the reflected density with variance `var`. `var = 0` gives the identity.
pub fn kernel_matrix(grid: &Grid, var: f64) -> Vec<f64> {
    let n = grid.n_cells();
    let h = grid.spacing();
    let mut k = vec![0.0; n * n];
    if var <= 0.0 {
        (0..n).for_each(|i| k[i * n + i] = 1.0);
        return k;
    }
    let sd = var.sqrt();
    let images = image_count(var);
    for i in 0..n {
        let a = i as f64 * h;
        for j in i..n {
            let b = j as f64 * h;
            let mut acc = 0.0;
            for m in -images..=images {
                let c = 2.0 * m as f64;
                acc += cell_pair(b - a + c, h, sd);
                acc += cell_pair(-b - h - a + c, h, sd);
            }
            let v = (acc / h).max(0.0);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `sup_x (φ(0) + Σ_n φ(n − x))` for the Gaussian of variance `var`.
pub fn density_upper_constant(var: f64) -> f64 {
    let n = image_count(var);
    (0..=1000)
        .map(|i| {
            let x = i as f64 / 1000.0;
            gauss(0.0, var) + (-n - 1..=n + 1).map(|k| gauss(k as f64 - x, var)).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Bounds `(c − 4/σ_{s,t})₊ <= density <= c` of the window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityBounds {
    pub sigma_st: f64,
    pub upper: f64,
    pub lower: f64,
}

pub fn density_bounds(env: &DiffusionEnv, s: f64, t: f64) -> DensityBounds {
    let sigma_st = env.sigma_st(s, t);
    let upper = density_upper_constant(env.variance(s, t));
    DensityBounds { sigma_st, upper, lower: (upper - 4.0 / sigma_st).max(0.0) }
}

/// Checks the density sandwich on the cell averages `K[i][j] / h` of the window kernel.
pub fn sandwich_check(grid: &Grid, env: &DiffusionEnv, s: f64, t: f64) -> (Check, Check) {
    let b = density_bounds(env, s, t);
    let h = grid.spacing();
    let k = kernel_matrix(grid, env.variance(s, t));
    let (lo, hi) = k.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v / h), hi.max(v / h)));
    (Check::ge("density_lower", lo, b.lower), Check::le("density_upper", hi, b.upper))
}

/// Largest deviation of a kernel row sum from 1.
pub fn row_sum_defect(grid: &Grid, var: f64) -> f64 {
    let n = grid.n_cells();
    let k = kernel_matrix(grid, var);
    (0..n).map(|i| (k[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

/// Feynman-Kac semigroup of the environment on a spatial grid with Strang splitting.
#[derive(Debug)]
pub struct DiffusionSemigroup {
    grid: Grid,
    dt: f64,
    env: DiffusionEnv,
    half_growth: Vec<f64>,
    cache: RwLock<HashMap<u64, Arc<Vec<f64>>>>,
    homogeneous: bool,
}

impl DiffusionSemigroup {
    pub fn new(env: DiffusionEnv, n_cells: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        let grid = Grid::new(0.0, 1.0, n_cells)?;
        let half_growth = grid.midpoints().iter().map(|&x| (0.5 * env.growth.value(x) * dt).exp()).collect();
        let homogeneous = env.sigma.times.len() == 1;
        Ok(Self { grid, dt, env, half_growth, cache: RwLock::new(HashMap::new()), homogeneous })
    }

    pub fn env(&self) -> &DiffusionEnv {
        &self.env
    }

    fn kernel(&self, k: usize) -> Arc<Vec<f64>> {
        let t = k as f64 * self.dt;
        let var = self.env.variance(t, t + self.dt);
        let key = var.to_bits();
        if let Some(m) = self.cache.read().unwrap().get(&key) {
            return m.clone();
        }
        let m = Arc::new(kernel_matrix(&self.grid, var));
        self.cache.write().unwrap().entry(key).or_insert(m).clone()
    }
}

impl KernelSemigroup for DiffusionSemigroup {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    fn composition_tolerance(&self) -> f64 {
        1e-4
    }

    fn step_right(&self, k: usize, f: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        let kern = self.kernel(k);
        let g: Vec<f64> = f.iter().zip(&self.half_growth).map(|(x, d)| x * d).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &kern[i * n..(i + 1) * n];
            *o = self.half_growth[i] * row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn step_left(&self, k: usize, mu: &[f64], out: &mut [f64]) {
        self.step_right(k, mu, out)
    }
}

/// `μ M_{s,t}` with time step `dt`.
pub fn fk_propagate(env: &DiffusionEnv, n_cells: usize, mu: &HybridMeasure, s: f64, t: f64, dt: f64) -> Result<HybridMeasure> {
    let m = DiffusionSemigroup::new(env.clone(), n_cells, dt)?;
    if mu.grid() != m.grid() {
        return Err(Error::GridMismatch("measure grid differs from the diffusion grid".into()));
    }
    let (a, b) = (lattice_index(dt, s)?, lattice_index(dt, t)?);
    if b < a {
        return Err(Error::InvalidParameter("t precedes s".into()));
    }
    HybridMeasure::from_cells(m.grid(), left_steps(&m, a, b, &mu.project()))
}

/// `σ̄_{u,v} = (1 − 4/σ_{u,v}) 1_{σ_{u,v} > 4}`.
pub fn sigma_bar(env: &DiffusionEnv, u: f64, v: f64) -> f64 {
    let s = env.sigma_st(u, v);
    if s > 4.0 {
        1.0 - 4.0 / s
    } else {
        0.0
    }
}

/// `g(u, v) = (r̄ − r̲)(v − u) − log((1 − 4/σ_{u,v})₊)`.
pub fn gap_cost(env: &DiffusionEnv, u: f64, v: f64) -> f64 {
    let sb = sigma_bar(env, u, v);
    if sb > 0.0 {
        env.spread() * (v - u) - sb.ln()
    } else {
        f64::INFINITY
    }
}

/// Coupling constants for the subdivision `t_0 <= ... <= t_{N+1}`, with `ν_i = ν = λ`.
pub fn coupling_constants_diffusion(env: &DiffusionEnv, grid: &Grid, times: &[f64]) -> Result<CouplingCertificate> {
    if times.len() < 3 {
        return Err(Error::Inadmissible("need at least t_0, t_1, t_2".into()));
    }
    let n1 = times.len() - 1;
    let n = n1 - 1;
    for (u, v) in [(times[0], times[1]), (times[n - 1], times[n]), (times[n], times[n1])] {
        let s = env.sigma_st(u, v);
        if !(s > 4.0) {
            return Err(Error::Inadmissible(format!("σ over [{u}, {v}] is {s} <= 4")));
        }
    }
    let c: Vec<f64> =
        (1..=n1).map(|i| sigma_bar(env, times[i - 1], times[i]) * (-env.spread() * (times[i] - times[i - 1])).exp()).collect();
    let lambda = HybridMeasure::uniform(grid);
    Ok(CouplingCertificate {
        times: times[..=n].to_vec(),
        c: c[..n].to_vec(),
        d: c[1..].to_vec(),
        nu_i: vec![lambda.clone(); n],
        alpha: (env.spread() * (times[n1] - times[n - 1])).exp()
            / (sigma_bar(env, times[n - 1], times[n]) * sigma_bar(env, times[n], times[n1])),
        beta: (env.spread() * (times[1] - times[0])).exp() / sigma_bar(env, times[0], times[1]),
        nu: lambda,
        s0: times[0],
    })
}

/// The induction `t_1, t_2, t_2', t_2 + τ, t_3, ...` up to `horizon`.
///
/// With `lattice = Some(dt)` every time is a multiple of `dt` and the infima
/// run over lattice points only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Subdivision {
    pub s: f64,
    pub tau: f64,
    /// `t_1, t_2, ...` as far as they are finite and below the horizon.
    pub t_k: Vec<f64>,
    /// `t_k'` for each entry of `t_k`.
    pub t_k_prime: Vec<f64>,
}

impl Subdivision {
    /// The full point list `s, t_1, t_2, t_2', t_2 + τ, ..., t_k, t_k', t_k + τ`, duplicates removed.
    pub fn points(&self, k: usize) -> Vec<f64> {
        let mut pts = vec![self.s];
        for i in 0..k.min(self.t_k.len()) {
            let tk = self.t_k[i];
            if i == 0 && k > 1 {
                pts.push(tk);
                continue;
            }
            pts.extend([tk, self.t_k_prime[i], tk + self.tau]);
        }
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        pts
    }
}

pub fn subdivision_build(env: &DiffusionEnv, s: f64, tau: f64, horizon: f64, lattice: Option<f64>) -> Result<Subdivision> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter("τ must be positive".into()));
    }
    let snap_up = |t: f64| match lattice {
        Some(dt) => (t / dt - 1e-9).ceil() * dt,
        None => t,
    };
    let tau = match lattice {
        Some(dt) => {
            lattice_index(dt, tau)?;
            tau
        }
        None => tau,
    };
    let target = 100.0 / (2.0 * PI);
    let mut t_k = Vec::new();
    let mut t_k_prime = Vec::new();
    let Some(t1) = env.sigma.reach(s, target, horizon).map(snap_up) else {
        return Ok(Subdivision { s, tau, t_k, t_k_prime });
    };
    let mut tk = t1;
    loop {
        if tk + tau > horizon + 1e-12 {
            break;
        }
        t_k.push(tk);
        t_k_prime.push(split_point(env, tk, tk + tau, lattice)?);
        match next_window(env, tk + tau, tau, horizon, target, lattice) {
            Some(next) => tk = next,
            None => break,
        }
    }
    Ok(Subdivision { s, tau, t_k, t_k_prime })
}

fn next_window(env: &DiffusionEnv, from: f64, tau: f64, horizon: f64, target: f64, lattice: Option<f64>) -> Option<f64> {
    let ok = |u: f64| env.sigma.window(u, u + tau) >= target * (1.0 - 1e-12);
    match lattice {
        Some(dt) => {
            let mut k = (from / dt - 1e-9).ceil() as usize;
            while k as f64 * dt + tau <= horizon + 1e-12 {
                if ok(k as f64 * dt) {
                    return Some(k as f64 * dt);
                }
                k += 1;
            }
            None
        }
        None => {
            let step = tau / 64.0;
            let mut prev = from;
            if ok(from) {
                return Some(from);
            }
            let mut u = from + step;
            while u + tau <= horizon + 1e-12 {
                if ok(u) {
                    let (mut lo, mut hi) = (prev, u);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if ok(mid) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    return Some(hi);
                }
                prev = u;
                u += step;
            }
            None
        }
    }
}

/// Point of `[a, b]` splitting the accumulated variance in half, snapped to the lattice if given.
fn split_point(env: &DiffusionEnv, a: f64, b: f64, lattice: Option<f64>) -> Result<f64> {
    let half = 0.5 * env.sigma.window(a, b);
    let mid = env.sigma.reach(a, half, b).unwrap_or(b);
    let Some(dt) = lattice else { return Ok(mid) };
    let lo = (mid / dt).floor() * dt;
    for cand in [lo, lo + dt, lo - dt, lo + 2.0 * dt] {
        if cand > a && cand < b && env.sigma_st(a, cand) >= env.gap_threshold && env.sigma_st(cand, b) >= env.gap_threshold {
            return Ok(cand);
        }
    }
    Err(Error::Inadmissible(format!("no lattice split of [{a}, {b}] keeps both halves above the threshold")))
}

/// Capacity score `𝔠_{τ,ρ}(s, t)` on the constructed subdivision.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityScore {
    pub tau: f64,
    pub rho_window: f64,
    pub subdivision: Vec<f64>,
    pub value: f64,
    pub gamma_tau: f64,
    pub gamma_rho: f64,
}

impl CapacityScore {
    /// `2 log 2 + 2 log γ_τ`, from which the convergence bound applies.
    pub fn threshold(&self) -> f64 {
        2.0 * 2f64.ln() + 2.0 * self.gamma_tau.ln()
    }
}

/// `−Σ_{i=1}^N log(1 − e^{−(g_i + g_{i+1})})` over consecutive gaps of `points`.
pub fn capacity_of_points(env: &DiffusionEnv, points: &[f64]) -> f64 {
    let g: Vec<f64> = points.windows(2).map(|w| gap_cost(env, w[0], w[1])).collect();
    g.windows(2).map(|w| -(-(-(w[0] + w[1])).exp()).ln_1p()).sum()
}

fn admissible_points(env: &DiffusionEnv, pts: &[f64], tau: f64, rho: f64) -> bool {
    let n1 = pts.len() - 1;
    if n1 < 2 {
        return false;
    }
    let n = n1 - 1;
    let gaps = [(0, 1), (n - 1, n), (n, n1)];
    pts[1] - pts[0] <= rho + 1e-12
        && pts[n] - pts[n - 1] <= tau + 1e-12
        && pts[n1] - pts[n] <= tau + 1e-12
        && gaps.iter().all(|&(i, j)| env.sigma_st(pts[i], pts[j]) >= env.gap_threshold * (1.0 - 1e-12))
}

/// Best score among the prefixes of the constructed subdivision that fit in `[s, t]`.
pub fn capacity_from(env: &DiffusionEnv, sub: &Subdivision, t: f64, rho_window: Option<f64>) -> CapacityScore {
    let rho = rho_window.unwrap_or_else(|| sub.t_k.first().map_or(0.0, |t1| t1 - sub.s));
    let mut best = (0.0, vec![sub.s]);
    for k in 1..=sub.t_k.len() {
        let pts = sub.points(k);
        if *pts.last().unwrap() > t + 1e-12 || !admissible_points(env, &pts, sub.tau, rho) {
            continue;
        }
        let v = capacity_of_points(env, &pts);
        if v > best.0 {
            best = (v, pts);
        }
    }
    CapacityScore {
        tau: sub.tau,
        rho_window: rho,
        subdivision: best.1,
        value: best.0,
        gamma_tau: env.gamma(sub.tau),
        gamma_rho: env.gamma(rho),
    }
}

pub fn capacity_diffusion(env: &DiffusionEnv, s: f64, t: f64, tau: f64, rho_window: Option<f64>) -> Result<CapacityScore> {
    let sub = subdivision_build(env, s, tau, t, None)?;
    Ok(capacity_from(env, &sub, t, rho_window))
}

/// `‖μM_{s,t} − μ(h_s) λ(m_{s,t}) π_t‖` against `8(2 + γ_τ²)|μ|(h_s) λ(m_{s,t}) e^{−𝔠}` with
/// `π_t = λM_{s,t}/λ(m_{s,t})`. `sharp` marks the times where the bound applies.
pub fn diffusion_gap_series(
    m: &DiffusionSemigroup,
    sub: &Subdivision,
    times: &[f64],
    mu: &HybridMeasure,
    h: &HarmonicProfile,
) -> Result<Vec<GapReport>> {
    let env = m.env();
    let dt = m.dt();
    let ks = lattice_index(dt, sub.s)?;
    let mu_h = pair(mu, &h.h_s)?;
    let (plus, minus) = jordan(mu);
    let abs_mu_h = pair(&plus, &h.h_s)? + pair(&minus, &h.h_s)?;
    let mut mu_c = mu.project();
    let mut la_c = HybridMeasure::uniform(m.grid()).project();
    let mut at = ks;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let kt = lattice_index(dt, t)?;
        if kt < at {
            return Err(Error::InvalidParameter("times must be nondecreasing and >= s".into()));
        }
        mu_c = left_steps(m, at, kt, &mu_c);
        la_c = left_steps(m, at, kt, &la_c);
        at = kt;
        let la_m: f64 = la_c.iter().sum();
        let lhs: f64 = mu_c.iter().zip(&la_c).map(|(x, y)| (x - mu_h * y).abs()).sum();
        let score = capacity_from(env, sub, t, None);
        let gt = score.gamma_tau;
        let rhs = 8.0 * (2.0 + gt * gt) * abs_mu_h * la_m * (-score.value).exp();
        let sharp = score.value >= score.threshold();
        let pass = !sharp || Check::le("gap", lhs, rhs).pass;
        out.push(GapReport { t, lhs, rhs, capacity: score.value, sharp, pass });
    }
    Ok(out)
}

/// Certificate for the capacity-maximizing lattice prefix at `t`.
pub fn lattice_certificate(env: &DiffusionEnv, grid: &Grid, s: f64, tau: f64, t: f64, dt: f64) -> Result<CouplingCertificate> {
    let sub = subdivision_build(env, s, tau, t, Some(dt))?;
    let score = capacity_from(env, &sub, t, None);
    let cert = coupling_constants_diffusion(env, grid, &score.subdivision)?;
    debug_assert!((capacity(&cert) - score.value).abs() <= 1e-9 * score.value.max(1.0));
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(sigma: f64, r: f64) -> DiffusionEnv {
        DiffusionEnv::new(&SigmaSpec::Constant(sigma), GrowthSpec::Constant(r), VarianceConvention::Ito).unwrap()
    }

    #[test]
    fn accumulator_of_steps() {
        let acc = SigmaAccumulator::new(&SigmaSpec::Step { times: vec![0.0, 1.0, 3.0], values: vec![1.0, 0.0, 2.0] }).unwrap();
        assert_eq!(acc.integral(0.5), 0.5);
        assert_eq!(acc.integral(2.0), 1.0);
        assert!((acc.integral(4.0) - 5.0).abs() < 1e-14);
        assert_eq!(acc.sigma(1.0), 0.0);
        assert!((acc.reach(0.0, 3.0, 10.0).unwrap() - 3.5).abs() < 1e-12);
        assert!(acc.reach(1.0, 1.0, 2.9).is_none());
    }

    #[test]
    fn density_is_symmetric_and_normalized() {
        let e = env(0.5, 0.0);
        let n = 4000;
        let total: f64 = (0..n).map(|i| reflected_density(&e, 0.3, 0.0, 1.0, (i as f64 + 0.5) / n as f64).unwrap()).sum::<f64>() / n as f64;
        assert!((total - 1.0).abs() < 1e-6);
        let a = reflected_density(&e, 0.2, 0.0, 1.0, 0.9).unwrap();
        let b = reflected_density(&e, 0.9, 0.0, 1.0, 0.2).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(reflected_density(&e, 0.2, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        let g = Grid::new(0.0, 1.0, 64).unwrap();
        for var in [1e-5, 1e-3, 0.1, 4.0] {
            assert!(row_sum_defect(&g, var) < 1e-10, "var {var}");
        }
    }

    #[test]
    fn upper_constant_is_attained_at_boundary() {
        let var = 0.3;
        let at0 = gauss(0.0, var) + (-10..=10).map(|k| gauss(k as f64, var)).sum::<f64>();
        assert!((density_upper_constant(var) - at0).abs() < 1e-12);
    }

    #[test]
    fn constant_sigma_gaps() {
        let e = env(1.0, 0.0);
        let tau = 100.0 / (2.0 * PI);
        let sub = subdivision_build(&e, 0.0, tau, 10.0 * tau, None).unwrap();
        for w in sub.t_k.windows(2) {
            assert!((w[1] - w[0] - tau).abs() < 1e-6);
        }
        assert!((sub.t_k[0] - tau).abs() < 1e-9);
    }

    #[test]
    fn constant_case_constants() {
        let e = env(1.0, 0.3);
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let d = 100.0 / (2.0 * PI);
        let cert = coupling_constants_diffusion(&e, &g, &[0.0, d, 2.0 * d, 3.0 * d]).unwrap();
        assert!(cert.c.iter().all(|c| (c - 0.6).abs() < 1e-12));
        assert!(coupling_constants_diffusion(&e, &g, &[0.0, 0.1, 2.0, 3.0]).is_err());
    }

    #[test]
    fn no_admissible_subdivision_scores_zero() {
        let e = env(0.0, 0.0);
        assert_eq!(capacity_diffusion(&e, 0.0, 50.0, 1.0, None).unwrap().value, 0.0);
    }
}
