//! Age-structured binary splitting: each particle divides at rate `b(age)`
//! into two particles of age 0. Its first-moment semigroup is the renewal
//! semigroup, which makes the simulation an independent stochastic oracle.
//!
//! Division times are drawn by thinning a Poisson clock of rate `b* ≥ b`.
//! Run `i` of a batch uses the ChaCha8 stream `i` of the batch seed, and
//! particles are processed in a fixed depth-first order, so a seed fixes
//! every event.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::GridFunction;
use crate::renewal::{age_grid, DivisionRate, RenewalSemigroup};
use crate::report::Check;

/// Abort threshold on the number of live and pending particles.
pub const EXPLOSION_LIMIT: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub age: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub rate: DivisionRate,
    pub initial: Vec<Particle>,
    pub horizon: f64,
    /// `b*`, at least the supremum of `b` over the ages that can be reached.
    pub majorant: f64,
}

impl SimulationRun {
    /// Run with the rate's own supremum as majorant (1 when `b ≡ 0`).
    pub fn new(seed: u64, rate: DivisionRate, initial: Vec<Particle>, horizon: f64) -> Result<Self> {
        let sup = rate.sup();
        let majorant = if sup > 0.0 { sup } else { 1.0 };
        let run = Self { seed, rate, initial, horizon, majorant };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be finite and nonnegative, got {}", self.horizon)));
        }
        if !(self.majorant > 0.0 && self.majorant.is_finite()) {
            return Err(Error::InvalidParameter(format!("majorant must be finite and positive, got {}", self.majorant)));
        }
        if self.initial.iter().any(|p| !(p.age >= 0.0)) {
            return Err(Error::InvalidParameter("initial ages must be nonnegative".into()));
        }
        let reach = self.initial.iter().map(|p| p.age).fold(0.0, f64::max) + self.horizon;
        if self.rate.sup_on(reach) > self.majorant * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!("majorant {} is below sup b = {}", self.majorant, self.rate.sup_on(reach))));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Final population of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Outcome {
    pub ages: Vec<f64>,
    pub divisions: u64,
    /// Set when the explosion guard stopped the run; `ages` is then partial.
    pub exploded: bool,
}

/// Simulates run number `stream` of the batch defined by `run`.
pub fn simulate(run: &SimulationRun, stream: u64) -> Outcome {
    let mut rng = run.rng(stream);
    let clock = Exp::new(run.majorant).expect("majorant is positive");
    let mut pending: Vec<(f64, f64)> = run.initial.iter().rev().map(|p| (p.age, 0.0)).collect();
    let mut ages = Vec::new();
    let mut divisions = 0;
    while let Some((mut age, mut time)) = pending.pop() {
        loop {
            let wait: f64 = clock.sample(&mut rng);
            if time + wait >= run.horizon {
                ages.push(age + (run.horizon - time));
                break;
            }
            time += wait;
            age += wait;
            if rng.gen::<f64>() * run.majorant < run.rate.value(age) {
                divisions += 1;
                pending.push((0.0, time));
                pending.push((0.0, time));
                break;
            }
        }
        if pending.len() + ages.len() > EXPLOSION_LIMIT {
            log::warn!("simulate: explosion guard hit after {divisions} divisions");
            return Outcome { ages, divisions, exploded: true };
        }
    }
    Outcome { ages, divisions, exploded: false }
}

/// Per-run summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunStats {
    pub run: u64,
    pub population: usize,
    /// `Σ_i f(age_i)` over the final population.
    pub f_sum: f64,
    pub exploded: bool,
}

/// Runs `0..n_runs` in parallel and returns their summaries in run order.
pub fn simulate_batch(run: &SimulationRun, n_runs: u64, f: impl Fn(f64) -> f64 + Sync) -> Vec<RunStats> {
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let o = simulate(run, i);
            RunStats { run: i, population: o.ages.len(), f_sum: o.ages.iter().map(|&a| f(a)).sum(), exploded: o.exploded }
        })
        .collect()
}

/// Age at the first accepted division of a lineage started at age 0, with no horizon.
pub fn division_age(rate: &DivisionRate, majorant: f64, rng: &mut ChaCha8Rng) -> f64 {
    let clock = Exp::new(majorant).expect("majorant is positive");
    let mut age = 0.0;
    loop {
        age += clock.sample(rng);
        if rng.gen::<f64>() * majorant < rate.value(age) {
            return age;
        }
    }
}

/// `(δ_x M_t f, m_t(x))` from the renewal semigroup.
pub fn deterministic_moment(rate: &DivisionRate, x0: f64, f: impl Fn(f64) -> f64, t: f64, spacing: f64) -> Result<(f64, f64)> {
    let reach = ((x0 + t + 1.0) / spacing).ceil() * spacing;
    let a_max = (rate.default_a_max() / spacing).ceil() * spacing;
    let a_max = a_max.max(reach);
    let grid = age_grid(a_max, spacing)?;
    let r = RenewalSemigroup::new(rate.clone(), a_max, spacing)?;
    let fx = r.duhamel_apply(&GridFunction::from_fn(&grid, f), t)?;
    let mx = r.duhamel_apply(&GridFunction::constant(&grid, 1.0), t)?;
    let at = |g: &GridFunction| g.eval(x0).ok_or_else(|| Error::InvalidParameter(format!("x0 = {x0} outside the age grid")));
    Ok((at(&fx)?, at(&mx)?))
}

/// Monte Carlo mean with its standard error against a deterministic value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McComparison {
    pub n_runs: u64,
    pub mean: f64,
    pub se: f64,
    pub deterministic: f64,
    /// `|mean − deterministic| / se`.
    pub z: f64,
    pub pass: bool,
    pub inconclusive: bool,
}

impl McComparison {
    fn new(n_runs: u64, mean: f64, se: f64, deterministic: f64, inconclusive: bool) -> Self {
        let z = if se > 0.0 { (mean - deterministic).abs() / se } else if mean == deterministic { 0.0 } else { f64::INFINITY };
        Self { n_runs, mean, se, deterministic, z, pass: !inconclusive && z <= 3.0, inconclusive }
    }

    pub fn check(&self, name: &str) -> Check {
        let mut c = Check::le(name, self.z, 3.0);
        c.pass = self.pass;
        c
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Mean population at `t` from one particle of age `x0` against `m_t(x0)`.
pub fn population_check(rate: &DivisionRate, x0: f64, t: f64, n_runs: u64, seed: u64, spacing: f64) -> Result<(McComparison, Vec<RunStats>)> {
    if n_runs < 2 {
        return Err(Error::InvalidParameter("at least two runs are needed".into()));
    }
    let run = SimulationRun::new(seed, rate.clone(), vec![Particle { age: x0 }], t)?;
    let stats = simulate_batch(&run, n_runs, |_| 1.0);
    let exploded = stats.iter().any(|s| s.exploded);
    let (mean, se) = mean_se(stats.iter().map(|s| s.population as f64));
    let (_, m) = deterministic_moment(rate, x0, |_| 1.0, t, spacing)?;
    Ok((McComparison::new(n_runs, mean, se, m, exploded), stats))
}

/// Ratio `Σ f(ages) / Σ count` over all runs against `δ_x M_t f / m_t(x)`, or
/// against `target` when given.
#[allow(clippy::too_many_arguments)]
pub fn many_to_one_check(
    rate: &DivisionRate,
    x0: f64,
    f: impl Fn(f64) -> f64 + Sync + Copy,
    t: f64,
    n_runs: u64,
    seed: u64,
    spacing: f64,
    target: Option<f64>,
) -> Result<(McComparison, Vec<RunStats>)> {
    if n_runs < 100 {
        return Err(Error::InvalidParameter(format!("many-to-one check needs at least 100 runs, got {n_runs}")));
    }
    let run = SimulationRun::new(seed, rate.clone(), vec![Particle { age: x0 }], t)?;
    let stats = simulate_batch(&run, n_runs, f);
    let exploded = stats.iter().any(|s| s.exploded);
    let deterministic = match target {
        Some(v) => v,
        None => {
            let (mf, m) = deterministic_moment(rate, x0, f, t, spacing)?;
            mf / m
        }
    };
    let n = n_runs as f64;
    let xbar = stats.iter().map(|s| s.f_sum).sum::<f64>() / n;
    let ybar = stats.iter().map(|s| s.population as f64).sum::<f64>() / n;
    if !(ybar > 0.0) {
        log::warn!("many_to_one_check: every run went extinct");
        return Ok((McComparison::new(n_runs, f64::NAN, f64::NAN, deterministic, true), stats));
    }
    let ratio = xbar / ybar;
    let resid = stats.iter().map(|s| s.f_sum - ratio * s.population as f64);
    let var = resid.map(|e| e * e).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt() / ybar;
    Ok((McComparison::new(n_runs, ratio, se, deterministic, exploded), stats))
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value of `samples` against `cdf`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let c = cdf(x);
        acc.max(c - i as f64 / n).max((i + 1) as f64 / n - c)
    });
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
