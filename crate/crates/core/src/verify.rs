//! Seeded randomized verification of the contraction inequalities on small
//! dense kernels with brute-force certificates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{certify_admissible, mass_domination, CouplingCertificate};
use crate::convergence::contraction_check;
use crate::error::Result;
use crate::measures::{Grid, GridFunction, HybridMeasure};
use crate::report::Check;
use crate::semigroup::{auxiliary_apply, left_steps, mass_steps, KernelSemigroup, MatrixSemigroup};

/// A random instance: kernels cycled on a unit lattice, the certificate
/// window `[s, s + n_steps]` and the test horizon `tau`.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub semigroup: MatrixSemigroup,
    pub s: usize,
    pub n_steps: usize,
    pub tau: usize,
}

/// Draws a positive kernel family with up to `max_cells` cells. Rows get
/// independent scales so the semigroup is far from conservative, and about
/// one entry in twenty is zero.
pub fn random_instance(rng: &mut ChaCha8Rng, max_cells: usize) -> Result<RandomInstance> {
    let n = rng.gen_range(2..=max_cells.max(2));
    let period = rng.gen_range(1..=3);
    let kernels = (0..period)
        .map(|_| {
            let mut k = vec![0.0; n * n];
            for x in 0..n {
                let scale = rng.gen_range(0.2..3.0);
                for y in 0..n {
                    if rng.gen::<f64>() > 0.05 {
                        k[x * n + y] = scale * rng.gen_range(0.01..1.0f64);
                    }
                }
                if k[x * n..(x + 1) * n].iter().all(|&v| v == 0.0) {
                    k[x * n + rng.gen_range(0..n)] = scale;
                }
            }
            k
        })
        .collect();
    let grid = Grid::new(0.0, 1.0, n)?;
    let semigroup = MatrixSemigroup::new(&grid, 1.0, kernels)?;
    let s = rng.gen_range(0..3);
    let n_steps = rng.gen_range(1..=6);
    let tau = s + n_steps + rng.gen_range(0..=3);
    Ok(RandomInstance { semigroup, s, n_steps, tau })
}

/// Certificate on the unit subdivision of `[s, s + n_steps]` with the best
/// `ν_i` for each step (normalized column minima of `δ_x M / m(x)`), the best
/// `d_i` over the horizons `t_N..=tau`, and the smallest admissible `α, β`.
pub fn brute_force_certificate<M: KernelSemigroup + ?Sized>(m: &M, s: usize, n_steps: usize, tau: usize) -> Result<CouplingCertificate> {
    let n = m.grid().n_cells();
    let grid = m.grid().clone();
    let t_n = s + n_steps;
    let taus: Vec<f64> = (t_n..=tau).map(|k| k as f64 * m.dt()).collect();
    let uniform = HybridMeasure::uniform(&grid);
    let mut c = Vec::with_capacity(n_steps);
    let mut d = Vec::with_capacity(n_steps);
    let mut nu_i = Vec::with_capacity(n_steps);
    for i in 1..=n_steps {
        let (a, b) = (s + i - 1, s + i);
        let mass = mass_steps(m, a, b)?;
        let mut col_min = vec![f64::INFINITY; n];
        for x in 0..n {
            let mut e = vec![0.0; n];
            e[x] = 1.0;
            let row = left_steps(m, a, b, &e);
            for (cm, r) in col_min.iter_mut().zip(&row) {
                *cm = cm.min(r / mass[x]);
            }
        }
        let ci: f64 = col_min.iter().sum();
        let nu = if ci > 0.0 { HybridMeasure::from_cells(&grid, col_min.iter().map(|v| v / ci).collect())? } else { uniform.clone() };
        d.push(mass_domination(m, &nu, b as f64 * m.dt(), &taus)?);
        c.push(ci.min(1.0));
        nu_i.push(nu);
    }
    let last = nu_i.last().expect("at least one step").project();
    let c_n = *c.last().expect("at least one step");
    let ratio = |from: usize, w: &[f64]| -> Result<f64> {
        let mut worst = 1.0f64;
        for k in t_n..=tau {
            let mass = mass_steps(m, from, k)?;
            let sup = mass.iter().copied().fold(0.0, f64::max);
            let nm: f64 = w.iter().zip(&mass).map(|(a, b)| a * b).sum();
            worst = worst.max(sup / nm);
        }
        Ok(worst)
    };
    let alpha = if c_n > 0.0 { ratio(t_n, &last)? / c_n } else { f64::INFINITY };
    let beta = ratio(s, &uniform.project())?;
    Ok(CouplingCertificate {
        times: (s..=t_n).map(|k| k as f64 * m.dt()).collect(),
        c,
        d,
        nu_i,
        alpha,
        beta,
        nu: uniform,
        s0: s as f64 * m.dt(),
    })
}

fn random_probability(rng: &mut ChaCha8Rng, grid: &Grid) -> Result<HybridMeasure> {
    let mut w: Vec<f64> = (0..grid.n_cells()).map(|_| if rng.gen::<f64>() < 0.3 { 0.0 } else { rng.gen::<f64>() }).collect();
    if w.iter().all(|&v| v == 0.0) {
        w[0] = 1.0;
    }
    HybridMeasure::from_cells(grid, w)?.normalized()
}

/// Outcome of one randomized trial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u64,
    pub cells: usize,
    pub steps: usize,
    pub admissible: Check,
    pub contraction_ii: Check,
    pub contraction_iii: Check,
    pub mass_lower: Check,
    pub conservativity: Check,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        [&self.admissible, &self.contraction_ii, &self.contraction_iii, &self.mass_lower, &self.conservativity].iter().all(|c| c.pass)
    }
}

/// Runs trial `trial` of the suite seeded by `seed`.
pub fn verify_trial(seed: u64, trial: u64, max_cells: usize) -> Result<TrialReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let inst = random_instance(&mut rng, max_cells)?;
    let m = &inst.semigroup;
    let grid = m.grid().clone();
    let cert = brute_force_certificate(m, inst.s, inst.n_steps, inst.tau)?;
    let (s, tau) = (inst.s as f64, inst.tau as f64);
    let taus: Vec<f64> = (inst.s + inst.n_steps..=inst.tau).map(|k| k as f64).collect();
    let adm = certify_admissible(m, &cert, s, tau, &taus)?;
    // Without a positive c_N no finite α exists and `final_alpha` is vacuous.
    let has_a3 = cert.c.last().is_some_and(|&c| c > 0.0);
    let admissible = Check::worst("admissible", adm.checks.into_iter().filter(|c| has_a3 || c.name != "final_alpha"));

    let mut ii = Vec::new();
    let mut iii = Vec::new();
    let mut mass_lower = Vec::new();
    for _ in 0..3 {
        let mu = random_probability(&mut rng, &grid)?;
        let nu = random_probability(&mut rng, &grid)?;
        let scale = rng.gen_range(0.1..10.0);
        let r = contraction_check(m, &cert, s, &mu.scaled(scale), &nu.scaled(scale), tau)?;
        ii.extend(r.auxiliary);
        iii.extend(r.normalized);
        mass_lower.extend(r.mass_lower);

        // Signed pair with equal total mass.
        let a: Vec<f64> = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift = (a.iter().sum::<f64>() - b.iter().sum::<f64>()) / b.len() as f64;
        b.iter_mut().for_each(|v| *v += shift);
        let r = contraction_check(m, &cert, s, &HybridMeasure::from_cells(&grid, a)?, &HybridMeasure::from_cells(&grid, b)?, tau)?;
        ii.extend(r.auxiliary);
    }

    let one = GridFunction::constant(&grid, 1.0);
    let u = rng.gen_range(inst.s..=inst.tau) as f64;
    let p = auxiliary_apply(m, tau, s, u, &one)?;
    let dev = p.values().iter().fold(0.0f64, |acc, v| acc.max((v - 1.0).abs()));
    let conservativity = Check::le_with("conservativity", dev, 1e-12, 0.0);

    Ok(TrialReport {
        trial,
        cells: grid.n_cells(),
        steps: inst.n_steps,
        admissible,
        contraction_ii: Check::worst("contraction_ii", ii),
        contraction_iii: Check::worst("contraction_iii", iii),
        mass_lower: Check::worst("mass_lower", mass_lower),
        conservativity,
    })
}

/// Summary of a seeded run of the suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: u64,
    pub max_cells: usize,
    pub admissible: Check,
    pub contraction_ii: Check,
    pub contraction_iii: Check,
    pub mass_lower: Check,
    pub conservativity: Check,
    pub failed_trials: Vec<u64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failed_trials.is_empty()
    }

    pub fn checks(&self) -> [&Check; 5] {
        [&self.admissible, &self.contraction_ii, &self.contraction_iii, &self.mass_lower, &self.conservativity]
    }
}

/// Runs `trials` independent trials in parallel; trial `i` uses stream `i` of `seed`.
pub fn verify_core(seed: u64, trials: u64, max_cells: usize) -> Result<(VerifyReport, Vec<TrialReport>)> {
    let reports = (0..trials).into_par_iter().map(|i| verify_trial(seed, i, max_cells)).collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&TrialReport) -> &Check, name: &str| Check::worst(name, reports.iter().map(|r| f(r).clone()));
    let summary = VerifyReport {
        seed,
        trials,
        max_cells,
        admissible: pick(|r| &r.admissible, "admissible"),
        contraction_ii: pick(|r| &r.contraction_ii, "contraction_ii"),
        contraction_iii: pick(|r| &r.contraction_iii, "contraction_iii"),
        mass_lower: pick(|r| &r.mass_lower, "mass_lower"),
        conservativity: pick(|r| &r.conservativity, "conservativity"),
        failed_trials: reports.iter().filter(|r| !r.passed()).map(|r| r.trial).collect(),
    };
    Ok((summary, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let (r, trials) = verify_core(1, 40, 12).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(trials.iter().any(|t| t.contraction_iii.bound < 2.0));
    }

    #[test]
    fn rank_one_kernel_has_unit_constant() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        let row = [0.2, 0.3, 0.5];
        let k: Vec<f64> = (0..3).flat_map(|x| row.iter().map(move |v| v * (1.0 + x as f64))).collect();
        let m = MatrixSemigroup::new(&g, 1.0, vec![k]).unwrap();
        let cert = brute_force_certificate(&m, 0, 1, 2).unwrap();
        assert!((cert.c[0] - 1.0).abs() < 1e-12);
        let mu = HybridMeasure::dirac(&g, 0.1).unwrap();
        let nu = HybridMeasure::dirac(&g, 0.9).unwrap();
        let r = contraction_check(&m, &cert, 0.0, &mu, &nu, 2.0).unwrap();
        assert!(r.normalized.unwrap().value < 1e-15);
    }
}
