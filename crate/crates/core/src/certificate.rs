//! Coupling certificates: Doeblin minorization constants, mass domination,
//! admissibility of `(c_i, d_i)` and the capacity score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::HybridMeasure;
use crate::report::Check;
use crate::semigroup::{lattice_index, mass_steps, right_steps, KernelSemigroup};

/// Subdivision `t_0 <= ... <= t_N` with constants `(c_i, d_i)` for the steps
/// `[t_{i-1}, t_i]`, minorizing measures `ν_i` and the pair `(α, β)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingCertificate {
    pub times: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub nu_i: Vec<HybridMeasure>,
    pub alpha: f64,
    pub beta: f64,
    pub nu: HybridMeasure,
    pub s0: f64,
}

impl CouplingCertificate {
    /// Regular subdivision `t_i = s + i·r` with constant `(c, d)`, `α = 1/(cd)`, `β = 1/d`.
    pub fn regular(s: f64, r: f64, n: usize, c: f64, d: f64, nu_step: &HybridMeasure, nu: &HybridMeasure) -> Self {
        Self {
            times: (0..=n).map(|i| s + r * i as f64).collect(),
            c: vec![c; n],
            d: vec![d; n],
            nu_i: vec![nu_step.clone(); n],
            alpha: 1.0 / (c * d),
            beta: 1.0 / d,
            nu: nu.clone(),
            s0: s,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.c.len()
    }

    /// `Π (1 − c_i d_i)`.
    pub fn contraction_factor(&self) -> f64 {
        self.c.iter().zip(&self.d).map(|(c, d)| (1.0 - c * d).max(0.0)).product()
    }

    /// The steps that end no later than `t`.
    pub fn prefix(&self, t: f64) -> Self {
        let n = self.times.iter().skip(1).take_while(|&&ti| ti <= t + 1e-12).count();
        Self {
            times: self.times[..(n + 1).min(self.times.len())].to_vec(),
            c: self.c[..n].to_vec(),
            d: self.d[..n].to_vec(),
            nu_i: self.nu_i[..n].to_vec(),
            alpha: self.alpha,
            beta: self.beta,
            nu: self.nu.clone(),
            s0: self.s0,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// `−Σ log(1 − c_i d_i)`, infinite when some `c_i d_i = 1`, zero when empty.
pub fn capacity(cert: &CouplingCertificate) -> f64 {
    cert.c
        .iter()
        .zip(&cert.d)
        .map(|(c, d)| {
            let x = c * d;
            if x >= 1.0 {
                f64::INFINITY
            } else {
                -(-x).ln_1p()
            }
        })
        .sum()
}

/// Largest `c` with `δ_x M_{s,t} >= c m_{s,t}(x) ν` cellwise for every active `x`.
pub fn doeblin_constant<M: KernelSemigroup + ?Sized>(m: &M, s: f64, t: f64, nu: &HybridMeasure) -> Result<f64> {
    let (a, b) = (lattice_index(m.dt(), s)?, lattice_index(m.dt(), t)?);
    if b <= a {
        return Err(Error::InvalidParameter("doeblin_constant needs t > s".into()));
    }
    doeblin_steps(m, a, b, &nu.project())
}

pub(crate) fn doeblin_steps<M: KernelSemigroup + ?Sized>(m: &M, a: usize, b: usize, nu: &[f64]) -> Result<f64> {
    let n = m.grid().n_cells();
    let total: f64 = nu.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mass = mass_steps(m, a, b)?;
    let support: Vec<usize> = (0..n).filter(|&y| nu[y] > 0.0).collect();
    let worst = support
        .par_iter()
        .map(|&y| {
            let mut e = vec![0.0; n];
            e[y] = 1.0;
            let col = right_steps(m, a, b, &e);
            let ny = nu[y] / total;
            (0..n).filter(|&x| m.is_active(a, x)).map(|x| col[x] / (mass[x] * ny)).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(worst.clamp(0.0, 1.0))
}

/// Largest `d` with `d ‖m_{s,τ}‖_∞ <= ν(m_{s,τ})` over the listed horizons.
pub fn mass_domination<M: KernelSemigroup + ?Sized>(
    m: &M,
    nu: &HybridMeasure,
    s: f64,
    horizon_times: &[f64],
) -> Result<f64> {
    if horizon_times.is_empty() {
        return Err(Error::InvalidParameter("mass_domination needs at least one horizon".into()));
    }
    let a = lattice_index(m.dt(), s)?;
    let w = nu.project();
    let mut d = f64::INFINITY;
    for &tau in horizon_times {
        let b = lattice_index(m.dt(), tau)?;
        if b < a {
            return Err(Error::InvalidParameter(format!("horizon {tau} precedes s = {s}")));
        }
        d = d.min(domination_ratio(m, a, &w, &mass_steps(m, a, b)?));
    }
    Ok(d.clamp(0.0, 1.0))
}

fn domination_ratio<M: KernelSemigroup + ?Sized>(m: &M, a: usize, nu: &[f64], mass: &[f64]) -> f64 {
    let sup = (0..mass.len()).filter(|&x| m.is_active(a, x)).map(|x| mass[x]).fold(0.0, f64::max);
    let nm: f64 = nu.iter().zip(mass).map(|(w, v)| w * v).sum();
    nm / sup
}

/// Per-condition outcome of [`certify_admissible`]; the `τ` quantifiers are
/// checked on the sampled horizons only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub checks: Vec<Check>,
    pub sampled_tau: Vec<f64>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the four admissibility conditions on the grid over the sampled
/// horizons `taus` (each `>= t_N`):
/// `minorization` (`δ_x M_{t_{i-1},t_i} >= c_i ν_i`), `mass_domination`
/// (`ν_i(m_{t_i,τ}) >= d_i ‖m_{t_i,τ}‖_∞`), `final_alpha`
/// (`α c_N ν_N(m_{t_N,τ}) >= ‖m_{t_N,τ}‖_∞`) and `initial_beta`
/// (`β ν(m_{s,τ}) >= ‖m_{s,τ}‖_∞`).
///
/// `mass_domination` is also checked at `i = N`, since the capacity uses `d_N`.
pub fn certify_admissible<M: KernelSemigroup + ?Sized>(
    m: &M,
    cert: &CouplingCertificate,
    s: f64,
    t: f64,
    taus: &[f64],
) -> Result<AdmissibilityReport> {
    let dt = m.dt();
    let n = cert.n_steps();
    if cert.times.len() != n + 1 || cert.d.len() != n || cert.nu_i.len() != n {
        return Err(Error::InvalidParameter("certificate lists have inconsistent lengths".into()));
    }
    let ks = cert.times.iter().map(|&ti| lattice_index(dt, ti)).collect::<Result<Vec<_>>>()?;
    let (ks_, kt) = (lattice_index(dt, s)?, lattice_index(dt, t)?);
    let ktaus = taus.iter().map(|&tau| lattice_index(dt, tau)).collect::<Result<Vec<_>>>()?;
    let t_n = *ks.last().unwrap_or(&ks_);

    let mut checks = Vec::new();
    let ordered = ks.windows(2).all(|w| w[0] <= w[1]) && ks.first().map_or(true, |&k| k >= ks_) && t_n <= kt;
    checks.push(Check::flag("times_in_window", ordered));
    checks.push(Check::ge_with("alpha_beta_at_least_one", cert.alpha.min(cert.beta), 1.0, 0.0));
    let taus_ok = !ktaus.is_empty() && ktaus.iter().all(|&k| k >= t_n);
    checks.push(Check::flag("sampled_tau_after_t_N", taus_ok));
    if !ordered || !taus_ok {
        return Ok(AdmissibilityReport { checks, sampled_tau: taus.to_vec() });
    }

    let a1 = (0..n)
        .map(|i| {
            let c = if ks[i + 1] > ks[i] { doeblin_steps(m, ks[i], ks[i + 1], &cert.nu_i[i].project())? } else { 0.0 };
            Ok(Check::ge_with(format!("minorization[{}]", i + 1), c, cert.c[i], 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    checks.push(Check::worst("minorization", a1));

    let mut a2 = Vec::new();
    let mut a3 = Vec::new();
    let mut a4 = Vec::new();
    for &kt in &ktaus {
        for i in 0..n {
            let mass = mass_steps(m, ks[i + 1], kt)?;
            let r = domination_ratio(m, ks[i + 1], &cert.nu_i[i].project(), &mass);
            a2.push(Check::ge(format!("mass_domination[{}]", i + 1), r, cert.d[i]));
            if i + 1 == n {
                a3.push(Check::ge("final_alpha", cert.alpha * cert.c[i] * r, 1.0));
            }
        }
        let mass = mass_steps(m, ks_, kt)?;
        a4.push(Check::ge("initial_beta", cert.beta * domination_ratio(m, ks_, &cert.nu.project(), &mass), 1.0));
    }
    if n > 0 {
        checks.push(Check::worst("mass_domination", a2));
        checks.push(Check::worst("final_alpha", a3));
    }
    checks.push(Check::worst("initial_beta", a4));
    Ok(AdmissibilityReport { checks, sampled_tau: taus.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid;
    use crate::semigroup::MatrixSemigroup;

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn empty_certificate_has_zero_capacity() {
        let g = grid(2);
        let nu = HybridMeasure::uniform(&g);
        let cert = CouplingCertificate::regular(0.0, 1.0, 0, 0.5, 0.5, &nu, &nu);
        assert_eq!(capacity(&cert), 0.0);
    }

    #[test]
    fn constant_steps_capacity() {
        let g = grid(2);
        let nu = HybridMeasure::uniform(&g);
        let cert = CouplingCertificate::regular(0.0, 1.0, 7, 0.3, 0.5, &nu, &nu);
        assert!((capacity(&cert) + 7.0 * (1.0 - 0.15f64).ln()).abs() < 1e-13);
        assert_eq!(cert.prefix(3.5).n_steps(), 3);
    }

    #[test]
    fn rank_one_kernel_has_unit_constant() {
        let g = grid(3);
        let nu = [0.2, 0.5, 0.3];
        let k: Vec<f64> = (0..3).flat_map(|_| nu).collect();
        let m = MatrixSemigroup::new(&g, 1.0, vec![k]).unwrap();
        let nu_m = HybridMeasure::from_cells(&g, nu.to_vec()).unwrap();
        assert!((doeblin_constant(&m, 0.0, 1.0, &nu_m).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_kernel_dominates_no_density() {
        let g = grid(3);
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = MatrixSemigroup::new(&g, 1.0, vec![id]).unwrap();
        assert_eq!(doeblin_constant(&m, 0.0, 1.0, &HybridMeasure::uniform(&g)).unwrap(), 0.0);
    }

    #[test]
    fn spatially_constant_mass_gives_unit_domination() {
        let g = grid(2);
        let m = MatrixSemigroup::new(&g, 1.0, vec![vec![0.5, 1.5, 1.0, 1.0]]).unwrap();
        let d = mass_domination(&m, &HybridMeasure::uniform(&g), 0.0, &[1.0, 2.0, 5.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-14);
    }

    #[test]
    fn alpha_below_one_is_rejected() {
        let g = grid(2);
        let m = MatrixSemigroup::new(&g, 1.0, vec![vec![0.5, 0.5, 0.4, 0.6]]).unwrap();
        let nu = HybridMeasure::uniform(&g);
        let mut cert = CouplingCertificate::regular(0.0, 1.0, 2, 0.5, 0.5, &nu, &nu);
        cert.alpha = 0.9;
        let rep = certify_admissible(&m, &cert, 0.0, 2.0, &[2.0, 3.0]).unwrap();
        assert!(!rep.passed());
        assert!(!rep.get("alpha_beta_at_least_one").unwrap().pass);
        assert!(!rep.get("final_alpha").unwrap().pass);
    }
}
