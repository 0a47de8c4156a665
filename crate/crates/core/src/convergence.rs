//! Numerical forms of the contraction lemma, the harmonic limit and the
//! convergence bound, plus exponential rate fitting.

use serde::{Deserialize, Serialize};

use crate::certificate::{capacity, CouplingCertificate};
use crate::error::{Error, Result};
use crate::measures::{jordan, pair, tv_cells, tv_norm, GridFunction, HybridMeasure};
use crate::report::Check;
use crate::semigroup::{lattice_index, left_steps, mass_path, mass_steps, KernelSemigroup};

/// Both sides of the contraction inequalities for one pair of measures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `‖μP − μ̃P‖ <= Π(1 − c_i d_i) ‖μ − μ̃‖`; only for equal masses.
    pub auxiliary: Option<Check>,
    /// `‖μM/μ(m) − μ̃M/μ̃(m)‖ <= 2 Π(1 − c_i d_i)`; only for nonnegative measures.
    pub normalized: Option<Check>,
    /// Mass lower bound `>= 1/α` for each nonnegative measure.
    pub mass_lower: Vec<Check>,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.auxiliary.iter().chain(&self.normalized).chain(&self.mass_lower).all(|c| c.pass)
    }
}

/// Evaluates the contraction inequalities on `[s, τ]`.
///
/// The auxiliary-semigroup part requires `μ(X) = μ̃(X)`: a conservative
/// operator preserves the mass difference, so no contraction can hold otherwise.
pub fn contraction_check<M: KernelSemigroup + ?Sized>(
    m: &M,
    cert: &CouplingCertificate,
    s: f64,
    mu: &HybridMeasure,
    mu_tilde: &HybridMeasure,
    tau: f64,
) -> Result<ContractionReport> {
    let dt = m.dt();
    let ks = lattice_index(dt, s)?;
    let kt = lattice_index(dt, tau)?;
    let k_n = lattice_index(dt, *cert.times.last().unwrap_or(&s))?;
    if kt < k_n {
        return Err(Error::InvalidParameter(format!("tau = {tau} precedes t_N")));
    }
    let prod = cert.contraction_factor();
    let (a, b) = (mu.project(), mu_tilde.project());
    let m_st = mass_steps(m, ks, kt)?;

    let auxiliary = if (mu.mass() - mu_tilde.mass()).abs() <= 1e-12 * mu.mass().abs().max(1.0) {
        let pa = left_steps(m, ks, kt, &divide(&a, &m_st));
        let pb = left_steps(m, ks, kt, &divide(&b, &m_st));
        Some(Check::le("contraction_auxiliary", tv_cells(&pa, &pb), prod * tv_cells(&a, &b)))
    } else {
        None
    };

    let nonneg = |v: &[f64]| v.iter().all(|&x| x >= 0.0) && v.iter().any(|&x| x > 0.0);
    let normalized = if nonneg(&a) && nonneg(&b) {
        let na = normalize(left_steps(m, ks, kt, &a));
        let nb = normalize(left_steps(m, ks, kt, &b));
        Some(Check::le("contraction_normalized", tv_cells(&na, &nb), 2.0 * prod))
    } else {
        None
    };

    let mut mass_lower = Vec::new();
    if cert.n_steps() > 0 {
        let m_nt = mass_steps(m, k_n, kt)?;
        let sup = m_nt.iter().fold(0.0f64, |x, y| x.max(*y));
        for v in [&a, &b] {
            if nonneg(v) {
                let p = normalize(left_steps(m, ks, k_n, v));
                let val: f64 = p.iter().zip(&m_nt).map(|(x, y)| x * y / sup).sum();
                mass_lower.push(Check::ge("mass_lower_bound", val, 1.0 / cert.alpha));
            }
        }
    }
    Ok(ContractionReport { auxiliary, normalized, mass_lower })
}

fn divide(a: &[f64], m: &[f64]) -> Vec<f64> {
    a.iter().zip(m).map(|(x, y)| if *y > 0.0 { x / y } else { 0.0 }).collect()
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// `h_s = lim m_{s,τ} / ν(m_{s,τ})` with the Cauchy increments observed on the way.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicProfile {
    pub s: f64,
    pub h_s: GridFunction,
    pub nu: HybridMeasure,
    pub horizon: f64,
    pub increments: Vec<f64>,
}

impl HarmonicProfile {
    pub fn nu_of_h(&self) -> f64 {
        pair(&self.nu, &self.h_s).unwrap_or(f64::NAN)
    }
}

/// Extracts `h_s` from the mass ratios at a sequence of horizons ending at `horizon`.
///
/// Fails with [`Error::NotCauchy`] when the last sup-norm increment exceeds `tol`.
pub fn harmonic_extract<M: KernelSemigroup + ?Sized>(
    m: &M,
    s: f64,
    nu: &HybridMeasure,
    horizon: f64,
    tol: f64,
) -> Result<HarmonicProfile> {
    let dt = m.dt();
    let (a, b) = (lattice_index(dt, s)?, lattice_index(dt, horizon)?);
    if b <= a {
        return Err(Error::InvalidParameter("harmonic_extract needs horizon > s".into()));
    }
    let steps: Vec<usize> = match m.period_steps() {
        Some(p) if !m.is_homogeneous() && (b - a) % p == 0 => (1..=(b - a) / p).map(|i| a + i * p).collect(),
        _ => {
            let n = if m.is_homogeneous() { 32 } else { 8 }.min(b - a);
            (1..=n).map(|i| a + (b - a) * i / n).collect()
        }
    };
    let w = nu.project();
    let masses = mass_path(m, a, &steps)?;
    let mut prev: Option<Vec<f64>> = None;
    let mut increments = Vec::new();
    for mass in masses {
        let nm: f64 = w.iter().zip(&mass).map(|(x, y)| x * y).sum();
        let r: Vec<f64> = mass.iter().map(|v| v / nm).collect();
        if let Some(p) = &prev {
            increments.push(p.iter().zip(&r).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())));
        }
        prev = Some(r);
    }
    let last = increments.last().copied().unwrap_or(f64::INFINITY);
    if !(last < tol) {
        return Err(Error::NotCauchy { increment: last, horizon });
    }
    let h_s = GridFunction::from_values(m.grid(), prev.unwrap_or_default())?;
    Ok(HarmonicProfile { s, h_s, nu: nu.clone(), horizon, increments })
}

/// Both sides of the convergence bound at one time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub capacity: f64,
    /// Whether the sharp form (capacity `>= log 4α`) was used.
    pub sharp: bool,
    pub pass: bool,
}

/// `‖μM_{s,t} − μ(h_s) ν(m_{s,t}) γM_{s0,t}/γ(m_{s0,t})‖` against its bound at each `t` in `times`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_gap_series<M: KernelSemigroup + ?Sized>(
    m: &M,
    s: f64,
    times: &[f64],
    mu: &HybridMeasure,
    cert: &CouplingCertificate,
    h: &HarmonicProfile,
    gamma_ref: &HybridMeasure,
    s0: f64,
) -> Result<Vec<GapReport>> {
    let dt = m.dt();
    let ks = lattice_index(dt, s)?;
    let k0 = lattice_index(dt, s0)?;
    if k0 > ks {
        return Err(Error::InvalidParameter("s0 must not exceed s".into()));
    }
    let mu_h = pair(mu, &h.h_s)?;
    let (plus, minus) = jordan(mu);
    let abs_mu_h = pair(&plus, &h.h_s)? + pair(&minus, &h.h_s)?;
    let mu_tv = tv_norm(mu);

    let mut mu_c = mu.project();
    let mut nu_c = cert.nu.project();
    let mut ga_c = left_steps(m, k0, ks, &gamma_ref.project());
    let mut at = ks;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let kt = lattice_index(dt, t)?;
        if kt < at {
            return Err(Error::InvalidParameter("times must be nondecreasing and >= s".into()));
        }
        mu_c = left_steps(m, at, kt, &mu_c);
        nu_c = left_steps(m, at, kt, &nu_c);
        ga_c = left_steps(m, at, kt, &ga_c);
        at = kt;
        let nu_m: f64 = nu_c.iter().sum();
        let ga_m: f64 = ga_c.iter().sum();
        let coef = mu_h * nu_m / ga_m;
        let lhs: f64 = mu_c.iter().zip(&ga_c).map(|(x, y)| (x - coef * y).abs()).sum();
        let cap = capacity(&cert.prefix(t));
        let sharp = cap >= (4.0 * cert.alpha).ln();
        let rhs = if sharp {
            8.0 * (2.0 + cert.alpha) * abs_mu_h * nu_m * (-cap).exp()
        } else {
            2.0 * (2.0 + cert.alpha) * cert.beta * mu_tv * nu_m * (-cap).exp()
        };
        let pass = Check::le("gap", lhs, rhs).pass;
        out.push(GapReport { t, lhs, rhs, capacity: cap, sharp, pass });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn ergodic_gap<M: KernelSemigroup + ?Sized>(
    m: &M,
    s: f64,
    t: f64,
    mu: &HybridMeasure,
    cert: &CouplingCertificate,
    h: &HarmonicProfile,
    gamma_ref: &HybridMeasure,
    s0: f64,
) -> Result<GapReport> {
    Ok(ergodic_gap_series(m, s, &[t], mu, cert, h, gamma_ref, s0)?.remove(0))
}

/// Least-squares fit of `log(error)` against `x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the fit in log space.
    pub residual: f64,
    pub samples_used: usize,
}

/// Fits the exponential decay rate after dropping the first 20% of samples
/// and any nonpositive error.
pub fn rate_fit(times: &[f64], errors: &[f64]) -> Result<RateFit> {
    if times.len() != errors.len() || times.len() < 5 {
        return Err(Error::InvalidParameter("rate_fit needs at least 5 paired samples".into()));
    }
    let skip = times.len() / 5;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(errors)
        .skip(skip)
        .filter_map(|(&t, &e)| {
            if e > 0.0 && e.is_finite() {
                Some((t, e.ln()))
            } else {
                log::warn!("rate_fit: dropping sample at t = {t} with error {e}");
                None
            }
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter("rate_fit: fewer than two usable samples".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate_fit: all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateFit { slope, intercept, residual, samples_used: pts.len() })
}

/// Checks `error(t) <= C e^{−rate (t − t_fit)}` for every `t > t_fit`, with
/// `C = error(t_fit)`.
pub fn exponential_envelope(times: &[f64], errors: &[f64], rate: f64, t_fit: f64) -> Check {
    let Some(i0) = times.iter().position(|&t| t >= t_fit - 1e-12) else {
        return Check::flag("exponential_envelope", false);
    };
    let c = errors[i0];
    Check::worst(
        "exponential_envelope",
        times[i0 + 1..]
            .iter()
            .zip(&errors[i0 + 1..])
            .map(|(&t, &e)| Check::le("", e, c * (-rate * (t - times[i0])).exp())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{doeblin_constant, mass_domination};
    use crate::measures::Grid;
    use crate::semigroup::MatrixSemigroup;

    #[test]
    fn exact_exponential_slope() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let e: Vec<f64> = t.iter().map(|x| (-2.0 * x).exp()).collect();
        let fit = rate_fit(&t, &e).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        let flat = rate_fit(&t, &[0.3; 20]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
    }

    #[test]
    fn rate_fit_needs_samples() {
        assert!(rate_fit(&[0.0, 1.0], &[1.0, 0.5]).is_err());
    }

    fn rank_one() -> (MatrixSemigroup, HybridMeasure) {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        let nu = [0.2, 0.5, 0.3];
        let k: Vec<f64> = (0..3).flat_map(|_| nu.map(|x| 1.5 * x)).collect();
        (MatrixSemigroup::new(&g, 1.0, vec![k]).unwrap(), HybridMeasure::from_cells(&g, nu.to_vec()).unwrap())
    }

    #[test]
    fn rank_one_certificate_collapses_everything() {
        let (m, nu) = rank_one();
        let c = doeblin_constant(&m, 0.0, 1.0, &nu).unwrap();
        let d = mass_domination(&m, &nu, 1.0, &[1.0, 2.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
        let cert = CouplingCertificate::regular(0.0, 1.0, 1, 1.0, 1.0, &nu, &nu);
        let g = m.grid().clone();
        let a = HybridMeasure::dirac(&g, 0.1).unwrap();
        let b = HybridMeasure::dirac(&g, 0.9).unwrap();
        let rep = contraction_check(&m, &cert, 0.0, &a, &b, 1.0).unwrap();
        assert!(rep.normalized.as_ref().unwrap().value < 1e-15);
        assert!(rep.passed());
    }

    #[test]
    fn identical_measures_have_no_gap() {
        let (m, nu) = rank_one();
        let cert = CouplingCertificate::regular(0.0, 1.0, 1, 0.5, 0.5, &nu, &nu);
        let rep = contraction_check(&m, &cert, 0.0, &nu, &nu, 2.0).unwrap();
        assert_eq!(rep.auxiliary.unwrap().value, 0.0);
    }

    #[test]
    fn harmonic_of_constant_mass_is_one() {
        let (m, nu) = rank_one();
        let h = harmonic_extract(&m, 0.0, &nu, 5.0, 1e-10).unwrap();
        assert!(h.h_s.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((h.nu_of_h() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_detects_growth() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert!(exponential_envelope(&t, &[1.0, 0.5, 0.2, 0.1], 0.5, 1.0).pass);
        assert!(!exponential_envelope(&t, &[1.0, 0.5, 0.6, 0.1], 0.0, 1.0).pass);
    }
}
