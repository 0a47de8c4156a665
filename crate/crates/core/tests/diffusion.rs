use doeblin_core::certify_admissible;
use doeblin_core::convergence::harmonic_extract;
use doeblin_core::diffusion::*;
use doeblin_core::semigroup::{left_steps, mass_steps, right_steps, KernelSemigroup};
use doeblin_core::{Grid, HybridMeasure};
use std::f64::consts::PI;

fn env(sigma: f64, r: GrowthSpec) -> DiffusionEnv {
    DiffusionEnv::new(&SigmaSpec::Constant(sigma), r, VarianceConvention::Ito).unwrap()
}

/// Midpoint-rule double integral of the pointwise reflected density over a cell pair.
fn brute_cell(var: f64, i: usize, j: usize, h: f64, q: usize) -> f64 {
    let mut acc = 0.0;
    for a in 0..q {
        for b in 0..q {
            let x = (i as f64 + (a as f64 + 0.5) / q as f64) * h;
            let y = (j as f64 + (b as f64 + 0.5) / q as f64) * h;
            acc += reflected_density_var(x, var, y).unwrap();
        }
    }
    acc * h / (q * q) as f64
}

#[test]
fn closed_form_cells_match_quadrature() {
    let g = Grid::new(0.0, 1.0, 16).unwrap();
    for var in [2e-3, 0.05] {
        let k = kernel_matrix(&g, var);
        for (i, j) in [(0, 0), (3, 5), (15, 15), (7, 0)] {
            let b = brute_cell(var, i, j, g.spacing(), 400);
            assert!((k[i * 16 + j] - b).abs() < 1e-4 * b.max(1e-3), "{var} {i} {j}: {} vs {b}", k[i * 16 + j]);
        }
    }
}

#[test]
fn density_sandwich_on_256_cells() {
    let g = Grid::new(0.0, 1.0, 256).unwrap();
    for target in [5.0f64, 10.0, 20.0] {
        let e = env(1.0, GrowthSpec::Constant(0.0));
        let t = target * target / (2.0 * PI);
        assert!((e.sigma_st(0.0, t) - target).abs() < 1e-9);
        let (lo, hi) = sandwich_check(&g, &e, 0.0, t);
        assert!(lo.pass && hi.pass, "{lo:?} {hi:?}");
    }
}

#[test]
fn uniform_is_invariant_without_growth() {
    let e = env(0.7, GrowthSpec::Constant(0.0));
    let g = Grid::new(0.0, 1.0, 64).unwrap();
    let out = fk_propagate(&e, 64, &HybridMeasure::uniform(&g), 0.0, 2.0, 0.125).unwrap();
    assert!(out.density_weights().iter().all(|w| (w - 1.0 / 64.0).abs() < 1e-12));
}

#[test]
fn zero_sigma_is_pointwise_growth() {
    let r = GrowthSpec::Tabulated(vec![(0.0, -1.0), (1.0, 2.0)]);
    let e = env(0.0, r.clone());
    let g = Grid::new(0.0, 1.0, 32).unwrap();
    let out = fk_propagate(&e, 32, &HybridMeasure::uniform(&g), 0.0, 1.5, 0.25).unwrap();
    for (x, w) in g.midpoints().iter().zip(out.density_weights()) {
        assert!((w - (r.value(*x) * 1.5).exp() / 32.0).abs() < 1e-12);
    }
}

#[test]
fn mass_stays_between_growth_extremes() {
    let e = DiffusionEnv::new(
        &SigmaSpec::OnOff { on_value: 0.6, mean_on: 0.5, mean_off: 0.5, horizon: 6.0, seed: 3 },
        GrowthSpec::Tabulated(vec![(0.0, -0.5), (0.4, 1.0), (1.0, 0.2)]),
        VarianceConvention::Ito,
    )
    .unwrap();
    let m = DiffusionSemigroup::new(e.clone(), 64, 1.0 / 16.0).unwrap();
    let mass = mass_steps(&m, 0, 64).unwrap();
    for v in mass {
        assert!(v >= (e.r_lower * 4.0).exp() * (1.0 - 1e-12) && v <= (e.r_upper * 4.0).exp() * (1.0 + 1e-12));
    }
}

#[test]
fn stepping_matches_one_window_for_constant_coefficients() {
    let e = env(0.5, GrowthSpec::Constant(0.4));
    let g = Grid::new(0.0, 1.0, 128).unwrap();
    let m = DiffusionSemigroup::new(e.clone(), 128, 1.0 / 64.0).unwrap();
    let mu: Vec<f64> = (0..128).map(|i| if i < 20 { 1.0 / 20.0 } else { 0.0 }).collect();
    let stepped = left_steps(&m, 0, 64, &mu);
    let k = kernel_matrix(&g, e.variance(0.0, 1.0));
    let direct: Vec<f64> = (0..128).map(|j| 0.4f64.exp() * (0..128).map(|i| mu[i] * k[i * 128 + j]).sum::<f64>()).collect();
    let err: f64 = stepped.iter().zip(&direct).map(|(a, b)| (a - b).abs()).sum();
    // Each cell-averaged step adds O(h²) variance, so the gap is spatial rather than splitting error.
    assert!(err < 5e-3, "{err}");
}

#[test]
fn degenerate_windows_keep_positivity() {
    let e = DiffusionEnv::new(
        &SigmaSpec::Step { times: vec![0.0, 1.0, 2.0], values: vec![0.0, 1.0, 0.0] },
        GrowthSpec::Constant(-0.3),
        VarianceConvention::Ito,
    )
    .unwrap();
    let m = DiffusionSemigroup::new(e, 32, 0.25).unwrap();
    let f = right_steps(&m, 0, 16, &vec![1.0; 32]);
    assert!(f.iter().all(|v| *v > 0.0));
}

#[test]
fn lattice_certificate_is_admissible() {
    let e = env(4.0, GrowthSpec::Tabulated(vec![(0.0, 0.0), (1.0, 0.05)]));
    let dt = 1.0 / 32.0;
    let m = DiffusionSemigroup::new(e.clone(), 64, dt).unwrap();
    let cert = lattice_certificate(&e, m.grid(), 0.0, 1.0, 6.0, dt).unwrap();
    let t_n = *cert.times.last().unwrap();
    let rep = certify_admissible(&m, &cert, 0.0, 6.0, &[t_n, t_n + 1.0, 8.0]).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn capacity_bound_dominates_constant_instance() {
    let e = env(4.0, GrowthSpec::Constant(0.5));
    let dt = 1.0 / 32.0;
    let m = DiffusionSemigroup::new(e.clone(), 128, dt).unwrap();
    let sub = subdivision_build(&e, 0.0, 1.0, 16.0, None).unwrap();
    let lambda = HybridMeasure::uniform(m.grid());
    let h = harmonic_extract(&m, 0.0, &lambda, 16.0, 1e-8).unwrap();
    let mu = HybridMeasure::dirac(m.grid(), 0.1).unwrap();
    let times: Vec<f64> = (0..=512).map(|k| k as f64 * dt).collect();
    let rep = diffusion_gap_series(&m, &sub, &times, &mu, &h).unwrap();
    assert!(rep.iter().any(|r| r.sharp));
    assert!(rep.iter().all(|r| r.pass));
}
