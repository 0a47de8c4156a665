use doeblin_core::convergence::rate_fit;
use doeblin_core::renewal::*;
use doeblin_core::semigroup::{right_steps, KernelSemigroup};
use doeblin_core::{GridFunction, HybridMeasure};

/// Picard iteration on the boundary renewal equation
/// `g(t) = f(t) e^{-B(t)} + ∫_0^t b(a) e^{-∫_0^a b} 2 g(t-a) da` for constant `b`
/// and `f ≡ 1`: the fixed point is `e^{bt}` on the untruncated domain.
fn picard_boundary(b: f64, t: f64, n: usize) -> Vec<f64> {
    let dt = t / n as f64;
    let mut g = vec![1.0; n + 1];
    for _ in 0..200 {
        let mut next = vec![0.0; n + 1];
        for i in 0..=n {
            let ti = i as f64 * dt;
            let mut acc = 0.0;
            for k in 0..=i {
                let a = k as f64 * dt;
                let w = if k == 0 || k == i { 0.5 } else { 1.0 };
                acc += w * dt * b * (-b * a).exp() * 2.0 * g[i - k];
            }
            next[i] = (-b * ti).exp() + if i == 0 { 0.0 } else { acc };
        }
        g = next;
    }
    g
}

#[test]
fn boundary_trace_matches_picard_oracle() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let r = RenewalSemigroup::new(rate, 15.0, 1.0 / 128.0).unwrap();
    let f = GridFunction::constant(r.grid(), 1.0);
    let trace = r.boundary_trace(&f, 2.0).unwrap();
    let oracle = picard_boundary(1.0, 2.0, 256);
    for (i, g) in oracle.iter().enumerate() {
        assert!((trace[i] - g).abs() < 1e-3 * g, "t={} {} vs {}", i as f64 / 128.0, trace[i], g);
        assert!((g - (i as f64 / 128.0).exp()).abs() < 1e-3 * g);
    }
}

#[test]
fn duhamel_agrees_with_direct_iteration_on_crenel() {
    let rate = DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap();
    let r = RenewalSemigroup::new(rate, 8.0, 1.0 / 32.0).unwrap();
    let f = GridFunction::from_fn(r.grid(), |a| (a * 1.3).cos().abs());
    let a = r.duhamel_apply(&f, 5.0).unwrap();
    let b = right_steps(&r, 0, 160, f.values());
    for (x, y) in a.values().iter().zip(&b) {
        assert!((x - y).abs() <= 1e-11 * y.abs().max(1.0));
    }
}

#[test]
fn constant_rate_triplet_matches_closed_forms() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let grid = age_grid(rate.default_a_max(), 1.0 / 256.0).unwrap();
    let tr = eigen_triplet(&rate, &grid).unwrap();
    assert!((tr.lambda - 1.0).abs() < 1e-8);
    assert!(tr.h.values().iter().all(|v| (v - 1.0).abs() < 2e-3));
    let sp = stationary_profile(&rate, tr.lambda, &grid).unwrap();
    for (a, d) in grid.midpoints().iter().zip(&sp.density) {
        assert!((d - 2.0 * (-2.0 * a).exp()).abs() < 2e-3);
    }
}

#[test]
fn constant_rate_decay_slope_is_minus_two() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let r = RenewalSemigroup::new(rate, 15.0, 1.0 / 256.0).unwrap();
    let tr = r.discrete_triplet(1e-13).unwrap();
    assert!((tr.lambda - 1.0).abs() < 1e-9);
    let mu = HybridMeasure::dirac(r.grid(), 0.0).unwrap();
    let times: Vec<f64> = (0..=64).map(|i| 2.0 + i as f64 / 8.0).collect();
    let err = r.decay_series(&tr, &mu, &times).unwrap();
    let fit = rate_fit(&times, &err).unwrap();
    assert!(fit.slope > -2.3 && fit.slope < -1.7, "slope {}", fit.slope);
}

#[test]
fn crenel_structure_and_minorization() {
    let rate = DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap();
    let r = RenewalSemigroup::new(rate.clone(), rate.default_a_max(), 1.0 / 64.0).unwrap();
    let s = structural_checks(&r, 12.0).unwrap();
    assert!(s.passed(), "{s:?}");
    let h1 = h1_nu_construct(&r, 0.25).unwrap();
    let c = doeblin_core::doeblin_constant(&r, 0.0, h1.t0, &h1.nu).unwrap();
    assert!(c >= h1.c, "{c} < {}", h1.c);
}

#[test]
fn crenel_error_stays_under_spectral_gap_envelope() {
    let rate = DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap();
    let r = RenewalSemigroup::new(rate.clone(), rate.default_a_max(), 1.0 / 64.0).unwrap();
    let tr = r.discrete_triplet(1e-13).unwrap();
    let mu = HybridMeasure::dirac(r.grid(), 0.0).unwrap();
    let times: Vec<f64> = (0..=768).map(|i| i as f64 / 64.0).collect();
    let err = r.decay_series(&tr, &mu, &times).unwrap();
    let rho = spectral_gap_rho(&rate).unwrap();
    let env = doeblin_core::convergence::exponential_envelope(&times, &err, rho, 3.75);
    assert!(env.pass, "{env:?} lambda {}", tr.lambda);
}
