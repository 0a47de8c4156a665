use doeblin_core::age::AgeCoefficients;
use doeblin_core::maxage::*;
use doeblin_core::renewal::{DivisionRate, RateProfile};
use doeblin_core::semigroup::{right_steps, KernelSemigroup};
use doeblin_core::GridFunction;

const H: f64 = 1.0 / 64.0;

fn schedule() -> MaxAgeSchedule {
    MaxAgeSchedule::Saturating { a0: 1.25, a_inf: 2.0 }
}

fn bumpy() -> DivisionRate {
    DivisionRate::new(RateProfile::Tabulated(vec![(0.0, 0.5), (1.0, 1.5), (2.0, 0.8)]), 0.0, 1.0, 1.0, 0.5).unwrap()
}

/// Solves the discrete boundary equation by Picard iteration from zero, then
/// rebuilds the profile along characteristics.
fn picard(m: &MaxAgeSemigroup, f: &[f64], k0: usize, k1: usize) -> Vec<f64> {
    let c = m.coefficients();
    let n = f.len();
    let f: Vec<f64> = (0..n).map(|j| if j < c.active_count(k1) { f[j] } else { 0.0 }).collect();
    let walk = |k: usize, start: usize, g: &[f64]| {
        let (mut pos, mut acc) = (start, 0.0);
        for kk in k..k1 {
            acc += c.births(kk, pos) * g[kk + 1 - k0];
            match c.transport(kk, pos) {
                Some((next, _)) => pos = next,
                None => return acc,
            }
        }
        acc + f[pos]
    };
    let mut g = vec![0.0; k1 - k0 + 1];
    for _ in 0..10_000 {
        let mut next: Vec<f64> = (k0..=k1).map(|k| walk(k, 0, &g)).collect();
        next[k1 - k0] = f[0];
        let diff = next.iter().zip(&g).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        g = next;
        if diff < 1e-15 * g.iter().fold(1.0f64, |a, b| a.max(b.abs())) {
            break;
        }
    }
    (0..n).map(|j| if j < c.active_count(k0) { walk(k0, j, &g) } else { 0.0 }).collect()
}

#[test]
fn duhamel_agrees_with_picard_and_step_iteration() {
    let m = MaxAgeSemigroup::new(schedule(), bumpy(), H).unwrap();
    let f = random_unit_functions(m.grid(), 3, 11);
    for (k0, k1) in [(0, 20), (5, 64), (40, 200)] {
        for g in &f {
            let d = duhamel_maxage(&m, g, k0 as f64 * H, k1 as f64 * H).unwrap();
            let p = picard(&m, g.values(), k0, k1);
            let masked: Vec<f64> =
                g.values().iter().enumerate().map(|(j, &v)| if m.is_active(k1, j) { v } else { 0.0 }).collect();
            let r = right_steps(&m, k0, k1, &masked);
            for ((a, b), c) in d.values().iter().zip(&p).zip(&r) {
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "picard {a} vs {b}");
                assert!((a - c).abs() < 1e-10 * c.abs().max(1.0), "steps {a} vs {c}");
            }
        }
    }
}

#[test]
fn gronwall_bound_for_random_unit_functions() {
    for rate in [DivisionRate::constant(1.0).unwrap(), bumpy()] {
        let m = MaxAgeSemigroup::new(schedule(), rate, H).unwrap();
        let f = random_unit_functions(m.grid(), 100, 2024);
        for (s, t) in [(0.0, 1.0), (0.5, 4.0), (2.0, 6.0)] {
            let c = gronwall_check(&m, s, t, &f).unwrap();
            assert!(c.pass, "{c:?}");
        }
        let zero = GridFunction::constant(m.grid(), 0.0);
        assert_eq!(duhamel_maxage(&m, &zero, 0.0, 3.0).unwrap().sup_norm(), 0.0);
    }
}

#[test]
fn constant_rate_mass_stays_below_exponential() {
    let m = MaxAgeSemigroup::new(schedule(), DivisionRate::constant(1.0).unwrap(), H).unwrap();
    let one = GridFunction::constant(m.grid(), 1.0);
    let v = duhamel_maxage(&m, &one, 0.0, 2.0).unwrap();
    assert!(v.sup_norm() <= 2f64.exp() * (1.0 + 1e-12));
    assert!(v.values()[0] > 1.0);
}

#[test]
fn h0_distance_within_bound_and_decreasing() {
    for rate in [DivisionRate::constant(1.0).unwrap(), bumpy()] {
        let m = MaxAgeSemigroup::new(schedule(), rate, H).unwrap();
        let n = m.limit().unwrap();
        for r in [2.0, 3.0] {
            let reps: Vec<H0Report> = [0.5, 1.0, 2.0, 3.0, 3.5, 5.0].iter().map(|&t| h0_distance(&m, &n, t, r).unwrap()).collect();
            for rep in &reps {
                assert!(rep.pass, "{rep:?}");
            }
            assert!(reps.windows(2).all(|w| w[1].distance <= w[0].distance));
            assert_eq!(reps.last().unwrap().distance, 0.0);
        }
    }
}

#[test]
fn h0_bound_example_with_unit_rate() {
    let m = MaxAgeSemigroup::new(
        MaxAgeSchedule::LinearThenFlat { a0: 1.0, a_inf: 2.0, slope: 0.5 },
        DivisionRate::constant(1.0).unwrap(),
        0.05,
    )
    .unwrap();
    let rep = h0_distance(&m, &m.limit().unwrap(), 1.8, 2.0).unwrap();
    assert!((rep.a_t - 1.9).abs() < 1e-12);
    let bound = (2.0f64.exp()).max((2.0f64.exp()).powi(2) * 2.0) * 0.1;
    assert!((rep.bound - bound).abs() < 1e-9 * bound);
    assert!(rep.distance > 0.0 && rep.distance <= bound);
}

#[test]
fn mass_ratio_and_positivity() {
    let m = MaxAgeSemigroup::new(schedule(), bumpy(), H).unwrap();
    for (s, t) in [(0.0, 0.25), (0.0, 1.0), (0.5, 3.0), (1.0, 8.0)] {
        let c = mass_ratio_check(&m, s, t, 1e-9).unwrap();
        assert!(c.pass, "{c:?}");
    }
}

#[test]
fn limit_mass_is_locally_bounded() {
    let m = MaxAgeSemigroup::new(schedule(), bumpy(), H).unwrap();
    let n = m.limit().unwrap();
    let sup = n.mass_sup(3.0).unwrap();
    assert!(sup.is_finite() && sup <= (3.0 * m.b_upper()).exp() * (1.0 + 1e-12));
}

#[test]
fn profile_gap_decreases_to_floor() {
    let horizons: Vec<f64> = (1..=7).map(|i| 1.0 + 2.0 * i as f64).collect();
    for rate in [DivisionRate::constant(1.0).unwrap(), bumpy()] {
        let m = MaxAgeSemigroup::new(schedule(), rate, H).unwrap();
        let rep = profile_convergence(&m, 1.0, &horizons, 40.0).unwrap();
        assert!(rep.applicable());
        assert!(rep.strictly_decreasing().pass, "{:?}", rep.points);
        assert!(rep.final_below(0.05).pass);
        assert!(rep.h_bound().pass);
        assert!(rep.h2_bound().pass);
    }
}

#[test]
fn profile_refuses_small_s() {
    let m = MaxAgeSemigroup::new(MaxAgeSchedule::Saturating { a0: 1.0, a_inf: 1.875 }, DivisionRate::constant(1.0).unwrap(), 1.0 / 16.0)
        .unwrap();
    let rep = profile_convergence(&m, 0.0, &[2.0, 4.0], 8.0).unwrap();
    assert!(!rep.applicable());
    assert!(rep.points.is_empty());
}

#[test]
fn constant_ceiling_reduces_to_limit_profile() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let m = MaxAgeSemigroup::new(MaxAgeSchedule::Constant { a: 2.0 }, rate, 1.0 / 32.0).unwrap();
    let (lambda, gamma) = m.limit().unwrap().perron_profile(1e-13).unwrap();
    // Characteristic equation b ∫_0^2 e^{−λa} da = 1 of the continuous model.
    let root = {
        let f = |l: f64| (1.0 - (-2.0 * l).exp()) / l - 1.0;
        let (mut lo, mut hi) = (0.1, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        lo
    };
    assert!((lambda - root).abs() < 5e-3, "{lambda} vs {root}");
    assert!((gamma.mass() - 1.0).abs() < 1e-12);
    let rep = profile_convergence(&m, 0.0, &[2.0, 4.0, 6.0, 8.0], 30.0).unwrap();
    assert!(rep.applicable() && rep.strictly_decreasing().pass);
}
