use doeblin_core::branching::*;
use doeblin_core::renewal::{DivisionRate, RateProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPACING: f64 = 1.0 / 256.0;

fn crenel() -> DivisionRate {
    DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap()
}

#[test]
fn constant_rate_mean_population() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let (cmp, stats) = population_check(&rate, 0.0, 5.0, 10_000, 7, SPACING).unwrap();
    assert!((cmp.deterministic - 5f64.exp()).abs() < 1e-9 * 5f64.exp());
    assert!(cmp.pass, "{cmp:?}");
    assert_eq!(stats.len(), 10_000);
    assert!(stats.iter().all(|s| s.population >= 1 && !s.exploded));
}

#[test]
fn crenel_rate_mean_population() {
    for x0 in [0.0, 1.5] {
        let (cmp, _) = population_check(&crenel(), x0, 5.0, 10_000, 11, SPACING).unwrap();
        assert!(cmp.pass, "x0 = {x0}: {cmp:?}");
    }
}

#[test]
fn many_to_one_constant_rate_matches_profile() {
    let rate = DivisionRate::constant(1.0).unwrap();
    let f = |a: f64| if a < 1.0 { 1.0 } else { 0.0 };
    // Profile density 2e^{−2a}, integrated over [0, 1] by Simpson's rule.
    let n = 2000;
    let h = 1.0 / n as f64;
    let g = |a: f64| 2.0 * (-2.0 * a).exp();
    let simpson = h / 3.0 * (0..=n).map(|i| {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        w * g(i as f64 * h)
    }).sum::<f64>();
    assert!((simpson - (1.0 - (-2f64).exp())).abs() < 1e-12);
    let (cmp, _) = many_to_one_check(&rate, 0.0, f, 10.0, 1000, 5, SPACING, Some(simpson)).unwrap();
    assert!(cmp.pass, "{cmp:?}");
}

#[test]
fn many_to_one_crenel_over_seeds() {
    let f = |a: f64| if a < 1.0 { 1.0 } else { 0.0 };
    for seed in 0..5 {
        let (cmp, _) = many_to_one_check(&crenel(), 0.0, f, 5.0, 2000, seed, SPACING, None).unwrap();
        assert!(cmp.pass, "seed {seed}: {cmp:?}");
    }
}

#[test]
fn many_to_one_of_constant_is_one() {
    let (cmp, _) = many_to_one_check(&crenel(), 0.5, |_| 1.0, 3.0, 100, 1, SPACING, None).unwrap();
    assert_eq!(cmp.mean, 1.0);
    assert!((cmp.deterministic - 1.0).abs() < 1e-12);
}

#[test]
fn too_few_runs_rejected() {
    assert!(many_to_one_check(&crenel(), 0.0, |_| 1.0, 3.0, 99, 1, SPACING, None).is_err());
}

#[test]
fn thinning_gives_exponential_and_crenel_division_ages() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let b = 1.7;
    let rate = DivisionRate::constant(b).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| division_age(&rate, b, &mut rng)).collect();
    let (_, p) = ks_test(&xs, |x| 1.0 - (-b * x).exp());
    assert!(p > 0.01, "exponential KS p = {p}");

    let c = crenel();
    let ys: Vec<f64> = (0..10_000).map(|_| division_age(&c, 1.0, &mut rng)).collect();
    let (_, p) = ks_test(&ys, |x| 1.0 - (-c.integral(x)).exp());
    assert!(p > 0.01, "crenel KS p = {p}");
    let (_, p) = ks_test(&ys, |x| 1.0 - (-x).exp());
    assert!(p < 1e-6);
}

#[test]
fn batches_are_reproducible() {
    let run = SimulationRun::new(123, crenel(), vec![Particle { age: 0.0 }, Particle { age: 2.0 }], 4.0).unwrap();
    let a = simulate_batch(&run, 200, |a| a);
    let b = simulate_batch(&run, 200, |a| a);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.population, y.population);
        assert_eq!(x.f_sum.to_bits(), y.f_sum.to_bits());
    }
}
