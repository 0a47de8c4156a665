use doeblin_core::convergence::rate_fit;
use doeblin_core::periodic::*;
use doeblin_core::renewal::{age_grid, malthus_lambda, DivisionRate, RateProfile};
use doeblin_core::semigroup::KernelSemigroup;
use doeblin_core::HybridMeasure;

fn sine() -> PeriodicRate {
    PeriodicRate::time_only(Harmonic { mean: 1.0, amplitude: 1.0, phase: 0.0 }, 1.0).unwrap()
}

#[test]
fn sine_rate_floquet_and_sharp_decay() {
    let h = 1.0 / 64.0;
    let m = PeriodicSemigroup::new(sine(), 16.0, h).unwrap();
    let start = HybridMeasure::dirac(m.grid(), 0.0).unwrap();
    let eig = monodromy_eigen(&m, 0.0, &start, 500, 1e-12).unwrap();
    assert!((eig.lambda_f - 1.0).abs() < 1e-6, "{}", eig.lambda_f);
    assert!((floquet_lambda_time_only(&sine(), 64).unwrap() - 1.0).abs() < 1e-6);

    let fam = floquet_family_build(&m, &eig, 500, 1e-12).unwrap();
    assert!(fam.periodicity_residual < 10.0 * 2.0 * h);
    assert!((doeblin_core::pair(&eig.gamma_ss, &fam.h_ss).unwrap() - 1.0).abs() < 1e-8);
    let off = offset_residual(&m, &fam, &[8, 16, 32, 48], 500, 1e-12).unwrap();
    assert!(off < 10.0 * 2.0 * h, "{off}");

    let mu = HybridMeasure::dirac(m.grid(), 0.3).unwrap();
    let times: Vec<f64> = (64..=640).step_by(4).map(|k| k as f64 * h).collect();
    let err = floquet_decay_series(&m, &fam, &mu, &times).unwrap();
    let x: Vec<f64> = times.iter().map(|&t| sine().time_integral(0.0, t).unwrap()).collect();
    let fit = rate_fit(&x, &err).unwrap();
    assert!((fit.slope + 2.0).abs() < 0.3, "slope {}", fit.slope);
}

#[test]
fn lambda_is_independent_of_start_time_and_measure() {
    let m = PeriodicSemigroup::new(sine(), 12.0, 1.0 / 32.0).unwrap();
    let a = monodromy_eigen(&m, 0.0, &HybridMeasure::uniform(m.grid()), 500, 1e-12).unwrap();
    let b = monodromy_eigen(&m, 0.5, &HybridMeasure::dirac(m.grid(), 3.0).unwrap(), 500, 1e-12).unwrap();
    assert!((a.growth - b.growth).abs() < 1e-8 * a.growth);
    let c = monodromy_eigen(&m, 0.0, &HybridMeasure::dirac(m.grid(), 5.0).unwrap(), 500, 1e-12).unwrap();
    let d: f64 = a.gamma_ss.project().iter().zip(c.gamma_ss.project()).map(|(x, y)| (x - y).abs()).sum();
    assert!(d < 1e-7);
}

#[test]
fn time_constant_rate_matches_homogeneous_malthus() {
    let age = DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap();
    let a_max = age.default_a_max();
    let rate = PeriodicRate::new(
        PeriodicRateSpec::Separable { time: Harmonic { mean: 1.0, amplitude: 0.0, phase: 0.0 }, age: age.clone() },
        0.5,
        1.0,
        0.0,
        1.0,
    )
    .unwrap();
    let h = 1.0 / 64.0;
    let m = PeriodicSemigroup::new(rate, a_max, h).unwrap();
    let e = monodromy_eigen(&m, 0.0, &HybridMeasure::uniform(m.grid()), 2000, 1e-11).unwrap();
    let lam = malthus_lambda(&age, &age_grid(a_max, h).unwrap()).unwrap();
    assert!((e.lambda_f - lam).abs() < 5e-3, "{} vs {lam}", e.lambda_f);
}

#[test]
fn crenel_in_age_periodic_instance() {
    let age = DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.2 }, 1.0, 1.0, 0.75, 1.0).unwrap();
    let rate = PeriodicRate::new(
        PeriodicRateSpec::Separable { time: Harmonic { mean: 1.0, amplitude: 0.5, phase: 0.0 }, age },
        1.0,
        1.0,
        0.1,
        1.5,
    )
    .unwrap();
    let h = 1.0 / 32.0;
    let m = PeriodicSemigroup::new(rate, 20.0, h).unwrap();
    let mass = periodic_mass_monotone_check(&m, 0.0, 4.0).unwrap();
    assert!(mass.passed(), "{mass:?}");
    let gen = general_construct(&m, 0.0).unwrap();
    assert!(gen.rho > 0.0);
    assert!((gen.nu.mass() - 1.0).abs() < 1e-12);
    let c = doeblin_core::doeblin_constant(&m, 0.0, gen.step, &gen.nu).unwrap();
    assert!(c >= gen.c, "{c} < {}", gen.c);
    let eig = monodromy_eigen(&m, 0.0, &HybridMeasure::uniform(m.grid()), 4000, 1e-12).unwrap();
    let fam = floquet_family_build(&m, &eig, 4000, 1e-11).unwrap();
    let times: Vec<f64> = (0..=320).map(|k| k as f64 * h).collect();
    let err = floquet_decay_series(&m, &fam, &HybridMeasure::dirac(m.grid(), 0.0).unwrap(), &times).unwrap();
    let fit = rate_fit(&times, &err).unwrap();
    assert!(fit.slope <= -gen.rho, "{}", fit.slope);
}
