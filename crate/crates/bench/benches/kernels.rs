use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use doeblin_core::branching::{simulate, Particle, SimulationRun};
use doeblin_core::diffusion::{kernel_matrix, DiffusionEnv, DiffusionSemigroup, GrowthSpec, SigmaSpec, VarianceConvention};
use doeblin_core::maxage::{duhamel_maxage, random_unit_functions, MaxAgeSchedule, MaxAgeSemigroup};
use doeblin_core::renewal::{DivisionRate, RateProfile, RenewalSemigroup};
use doeblin_core::semigroup::{left_steps, KernelSemigroup};
use doeblin_core::verify::verify_trial;
use doeblin_core::{Grid, GridFunction};

fn crenel() -> DivisionRate {
    DivisionRate::new(RateProfile::Crenel { on: 1.0, off: 0.0 }, 1.0, 1.0, 0.75, 1.0).unwrap()
}

fn renewal(c: &mut Criterion) {
    let mut g = c.benchmark_group("renewal");
    for spacing in [1.0 / 64.0, 1.0 / 256.0] {
        let r = RenewalSemigroup::new(crenel(), crenel().default_a_max(), spacing).unwrap();
        let n = r.grid().n_cells();
        let mu = vec![1.0 / n as f64; n];
        let steps = (1.0 / spacing) as usize;
        g.bench_with_input(BenchmarkId::new("left_unit_time", n), &mu, |b, mu| b.iter(|| left_steps(&r, 0, steps, black_box(mu))));
        let f = GridFunction::constant(r.grid(), 1.0);
        g.bench_with_input(BenchmarkId::new("duhamel_t4", n), &f, |b, f| b.iter(|| r.duhamel_apply(black_box(f), 4.0).unwrap()));
    }
    g.finish();
}

fn diffusion(c: &mut Criterion) {
    let mut g = c.benchmark_group("diffusion");
    for n in [64, 256] {
        let grid = Grid::new(0.0, 1.0, n).unwrap();
        g.bench_with_input(BenchmarkId::new("kernel_matrix", n), &grid, |b, grid| b.iter(|| kernel_matrix(grid, black_box(0.05))));
    }
    let env = DiffusionEnv::new(&SigmaSpec::Constant(4.0), GrowthSpec::Constant(0.5), VarianceConvention::Ito).unwrap();
    let m = DiffusionSemigroup::new(env, 128, 1.0 / 32.0).unwrap();
    let mu = vec![1.0 / 128.0; 128];
    g.bench_function("left_32_steps_128", |b| b.iter(|| left_steps(&m, 0, 32, black_box(&mu))));
    g.finish();
}

fn maxage(c: &mut Criterion) {
    let m = MaxAgeSemigroup::new(MaxAgeSchedule::Saturating { a0: 1.25, a_inf: 2.0 }, DivisionRate::constant(1.0).unwrap(), 1.0 / 64.0).unwrap();
    let f = random_unit_functions(m.grid(), 1, 3).remove(0);
    c.bench_function("maxage/duhamel_0_to_6", |b| b.iter(|| duhamel_maxage(&m, black_box(&f), 0.0, 6.0).unwrap()));
}

fn verify(c: &mut Criterion) {
    c.bench_function("verify/trial_20_cells", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            verify_trial(black_box(1), i, 20).unwrap()
        })
    });
}

fn branching(c: &mut Criterion) {
    let run = SimulationRun::new(7, DivisionRate::constant(1.0).unwrap(), vec![Particle { age: 0.0 }], 5.0).unwrap();
    c.bench_function("branching/run_t5", |b| {
        let mut stream = 0;
        b.iter(|| {
            stream += 1;
            simulate(black_box(&run), stream)
        })
    });
}

criterion_group!(benches, renewal, diffusion, maxage, verify, branching);
criterion_main!(benches);
