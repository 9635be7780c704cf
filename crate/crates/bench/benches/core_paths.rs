use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use dilute_ising::coarse::{box_flow, classify_boxes, PhaseLabeling};
use dilute_ising::fk::{sw_step, EdgeConfig};
use dilute_ising::gibbs::GibbsSpec;
use dilute_ising::glauber::{
    cftp_sample, hitting_time, run, AllPlusOn, GraphicalNoise, SpaceTimeRegion, StDynamics,
    UpdateRule,
};
use dilute_ising::lattice::{gen_environment, Bc, Environment, LatticeRegion, Scales, Sign};
use dilute_ising::wulff::{critical_values, SurfaceTensionModel};

fn centered(side: u64) -> Arc<LatticeRegion> {
    let half = (side / 2) as i64;
    Arc::new(LatticeRegion::box_region(2, [-half, -half, 0], [side, side, 1]).unwrap())
}

fn env(side: u64, p: f64) -> Arc<Environment> {
    Arc::new(gen_environment(centered(side), p, 17).unwrap())
}

fn bench_environment(c: &mut Criterion) {
    let region = centered(128);
    c.bench_function("env gen 128x128 p=0.8", |b| {
        b.iter(|| gen_environment(black_box(region.clone()), 0.8, 17).unwrap())
    });
}

fn bench_glauber_drive(c: &mut Criterion) {
    let env = env(32, 1.0);
    let dynamics = StDynamics::new(
        SpaceTimeRegion::constant(env.region.clone(), 0.0, 5.0).unwrap(),
        env.clone(),
        1.2,
        0.5,
        Bc::Uniform(Sign::Minus),
        UpdateRule::HeatBath,
    )
    .unwrap();
    let xi = vec![-1i8; env.region.len()];
    let noise = GraphicalNoise::new(3);
    // ~5 events per vertex per unit time scale: 32*32*5 = 5120 updates/iter.
    c.bench_function("heat-bath drive 32x32 t=5", |b| {
        b.iter(|| run(&dynamics, 0.0, black_box(&xi), 5.0, &noise, &[]).unwrap())
    });
}

fn bench_hitting_time(c: &mut Criterion) {
    let env = env(24, 1.0);
    let spec = GibbsSpec::new(env.clone(), 1.0, 1.2, Bc::Uniform(Sign::Minus)).unwrap();
    let verts: Vec<u32> = (0..env.region.len() as u32).collect();
    c.bench_function("hitting time 24x24 strong field", |b| {
        b.iter(|| {
            let mut rule = AllPlusOn::new(verts.clone());
            hitting_time(&spec, &mut rule, &GraphicalNoise::new(9), 400.0).unwrap()
        })
    });
}

fn bench_sw_sweeps(c: &mut Criterion) {
    let env = env(16, 1.0);
    let spec = GibbsSpec::new(env, 1.0, 0.2, Bc::Uniform(Sign::Plus)).unwrap();
    c.bench_function("swendsen-wang sweep 16x16", |b| {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut spins = vec![1i8; spec.region().len()];
        b.iter(|| {
            let (_, next) = sw_step(&spec, &spins, &mut rng).unwrap();
            spins = next;
        })
    });
}

fn bench_cftp(c: &mut Criterion) {
    let env = env(8, 1.0);
    let spec = GibbsSpec::new(env, 0.6, 0.1, Bc::Free).unwrap();
    c.bench_function("cftp sample 8x8 beta=0.6", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            cftp_sample(&spec, seed, 40).unwrap()
        })
    });
}

fn bench_classify(c: &mut Criterion) {
    let env = env(64, 1.0);
    let region = &env.region;
    let sigma = vec![1i8; region.len()];
    let omega = EdgeConfig {
        real: (0..region.n_edges() as u32).map(|e| env.open(e)).collect(),
        ghost: vec![false; region.len()],
    };
    let scales = Scales::explicit(0.1, 8, 64).unwrap();
    c.bench_function("classify boxes 64x64 K=8", |b| {
        b.iter(|| classify_boxes(&env, &omega, &sigma, &scales, 1.0, 1.0).unwrap())
    });
}

fn bench_box_flow(c: &mut Criterion) {
    // Random three-phase labeling on a 12x12 box grid.
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let side = 12i64;
    let mut labels = Vec::new();
    let mut indices = Vec::new();
    for y in 0..side {
        for x in 0..side {
            indices.push([x, y, 0]);
            labels.push(match rng.gen_range(0..4) {
                0 => 1i8,
                1 => -1,
                _ => 0,
            });
        }
    }
    let labeling = PhaseLabeling { labels, indices };
    let members: Vec<u32> = (0..(side * side) as u32).collect();
    c.bench_function("box flow 12x12 random labels", |b| {
        b.iter(|| black_box(box_flow(&labeling, &members)))
    });
}

fn bench_wulff(c: &mut Criterion) {
    let model = SurfaceTensionModel::l1_anisotropic(1.0);
    c.bench_function("critical values l1-anisotropic", |b| {
        b.iter(|| critical_values(&model, 2, black_box(1.3), 1.5, 0.97).unwrap())
    });
}

criterion_group!(
    benches,
    bench_environment,
    bench_glauber_drive,
    bench_hitting_time,
    bench_sw_sweeps,
    bench_cftp,
    bench_classify,
    bench_box_flow,
    bench_wulff
);
criterion_main!(benches);
