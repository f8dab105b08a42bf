use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use radflow::flow::{discretize_region, run_flow, Kernel};
use radflow::pathcover::sequential_cover;
use radflow::{BrownianPath, DriftField, FlowConfig, NoiseStream, PointN, RefinePolicy, Region};

fn philox_normals(c: &mut Criterion) {
    let stream = NoiseStream::uniform(1, 0, 16, 1e-3);
    let mut out = vec![0.0; 16];
    let mut g = c.benchmark_group("noise");
    g.throughput(Throughput::Elements(16 * 1024));
    g.bench_function("normals_16d_x1024", |b| {
        b.iter(|| {
            for step in 0..1024 {
                stream.normals_into(black_box(step), &mut out);
            }
            black_box(out[0])
        })
    });
    g.finish();
}

fn advance_step(c: &mut Criterion) {
    let drift = DriftField::constant(0.3).unwrap();
    let saturating = DriftField::from_profile(radflow::DriftProfile::Saturating { amplitude: 0.3, scale: 0.5 }).unwrap();
    let region = Region::BallComplement { center: PointN::origin(3), radius: 1.0 };
    let cloud = discretize_region(&region, 512).unwrap();
    let b = [0.05, -0.02, 0.01];
    let mut g = c.benchmark_group("advance_all");
    g.throughput(Throughput::Elements(cloud.len() as u64));
    for (name, field) in [("constant", &drift), ("saturating", &saturating)] {
        let kernel = Kernel::new(field, 100.0, None);
        g.bench_function(name, |bch| {
            bch.iter_batched_ref(|| cloud.clone(), |cl| cl.advance_all(&b, 1e-3, &kernel, true), BatchSize::SmallInput)
        });
    }
    g.finish();
}

fn flow_run(c: &mut Criterion) {
    let cfg = FlowConfig {
        horizon: 1.0,
        dt: 1e-3,
        budget: 32,
        refine: RefinePolicy::None,
        ..FlowConfig::new(
            Region::LateralDisc { level: 1.0, center_perp: vec![0.0], radius: 8.0 },
            DriftField::constant(0.3).unwrap(),
        )
    };
    let stream = NoiseStream::uniform(2, 0, 2, cfg.dt);
    c.bench_function("run_flow_2d_1000_steps", |b| b.iter(|| run_flow(black_box(&cfg), &stream).unwrap()));
}

fn cover(c: &mut Criterion) {
    let path = BrownianPath::generate(&NoiseStream::uniform(3, 0, 16, 1e-3), 20_000, None).unwrap();
    c.bench_function("sequential_cover_16d_20000_steps", |b| b.iter(|| sequential_cover(black_box(&path), 1.0).unwrap()));
}

criterion_group!(benches, philox_normals, advance_step, flow_run, cover);
criterion_main!(benches);
