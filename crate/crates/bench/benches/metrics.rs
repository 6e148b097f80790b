use criterion::{criterion_group, criterion_main, Criterion};
use mulsmo_core::eval::{fid, foot_skate_ratio, SkateThresholds};
use mulsmo_core::motion::synth::sample_motion;
use mulsmo_core::motion::{recover_joints, Skeleton};
use mulsmo_core::rng;
use mulsmo_core::style::infonce_loss;

fn rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| rng::normal_vec(&mut r, d)).collect()
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (rows(0, 256, 16), rows(1, 256, 16));
    c.bench_function("fid_256x16", |bench| bench.iter(|| fid(&a, &b).unwrap()));

    let mut r = rng::seeded(2);
    let t = rng::normal_tensor(&mut r, (64, 16)).unwrap();
    let s = rng::normal_tensor(&mut r, (64, 16)).unwrap();
    c.bench_function("infonce_64", |bench| bench.iter(|| infonce_loss(&t, &s, 0.07, true).unwrap()));

    let skeleton = Skeleton::mini();
    let motion = sample_motion(0, Some(0), 40, &skeleton, &mut rng::seeded(3)).unwrap();
    let traj = recover_joints(&motion).unwrap();
    let feet = skeleton.foot_joints;
    c.bench_function("recover_joints", |bench| bench.iter(|| recover_joints(&motion).unwrap()));
    c.bench_function("foot_skate", |bench| {
        bench.iter(|| foot_skate_ratio(&traj, &feet, SkateThresholds::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = metrics
}
criterion_main!(benches);
