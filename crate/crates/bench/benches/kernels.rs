use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use collapse_lab::diffusion::{
    sample, training_loss, GuidanceConfig, LabelPlan, SamplerKind, ScheduleSpec,
};
use collapse_lab::metrics::{build_manifold, frechet_distance, manifold_scores};
use collapse_lab::Philox;
use collapse_lab_bench::{denoiser, gaussian_features, mixture};

fn network(c: &mut Criterion) {
    let net = denoiser(2, vec![128, 128], 400, 8);
    let mut rng = Philox::new(3);
    let xs: Vec<f64> = (0..128 * 2).map(|_| rng.normal()).collect();
    let ts: Vec<usize> = (0..128).map(|i| 1 + i * 3).collect();
    let labels: Vec<Option<usize>> = (0..128).map(|i| Some(i % 8)).collect();
    c.bench_function("forward_batch_128", |b| {
        b.iter(|| net.forward_batch(black_box(&xs), &ts, &labels).unwrap())
    });
    let cache = net.forward_batch(&xs, &ts, &labels).unwrap();
    let grad = vec![1.0; 128 * 2];
    c.bench_function("backward_batch_128", |b| {
        b.iter(|| net.backward(black_box(&cache), &grad).unwrap())
    });

    let data = mixture(16);
    let schedule = ScheduleSpec::default().build().unwrap();
    let guidance = GuidanceConfig::default();
    c.bench_function("training_loss_128", |b| {
        b.iter_batched(
            || Philox::new(5),
            |mut rng| training_loss(&net, &data, &schedule, &guidance, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn metrics(c: &mut Criterion) {
    let x = gaussian_features(1000, 64, 1);
    let y = gaussian_features(1000, 64, 2);
    c.bench_function("frechet_1000x64", |b| {
        b.iter(|| frechet_distance(black_box(&x), &y).unwrap())
    });
    let rx = build_manifold(&x, 3).unwrap();
    c.bench_function("build_manifold_1000x64", |b| {
        b.iter(|| build_manifold(black_box(&y), 3).unwrap())
    });
    let ry = build_manifold(&y, 3).unwrap();
    c.bench_function("manifold_scores_1000x64", |b| {
        b.iter(|| manifold_scores(black_box(&rx), &ry).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let net = denoiser(2, vec![128, 128], 400, 0);
    let schedule = ScheduleSpec::default().build().unwrap();
    let mut group = c.benchmark_group("sample_256");
    group.sample_size(10);
    group.bench_function("ddim_50", |b| {
        b.iter(|| {
            sample(
                &net,
                256,
                &schedule,
                SamplerKind::Ddim { steps: 50 },
                None,
                &LabelPlan::Null,
                1,
            )
            .unwrap()
        })
    });
    group.bench_function("ddpm_400", |b| {
        b.iter(|| {
            sample(
                &net,
                256,
                &schedule,
                SamplerKind::Ddpm,
                None,
                &LabelPlan::Null,
                1,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, network, metrics, sampling);
criterion_main!(benches);
