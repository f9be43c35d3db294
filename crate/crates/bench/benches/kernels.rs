use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use sage_core::data::{make_world, WorldParams};
use sage_core::grouping::{build_graph, enumerate_cliques, greedy_partition, PromptGroup};
use sage_core::metrics::{frechet_distance, GaussianFit};
use sage_core::numerics::Activation;
use sage_core::sampling::{ddim_trajectory, sample_shared, Prompt};
use sage_core::schedule::{build_grid, NoiseSchedule, ScheduleKind};
use sage_core::training::{loss_sage, SageLossConfig, TrainingGroup};
use sage_core::{ConceptEmbedding, Denoiser, Guidance, Rng};

fn denoiser(rng: &mut Rng) -> Denoiser {
    Denoiser::init(2, 16, &[64, 64], 1000, Activation::Silu, rng)
}

fn mlp(c: &mut Criterion) {
    let mut rng = Rng::new(1, 0);
    let d = denoiser(&mut rng);
    let (z, cond) = (rng.gaussian(2), rng.unit_vector(16));
    c.bench_function("denoiser_forward", |b| b.iter(|| d.forward(black_box(&z), 500, black_box(&cond))));
    let (_, tape) = d.forward(&z, 500, &cond);
    let mut grads = d.params.zeros_like();
    c.bench_function("denoiser_backward", |b| {
        b.iter(|| d.backward_into(black_box(&tape), &[1.0, -1.0], 1.0, &mut grads))
    });
}

fn sampling(c: &mut Criterion) {
    let mut rng = Rng::new(2, 0);
    let d = denoiser(&mut rng);
    let sched = NoiseSchedule::new(1000, ScheduleKind::Linear).unwrap();
    let cond = rng.unit_vector(16);
    let guidance = Guidance::Constant(2.0);
    let grid = build_grid(&sched, 30, 0.0).unwrap();
    c.bench_function("ddim_30_steps", |b| {
        b.iter(|| ddim_trajectory(&d, &sched, &grid, &cond, &guidance, vec![0.3, -0.2]).unwrap())
    });
    let prompts: Vec<Prompt> = (0..4)
        .map(|i| Prompt {
            id: i,
            embedding: ConceptEmbedding::new(rng.unit_vector(16)).unwrap(),
        })
        .collect();
    let group = PromptGroup::new(vec![0, 1, 2, 3], &prompts);
    let shared = build_grid(&sched, 30, 0.3).unwrap();
    c.bench_function("shared_group_of_4", |b| {
        b.iter(|| sample_shared(&d, &sched, &shared, &group, 0, &prompts, &guidance, &mut Rng::new(3, 0)).unwrap())
    });
}

fn grouping(c: &mut Criterion) {
    let params = WorldParams {
        n_meta: 60,
        ..WorldParams::default()
    };
    let world = make_world(&mut Rng::new(4, 0), &params).unwrap();
    let emb: Vec<&[f64]> = world.concepts.iter().map(|c| c.embedding.as_slice()).collect();
    let graph = build_graph(&emb, params.tau_min, params.tau_max).unwrap();
    c.bench_function("cliques_180_nodes", |b| b.iter(|| enumerate_cliques(black_box(&graph), 2, 5, usize::MAX)));
    c.bench_function("greedy_partition_180", |b| b.iter(|| greedy_partition(black_box(&emb), 0.6).unwrap()));
}

fn training(c: &mut Criterion) {
    let mut rng = Rng::new(5, 0);
    let d = denoiser(&mut rng);
    let sched = NoiseSchedule::new(1000, ScheduleKind::Linear).unwrap();
    let group = TrainingGroup::new(
        (0..4).map(|_| rng.gaussian(2)).collect(),
        (0..4).map(|_| rng.unit_vector(16)).collect(),
    )
    .unwrap();
    let eps = rng.gaussian(2);
    let cfg = SageLossConfig::for_beta(0.3, 1000).unwrap();
    c.bench_function("loss_sage_group_of_4", |b| b.iter(|| loss_sage(&d, &sched, &group, &eps, 850, 300, &cfg)));
}

fn metrics(c: &mut Criterion) {
    let mut rng = Rng::new(6, 0);
    let a: Vec<Vec<f64>> = (0..2000).map(|_| rng.gaussian(16)).collect();
    let b: Vec<Vec<f64>> = (0..2000).map(|_| rng.gaussian(16)).collect();
    let (fa, fb) = (GaussianFit::fit(&a).unwrap(), GaussianFit::fit(&b).unwrap());
    c.bench_function("frechet_16d", |bch| bch.iter(|| frechet_distance(black_box(&fa), black_box(&fb)).unwrap()));
}

criterion_group!(benches, mlp, sampling, grouping, training, metrics);
criterion_main!(benches);
