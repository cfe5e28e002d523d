use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lapace_core::classifiers::Classifier;
use lapace_core::config::{DataConfig, RunConfig};
use lapace_core::diffmath::Matrix;
use lapace_core::lapace::{generate_constrained_paths, generate_paths, Constraint, ConstraintSet, TauGrid};
use lapace_core::lgmvae::LgmvaeModel;
use lapace_core::metrics::LofIndex;
use lapace_core::pipeline::{prepare_data, train_classifier, train_lgmvae};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn training_step(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let data = prepare_data(&cfg).unwrap();
    let model = LgmvaeModel::new(data.schema.clone(), &cfg.lgmvae).unwrap();
    let n = cfg.lgmvae.batch_size.min(data.train.len());
    let x = Matrix::from_shape_fn((n, model.input_width()), |(r, c)| data.train.x[[r, c]]);
    let y = data.train.y_true[..n].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps = Matrix::from_shape_fn((n, model.latent_dim), |_| rng.sample(StandardNormal));
    c.bench_function("lgmvae loss and gradients, default size, one batch", |b| {
        b.iter(|| model.loss_and_gradients(&x, &y, &eps).unwrap())
    });
}

fn paths(c: &mut Criterion) {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig::Blobs { rows_per_class: 500 };
    cfg.lgmvae.hidden = vec![32; 3];
    let data = prepare_data(&cfg).unwrap();
    let clf = train_classifier(&cfg, &data).unwrap();
    let art = train_lgmvae(&cfg, &data, &clf).unwrap();
    assert!(art.model.recourse_ready);
    let x = data.test.row(0);
    let label = clf.classifier.predict(&x);
    let grid = TauGrid::default();
    c.bench_function("paths to every target centroid", |b| {
        b.iter(|| generate_paths(&art.model, &clf.classifier, &x, label, 1 - label, &grid).unwrap())
    });
    // A cap at the middle of the first feature's range, so some steps need
    // correcting.
    let name = data.schema.features[0].name.clone();
    let (_, (lo, hi)) = data.schema.continuous_column(&name).unwrap();
    let set = ConstraintSet {
        terms: vec![Constraint::Box { feature: name, min: None, max: Some((lo + hi) / 2.0) }],
        ..ConstraintSet::default()
    };
    c.bench_function("constrained paths, one box constraint", |b| {
        b.iter(|| generate_constrained_paths(&art.model, &clf.classifier, &x, label, 1 - label, &grid, &set).unwrap())
    });
}

fn lof(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let reference = Matrix::from_shape_fn((2000, 7), |_| rng.random());
    c.bench_function("lof index, 2000 points, k 20", |b| {
        b.iter(|| LofIndex::new(&reference, 20).unwrap())
    });
    let index = LofIndex::new(&reference, 20).unwrap();
    c.bench_function("lof query", |b| {
        b.iter_batched(
            || (0..7).map(|_| rng.random::<f64>()).collect::<Vec<_>>(),
            |q| index.score(&q).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = training_step, paths, lof
}
criterion_main!(benches);
