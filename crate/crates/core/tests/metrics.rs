mod common;

use common::{fixture, test_inputs};
use lapace_core::classifiers::{AnyClassifier, Classifier, FnClassifier};
use lapace_core::data::Dataset;
use lapace_core::diffmath::Matrix;
use lapace_core::lapace::{generate_paths, select_points, CompiledConstraints, Constraint, ConstraintSet, TauGrid, Variant};
use lapace_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn first_coordinate_sign() -> FnClassifier<impl Fn(&[f64]) -> usize + Send + Sync> {
    FnClassifier::new(2, 2, |x: &[f64]| usize::from(x[0] > 0.0))
}

#[test]
fn validity_counts_points_with_any_valid_ce() {
    let clf = first_coordinate_sign();
    let flip = vec![vec![vec![1.0, 0.0]], vec![vec![-1.0, 0.0], vec![2.0, 0.0]]];
    assert_eq!(validity(&flip, &[1, 1], &clf).unwrap(), 1.0);
    let none = vec![vec![vec![-1.0, 0.0]], vec![vec![-3.0, 0.0]]];
    assert_eq!(validity(&none, &[1, 1], &clf).unwrap(), 0.0);
    assert_eq!(validity(&flip, &[1, 0], &clf).unwrap(), 1.0);
    assert!(validity(&none[..1], &[1, 1], &clf).is_err());
    assert!(validity(&[], &[], &clf).is_err());
}

#[test]
fn proximity_cases() {
    let x = vec![vec![0.0, 0.0]];
    assert_eq!(proximity_l1(&x, &[vec![vec![1.0, 2.0]]]).unwrap(), 3.0);
    assert_eq!(proximity_l1(&x, &[vec![vec![0.0, 0.0]]]).unwrap(), 0.0);
    assert_eq!(proximity_l1(&x, &[vec![vec![1.0, 0.0], vec![0.0, -3.0]]]).unwrap(), 2.0);
    assert!(proximity_l1(&x, &[vec![vec![1.0]]]).is_err());
}

#[test]
fn diversity_cases() {
    assert_eq!(diversity(&[vec![0.0, 0.0], vec![1.0, 1.0]]), 2.0);
    assert_eq!(diversity(&vec![vec![0.5, 1.0]; 4]), 0.0);
    assert_eq!(diversity(&[vec![0.5, 1.0]]), -1.0);
    assert_eq!(diversity(&[]), -1.0);
    assert_eq!(diversity(&[vec![0.0], vec![1.0], vec![3.0]]), 2.0);
}

fn point_set(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn set_distance_is_a_metric(a in point_set(6), b in point_set(6), c in point_set(6)) {
        let d = |p: &[Vec<f64>], q: &[Vec<f64>]| max_set_distance(p, q).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }
}

#[test]
fn set_distance_of_singletons_is_l1() {
    assert_eq!(max_set_distance(&[vec![0.0, 0.0]], &[vec![1.0, -2.0]]).unwrap(), 3.0);
    assert!(max_set_distance(&[], &[vec![0.0]]).is_err());
}

/// Textbook LOF from a full distance matrix.
fn lof_oracle(points: &[Vec<f64>], queries: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let knn = |q: &[f64], skip: Option<usize>| -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..n).filter(|&j| Some(j) != skip).map(|j| (j, dist(q, &points[j]))).collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    };
    let neighbours: Vec<_> = (0..n).map(|i| knn(&points[i], Some(i))).collect();
    let kdist: Vec<f64> = neighbours.iter().map(|nb| nb[k - 1].1).collect();
    let lrd_of = |nb: &[(usize, f64)]| {
        let mean_reach = nb.iter().map(|&(o, d)| d.max(kdist[o]).max(1e-12)).sum::<f64>() / k as f64;
        1.0 / mean_reach
    };
    let lrd: Vec<f64> = neighbours.iter().map(|nb| lrd_of(nb)).collect();
    let lof = |nb: &[(usize, f64)], own: f64| nb.iter().map(|&(o, _)| lrd[o] / own).sum::<f64>() / k as f64;
    let reference = (0..n).map(|i| lof(&neighbours[i], lrd[i])).collect();
    let query = queries
        .iter()
        .map(|q| {
            let nb = knn(q, None);
            lof(&nb, lrd_of(&nb))
        })
        .collect();
    (reference, query)
}

fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

fn matrix(points: &[Vec<f64>]) -> Matrix {
    Matrix::from_shape_vec((points.len(), points[0].len()), points.concat()).unwrap()
}

#[test]
fn lof_matches_brute_force() {
    for (case, &(n, dim)) in [(30, 2), (200, 3), (500, 8)].iter().enumerate() {
        let pts = cloud(n, dim, case as u64);
        let mut queries = cloud(20, dim, 100 + case as u64);
        queries.push(vec![5.0; dim]);
        for k in [5, 10, 20] {
            let index = LofIndex::new(&matrix(&pts), k).unwrap();
            let (reference, query) = lof_oracle(&pts, &queries, k);
            for (a, b) in index.reference_scores().iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "n={n} k={k}: {a} vs {b}");
            }
            for (q, b) in queries.iter().zip(&query) {
                let a = index.score(q).unwrap();
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "n={n} k={k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn lof_reference_behaviour() {
    let pts = cloud(500, 2, 7);
    let index = LofIndex::new(&matrix(&pts), DEFAULT_K).unwrap();
    let interior = index.score(&[0.5, 0.5]).unwrap();
    assert!((0.8..=1.2).contains(&interior), "{interior}");
    // Diameter of the unit square is about 1.4.
    assert!(index.score(&[14.0, 14.0]).unwrap() > 2.0);
    let mut scores = index.reference_scores();
    scores.sort_by(f64::total_cmp);
    let median = scores[scores.len() / 2];
    assert!((0.9..=1.1).contains(&median), "{median}");
}

#[test]
fn lof_survives_duplicates() {
    let mut pts = vec![vec![1.0, 1.0]; 30];
    pts.extend(cloud(30, 2, 3));
    let index = LofIndex::new(&matrix(&pts), 5).unwrap();
    assert!(index.reference_scores().iter().all(|s| s.is_finite()));
    assert!(index.score(&[1.0, 1.0]).unwrap().is_finite());
    assert!(LofIndex::new(&matrix(&pts), 0).is_err());
    assert!(LofIndex::new(&matrix(&pts), 60).is_err());
    assert!(index.score(&[1.0]).is_err());
}

fn first_ces(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<usize>) {
    let f = fixture();
    let clf = &f.classifier.classifier;
    let mut inputs = Vec::new();
    let mut sets = Vec::new();
    let mut targets = Vec::new();
    for (x, y, t) in test_inputs(n) {
        let paths = generate_paths(&f.lgmvae.model, clf, &x, y, t, &TauGrid::default()).unwrap();
        sets.push(
            paths
                .iter()
                .map(|p| select_points(&f.lgmvae.model, clf, p, t).unwrap().first.decoded)
                .collect(),
        );
        inputs.push(x);
        targets.push(t);
    }
    (inputs, sets, targets)
}

#[test]
fn clone_pool_matches_validity() {
    let f = fixture();
    let clf: &AnyClassifier = &f.classifier.classifier;
    let (_, sets, targets) = first_ces(8);
    // Include some invalid CEs so the check is not vacuous.
    let mut singles: Vec<Vec<Vec<f64>>> = sets.iter().map(|s| vec![s[0].clone()]).collect();
    for (s, (x, _, _)) in singles.iter_mut().zip(test_inputs(8)).step_by(3) {
        s[0] = x;
    }
    let ces: Vec<Vec<f64>> = singles.iter().map(|s| s[0].clone()).collect();
    let pool: Vec<&dyn Classifier> = vec![clf; 5];
    let robust = model_robustness(&ces, &targets, pool).unwrap();
    let valid = validity(&singles, &targets, clf).unwrap();
    assert_eq!(robust, valid);
    assert!(valid < 1.0);
    assert!(model_robustness(&ces, &targets, Vec::<&dyn Classifier>::new()).is_err());
}

#[test]
fn constant_method_is_input_robust() {
    let clf = first_coordinate_sign();
    let x = vec![-0.5, 0.0];
    let perturbed = perturbations(&x, &[true, true], 10, 0.01, 3);
    assert_eq!(perturbed.len(), 10);
    for p in &perturbed {
        assert!(p.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.01));
        assert_ne!(p, &x);
    }
    let constant = vec![vec![1.0, 1.0], vec![2.0, 0.0]];
    let r = input_robustness(&clf, 0, &constant, &perturbed, |_| Ok(constant.clone())).unwrap();
    assert_eq!(r.mean, Some(0.0));
    assert_eq!((r.kept, r.excluded), (10, 0));
    let echo = input_robustness(&clf, 0, &[x.clone()], &perturbed, |p| Ok(vec![p.to_vec()])).unwrap();
    assert!(echo.mean.unwrap() > 0.0 && echo.mean.unwrap() <= 0.02);
}

#[test]
fn perturbations_respect_mask_and_exclusion() {
    let clf = first_coordinate_sign();
    let x = vec![0.0, 0.0];
    let p = perturbations(&x, &[true, false], 50, 0.01, 1);
    assert!(p.iter().all(|v| v[1] == 0.0));
    assert_eq!(p, perturbations(&x, &[true, false], 50, 0.01, 1));
    let r = input_robustness(&clf, 0, &[x.clone()], &p, |_| Ok(vec![vec![0.0, 0.0]])).unwrap();
    assert_eq!(r.kept + r.excluded, 50);
    assert!(r.excluded > 0 && r.kept > 0);
}

#[test]
fn actionability_edge_cases() {
    let f = fixture();
    let schema = &f.lgmvae.model.schema;
    let clf = &f.classifier.classifier;
    let (_, sets, targets) = first_ces(6);
    let none = CompiledConstraints::new(&[], schema).unwrap();
    let cases: Vec<_> = sets
        .iter()
        .zip(&targets)
        .map(|(s, &t)| ActionabilityCase { candidates: s.clone(), constraints: &none, target: t })
        .collect();
    assert_eq!(actionability_rate(&cases, clf).unwrap(), validity(&sets, &targets, clf).unwrap());

    let impossible = Constraint::Box { feature: "x0".into(), min: Some(5.0), max: Some(4.0) };
    assert!(!impossible.is_feasible());
    let impossible = CompiledConstraints::new(&[impossible], schema).unwrap();
    let cases: Vec<_> = sets
        .iter()
        .zip(&targets)
        .map(|(s, &t)| ActionabilityCase { candidates: s.clone(), constraints: &impossible, target: t })
        .collect();
    assert_eq!(actionability_rate(&cases, clf).unwrap(), 0.0);
    assert!(actionability_rate(&[], clf).is_err());
}

#[test]
fn tstr_on_a_copy_has_no_gap() {
    let f = fixture();
    let train = &f.data.train;
    let copy = Dataset::new(train.x.clone(), train.y_true.clone()).unwrap();
    let r = tstr_compare(train, &copy, &f.data.test, &f.config.classifier, 2).unwrap();
    assert_eq!(r.gap(), 0.0);
    assert!(r.real_accuracy > 0.9);
}

#[test]
fn centroid_accuracy_of_ready_model() {
    let f = fixture();
    assert_eq!(centroid_accuracy(&f.lgmvae.model, &f.classifier.classifier).unwrap(), 1.0);
}

fn run_evaluation() -> MetricsReport {
    let f = fixture();
    let mut train = f.data.train.clone();
    train.y_pred = Some(f.classifier.classifier.predict_batch(&train.x));
    evaluate(
        &f.lgmvae.model,
        &f.classifier.classifier,
        &f.config.classifier,
        &train,
        &f.data.test,
        &TauGrid::default(),
        &ConstraintSet::default(),
        &f.config.evaluation,
    )
    .unwrap()
}

#[test]
fn evaluation_report_is_complete_and_deterministic() {
    let report = run_evaluation();
    assert_eq!(report.repeats.len(), 2);
    for r in &report.repeats {
        assert_eq!(r.n_inputs, 12);
        assert_eq!(r.variants.len(), 3);
        for m in r.variants.values() {
            for frac in [m.validity, m.model_robustness, m.actionability] {
                assert!((0.0..=1.0).contains(&frac));
            }
            assert!(m.proximity >= 0.0 && m.plausibility > 0.0);
            assert!(m.diversity >= 0.0 || m.diversity == -1.0);
            assert!(m.input_robustness >= 0.0);
        }
        let last = &r.variants[&Variant::Last];
        assert_eq!(last.validity, 1.0);
        assert_eq!(last.input_robustness, 0.0);
        assert!((0.0..=1.0).contains(&r.constrained_actionability));
        assert!((0.0..=1.0).contains(&r.naive_actionability));
    }
    for group in ["first", "middle", "last"] {
        for metric in [
            "validity",
            "proximity",
            "plausibility",
            "diversity",
            "model_robustness",
            "input_robustness",
            "actionability",
        ] {
            let s = &report.summary[group][metric];
            assert!(s.mean.is_finite() && s.std >= 0.0, "{group}.{metric}");
        }
    }
    assert!(report.summary.contains_key("constrained") && report.summary.contains_key("naive"));
    assert_eq!(report.centroid_accuracy, 1.0);
    assert_eq!(report.constraints.len(), f_constraints());
    assert!(report.runtime_seconds.is_none());

    let again = run_evaluation();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
}

fn f_constraints() -> usize {
    fixture().config.evaluation.synthetic_constraints
}

#[test]
fn evaluation_refuses_unready_models() {
    let f = fixture();
    let mut model = f.lgmvae.model.clone();
    model.recourse_ready = false;
    let mut train = f.data.train.clone();
    train.y_pred = Some(f.classifier.classifier.predict_batch(&train.x));
    let err = evaluate(
        &model,
        &f.classifier.classifier,
        &f.config.classifier,
        &train,
        &f.data.test,
        &TauGrid::default(),
        &ConstraintSet::default(),
        &f.config.evaluation,
    )
    .unwrap_err();
    assert!(matches!(err, lapace_core::Error::NotRecourseReady(_)));
}

#[test]
fn synthetic_constraint_sets_stay_jointly_satisfiable() {
    let data = fixture().data.clone();
    let n_classes = data.schema.n_classes();
    let mut pair_sets = 0;
    for seed in 0..40 {
        let terms = synthetic_constraints(&data.schema, &data.train, 10, seed).unwrap();
        assert_eq!(terms.len(), 10);
        pair_sets += usize::from(terms.iter().filter(|t| matches!(t, Constraint::Pair { .. })).count() >= 3);
        let all = ConstraintSet {
            terms,
            ..ConstraintSet::default()
        }
        .compile(&data.schema)
        .unwrap();
        let mut covered = vec![false; n_classes];
        for (r, &y) in data.train.x.rows().into_iter().zip(data.train.labels()) {
            covered[y] |= all.satisfied(&r.to_vec());
        }
        assert!(covered.iter().all(|&c| c), "seed {seed}: some class has no row meeting every constraint");
    }
    // Enough sets with several orderings that a cycle would have shown up.
    assert!(pair_sets >= 10, "{pair_sets}");
}
