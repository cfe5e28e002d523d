mod common;

use common::{fixture, test_inputs};
use lapace_core::classifiers::{Classifier, FnClassifier};
use lapace_core::lapace::*;
use lapace_core::lgmvae::DecodeMode;
use lapace_core::Error;
use proptest::prelude::*;

fn clf() -> &'static lapace_core::classifiers::AnyClassifier {
    &fixture().classifier.classifier
}

#[test]
fn one_path_per_target_cluster() {
    let f = fixture();
    let (x, y, t) = test_inputs(1).remove(0);
    let paths = generate_paths(&f.lgmvae.model, clf(), &x, y, t, &TauGrid::default()).unwrap();
    assert_eq!(paths.len(), 5);
    let clusters: Vec<usize> = paths.iter().map(|p| p.cluster).collect();
    assert_eq!(clusters, f.lgmvae.model.partition.clusters_of(t).unwrap());
    for p in &paths {
        assert_eq!(p.entries.len(), 21);
        assert!(!p.flagged);
        assert!(p.entries.iter().all(|e| e.corrections == 0 && e.satisfied));
        assert_eq!(p.entries[0].latent, f.lgmvae.model.encode(&x, y).unwrap());
    }
}

#[test]
fn endpoint_is_the_decoded_centroid_for_any_input() {
    let f = fixture();
    let model = &f.lgmvae.model;
    let inputs: Vec<_> = test_inputs(30).into_iter().filter(|i| i.2 == 1).take(2).collect();
    assert_eq!(inputs.len(), 2);
    let centroids = model.centroids(1).unwrap();
    let ends: Vec<Vec<PathEntry>> = inputs
        .iter()
        .map(|(x, y, t)| {
            generate_paths(model, clf(), x, *y, *t, &TauGrid::default())
                .unwrap()
                .into_iter()
                .map(|p| p.entries.last().unwrap().clone())
                .collect()
        })
        .collect();
    for (i, c) in centroids.iter().enumerate() {
        assert_eq!(ends[0][i].latent, c.latent);
        assert_eq!(ends[0][i].decoded, c.decoded);
        assert_eq!(ends[0][i].decoded, ends[1][i].decoded);
        assert_eq!(ends[0][i].label, 1);
    }
}

#[test]
fn linear_midpoint() {
    assert_eq!(interpolate(&[0.0, 0.0], &[2.0, 4.0], 0.5), vec![1.0, 2.0]);
    assert_eq!(interpolate(&[3.0, -1.0], &[2.0, 4.0], 0.0), vec![3.0, -1.0]);
    assert_eq!(interpolate(&[3.0, -1.0], &[2.0, 4.0], 1.0), vec![2.0, 4.0]);
}

#[test]
fn path_latents_are_affine_in_tau() {
    let f = fixture();
    for (x, y, t) in test_inputs(5) {
        for p in generate_paths(&f.lgmvae.model, clf(), &x, y, t, &TauGrid::default()).unwrap() {
            let e = &p.entries;
            for a in 0..e.len() {
                for b in (a..e.len()).step_by(2) {
                    let m = (a + b) / 2;
                    for j in 0..e[a].latent.len() {
                        let lhs = e[a].latent[j] + e[b].latent[j];
                        assert!((lhs - 2.0 * e[m].latent[j]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn interpolation_is_affine(
        from in prop::collection::vec(-50.0..50.0f64, 8),
        to in prop::collection::vec(-50.0..50.0f64, 8),
        a in 0u32..=64,
        b in 0u32..=64,
    ) {
        let (a, b) = (2 * a.min(b), 2 * a.max(b));
        let tau = |i: u32| i as f64 / 128.0;
        let za = interpolate(&from, &to, tau(a));
        let zb = interpolate(&from, &to, tau(b));
        let zm = interpolate(&from, &to, tau((a + b) / 2));
        for j in 0..8 {
            prop_assert!((za[j] + zb[j] - 2.0 * zm[j]).abs() < 1e-12);
        }
    }
}

fn synthetic_path(labels: &[usize]) -> LatentPath {
    let grid = TauGrid::uniform(labels.len()).unwrap();
    LatentPath {
        cluster: 7,
        entries: grid
            .values()
            .iter()
            .zip(labels)
            .map(|(&tau, &label)| PathEntry {
                tau,
                latent: vec![tau * 2.0; 8],
                decoded: vec![tau; 8],
                label,
                corrections: 0,
                satisfied: true,
            })
            .collect(),
        flagged: false,
    }
}

#[test]
fn first_is_the_earliest_flip() {
    let f = fixture();
    let any = FnClassifier::new(8, 2, |_: &[f64]| 1);
    let mut labels = vec![0; 21];
    labels[14..].iter_mut().for_each(|l| *l = 1);
    labels[17] = 0;
    let sel = select_points(&f.lgmvae.model, &any, &synthetic_path(&labels), 1).unwrap();
    assert_eq!(sel.first.tau, 0.7);
    assert_eq!(sel.last.tau, 1.0);
    assert_eq!(sel.cluster, 7);
    for j in 0..8 {
        assert_eq!(sel.middle.latent[j], (1.4 + 2.0) / 2.0);
    }
    assert_eq!(sel.middle.decoded, f.lgmvae.model.decode(&sel.middle.latent, DecodeMode::Inference).unwrap());
    assert_eq!(sel.middle.label, 1);
}

#[test]
fn immediate_and_final_flips() {
    let f = fixture();
    let any = FnClassifier::new(8, 2, |_: &[f64]| 0);
    let sel = select_points(&f.lgmvae.model, &any, &synthetic_path(&[1; 21]), 1).unwrap();
    assert_eq!(sel.first.tau, 0.0);
    let mut late = vec![0; 21];
    late[20] = 1;
    let sel = select_points(&f.lgmvae.model, &any, &synthetic_path(&late), 1).unwrap();
    assert_eq!(sel.first, sel.last);
    assert_eq!(sel.middle, sel.last);
    let err = select_points(&f.lgmvae.model, &any, &synthetic_path(&[0; 21]), 1).unwrap_err();
    assert!(matches!(err, Error::NoFlip { cluster: 7 }));
}

#[test]
fn first_on_real_paths_is_valid_and_no_later_on_finer_grids() {
    let f = fixture();
    let model = &f.lgmvae.model;
    let coarse = TauGrid::uniform(21).unwrap();
    let fine = TauGrid::uniform(41).unwrap();
    for (x, y, t) in test_inputs(10) {
        let a = generate_paths(model, clf(), &x, y, t, &coarse).unwrap();
        let b = generate_paths(model, clf(), &x, y, t, &fine).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            let sa = select_points(model, clf(), pa, t).unwrap();
            let sb = select_points(model, clf(), pb, t).unwrap();
            assert_eq!(sa.first.label, t);
            assert_eq!(clf().predict(&sa.first.decoded), t);
            assert_eq!(sa.last.label, t);
            assert!(sb.first.tau <= sa.first.tau);
        }
    }
}

#[test]
fn request_errors() {
    let f = fixture();
    let (x, y, t) = test_inputs(1).remove(0);
    let grid = TauGrid::default();
    assert!(matches!(
        generate_paths(&f.lgmvae.model, clf(), &x, t, y, &grid),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        generate_paths(&f.lgmvae.model, clf(), &x, y, y, &grid),
        Err(Error::Infeasible(_))
    ));
    assert!(generate_paths(&f.lgmvae.model, clf(), &x[1..], y, t, &grid).is_err());
    let mut unready = f.lgmvae.model.clone();
    unready.recourse_ready = false;
    assert!(matches!(
        generate_paths(&unready, clf(), &x, y, t, &grid),
        Err(Error::NotRecourseReady(_))
    ));
}

fn decoded_feature(z: &[f64], col: usize) -> f64 {
    fixture().lgmvae.model.decode(z, DecodeMode::Training).unwrap()[col]
}

fn raw(col_name: &str, v: f64) -> f64 {
    let (_, (lo, hi)) = fixture().data.schema.continuous_column(col_name).unwrap();
    lo + (hi - lo) * v
}

#[test]
fn correction_is_a_no_op_when_satisfied() {
    let f = fixture();
    let model = &f.lgmvae.model;
    let z = model.centroids(0).unwrap()[0].latent.clone();
    let x0 = decoded_feature(&z, 0);
    let c = CompiledConstraints::new(&[Constraint::at_most("x0", raw("x0", x0) + 1.0)], &model.schema).unwrap();
    let (z2, n, g) = correct_latent(model, &z, &c, 0.05, 50).unwrap();
    assert_eq!((z2, n, g), (z, 0, 0.0));
}

#[test]
fn zero_step_never_moves() {
    let f = fixture();
    let model = &f.lgmvae.model;
    let z = model.centroids(0).unwrap()[1].latent.clone();
    let x0 = decoded_feature(&z, 0);
    let c = CompiledConstraints::new(&[Constraint::at_most("x0", raw("x0", x0 - 0.1))], &model.schema).unwrap();
    let (z2, n, g) = correct_latent(model, &z, &c, 0.0, 50).unwrap();
    assert_eq!(z2, z);
    assert_eq!(n, 50);
    assert!(g > 0.0);
}

#[test]
fn slight_violation_is_corrected() {
    let f = fixture();
    let model = &f.lgmvae.model;
    for c in model.centroids(0).unwrap().iter().chain(&model.centroids(1).unwrap()) {
        for (col, name) in [(0, "x0"), (3, "x3")] {
            let v = decoded_feature(&c.latent, col);
            let cons = CompiledConstraints::new(&[Constraint::at_most(name, raw(name, v - 0.002))], &model.schema).unwrap();
            let (z, n, g) = correct_latent(model, &c.latent, &cons, 0.05, 50).unwrap();
            assert!(g <= SATISFIED_TOLERANCE, "cluster {} {name}: violation {g} after {n}", c.cluster);
            assert!(n >= 1);
            assert!(cons.satisfied(&model.decode(&z, DecodeMode::Training).unwrap()));
        }
    }
}

#[test]
fn correction_never_worsens() {
    let f = fixture();
    let model = &f.lgmvae.model;
    for c in model.centroids(1).unwrap() {
        let v = decoded_feature(&c.latent, 3);
        let cons = CompiledConstraints::new(&[Constraint::at_most("x3", raw("x3", v - 0.05))], &model.schema).unwrap();
        let mut previous = f64::INFINITY;
        for k in 0..=50 {
            let (_, n, gk) = correct_latent(model, &c.latent, &cons, 0.05, k).unwrap();
            assert!(n <= k);
            assert!(gk <= previous, "cluster {}: {gk} > {previous} at {k}", c.cluster);
            previous = gk;
        }
    }
}

#[test]
fn empty_constraints_reproduce_unconstrained_paths() {
    let f = fixture();
    let grid = TauGrid::default();
    for (x, y, t) in test_inputs(3) {
        let plain = generate_paths(&f.lgmvae.model, clf(), &x, y, t, &grid).unwrap();
        let constrained =
            generate_constrained_paths(&f.lgmvae.model, clf(), &x, y, t, &grid, &ConstraintSet::default()).unwrap();
        assert_eq!(plain, constrained);
    }
}

#[test]
fn box_constraint_holds_or_is_flagged_on_every_entry() {
    let f = fixture();
    let model = &f.lgmvae.model;
    let set = ConstraintSet::new(vec![Constraint::at_most("x1", raw("x1", 0.5)), Constraint::greater("x2", "x4")]);
    let compiled = set.compile(&model.schema).unwrap();
    let mut corrected = 0;
    for (x, y, t) in test_inputs(4) {
        for p in generate_constrained_paths(model, clf(), &x, y, t, &TauGrid::default(), &set).unwrap() {
            for e in &p.entries {
                assert_eq!(e.satisfied, compiled.satisfied(&e.decoded));
                assert_eq!(e.label, clf().predict(&e.decoded));
                assert!(e.corrections <= 50);
                corrected += e.corrections;
            }
            assert_eq!(p.flagged, p.entries.last().unwrap().label != t);
        }
    }
    assert!(corrected > 0);
}
