use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    actionability_rate, diversity, max_set_distance, perturbations, tstr_utility, ActionabilityCase, LofIndex,
    TstrResult,
};
use crate::classifiers::{build_retrain_pool, Classifier, ClassifierConfig, RetrainPool};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lapace::{
    generate_constrained_paths, generate_paths, select_points, CeSelection, CompiledConstraints, Constraint,
    ConstraintSet, TauGrid, Variant,
};
use crate::lgmvae::{check_centroids, LgmvaeModel};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct EvaluationConfig {
    pub lof_k: usize,
    pub perturbations: usize,
    /// L-infinity radius in normalized units, continuous columns only.
    pub radius: f64,
    pub pool_size: usize,
    pub subset_fraction: f64,
    pub repeats: usize,
    /// Test rows drawn (without replacement) per repeat.
    pub test_size: usize,
    pub synthetic_constraints: usize,
    pub constraints_per_input: usize,
    pub record_runtime: bool,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            lof_k: super::DEFAULT_K,
            perturbations: 10,
            radius: 0.01,
            pool_size: 20,
            subset_fraction: 0.8,
            repeats: 5,
            test_size: 100,
            synthetic_constraints: 10,
            constraints_per_input: 5,
            record_runtime: false,
            seed: 0,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.lof_k == 0 {
            return bad("lof_k must be positive");
        }
        if self.repeats == 0 || self.test_size == 0 {
            return bad("repeats and test_size must be positive");
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return bad("radius must be finite and non-negative");
        }
        if self.constraints_per_input > self.synthetic_constraints {
            return bad("constraints_per_input exceeds synthetic_constraints");
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct VariantMetrics {
    pub validity: f64,
    pub proximity: f64,
    pub plausibility: f64,
    pub diversity: f64,
    pub model_robustness: f64,
    pub input_robustness: f64,
    pub actionability: f64,
}

impl VariantMetrics {
    fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("validity", self.validity),
            ("proximity", self.proximity),
            ("plausibility", self.plausibility),
            ("diversity", self.diversity),
            ("model_robustness", self.model_robustness),
            ("input_robustness", self.input_robustness),
            ("actionability", self.actionability),
        ]
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RepeatMetrics {
    pub repeat: usize,
    pub n_inputs: usize,
    pub variants: BTreeMap<Variant, VariantMetrics>,
    /// Any entry of the constrained paths valid and satisfying.
    pub constrained_actionability: f64,
    /// Any entry of the unconstrained paths, clamped after decoding, valid
    /// and satisfying.
    pub naive_actionability: f64,
    pub excluded_perturbations: usize,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub config: EvaluationConfig,
    pub grid_steps: usize,
    pub correction_learning_rate: f64,
    pub correction_max_iterations: usize,
    pub constraints: Vec<Constraint>,
    pub centroid_accuracy: f64,
    pub tstr: TstrResult,
    pub repeats: Vec<RepeatMetrics>,
    /// `group -> metric -> mean/std over repeats`; groups are the three
    /// variants plus `constrained` and `naive`.
    pub summary: BTreeMap<String, BTreeMap<String, Summary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

impl MetricsReport {
    pub fn mean(&self, group: &str, metric: &str) -> Option<f64> {
        self.summary.get(group)?.get(metric).map(|s| s.mean)
    }
}

fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 16);
    rng.random()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Random lower bounds, upper bounds and pairwise orderings on continuous
/// features, set from the data so that most rows already satisfy each one.
/// A draw is rejected if it would leave some class with no row meeting the
/// whole set; ordering cycles would otherwise make the set infeasible.
pub fn synthetic_constraints(schema: &crate::data::TabularSchema, data: &Dataset, n: usize, seed: u64) -> Result<Vec<Constraint>> {
    let continuous: Vec<(String, usize, (f64, f64))> = schema
        .features
        .iter()
        .filter_map(|f| schema.continuous_column(&f.name).ok().map(|(c, r)| (f.name.clone(), c, r)))
        .collect();
    if n > 0 && continuous.is_empty() {
        return Err(Error::Invalid("synthetic constraints need a continuous feature".into()));
    }
    if data.is_empty() {
        return Err(Error::Invalid("synthetic constraints need data".into()));
    }
    let raw = |(lo, hi): (f64, f64), v: f64| lo + (hi - lo) * v;
    let rows: Vec<Vec<f64>> = data.x.rows().into_iter().map(|r| r.to_vec()).collect();
    let labels = data.labels();
    let n_classes = schema.n_classes();
    let mut meets_all = vec![true; rows.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        if draws == 100 * n {
            return Err(Error::Invalid(format!(
                "could not draw {n} jointly satisfiable constraints in {draws} tries"
            )));
        }
        draws += 1;
        let kind = if continuous.len() > 1 { rng.random_range(0..3) } else { rng.random_range(0..2) };
        let candidate = if kind == 2 {
            let picked: Vec<&(String, usize, (f64, f64))> = continuous.choose_multiple(&mut rng, 2).collect();
            let (a, b) = (picked[0], picked[1]);
            let holds = rows.iter().filter(|r| raw(a.2, r[a.1]) >= raw(b.2, r[b.1])).count();
            if 2 * holds >= rows.len() {
                Constraint::greater(&a.0, &b.0)
            } else {
                Constraint::greater(&b.0, &a.0)
            }
        } else {
            let (name, col, range) = &continuous[rng.random_range(0..continuous.len())];
            let mut column: Vec<f64> = data.x.column(*col).to_vec();
            column.sort_by(f64::total_cmp);
            if kind == 0 {
                let v = quantile(&column, rng.random_range(0.05..0.2));
                Constraint::at_least(name, raw(*range, v))
            } else {
                let v = quantile(&column, rng.random_range(0.8..0.95));
                Constraint::at_most(name, raw(*range, v))
            }
        };
        let compiled = ConstraintSet {
            terms: vec![candidate.clone()],
            ..ConstraintSet::default()
        }
        .compile(schema)?;
        let next: Vec<bool> = rows
            .iter()
            .zip(&meets_all)
            .map(|(r, &ok)| ok && compiled.satisfied(r))
            .collect();
        let mut covered = vec![false; n_classes];
        for (&ok, &y) in next.iter().zip(labels) {
            covered[y] |= ok;
        }
        if covered.iter().all(|&c| c) {
            meets_all = next;
            out.push(candidate);
        }
    }
    Ok(out)
}

fn selections(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    x: &[f64],
    label: usize,
    target: usize,
    grid: &TauGrid,
) -> Result<Vec<CeSelection>> {
    generate_paths(model, classifier, x, label, target, grid)?
        .iter()
        .map(|p| select_points(model, classifier, p, target))
        .collect()
}

fn variant_set(sel: &[CeSelection], v: Variant) -> Vec<Vec<f64>> {
    sel.iter().map(|s| s.get(v).decoded.clone()).collect()
}

/// Everything measured for a single test input.
struct InputOutcome {
    x: Vec<f64>,
    target: usize,
    sets: BTreeMap<Variant, Vec<Vec<f64>>>,
    lof: BTreeMap<Variant, Vec<f64>>,
    pool_hits: BTreeMap<Variant, (usize, usize)>,
    robustness: BTreeMap<Variant, Option<f64>>,
    excluded: usize,
    constraints: CompiledConstraints,
    constrained_candidates: Vec<Vec<f64>>,
    naive_candidates: Vec<Vec<f64>>,
}

struct Context<'a> {
    model: &'a LgmvaeModel,
    classifier: &'a dyn Classifier,
    grid: &'a TauGrid,
    correction: &'a ConstraintSet,
    constraints: &'a [Constraint],
    pool: &'a RetrainPool,
    lof: &'a LofIndex,
    config: &'a EvaluationConfig,
    continuous: Vec<bool>,
}

fn evaluate_input(ctx: &Context<'_>, x: &[f64], repeat: usize, index: usize) -> Result<InputOutcome> {
    let model = ctx.model;
    let label = ctx.classifier.predict(x);
    let target = (label + 1) % model.n_labels();
    let sel = selections(model, ctx.classifier, x, label, target, ctx.grid)?;
    let mut sets = BTreeMap::new();
    let mut lof = BTreeMap::new();
    let mut pool_hits = BTreeMap::new();
    for v in Variant::ALL {
        let set = variant_set(&sel, v);
        lof.insert(v, set.iter().map(|ce| ctx.lof.score(ce)).collect::<Result<Vec<_>>>()?);
        let hits = ctx
            .pool
            .iter()
            .map(|m| set.iter().filter(|ce| m.predict(ce) == target).count())
            .sum::<usize>();
        pool_hits.insert(v, (hits, set.len() * ctx.pool.len()));
        sets.insert(v, set);
    }

    let stream = (repeat as u64) << 32 | index as u64;
    let perturbed = perturbations(
        x,
        &ctx.continuous,
        ctx.config.perturbations,
        ctx.config.radius,
        derive_seed(ctx.config.seed, 1, stream),
    );
    let mut distances: BTreeMap<Variant, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for p in &perturbed {
        if ctx.classifier.predict(p) != label {
            excluded += 1;
            continue;
        }
        let other = selections(model, ctx.classifier, p, label, target, ctx.grid)?;
        for v in Variant::ALL {
            let d = max_set_distance(&sets[&v], &variant_set(&other, v))?;
            distances.entry(v).or_default().push(d);
        }
    }
    let robustness = Variant::ALL
        .iter()
        .map(|&v| {
            let d = distances.get(&v);
            (v, d.map(|d| d.iter().sum::<f64>() / d.len() as f64))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.config.seed, 2, stream));
    let mut chosen: Vec<Constraint> = ctx.constraints.to_vec();
    chosen.shuffle(&mut rng);
    chosen.truncate(ctx.config.constraints_per_input);
    let set = ConstraintSet {
        terms: chosen,
        ..ctx.correction.clone()
    };
    let compiled = set.compile(&model.schema)?;
    let constrained = generate_constrained_paths(model, ctx.classifier, x, label, target, ctx.grid, &set)?;
    let constrained_candidates = constrained
        .iter()
        .flat_map(|p| p.entries.iter().map(|e| e.decoded.clone()))
        .collect();
    let naive_candidates = generate_paths(model, ctx.classifier, x, label, target, ctx.grid)?
        .iter()
        .flat_map(|p| p.entries.iter())
        .map(|e| {
            let mut d = e.decoded.clone();
            compiled.clamp(&mut d);
            d
        })
        .collect();
    Ok(InputOutcome {
        x: x.to_vec(),
        target,
        sets,
        lof,
        pool_hits,
        robustness,
        excluded,
        constraints: compiled,
        constrained_candidates,
        naive_candidates,
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn aggregate(outcomes: &[InputOutcome], classifier: &dyn Classifier, repeat: usize) -> Result<RepeatMetrics> {
    let mut variants = BTreeMap::new();
    for v in Variant::ALL {
        let sets: Vec<Vec<Vec<f64>>> = outcomes.iter().map(|o| o.sets[&v].clone()).collect();
        let targets: Vec<usize> = outcomes.iter().map(|o| o.target).collect();
        let inputs: Vec<Vec<f64>> = outcomes.iter().map(|o| o.x.clone()).collect();
        let (hits, total) = outcomes
            .iter()
            .map(|o| o.pool_hits[&v])
            .fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
        let cases: Vec<ActionabilityCase<'_>> = outcomes
            .iter()
            .map(|o| ActionabilityCase {
                candidates: o.sets[&v].clone(),
                constraints: &o.constraints,
                target: o.target,
            })
            .collect();
        variants.insert(
            v,
            VariantMetrics {
                validity: super::validity(&sets, &targets, classifier)?,
                proximity: super::proximity_l1(&inputs, &sets)?,
                plausibility: mean(outcomes.iter().flat_map(|o| o.lof[&v].iter().copied())),
                diversity: mean(sets.iter().map(|s| diversity(s))),
                model_robustness: hits as f64 / total.max(1) as f64,
                input_robustness: mean(outcomes.iter().filter_map(|o| o.robustness[&v])),
                actionability: actionability_rate(&cases, classifier)?,
            },
        );
    }
    let cases = |f: fn(&InputOutcome) -> &Vec<Vec<f64>>| -> Vec<ActionabilityCase<'_>> {
        outcomes
            .iter()
            .map(|o| ActionabilityCase {
                candidates: f(o).clone(),
                constraints: &o.constraints,
                target: o.target,
            })
            .collect()
    };
    Ok(RepeatMetrics {
        repeat,
        n_inputs: outcomes.len(),
        variants,
        constrained_actionability: actionability_rate(&cases(|o| &o.constrained_candidates), classifier)?,
        naive_actionability: actionability_rate(&cases(|o| &o.naive_candidates), classifier)?,
        excluded_perturbations: outcomes.iter().map(|o| o.excluded).sum(),
    })
}

/// Runs the full metric suite. `train` is the classifier's training split
/// (plausibility reference, retrain pool, synthetic constraints) and must
/// carry the classifier's predictions; `test` supplies the inputs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    classifier_config: &ClassifierConfig,
    train: &Dataset,
    test: &Dataset,
    grid: &TauGrid,
    correction: &ConstraintSet,
    config: &EvaluationConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    correction.validate()?;
    let started = Instant::now();
    let check = check_centroids(model, classifier)?;
    if !model.recourse_ready || !check.passed() {
        return Err(Error::NotRecourseReady(format!("failing centroids {:?}", check.failing)));
    }
    let n_classes = model.n_labels();
    let pool = build_retrain_pool(
        train,
        n_classes,
        classifier_config,
        config.pool_size,
        config.subset_fraction,
        derive_seed(config.seed, 3, 0),
    )?;
    let lof = LofIndex::new(&train.x, config.lof_k)?;
    let constraints = synthetic_constraints(&model.schema, train, config.synthetic_constraints, derive_seed(config.seed, 4, 0))?;
    let tstr = tstr_utility(model, train, test, classifier_config, derive_seed(config.seed, 5, 0))?;
    let ctx = Context {
        model,
        classifier,
        grid,
        correction,
        constraints: &constraints,
        pool: &pool,
        lof: &lof,
        config,
        continuous: model.schema.categorical_columns().iter().map(|c| !c).collect(),
    };

    let mut repeats = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let mut idx: Vec<usize> = (0..test.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 6, r as u64)));
        idx.truncate(config.test_size);
        let outcomes = idx
            .par_iter()
            .enumerate()
            .map(|(i, &row)| evaluate_input(&ctx, &test.row(row), r, i))
            .collect::<Result<Vec<_>>>()?;
        repeats.push(aggregate(&outcomes, classifier, r)?);
    }

    let mut summary: BTreeMap<String, BTreeMap<String, Summary>> = BTreeMap::new();
    for v in Variant::ALL {
        let group = summary.entry(v.name().to_string()).or_default();
        for (k, (name, _)) in repeats[0].variants[&v].fields().iter().enumerate() {
            let values: Vec<f64> = repeats.iter().map(|r| r.variants[&v].fields()[k].1).collect();
            group.insert(name.to_string(), Summary::of(&values));
        }
    }
    for (group, f) in [
        ("constrained", (|r: &RepeatMetrics| r.constrained_actionability) as fn(&RepeatMetrics) -> f64),
        ("naive", |r: &RepeatMetrics| r.naive_actionability),
    ] {
        let values: Vec<f64> = repeats.iter().map(f).collect();
        summary
            .entry(group.to_string())
            .or_default()
            .insert("actionability".to_string(), Summary::of(&values));
    }

    Ok(MetricsReport {
        config: config.clone(),
        grid_steps: grid.len(),
        correction_learning_rate: correction.learning_rate,
        correction_max_iterations: correction.max_iterations,
        constraints,
        centroid_accuracy: check.accuracy(),
        tstr,
        repeats,
        summary,
        runtime_seconds: config.record_runtime.then(|| started.elapsed().as_secs_f64()),
    })
}
