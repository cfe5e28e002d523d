//! End-to-end steps shared by the command line and the service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::artifact::{ClassifierArtifact, LgmvaeArtifact};
use crate::classifiers::{accuracy, Classifier};
use crate::config::{DataConfig, RunConfig};
use crate::data::{
    read_csv, reference_blob_config, relabel_with_classifier, split_indices, Dataset, RawTable, RawValue, SplitSpec,
    TabularSchema,
};
use crate::error::{Error, Result};
use crate::lapace::{generate_constrained_paths, generate_paths, select_points, ConstraintSet, TauGrid, Variant};
use crate::lgmvae::{train, validate_centroids, LgmvaeModel};
use crate::metrics::{evaluate as run_metrics, MetricsReport};

/// Encoded train and test splits plus the schema fitted on the train rows.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub schema: TabularSchema,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_table(cfg: &RunConfig) -> Result<(TabularSchema, RawTable)> {
    match &cfg.data {
        DataConfig::Blobs { rows_per_class } => {
            let mut blobs = reference_blob_config(cfg.seed);
            blobs.n_per_class = *rows_per_class;
            let s = blobs.generate()?;
            Ok((s.schema, s.table))
        }
        DataConfig::Csv { csv, schema } => {
            let schema = TabularSchema::load(schema)?;
            let table = read_csv(csv, &schema)?;
            Ok((schema, table))
        }
    }
}

/// Splits the table and fits normalization on the train rows, unless the
/// schema already carries ranges.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let (mut schema, table) = load_table(cfg)?;
    let f = cfg.split.test_fraction;
    let parts = split_indices(table.len(), &SplitSpec::new(&[1.0 - f, f], cfg.seed))?;
    let train_raw = table.subset(&parts[0]);
    if !schema.is_fitted() {
        schema.fit_normalization(&train_raw)?;
    }
    Ok(PreparedData {
        train: schema.encode_table(&train_raw)?,
        test: schema.encode_table(&table.subset(&parts[1]))?,
        schema,
    })
}

pub fn train_classifier(cfg: &RunConfig, data: &PreparedData) -> Result<ClassifierArtifact> {
    let n = data.schema.n_classes();
    let classifier = cfg.classifier.train(&data.train, n)?;
    Ok(ClassifierArtifact {
        train_accuracy: accuracy(&classifier, &data.train.x, &data.train.y_true),
        test_accuracy: accuracy(&classifier, &data.test.x, &data.test.y_true),
        schema: data.schema.clone(),
        config: cfg.classifier.clone(),
        classifier,
    })
}

/// Errors unless both artifacts were built for the same schema.
pub fn same_schema(a: &TabularSchema, b: &TabularSchema) -> Result<()> {
    if a != b {
        return Err(Error::Schema("artifacts were built for different schemas".into()));
    }
    Ok(())
}

/// Relabels the train split with the classifier, trains the L-GMVAE, and
/// validates its centroids. The artifact is returned either way; check
/// `model.recourse_ready`.
pub fn train_lgmvae(cfg: &RunConfig, data: &PreparedData, clf: &ClassifierArtifact) -> Result<LgmvaeArtifact> {
    same_schema(&clf.schema, &data.schema)?;
    let relabelled = relabel_with_classifier(&data.train, &clf.classifier)?;
    let (mut model, training) = train(&relabelled, &data.schema, &cfg.lgmvae)?;
    let centroid_check = validate_centroids(&mut model, &clf.classifier)?;
    Ok(LgmvaeArtifact {
        model,
        training,
        centroid_check,
    })
}

/// A metrics report with the configuration that produced it.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub classifier_test_accuracy: f64,
    pub metrics: MetricsReport,
}

pub fn evaluate(
    cfg: &RunConfig,
    data: &PreparedData,
    clf: &ClassifierArtifact,
    model: &LgmvaeModel,
) -> Result<RunReport> {
    same_schema(&clf.schema, &model.schema)?;
    same_schema(&clf.schema, &data.schema)?;
    let train = relabel_with_classifier(&data.train, &clf.classifier)?;
    let correction = ConstraintSet {
        terms: Vec::new(),
        learning_rate: cfg.lapace.learning_rate,
        max_iterations: cfg.lapace.max_iterations,
    };
    let metrics = run_metrics(
        model,
        &clf.classifier,
        &clf.config,
        &train,
        &data.test,
        &cfg.lapace.grid()?,
        &correction,
        &cfg.evaluation,
    )?;
    Ok(RunReport {
        config: cfg.clone(),
        classifier_test_accuracy: clf.test_accuracy,
        metrics,
    })
}

/// Feature values in raw units, keyed by feature name.
pub type RawPoint = BTreeMap<String, RawValue>;

pub fn raw_point(schema: &TabularSchema, encoded: &[f64]) -> Result<RawPoint> {
    Ok(schema
        .features
        .iter()
        .map(|f| f.name.clone())
        .zip(schema.decode_row(encoded)?)
        .collect())
}

/// Encodes a raw-unit point; every schema feature must be present.
pub fn encode_point(schema: &TabularSchema, point: &RawPoint) -> Result<Vec<f64>> {
    if let Some(extra) = point.keys().find(|k| schema.feature_index(k).is_err()) {
        return Err(Error::Schema(format!("unknown feature {extra:?}")));
    }
    let row = schema
        .features
        .iter()
        .map(|f| {
            point
                .get(&f.name)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("missing feature {:?}", f.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    schema.encode_row(&row)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Entry,
    First,
    Middle,
    Last,
}

/// One line of `generate` output.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub input: usize,
    pub cluster: usize,
    pub kind: RecordKind,
    pub tau: f64,
    pub features: RawPoint,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrections: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub satisfied: Option<bool>,
}

/// Paths for each row of `inputs`. The target defaults to the label after
/// the predicted one. Without `constraints` the paths are unconstrained.
pub fn generate(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    inputs: &RawTable,
    target: Option<usize>,
    grid: &TauGrid,
    constraints: Option<&ConstraintSet>,
) -> Result<Vec<PathRecord>> {
    let schema = &model.schema;
    let class = |y: usize| schema.label.classes[y].clone();
    let mut out = Vec::new();
    for (i, row) in inputs.rows.iter().enumerate() {
        let x = schema.encode_row(row)?;
        let label = classifier.predict(&x);
        let target = target.unwrap_or((label + 1) % model.n_labels());
        let paths = match constraints {
            Some(c) => generate_constrained_paths(model, classifier, &x, label, target, grid, c)?,
            None => generate_paths(model, classifier, &x, label, target, grid)?,
        };
        for path in &paths {
            for e in &path.entries {
                out.push(PathRecord {
                    input: i,
                    cluster: path.cluster,
                    kind: RecordKind::Entry,
                    tau: e.tau,
                    features: raw_point(schema, &e.decoded)?,
                    label: class(e.label),
                    corrections: Some(e.corrections),
                    satisfied: Some(e.satisfied),
                });
            }
            // A constrained path can lose the flip entirely; its entries are
            // still reported, with the final one flagged.
            let sel = match select_points(model, classifier, path, target) {
                Err(Error::NoFlip { .. }) if constraints.is_some() => continue,
                other => other?,
            };
            for (kind, v) in [
                (RecordKind::First, Variant::First),
                (RecordKind::Middle, Variant::Middle),
                (RecordKind::Last, Variant::Last),
            ] {
                let p = sel.get(v);
                out.push(PathRecord {
                    input: i,
                    cluster: path.cluster,
                    kind,
                    tau: p.tau,
                    features: raw_point(schema, &p.decoded)?,
                    label: class(p.label),
                    corrections: None,
                    satisfied: None,
                });
            }
        }
    }
    Ok(out)
}

/// JSON lines, one record per line.
pub fn to_jsonl(records: &[PathRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}
