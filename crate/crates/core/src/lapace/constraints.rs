use serde::{Deserialize, Serialize};

use crate::data::TabularSchema;
use crate::diffmath::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Aggregate violations at or below this count as satisfied.
pub const SATISFIED_TOLERANCE: f64 = 1e-9;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Greater,
}

/// One actionability requirement, stated in raw feature units.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum Constraint {
    /// `min <= feature <= max`; either bound may be absent.
    Box {
        feature: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    /// `feature_a >= feature_b`.
    Pair {
        feature_a: String,
        feature_b: String,
        relation: Relation,
    },
}

impl Constraint {
    pub fn at_least(feature: &str, min: f64) -> Self {
        Constraint::Box {
            feature: feature.into(),
            min: Some(min),
            max: None,
        }
    }

    pub fn at_most(feature: &str, max: f64) -> Self {
        Constraint::Box {
            feature: feature.into(),
            min: None,
            max: Some(max),
        }
    }

    pub fn greater(a: &str, b: &str) -> Self {
        Constraint::Pair {
            feature_a: a.into(),
            feature_b: b.into(),
            relation: Relation::Greater,
        }
    }

    /// True unless the constraint contradicts itself.
    pub fn is_feasible(&self) -> bool {
        match self {
            Constraint::Box {
                min: Some(lo),
                max: Some(hi),
                ..
            } => lo <= hi,
            _ => true,
        }
    }
}

/// Constraint terms plus the settings of the latent correction loop.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct ConstraintSet {
    pub terms: Vec<Constraint>,
    pub learning_rate: f64,
    pub max_iterations: usize,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            terms: Vec::new(),
            learning_rate: 0.05,
            max_iterations: 50,
        }
    }
}

impl ConstraintSet {
    pub fn new(terms: Vec<Constraint>) -> Self {
        Self {
            terms,
            ..Default::default()
        }
    }

    /// Reads a JSON list of terms.
    pub fn load_terms(path: &std::path::Path) -> Result<Vec<Constraint>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn compile(&self, schema: &TabularSchema) -> Result<CompiledConstraints> {
        CompiledConstraints::new(&self.terms, schema)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("correction learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Every term lowered to an affine function `g_k(x) = x . w_k + b_k` of the
/// encoded point; the aggregate is `sum_k max(0, g_k(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledConstraints {
    /// `d x m`
    weights: Matrix,
    /// `1 x m`
    offsets: Matrix,
    /// Per-term clamp actions for post-hoc repair.
    repairs: Vec<Repair>,
}

#[derive(Clone, Debug, PartialEq)]
enum Repair {
    Lower { col: usize, value: f64 },
    Upper { col: usize, value: f64 },
    /// Lower column `b` to where `a` sits in raw units.
    Pair { a: usize, b: usize, lo_a: f64, span_a: f64, lo_b: f64, span_b: f64 },
}

fn span(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

impl CompiledConstraints {
    pub fn new(terms: &[Constraint], schema: &TabularSchema) -> Result<Self> {
        let d = schema.encoded_width();
        let mut columns: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut repairs = Vec::new();
        for term in terms {
            match term {
                Constraint::Box { feature, min, max } => {
                    let (col, (lo, hi)) = schema.continuous_column(feature)?;
                    let s = span(lo, hi);
                    if let Some(m) = min {
                        let v = (m - lo) / s;
                        columns.push((vec![(col, -1.0)], v));
                        repairs.push(Repair::Lower { col, value: v });
                    }
                    if let Some(m) = max {
                        let v = (m - lo) / s;
                        columns.push((vec![(col, 1.0)], -v));
                        repairs.push(Repair::Upper { col, value: v });
                    }
                    if min.is_none() && max.is_none() {
                        return Err(Error::Schema(format!("box constraint on {feature:?} has no bound")));
                    }
                }
                Constraint::Pair {
                    feature_a, feature_b, ..
                } => {
                    if feature_a == feature_b {
                        return Err(Error::Schema(format!("pair constraint compares {feature_a:?} with itself")));
                    }
                    let (a, (lo_a, hi_a)) = schema.continuous_column(feature_a)?;
                    let (b, (lo_b, hi_b)) = schema.continuous_column(feature_b)?;
                    let (span_a, span_b) = (span(lo_a, hi_a), span(lo_b, hi_b));
                    // raw_b - raw_a, divided by the wider range
                    let s = span_a.max(span_b);
                    columns.push((vec![(a, -span_a / s), (b, span_b / s)], (lo_b - lo_a) / s));
                    repairs.push(Repair::Pair {
                        a,
                        b,
                        lo_a,
                        span_a,
                        lo_b,
                        span_b,
                    });
                }
            }
        }
        let m = columns.len();
        let mut weights = Matrix::zeros((d, m));
        let mut offsets = Matrix::zeros((1, m));
        for (k, (entries, offset)) in columns.into_iter().enumerate() {
            for (col, w) in entries {
                weights[[col, k]] += w;
            }
            offsets[[0, k]] = offset;
        }
        Ok(Self {
            weights,
            offsets,
            repairs,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.weights.ncols() == 0
    }

    pub fn n_terms(&self) -> usize {
        self.weights.ncols()
    }

    /// Individual `g_k(x)` values.
    pub fn terms(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.ncols())
            .map(|k| {
                x.iter()
                    .zip(self.weights.column(k))
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
                    + self.offsets[[0, k]]
            })
            .collect()
    }

    /// `sum_k max(0, g_k(x))`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.terms(x).into_iter().map(|g| g.max(0.0)).sum()
    }

    pub fn satisfied(&self, x: &[f64]) -> bool {
        self.violation(x) <= SATISFIED_TOLERANCE
    }

    /// Records the aggregate violation of a `1 x d` decoded row.
    pub fn graph_violation(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.constant(self.weights.clone());
        let b = g.constant(self.offsets.clone());
        let lin = g.matmul(x, w)?;
        let shifted = g.add_row(lin, b)?;
        let hinge = g.relu(shifted)?;
        g.sum(hinge)
    }

    /// Post-hoc repair: clamps each term in order, without regard to the
    /// terms already handled.
    pub fn clamp(&self, x: &mut [f64]) {
        for r in &self.repairs {
            match *r {
                Repair::Lower { col, value } => x[col] = x[col].max(value),
                Repair::Upper { col, value } => x[col] = x[col].min(value),
                Repair::Pair {
                    a,
                    b,
                    lo_a,
                    span_a,
                    lo_b,
                    span_b,
                } => {
                    let raw_a = lo_a + span_a * x[a];
                    let raw_b = lo_b + span_b * x[b];
                    if raw_b > raw_a {
                        x[b] = (raw_a - lo_b) / span_b;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Feature, FeatureKind, LabelSpec};

    fn schema() -> TabularSchema {
        let mut f = vec![
            Feature::continuous("a"),
            Feature::categorical("c", &["u", "v"]),
            Feature::continuous("b"),
        ];
        f[0].kind = FeatureKind::Continuous { range: Some((0.0, 10.0)) };
        f[2].kind = FeatureKind::Continuous {
            range: Some((-1.0, 1.0)),
        };
        TabularSchema::new(
            f,
            LabelSpec {
                name: "y".into(),
                classes: vec!["n".into(), "p".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn box_terms_in_normalized_units() {
        let c = CompiledConstraints::new(&[Constraint::at_least("a", 2.0), Constraint::at_most("b", 0.0)], &schema()).unwrap();
        // a = 5 raw -> 0.5, b = 0.5 raw -> 0.75
        let x = [0.5, 1.0, 0.0, 0.75];
        let t = c.terms(&x);
        assert!((t[0] - -0.3).abs() < 1e-12);
        assert!((t[1] - 0.25).abs() < 1e-12);
        assert!((c.violation(&x) - 0.25).abs() < 1e-12);
        assert!(!c.satisfied(&x));
        assert!(c.satisfied(&[0.5, 1.0, 0.0, 0.5]));
    }

    #[test]
    fn hinge_keeps_satisfied_terms_from_cancelling() {
        let c = CompiledConstraints::new(&[Constraint::at_least("a", 2.0), Constraint::at_least("b", 0.0)], &schema()).unwrap();
        // a well above its bound, b below its bound
        let x = [1.0, 0.0, 1.0, 0.25];
        assert!(c.terms(&x).iter().sum::<f64>() < 0.0);
        assert!((c.violation(&x) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pair_term_uses_raw_units() {
        let c = CompiledConstraints::new(&[Constraint::greater("b", "a")], &schema()).unwrap();
        // b raw = 0.9, a raw = 0.5 -> satisfied; a raw = 2 -> violated by 1.1 / 10
        assert!(c.satisfied(&[0.05, 0.0, 0.0, 0.95]));
        let v = c.violation(&[0.2, 0.0, 0.0, 0.95]);
        assert!((v - 0.11).abs() < 1e-12, "{v}");
        let mut x = [0.2, 0.0, 0.0, 0.95];
        CompiledConstraints::new(&[Constraint::greater("a", "b")], &schema())
            .unwrap()
            .clamp(&mut x);
        assert_eq!(x[3], 0.95);
        let mut x = [0.2, 0.0, 0.0, 0.95];
        c.clamp(&mut x);
        assert!(c.satisfied(&x));
    }

    #[test]
    fn graph_matches_plain_evaluation() {
        let c = CompiledConstraints::new(
            &[
                Constraint::at_least("a", 3.0),
                Constraint::at_most("a", 4.0),
                Constraint::greater("b", "a"),
            ],
            &schema(),
        )
        .unwrap();
        for x in [[0.1, 0.0, 1.0, 0.3], [0.35, 1.0, 0.0, 0.9], [0.9, 0.5, 0.5, 0.0]] {
            let mut g = Graph::new();
            let v = g.constant(Matrix::from_shape_vec((1, 4), x.to_vec()).unwrap());
            let out = c.graph_violation(&mut g, v).unwrap();
            assert!((g.scalar(out) - c.violation(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_shapes() {
        let terms: Vec<Constraint> = serde_json::from_str(
            r#"[{"feature": "a", "min": 0.2}, {"feature_a": "a", "feature_b": "b", "relation": "greater"}]"#,
        )
        .unwrap();
        assert_eq!(terms[0], Constraint::at_least("a", 0.2));
        assert_eq!(terms[1], Constraint::greater("a", "b"));
        assert_eq!(serde_json::to_string(&terms[0]).unwrap(), r#"{"feature":"a","min":0.2}"#);
        assert!(serde_json::from_str::<Constraint>(r#"{"feature_a": "a", "feature_b": "b", "relation": "less"}"#).is_err());
    }

    #[test]
    fn schema_violations() {
        let s = schema();
        assert!(CompiledConstraints::new(&[Constraint::at_least("zz", 1.0)], &s).is_err());
        assert!(CompiledConstraints::new(&[Constraint::at_least("c", 1.0)], &s).is_err());
        assert!(CompiledConstraints::new(&[Constraint::greater("a", "a")], &s).is_err());
        let empty_box = Constraint::Box {
            feature: "a".into(),
            min: None,
            max: None,
        };
        assert!(CompiledConstraints::new(&[empty_box], &s).is_err());
        let infeasible = Constraint::Box {
            feature: "a".into(),
            min: Some(5.0),
            max: Some(1.0),
        };
        assert!(!infeasible.is_feasible());
        let c = CompiledConstraints::new(&[infeasible], &s).unwrap();
        assert!((0..=10).all(|i| !c.satisfied(&[i as f64 / 10.0, 0.0, 1.0, 0.5])));
    }
}
