//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every value in a [`Graph`] is a 2-D `f64` matrix (batch rows by feature
//! columns; scalars are `1 x 1`). Operations append nodes to the tape and
//! return a [`Var`] handle. Because a node can only reference nodes created
//! before it, walking the tape backwards from the loss is a valid reverse
//! topological order.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize, usize),
    SelectCols(Var, Vec<usize>),
    Concat(Vec<Var>),
    MaskedSoftmax(Var, Matrix),
    MaskedLogSoftmax(Var, Matrix),
    GaussianKl {
        mu: Var,
        logvar: Var,
        prior_mu: Var,
        prior_logvar: Var,
    },
    ReconLoss {
        output: Var,
        target: Matrix,
        categorical: Vec<bool>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// The tape: an append-only list of primitive operations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[var.0]),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.dim()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn masked_softmax_rows(x: &Matrix, mask: &Matrix) -> (Matrix, Matrix) {
    let mut probs = Matrix::zeros(x.dim());
    let mut logp = Matrix::zeros(x.dim());
    for (r, (xr, mr)) in x.rows().into_iter().zip(mask.rows()).enumerate() {
        let max = xr
            .iter()
            .zip(mr.iter())
            .filter(|(_, &m)| m > 0.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (c, (&v, &m)) in xr.iter().zip(mr.iter()).enumerate() {
            if m > 0.0 {
                let e = (v - max).exp();
                probs[[r, c]] = e;
                total += e;
            }
        }
        let lse = max + total.ln();
        for (c, (&v, &m)) in xr.iter().zip(mr.iter()).enumerate() {
            if m > 0.0 {
                probs[[r, c]] /= total;
                logp[[r, c]] = v - lse;
            }
        }
    }
    (probs, logp)
}

/// Row-wise softmax with no masking.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    masked_softmax_rows(x, &Matrix::ones(x.dim())).0
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("unknown node {}", var.0)));
        }
        Ok(())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).mapv(f);
        let rg = self.rg(&[a]);
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let value = va.dot(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x m` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check(a)?;
        self.check(row)?;
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                va.dim(),
                vr.dim()
            )));
        }
        let value = va + vr;
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, factor), |v| v * factor)
    }

    pub fn shift(&mut self, a: Var, offset: f64) -> Result<Var> {
        self.unary(a, Op::Shift(a), |v| v + offset)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Shape("mean of empty matrix".into()));
        }
        let value = Matrix::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if start > end || end > v.ncols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {} columns",
                v.ncols()
            )));
        }
        let value = v.slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start, end), rg))
    }

    /// Gathers the listed columns (repeats allowed).
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if let Some(&bad) = cols.iter().find(|&&c| c >= v.ncols()) {
            return Err(Error::Shape(format!(
                "select_cols: column {bad} of {}",
                v.ncols()
            )));
        }
        let value = v.select(Axis(1), cols);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SelectCols(a, cols.to_vec()), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("concat: {e}")))?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Row-wise softmax restricted to entries where `mask > 0`; masked
    /// entries get exactly zero probability.
    pub fn masked_softmax(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        self.check_mask(a, &mask)?;
        let (probs, _) = masked_softmax_rows(self.value(a), &mask);
        let rg = self.rg(&[a]);
        Ok(self.push(probs, Op::MaskedSoftmax(a, mask), rg))
    }

    /// Log of [`Graph::masked_softmax`]; masked entries hold 0.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        self.check_mask(a, &mask)?;
        let (_, logp) = masked_softmax_rows(self.value(a), &mask);
        let rg = self.rg(&[a]);
        Ok(self.push(logp, Op::MaskedLogSoftmax(a, mask), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let mask = Matrix::ones(self.value(a).dim());
        self.masked_softmax(a, mask)
    }

    fn check_mask(&self, a: Var, mask: &Matrix) -> Result<()> {
        self.check(a)?;
        if self.value(a).dim() != mask.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} for {:?}",
                mask.dim(),
                self.value(a).dim()
            )));
        }
        if mask.rows().into_iter().any(|r| r.iter().all(|&m| m <= 0.0)) {
            return Err(Error::Invalid("mask row with no allowed entry".into()));
        }
        Ok(())
    }

    /// `n x K` matrix of closed-form `KL(N(mu_b, exp(logvar_b)) || N(pm_c, exp(plv_c)))`
    /// for every row `b` of the posterior and every row `c` of the prior table.
    pub fn gaussian_kl(
        &mut self,
        mu: Var,
        logvar: Var,
        prior_mu: Var,
        prior_logvar: Var,
    ) -> Result<Var> {
        self.same_shape(mu, logvar, "gaussian_kl posterior")?;
        self.same_shape(prior_mu, prior_logvar, "gaussian_kl prior")?;
        let (m, lv, pm, plv) = (
            self.value(mu),
            self.value(logvar),
            self.value(prior_mu),
            self.value(prior_logvar),
        );
        if m.ncols() != pm.ncols() {
            return Err(Error::Shape(format!(
                "gaussian_kl latent width {} vs prior {}",
                m.ncols(),
                pm.ncols()
            )));
        }
        let mut value = Matrix::zeros((m.nrows(), pm.nrows()));
        for b in 0..m.nrows() {
            for c in 0..pm.nrows() {
                let mut kl = 0.0;
                for j in 0..m.ncols() {
                    let d = m[[b, j]] - pm[[c, j]];
                    kl += plv[[c, j]] - lv[[b, j]] + (lv[[b, j]].exp() + d * d) * (-plv[[c, j]]).exp()
                        - 1.0;
                }
                value[[b, c]] = 0.5 * kl;
            }
        }
        let rg = self.rg(&[mu, logvar, prior_mu, prior_logvar]);
        Ok(self.push(
            value,
            Op::GaussianKl {
                mu,
                logvar,
                prior_mu,
                prior_logvar,
            },
            rg,
        ))
    }

    /// Mean over rows of the per-row reconstruction loss: squared error on
    /// continuous columns plus binary cross-entropy with logits on columns
    /// flagged categorical.
    pub fn recon_loss(&mut self, output: Var, target: Matrix, categorical: Vec<bool>) -> Result<Var> {
        self.check(output)?;
        let o = self.value(output);
        if o.dim() != target.dim() || categorical.len() != o.ncols() {
            return Err(Error::Shape(format!(
                "recon_loss: output {:?}, target {:?}, {} column kinds",
                o.dim(),
                target.dim(),
                categorical.len()
            )));
        }
        if o.nrows() == 0 {
            return Err(Error::Shape("recon_loss on empty batch".into()));
        }
        let mut total = 0.0;
        for ((r, c), &ov) in o.indexed_iter() {
            let t = target[[r, c]];
            total += if categorical[c] {
                softplus(ov) - t * ov
            } else {
                (ov - t) * (ov - t)
            };
        }
        let value = Matrix::from_elem((1, 1), total / o.nrows() as f64);
        let rg = self.rg(&[output]);
        Ok(self.push(
            value,
            Op::ReconLoss {
                output,
                target,
                categorical,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let l = self.value(logits);
        if l.nrows() != labels.len() || l.nrows() == 0 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} rows, {} labels",
                l.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= l.ncols()) {
            return Err(Error::Shape(format!("label {bad} >= {} classes", l.ncols())));
        }
        let (_, logp) = masked_softmax_rows(l, &Matrix::ones(l.dim()));
        let nll: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| -logp[[r, y]])
            .sum();
        let value = Matrix::from_elem((1, 1), nll / labels.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Graph(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], from: usize, to: Var, delta: Matrix) -> Result<()> {
        if to.0 >= from {
            return Err(Error::Graph(format!(
                "node {from} references later node {}",
                to.0
            )));
        }
        if !self.nodes[to.0].requires_grad {
            return Ok(());
        }
        match &mut grads[to.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, idx, *a, g.dot(&vb.t()))?;
                self.accumulate(grads, idx, *b, va.t().dot(g))?;
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, idx, *a, g.clone())?;
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, idx, *row, summed)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, idx, *a, g.clone())?;
                self.accumulate(grads, idx, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, idx, *a, g.clone())?;
                self.accumulate(grads, idx, *b, -g)?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, idx, *a, g * vb)?;
                self.accumulate(grads, idx, *b, g * va)?;
            }
            Op::Scale(a, f) => self.accumulate(grads, idx, *a, g * *f)?,
            Op::Shift(a) => self.accumulate(grads, idx, *a, g.clone())?,
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::Exp(a) => self.accumulate(grads, idx, *a, g * out)?,
            Op::Square(a) => self.accumulate(grads, idx, *a, g * self.value(*a) * 2.0)?,
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::Sum(a) => {
                let d = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let d = Matrix::from_elem(v.dim(), g[[0, 0]] / v.len() as f64);
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::SelectCols(a, cols) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                for (k, &c) in cols.iter().enumerate() {
                    let mut col = d.column_mut(c);
                    col += &g.column(k);
                }
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    let d = g.slice(s![.., offset..offset + w]).to_owned();
                    self.accumulate(grads, idx, *p, d)?;
                    offset += w;
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let mut d = Matrix::zeros(out.dim());
                for r in 0..out.nrows() {
                    let dot: f64 = (0..out.ncols()).map(|c| out[[r, c]] * g[[r, c]]).sum();
                    for c in 0..out.ncols() {
                        if mask[[r, c]] > 0.0 {
                            d[[r, c]] = out[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                }
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let (probs, _) = masked_softmax_rows(self.value(*a), mask);
                let mut d = Matrix::zeros(out.dim());
                for r in 0..out.nrows() {
                    let gsum: f64 = (0..out.ncols())
                        .filter(|&c| mask[[r, c]] > 0.0)
                        .map(|c| g[[r, c]])
                        .sum();
                    for c in 0..out.ncols() {
                        if mask[[r, c]] > 0.0 {
                            d[[r, c]] = g[[r, c]] - probs[[r, c]] * gsum;
                        }
                    }
                }
                self.accumulate(grads, idx, *a, d)?;
            }
            Op::GaussianKl {
                mu,
                logvar,
                prior_mu,
                prior_logvar,
            } => {
                let (m, lv, pm, plv) = (
                    self.value(*mu),
                    self.value(*logvar),
                    self.value(*prior_mu),
                    self.value(*prior_logvar),
                );
                let mut dm = Matrix::zeros(m.dim());
                let mut dlv = Matrix::zeros(lv.dim());
                let mut dpm = Matrix::zeros(pm.dim());
                let mut dplv = Matrix::zeros(plv.dim());
                for b in 0..m.nrows() {
                    for c in 0..pm.nrows() {
                        let gbc = g[[b, c]];
                        if gbc == 0.0 {
                            continue;
                        }
                        for j in 0..m.ncols() {
                            let inv = (-plv[[c, j]]).exp();
                            let d = m[[b, j]] - pm[[c, j]];
                            let var = lv[[b, j]].exp();
                            dm[[b, j]] += gbc * d * inv;
                            dpm[[c, j]] -= gbc * d * inv;
                            dlv[[b, j]] += gbc * 0.5 * (var * inv - 1.0);
                            dplv[[c, j]] += gbc * 0.5 * (1.0 - (var + d * d) * inv);
                        }
                    }
                }
                self.accumulate(grads, idx, *mu, dm)?;
                self.accumulate(grads, idx, *logvar, dlv)?;
                self.accumulate(grads, idx, *prior_mu, dpm)?;
                self.accumulate(grads, idx, *prior_logvar, dplv)?;
            }
            Op::ReconLoss {
                output,
                target,
                categorical,
            } => {
                let o = self.value(*output);
                let scale = g[[0, 0]] / o.nrows() as f64;
                let mut d = Matrix::zeros(o.dim());
                for ((r, c), &ov) in o.indexed_iter() {
                    let t = target[[r, c]];
                    d[[r, c]] = scale
                        * if categorical[c] {
                            sigmoid(ov) - t
                        } else {
                            2.0 * (ov - t)
                        };
                }
                self.accumulate(grads, idx, *output, d)?;
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let l = self.value(*logits);
                let mut d = softmax_rows(l);
                for (r, &y) in labels.iter().enumerate() {
                    d[[r, y]] -= 1.0;
                }
                d *= g[[0, 0]] / labels.len() as f64;
                self.accumulate(grads, idx, *logits, d)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(array![[3.0]]);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x)[[0, 0]], 6.0);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(array![[2.0, 1.0]]);
        let p = g.param(array![[5.0, -1.0]]);
        let y = g.square(x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(p).is_none());
        assert_eq!(grads.wrt(p), array![[0.0, 0.0]]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 2.0]]);
        assert!(matches!(g.backward(x), Err(Error::Graph(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.param(array![[1.0, 2.0]]);
        let b = g.param(array![[1.0, 2.0, 3.0]]);
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(g.matmul(a, a), Err(Error::Shape(_))));
    }

    #[test]
    fn masked_softmax_zeroes_outside_mask() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 5.0, 2.0, 9.0]]);
        let p = g.masked_softmax(x, array![[1.0, 0.0, 1.0, 0.0]]).unwrap();
        let v = g.value(p);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[0, 3]], 0.0);
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        let mut g = Graph::new();
        let x = g.param(array![[1.5]]);
        let a = g.scale(x, 3.0).unwrap();
        let b = g.add(a, x).unwrap();
        let grads = g.backward(b).unwrap();
        assert_eq!(grads.wrt(x)[[0, 0]], 4.0);
    }
}
