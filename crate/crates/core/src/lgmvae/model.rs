use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::partition::ClusterPartition;
use super::LgmvaeConfig;
use crate::data::{Dataset, TabularSchema};
use crate::diffmath::{Activation, Graph, Matrix, Mlp, Var, LOGVAR_CLAMP};
use crate::error::{Error, Result};

/// Weights of the three ELBO terms in the training loss.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cluster_kl: f64,
    pub latent_kl: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cluster_kl: 0.1,
            latent_kl: 0.1,
            reconstruction: 1.0,
        }
    }
}

/// Per-batch means of the three ELBO terms.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub kl_c: f64,
    pub kl_z: f64,
    pub recon: f64,
}

impl ElboTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.cluster_kl * self.kl_c + w.latent_kl * self.kl_z + w.reconstruction * self.recon
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Linear continuous columns, sigmoid on one-hot columns.
    Training,
    /// As training, then one-hot columns rounded and repaired to one-hot.
    Inference,
}

/// A decoded mixture component of some label.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Centroid {
    pub cluster: usize,
    pub latent: Vec<f64>,
    pub decoded: Vec<f64>,
}

/// The label-conditional Gaussian mixture VAE.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LgmvaeModel {
    pub schema: TabularSchema,
    pub partition: ClusterPartition,
    pub latent_dim: usize,
    /// `q(c|x,y)`: `[x, onehot(y)] -> cluster logits`
    pub cluster_head: Mlp,
    /// `q(z|x,c,y)`: `[x, onehot(y), q(c|x,y)] -> [mean, logvar]`
    pub latent_head: Mlp,
    /// `p(x|z)`: latent -> encoded-width output (pre-activation)
    pub decoder: Mlp,
    /// `K x h` component means.
    pub prior_mean: Matrix,
    /// `K x h` component log-variances (clamped when used).
    pub prior_logvar: Matrix,
    pub loss_weights: LossWeights,
    pub config: LgmvaeConfig,
    pub recourse_ready: bool,
}

/// Tape handles for every parameter group.
pub(crate) struct ModelVars {
    cluster: Vec<Var>,
    latent: Vec<Var>,
    decoder: Vec<Var>,
    prior_mean: Var,
    prior_logvar: Var,
}

impl ModelVars {
    pub(crate) fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        v.extend(&self.cluster);
        v.extend(&self.latent);
        v.extend(&self.decoder);
        v.push(self.prior_mean);
        v.push(self.prior_logvar);
        v
    }
}

pub(crate) struct ElboVars {
    pub kl_c: Var,
    pub kl_z: Var,
    pub recon: Var,
    pub loss: Var,
}

pub(crate) fn one_hot(labels: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros((labels.len(), n));
    for (r, &y) in labels.iter().enumerate() {
        m[[r, y]] = 1.0;
    }
    m
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

impl LgmvaeModel {
    /// Freshly initialized model for `schema`.
    pub fn new(schema: TabularSchema, config: &LgmvaeConfig) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let n_labels = schema.n_classes();
        let partition = ClusterPartition::uniform(n_labels, config.clusters_per_class)?;
        let d = schema.encoded_width();
        let h = config.latent_dim;
        let k = partition.n_clusters();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let cluster_head = Mlp::new(&sizes(d + n_labels, k), Activation::Relu, Activation::Linear, &mut rng)?;
        let latent_head = Mlp::new(
            &sizes(d + n_labels + k, 2 * h),
            Activation::Relu,
            Activation::Linear,
            &mut rng,
        )?;
        let decoder = Mlp::new(&sizes(h, d), Activation::Relu, Activation::Linear, &mut rng)?;
        let prior_mean = Matrix::from_shape_fn((k, h), |_| config.prior_init_scale * rng.sample::<f64, _>(StandardNormal));
        let prior_logvar = Matrix::zeros((k, h));
        Ok(Self {
            schema,
            partition,
            latent_dim: h,
            cluster_head,
            latent_head,
            decoder,
            prior_mean,
            prior_logvar,
            loss_weights: config.loss_weights,
            config: config.clone(),
            recourse_ready: false,
        })
    }

    pub fn input_width(&self) -> usize {
        self.schema.encoded_width()
    }

    pub fn n_labels(&self) -> usize {
        self.partition.n_labels()
    }

    /// Parameters in optimizer order: cluster head, latent head, decoder,
    /// prior means, prior log-variances.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.cluster_head.params();
        p.extend(self.latent_head.params());
        p.extend(self.decoder.params());
        p.push(&self.prior_mean);
        p.push(&self.prior_logvar);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.cluster_head.params_mut();
        p.extend(self.latent_head.params_mut());
        p.extend(self.decoder.params_mut());
        p.push(&mut self.prior_mean);
        p.push(&mut self.prior_logvar);
        p
    }

    pub(crate) fn register(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let leaf = |g: &mut Graph, m: &Matrix| {
            if trainable {
                g.param(m.clone())
            } else {
                g.constant(m.clone())
            }
        };
        ModelVars {
            cluster: self.cluster_head.register(g, trainable),
            latent: self.latent_head.register(g, trainable),
            decoder: self.decoder.register(g, trainable),
            prior_mean: leaf(g, &self.prior_mean),
            prior_logvar: leaf(g, &self.prior_logvar),
        }
    }

    fn check_batch(&self, x: &Matrix, labels: &[usize]) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        if x.ncols() != self.input_width() || x.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "batch {:?} with {} labels for model width {}",
                x.dim(),
                labels.len(),
                self.input_width()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_labels()) {
            return Err(Error::Invalid(format!("label {bad} outside {} labels", self.n_labels())));
        }
        Ok(())
    }

    /// Records the weighted negated ELBO of a batch. `eps` is the standard
    /// normal noise for the reparameterized latent sample.
    pub(crate) fn elbo_graph(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        x: &Matrix,
        labels: &[usize],
        eps: &Matrix,
    ) -> Result<ElboVars> {
        self.check_batch(x, labels)?;
        let n = x.nrows();
        let h = self.latent_dim;
        if eps.dim() != (n, h) {
            return Err(Error::Shape(format!("noise {:?}, expected {:?}", eps.dim(), (n, h))));
        }
        let mask = self.partition.mask(labels)?;
        let mut log_prior = mask.clone();
        for (r, &y) in labels.iter().enumerate() {
            let size = self.partition.clusters_of(y)?.len() as f64;
            log_prior.row_mut(r).mapv_inplace(|m| m * size.ln());
        }

        let xv = g.constant(x.clone());
        let yv = g.constant(one_hot(labels, self.n_labels()));
        let cin = g.concat(&[xv, yv])?;
        let logits = self.cluster_head.forward_graph(g, cin, &vars.cluster)?;
        let q = g.masked_softmax(logits, mask.clone())?;
        let log_q = g.masked_log_softmax(logits, mask)?;

        // KL(q(c|x,y) || uniform over C_y) = sum_c q (log q + log |C_y|)
        let lp = g.constant(log_prior);
        let ratio = g.add(log_q, lp)?;
        let terms = g.mul(q, ratio)?;
        let total = g.sum(terms)?;
        let kl_c = g.scale(total, 1.0 / n as f64)?;

        let zin = g.concat(&[xv, yv, q])?;
        let stats = self.latent_head.forward_graph(g, zin, &vars.latent)?;
        let mu = g.slice_cols(stats, 0, h)?;
        let raw_lv = g.slice_cols(stats, h, 2 * h)?;
        let logvar = g.clamp(raw_lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;

        let prior_lv = g.clamp(vars.prior_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        let kl_table = g.gaussian_kl(mu, logvar, vars.prior_mean, prior_lv)?;
        let weighted = g.mul(q, kl_table)?;
        let total = g.sum(weighted)?;
        let kl_z = g.scale(total, 1.0 / n as f64)?;

        let half = g.scale(logvar, 0.5)?;
        let sd = g.exp(half)?;
        let noise = g.constant(eps.clone());
        let spread = g.mul(sd, noise)?;
        let z = g.add(mu, spread)?;
        let out = self.decoder.forward_graph(g, z, &vars.decoder)?;
        let recon = g.recon_loss(out, x.clone(), self.schema.categorical_columns())?;

        let w = self.loss_weights;
        let a = g.scale(kl_c, w.cluster_kl)?;
        let b = g.scale(kl_z, w.latent_kl)?;
        let c = g.scale(recon, w.reconstruction)?;
        let ab = g.add(a, b)?;
        let loss = g.add(ab, c)?;
        for v in [kl_c, kl_z, recon] {
            if !g.scalar(v).is_finite() {
                return Err(Error::NonFinite("ELBO term".into()));
            }
        }
        Ok(ElboVars {
            kl_c,
            kl_z,
            recon,
            loss,
        })
    }

    /// Values of the ELBO terms for a batch.
    pub fn elbo_terms(&self, x: &Matrix, labels: &[usize], eps: &Matrix) -> Result<ElboTerms> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let e = self.elbo_graph(&mut g, &vars, x, labels, eps)?;
        Ok(ElboTerms {
            kl_c: g.scalar(e.kl_c),
            kl_z: g.scalar(e.kl_z),
            recon: g.scalar(e.recon),
        })
    }

    /// Weighted loss of a batch and its gradient for every parameter, in
    /// [`params`](Self::params) order.
    pub fn loss_and_gradients(&self, x: &Matrix, labels: &[usize], eps: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, true);
        let e = self.elbo_graph(&mut g, &vars, x, labels, eps)?;
        let grads = g.backward(e.loss)?;
        Ok((g.scalar(e.loss), vars.all().into_iter().map(|v| grads.wrt(v)).collect()))
    }

    /// `q(c|x,y)` for each row; zero outside each row's `C_y`.
    pub fn cluster_probs(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix> {
        self.check_batch(x, labels)?;
        let input = ndarray::concatenate(Axis(1), &[x.view(), one_hot(labels, self.n_labels()).view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let logits = self.cluster_head.forward(&input)?;
        let mut g = Graph::new();
        let lv = g.constant(logits);
        let p = g.masked_softmax(lv, self.partition.mask(labels)?)?;
        Ok(g.value(p).clone())
    }

    pub fn encode_cluster(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        Ok(self.cluster_probs(&row(x), &[label])?.row(0).to_vec())
    }

    /// Mean and clamped log-variance of `q(z|x,c,y)`.
    pub fn latent_stats(&self, x: &Matrix, labels: &[usize], c_probs: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_batch(x, labels)?;
        if c_probs.dim() != (x.nrows(), self.partition.n_clusters()) {
            return Err(Error::Shape(format!(
                "cluster probabilities {:?} for {} rows and {} clusters",
                c_probs.dim(),
                x.nrows(),
                self.partition.n_clusters()
            )));
        }
        let y1h = one_hot(labels, self.n_labels());
        let input = ndarray::concatenate(Axis(1), &[x.view(), y1h.view(), c_probs.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let stats = self.latent_head.forward(&input)?;
        let h = self.latent_dim;
        let mu = stats.slice(s![.., 0..h]).to_owned();
        let lv = stats
            .slice(s![.., h..2 * h])
            .mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok((mu, lv))
    }

    pub fn encode_latent(&self, x: &[f64], label: usize, c_probs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, lv) = self.latent_stats(&row(x), &[label], &row(c_probs))?;
        Ok((mu.row(0).to_vec(), lv.row(0).to_vec()))
    }

    /// Deterministic encoding: the posterior mean under the encoder's own
    /// cluster responsibilities.
    pub fn encode_batch(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let probs = self.cluster_probs(x, labels)?;
        Ok(self.latent_stats(x, labels, &probs)?.0)
    }

    pub fn encode(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&row(x), &[label])?.row(0).to_vec())
    }

    pub fn decode_batch(&self, z: &Matrix, mode: DecodeMode) -> Result<Matrix> {
        if z.ncols() != self.latent_dim {
            return Err(Error::Shape(format!(
                "latent width {} for model with {}",
                z.ncols(),
                self.latent_dim
            )));
        }
        let mut out = self.decoder.forward(z)?;
        let groups = self.schema.ohe_groups();
        for g in &groups {
            out.slice_mut(s![.., g.clone()]).mapv_inplace(sigmoid);
        }
        if mode == DecodeMode::Inference {
            for mut r in out.rows_mut() {
                for g in &groups {
                    let mut group = r.slice_mut(s![g.clone()]);
                    let vals = group.to_vec();
                    let rounded: Vec<f64> = vals.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
                    let ones = rounded.iter().filter(|&&v| v == 1.0).count();
                    if ones == 1 {
                        group.assign(&ndarray::Array1::from(rounded));
                    } else {
                        let k = crate::data::argmax(&vals);
                        group.iter_mut().enumerate().for_each(|(j, v)| *v = if j == k { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f64], mode: DecodeMode) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&row(z), mode)?.row(0).to_vec())
    }

    /// Records the pre-rounding decoder output for a latent var.
    pub(crate) fn decode_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let params = self.decoder.register(g, false);
        let out = self.decoder.forward_graph(g, z, &params)?;
        let groups = self.schema.ohe_groups();
        if groups.is_empty() {
            return Ok(out);
        }
        let cats = self.schema.categorical_columns();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < cats.len() {
            let kind = cats[start];
            let end = (start..cats.len()).find(|&j| cats[j] != kind).unwrap_or(cats.len());
            let piece = g.slice_cols(out, start, end)?;
            parts.push(if kind { g.sigmoid(piece)? } else { piece });
            start = end;
        }
        g.concat(&parts)
    }

    /// Prior means of the components owned by `label`, decoded in
    /// inference mode.
    pub fn centroids(&self, label: usize) -> Result<Vec<Centroid>> {
        let clusters = self.partition.clusters_of(label)?;
        let latents = self.prior_mean.select(Axis(0), clusters);
        let decoded = self.decode_batch(&latents, DecodeMode::Inference)?;
        Ok(clusters
            .iter()
            .enumerate()
            .map(|(i, &c)| Centroid {
                cluster: c,
                latent: latents.row(i).to_vec(),
                decoded: decoded.row(i).to_vec(),
            })
            .collect())
    }

    /// Draws `n` rows of class `label` from the generative model. Returns
    /// the synthetic dataset and the component each row came from.
    pub fn sample_with_clusters(&self, label: usize, n: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Invalid("sample size must be at least 1".into()));
        }
        let clusters = self.partition.clusters_of(label)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.latent_dim;
        let mut z = Matrix::zeros((n, h));
        let mut picked = Vec::with_capacity(n);
        for i in 0..n {
            let c = clusters[rng.random_range(0..clusters.len())];
            picked.push(c);
            for j in 0..h {
                let lv = self.prior_logvar[[c, j]].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
                let e: f64 = rng.sample(StandardNormal);
                z[[i, j]] = self.prior_mean[[c, j]] + (0.5 * lv).exp() * e;
            }
        }
        let x = self.decode_batch(&z, DecodeMode::Inference)?;
        let mut ds = Dataset::new(x, vec![label; n])?;
        ds.y_pred = Some(vec![label; n]);
        Ok((ds, picked))
    }

    pub fn sample(&self, label: usize, n: usize, seed: u64) -> Result<Dataset> {
        Ok(self.sample_with_clusters(label, n, seed)?.0)
    }
}

/// `mu + exp(logvar / 2) * eps`, elementwise.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "reparameterize: {} / {} / {}",
            mu.len(),
            logvar.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}
