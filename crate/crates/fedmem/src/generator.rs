//! Server-side data-free training of the conditional generator: noise
//! sampling, class-conditioned synthesis, the weighted classification and
//! diversity losses, and the generator training loop over frozen client
//! classifiers.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{
    backward_from_output_grad, forward_with_trace, AdamState, Activation, ParamSet, Tensor,
};
use crate::partition::ClientShards;
use crate::rng;

/// Per-class semantic embeddings with disjoint seen/unseen class sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTable {
    embeddings: BTreeMap<usize, Vec<f64>>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct SemanticTableFile {
    embeddings: BTreeMap<String, Vec<f64>>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
}

impl SemanticTable {
    pub fn new(
        embeddings: BTreeMap<usize, Vec<f64>>,
        mut seen: Vec<usize>,
        mut unseen: Vec<usize>,
    ) -> Result<Self> {
        let dim = embeddings
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::config("semantic table has no embeddings"))?;
        for (class, emb) in &embeddings {
            if emb.len() != dim {
                return Err(Error::Dimension {
                    context: format!("embedding for class {class}"),
                    expected: dim,
                    actual: emb.len(),
                });
            }
            if emb.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite embedding for class {class}"
                )));
            }
        }
        seen.sort_unstable();
        seen.dedup();
        unseen.sort_unstable();
        unseen.dedup();
        if seen.iter().any(|c| unseen.contains(c)) {
            return Err(Error::config(
                "seen and unseen class sets must be disjoint",
            ));
        }
        for &c in seen.iter().chain(&unseen) {
            if !embeddings.contains_key(&c) {
                return Err(Error::Semantic { class: c });
            }
        }
        Ok(SemanticTable {
            embeddings,
            seen,
            unseen,
            dim,
        })
    }

    /// Embeddings taken directly from stored blob class means: classes
    /// listed in `unseen` get genuinely extrapolative content because the
    /// mean encodes where the class lives in feature space.
    pub fn from_class_means(means: &Tensor, seen: Vec<usize>, unseen: Vec<usize>) -> Result<Self> {
        let mut embeddings = BTreeMap::new();
        for c in 0..means.rows() {
            embeddings.insert(c, means.row(c).to_vec());
        }
        SemanticTable::new(embeddings, seen, unseen)
    }

    /// Class means pushed through a seeded random projection to `target_dim`
    /// (entries scaled by 1/sqrt(target_dim) to keep magnitudes stable).
    pub fn from_projected_means(
        means: &Tensor,
        seen: Vec<usize>,
        unseen: Vec<usize>,
        target_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if target_dim == 0 {
            return Err(Error::config("projection dimension must be positive"));
        }
        let d = means.cols();
        let mut r = rng::stream(seed, &[rng::tag("semantic-projection")]);
        let scale = 1.0 / (target_dim as f64).sqrt();
        let proj: Vec<f64> = (0..d * target_dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut r);
                v * scale
            })
            .collect();
        let mut embeddings = BTreeMap::new();
        for c in 0..means.rows() {
            let row = means.row(c);
            let emb: Vec<f64> = (0..target_dim)
                .map(|j| row.iter().enumerate().map(|(i, &x)| x * proj[i * target_dim + j]).sum())
                .collect();
            embeddings.insert(c, emb);
        }
        SemanticTable::new(embeddings, seen, unseen)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SemanticTableFile = serde_json::from_str(&text)?;
        let mut embeddings = BTreeMap::new();
        for (key, emb) in file.embeddings {
            let class: usize = key.parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("embedding key {key:?} is not a class id"),
            })?;
            embeddings.insert(class, emb);
        }
        SemanticTable::new(embeddings, file.seen, file.unseen)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = SemanticTableFile {
            embeddings: self
                .embeddings
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            seen: self.seen.clone(),
            unseen: self.unseen.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn embedding(&self, class: usize) -> Result<&[f64]> {
        self.embeddings
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(Error::Semantic { class })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen(&self) -> &[usize] {
        &self.unseen
    }

    pub fn embeddings(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.embeddings
    }

    /// The same embeddings under a different seen/unseen split.
    pub fn with_split(&self, seen: Vec<usize>, unseen: Vec<usize>) -> Result<Self> {
        SemanticTable::new(self.embeddings.clone(), seen, unseen)
    }
}

/// Noise input specification for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub dim: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { dim: 20 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("noise.dim must be at least 1"));
        }
        Ok(())
    }
}

/// `n × dim` matrix of iid standard normal draws, deterministic per seed.
pub fn sample_noise(n: usize, spec: &NoiseSpec, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::config("sample_noise needs n >= 1"));
    }
    spec.validate()?;
    let mut r = rng::stream(seed, &[rng::tag("noise")]);
    let data: Vec<f64> = (0..n * spec.dim)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    Tensor::new(vec![n, spec.dim], data)
}

/// Share of each (non-dropout client, class) pair in the total non-dropout
/// training data, the weights of the classification loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProportionTable {
    clients: Vec<usize>,
    /// alpha[i][y] for clients[i].
    alpha: Vec<Vec<f64>>,
}

impl ClassProportionTable {
    /// Build from shards: `alpha[k][y]` = class-y rows on client k divided
    /// by the total row count across all listed clients.
    pub fn from_shards(
        shards: &ClientShards,
        train: &Dataset,
        clients: &[usize],
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config(
                "class proportions need at least one client",
            ));
        }
        let mut clients = clients.to_vec();
        clients.sort_unstable();
        let total: usize = clients.iter().map(|&k| shards.shard(k).len()).sum();
        if total == 0 {
            return Err(Error::config("listed clients hold no training rows"));
        }
        let alpha = clients
            .iter()
            .map(|&k| {
                let mut counts = vec![0usize; train.num_classes];
                for &i in shards.shard(k) {
                    counts[train.labels[i]] += 1;
                }
                counts
                    .iter()
                    .map(|&c| c as f64 / total as f64)
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(ClassProportionTable { clients, alpha })
    }

    /// Hand-set table (used by tests and oracles).
    pub fn from_raw(clients: Vec<usize>, alpha: Vec<Vec<f64>>) -> Self {
        ClassProportionTable { clients, alpha }
    }

    pub fn clients(&self) -> &[usize] {
        &self.clients
    }

    pub fn alpha(&self, client: usize, class: usize) -> f64 {
        self.clients
            .iter()
            .position(|&k| k == client)
            .map_or(0.0, |i| self.alpha[i].get(class).copied().unwrap_or(0.0))
    }

    /// Classes with positive weight on some client, ascending: the seen set.
    pub fn covered_classes(&self) -> Vec<usize> {
        let c = self.alpha.first().map_or(0, Vec::len);
        (0..c)
            .filter(|&y| self.alpha.iter().any(|row| row[y] > 0.0))
            .collect()
    }
}

/// Generator training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Trade-off between classification and diversity losses.
    pub lambda: f64,
    /// Synthetic samples per seen class per epoch.
    pub samples_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    /// Reuse the previous round's generator parameters as the starting
    /// point of each retraining pass (false restarts from fresh noise-free
    /// initialization each time).
    pub warm_start: bool,
    /// Retrain the generator after every this-many aggregation rounds.
    pub train_every: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            lambda: 0.5,
            samples_per_class: 600,
            epochs: 10,
            batch_size: 50,
            learning_rate: 2e-4,
            hidden: vec![64, 64],
            warm_start: true,
            train_every: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!(
                "generator.lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.samples_per_class < 2 {
            return Err(Error::config(
                "generator.samples_per_class must be at least 2 (the diversity loss needs pairs)",
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "generator.batch_size must be at least 2 (the diversity loss needs pairs)",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("generator.learning_rate must be positive"));
        }
        if self.hidden.is_empty() {
            return Err(Error::config("generator.hidden must name at least one layer"));
        }
        if self.train_every == 0 {
            return Err(Error::config("generator.train_every must be positive"));
        }
        Ok(())
    }
}

/// Build the generator MLP: concat(noise, embedding) → hidden rectified
/// layers → linear output of the classifier's input width.
pub fn init_generator(
    noise_dim: usize,
    embed_dim: usize,
    out_dim: usize,
    hidden: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet> {
    let mut dims = vec![noise_dim + embed_dim];
    dims.extend_from_slice(hidden);
    dims.push(out_dim);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Identity);
    ParamSet::init_xavier(&dims, &acts, rng)
}

/// Concatenate noise rows with the embedding of each row's label.
fn conditioned_input(z: &Tensor, labels: &[usize], table: &SemanticTable) -> Result<Tensor> {
    if z.rows() != labels.len() {
        return Err(Error::Dimension {
            context: "noise rows vs labels".into(),
            expected: z.rows(),
            actual: labels.len(),
        });
    }
    let d_in = z.cols() + table.dim();
    let mut data = Vec::with_capacity(z.rows() * d_in);
    for (i, &y) in labels.iter().enumerate() {
        data.extend_from_slice(z.row(i));
        data.extend_from_slice(table.embedding(y)?);
    }
    Tensor::new(vec![z.rows(), d_in], data)
}

/// Synthesize one sample per row: `x̂_i = G(concat(z_i, A(y_i)); ω)`.
pub fn generate(
    omega: &ParamSet,
    z: &Tensor,
    labels: &[usize],
    table: &SemanticTable,
) -> Result<Tensor> {
    let input = conditioned_input(z, labels, table)?;
    Ok(forward_with_trace(omega, &input)?.0)
}

/// Weighted per-row cross-entropy of `logits` against `labels`; the
/// returned gradient row i is `w_i * (softmax(logits_i) - onehot(y_i))`.
fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> (f64, Tensor) {
    let n = logits.rows();
    let mut grad = Tensor::zeros(vec![n, logits.cols()]);
    let mut loss = 0.0;
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[labels[i]]);
        let grow = grad.row_mut(i);
        for (k, g) in grow.iter_mut().enumerate() {
            let p = (row[k] - lse).exp();
            *g = w * (p - if k == labels[i] { 1.0 } else { 0.0 });
        }
    }
    (loss, grad)
}

/// Weighted classification loss over frozen client classifiers, plus its
/// gradient with respect to the synthetic batch.
///
/// Per sample i and client k the contribution is
/// `alpha_k(y_i) * ce(softmax(D_k(x̂_i)), y_i) / n`; clients with zero
/// weight on every row of the batch are skipped. Client terms accumulate in
/// ascending client-id order.
pub fn classification_loss_and_grad(
    xhat: &Tensor,
    labels: &[usize],
    clients: &[(usize, &ParamSet)],
    table: &ClassProportionTable,
) -> Result<(f64, Tensor)> {
    if clients.is_empty() {
        return Err(Error::config(
            "classification loss needs at least one client model",
        ));
    }
    let n = xhat.rows();
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&i| clients[i].0);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, xhat.cols()]);
    for &i in &order {
        let (k, params) = clients[i];
        let weights: Vec<f64> = labels
            .iter()
            .map(|&y| table.alpha(k, y) / n as f64)
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let (logits, trace) = forward_with_trace(params, xhat)?;
        let (l, out_grad) = weighted_cross_entropy(&logits, labels, &weights);
        loss += l;
        let g = backward_from_output_grad(params, &trace, &out_grad)?;
        for (dst, src) in grad.data_mut().iter_mut().zip(g.input.data()) {
            *dst += src;
        }
    }
    Ok((loss, grad))
}

/// Loss-only variant of [`classification_loss_and_grad`].
pub fn classification_loss(
    xhat: &Tensor,
    labels: &[usize],
    clients: &[(usize, &ParamSet)],
    table: &ClassProportionTable,
) -> Result<f64> {
    Ok(classification_loss_and_grad(xhat, labels, clients, table)?.0)
}

/// Negative mean pairwise Euclidean distance within a same-class batch,
/// plus its gradient with respect to the batch:
/// `L = -(1/n) Σ_i Σ_{j≠i} ‖x_i − x_j‖ / (n − 1)`. Minimizing it spreads
/// the samples apart.
pub fn diversity_loss_and_grad(xhat: &Tensor) -> Result<(f64, Tensor)> {
    let n = xhat.rows();
    if n < 2 {
        return Err(Error::config(
            "diversity loss needs at least two samples per class",
        ));
    }
    let d = xhat.cols();
    let scale = 1.0 / (n as f64 * (n - 1) as f64);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dist2 = 0.0;
            for c in 0..d {
                let diff = xhat.row(i)[c] - xhat.row(j)[c];
                dist2 += diff * diff;
            }
            let dist = dist2.sqrt();
            // Each unordered pair appears twice in the double sum.
            loss -= 2.0 * scale * dist;
            if dist > 0.0 {
                let coeff = 2.0 * scale / dist;
                for c in 0..d {
                    let diff = xhat.row(i)[c] - xhat.row(j)[c];
                    grad.data_mut()[i * d + c] -= coeff * diff;
                    grad.data_mut()[j * d + c] += coeff * diff;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Loss-only variant of [`diversity_loss_and_grad`].
pub fn diversity_loss(xhat: &Tensor) -> Result<f64> {
    Ok(diversity_loss_and_grad(xhat)?.0)
}

/// The generator objective: `lambda * L_cls + (1 - lambda) * L_div`.
pub fn generator_loss(l_cls: f64, l_div: f64, lambda: f64) -> f64 {
    lambda * l_cls + (1.0 - lambda) * l_div
}

/// Mean losses over the final training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStats {
    pub loss_g: f64,
    pub l_cls: f64,
    pub l_div: f64,
}

/// Train the generator against frozen client classifiers.
///
/// Each epoch draws fresh noise, synthesizes `samples_per_class` rows for
/// every seen class, and walks them in same-class minibatches: per batch
/// the combined gradient `lambda * dL_cls + (1-lambda) * dL_div` flows back
/// through the generator and one Adam step is applied. Client parameters
/// are borrowed immutably and never change.
pub fn train_generator(
    omega0: &ParamSet,
    clients: &[(usize, &ParamSet)],
    alpha: &ClassProportionTable,
    table: &SemanticTable,
    noise: &NoiseSpec,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(ParamSet, Option<GeneratorStats>)> {
    cfg.validate()?;
    noise.validate()?;
    if clients.is_empty() {
        return Err(Error::config("train_generator needs client models"));
    }
    let seen = table.seen().to_vec();
    if seen.is_empty() {
        return Err(Error::config("train_generator needs at least one seen class"));
    }
    let mut omega = omega0.clone();
    let mut adam = AdamState::new(&omega);
    let hp = crate::numerics::AdamParams::new(cfg.learning_rate);
    let mut stats = None;
    for epoch in 0..cfg.epochs {
        let mut sum_cls = 0.0;
        let mut sum_div = 0.0;
        let mut batches = 0usize;
        for &y in &seen {
            let z = sample_noise(
                cfg.samples_per_class,
                noise,
                rng::derive_seed(seed, &[rng::tag("gen-epoch"), epoch as u64, y as u64]),
            )?;
            let mut start = 0;
            while start < cfg.samples_per_class {
                let end = (start + cfg.batch_size).min(cfg.samples_per_class);
                if end - start < 2 {
                    // A trailing singleton cannot form diversity pairs;
                    // fold it into nothing and stop (the next epoch's fresh
                    // noise makes up for the dropped row).
                    break;
                }
                let rows: Vec<usize> = (start..end).collect();
                let zb = z.select_rows(&rows);
                let labels = vec![y; rows.len()];
                let input = conditioned_input(&zb, &labels, table)?;
                let (xhat, trace) = forward_with_trace(&omega, &input)?;
                let (l_cls, g_cls) =
                    classification_loss_and_grad(&xhat, &labels, clients, alpha)?;
                let (l_div, g_div) = diversity_loss_and_grad(&xhat)?;
                let l_g = generator_loss(l_cls, l_div, cfg.lambda);
                if !l_g.is_finite() {
                    return Err(Error::training(
                        format!("generator epoch {epoch}"),
                        format!("non-finite objective {l_g}"),
                    ));
                }
                let mut out_grad = Tensor::zeros(vec![xhat.rows(), xhat.cols()]);
                for ((o, c), dv) in out_grad
                    .data_mut()
                    .iter_mut()
                    .zip(g_cls.data())
                    .zip(g_div.data())
                {
                    *o = cfg.lambda * c + (1.0 - cfg.lambda) * dv;
                }
                let grads = backward_from_output_grad(&omega, &trace, &out_grad)?;
                adam.step(&mut omega, &grads.params, &hp).map_err(|e| {
                    Error::training(format!("generator epoch {epoch}"), e.to_string())
                })?;
                sum_cls += l_cls;
                sum_div += l_div;
                batches += 1;
                start = end;
            }
        }
        if batches > 0 {
            let l_cls = sum_cls / batches as f64;
            let l_div = sum_div / batches as f64;
            stats = Some(GeneratorStats {
                loss_g: generator_loss(l_cls, l_div, cfg.lambda),
                l_cls,
                l_div,
            });
        }
    }
    Ok((omega, stats))
}
