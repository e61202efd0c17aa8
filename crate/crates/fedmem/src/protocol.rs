//! Federated rounds: client selection, local training, weighted
//! aggregation, and synchronous/asynchronous server updates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{
    accuracy, argmax, backward_cross_entropy, forward, AdamParams, AdamState, Activation, ParamSet,
};
use crate::partition::ClientShards;
use crate::rng;

/// Default classifier hidden widths: input → 64 → 32 → classes.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// Build a classifier MLP (rectified hidden layers, linear output).
pub fn init_classifier(
    input_dim: usize,
    num_classes: usize,
    hidden: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(num_classes);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Identity);
    ParamSet::init_xavier(&dims, &acts, rng)
}

/// Training strategy for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Each client trains alone; no communication.
    Local,
    /// Weighted parameter averaging of client updates.
    Fedavg,
    /// Like fedavg, with a proximal pull toward the broadcast model during
    /// local training.
    Fedprox { mu: f64 },
    /// Fedavg followed by per-client fine-tuning of the final global model.
    FedavgFt,
    /// Fedavg followed by generator training, synthesis, friend models and
    /// decoupled interpolation.
    Apfl,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Fedavg => "fedavg",
            Strategy::Fedprox { .. } => "fedprox",
            Strategy::FedavgFt => "fedavg_ft",
            Strategy::Apfl => "apfl",
        }
    }

    /// Whether the strategy runs federated rounds at all.
    pub fn is_federated(&self) -> bool {
        !matches!(self, Strategy::Local)
    }

    /// Proximal coefficient for local training (zero for non-fedprox).
    pub fn prox_mu(&self) -> f64 {
        match self {
            Strategy::Fedprox { mu } => *mu,
            _ => 0.0,
        }
    }
}

/// How the server folds in client updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    Sync,
    Async,
}

/// Per-round training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub strategy: Strategy,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub aggregation: AggregationMode,
    /// Base mixing weight for async aggregation; the effective weight is
    /// `async_eta0 / (1 + staleness)`.
    pub async_eta0: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            local_epochs: 20,
            batch_size: 50,
            learning_rate: 2e-4,
            strategy: Strategy::Fedavg,
            rounds: 10,
            clients_per_round: 2,
            aggregation: AggregationMode::Sync,
            async_eta0: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("training.learning_rate must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("training.rounds must be positive"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > num_clients {
            return Err(Error::config(format!(
                "training.clients_per_round must lie in [1, {num_clients}], got {}",
                self.clients_per_round
            )));
        }
        if let Strategy::Fedprox { mu } = self.strategy {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(Error::config(format!(
                    "fedprox mu must be finite and nonnegative, got {mu}"
                )));
            }
        }
        if !(self.async_eta0 > 0.0 && self.async_eta0 <= 1.0) {
            return Err(Error::config(format!(
                "training.async_eta0 must lie in (0, 1], got {}",
                self.async_eta0
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams::new(self.learning_rate)
    }
}

/// Server-side view of the federation.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ParamSet,
    pub round: usize,
    /// Round at which each client last pulled the global model (drives
    /// staleness in async aggregation).
    pub pulled_round: BTreeMap<usize, usize>,
}

impl ServerState {
    pub fn new(global: ParamSet) -> Self {
        ServerState {
            global,
            round: 0,
            pulled_round: BTreeMap::new(),
        }
    }
}

/// One simulated client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Row indices into the shared training set.
    pub shard: Vec<usize>,
    /// Most recent locally trained parameters.
    pub local: ParamSet,
    /// Persistent optimiser state (used by the local-only baseline, which
    /// trains continuously across rounds).
    pub adam: AdamState,
    pub last_participation: Option<usize>,
}

impl ClientState {
    pub fn new(id: usize, shard: Vec<usize>, init: ParamSet) -> Self {
        let adam = AdamState::new(&init);
        ClientState {
            id,
            shard,
            local: init,
            adam,
            last_participation: None,
        }
    }
}

/// One client per shard, every local model starting from `init`.
pub fn make_clients(shards: &ClientShards, init: &ParamSet) -> Vec<ClientState> {
    (0..shards.num_clients())
        .map(|k| ClientState::new(k, shards.shard(k).to_vec(), init.clone()))
        .collect()
}

/// Run `epochs` of shuffled minibatch Adam on cross-entropy over the given
/// shard, mutating `params` and `adam` in place. With `prox = (mu, anchor)`
/// and `mu != 0`, each minibatch loss gains `(mu/2)·‖θ − anchor‖²`. Returns
/// the mean minibatch loss of the final epoch, or `None` when nothing ran.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    params: &mut ParamSet,
    adam: &mut AdamState,
    data: &Dataset,
    shard: &[usize],
    epochs: usize,
    batch_size: usize,
    hp: &AdamParams,
    prox: Option<(f64, &ParamSet)>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if shard.is_empty() || epochs == 0 {
        return Ok(None);
    }
    let mut order = shard.to_vec();
    let mut last_epoch_loss = None;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch_size) {
            let x = data.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let mut pass = backward_cross_entropy(params, &x, &labels)?;
            let mut loss = pass.loss;
            if let Some((mu, anchor)) = prox {
                if mu != 0.0 {
                    let diff = params.affine(1.0, anchor, -1.0)?;
                    pass.grads.add_scaled(&diff, mu)?;
                    loss += 0.5 * mu * params.sq_distance(anchor)?;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Numeric("non-finite training loss".into()));
            }
            adam.step(params, &pass.grads, hp)?;
            loss_sum += loss;
            steps += 1;
        }
        last_epoch_loss = Some(loss_sum / steps as f64);
    }
    Ok(last_epoch_loss)
}

/// Train a copy of `start` on the client's shard for the configured number
/// of epochs, with a fresh optimiser. `start` itself is never modified.
/// FedProx adds its proximal term anchored at `start`.
pub fn local_train(
    start: &ParamSet,
    data: &Dataset,
    shard: &[usize],
    cfg: &TrainingConfig,
    context: &str,
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet> {
    if shard.is_empty() {
        return Err(Error::training(context, "client shard is empty"));
    }
    let mut params = start.clone();
    let mut adam = AdamState::new(&params);
    let prox = match cfg.strategy {
        Strategy::Fedprox { mu } => Some((mu, start)),
        _ => None,
    };
    train_epochs(
        &mut params,
        &mut adam,
        data,
        shard,
        cfg.local_epochs,
        cfg.batch_size,
        &cfg.adam(),
        prox,
        rng,
    )
    .map_err(|e| Error::training(context, e.to_string()))?;
    Ok(params)
}

/// Uniform sample of `m` clients without replacement, deterministic per
/// `(seed, round)`. The result is sorted ascending.
pub fn select_clients(available: &[usize], m: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if m > available.len() {
        return Err(Error::config(format!(
            "cannot select {m} clients from {} available",
            available.len()
        )));
    }
    let mut pool = available.to_vec();
    pool.sort_unstable();
    let mut r = rng::stream(seed, &[rng::tag("select"), round as u64]);
    pool.shuffle(&mut r);
    let mut chosen: Vec<usize> = pool.into_iter().take(m).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Weighted elementwise average of client updates. Weights are renormalized
/// to sum to one; summation runs in ascending client-id order so the result
/// does not depend on arrival or scheduling order.
pub fn aggregate(updates: &[(usize, &ParamSet, f64)]) -> Result<ParamSet> {
    if updates.is_empty() {
        return Err(Error::config("aggregate needs at least one update"));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].0);
    let total: f64 = updates.iter().map(|(_, _, w)| *w).sum();
    if !(total > 0.0) || updates.iter().any(|(_, _, w)| !(*w > 0.0)) {
        return Err(Error::Aggregation {
            client: updates
                .iter()
                .find(|(_, _, w)| !(*w > 0.0))
                .map(|(k, _, _)| *k)
                .unwrap_or(updates[0].0),
        });
    }
    let mut out = updates[order[0]].1.zeros_like();
    for &i in &order {
        let (client, params, weight) = (updates[i].0, updates[i].1, updates[i].2);
        out.add_scaled(params, weight / total)
            .map_err(|_| Error::Aggregation { client })?;
    }
    Ok(out)
}

/// Accuracy plus per-class accuracy (NaN marks classes with no rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
}

/// Evaluate a classifier on a dataset: overall accuracy and per-class
/// accuracy, with NaN for classes absent from the data.
pub fn evaluate(params: &ParamSet, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::config("evaluate needs a non-empty dataset"));
    }
    let logits = forward(params, &ds.features)?;
    let acc = accuracy(&logits, &ds.labels).expect("dataset checked non-empty");
    let mut hits = vec![0usize; ds.num_classes];
    let mut counts = vec![0usize; ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        counts[y] += 1;
        if argmax(logits.row(i)) == y {
            hits[y] += 1;
        }
    }
    let per_class = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
        .collect();
    Ok(Evaluation {
        accuracy: acc,
        per_class,
    })
}

/// Immutable inputs shared by every round of a run.
pub struct RoundContext<'a> {
    pub data: &'a Dataset,
    pub shards: &'a ClientShards,
    /// Seed of the enclosing run; per-client streams are derived from it
    /// together with the client id and round, so parallel scheduling cannot
    /// change any trajectory.
    pub seed: u64,
}

fn train_selected(
    global: &ParamSet,
    selected: &[usize],
    cfg: &TrainingConfig,
    ctx: &RoundContext,
    round: usize,
) -> Result<Vec<(usize, ParamSet)>> {
    selected
        .par_iter()
        .map(|&k| {
            let mut r = rng::stream(
                ctx.seed,
                &[rng::tag("local-train"), k as u64, round as u64],
            );
            let context = format!("round {round}, client {k}");
            let trained = local_train(global, ctx.data, ctx.shards.shard(k), cfg, &context, &mut r)?;
            Ok((k, trained))
        })
        .collect()
}

/// One synchronous round: select → broadcast → parallel local training →
/// weighted aggregation. Returns the selected client ids. An empty
/// availability set skips the round (logged) but still advances time.
pub fn run_round_sync(
    server: &mut ServerState,
    clients: &mut [ClientState],
    available: &[usize],
    cfg: &TrainingConfig,
    ctx: &RoundContext,
) -> Result<Vec<usize>> {
    let round = server.round;
    if available.is_empty() {
        log::warn!("round {round}: no clients available, skipping");
        server.round += 1;
        return Ok(Vec::new());
    }
    let m = cfg.clients_per_round.min(available.len());
    let selected = select_clients(available, m, ctx.seed, round)?;
    let trained = train_selected(&server.global, &selected, cfg, ctx, round)?;
    let weights = ctx.shards.weights(&selected);
    let updates: Vec<(usize, &ParamSet, f64)> = trained
        .iter()
        .zip(&weights)
        .map(|((k, p), &w)| (*k, p, w))
        .collect();
    server.global = aggregate(&updates)?;
    for (k, params) in trained {
        server.pulled_round.insert(k, round);
        clients[k].local = params;
        clients[k].last_participation = Some(round);
    }
    server.round += 1;
    Ok(selected)
}

/// One asynchronous burst: the same selection and training as a sync round,
/// but updates arrive one at a time in seeded-random order and each arrival
/// immediately mixes into the global model with weight `eta0 / (1 + s)`,
/// where `s` counts server rounds since that client pulled the model. The
/// server round advances by one per arrival.
pub fn run_round_async(
    server: &mut ServerState,
    clients: &mut [ClientState],
    available: &[usize],
    cfg: &TrainingConfig,
    ctx: &RoundContext,
) -> Result<Vec<usize>> {
    let pull_round = server.round;
    if available.is_empty() {
        log::warn!("round {pull_round}: no clients available, skipping");
        server.round += 1;
        return Ok(Vec::new());
    }
    let m = cfg.clients_per_round.min(available.len());
    let selected = select_clients(available, m, ctx.seed, pull_round)?;
    for &k in &selected {
        server.pulled_round.insert(k, pull_round);
    }
    let trained = train_selected(&server.global, &selected, cfg, ctx, pull_round)?;
    let mut arrival: Vec<usize> = (0..trained.len()).collect();
    let mut r = rng::stream(ctx.seed, &[rng::tag("arrival"), pull_round as u64]);
    arrival.shuffle(&mut r);
    for &i in &arrival {
        let (k, ref params) = trained[i];
        let staleness = server.round - server.pulled_round[&k];
        let eta = cfg.async_eta0 / (1.0 + staleness as f64);
        server.global = server.global.affine(1.0 - eta, params, eta)?;
        server.round += 1;
    }
    for (k, params) in trained {
        clients[k].local = params;
        clients[k].last_participation = Some(pull_round);
    }
    Ok(selected)
}
