//! Experiment orchestration: per-seed data construction, per-strategy round
//! loops, generator training, personalization, evaluation, and metrics
//! emission — plus the parameter sweep driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{DatasetSpec, EmbeddingSpec, ExperimentConfig};
use crate::data::{load_csv, make_blobs, split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::generator::{init_generator, train_generator, ClassProportionTable, SemanticTable};
use crate::metrics::{ClientId, MetricsRecord, Split};
use crate::numerics::{save_params, ParamSet, Tensor};
use crate::partition::{availability, client_test_slices, partition, ClientShards};
use crate::personalize::{
    personalize, FriendModel, PersonalizeContext, PersonalizeMode,
};
use crate::protocol::{
    evaluate, init_classifier, local_train, make_clients, run_round_async, run_round_sync,
    AggregationMode, ClientState, Evaluation, RoundContext, ServerState, Strategy,
};
use crate::rng;

/// Short collision-resistant identifier: FNV-1a of the canonical config
/// JSON (and the sweep tag, when present), plus the human-readable seed.
pub fn run_id(cfg: &ExperimentConfig, tag: Option<&str>, seed: u64) -> Result<String> {
    let canon = cfg.canonical_json()?;
    let hash = rng::tag(&canon);
    Ok(match tag {
        Some(t) => format!("cfg{hash:016x}-{t}-s{seed}"),
        None => format!("cfg{hash:016x}-s{seed}"),
    })
}

/// Build the raw dataset for one repeat.
fn build_dataset(cfg: &ExperimentConfig, run_seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            classes,
            dim,
            per_class,
            spread,
            layout_seed,
            sample_seed,
        } => make_blobs(
            *classes,
            *dim,
            *per_class,
            *spread,
            layout_seed.unwrap_or(cfg.master_seed),
            sample_seed.unwrap_or(run_seed),
        ),
        DatasetSpec::Csv { path } => load_csv(path),
    }
}

/// Per-class means: the stored generating means when available, otherwise
/// empirical means of the training rows.
fn class_mean_table(train: &Dataset) -> Result<Tensor> {
    if let Some(means) = &train.class_means {
        return Ok(means.clone());
    }
    let by_class = train.indices_by_class();
    let mut rows = Vec::with_capacity(by_class.len());
    for (c, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::config(format!(
                "class {c} has no training rows to build an embedding from"
            )));
        }
        let mut mean = vec![0.0; train.dim()];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(train.features.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= idx.len() as f64;
        }
        rows.push(mean);
    }
    Tensor::from_rows(&rows)
}

/// Build the semantic table for a run given the computed seen/unseen split.
fn build_semantic_table(
    cfg: &ExperimentConfig,
    train: &Dataset,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    run_seed: u64,
) -> Result<SemanticTable> {
    match &cfg.embeddings {
        EmbeddingSpec::Means => {
            SemanticTable::from_class_means(&class_mean_table(train)?, seen, unseen)
        }
        EmbeddingSpec::Projected { dim } => SemanticTable::from_projected_means(
            &class_mean_table(train)?,
            seen,
            unseen,
            *dim,
            rng::derive_seed(run_seed, &[rng::tag("embed-projection")]),
        ),
        EmbeddingSpec::File { path } => {
            SemanticTable::load_json(path)?.with_split(seen, unseen)
        }
    }
}

/// Everything shared by the strategies of one repeat.
struct RunEnv<'a> {
    cfg: &'a ExperimentConfig,
    run_id: String,
    seed: u64,
    train: Dataset,
    test: Dataset,
    shards: ClientShards,
    /// Per-client test-row views (rows of classes the client holds).
    slices: Vec<Vec<usize>>,
    init: ParamSet,
    /// Clients still standing at the end of the run.
    survivors: Vec<usize>,
    dropouts: Vec<usize>,
    /// Classes without a single training row among the survivors.
    unseen_classes: Vec<usize>,
}

impl<'a> RunEnv<'a> {
    fn build(cfg: &'a ExperimentConfig, tag: Option<&str>, seed: u64) -> Result<Self> {
        let data = build_dataset(cfg, seed)?;
        let (train, test) = split_train_test(
            &data,
            cfg.test_fraction,
            rng::derive_seed(seed, &[rng::tag("split")]),
        )?;
        let pspec = cfg.partition.realize(seed);
        pspec.validate(train.num_classes)?;
        let shards = partition(&train, &pspec)?;
        let slices = client_test_slices(&shards, &train, &test);
        let mut init_rng = rng::stream(seed, &[rng::tag("init")]);
        let init = init_classifier(train.dim(), train.num_classes, &cfg.hidden, &mut init_rng)?;
        let k = cfg.partition.num_clients;
        let last_round = cfg.training.rounds.saturating_sub(1);
        let survivors = availability(&cfg.dropout, k, last_round);
        let dropouts: Vec<usize> = (0..k).filter(|c| !survivors.contains(c)).collect();
        let mut held = vec![0usize; train.num_classes];
        for &s in &survivors {
            for &i in shards.shard(s) {
                held[train.labels[i]] += 1;
            }
        }
        let unseen_classes: Vec<usize> = (0..train.num_classes)
            .filter(|&c| held[c] == 0)
            .collect();
        Ok(RunEnv {
            cfg,
            run_id: run_id(cfg, tag, seed)?,
            seed,
            train,
            test,
            shards,
            slices,
            init,
            survivors,
            dropouts,
            unseen_classes,
        })
    }

    fn record(
        &self,
        strategy: &Strategy,
        round: usize,
        client_id: ClientId,
        split: Split,
        metric: impl Into<String>,
        value: f64,
    ) -> MetricsRecord {
        MetricsRecord {
            run_id: self.run_id.clone(),
            seed: self.seed,
            round,
            strategy: strategy.name().to_string(),
            client_id,
            split,
            metric: metric.into(),
            value,
        }
    }

    fn eval_full(&self, params: &ParamSet) -> Result<Evaluation> {
        evaluate(params, &self.test)
    }

    fn eval_slice(&self, params: &ParamSet, client: usize) -> Result<f64> {
        let rows = &self.slices[client];
        if rows.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(evaluate(params, &self.test.subset(rows))?.accuracy)
    }

    /// Missing classes of one client: classes it holds that no survivor
    /// holds.
    fn missing_classes(&self, client: usize) -> Vec<usize> {
        self.shards
            .held_classes(client, &self.train)
            .into_iter()
            .filter(|c| self.unseen_classes.contains(c))
            .collect()
    }

    /// Final per-client records shared by every strategy: accuracy on the
    /// client's own test slice, accuracy on the full test set, and for
    /// dropout clients the per-class and missing-class views.
    fn final_client_records(
        &self,
        strategy: &Strategy,
        client: usize,
        model: &ParamSet,
        out: &mut Vec<MetricsRecord>,
    ) -> Result<()> {
        let last = self.cfg.training.rounds - 1;
        let slice_acc = self.eval_slice(model, client)?;
        let full = self.eval_full(model)?;
        out.push(self.record(
            strategy,
            last,
            ClientId::Client(client),
            Split::Test,
            "accuracy",
            slice_acc,
        ));
        out.push(self.record(
            strategy,
            last,
            ClientId::Client(client),
            Split::Test,
            "global_accuracy",
            full.accuracy,
        ));
        if self.dropouts.contains(&client) {
            for (c, &acc) in full.per_class.iter().enumerate() {
                out.push(self.record(
                    strategy,
                    last,
                    ClientId::Client(client),
                    Split::Test,
                    format!("per_class_accuracy:{c}"),
                    acc,
                ));
            }
            let missing = self.missing_classes(client);
            if !missing.is_empty() {
                let vals: Vec<f64> = missing
                    .iter()
                    .map(|&c| full.per_class[c])
                    .filter(|v| !v.is_nan())
                    .collect();
                let mca = if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                out.push(self.record(
                    strategy,
                    last,
                    ClientId::Client(client),
                    Split::Test,
                    "missing_class_accuracy",
                    mca,
                ));
            }
        }
        Ok(())
    }

    /// Per-class rows of the server-side global model at the final round.
    fn global_per_class_records(
        &self,
        strategy: &Strategy,
        global: &ParamSet,
        out: &mut Vec<MetricsRecord>,
    ) -> Result<()> {
        let last = self.cfg.training.rounds - 1;
        let eval = self.eval_full(global)?;
        for (c, &acc) in eval.per_class.iter().enumerate() {
            out.push(self.record(
                strategy,
                last,
                ClientId::Global,
                Split::Test,
                format!("per_class_accuracy:{c}"),
                acc,
            ));
        }
        Ok(())
    }
}

/// Artifacts of one `apfl` run, kept for the `personalize` CLI path.
pub struct ApflArtifacts {
    pub theta_star: ParamSet,
    pub generator: ParamSet,
    pub personalized: BTreeMap<usize, ParamSet>,
    pub friends: BTreeMap<usize, FriendModel>,
}

/// The local-only baseline: every client trains continuously on its own
/// shard, one configured epoch budget per round, with persistent optimiser
/// state. The per-round "global" record is the mean full-test accuracy of
/// the client models.
fn run_local(env: &RunEnv, strategy: &Strategy) -> Result<Vec<MetricsRecord>> {
    let cfg = &env.cfg.training;
    let mut clients = make_clients(&env.shards, &env.init);
    let mut records = Vec::new();
    for round in 0..cfg.rounds {
        clients.par_iter_mut().try_for_each(|client| {
            let mut r = rng::stream(
                env.seed,
                &[rng::tag("local-cont"), client.id as u64, round as u64],
            );
            let ClientState {
                id, shard, local, adam, ..
            } = client;
            crate::protocol::train_epochs(
                local,
                adam,
                &env.train,
                shard,
                cfg.local_epochs,
                cfg.batch_size,
                &cfg.adam(),
                None,
                &mut r,
            )
            .map(|_| ())
            .map_err(|e| {
                Error::training(format!("local round {round}, client {id}"), e.to_string())
            })
        })?;
        let mut sum = 0.0;
        for client in &clients {
            sum += env.eval_full(&client.local)?.accuracy;
        }
        records.push(env.record(
            strategy,
            round,
            ClientId::Global,
            Split::Test,
            "accuracy",
            sum / clients.len() as f64,
        ));
    }
    for client in &clients {
        env.final_client_records(strategy, client.id, &client.local, &mut records)?;
    }
    Ok(records)
}

/// Shared federated round loop; returns the server state and clients after
/// the configured number of rounds, having appended per-round global rows.
fn run_federated_rounds(
    env: &RunEnv,
    strategy: &Strategy,
    records: &mut Vec<MetricsRecord>,
    mut per_round: impl FnMut(usize, &ServerState, &[ClientState], &mut Vec<MetricsRecord>) -> Result<()>,
) -> Result<(ServerState, Vec<ClientState>)> {
    let tcfg = crate::protocol::TrainingConfig {
        strategy: strategy.clone(),
        ..env.cfg.training.clone()
    };
    let mut server = ServerState::new(env.init.clone());
    let mut clients = make_clients(&env.shards, &env.init);
    let ctx = RoundContext {
        data: &env.train,
        shards: &env.shards,
        seed: env.seed,
    };
    let k = env.cfg.partition.num_clients;
    for round in 0..tcfg.rounds {
        let available = availability(&env.cfg.dropout, k, round);
        match tcfg.aggregation {
            AggregationMode::Sync => {
                run_round_sync(&mut server, &mut clients, &available, &tcfg, &ctx)?
            }
            AggregationMode::Async => {
                run_round_async(&mut server, &mut clients, &available, &tcfg, &ctx)?
            }
        };
        records.push(env.record(
            strategy,
            round,
            ClientId::Global,
            Split::Test,
            "accuracy",
            env.eval_full(&server.global)?.accuracy,
        ));
        per_round(round, &server, &clients, records)?;
    }
    Ok((server, clients))
}

/// Plain FedAvg / FedProx: the final model everywhere is the global one.
fn run_global_only(env: &RunEnv, strategy: &Strategy) -> Result<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    let (server, _clients) =
        run_federated_rounds(env, strategy, &mut records, |_, _, _, _| Ok(()))?;
    env.global_per_class_records(strategy, &server.global, &mut records)?;
    for k in 0..env.cfg.partition.num_clients {
        env.final_client_records(strategy, k, &server.global, &mut records)?;
    }
    Ok(records)
}

/// FedAvg plus per-client fine-tuning of the final global model.
fn run_fedavg_ft(env: &RunEnv, strategy: &Strategy) -> Result<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    let (server, _clients) =
        run_federated_rounds(env, strategy, &mut records, |_, _, _, _| Ok(()))?;
    env.global_per_class_records(strategy, &server.global, &mut records)?;
    let tuned: Vec<(usize, ParamSet)> = (0..env.cfg.partition.num_clients)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(env.seed, &[rng::tag("fine-tune"), k as u64]);
            let base = crate::protocol::TrainingConfig {
                strategy: Strategy::Fedavg,
                ..env.cfg.training.clone()
            };
            let model = local_train(
                &server.global,
                &env.train,
                env.shards.shard(k),
                &base,
                &format!("fine-tune client {k}"),
                &mut r,
            )?;
            Ok((k, model))
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, model) in &tuned {
        env.final_client_records(strategy, *k, model, &mut records)?;
    }
    Ok(records)
}

/// The full `apfl` pipeline: FedAvg rounds, server-side generator training
/// against the frozen survivor classifiers, and per-client personalization
/// with the zero-shot path for dropouts.
fn run_apfl(
    env: &RunEnv,
    strategy: &Strategy,
) -> Result<(Vec<MetricsRecord>, ApflArtifacts)> {
    let gcfg = &env.cfg.generator;
    let rounds = env.cfg.training.rounds;
    let seen: Vec<usize> = (0..env.train.num_classes)
        .filter(|c| !env.unseen_classes.contains(c))
        .collect();
    if seen.is_empty() {
        return Err(Error::config(
            "no class is held by any surviving client; the generator has nothing to learn from",
        ));
    }
    let table = build_semantic_table(
        env.cfg,
        &env.train,
        seen,
        env.unseen_classes.clone(),
        env.seed,
    )?;
    let mut gen_rng = rng::stream(env.seed, &[rng::tag("gen-init")]);
    let omega_init = init_generator(
        env.cfg.noise.dim,
        table.dim(),
        env.train.dim(),
        &gcfg.hidden,
        &mut gen_rng,
    )?;

    let mut records = Vec::new();
    let mut omega: Option<ParamSet> = None;
    let mut last_gen_round: Option<usize> = None;
    let omega_ref = &mut omega;
    let gen_round_ref = &mut last_gen_round;
    let (server, clients) = run_federated_rounds(
        env,
        strategy,
        &mut records,
        |round, _server, clients, recs| {
            let due = (round + 1) % gcfg.train_every == 0 || round + 1 == rounds;
            if !due {
                return Ok(());
            }
            // Teachers: surviving clients that have trained at least once.
            let teachers: Vec<usize> = env
                .survivors
                .iter()
                .copied()
                .filter(|&k| clients[k].last_participation.is_some())
                .collect();
            if teachers.is_empty() {
                log::warn!("round {round}: no trained survivor to teach the generator");
                return Ok(());
            }
            let alpha = ClassProportionTable::from_shards(&env.shards, &env.train, &teachers)?;
            let frozen: Vec<(usize, &ParamSet)> =
                teachers.iter().map(|&k| (k, &clients[k].local)).collect();
            let start = match (&*omega_ref, gcfg.warm_start) {
                (Some(w), true) => w.clone(),
                _ => omega_init.clone(),
            };
            let (trained, stats) = train_generator(
                &start,
                &frozen,
                &alpha,
                &table,
                &env.cfg.noise,
                gcfg,
                rng::derive_seed(env.seed, &[rng::tag("gen-train"), round as u64]),
            )?;
            *omega_ref = Some(trained);
            *gen_round_ref = Some(round);
            if let Some(s) = stats {
                for (metric, value) in
                    [("loss_G", s.loss_g), ("L_cls", s.l_cls), ("L_div", s.l_div)]
                {
                    recs.push(env.record(
                        strategy,
                        round,
                        ClientId::Global,
                        Split::Train,
                        metric,
                        value,
                    ));
                }
            }
            Ok(())
        },
    )?;
    env.global_per_class_records(strategy, &server.global, &mut records)?;

    let omega_final = omega
        .ok_or_else(|| Error::training("apfl", "generator was never trained during the run"))?;
    let gen_tag = format!("round-{}", last_gen_round.unwrap_or(0));
    let pcfg = &env.cfg.personalization;
    let per_client: Vec<(usize, ParamSet, FriendModel)> = (0..env.cfg.partition.num_clients)
        .into_par_iter()
        .map(|k| {
            let pctx = PersonalizeContext {
                train: &env.train,
                shard: env.shards.shard(k),
                omega: &omega_final,
                table: &table,
                noise: &env.cfg.noise,
                theta_star: &server.global,
                hidden: &env.cfg.hidden,
                generator_tag: &gen_tag,
            };
            let mode = if env.dropouts.contains(&k) {
                PersonalizeMode::Dropout
            } else {
                PersonalizeMode::NonDropout {
                    local: &clients[k].local,
                }
            };
            let (personalized, friend) = personalize(k, mode, &pctx, pcfg, env.seed)?;
            Ok((k, personalized, friend))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut personalized_map = BTreeMap::new();
    let mut friends = BTreeMap::new();
    for (k, personalized, friend) in per_client {
        env.final_client_records(strategy, k, &personalized, &mut records)?;
        records.push(env.record(
            strategy,
            rounds - 1,
            ClientId::Client(k),
            Split::Test,
            "friend_accuracy",
            env.eval_full(&friend.params)?.accuracy,
        ));
        personalized_map.insert(k, personalized);
        friends.insert(k, friend);
    }
    Ok((
        records,
        ApflArtifacts {
            theta_star: server.global,
            generator: omega_final,
            personalized: personalized_map,
            friends,
        },
    ))
}

fn run_strategy(env: &RunEnv, strategy: &Strategy) -> Result<Vec<MetricsRecord>> {
    match strategy {
        Strategy::Local => run_local(env, strategy),
        Strategy::Fedavg | Strategy::Fedprox { .. } => run_global_only(env, strategy),
        Strategy::FedavgFt => run_fedavg_ft(env, strategy),
        Strategy::Apfl => run_apfl(env, strategy).map(|(records, _)| records),
    }
}

/// Run every (repeat, strategy) combination and return the records in
/// canonical order.
pub fn run_experiment(cfg: &ExperimentConfig, tag: Option<&str>) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for rep in 0..cfg.repeats {
        let seed = cfg.repeat_seed(rep);
        let env = RunEnv::build(cfg, tag, seed)?;
        for strategy in &cfg.strategies {
            let got = run_strategy(&env, strategy).map_err(|e| {
                if e.is_validation() {
                    e
                } else {
                    Error::training(
                        format!("run {} strategy {}", env.run_id, strategy.name()),
                        e.to_string(),
                    )
                }
            })?;
            records.extend(got);
        }
    }
    crate::metrics::sort_canonical(&mut records);
    crate::metrics::check_unique(&records)?;
    Ok(records)
}

/// Run and persist to CSV; returns the path back.
pub fn run_experiment_to_csv(
    cfg: &ExperimentConfig,
    tag: Option<&str>,
    out: &Path,
) -> Result<PathBuf> {
    let records = run_experiment(cfg, tag)?;
    crate::metrics::write_csv(out, &records)?;
    Ok(out.to_path_buf())
}

/// Swept hyperparameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NoiseDim,
    SamplesPerClass,
    Alpha,
    Beta,
    EmbeddingTable,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise_dim" => Ok(SweepAxis::NoiseDim),
            "n_s" => Ok(SweepAxis::SamplesPerClass),
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "embedding_table" => Ok(SweepAxis::EmbeddingTable),
            other => Err(Error::config(format!(
                "unknown sweep axis {other:?}; expected noise_dim, n_s, alpha, beta, or embedding_table"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NoiseDim => "noise_dim",
            SweepAxis::SamplesPerClass => "n_s",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::EmbeddingTable => "embedding_table",
        }
    }

    /// A new config with this axis set to `value`.
    fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        let parse_usize = |value: &str| -> Result<usize> {
            value.parse().map_err(|_| {
                Error::config(format!("{}: value {value:?} must be a positive integer", self.name()))
            })
        };
        let parse_f64 = |value: &str| -> Result<f64> {
            value.parse().map_err(|_| {
                Error::config(format!("{}: value {value:?} must be a number", self.name()))
            })
        };
        match self {
            SweepAxis::NoiseDim => out.noise.dim = parse_usize(value)?,
            SweepAxis::SamplesPerClass => out.generator.samples_per_class = parse_usize(value)?,
            SweepAxis::Alpha => match &mut out.partition.mode {
                crate::partition::PartitionMode::Dirichlet { alpha } => {
                    *alpha = parse_f64(value)?
                }
                _ => {
                    return Err(Error::config(
                        "alpha: sweeping Dirichlet concentration requires a dirichlet partition",
                    ))
                }
            },
            SweepAxis::Beta => out.personalization.beta = parse_f64(value)?,
            SweepAxis::EmbeddingTable => {
                out.embeddings = EmbeddingSpec::parse_sweep_value(value)?
            }
        }
        out.validate()?;
        Ok(out)
    }
}

fn sanitize_tag(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect()
}

/// One experiment per value, all records concatenated; each block's run id
/// carries an `axis-value` tag.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<MetricsRecord>> {
    if values.is_empty() {
        return Err(Error::config("sweep: need at least one value"));
    }
    let mut records = Vec::new();
    for value in values {
        let patched = axis.apply(cfg, value)?;
        let tag = format!("{}-{}", axis.name(), sanitize_tag(value));
        records.extend(run_experiment(&patched, Some(&tag))?);
    }
    crate::metrics::sort_canonical(&mut records);
    crate::metrics::check_unique(&records)?;
    Ok(records)
}

/// Run the `apfl` pipeline for the first repeat and write every produced
/// model as a binary parameter file; returns the written paths.
pub fn run_personalize(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if !cfg.strategies.iter().any(|s| matches!(s, Strategy::Apfl)) {
        return Err(Error::config(
            "personalize: the strategy list must include apfl",
        ));
    }
    let env = RunEnv::build(cfg, None, cfg.repeat_seed(0))?;
    let (_records, artifacts) = run_apfl(&env, &Strategy::Apfl)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut save = |name: String, params: &ParamSet| -> Result<()> {
        let path = out_dir.join(name);
        save_params(params, &path)?;
        written.push(path);
        Ok(())
    };
    save("global.apfl".into(), &artifacts.theta_star)?;
    save("generator.apfl".into(), &artifacts.generator)?;
    for (k, params) in &artifacts.personalized {
        save(format!("client-{k}.apfl"), params)?;
    }
    Ok(written)
}

/// Build (train, test, shards) for the partition CLI command.
pub fn build_partition(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, Dataset, ClientShards)> {
    cfg.validate()?;
    let data = build_dataset(cfg, seed)?;
    let (train, test) = split_train_test(
        &data,
        cfg.test_fraction,
        rng::derive_seed(seed, &[rng::tag("split")]),
    )?;
    let pspec = cfg.partition.realize(seed);
    pspec.validate(train.num_classes)?;
    let shards = partition(&train, &pspec)?;
    Ok((train, test, shards))
}
