//! Per-client personalization: synthetic data generation matched to a
//! client's label distribution, friend-model training on that synthetic
//! data, the decoupled interpolation that blends it with the client's own
//! model, and the zero-shot path for dropout clients.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelHistogram};
use crate::error::{Error, Result};
use crate::generator::{generate, sample_noise, NoiseSpec, SemanticTable};
use crate::numerics::{AdamParams, AdamState, ParamSet, Tensor};
use crate::partition::largest_remainder;
use crate::protocol::init_classifier;
use crate::rng;

/// Personalization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonalizationConfig {
    /// Weight on the client-side model in the interpolation; the friend
    /// model gets `1 - beta`.
    pub beta: f64,
    /// Friend-model training epochs (also used when localizing the global
    /// model on a dropout client's shard).
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Synthetic samples per client.
    pub budget: usize,
    /// Dropout clients additionally receive this multiple of `budget` as
    /// seen-class samples, spread uniformly over all seen classes so the
    /// friend model's decision boundary covers the full label space.
    pub dropout_seen_ratio: f64,
}

impl Default for PersonalizationConfig {
    fn default() -> Self {
        PersonalizationConfig {
            beta: 0.1,
            epochs: 20,
            batch_size: 50,
            learning_rate: 2e-4,
            budget: 600,
            dropout_seen_ratio: 1.0,
        }
    }
}

impl PersonalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!(
                "personalization.beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.budget == 0 {
            return Err(Error::config("personalization.budget must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("personalization.batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "personalization.learning_rate must be positive",
            ));
        }
        if !(self.dropout_seen_ratio >= 0.0) || !self.dropout_seen_ratio.is_finite() {
            return Err(Error::config(
                "personalization.dropout_seen_ratio must be a finite non-negative number",
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams::new(self.learning_rate)
    }
}

/// Record of what produced a friend model's training data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FriendProvenance {
    /// Caller-supplied tag naming the generator checkpoint.
    pub generator: String,
    /// Synthetic label counts the model was trained on.
    pub label_counts: Vec<usize>,
}

/// Classifier trained purely on synthetic samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FriendModel {
    pub params: ParamSet,
    pub provenance: FriendProvenance,
}

/// Apportion `budget` across the present classes of `hist` by largest
/// remainder, then guarantee every present class at least one sample by
/// taking from the largest allocations.
fn apportion_budget(hist: &LabelHistogram, budget: usize) -> Result<Vec<(usize, usize)>> {
    let present = hist.present_classes();
    if present.is_empty() {
        return Err(Error::config("synthesis needs a non-empty label histogram"));
    }
    if budget < present.len() {
        return Err(Error::config(format!(
            "synthesis budget {budget} is smaller than the {} locally present classes",
            present.len()
        )));
    }
    let weights: Vec<f64> = present
        .iter()
        .map(|&c| hist.counts()[c] as f64)
        .collect();
    let mut counts = largest_remainder(&weights, budget)?;
    while let Some(zero) = counts.iter().position(|&c| c == 0) {
        let richest = (0..counts.len())
            .max_by_key(|&i| counts[i])
            .expect("non-empty");
        counts[richest] -= 1;
        counts[zero] += 1;
    }
    Ok(present.into_iter().zip(counts).collect())
}

/// Synthesize a labelled dataset whose label counts follow `hist`
/// proportionally (largest remainder over the present classes, each present
/// class getting at least one sample).
pub fn synthesize_for_client(
    omega: &ParamSet,
    hist: &LabelHistogram,
    budget: usize,
    table: &SemanticTable,
    noise: &NoiseSpec,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    let plan = apportion_budget(hist, budget)?;
    synthesize_plan(omega, &plan, table, noise, num_classes, seed)
}

/// Synthesize `count` samples for each `(class, count)` entry.
fn synthesize_plan(
    omega: &ParamSet,
    plan: &[(usize, usize)],
    table: &SemanticTable,
    noise: &NoiseSpec,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for &(class, count) in plan {
        if count == 0 {
            continue;
        }
        let z = sample_noise(
            count,
            noise,
            rng::derive_seed(seed, &[rng::tag("synthesize"), class as u64]),
        )?;
        let x = generate(omega, &z, &vec![class; count], table)?;
        for i in 0..count {
            rows.push(x.row(i).to_vec());
            labels.push(class);
        }
    }
    let features = Tensor::from_rows(&rows)?;
    Dataset::new(features, labels, num_classes)
}

/// Train a classifier from scratch on synthetic data only.
pub fn train_friend_model(
    synthetic: &Dataset,
    hidden: &[usize],
    cfg: &PersonalizationConfig,
    generator_tag: &str,
    seed: u64,
) -> Result<FriendModel> {
    cfg.validate()?;
    if synthetic.is_empty() {
        return Err(Error::config("friend model needs a non-empty synthetic set"));
    }
    let mut init_rng = rng::stream(seed, &[rng::tag("friend-init")]);
    let mut params = init_classifier(
        synthetic.dim(),
        synthetic.num_classes,
        hidden,
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(&params);
    let shard: Vec<usize> = (0..synthetic.len()).collect();
    let mut train_rng = rng::stream(seed, &[rng::tag("friend-train")]);
    crate::protocol::train_epochs(
        &mut params,
        &mut adam,
        synthetic,
        &shard,
        cfg.epochs,
        cfg.batch_size,
        &cfg.adam(),
        None,
        &mut train_rng,
    )
    .map_err(|e| Error::training("friend model", e.to_string()))?;
    Ok(FriendModel {
        params,
        provenance: FriendProvenance {
            generator: generator_tag.to_string(),
            label_counts: synthetic.label_histogram().counts().to_vec(),
        },
    })
}

/// Element-wise `beta * a + (1 - beta) * b`, exact at the endpoints.
pub fn interpolate(a: &ParamSet, b: &ParamSet, beta: f64) -> Result<ParamSet> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!(
            "interpolation weight must lie in [0, 1], got {beta}"
        )));
    }
    if !a.layout_equal(b) {
        return Err(Error::Dimension {
            context: "interpolation operands".into(),
            expected: a.num_params(),
            actual: b.num_params(),
        });
    }
    if beta == 1.0 {
        return Ok(a.clone());
    }
    if beta == 0.0 {
        return Ok(b.clone());
    }
    a.affine(beta, b, 1.0 - beta)
}

/// Fine-tune the global model on a dropout client's real local data. An
/// empty shard returns the global model unchanged with a warning.
pub fn localize_global(
    theta_star: &ParamSet,
    data: &Dataset,
    shard: &[usize],
    cfg: &PersonalizationConfig,
    seed: u64,
) -> Result<ParamSet> {
    cfg.validate()?;
    if shard.is_empty() {
        log::warn!("localizing on an empty shard: returning the global model unchanged");
        return Ok(theta_star.clone());
    }
    let mut params = theta_star.clone();
    let mut adam = AdamState::new(&params);
    let mut train_rng = rng::stream(seed, &[rng::tag("localize")]);
    crate::protocol::train_epochs(
        &mut params,
        &mut adam,
        data,
        shard,
        cfg.epochs,
        cfg.batch_size,
        &cfg.adam(),
        None,
        &mut train_rng,
    )
    .map_err(|e| Error::training("localized global model", e.to_string()))?;
    Ok(params)
}

/// Which interpolation anchor a client uses.
#[derive(Debug, Clone, Copy)]
pub enum PersonalizeMode<'a> {
    /// The client participated in training: anchor on its own final local
    /// model and synthesize its seen classes only.
    NonDropout { local: &'a ParamSet },
    /// The client dropped out: anchor on the localized global model and
    /// include zero-shot synthesis of its unseen classes.
    Dropout,
}

/// Shared read-only inputs for personalizing any client.
#[derive(Clone, Copy)]
pub struct PersonalizeContext<'a> {
    pub train: &'a Dataset,
    pub shard: &'a [usize],
    pub omega: &'a ParamSet,
    pub table: &'a SemanticTable,
    pub noise: &'a NoiseSpec,
    pub theta_star: &'a ParamSet,
    pub hidden: &'a [usize],
    /// Tag recorded in the friend model's provenance.
    pub generator_tag: &'a str,
}

/// Build one client's personalized model; also returns the friend model so
/// callers can evaluate or persist it.
pub fn personalize(
    client: usize,
    mode: PersonalizeMode<'_>,
    ctx: &PersonalizeContext<'_>,
    cfg: &PersonalizationConfig,
    seed: u64,
) -> Result<(ParamSet, FriendModel)> {
    cfg.validate()?;
    let labels: Vec<usize> = ctx.shard.iter().map(|&i| ctx.train.labels[i]).collect();
    let hist = LabelHistogram::from_labels(&labels, ctx.train.num_classes);
    let synth_seed = rng::derive_seed(seed, &[rng::tag("personalize"), client as u64]);
    let synthetic = match mode {
        PersonalizeMode::NonDropout { .. } => synthesize_for_client(
            ctx.omega,
            &hist,
            cfg.budget,
            ctx.table,
            ctx.noise,
            ctx.train.num_classes,
            synth_seed,
        )?,
        PersonalizeMode::Dropout => {
            // Local classes split into zero-shot (unseen) and seen parts;
            // the seen part is spread uniformly over ALL seen classes so
            // the friend model covers the full label space.
            let unseen_counts: Vec<usize> = (0..ctx.train.num_classes)
                .map(|c| {
                    if ctx.table.unseen().contains(&c) {
                        hist.counts()[c]
                    } else {
                        0
                    }
                })
                .collect();
            let unseen_hist = LabelHistogram::from_counts(unseen_counts);
            let mut plan = Vec::new();
            if !unseen_hist.present_classes().is_empty() {
                plan.extend(apportion_budget(&unseen_hist, cfg.budget)?);
            }
            let seen_budget = (cfg.budget as f64 * cfg.dropout_seen_ratio).round() as usize;
            if seen_budget > 0 && !ctx.table.seen().is_empty() {
                let uniform: Vec<f64> = vec![1.0; ctx.table.seen().len()];
                let counts = largest_remainder(&uniform, seen_budget)?;
                plan.extend(ctx.table.seen().iter().copied().zip(counts));
            }
            if plan.iter().all(|&(_, n)| n == 0) {
                return Err(Error::config(
                    "dropout synthesis produced an empty plan (no unseen classes and zero seen budget)",
                ));
            }
            synthesize_plan(
                ctx.omega,
                &plan,
                ctx.table,
                ctx.noise,
                ctx.train.num_classes,
                synth_seed,
            )?
        }
    };
    let friend = train_friend_model(
        &synthetic,
        ctx.hidden,
        cfg,
        ctx.generator_tag,
        rng::derive_seed(seed, &[rng::tag("friend"), client as u64]),
    )?;
    let anchor = match mode {
        PersonalizeMode::NonDropout { local } => local.clone(),
        PersonalizeMode::Dropout => localize_global(
            ctx.theta_star,
            ctx.train,
            ctx.shard,
            cfg,
            rng::derive_seed(seed, &[rng::tag("localize"), client as u64]),
        )?,
    };
    let personalized = interpolate(&anchor, &friend.params, cfg.beta)?;
    Ok((personalized, friend))
}
