//! Client-side data distribution: Dirichlet and pathological label-skew
//! partitions, monopoly placement, and dropout scheduling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Heterogeneity regime for splitting the training set across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionMode {
    /// Per class, client proportions drawn from a symmetric Dirichlet with
    /// concentration `alpha`; smaller `alpha` means stronger label skew.
    Dirichlet { alpha: f64 },
    /// Every client holds exactly `gamma` distinct classes.
    Pathological { gamma: usize },
}

/// Classes held exclusively by one designated client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monopoly {
    pub client_id: usize,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_clients: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monopoly: Option<Monopoly>,
}

impl PartitionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::config("partition needs at least 2 clients"));
        }
        match self.mode {
            PartitionMode::Dirichlet { alpha } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::config(format!(
                        "dirichlet alpha must be positive and finite, got {alpha}"
                    )));
                }
            }
            PartitionMode::Pathological { gamma } => {
                if gamma == 0 || gamma > num_classes {
                    return Err(Error::config(format!(
                        "pathological gamma must lie in [1, {num_classes}], got {gamma}"
                    )));
                }
                if self.num_clients * gamma < num_classes {
                    return Err(Error::config(format!(
                        "num_clients * gamma = {} cannot cover {num_classes} classes",
                        self.num_clients * gamma
                    )));
                }
            }
        }
        if let Some(m) = &self.monopoly {
            if m.client_id >= self.num_clients {
                return Err(Error::config(format!(
                    "monopoly client {} out of range for {} clients",
                    m.client_id, self.num_clients
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &c in &m.classes {
                if c >= num_classes {
                    return Err(Error::config(format!(
                        "monopoly class {c} out of range for {num_classes} classes"
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::config(format!("monopoly class {c} listed twice")));
                }
            }
            if let PartitionMode::Pathological { gamma } = self.mode {
                if m.classes.len() > gamma {
                    return Err(Error::config(format!(
                        "monopoly lists {} classes but gamma is {gamma}",
                        m.classes.len()
                    )));
                }
                if gamma > num_classes - m.classes.len() {
                    return Err(Error::config(format!(
                        "non-monopoly clients cannot pick {gamma} distinct classes from the {} left outside the monopoly",
                        num_classes - m.classes.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Clients that permanently stop participating at `dropout_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DropoutSchedule {
    #[serde(default)]
    pub dropout_set: Vec<usize>,
    #[serde(default)]
    pub dropout_round: usize,
}

impl DropoutSchedule {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &k in &self.dropout_set {
            if k >= num_clients {
                return Err(Error::config(format!(
                    "dropout client {k} out of range for {num_clients} clients"
                )));
            }
            if !seen.insert(k) {
                return Err(Error::config(format!("dropout client {k} listed twice")));
            }
        }
        if self.dropout_set.len() >= num_clients {
            return Err(Error::config(
                "dropout set must leave at least one participating client",
            ));
        }
        Ok(())
    }

    pub fn is_dropout(&self, client: usize) -> bool {
        self.dropout_set.contains(&client)
    }

    /// Non-dropout client ids, ascending.
    pub fn survivors(&self, num_clients: usize) -> Vec<usize> {
        (0..num_clients).filter(|k| !self.is_dropout(*k)).collect()
    }
}

/// Clients available to participate in the given round: everyone before
/// `dropout_round`, the non-dropout set from then on.
pub fn availability(schedule: &DropoutSchedule, num_clients: usize, round: usize) -> Vec<usize> {
    if round < schedule.dropout_round {
        (0..num_clients).collect()
    } else {
        schedule.survivors(num_clients)
    }
}

/// Per-client row-index lists into the training set. Shards are pairwise
/// disjoint and jointly cover every training row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShards {
    shards: Vec<Vec<usize>>,
}

impl ClientShards {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    /// Aggregation weights |D_k| / Σ|D_j| over the given clients.
    pub fn weights(&self, clients: &[usize]) -> Vec<f64> {
        let total: usize = clients.iter().map(|&k| self.shards[k].len()).sum();
        clients
            .iter()
            .map(|&k| self.shards[k].len() as f64 / total as f64)
            .collect()
    }

    /// Classes with at least one training row on the client, ascending.
    pub fn held_classes(&self, client: usize, train: &Dataset) -> Vec<usize> {
        let mut present = vec![false; train.num_classes];
        for &i in &self.shards[client] {
            present[train.labels[i]] = true;
        }
        present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(c, _)| c)
            .collect()
    }

    /// JSON-ready map {client id -> row indices}, keys in numeric order.
    pub fn to_map(&self) -> BTreeMap<usize, Vec<usize>> {
        self.shards.iter().cloned().enumerate().collect()
    }
}

/// Apportion `total` integer units proportionally to `weights` using the
/// largest-remainder rule. Floors of the exact quotas are assigned first;
/// leftover units go to the largest fractional remainders, ties broken by
/// lower index. The result sums to `total` exactly and each entry deviates
/// from its exact quota by less than 1.
pub fn largest_remainder(weights: &[f64], total: usize) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::Partition("cannot apportion to zero targets".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Partition(
            "apportionment weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Partition(
            "apportionment weights must not all be zero".into(),
        ));
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| total as f64 * w / sum)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

fn chunk_class_rows(
    shards: &mut [Vec<usize>],
    class_rows: &[usize],
    holders: &[usize],
    counts: &[usize],
) {
    let mut cursor = 0;
    for (&k, &n) in holders.iter().zip(counts) {
        shards[k].extend_from_slice(&class_rows[cursor..cursor + n]);
        cursor += n;
    }
}

/// Dirichlet label-skew partition: for each class, client proportions are
/// drawn from Dir(alpha · 1_K) and the class's rows are apportioned by
/// largest remainder. Resamples (up to 100 attempts) until every client
/// owns at least one row.
pub fn dirichlet_partition(train: &Dataset, spec: &PartitionSpec) -> Result<ClientShards> {
    let alpha = match spec.mode {
        PartitionMode::Dirichlet { alpha } => alpha,
        _ => return Err(Error::config("dirichlet_partition needs dirichlet mode")),
    };
    spec.validate(train.num_classes)?;
    let k = spec.num_clients;
    let by_class = train.indices_by_class();
    let gamma_dist = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::config(format!("invalid dirichlet alpha {alpha}: {e}")))?;
    let mut r = rng::stream(spec.seed, &[rng::tag("dirichlet")]);
    for _attempt in 0..100 {
        let mut shards = vec![Vec::new(); k];
        for class_rows in &by_class {
            if class_rows.is_empty() {
                continue;
            }
            // Dirichlet draw via normalized Gamma variates; redraw the
            // rare all-underflow vector so normalization stays finite.
            let mut draws = vec![0.0f64; k];
            loop {
                for d in draws.iter_mut() {
                    *d = gamma_dist.sample(&mut r);
                }
                let s: f64 = draws.iter().sum();
                if s > 0.0 && s.is_finite() {
                    for d in draws.iter_mut() {
                        *d /= s;
                    }
                    break;
                }
            }
            let counts = largest_remainder(&draws, class_rows.len())?;
            let holders: Vec<usize> = (0..k).collect();
            chunk_class_rows(&mut shards, class_rows, &holders, &counts);
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(ClientShards { shards });
        }
    }
    Err(Error::Partition(format!(
        "no dirichlet draw left every one of {k} clients non-empty after 100 attempts; use more data or larger alpha"
    )))
}

/// Pathological partition: every client holds exactly gamma distinct
/// classes; monopoly classes appear on exactly one client; each class's
/// rows are split as evenly as possible among its holders.
pub fn pathological_partition(train: &Dataset, spec: &PartitionSpec) -> Result<ClientShards> {
    let gamma = match spec.mode {
        PartitionMode::Pathological { gamma } => gamma,
        _ => {
            return Err(Error::config(
                "pathological_partition needs pathological mode",
            ))
        }
    };
    spec.validate(train.num_classes)?;
    let k = spec.num_clients;
    let c = train.num_classes;
    let mut r = rng::stream(spec.seed, &[rng::tag("pathological")]);

    let mut classes_of: Vec<Vec<usize>> = vec![Vec::new(); k];
    let monopoly_classes: Vec<usize> = spec
        .monopoly
        .as_ref()
        .map(|m| m.classes.clone())
        .unwrap_or_default();
    if let Some(m) = &spec.monopoly {
        classes_of[m.client_id] = {
            let mut cls = m.classes.clone();
            cls.sort_unstable();
            cls
        };
    }

    // Coverage pass: place every open class once, in seeded order, on a
    // seeded choice among clients with spare capacity not yet holding it.
    let mut open: Vec<usize> = (0..c).filter(|y| !monopoly_classes.contains(y)).collect();
    open.shuffle(&mut r);
    for y in open {
        let candidates: Vec<usize> = (0..k)
            .filter(|&cl| classes_of[cl].len() < gamma && !classes_of[cl].contains(&y))
            .collect();
        let chosen = *candidates
            .get(r.random_range(0..candidates.len().max(1)))
            .ok_or_else(|| {
                Error::Partition(format!("no client has capacity left for class {y}"))
            })?;
        classes_of[chosen].push(y);
    }

    // Fill pass: top every client up to exactly gamma classes with seeded
    // draws from the non-monopoly classes it does not yet hold.
    for cl in 0..k {
        while classes_of[cl].len() < gamma {
            let candidates: Vec<usize> = (0..c)
                .filter(|y| !monopoly_classes.contains(y) && !classes_of[cl].contains(y))
                .collect();
            if candidates.is_empty() {
                return Err(Error::Partition(format!(
                    "client {cl} cannot reach {gamma} distinct classes"
                )));
            }
            let y = candidates[r.random_range(0..candidates.len())];
            classes_of[cl].push(y);
        }
        classes_of[cl].sort_unstable();
    }

    // Row assignment: split each class evenly across its holders.
    let by_class = train.indices_by_class();
    let mut shards = vec![Vec::new(); k];
    for (y, class_rows) in by_class.iter().enumerate() {
        let holders: Vec<usize> = (0..k).filter(|&cl| classes_of[cl].contains(&y)).collect();
        if holders.is_empty() || class_rows.is_empty() {
            continue;
        }
        let counts = largest_remainder(&vec![1.0; holders.len()], class_rows.len())?;
        chunk_class_rows(&mut shards, class_rows, &holders, &counts);
    }
    for (cl, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Partition(format!(
                "client {cl} received no rows; its classes have too few samples"
            )));
        }
    }
    Ok(ClientShards { shards })
}

/// Partition dispatch on the spec's mode.
pub fn partition(train: &Dataset, spec: &PartitionSpec) -> Result<ClientShards> {
    match spec.mode {
        PartitionMode::Dirichlet { .. } => dirichlet_partition(train, spec),
        PartitionMode::Pathological { .. } => pathological_partition(train, spec),
    }
}

/// Per-client evaluation views of the shared test set: client k's slice is
/// every test row whose class has at least one training row on k. Slices
/// may overlap across clients; they are views, not a partition.
pub fn client_test_slices(
    shards: &ClientShards,
    train: &Dataset,
    test: &Dataset,
) -> Vec<Vec<usize>> {
    let test_by_class = test.indices_by_class();
    (0..shards.num_clients())
        .map(|k| {
            let mut slice = Vec::new();
            for y in shards.held_classes(k, train) {
                slice.extend_from_slice(&test_by_class[y]);
            }
            slice.sort_unstable();
            slice
        })
        .collect()
}
