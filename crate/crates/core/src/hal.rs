//! Hierarchical query engine: mini-batch partitioning, proportional budget
//! allocation, adaptive cluster counts, cluster-uncertainty ranking, and
//! in-cluster selection.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::UncertaintyVector;
use crate::pool::PoolState;
use crate::rng::stream_rng;
use crate::spectral::{spectral_cluster_with, ClusterAssignment, EigenOptions};

/// In-cluster representative selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InClusterSelection {
    /// Seeded uniform draw from the cluster.
    SRandom,
    /// The member closest to the cluster mean.
    SCentroid,
    /// The member with the highest uncertainty.
    SUncertainty,
}

/// How per-cluster uncertainties are aggregated for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterRanking {
    /// Sum of member uncertainties (the default).
    Sum,
    /// Mean of member uncertainties.
    Mean,
}

/// Query-engine configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalConfig {
    /// Mini-batch size S for scalable clustering.
    pub minibatch_size: usize,
    /// Cluster multiplier lambda; clusters per batch = lambda * budget.
    pub cluster_multiplier: f64,
    pub k_neighbors: usize,
    pub in_cluster: InClusterSelection,
    pub ranking: ClusterRanking,
    pub seed: u64,
}

impl Default for HalConfig {
    fn default() -> Self {
        HalConfig {
            minibatch_size: 10_000,
            cluster_multiplier: 3.0,
            k_neighbors: 40,
            in_cluster: InClusterSelection::SUncertainty,
            ranking: ClusterRanking::Sum,
            seed: 0,
        }
    }
}

impl HalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size < 2 {
            return Err(Error::contract("minibatch_size must be at least 2"));
        }
        if self.cluster_multiplier < 1.0 {
            return Err(Error::contract("cluster_multiplier must be at least 1"));
        }
        if self.k_neighbors < 1 {
            return Err(Error::contract("k_neighbors must be at least 1"));
        }
        Ok(())
    }
}

/// Per-batch provenance of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProvenance {
    pub batch_index: usize,
    pub batch_size: usize,
    pub budget: usize,
    /// Spectral cluster count; 0 when the batch was skipped or selected
    /// without clustering.
    pub num_clusters: usize,
    /// Selected global indices, in selection order.
    pub selected: Vec<usize>,
    pub seconds: f64,
}

/// The indices chosen by one query, with per-batch provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    indices: Vec<usize>,
    per_batch: Vec<BatchProvenance>,
}

impl QuerySet {
    pub(crate) fn from_batches(per_batch: Vec<BatchProvenance>) -> Self {
        let indices = per_batch
            .iter()
            .flat_map(|b| b.selected.iter().copied())
            .collect();
        QuerySet { indices, per_batch }
    }

    /// Single-batch query set (used by the flat baseline strategies).
    pub(crate) fn single_batch(indices: Vec<usize>, batch_size: usize, seconds: f64) -> Self {
        let budget = indices.len();
        QuerySet {
            indices: indices.clone(),
            per_batch: vec![BatchProvenance {
                batch_index: 0,
                batch_size,
                budget,
                num_clusters: 0,
                selected: indices,
                seconds,
            }],
        }
    }

    /// Selected global indices in selection order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn per_batch(&self) -> &[BatchProvenance] {
        &self.per_batch
    }
}

/// Shuffle the unlabeled indices and split them into contiguous chunks of
/// size `s`; the final chunk keeps the remainder. `K = ceil(N/s)` batches.
pub fn partition_minibatches(
    unlabeled: &[usize],
    s: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if unlabeled.is_empty() {
        return Err(Error::contract("cannot partition an empty pool"));
    }
    if s < 2 {
        return Err(Error::contract("minibatch size must be at least 2"));
    }
    let mut shuffled = unlabeled.to_vec();
    shuffled.shuffle(&mut stream_rng(seed, 0));
    Ok(shuffled.chunks(s).map(|c| c.to_vec()).collect())
}

/// Proportional budget allocation: `floor(b * size/total)' per batch with
/// the remainder on the last, then greedy repair so no batch exceeds its
/// size (spare capacity is consumed in descending size order).
pub fn allocate_budget(batch_sizes: &[usize], budget: usize) -> Result<Vec<usize>> {
    let total: usize = batch_sizes.iter().sum();
    if budget > total {
        return Err(Error::contract(format!(
            "budget {budget} exceeds pool of {total}"
        )));
    }
    if batch_sizes.is_empty() {
        return Err(Error::contract("no batches to allocate over"));
    }
    let k = batch_sizes.len();
    let mut budgets = vec![0usize; k];
    let mut assigned = 0usize;
    for (i, &size) in batch_sizes.iter().enumerate().take(k - 1) {
        budgets[i] = budget * size / total; // floor
        assigned += budgets[i];
    }
    budgets[k - 1] = budget - assigned;

    // Only the remainder batch can overflow; push the excess to batches
    // with spare capacity, largest first.
    if budgets[k - 1] > batch_sizes[k - 1] {
        let mut excess = budgets[k - 1] - batch_sizes[k - 1];
        budgets[k - 1] = batch_sizes[k - 1];
        let mut order: Vec<usize> = (0..k - 1).collect();
        order.sort_by(|&a, &b| batch_sizes[b].cmp(&batch_sizes[a]).then(a.cmp(&b)));
        for i in order {
            if excess == 0 {
                break;
            }
            let spare = batch_sizes[i] - budgets[i];
            let take = spare.min(excess);
            budgets[i] += take;
            excess -= take;
        }
        if excess > 0 {
            return Err(Error::contract("budget repair failed: pool too small"));
        }
    }
    Ok(budgets)
}

/// Adaptive spectral cluster count `K_b = min(round(lambda*B_b), N_b - 1)`,
/// floored at `max(B_b, 1)`. A zero budget yields zero (batch skipped).
pub fn num_clusters(lambda: f64, batch_budget: usize, batch_size: usize) -> usize {
    if batch_budget == 0 {
        return 0;
    }
    let raw = (lambda * batch_budget as f64).round() as usize;
    raw.min(batch_size.saturating_sub(1)).max(batch_budget.max(1))
}

/// Clusters ranked by descending aggregated uncertainty; ties broken by
/// the smaller cluster index.
pub fn rank_clusters(assignment: &ClusterAssignment, scores: &[f64]) -> Vec<usize> {
    rank_clusters_by(assignment, scores, ClusterRanking::Sum)
}

pub fn rank_clusters_by(
    assignment: &ClusterAssignment,
    scores: &[f64],
    ranking: ClusterRanking,
) -> Vec<usize> {
    debug_assert_eq!(assignment.len(), scores.len());
    let k = assignment.k();
    let mut totals = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.as_slice().iter().enumerate() {
        totals[c] += scores[i];
        counts[c] += 1;
    }
    if ranking == ClusterRanking::Mean {
        for c in 0..k {
            if counts[c] > 0 {
                totals[c] /= counts[c] as f64;
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        totals[b]
            .partial_cmp(&totals[a])
            .expect("finite uncertainty")
            .then(a.cmp(&b))
    });
    order
}

/// One representative from a cluster, by the configured rule. `members`
/// holds batch-local positions; `scores` and `features` are indexed by
/// those positions.
pub fn select_in_cluster(
    members: &[usize],
    features: ArrayView2<'_, f64>,
    scores: &[f64],
    mode: InClusterSelection,
    rng: &mut ChaCha8Rng,
) -> usize {
    debug_assert!(!members.is_empty());
    match mode {
        InClusterSelection::SUncertainty => {
            let mut best = members[0];
            let mut best_s = scores[best];
            for &m in &members[1..] {
                if scores[m] > best_s {
                    best = m;
                    best_s = scores[m];
                }
            }
            best
        }
        InClusterSelection::SCentroid => {
            let d = features.ncols();
            let mut mean = vec![0.0f64; d];
            for &m in members {
                for (j, v) in features.row(m).iter().enumerate() {
                    mean[j] += v;
                }
            }
            let inv = 1.0 / members.len() as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
            let mut best = members[0];
            let mut best_d = f64::INFINITY;
            for &m in members {
                let dist: f64 = features
                    .row(m)
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_d {
                    best_d = dist;
                    best = m;
                }
            }
            best
        }
        InClusterSelection::SRandom => members[rng.random_range(0..members.len())],
    }
}

// Seed stream tags within a query.
const STREAM_PARTITION: u64 = 0;
const STREAM_BATCH_BASE: u64 = 1000;
const STREAM_PICK_BASE: u64 = 2_000_000;

/// Seed used for the mini-batch shuffle of a query with config seed
/// `cfg_seed`. Exposed so tests can reconstruct the partition.
pub fn partition_seed(cfg_seed: u64) -> u64 {
    crate::rng::derive_seed(cfg_seed, STREAM_PARTITION)
}

/// Seed used for the spectral clustering of batch `batch_index`.
pub fn cluster_seed(cfg_seed: u64, batch_index: usize) -> u64 {
    crate::rng::derive_seed(cfg_seed, STREAM_BATCH_BASE + batch_index as u64)
}

/// The full hierarchical query: partition the unlabeled pool, allocate the
/// budget proportionally, spectrally cluster each batch, rank clusters by
/// aggregated uncertainty, and pick one representative from each of the
/// top-`B_b` clusters.
pub fn hal_query(
    features: &FeatureMatrix,
    uncertainty: &UncertaintyVector,
    pool: &PoolState,
    budget: usize,
    cfg: &HalConfig,
) -> Result<QuerySet> {
    hal_query_with(features, uncertainty, pool, budget, cfg, &EigenOptions::default())
}

pub fn hal_query_with(
    features: &FeatureMatrix,
    uncertainty: &UncertaintyVector,
    pool: &PoolState,
    budget: usize,
    cfg: &HalConfig,
    eigen: &EigenOptions,
) -> Result<QuerySet> {
    cfg.validate()?;
    if features.n() != pool.n_total() {
        return Err(Error::contract("features must cover the whole pool"));
    }
    if uncertainty.len() != pool.n_total() {
        return Err(Error::contract(
            "uncertainty vector must cover the whole pool",
        ));
    }
    if budget > pool.unlabeled().len() {
        return Err(Error::contract(format!(
            "budget {budget} exceeds unlabeled pool of {}",
            pool.unlabeled().len()
        )));
    }
    if budget == 0 {
        return Ok(QuerySet::from_batches(Vec::new()));
    }

    let batches = partition_minibatches(
        pool.unlabeled(),
        cfg.minibatch_size,
        partition_seed(cfg.seed),
    )?;
    let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
    let budgets = allocate_budget(&sizes, budget)?;

    let mut per_batch = Vec::with_capacity(batches.len());
    for (bi, (batch, &b_b)) in batches.iter().zip(&budgets).enumerate() {
        let start = Instant::now();
        let mut prov = BatchProvenance {
            batch_index: bi,
            batch_size: batch.len(),
            budget: b_b,
            num_clusters: 0,
            selected: Vec::new(),
            seconds: 0.0,
        };
        if b_b == 0 {
            per_batch.push(prov);
            continue;
        }
        if b_b >= batch.len() || batch.len() == 1 {
            // Whole batch selected (or a degenerate single-sample batch);
            // clustering would be pointless or impossible.
            let mut all = batch.clone();
            all.sort_unstable();
            prov.selected = all;
            prov.seconds = start.elapsed().as_secs_f64();
            per_batch.push(prov);
            continue;
        }

        let k_b = num_clusters(cfg.cluster_multiplier, b_b, batch.len());
        let batch_feats = features.select_rows(batch);
        let local_scores: Vec<f64> = batch.iter().map(|&g| uncertainty.get(g)).collect();
        let assignment = spectral_cluster_with(
            batch_feats.view(),
            k_b,
            cfg.k_neighbors,
            cluster_seed(cfg.seed, bi),
            eigen,
        )?;
        prov.num_clusters = k_b;

        let ranked = rank_clusters_by(&assignment, &local_scores, cfg.ranking);
        let mut pick_rng = stream_rng(cfg.seed, STREAM_PICK_BASE + bi as u64);
        let mut selected_local: Vec<usize> = Vec::with_capacity(b_b);
        let mut taken = vec![false; batch.len()];
        for &cluster in ranked.iter() {
            if selected_local.len() == b_b {
                break;
            }
            let members = assignment.members(cluster);
            if members.is_empty() {
                continue;
            }
            let local = select_in_cluster(
                &members,
                batch_feats.view(),
                &local_scores,
                cfg.in_cluster,
                &mut pick_rng,
            );
            if !taken[local] {
                taken[local] = true;
                selected_local.push(local);
            }
        }
        // Top-up by descending uncertainty if cluster selection came up
        // short (possible only when fewer nonempty clusters than B_b).
        if selected_local.len() < b_b {
            let mut rest: Vec<usize> = (0..batch.len()).filter(|&i| !taken[i]).collect();
            rest.sort_by(|&a, &b| {
                local_scores[b]
                    .partial_cmp(&local_scores[a])
                    .expect("finite uncertainty")
                    .then(a.cmp(&b))
            });
            for i in rest {
                if selected_local.len() == b_b {
                    break;
                }
                taken[i] = true;
                selected_local.push(i);
            }
        }
        prov.selected = selected_local.iter().map(|&l| batch[l]).collect();
        prov.seconds = start.elapsed().as_secs_f64();
        per_batch.push(prov);
    }

    let query = QuerySet::from_batches(per_batch);
    debug_assert_eq!(query.len(), budget);
    Ok(query)
}
