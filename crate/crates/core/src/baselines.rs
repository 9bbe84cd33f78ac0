//! Baseline query strategies behind the same interface as the
//! hierarchical engine: random, entropy, margin, BALD, CoreSet, BADGE.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::hal::QuerySet;
use crate::model::{gradient_embedding, mc_dropout_predict, ClassifierParams};
use crate::pool::PoolState;
use crate::rng::stream_rng;
use crate::spectral::FirstPick;

/// Query-strategy selector used by the harness and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    Entropy,
    Margin,
    Bald,
    CoreSet,
    Badge,
    Hal,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Margin => "margin",
            StrategyKind::Bald => "bald",
            StrategyKind::CoreSet => "coreset",
            StrategyKind::Badge => "badge",
            StrategyKind::Hal => "hal",
        }
    }

    /// Whether the strategy needs a trained model to score samples.
    pub fn needs_model(&self) -> bool {
        matches!(
            self,
            StrategyKind::Entropy | StrategyKind::Margin | StrategyKind::Bald | StrategyKind::Badge
        )
    }
}

fn check_budget(pool: &PoolState, budget: usize) -> Result<()> {
    if budget > pool.unlabeled().len() {
        return Err(Error::contract(format!(
            "budget {budget} exceeds unlabeled pool of {}",
            pool.unlabeled().len()
        )));
    }
    Ok(())
}

/// Top-`b` unlabeled indices by a score, descending, ties toward the
/// smaller index.
fn top_by_score(pool: &PoolState, scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = pool.unlabeled().to_vec();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite score")
            .then(a.cmp(&b))
    });
    order.truncate(budget);
    order
}

/// Seeded uniform sample without replacement from the unlabeled pool.
pub fn random_query(pool: &PoolState, budget: usize, seed: u64) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    let start = Instant::now();
    let mut rng = stream_rng(seed, 0);
    let picks: Vec<usize> = rand::seq::index::sample(&mut rng, pool.unlabeled().len(), budget)
        .iter()
        .map(|i| pool.unlabeled()[i])
        .collect();
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}

/// Shannon entropy of one probability row (natural log).
pub fn entropy(row: &[f64]) -> f64 {
    row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Highest predictive entropy first. `probs` holds one row per pool
/// sample.
pub fn entropy_query(probs: ArrayView2<'_, f64>, pool: &PoolState, budget: usize) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    if probs.nrows() != pool.n_total() {
        return Err(Error::contract("probability rows must cover the pool"));
    }
    let start = Instant::now();
    let scores: Vec<f64> = probs
        .outer_iter()
        .map(|row| entropy(row.as_slice().expect("contiguous row")))
        .collect();
    let picks = top_by_score(pool, &scores, budget);
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}

/// Smallest top-two probability gap first.
pub fn margin_query(probs: ArrayView2<'_, f64>, pool: &PoolState, budget: usize) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    if probs.nrows() != pool.n_total() {
        return Err(Error::contract("probability rows must cover the pool"));
    }
    let start = Instant::now();
    // Negate the margin so the shared descending top-b applies.
    let scores: Vec<f64> = probs
        .outer_iter()
        .map(|row| {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in row.iter() {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            -(first - second)
        })
        .collect();
    let picks = top_by_score(pool, &scores, budget);
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}

/// BALD mutual-information score of `t` Monte Carlo dropout rows:
/// `H(mean_t p_t) - mean_t H(p_t)`.
///
/// The score is nonnegative by Jensen; float noise below 1e-12 nats is
/// snapped to exactly zero so identical passes (dropout rate 0) score 0.
pub fn bald_score(rows: ArrayView2<'_, f64>) -> f64 {
    let t = rows.nrows() as f64;
    let mean = rows.sum_axis(ndarray::Axis(0)) / t;
    let h_mean = entropy(mean.as_slice().expect("contiguous"));
    let mean_h = rows
        .outer_iter()
        .map(|r| entropy(r.as_slice().expect("contiguous")))
        .sum::<f64>()
        / t;
    let mi = h_mean - mean_h;
    if mi < 1e-12 {
        0.0
    } else {
        mi
    }
}

/// Monte Carlo dropout BALD querying: top-`b` mutual information.
pub fn bald_query(
    params: &ClassifierParams,
    features: &FeatureMatrix,
    pool: &PoolState,
    budget: usize,
    passes: usize,
    seed: u64,
) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    if passes == 0 {
        return Err(Error::contract("bald needs at least one dropout pass"));
    }
    let start = Instant::now();
    let mut scores = vec![0.0f64; pool.n_total()];
    for (k, &i) in pool.unlabeled().iter().enumerate() {
        let rows = mc_dropout_predict(
            params,
            features.row(i),
            passes,
            crate::rng::derive_seed(seed, k as u64),
        )?;
        scores[i] = bald_score(rows.view());
    }
    let picks = top_by_score(pool, &scores, budget);
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}

/// Greedy k-center selection: repeatedly take the unlabeled point with the
/// largest distance to the labeled set plus everything selected so far.
///
/// With an empty labeled set the first pick is the point farthest from the
/// pool's feature mean, which keeps the strategy deterministic.
pub fn coreset_query(features: &FeatureMatrix, pool: &PoolState, budget: usize) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    let start = Instant::now();
    let mut min_sq: Vec<f64> = vec![f64::INFINITY; pool.n_total()];
    let sq_dist = |a: usize, b: usize| -> f64 {
        features
            .row(a)
            .iter()
            .zip(features.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    for &lab in pool.labeled() {
        for &u in pool.unlabeled() {
            let d = sq_dist(u, lab);
            if d < min_sq[u] {
                min_sq[u] = d;
            }
        }
    }

    let mut picks = Vec::with_capacity(budget);
    let mut taken = vec![false; pool.n_total()];
    for step in 0..budget {
        let next = if step == 0 && pool.labeled().is_empty() {
            // Farthest point from the pool mean.
            let d = features.d();
            let mut mean = vec![0.0f64; d];
            for &i in pool.unlabeled() {
                for (j, v) in features.row(i).iter().enumerate() {
                    mean[j] += v;
                }
            }
            let inv = 1.0 / pool.unlabeled().len() as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
            let mut best = pool.unlabeled()[0];
            let mut best_d = f64::NEG_INFINITY;
            for &i in pool.unlabeled() {
                let dist: f64 = features
                    .row(i)
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist > best_d {
                    best_d = dist;
                    best = i;
                }
            }
            best
        } else {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for &i in pool.unlabeled() {
                if taken[i] {
                    continue;
                }
                if min_sq[i] > best_d {
                    best_d = min_sq[i];
                    best = Some(i);
                }
            }
            best.expect("budget <= unlabeled size")
        };
        taken[next] = true;
        picks.push(next);
        for &u in pool.unlabeled() {
            if !taken[u] {
                let d = sq_dist(u, next);
                if d < min_sq[u] {
                    min_sq[u] = d;
                }
            }
        }
    }
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}

/// BADGE: k-means++ seeding over last-layer gradient embeddings, returning
/// the `b` seed points themselves.
///
/// The first seed defaults to the largest-norm embedding for determinism;
/// `FirstPick::Random` restores the classic uniform first draw.
pub fn badge_query(
    params: &ClassifierParams,
    features: &FeatureMatrix,
    pool: &PoolState,
    budget: usize,
    seed: u64,
    first: FirstPick,
) -> Result<QuerySet> {
    check_budget(pool, budget)?;
    if budget == 0 {
        return Ok(QuerySet::single_batch(vec![], pool.unlabeled().len(), 0.0));
    }
    let start = Instant::now();
    let unlabeled = pool.unlabeled();
    let (_, h, c) = params.dims();
    let mut emb = Array2::zeros((unlabeled.len(), h * c));
    for (k, &i) in unlabeled.iter().enumerate() {
        let row: Array1<f64> = gradient_embedding(params, features.row(i))?;
        emb.row_mut(k).assign(&row);
    }
    let mut rng = stream_rng(seed, 0);
    let local = crate::spectral::kmeans_pp_indices(emb.view(), budget, &mut rng, first);
    let picks: Vec<usize> = local.into_iter().map(|l| unlabeled[l]).collect();
    Ok(QuerySet::single_batch(
        picks,
        pool.unlabeled().len(),
        start.elapsed().as_secs_f64(),
    ))
}
