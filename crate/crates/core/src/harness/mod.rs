//! Experiment orchestration: data splits, the multi-round query-train
//! loop, and report persistence.

mod report;
mod synthetic;

pub use report::{config_hash, emit_report, read_report_json, ReportDoc, REPORT_CSV_COLUMNS};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

use crate::baselines::{
    badge_query, bald_query, coreset_query, entropy_query, margin_query, random_query,
    StrategyKind,
};
use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::hal::{hal_query, HalConfig};
use crate::metrics::compute_metrics;
use crate::model::{self, BiasMode, DropoutMode, EmaState};
use crate::pool::{make_budget_schedule, update_pools, PoolState};
use crate::rng::{derive_seed, stream_rng};
use crate::spectral::FirstPick;
use crate::ssl::{ssl_train_round_from, SslConfig};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// A feature file on disk.
    File { path: PathBuf },
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

/// Train/val/test split fractions and the shuffle seed.
///
/// Pools live inside the train split; the test split is the evaluation
/// set. The val fraction is carved out to mirror the data protocol but is
/// otherwise untouched (model selection uses a slice of the labeled pool
/// instead, since a large labeled validation set would dwarf the
/// annotation budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {sum}, not 1")));
        }
        if self.train <= 0.0 || self.test <= 0.0 || self.val < 0.0 {
            return Err(Error::config("train and test fractions must be positive"));
        }
        Ok(())
    }
}

/// Full experiment description. Serialized as the JSON config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitConfig,
    /// Cumulative labeling ratios, strictly increasing.
    pub ratios: Vec<f64>,
    pub strategy: StrategyKind,
    /// When false, training is purely supervised (`lambda_st` forced to 0).
    pub ssl_enabled: bool,
    pub ssl: SslConfig,
    pub hal: HalConfig,
    /// Monte Carlo dropout passes for the BALD strategy.
    pub bald_passes: usize,
    /// Restore the classic uniform first seed in BADGE.
    pub badge_random_first: bool,
    /// Include the bias row in the gradient-norm uncertainty.
    pub uncertainty_bias: BiasMode,
    /// Keep parameters across rounds instead of re-initializing.
    pub warm_start: bool,
    pub trial_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            split: SplitConfig::default(),
            ratios: vec![0.01, 0.02, 0.04, 0.06, 0.08, 0.10],
            strategy: StrategyKind::Hal,
            ssl_enabled: false,
            ssl: SslConfig::default(),
            hal: HalConfig::default(),
            bald_passes: 50,
            badge_random_first: false,
            uncertainty_bias: BiasMode::Include,
            warm_start: false,
            trial_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.ratios.is_empty() {
            return Err(Error::config("at least one labeling ratio required"));
        }
        self.ssl.validate().map_err(|e| Error::config(e.to_string()))?;
        self.hal.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.bald_passes == 0 {
            return Err(Error::config("bald_passes must be positive"));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Per-round outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    /// Cumulative labeling ratio after this round's training.
    pub ratio: f64,
    pub labeled_size: usize,
    pub oa: f64,
    pub aa: f64,
    pub per_class_acc: Vec<f64>,
    /// Global dataset indices queried at the end of this round (empty for
    /// the final round).
    pub queried: Vec<usize>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub query_seconds: f64,
}

impl RoundResult {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        RoundResult {
            train_seconds: 0.0,
            eval_seconds: 0.0,
            query_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Deterministic per-round seed derivation.
pub fn round_seed(trial_seed: u64, round: usize) -> u64 {
    derive_seed(trial_seed, 0x7000 + round as u64)
}

/// The dataset splits used by one experiment.
pub struct ExperimentData {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Load or generate the dataset and derive the train/val/test split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let (features, labels) = match &cfg.data {
        DataSource::File { path } => crate::io::load_features(path)?,
        DataSource::Synthetic(spec) => gen_synthetic(spec)?,
    };
    let n = features.n();
    let n_train = (cfg.split.train * n as f64).round() as usize;
    let n_val = (cfg.split.val * n as f64).round() as usize;
    if n_train == 0 || n_train + n_val >= n {
        return Err(Error::config(format!(
            "split {}/{}/{} leaves no test samples for n = {n}",
            cfg.split.train, cfg.split.val, cfg.split.test
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut stream_rng(cfg.split.seed, 0xD5));
    let train_indices = order[..n_train].to_vec();
    let val_indices = order[n_train..n_train + n_val].to_vec();
    let test_indices = order[n_train + n_val..].to_vec();
    Ok(ExperimentData {
        features,
        labels,
        train_indices,
        val_indices,
        test_indices,
    })
}

/// Run the full multi-round loop: per ratio, (re)train on the current
/// pools, evaluate on the test split, then query the configured strategy
/// and reveal the oracle labels for the queried indices.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundResult>> {
    run_experiment_detailed(cfg).map(|(rounds, _)| rounds)
}

/// Like [`run_experiment`] but also returns the final trained model.
pub fn run_experiment_detailed(
    cfg: &ExperimentConfig,
) -> Result<(Vec<RoundResult>, (model::ClassifierParams, EmaState))> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let n_train = data.train_indices.len();
    let c = data.labels.classes();

    // Train-local views: pools index into the train split.
    let train_feats = FeatureMatrix::new(data.features.select_rows(&data.train_indices))?;
    let train_labels = LabelVector::new(
        data.train_indices
            .iter()
            .map(|&g| data.labels.get(g))
            .collect(),
        c,
    )?;
    let test_feats = FeatureMatrix::new(data.features.select_rows(&data.test_indices))?;
    let test_labels = LabelVector::new(
        data.test_indices
            .iter()
            .map(|&g| data.labels.get(g))
            .collect(),
        c,
    )?;

    let schedule = make_budget_schedule(&cfg.ratios, n_train)?;
    if let Some(&last_budget) = schedule.per_round_budgets().last() {
        let _ = last_budget; // budgets validated by the schedule itself
    }

    // Seed labeled pool: uniform draw from the train split.
    let mut init_rng = stream_rng(cfg.trial_seed, model::streams::INITIAL_POOL);
    let initial: Vec<usize> =
        rand::seq::index::sample(&mut init_rng, n_train, schedule.initial_labeled())
            .iter()
            .collect();
    let mut pool = PoolState::from_initial_labeled(initial, n_train)?;

    let mut rounds = Vec::with_capacity(schedule.rounds());
    let mut warm_params: Option<model::ClassifierParams> = None;
    let mut final_model = None;

    for round in 0..schedule.rounds() {
        let rseed = round_seed(cfg.trial_seed, round);
        let mut ssl_cfg = cfg.ssl.clone();
        ssl_cfg.seed = rseed;
        if !cfg.ssl_enabled {
            ssl_cfg.lambda_st = 0.0;
        }

        let t_train = Instant::now();
        let trained = ssl_train_round_from(
            &pool,
            &train_feats,
            &train_labels,
            &ssl_cfg,
            warm_params.take(),
        )?;
        let train_seconds = t_train.elapsed().as_secs_f64();
        if cfg.warm_start {
            warm_params = Some(trained.params.clone());
        }

        let t_eval = Instant::now();
        let preds = model::predict_labels(&trained.ema.shadow, &test_feats)?;
        let metrics = compute_metrics(&preds, &test_labels)?;
        let eval_seconds = t_eval.elapsed().as_secs_f64();

        let mut queried_global = Vec::new();
        let mut query_seconds = 0.0;
        if round + 1 < schedule.rounds() {
            let budget = schedule.per_round_budgets()[round];
            let t_query = Instant::now();
            let query = dispatch_query(cfg, &trained.ema, &train_feats, &pool, budget, rseed)?;
            query_seconds = t_query.elapsed().as_secs_f64();
            pool = update_pools(&pool, query.indices())?;
            queried_global = query
                .indices()
                .iter()
                .map(|&local| data.train_indices[local])
                .collect();
        }

        debug_assert_eq!(pool.labeled().len(), schedule.cumulative_labeled((round + 1).min(schedule.rounds() - 1)));
        rounds.push(RoundResult {
            round,
            ratio: cfg.ratios[round],
            labeled_size: schedule.cumulative_labeled(round),
            oa: metrics.oa,
            aa: metrics.aa,
            per_class_acc: metrics.per_class_acc,
            queried: queried_global,
            train_seconds,
            eval_seconds,
            query_seconds,
        });
        final_model = Some((trained.params, trained.ema));
    }
    Ok((rounds, final_model.expect("at least one round")))
}

/// Run the configured strategy against the train-local pool.
pub fn dispatch_query(
    cfg: &ExperimentConfig,
    ema: &EmaState,
    train_feats: &FeatureMatrix,
    pool: &PoolState,
    budget: usize,
    rseed: u64,
) -> Result<crate::hal::QuerySet> {
    let qseed = derive_seed(rseed, model::streams::QUERY);
    match cfg.strategy {
        StrategyKind::Random => random_query(pool, budget, qseed),
        StrategyKind::Entropy => {
            let probs = model::predict_probs(&ema.shadow, train_feats, DropoutMode::Off)?;
            entropy_query(probs.view(), pool, budget)
        }
        StrategyKind::Margin => {
            let probs = model::predict_probs(&ema.shadow, train_feats, DropoutMode::Off)?;
            margin_query(probs.view(), pool, budget)
        }
        StrategyKind::Bald => {
            bald_query(&ema.shadow, train_feats, pool, budget, cfg.bald_passes, qseed)
        }
        StrategyKind::CoreSet => coreset_query(train_feats, pool, budget),
        StrategyKind::Badge => {
            let first = if cfg.badge_random_first {
                FirstPick::Random
            } else {
                FirstPick::MaxNorm
            };
            badge_query(&ema.shadow, train_feats, pool, budget, qseed, first)
        }
        StrategyKind::Hal => {
            let u = model::uncertainty_scores(&ema.shadow, train_feats, cfg.uncertainty_bias)?;
            let mut hal_cfg = cfg.hal.clone();
            hal_cfg.seed = qseed;
            hal_query(train_feats, &u, pool, budget, &hal_cfg)
        }
    }
}
