//! Weak-to-strong self-training: feature perturbations, confidence masks,
//! the combined objective, and the per-round training loop.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::metrics::compute_metrics;
use crate::model::{
    self, argmax, ema_update, forward, AdamW, ClassifierParams, EmaState, Gradients,
};
use crate::pool::PoolState;
use crate::rng::stream_rng;

/// Confidence-mask strategy for pseudo-label filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskVariant {
    /// Hard threshold at `tau`.
    Fixed,
    /// Class-wise relaxed threshold from confident-prediction counts.
    ClassAdaptive,
    /// Global and per-class thresholds tracked as running statistics.
    SelfAdaptive,
    /// Gaussian weighting below the running confidence mean.
    SoftGaussian,
}

/// Self-training configuration. Also carries head-architecture and
/// optimizer knobs so one value fully determines a training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    /// Base confidence threshold.
    pub tau: f64,
    /// Weight of the self-training term in the total loss.
    pub lambda_st: f64,
    pub variant: MaskVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Std-dev of the weak Gaussian feature perturbation.
    pub weak_sigma: f64,
    /// Std-dev of the strong Gaussian feature perturbation.
    pub strong_sigma: f64,
    /// Per-coordinate zeroing probability in the strong perturbation.
    pub strong_drop: f64,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// EMA decay for the shadow model.
    pub ema_alpha: f64,
    /// EMA momentum for mask running statistics.
    pub stats_momentum: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            tau: 0.95,
            lambda_st: 1.0,
            variant: MaskVariant::Fixed,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            weak_sigma: 0.01,
            strong_sigma: 0.1,
            strong_drop: 0.2,
            hidden_dim: 128,
            dropout_rate: 0.1,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            ema_alpha: 0.99,
            stats_momentum: 0.999,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::contract(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.lambda_st < 0.0 {
            return Err(Error::contract("lambda_st must be nonnegative"));
        }
        if self.weak_sigma < 0.0 || self.strong_sigma < 0.0 {
            return Err(Error::contract("perturbation sigmas must be nonnegative"));
        }
        if self.weak_sigma > self.strong_sigma {
            return Err(Error::contract(
                "weak_sigma must not exceed strong_sigma (strong is the harsher view)",
            ));
        }
        if !(0.0..1.0).contains(&self.strong_drop) {
            return Err(Error::contract("strong_drop outside [0, 1)"));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("batch_size and hidden_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::contract("ema_alpha outside [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.stats_momentum) {
            return Err(Error::contract("stats_momentum outside [0, 1)"));
        }
        Ok(())
    }
}

/// Perturbation strength of a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    Weak,
    Strong,
}

/// Seeded feature-space perturbation.
///
/// Weak adds isotropic Gaussian noise of `weak_sigma`; strong adds noise
/// of `strong_sigma` and then zeroes each coordinate independently with
/// probability `strong_drop`.
pub fn perturb(
    features: ArrayView2<'_, f64>,
    mode: PerturbMode,
    cfg: &SslConfig,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut rng = stream_rng(seed, 0);
    perturb_with_rng(features, mode, cfg, &mut rng)
}

/// Perturbation drawing from a caller-owned RNG (training-loop form).
pub fn perturb_with_rng(
    features: ArrayView2<'_, f64>,
    mode: PerturbMode,
    cfg: &SslConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix> {
    let sigma = match mode {
        PerturbMode::Weak => cfg.weak_sigma,
        PerturbMode::Strong => cfg.strong_sigma,
    };
    let mut out = features.to_owned();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        out.mapv_inplace(|v| v + normal.sample(rng));
    }
    if mode == PerturbMode::Strong && cfg.strong_drop > 0.0 {
        out.mapv_inplace(|v| {
            if rng.random::<f64>() < cfg.strong_drop {
                0.0
            } else {
                v
            }
        });
    }
    FeatureMatrix::new(out)
}

/// Running statistics behind the confidence mask, one variant per SSL
/// strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskState {
    Fixed,
    ClassAdaptive {
        /// Confident-prediction counts per class.
        confident_counts: Vec<u64>,
    },
    SelfAdaptive {
        /// Running mean of the max confidence (global threshold).
        global_conf: f64,
        /// Running mean probability per class.
        class_probs: Vec<f64>,
    },
    SoftGaussian {
        /// Running mean of the max confidence.
        mean: f64,
        /// Running variance of the max confidence.
        var: f64,
    },
}

const SOFT_VAR_FLOOR: f64 = 1e-12;
// Keeps the soft weight strictly positive when the Gaussian underflows;
// no sample is ever fully discarded.
const SOFT_WEIGHT_FLOOR: f64 = 1e-300;

impl MaskState {
    pub fn new(variant: MaskVariant, classes: usize) -> Self {
        match variant {
            MaskVariant::Fixed => MaskState::Fixed,
            MaskVariant::ClassAdaptive => MaskState::ClassAdaptive {
                confident_counts: vec![0; classes],
            },
            MaskVariant::SelfAdaptive => MaskState::SelfAdaptive {
                global_conf: 1.0 / classes as f64,
                class_probs: vec![1.0 / classes as f64; classes],
            },
            MaskVariant::SoftGaussian => MaskState::SoftGaussian {
                mean: 1.0 / classes as f64,
                var: 1.0,
            },
        }
    }

    /// Mask weight in [0, 1] and the pseudo-label for one probability row.
    ///
    /// The adaptive variants only ever relax the base threshold `tau`; the
    /// effective threshold never exceeds it.
    pub fn weight(&self, probs_row: ArrayView1<'_, f64>, cfg: &SslConfig) -> Result<(f64, usize)> {
        validate_distribution(probs_row)?;
        let yhat = argmax(probs_row);
        let conf = probs_row[yhat];
        let w = match self {
            MaskState::Fixed => {
                if conf >= cfg.tau {
                    1.0
                } else {
                    0.0
                }
            }
            MaskState::ClassAdaptive { confident_counts } => {
                let max_count = confident_counts.iter().copied().max().unwrap_or(0);
                let beta = if max_count == 0 {
                    1.0
                } else {
                    confident_counts[yhat] as f64 / max_count as f64
                };
                if conf >= cfg.tau * beta {
                    1.0
                } else {
                    0.0
                }
            }
            MaskState::SelfAdaptive {
                global_conf,
                class_probs,
            } => {
                let max_p = class_probs.iter().cloned().fold(f64::MIN, f64::max);
                let ratio = if max_p > 0.0 {
                    class_probs[yhat] / max_p
                } else {
                    1.0
                };
                let threshold = (global_conf * ratio).min(cfg.tau);
                if conf >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            MaskState::SoftGaussian { mean, var } => {
                if conf >= *mean {
                    1.0
                } else {
                    let diff = conf - mean;
                    (-diff * diff / (2.0 * var.max(SOFT_VAR_FLOOR)))
                        .exp()
                        .max(SOFT_WEIGHT_FLOOR)
                }
            }
        };
        Ok((w, yhat))
    }

    /// Fold one batch of weak-view probability rows into the running
    /// statistics.
    pub fn update_batch(&mut self, weak_probs: ArrayView2<'_, f64>, cfg: &SslConfig) {
        let batch = weak_probs.nrows();
        if batch == 0 {
            return;
        }
        match self {
            MaskState::Fixed => {}
            MaskState::ClassAdaptive { confident_counts } => {
                for row in weak_probs.outer_iter() {
                    let yhat = argmax(row);
                    if row[yhat] >= cfg.tau {
                        confident_counts[yhat] += 1;
                    }
                }
            }
            MaskState::SelfAdaptive {
                global_conf,
                class_probs,
            } => {
                let m = cfg.stats_momentum;
                let mean_conf = weak_probs
                    .outer_iter()
                    .map(|r| r[argmax(r)])
                    .sum::<f64>()
                    / batch as f64;
                *global_conf = m * *global_conf + (1.0 - m) * mean_conf;
                let mean_probs = weak_probs.mean_axis(Axis(0)).expect("nonempty batch");
                for (cp, &mp) in class_probs.iter_mut().zip(mean_probs.iter()) {
                    *cp = m * *cp + (1.0 - m) * mp;
                }
            }
            MaskState::SoftGaussian { mean, var } => {
                let m = cfg.stats_momentum;
                let confs: Vec<f64> = weak_probs.outer_iter().map(|r| r[argmax(r)]).collect();
                let mu = confs.iter().sum::<f64>() / batch as f64;
                let v = confs.iter().map(|c| (c - mu) * (c - mu)).sum::<f64>() / batch as f64;
                *mean = m * *mean + (1.0 - m) * mu;
                *var = m * *var + (1.0 - m) * v;
            }
        }
    }
}

fn validate_distribution(row: ArrayView1<'_, f64>) -> Result<()> {
    if row.is_empty() {
        return Err(Error::contract("empty probability row"));
    }
    let mut sum = 0.0;
    for &p in &row {
        if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::contract(format!("invalid probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::contract(format!(
            "probability row sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Masked self-training loss over one unlabeled batch, given its weak and
/// strong views.
///
/// Pseudo-labels and mask weights come from the EMA model's dropout-off
/// pass on the weak views; loss and gradient flow only through the
/// trainable model's pass on the strong views. Returns
/// `(loss, gradient, mask_rate)` and folds the weak confidences into the
/// mask statistics (after the weights are computed).
pub fn self_training_loss(
    params: &ClassifierParams,
    ema: &EmaState,
    weak: &FeatureMatrix,
    strong: &FeatureMatrix,
    state: &mut MaskState,
    cfg: &SslConfig,
    dropout: Option<&Array2<f64>>,
) -> Result<(f64, Gradients, f64)> {
    let batch = weak.n();
    if batch == 0 {
        return Err(Error::contract("empty unlabeled batch"));
    }
    if strong.n() != batch {
        return Err(Error::contract("weak/strong batch size mismatch"));
    }
    let weak_cache = forward(&ema.shadow, weak.view(), None)?;
    let mut weights = Vec::with_capacity(batch);
    let mut pseudo = Vec::with_capacity(batch);
    for row in weak_cache.probs.outer_iter() {
        let (w, y) = state.weight(row, cfg)?;
        weights.push(w);
        pseudo.push(y);
    }

    let strong_cache = forward(params, strong.view(), dropout)?;
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(strong_cache.probs.dim());
    for i in 0..batch {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let y = pseudo[i];
        loss += w * (strong_cache.log_z[i] - strong_cache.logits[[i, y]]) * inv;
        for (j, &p) in strong_cache.probs.row(i).iter().enumerate() {
            let delta = if j == y { p - 1.0 } else { p };
            dlogits[[i, j]] = w * delta * inv;
        }
    }
    let grads = model::backward(params, &strong_cache, &dlogits, dropout);
    let mask_rate = weights.iter().sum::<f64>() / batch as f64;
    state.update_batch(weak_cache.probs.view(), cfg);
    Ok((loss, grads, mask_rate))
}

/// One row of the training trace, emitted per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub sup_loss: f64,
    pub st_loss: f64,
    pub mask_rate: f64,
    /// Most recent validation OA (updated once per epoch).
    pub val_oa: f64,
}

/// Output of one training round.
#[derive(Debug, Clone)]
pub struct RoundTrainOutput {
    /// EMA snapshot with the best validation OA.
    pub ema: EmaState,
    /// Final trainable parameters (end of the last epoch).
    pub params: ClassifierParams,
    pub best_val_oa: f64,
    pub trace: Vec<TraceRow>,
}

/// Write the loss trace in its CSV form.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,sup_loss,st_loss,mask_rate,val_oa\n");
    for row in trace {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            row.iter, row.sup_loss, row.st_loss, row.mask_rate, row.val_oa
        ));
    }
    out
}

/// Train the head for one round on the current pools.
///
/// Parameters are freshly initialized (seeded by `cfg.seed`), the labeled
/// pool keeps a stratified 1/8 slice for validation, and every iteration
/// minimizes `sup_loss + lambda_st * st_loss` with an EMA update. Labeled
/// batches get the weak perturbation. The EMA snapshot with the best
/// validation OA is returned; with `lambda_st == 0` the unlabeled pool is
/// never touched.
pub fn ssl_train_round(
    pool: &PoolState,
    features: &FeatureMatrix,
    labels: &LabelVector,
    cfg: &SslConfig,
) -> Result<RoundTrainOutput> {
    ssl_train_round_from(pool, features, labels, cfg, None)
}

/// [`ssl_train_round`] with optional warm-start parameters instead of a
/// fresh initialization.
pub fn ssl_train_round_from(
    pool: &PoolState,
    features: &FeatureMatrix,
    labels: &LabelVector,
    cfg: &SslConfig,
    warm_start: Option<ClassifierParams>,
) -> Result<RoundTrainOutput> {
    cfg.validate()?;
    if pool.labeled().is_empty() {
        return Err(Error::contract("training requires at least one labeled sample"));
    }
    if features.n() != pool.n_total() || labels.len() != pool.n_total() {
        return Err(Error::contract(
            "features/labels length must match the pool size",
        ));
    }
    let d = features.d();
    let c = labels.classes();
    let seed = cfg.seed;

    let mut params = match warm_start {
        Some(p) => {
            if p.dims() != (d, cfg.hidden_dim, c) {
                return Err(Error::contract("warm-start parameter shape mismatch"));
            }
            p
        }
        None => ClassifierParams::init(d, cfg.hidden_dim, c, cfg.dropout_rate, seed),
    };
    let mut ema = EmaState::new(params.clone(), cfg.ema_alpha);

    // Stratified validation slice of the labeled pool.
    let (train_idx, val_idx) = split_validation(pool.labeled(), labels, seed)?;

    let eval_val = |ema: &EmaState| -> Result<f64> {
        if val_idx.is_empty() {
            return Ok(0.0);
        }
        let val_feats = FeatureMatrix::new(features.select_rows(&val_idx))?;
        let preds = model::predict_labels(&ema.shadow, &val_feats)?;
        let truth = LabelVector::new(val_idx.iter().map(|&i| labels.get(i)).collect(), c)?;
        Ok(compute_metrics(&preds, &truth)?.oa)
    };

    let mut best_val_oa = eval_val(&ema)?;
    let mut best_ema = ema.clone();
    let mut trace = Vec::new();

    if cfg.epochs == 0 {
        return Ok(RoundTrainOutput {
            ema,
            params,
            best_val_oa,
            trace,
        });
    }

    let iters_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_iters = cfg.epochs * iters_per_epoch;
    let mut optimizer = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay, total_iters);

    let use_unlabeled = cfg.lambda_st > 0.0 && !pool.unlabeled().is_empty();
    let mut shuffle_rng = stream_rng(seed, model::streams::SHUFFLE);
    let mut unlabeled_rng = stream_rng(seed, model::streams::UNLABELED);
    let mut perturb_lab_rng = stream_rng(seed, model::streams::PERTURB_LABELED);
    let mut perturb_unlab_rng = stream_rng(seed, model::streams::PERTURB_UNLABELED);
    let mut drop_sup_rng = stream_rng(seed, model::streams::DROPOUT_SUP);
    let mut drop_st_rng = stream_rng(seed, model::streams::DROPOUT_ST);

    let mut mask_state = MaskState::new(cfg.variant, c);
    let mut order = train_idx.clone();
    let mut iter = 0usize;
    let mut last_val_oa = best_val_oa;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_feats = features.select_rows(chunk);
            let weak_labeled =
                perturb_with_rng(batch_feats.view(), PerturbMode::Weak, cfg, &mut perturb_lab_rng)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels.get(i)).collect();
            let sup_mask = params.sample_dropout_mask(chunk.len(), &mut drop_sup_rng);
            let (sup_loss, sup_grads) = model::supervised_loss(
                &params,
                weak_labeled.view(),
                &batch_labels,
                Some(&sup_mask),
            )?;

            let mut total_grads = sup_grads;
            let mut st_loss = 0.0;
            let mut mask_rate = 0.0;
            if use_unlabeled {
                let take = chunk.len().min(pool.unlabeled().len());
                let unlab: Vec<usize> =
                    rand::seq::index::sample(&mut unlabeled_rng, pool.unlabeled().len(), take)
                        .iter()
                        .map(|i| pool.unlabeled()[i])
                        .collect();
                let unlab_feats = features.select_rows(&unlab);
                let weak = perturb_with_rng(
                    unlab_feats.view(),
                    PerturbMode::Weak,
                    cfg,
                    &mut perturb_unlab_rng,
                )?;
                let strong = perturb_with_rng(
                    unlab_feats.view(),
                    PerturbMode::Strong,
                    cfg,
                    &mut perturb_unlab_rng,
                )?;
                let st_mask = params.sample_dropout_mask(take, &mut drop_st_rng);
                let (loss, grads, rate) = self_training_loss(
                    &params,
                    &ema,
                    &weak,
                    &strong,
                    &mut mask_state,
                    cfg,
                    Some(&st_mask),
                )?;
                st_loss = loss;
                mask_rate = rate;
                total_grads.add_scaled(&grads, cfg.lambda_st);
            }

            optimizer.step(&mut params, &total_grads);
            ema = ema_update(&ema, &params)?;
            trace.push(TraceRow {
                iter,
                sup_loss,
                st_loss,
                mask_rate,
                val_oa: last_val_oa,
            });
            iter += 1;
        }
        let val_oa = eval_val(&ema)?;
        last_val_oa = val_oa;
        if let Some(row) = trace.last_mut() {
            row.val_oa = val_oa;
        }
        // Ties go to the later snapshot: the shadow only gains averaging
        // length, and tiny validation slices tie constantly.
        if !val_idx.is_empty() && val_oa >= best_val_oa {
            best_val_oa = val_oa;
            best_ema = ema.clone();
        }
    }

    if val_idx.is_empty() {
        // No validation signal; keep the final EMA.
        best_ema = ema;
        best_val_oa = last_val_oa;
    }
    Ok(RoundTrainOutput {
        ema: best_ema,
        params,
        best_val_oa,
        trace,
    })
}

/// Stratified 1/8 validation split of the labeled pool (largest-remainder
/// allocation across classes, reshuffled by `seed`). Keeps at least one
/// training sample; a single-sample pool gets no validation slice.
fn split_validation(
    labeled: &[usize],
    labels: &LabelVector,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let total = labeled.len();
    if total < 2 {
        return Ok((labeled.to_vec(), Vec::new()));
    }
    let val_size = ((total as f64 / 8.0).round() as usize)
        .max(1)
        .min(total - 1);

    let mut rng = stream_rng(seed, model::streams::VAL_SPLIT);
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> =
        std::collections::BTreeMap::new();
    for &i in labeled {
        by_class.entry(labels.get(i)).or_default().push(i);
    }
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
    }

    // Largest-remainder proportional quotas.
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&class, members)| {
            let exact = val_size as f64 * members.len() as f64 / total as f64;
            (class, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|&(_, q, _)| q).sum();
    quotas.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    let mut qi = 0;
    while assigned < val_size && qi < quotas.len() {
        let class_size = by_class[&quotas[qi].0].len();
        if quotas[qi].1 < class_size {
            quotas[qi].1 += 1;
            assigned += 1;
        }
        qi += 1;
        if qi == quotas.len() && assigned < val_size {
            qi = 0;
        }
    }

    let mut val = Vec::with_capacity(val_size);
    let mut train = Vec::new();
    for (class, quota, _) in &quotas {
        let members = &by_class[class];
        let q = (*quota).min(members.len());
        val.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}
