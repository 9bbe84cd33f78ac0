//! Softmax classifier head over frozen features.
//!
//! Architecture: feature normalization (layer norm with learnable affine),
//! a D->H linear projection, exact-erf GELU, dropout, and an H->C linear
//! classifier. All gradients are derived by hand and checked against
//! central finite differences in the test suite.
//!
//! The module also houses the last-layer gradient machinery used for
//! querying: the gradient-norm uncertainty score and the flattened
//! gradient embedding.

mod optim;

pub use optim::AdamW;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::FeatureMatrix;
use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Trainable parameters of the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// Learnable scale of the feature normalization layer (length D).
    pub norm_scale: Array1<f64>,
    /// Learnable shift of the feature normalization layer (length D).
    pub norm_shift: Array1<f64>,
    /// Hidden projection, D×H.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Final linear classifier, H×C.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Dropout probability applied after the GELU during training.
    pub dropout_rate: f64,
}

impl ClassifierParams {
    /// Xavier-uniform initialization, seeded.
    pub fn init(d: usize, h: usize, c: usize, dropout_rate: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, streams::INIT);
        let xavier = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        };
        ClassifierParams {
            norm_scale: Array1::ones(d),
            norm_shift: Array1::zeros(d),
            w1: xavier(d, h, &mut rng),
            b1: Array1::zeros(h),
            w2: xavier(h, c, &mut rng),
            b2: Array1::zeros(c),
            dropout_rate,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.nrows(), self.w1.ncols(), self.w2.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, c) = self.dims();
        if self.norm_scale.len() != d
            || self.norm_shift.len() != d
            || self.b1.len() != h
            || self.w2.nrows() != h
            || self.b2.len() != c
        {
            return Err(Error::contract("inconsistent parameter shapes"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract("dropout_rate outside [0, 1)"));
        }
        let finite = self.norm_scale.iter().all(|v| v.is_finite())
            && self.norm_shift.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::contract("non-finite parameter entry"));
        }
        Ok(())
    }

    fn check_feature_dim(&self, d: usize) -> Result<()> {
        if d != self.w1.nrows() {
            return Err(Error::contract(format!(
                "feature dimension {d} does not match model dimension {}",
                self.w1.nrows()
            )));
        }
        Ok(())
    }

    /// Sample an inverted-dropout factor matrix (entries 0 or 1/(1-rate)).
    pub fn sample_dropout_mask(&self, batch: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let h = self.w1.ncols();
        if self.dropout_rate == 0.0 {
            return Array2::ones((batch, h));
        }
        let keep = 1.0 - self.dropout_rate;
        Array2::from_shape_fn((batch, h), |_| {
            if rng.random::<f64>() < self.dropout_rate {
                0.0
            } else {
                1.0 / keep
            }
        })
    }
}

/// EMA shadow of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: ClassifierParams,
    pub alpha: f64,
}

impl EmaState {
    pub fn new(params: ClassifierParams, alpha: f64) -> Self {
        EmaState {
            shadow: params,
            alpha,
        }
    }
}

/// One EMA step: `shadow <- alpha*shadow + (1-alpha)*params`.
pub fn ema_update(ema: &EmaState, params: &ClassifierParams) -> Result<EmaState> {
    if ema.shadow.dims() != params.dims() {
        return Err(Error::contract("EMA shadow shape mismatch"));
    }
    let a = ema.alpha;
    let mix1 = |s: &Array1<f64>, p: &Array1<f64>| s * a + p * (1.0 - a);
    let mix2 = |s: &Array2<f64>, p: &Array2<f64>| s * a + p * (1.0 - a);
    Ok(EmaState {
        shadow: ClassifierParams {
            norm_scale: mix1(&ema.shadow.norm_scale, &params.norm_scale),
            norm_shift: mix1(&ema.shadow.norm_shift, &params.norm_shift),
            w1: mix2(&ema.shadow.w1, &params.w1),
            b1: mix1(&ema.shadow.b1, &params.b1),
            w2: mix2(&ema.shadow.w2, &params.w2),
            b2: mix1(&ema.shadow.b2, &params.b2),
            dropout_rate: params.dropout_rate,
        },
        alpha: ema.alpha,
    })
}

/// Per-sample nonnegative uncertainty scores.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyVector {
    scores: Vec<f64>,
}

impl UncertaintyVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some((i, &s)) = scores
            .iter()
            .enumerate()
            .find(|(_, &s)| !s.is_finite() || s < 0.0)
        {
            return Err(Error::contract(format!(
                "uncertainty score {s} at index {i} must be finite and nonnegative"
            )));
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.scores[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// Parameter-shaped gradient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn zeros(d: usize, h: usize, c: usize) -> Self {
        Gradients {
            norm_scale: Array1::zeros(d),
            norm_shift: Array1::zeros(d),
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, c)),
            b2: Array1::zeros(c),
        }
    }

    pub fn zeros_like(params: &ClassifierParams) -> Self {
        let (d, h, c) = params.dims();
        Self::zeros(d, h, c)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        self.norm_scale.scaled_add(scale, &other.norm_scale);
        self.norm_shift.scaled_add(scale, &other.norm_shift);
        self.w1.scaled_add(scale, &other.w1);
        self.b1.scaled_add(scale, &other.b1);
        self.w2.scaled_add(scale, &other.w2);
        self.b2.scaled_add(scale, &other.b2);
    }
}

/// GELU in its exact error-function form.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx GELU(x) = Phi(x) + x * phi(x).
fn gelu_deriv(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// Normalized features before the learnable affine (batch×D).
    pub(crate) normed: Array2<f64>,
    /// Input to the hidden projection, i.e. after the affine (batch×D).
    pub(crate) h0: Array2<f64>,
    /// Pre-activation of the hidden layer (batch×H).
    pub(crate) pre_act: Array2<f64>,
    /// GELU output before dropout (batch×H).
    pub(crate) hidden: Array2<f64>,
    /// Hidden activations after the dropout factors (batch×H).
    pub(crate) dropped: Array2<f64>,
    /// Softmax probabilities (batch×C).
    pub(crate) probs: Array2<f64>,
    /// Row-wise log-sum-exp of the logits, for stable cross-entropy.
    pub(crate) log_z: Array1<f64>,
    /// Raw logits (batch×C).
    pub(crate) logits: Array2<f64>,
}

pub(crate) fn forward(
    params: &ClassifierParams,
    features: ArrayView2<'_, f64>,
    dropout: Option<&Array2<f64>>,
) -> Result<ForwardCache> {
    params.check_feature_dim(features.ncols())?;
    let batch = features.nrows();
    let d = features.ncols();

    let mut normed = Array2::zeros((batch, d));
    for (i, row) in features.outer_iter().enumerate() {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, &v) in row.iter().enumerate() {
            normed[[i, j]] = (v - mean) * inv;
        }
    }
    let h0 = &normed * &params.norm_scale + &params.norm_shift;
    let pre_act = h0.dot(&params.w1) + &params.b1;
    let hidden = pre_act.mapv(gelu);
    let dropped = match dropout {
        Some(mask) => {
            if mask.dim() != hidden.dim() {
                return Err(Error::contract("dropout mask shape mismatch"));
            }
            &hidden * mask
        }
        None => hidden.clone(),
    };
    let logits = dropped.dot(&params.w2) + &params.b2;
    let mut probs = Array2::zeros(logits.dim());
    let mut log_z = Array1::zeros(batch);
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        let lz = max + z.ln();
        log_z[i] = lz;
        for (j, &v) in row.iter().enumerate() {
            probs[[i, j]] = (v - lz).exp();
        }
    }
    Ok(ForwardCache {
        normed,
        h0,
        pre_act,
        hidden,
        dropped,
        probs,
        log_z,
        logits,
    })
}

/// Backpropagate a logit-space gradient (batch×C) through the head.
pub(crate) fn backward(
    params: &ClassifierParams,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
    dropout: Option<&Array2<f64>>,
) -> Gradients {
    let dw2 = cache.dropped.t().dot(dlogits);
    let db2 = dlogits.sum_axis(Axis(0));
    let mut dhidden = dlogits.dot(&params.w2.t());
    if let Some(mask) = dropout {
        dhidden *= mask;
    }
    let da1 = &dhidden * &cache.pre_act.mapv(gelu_deriv);
    let dw1 = cache.h0.t().dot(&da1);
    let db1 = da1.sum_axis(Axis(0));
    let dh0 = da1.dot(&params.w1.t());
    let dnorm_scale = (&dh0 * &cache.normed).sum_axis(Axis(0));
    let dnorm_shift = dh0.sum_axis(Axis(0));
    Gradients {
        norm_scale: dnorm_scale,
        norm_shift: dnorm_shift,
        w1: dw1,
        b1: db1,
        w2: dw2,
        b2: db2,
    }
}

/// Dropout behaviour of a prediction pass.
#[derive(Debug, Clone, Copy)]
pub enum DropoutMode {
    Off,
    Stochastic { seed: u64 },
}

/// Class probabilities for every row of `features`.
///
/// Deterministic when `DropoutMode::Off`; each row sums to 1.
pub fn predict_probs(
    params: &ClassifierParams,
    features: &FeatureMatrix,
    mode: DropoutMode,
) -> Result<Array2<f64>> {
    let mask = match mode {
        DropoutMode::Off => None,
        DropoutMode::Stochastic { seed } => {
            let mut rng = stream_rng(seed, streams::DROPOUT_PREDICT);
            Some(params.sample_dropout_mask(features.n(), &mut rng))
        }
    };
    Ok(forward(params, features.view(), mask.as_ref())?.probs)
}

/// Argmax predictions for every row (ties broken toward the smaller class).
pub fn predict_labels(params: &ClassifierParams, features: &FeatureMatrix) -> Result<LabelVector> {
    let probs = predict_probs(params, features, DropoutMode::Off)?;
    let labels = probs.outer_iter().map(|row| argmax(row)).collect();
    LabelVector::new(labels, params.w2.ncols())
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Mean cross-entropy over the batch plus its parameter gradient.
///
/// `dropout` carries pre-sampled inverted-dropout factors when training;
/// pass `None` for a deterministic pass.
pub fn supervised_loss(
    params: &ClassifierParams,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    dropout: Option<&Array2<f64>>,
) -> Result<(f64, Gradients)> {
    let batch = features.nrows();
    if batch == 0 {
        return Err(Error::contract("empty batch"));
    }
    if labels.len() != batch {
        return Err(Error::contract("label count does not match batch size"));
    }
    let c = params.w2.ncols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let cache = forward(params, features, dropout)?;
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut dlogits = cache.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss += (cache.log_z[i] - cache.logits[[i, y]]) * inv;
        dlogits[[i, y]] -= 1.0;
    }
    dlogits *= inv;
    let grads = backward(params, &cache, &dlogits, dropout);
    Ok((loss, grads))
}

/// Whether the uncertainty norm includes the classifier bias row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// Norm over the flattened (w2, b2) gradient. Default.
    Include,
    /// Norm over the w2 gradient only; equals the gradient-embedding norm.
    Exclude,
}

/// Gradient-norm uncertainty of one sample.
///
/// The score is the L2 norm of the last-layer cross-entropy gradient taken
/// against the sample's own argmax prediction. Closed form:
/// `||p - e_yhat|| * sqrt(||h||^2 + 1)` with the bias row included, where
/// `h` is the last-layer input.
pub fn gradient_norm_uncertainty(
    params: &ClassifierParams,
    feature: ArrayView1<'_, f64>,
    bias: BiasMode,
) -> Result<f64> {
    let row = feature.insert_axis(Axis(0));
    let cache = forward(params, row, None)?;
    let p = cache.probs.row(0);
    let yhat = argmax(p);
    let mut resid_sq = 0.0;
    for (j, &v) in p.iter().enumerate() {
        let r = if j == yhat { v - 1.0 } else { v };
        resid_sq += r * r;
    }
    let h_sq = cache.hidden.row(0).iter().map(|v| v * v).sum::<f64>();
    let factor = match bias {
        BiasMode::Include => (h_sq + 1.0).sqrt(),
        BiasMode::Exclude => h_sq.sqrt(),
    };
    Ok(resid_sq.sqrt() * factor)
}

/// Uncertainty scores for every row of `features`.
pub fn uncertainty_scores(
    params: &ClassifierParams,
    features: &FeatureMatrix,
    bias: BiasMode,
) -> Result<UncertaintyVector> {
    let mut scores = Vec::with_capacity(features.n());
    for i in 0..features.n() {
        scores.push(gradient_norm_uncertainty(params, features.row(i), bias)?);
    }
    UncertaintyVector::new(scores)
}

/// Flattened last-layer gradient `(p - e_yhat) ⊗ h`, length H·C.
///
/// Entry `h*C + c` is `hidden[h] * (p[c] - [c == yhat])`; the Euclidean norm
/// equals the bias-excluded gradient-norm uncertainty exactly.
pub fn gradient_embedding(
    params: &ClassifierParams,
    feature: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let row = feature.insert_axis(Axis(0));
    let cache = forward(params, row, None)?;
    let p = cache.probs.row(0);
    let yhat = argmax(p);
    let hidden = cache.hidden.row(0);
    let (_, h, c) = params.dims();
    let mut emb = Array1::zeros(h * c);
    for (k, &hv) in hidden.iter().enumerate() {
        for (j, &pv) in p.iter().enumerate() {
            let r = if j == yhat { pv - 1.0 } else { pv };
            emb[k * c + j] = hv * r;
        }
    }
    Ok(emb)
}

/// `t` stochastic prediction rows under Monte Carlo dropout.
///
/// Reproducible under `seed`; with `dropout_rate == 0` every row equals the
/// deterministic prediction.
pub fn mc_dropout_predict(
    params: &ClassifierParams,
    feature: ArrayView1<'_, f64>,
    t: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if t == 0 {
        return Err(Error::contract("mc_dropout_predict requires t >= 1"));
    }
    let mut rng = stream_rng(seed, streams::DROPOUT_MC);
    let row = feature.insert_axis(Axis(0));
    let c = params.w2.ncols();
    let mut out = Array2::zeros((t, c));
    for pass in 0..t {
        let mask = params.sample_dropout_mask(1, &mut rng);
        let cache = forward(params, row, Some(&mask))?;
        out.row_mut(pass).assign(&cache.probs.row(0));
    }
    Ok(out)
}

/// Stream tags for RNG derivation; see [`crate::rng`].
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const VAL_SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const UNLABELED: u64 = 4;
    pub const PERTURB_LABELED: u64 = 5;
    pub const PERTURB_UNLABELED: u64 = 6;
    pub const DROPOUT_SUP: u64 = 7;
    pub const DROPOUT_ST: u64 = 8;
    pub const DROPOUT_PREDICT: u64 = 9;
    pub const DROPOUT_MC: u64 = 10;
    pub const INITIAL_POOL: u64 = 11;
    pub const QUERY: u64 = 12;
}
