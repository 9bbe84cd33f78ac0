//! Finite-difference verification of every analytic gradient path.

mod common;

use common::{fd_gradient, fd_last_layer_gradient, l2_norm, max_block_rel_error};
use hssal::model::{
    gradient_embedding, gradient_norm_uncertainty, predict_probs, supervised_loss, BiasMode,
    ClassifierParams, DropoutMode, EmaState,
};
use hssal::ssl::{self_training_loss, MaskState, MaskVariant, SslConfig};
use hssal::FeatureMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

const FD_STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;

fn random_params(rng: &mut ChaCha8Rng, d: usize, h: usize, c: usize) -> ClassifierParams {
    let mut p = ClassifierParams::init(d, h, c, 0.0, rng.random());
    // Small random values in every block, including the normalization
    // affine, so all paths carry signal.
    p.norm_scale.mapv_inplace(|_| rng.random_range(0.5..1.5));
    p.norm_shift.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    p.b1.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    p.b2.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    p
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
}

#[test]
fn supervised_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..100 {
        let (d, h, c) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let n = rng.random_range(1..5);
        let params = random_params(&mut rng, d, h, c);
        let feats = random_batch(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (_, analytic) = supervised_loss(&params, feats.view(), &labels, None).unwrap();
        let fd = fd_gradient(&params, FD_STEP, |p| {
            supervised_loss(p, feats.view(), &labels, None).unwrap().0
        });
        let err = max_block_rel_error(&analytic, &fd);
        assert!(err < REL_TOL, "trial {trial}: relative error {err}");
    }
}

#[test]
fn supervised_loss_with_dropout_mask_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for trial in 0..20 {
        let (d, h, c, n) = (4, 3, 3, 3);
        let mut params = random_params(&mut rng, d, h, c);
        params.dropout_rate = 0.5;
        let feats = random_batch(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        // Fixed mask: the loss is deterministic given it, so FD applies.
        let mask = params.sample_dropout_mask(n, &mut rng);
        let (_, analytic) =
            supervised_loss(&params, feats.view(), &labels, Some(&mask)).unwrap();
        let fd = fd_gradient(&params, FD_STEP, |p| {
            supervised_loss(p, feats.view(), &labels, Some(&mask)).unwrap().0
        });
        let err = max_block_rel_error(&analytic, &fd);
        assert!(err < REL_TOL, "trial {trial}: relative error {err}");
    }
}

#[test]
fn self_training_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = SslConfig {
        tau: 0.5,
        ..Default::default()
    };
    for trial in 0..100 {
        let (d, h, c) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let n = rng.random_range(1..5);
        let params = random_params(&mut rng, d, h, c);
        let ema = EmaState::new(random_params(&mut rng, d, h, c), 0.99);
        let weak = FeatureMatrix::new(random_batch(&mut rng, n, d)).unwrap();
        let strong = FeatureMatrix::new(random_batch(&mut rng, n, d)).unwrap();
        let mut state = MaskState::new(MaskVariant::Fixed, c);
        let (_, analytic, _) =
            self_training_loss(&params, &ema, &weak, &strong, &mut state, &cfg, None).unwrap();
        let fd = fd_gradient(&params, FD_STEP, |p| {
            let mut s = MaskState::new(MaskVariant::Fixed, c);
            self_training_loss(p, &ema, &weak, &strong, &mut s, &cfg, None)
                .unwrap()
                .0
        });
        let err = max_block_rel_error(&analytic, &fd);
        assert!(err < REL_TOL, "trial {trial}: relative error {err}");
    }
}

#[test]
fn gradient_embedding_matches_last_layer_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for trial in 0..100 {
        let (d, h, c) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let params = random_params(&mut rng, d, h, c);
        let feat = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let feats = FeatureMatrix::new(feat.clone().insert_axis(ndarray::Axis(0))).unwrap();
        let probs = predict_probs(&params, &feats, DropoutMode::Off).unwrap();
        let yhat = probs
            .row(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let emb = gradient_embedding(&params, feat.view()).unwrap();
        let fd = fd_last_layer_gradient(&params, FD_STEP, false, |p| {
            let row = FeatureMatrix::new(feat.clone().insert_axis(ndarray::Axis(0))).unwrap();
            let probs = predict_probs(p, &row, DropoutMode::Off).unwrap();
            -probs[[0, yhat]].ln()
        });
        let diff = l2_norm(
            &emb.iter()
                .zip(&fd)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        let scale = l2_norm(&fd).max(l2_norm(&emb.to_vec())).max(1e-12);
        assert!(
            diff / scale < REL_TOL,
            "trial {trial}: relative error {}",
            diff / scale
        );
    }
}

#[test]
fn uncertainty_norm_matches_fd_norm_and_embedding_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for trial in 0..100 {
        let (d, h, c) = (
            rng.random_range(2..6),
            rng.random_range(2..6),
            rng.random_range(2..6),
        );
        let params = random_params(&mut rng, d, h, c);
        let feat = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let feats = FeatureMatrix::new(feat.clone().insert_axis(ndarray::Axis(0))).unwrap();
        let probs = predict_probs(&params, &feats, DropoutMode::Off).unwrap();
        let yhat = probs
            .row(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let ce = |p: &ClassifierParams| {
            let row = FeatureMatrix::new(feat.clone().insert_axis(ndarray::Axis(0))).unwrap();
            let probs = predict_probs(p, &row, DropoutMode::Off).unwrap();
            -probs[[0, yhat]].ln()
        };

        let with_bias = gradient_norm_uncertainty(&params, feat.view(), BiasMode::Include).unwrap();
        let fd_with = l2_norm(&fd_last_layer_gradient(&params, FD_STEP, true, ce));
        let rel = (with_bias - fd_with).abs() / fd_with.max(1e-12);
        assert!(rel < REL_TOL, "trial {trial}: bias-included error {rel}");

        let without_bias =
            gradient_norm_uncertainty(&params, feat.view(), BiasMode::Exclude).unwrap();
        let emb = gradient_embedding(&params, feat.view()).unwrap();
        let emb_norm = l2_norm(emb.as_slice().unwrap());
        assert!(
            (without_bias - emb_norm).abs() < 1e-10,
            "trial {trial}: closed form {without_bias} vs embedding norm {emb_norm}"
        );
    }
}

/// Exact-enumeration oracle for Monte Carlo dropout: with H hidden units
/// the dropout mask takes 2^H values, so E[p] and Var[p] are computable
/// exactly; the empirical t-pass mean must land within 3 standard errors.
#[test]
fn mc_dropout_mean_matches_enumeration_oracle() {
    use hssal::model::mc_dropout_predict;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (d, h, c) = (3, 4, 3);
    let mut params = random_params(&mut rng, d, h, c);
    params.dropout_rate = 0.5;
    let feat = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));

    // Test-side forward pass for one sample under a fixed keep-pattern.
    let forward_with_keep = |keep: &[bool]| -> Vec<f64> {
        let dvec = feat.to_vec();
        let mean = dvec.iter().sum::<f64>() / d as f64;
        let var = dvec.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        let h0: Vec<f64> = (0..d)
            .map(|j| (dvec[j] - mean) * inv * params.norm_scale[j] + params.norm_shift[j])
            .collect();
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            let mut a = params.b1[k];
            for j in 0..d {
                a += h0[j] * params.w1[[j, k]];
            }
            let g = 0.5 * a * (1.0 + libm::erf(a / std::f64::consts::SQRT_2));
            hidden[k] = if keep[k] { g / 0.5 } else { 0.0 };
        }
        let mut logits = vec![0.0; c];
        for (j, logit) in logits.iter_mut().enumerate() {
            let mut a = params.b2[j];
            for k in 0..h {
                a += hidden[k] * params.w2[[k, j]];
            }
            *logit = a;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        logits.iter().map(|l| (l - max).exp() / z).collect()
    };

    // Exact expectation and variance over all 2^H equally likely masks
    // (dropout rate 0.5 makes every pattern probability 2^-H).
    let mut mean = vec![0.0; c];
    let mut second = vec![0.0; c];
    let patterns = 1usize << h;
    for bits in 0..patterns {
        let keep: Vec<bool> = (0..h).map(|k| bits >> k & 1 == 1).collect();
        let p = forward_with_keep(&keep);
        for j in 0..c {
            mean[j] += p[j] / patterns as f64;
            second[j] += p[j] * p[j] / patterns as f64;
        }
    }

    let t = 50;
    let rows = mc_dropout_predict(&params, feat.view(), t, 909).unwrap();
    for j in 0..c {
        let emp: f64 = rows.column(j).sum() / t as f64;
        let var = (second[j] - mean[j] * mean[j]).max(0.0);
        let se = (var / t as f64).sqrt();
        assert!(
            (emp - mean[j]).abs() <= 3.0 * se + 1e-12,
            "class {j}: empirical {emp} vs exact {} (3se = {})",
            mean[j],
            3.0 * se
        );
    }
}
