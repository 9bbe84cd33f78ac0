//! Shared test oracles: central finite differences over parameter blocks.
//!
//! Compiled once per integration-test target; not every target uses every
//! helper.
#![allow(dead_code)]

use hssal::model::{ClassifierParams, Gradients};

/// Central finite-difference gradient of `loss` over every parameter
/// block.
pub fn fd_gradient<L>(params: &ClassifierParams, step: f64, loss: L) -> Gradients
where
    L: Fn(&ClassifierParams) -> f64,
{
    let mut fd = Gradients::zeros_like(params);
    let mut probe = params.clone();

    macro_rules! fd_block {
        ($field:ident, 1) => {
            for i in 0..params.$field.len() {
                let orig = probe.$field[i];
                probe.$field[i] = orig + step;
                let plus = loss(&probe);
                probe.$field[i] = orig - step;
                let minus = loss(&probe);
                probe.$field[i] = orig;
                fd.$field[i] = (plus - minus) / (2.0 * step);
            }
        };
        ($field:ident, 2) => {
            for i in 0..params.$field.nrows() {
                for j in 0..params.$field.ncols() {
                    let orig = probe.$field[[i, j]];
                    probe.$field[[i, j]] = orig + step;
                    let plus = loss(&probe);
                    probe.$field[[i, j]] = orig - step;
                    let minus = loss(&probe);
                    probe.$field[[i, j]] = orig;
                    fd.$field[[i, j]] = (plus - minus) / (2.0 * step);
                }
            }
        };
    }

    fd_block!(norm_scale, 1);
    fd_block!(norm_shift, 1);
    fd_block!(w1, 2);
    fd_block!(b1, 1);
    fd_block!(w2, 2);
    fd_block!(b2, 1);
    fd
}

/// Norm-wise relative error between two gradient blocks.
fn block_rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Maximum per-block relative error between analytic and FD gradients.
pub fn max_block_rel_error(analytic: &Gradients, fd: &Gradients) -> f64 {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (
            analytic.norm_scale.to_vec(),
            fd.norm_scale.to_vec(),
        ),
        (
            analytic.norm_shift.to_vec(),
            fd.norm_shift.to_vec(),
        ),
        (
            analytic.w1.iter().copied().collect(),
            fd.w1.iter().copied().collect(),
        ),
        (analytic.b1.to_vec(), fd.b1.to_vec()),
        (
            analytic.w2.iter().copied().collect(),
            fd.w2.iter().copied().collect(),
        ),
        (analytic.b2.to_vec(), fd.b2.to_vec()),
    ];
    pairs
        .iter()
        .map(|(a, f)| block_rel_error(a, f))
        .fold(0.0, f64::max)
}

/// FD gradient restricted to the (w2, b2) blocks, flattened, for the
/// last-layer uncertainty oracle.
pub fn fd_last_layer_gradient<L>(
    params: &ClassifierParams,
    step: f64,
    include_bias: bool,
    loss: L,
) -> Vec<f64>
where
    L: Fn(&ClassifierParams) -> f64,
{
    let mut probe = params.clone();
    let mut flat = Vec::new();
    for i in 0..params.w2.nrows() {
        for j in 0..params.w2.ncols() {
            let orig = probe.w2[[i, j]];
            probe.w2[[i, j]] = orig + step;
            let plus = loss(&probe);
            probe.w2[[i, j]] = orig - step;
            let minus = loss(&probe);
            probe.w2[[i, j]] = orig;
            flat.push((plus - minus) / (2.0 * step));
        }
    }
    if include_bias {
        for j in 0..params.b2.len() {
            let orig = probe.b2[j];
            probe.b2[j] = orig + step;
            let plus = loss(&probe);
            probe.b2[j] = orig - step;
            let minus = loss(&probe);
            probe.b2[j] = orig;
            flat.push((plus - minus) / (2.0 * step));
        }
    }
    flat
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
