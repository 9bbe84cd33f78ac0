//! AdamW with a polynomial learning-rate decay.

use ndarray::{Array1, Array2};

use super::{ClassifierParams, Gradients};

/// Adam with decoupled weight decay and `(1 - t/T)^0.9` decay of the base
/// learning rate. Weight decay applies to the two weight matrices only,
/// not to biases or the normalization affine.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    poly_power: f64,
    total_steps: usize,
    step: usize,
    m: Gradients,
    v: Gradients,
}

impl AdamW {
    pub fn new(params: &ClassifierParams, lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            poly_power: 0.9,
            total_steps: total_steps.max(1),
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    /// Learning rate for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        let frac = self.step as f64 / self.total_steps as f64;
        self.lr * (1.0 - frac.min(1.0)).powf(self.poly_power)
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &Gradients) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        fn update1(
            p: &mut Array1<f64>,
            g: &Array1<f64>,
            m: &mut Array1<f64>,
            v: &mut Array1<f64>,
            lr: f64,
            beta1: f64,
            beta2: f64,
            eps: f64,
            bc1: f64,
            bc2: f64,
            wd: f64,
        ) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
            }
        }

        fn update2(
            p: &mut Array2<f64>,
            g: &Array2<f64>,
            m: &mut Array2<f64>,
            v: &mut Array2<f64>,
            lr: f64,
            beta1: f64,
            beta2: f64,
            eps: f64,
            bc1: f64,
            bc2: f64,
            wd: f64,
        ) {
            for ((pi, gi), (mi, vi)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * (mhat / (vhat.sqrt() + eps) + wd * *pi);
            }
        }

        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        update1(
            &mut params.norm_scale,
            &grads.norm_scale,
            &mut self.m.norm_scale,
            &mut self.v.norm_scale,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            0.0,
        );
        update1(
            &mut params.norm_shift,
            &grads.norm_shift,
            &mut self.m.norm_shift,
            &mut self.v.norm_shift,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            0.0,
        );
        update2(
            &mut params.w1,
            &grads.w1,
            &mut self.m.w1,
            &mut self.v.w1,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            self.weight_decay,
        );
        update1(
            &mut params.b1,
            &grads.b1,
            &mut self.m.b1,
            &mut self.v.b1,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            0.0,
        );
        update2(
            &mut params.w2,
            &grads.w2,
            &mut self.m.w2,
            &mut self.v.w2,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            self.weight_decay,
        );
        update1(
            &mut params.b2,
            &grads.b2,
            &mut self.m.b2,
            &mut self.v.b2,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
            0.0,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::supervised_loss;
    use ndarray::array;

    #[test]
    fn lr_decays_polynomially() {
        let params = ClassifierParams::init(2, 2, 2, 0.0, 0);
        let mut opt = AdamW::new(&params, 1e-3, 0.0, 100);
        assert_eq!(opt.current_lr(), 1e-3);
        let grads = Gradients::zeros_like(&params);
        let mut p = params.clone();
        for _ in 0..50 {
            opt.step(&mut p, &grads);
        }
        let expected = 1e-3 * (1.0 - 0.5f64).powf(0.9);
        assert!((opt.current_lr() - expected).abs() < 1e-12);
    }

    #[test]
    fn descends_on_a_fixed_batch() {
        let mut params = ClassifierParams::init(3, 4, 2, 0.0, 7);
        let feats = array![[1.0, -0.5, 0.2], [-1.0, 0.5, -0.2], [0.3, 2.0, -1.0]];
        let labels = [0usize, 1, 0];
        let mut opt = AdamW::new(&params, 1e-2, 0.0, 200);
        let (loss0, _) = supervised_loss(&params, feats.view(), &labels, None).unwrap();
        for _ in 0..200 {
            let (_, grads) = supervised_loss(&params, feats.view(), &labels, None).unwrap();
            opt.step(&mut params, &grads);
        }
        let (loss1, _) = supervised_loss(&params, feats.view(), &labels, None).unwrap();
        assert!(loss1 < loss0 * 0.5, "loss {loss0} -> {loss1}");
    }
}
