//! AdamW, the warmup/decay schedule and gradient clipping.

use crate::model::graph::ParamSet;
use crate::model::tensor::Tensor;

/// Linear ramp from 0 to `base_lr` over the warmup, then linear decay to 0.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = ((warmup_ratio * total_steps as f64).round() as usize).min(total_steps);
    if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else if warmup == total_steps {
        base_lr
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    decay: Vec<bool>,
}

impl AdamW {
    /// Weight decay applies to matrices only, not to biases or norm gains.
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            decay: params.iter().map(|(_, t)| t.rows() > 1).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let wd = if self.decay[i] { self.weight_decay } else { 0.0 };
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *p -= lr * (update + wd * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 0.1, 1e-3), 0.0);
        assert_abs_diff_eq!(lr_schedule(10, 100, 0.1, 1e-3), 1e-3, epsilon = 1e-15);
        assert_eq!(lr_schedule(100, 100, 0.1, 1e-3), 0.0);
        assert_abs_diff_eq!(lr_schedule(5, 100, 0.1, 1e-3), 5e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(lr_schedule(55, 100, 0.1, 1e-3), 5e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(lr_schedule(0, 10, 0.0, 2.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::from_vec(1, 2, vec![3.0, 4.0])];
        assert_abs_diff_eq!(clip_global_norm(&mut g, 1.0), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0].sum_sq().sqrt(), 1.0, epsilon = 1e-12);
        let mut small = vec![Tensor::from_vec(1, 2, vec![0.3, 0.4])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut params = ParamSet::new();
        params.push("b", Tensor::from_vec(1, 2, vec![1.0, -1.0]));
        params.push("w", Tensor::from_vec(2, 1, vec![1.0, 1.0]));
        let mut opt = AdamW::new(&params, 0.5);
        let grads = vec![
            Tensor::from_vec(1, 2, vec![0.2, -3.0]),
            Tensor::from_vec(2, 1, vec![0.0, 1.0]),
        ];
        opt.step(&mut params, &grads, 0.1);
        // bias-corrected first step is sign(g) * lr; decay only on the matrix
        assert_abs_diff_eq!(params.get(0).data()[0], 0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(params.get(0).data()[1], -0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(params.get(1).data()[0], 1.0 - 0.1 * 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(params.get(1).data()[1], 1.0 - 0.1 * (1.0 + 0.5), epsilon = 1e-6);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::from_vec(2, 1, vec![1.0, 2.0]));
        let before = params.clone();
        let mut opt = AdamW::new(&params, 0.01);
        opt.step(&mut params, &[Tensor::from_vec(2, 1, vec![1.0, -1.0])], 0.0);
        assert_eq!(params, before);
    }
}
