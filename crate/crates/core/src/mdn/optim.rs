//! AdamW with adaptive gradient clipping and a warmup/exponential-decay
//! learning-rate schedule.

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdn::network::MdnParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub weight_decay: f64,
    /// Warmup lasts `min(warmup_cap, n_iter / warmup_divisor)` steps.
    pub warmup_cap: usize,
    pub warmup_divisor: usize,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub clip_threshold: f64,
    pub clip_eps: f64,
    pub batch_size: usize,
    pub iter_cap: usize,
    pub iter_per_sample: usize,
    pub min_iter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            weight_decay: 1e-2,
            warmup_cap: 500,
            warmup_divisor: 5,
            decay_rate: 0.9,
            decay_steps: 2000,
            clip_threshold: 0.1,
            clip_eps: 1e-3,
            batch_size: 128,
            iter_cap: 10_000,
            iter_per_sample: 10,
            min_iter: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Settings used for the ternary phase benchmark.
    pub fn ternary() -> Self {
        Self {
            peak_lr: 2e-4,
            weight_decay: 5e-2,
            batch_size: 64,
            iter_cap: 40_000,
            iter_per_sample: 200,
            min_iter: 2000,
            ..Self::default()
        }
    }

    /// Gradient steps for a labeled set of size `n_lab`:
    /// `clamp(iter_per_sample * n_lab, min_iter, iter_cap)`.
    pub fn n_iter(&self, n_lab: usize) -> usize {
        (self.iter_per_sample * n_lab).min(self.iter_cap).max(self.min_iter)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_lr", self.peak_lr),
            ("decay_rate", self.decay_rate),
            ("clip_threshold", self.clip_threshold),
            ("clip_eps", self.clip_eps),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        let counts = [
            ("warmup_divisor", self.warmup_divisor),
            ("decay_steps", self.decay_steps),
            ("batch_size", self.batch_size),
            ("iter_cap", self.iter_cap),
            ("iter_per_sample", self.iter_per_sample),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.min_iter > self.iter_cap {
            return Err(Error::Config("min_iter exceeds iter_cap".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Linear warmup from zero to the peak, then `peak * rate^((t - warmup) / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub decay_rate: f64,
    pub decay_steps: usize,
}

impl LrSchedule {
    pub fn for_run(cfg: &TrainConfig, n_iter: usize) -> Self {
        Self {
            peak: cfg.peak_lr,
            warmup_steps: cfg.warmup_cap.min(n_iter / cfg.warmup_divisor),
            decay_rate: cfg.decay_rate,
            decay_steps: cfg.decay_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let t = (step - self.warmup_steps) as f64 / self.decay_steps as f64;
        self.peak * self.decay_rate.powf(t)
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: MdnParams,
    v: MdnParams,
}

impl AdamState {
    pub fn new(params: &MdnParams) -> Self {
        Self {
            m: MdnParams::zeros(params.arch()),
            v: MdnParams::zeros(params.arch()),
        }
    }
}

/// Unit-wise adaptive gradient clipping. Weight matrices are clipped per
/// output column, biases per entry: each unit gradient is rescaled so that
/// `|g_u| <= threshold * max(|w_u|, eps)`.
pub fn clip_gradients(grads: &mut MdnParams, params: &MdnParams, threshold: f64, eps: f64) {
    for (g, p) in grads.layers_mut().iter_mut().zip(params.layers()) {
        clip_matrix(&mut g.weight, &p.weight, threshold, eps);
        Zip::from(&mut g.bias).and(&p.bias).for_each(|gb, pb| {
            let max_norm = pb.abs().max(eps) * threshold;
            let norm = gb.abs();
            if norm > max_norm {
                *gb *= max_norm / norm.max(1e-6);
            }
        });
    }
}

fn clip_matrix(g: &mut Array2<f64>, w: &Array2<f64>, threshold: f64, eps: f64) {
    let g_norms = g.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    let w_norms = w.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    for (j, mut col) in g.axis_iter_mut(Axis(1)).enumerate() {
        let max_norm = w_norms[j].max(eps) * threshold;
        if g_norms[j] > max_norm {
            let factor = max_norm / g_norms[j].max(1e-6);
            col.mapv_inplace(|v| v * factor);
        }
    }
}

/// One optimizer step: clip `grads` in place, then decoupled-weight-decay
/// Adam with the learning rate `schedule.lr(step_index)`.
pub fn adamw_step(
    params: &mut MdnParams,
    grads: &mut MdnParams,
    state: &mut AdamState,
    step_index: usize,
    schedule: &LrSchedule,
    cfg: &TrainConfig,
) {
    clip_gradients(grads, params, cfg.clip_threshold, cfg.clip_eps);
    let lr = schedule.lr(step_index);
    let t = (step_index + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let layers = params.layers_mut().iter_mut();
    let grads = grads.layers().iter();
    let ms = state.m.layers_mut().iter_mut();
    let vs = state.v.layers_mut().iter_mut();
    for (((p, g), m), v) in layers.zip(grads).zip(ms).zip(vs) {
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        };
        Zip::from(&mut p.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(update);
        Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    params.steps += 1;
}
