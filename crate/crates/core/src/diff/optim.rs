use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    /// First-moment smoothing.
    pub beta1: f64,
    /// Second-moment smoothing.
    pub beta2: f64,
    pub eps: f64,
    /// L2 decay folded into the gradient.
    pub weight_decay: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(5.0),
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = grads.tensors().iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            for v in t.data_mut() {
                *v = (*v as f64 * s) as f32;
            }
        }
    }
    norm
}

/// Adam with optional L2 decay and global-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimConfig,
    step: u64,
    m: ParamStore<f32>,
    v: ParamStore<f32>,
}

impl Adam {
    pub fn new(config: OptimConfig, params: &ParamStore<f32>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_state(
        config: OptimConfig,
        step: u64,
        m: ParamStore<f32>,
        v: ParamStore<f32>,
    ) -> Self {
        Self { config, step, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&ParamStore<f32>, &ParamStore<f32>) {
        (&self.m, &self.v)
    }

    /// Applies one update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &mut ParamStore<f32>) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().iter().zip(grads.tensors()) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let norm = match self.config.clip_norm {
            Some(max) => clip_global_norm(grads, max),
            None => grads.tensors().iter().map(Tensor::sq_norm).sum::<f64>().sqrt(),
        };
        if !grads.tensors().iter().all(Tensor::all_finite) {
            return Err(Error::Numeric(format!(
                "non-finite gradient after clipping (norm {norm})"
            )));
        }

        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ps = params.tensors_mut().iter_mut();
        let ms = self.m.tensors_mut().iter_mut();
        let vs = self.v.tensors_mut().iter_mut();
        for (((p, g), m), v) in ps.zip(grads.tensors()).zip(ms).zip(vs) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, gi) in g.data().iter().enumerate() {
                let grad = *gi as f64 + c.weight_decay * pd[i] as f64;
                let mi = c.beta1 * md[i] as f64 + (1.0 - c.beta1) * grad;
                let vi = c.beta2 * vd[i] as f64 + (1.0 - c.beta2) * grad * grad;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let upd = c.lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                pd[i] = (pd[i] as f64 - upd) as f32;
            }
        }
        Ok(norm)
    }
}
