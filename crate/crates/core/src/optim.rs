//! Adadelta with global gradient-norm clipping, shared by the seq2seq
//! models and the classifier.

use crate::autodiff::Tensor;

/// Optimizer settings; clipping rescales the global norm to `clip_norm`
/// whenever it exceeds it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            eps: 1e-6,
            clip_norm: 2.0,
        }
    }
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adadelta state over a fixed list of parameter shapes.
#[derive(Clone, Debug)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    accum_grad_sq: Vec<Tensor>,
    accum_update_sq: Vec<Tensor>,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig, shapes: &[(usize, usize)]) -> Adadelta {
        Adadelta {
            config,
            accum_grad_sq: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            accum_update_sq: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// Clip, then apply one Adadelta update. Returns the pre-clip gradient
    /// norm.
    pub fn step(&mut self, params: &mut [&mut Tensor], mut grads: Vec<Tensor>) -> f64 {
        assert_eq!(params.len(), self.accum_grad_sq.len(), "parameter count drift");
        assert_eq!(params.len(), grads.len(), "gradient count drift");
        let norm = clip_global_norm(&mut grads, self.config.clip_norm);
        let (rho, eps) = (self.config.rho, self.config.eps);
        for ((param, grad), (eg2, ed2)) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.accum_grad_sq.iter_mut().zip(&mut self.accum_update_sq))
        {
            for i in 0..grad.numel() {
                let g = grad.data()[i];
                let eg = rho * eg2.data()[i] + (1.0 - rho) * g * g;
                eg2.data_mut()[i] = eg;
                let dx = -((ed2.data()[i] + eps).sqrt() / (eg + eps).sqrt()) * g;
                ed2.data_mut()[i] = rho * ed2.data()[i] + (1.0 - rho) * dx * dx;
                param.data_mut()[i] += dx;
            }
        }
        norm
    }

    /// Accumulators as named tensors for checkpointing, prefixed per slot.
    pub fn state_tensors(&self, names: &[String]) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(names.len() * 2);
        for (i, name) in names.iter().enumerate() {
            out.push((format!("adadelta.g2.{name}"), self.accum_grad_sq[i].clone()));
            out.push((format!("adadelta.d2.{name}"), self.accum_update_sq[i].clone()));
        }
        out
    }

    pub fn load_state(&mut self, names: &[String], tensors: &[(String, Tensor)]) {
        for (i, name) in names.iter().enumerate() {
            for (key, value) in tensors {
                if key == &format!("adadelta.g2.{name}") {
                    self.accum_grad_sq[i] = value.clone();
                } else if key == &format!("adadelta.d2.{name}") {
                    self.accum_update_sq[i] = value.clone();
                }
            }
        }
    }
}
