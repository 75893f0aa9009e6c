use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::{Error, Result};

/// Adam hyper-parameters and the step-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<u32>,
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: vec![100, 160, 180],
            decay: 0.5,
        }
    }
}

impl AdamConfig {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.decay.powi(passed as i32)
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.tensor(i).len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Weights and moments are stored at `f32`
/// precision after the update so that saving and reloading is lossless.
pub fn adam_step(params: &mut ParamSet, grads: &[Vec<f64>], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients / {} moments for {} tensors",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for i in 0..params.len() {
        let n = params.tensor(i).len();
        if grads[i].len() != n || state.m[i].len() != n || state.v[i].len() != n {
            return Err(Error::ShapeMismatch(format!("tensor {}", params.name(i))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = params.tensor_mut(i).data_mut();
        for k in 0..w.len() {
            let g = grads[i][k];
            m[k] = round32(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g);
            v[k] = round32(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g);
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            w[k] = round32(w[k] - lr * mh / (vh.sqrt() + cfg.eps));
        }
    }
    Ok(())
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn schedule_halves_at_milestones() {
        let c = AdamConfig::default();
        assert_eq!(c.lr_at_epoch(0), 1e-4);
        assert_eq!(c.lr_at_epoch(99), 1e-4);
        assert_eq!(c.lr_at_epoch(100), 5e-5);
        assert_eq!(c.lr_at_epoch(160), 2.5e-5);
        assert_eq!(c.lr_at_epoch(199), 1.25e-5);
    }

    #[test]
    fn zero_grads_keep_weights() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::row(vec![0.5, -0.25]));
        let mut s = AdamState::new(&p);
        let before = p.clone();
        adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        s.m[0] = vec![1.0, 1.0];
        s.v[0] = vec![1.0, 1.0];
        adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert!((s.m[0][0] - 0.9).abs() < 1e-7 && (s.v[0][0] - 0.999).abs() < 1e-7);
        assert!(adam_step(&mut p, &[vec![0.0]], &mut s, 1e-3, &AdamConfig::default()).is_err());
    }

    #[test]
    fn quadratic_converges() {
        let target = [0.3, -1.2, 2.0, 0.0];
        let mut p = ParamSet::new();
        p.add("w", Tensor::row(vec![0.0; 4]));
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        for _ in 0..5000 {
            let g: Vec<f64> = p.tensor(0).data().iter().zip(&target).map(|(w, t)| w - t).collect();
            adam_step(&mut p, &[g], &mut s, 1e-2, &cfg).unwrap();
        }
        for (w, t) in p.tensor(0).data().iter().zip(&target) {
            assert!((w - t).abs() < 1e-3, "{w} vs {t}");
        }
    }
}
