//! Bias-corrected Adam over flat parameter lists.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{err, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `params`, `grads`, and `state` must stay aligned across
/// calls; the state is advanced in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(err!(Config, "adam: lr must be positive, got {}", cfg.lr));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(err!(
            Config,
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(err!(Shape, "adam: param {} values vs grad {}", p.numel(), g.len()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - crate::fmath::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - crate::fmath::pow(cfg.beta2, t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let data = p.data_mut();
        for i in 0..data.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= cfg.lr * mhat / (crate::fmath::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = Tensor::new(&[2, 2], alloc::vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let before = p.clone();
        let g = alloc::vec![0.0; 4];
        let mut state = AdamState::for_params(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_magnitude_is_lr_sign() {
        // With fresh state, mhat = g and vhat = g^2, so the update is
        // lr * g / (|g| + eps) which is approximately lr * sign(g).
        for &g in &[0.37f64, -5.0, 1e-3] {
            let mut p = Tensor::scalar(0.0);
            let grads = alloc::vec![g];
            let mut state = AdamState::for_params(&[&p]);
            let cfg = AdamConfig::with_lr(0.01);
            adam_step(&mut [&mut p], &[&grads], &mut state, &cfg).unwrap();
            let expect = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p.data()[0] - expect).abs() < 1e-15);
            assert!((p.data()[0].abs() - cfg.lr).abs() < 1e-5);
            assert_eq!(p.data()[0] < 0.0, g > 0.0);
        }
    }

    #[test]
    fn deterministic_across_identical_runs() {
        let run = || {
            let mut p = Tensor::new(&[3], alloc::vec![0.1, 0.2, 0.3]).unwrap();
            let mut state = AdamState::for_params(&[&p]);
            for step in 0..25 {
                let g: alloc::vec::Vec<f64> =
                    (0..3).map(|i| ((step * 3 + i) as f64).sin()).collect();
                adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn non_positive_lr_rejected() {
        let mut p = Tensor::scalar(1.0);
        let g = alloc::vec![1.0];
        let mut state = AdamState::for_params(&[&p]);
        let cfg = AdamConfig::with_lr(0.0);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state, &cfg).is_err());
    }
}
