//! Denoiser pretraining: epsilon-prediction MSE with Adam.

use alloc::vec::Vec;

use super::ddim::add_noise;
use super::forward::{forward_taped, LiftedWeights};
use super::schedule::NoiseSchedule;
use super::weights::DenoiserWeights;
use super::{patchify, ModelConfig};
use crate::autograd::{NodeId, Tape};
use crate::frame::VideoSequence;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{err, Result};

/// Per-step loss trace.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean over the first tenth of recorded steps (at least one).
    pub fn first_decile_mean(&self) -> f64 {
        let n = (self.losses.len() / 10).max(1).min(self.losses.len());
        self.losses[..n].iter().sum::<f64>() / n as f64
    }

    /// Mean over the last tenth of recorded steps (at least one).
    pub fn last_decile_mean(&self) -> f64 {
        let n = (self.losses.len() / 10).max(1).min(self.losses.len());
        let s = self.losses.len() - n;
        self.losses[s..].iter().sum::<f64>() / n as f64
    }

    /// Means of consecutive non-overlapping windows.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks(window)
            .filter(|c| c.len() == window)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Builds the epsilon-prediction loss on a tape from parameter leaves given
/// in `DenoiserWeights::named()` order. Used for finite-difference checks of
/// the full model.
pub fn denoiser_loss_taped(
    tape: &mut Tape,
    cfg: &ModelConfig,
    param_ids: &[NodeId],
    z_t: &Tensor,
    t: usize,
    target_eps: &Tensor,
) -> Result<NodeId> {
    let lifted = lifted_from_ordered(cfg, param_ids)?;
    let z = tape.constant(z_t);
    let target = tape.constant(target_eps);
    let pred = forward_taped(tape, cfg, &lifted, z, t, &[], None)?;
    tape.mse(pred, target)
}

pub(crate) fn lifted_from_ordered(cfg: &ModelConfig, ids: &[NodeId]) -> Result<LiftedWeights<NodeId>> {
    let expect = 3 + cfg.blocks * 16 + 4;
    if ids.len() != expect {
        return Err(err!(Config, "expected {expect} parameter ids, got {}", ids.len()));
    }
    let mut it = ids.iter().copied();
    let mut next = || it.next().expect("length checked");
    let patch_w = next();
    let patch_b = next();
    let pos = next();
    let blocks = (0..cfg.blocks)
        .map(|_| super::forward::LiftedBlock {
            ln1_g: next(),
            ln1_b: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln2_g: next(),
            ln2_b: next(),
            mlp_w1: next(),
            mlp_b1: next(),
            mlp_w2: next(),
            mlp_b2: next(),
        })
        .collect();
    Ok(LiftedWeights {
        patch_w,
        patch_b,
        pos,
        blocks,
        fin_g: next(),
        fin_b: next(),
        head_w: next(),
        head_b: next(),
    })
}

/// Trains the denoiser from scratch on the given sequences.
///
/// Deterministic in the seed: frame choice, timestep, and noise draws all
/// come from one generator. `steps == 0` returns the initialization.
pub fn train_denoiser(
    cfg: &ModelConfig,
    dataset: &[VideoSequence],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(DenoiserWeights, TrainLog)> {
    if dataset.is_empty() || dataset.iter().all(|s| s.is_empty()) {
        return Err(err!(Config, "training dataset is empty"));
    }
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps)?;
    let mut weights = DenoiserWeights::init(cfg, seed)?;
    let mut tokens: Vec<Tensor> = Vec::new();
    for seq in dataset {
        for f in &seq.frames {
            tokens.push(patchify(cfg, f)?.tokens);
        }
    }
    let mut rng = Rng::derive(seed, 0x7472_6169);
    let adam = AdamConfig::with_lr(lr);
    let mut state = {
        let named = weights.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::for_params(&refs)
    };
    let mut log = TrainLog::default();
    for _ in 0..steps {
        let z0 = &tokens[rng.below(tokens.len())];
        let t = rng.below(cfg.diffusion_steps);
        let eps = Tensor::new(z0.shape(), rng.normal_vec(z0.numel()))?;
        let z_t = add_noise(&schedule, z0, t, &eps)?;

        let mut tape = Tape::new();
        let lifted = LiftedWeights::map_from(&weights, &mut |p| tape.leaf(p));
        let z_id = tape.constant(&z_t);
        let eps_id = tape.constant(&eps);
        let pred = forward_taped(&mut tape, cfg, &lifted, z_id, t, &[], None)?;
        let loss = tape.mse(pred, eps_id)?;
        log.losses.push(tape.value(loss).data()[0]);
        let grads = tape.backward(loss)?;
        let ordered = lifted.ordered();
        let grad_slices: Vec<&[f64]> = ordered.iter().map(|&id| grads.expect(id)).collect();
        let mut params = weights.params_mut();
        adam_step(&mut params, &grad_slices, &mut state, &adam)?;
    }
    Ok((weights, log))
}
