//! Deterministic DDIM sampling and inversion (eta = 0), with attention-state
//! caching along the inversion path.

use alloc::vec::Vec;

use super::forward::{forward, Capture, CiaOverride, CondTokens, StepStates};
use super::schedule::NoiseSchedule;
use super::weights::DenoiserWeights;
use super::ModelConfig;
use crate::corr::{AttentionMask, MaskMode};
use crate::hero::AdapterSet;
use crate::tensor::Tensor;
use crate::{err, Result};

/// Evenly spaced timestep ladder: `steps` rungs over `[0, t_total)`, ending
/// at `t_total - 1`.
pub fn ddim_timesteps(t_total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps > t_total {
        return Err(err!(Config, "ladder of {steps} steps exceeds T={t_total}"));
    }
    Ok((0..steps).map(|i| ((i + 1) * t_total) / steps - 1).collect())
}

/// Forward process: `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn add_noise(schedule: &NoiseSchedule, z0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    if t >= schedule.len() {
        return Err(err!(Index, "timestep {t} out of T={}", schedule.len()));
    }
    if z0.shape() != eps.shape() {
        return Err(err!(Shape, "noise shape {:?} vs latent {:?}", eps.shape(), z0.shape()));
    }
    let ab = schedule.alpha_bar(t);
    let sa = crate::fmath::sqrt(ab);
    let sn = crate::fmath::sqrt(1.0 - ab);
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z, e)| sa * z + sn * e)
        .collect();
    Tensor::new(z0.shape(), data)
}

fn predict_clean(z: &Tensor, eps: &Tensor, ab: f64) -> Tensor {
    let sa = crate::fmath::sqrt(ab);
    let sn = crate::fmath::sqrt(1.0 - ab);
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(zt, e)| (zt - sn * e) / sa)
        .collect();
    Tensor::new(z.shape(), data).expect("same shape")
}

fn reproject(z0_hat: &Tensor, eps: &Tensor, ab: f64) -> Tensor {
    let sa = crate::fmath::sqrt(ab);
    let sn = crate::fmath::sqrt(1.0 - ab);
    let data = z0_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z0, e)| sa * z0 + sn * e)
        .collect();
    Tensor::new(z0_hat.shape(), data).expect("same shape")
}

pub struct DenoiseOutput {
    pub eps: Tensor,
    pub z_prev: Tensor,
    pub states: Option<StepStates>,
}

/// One deterministic DDIM update from `t` toward `t_prev` (`None` lands on
/// the clean latent).
#[allow(clippy::too_many_arguments)]
pub fn denoise_step(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    z: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    conds: &[CondTokens<'_>],
    adapters: Option<&AdapterSet>,
    override_: Option<&CiaOverride<'_>>,
    capture_states: bool,
) -> Result<DenoiseOutput> {
    let out = forward(
        cfg,
        weights,
        z,
        t,
        conds,
        adapters,
        override_,
        Capture { states: capture_states, feature_block: None },
    )?;
    let z0_hat = predict_clean(z, &out.eps, schedule.alpha_bar(t));
    let ab_prev = match t_prev {
        Some(tp) => schedule.alpha_bar(tp),
        None => 1.0,
    };
    let z_prev = reproject(&z0_hat, &out.eps, ab_prev);
    Ok(DenoiseOutput { eps: out.eps, z_prev, states: out.states })
}

/// Per-step reference injection for a sampling walk: cached states are
/// selected by matching timestep tag.
#[derive(Debug, Clone, Copy)]
pub struct SampleHooks<'a> {
    pub blocks: &'a [usize],
    pub trace: &'a [StepStates],
    pub mask: Option<&'a AttentionMask>,
    pub mode: MaskMode,
}

/// Walks the given ladder downward from its last rung.
#[allow(clippy::too_many_arguments)]
pub fn sample_along(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    z_start: &Tensor,
    ladder: &[usize],
    conds: &[CondTokens<'_>],
    adapters: Option<&AdapterSet>,
    hooks: Option<&SampleHooks<'_>>,
) -> Result<Tensor> {
    let mut z = z_start.clone();
    for i in (0..ladder.len()).rev() {
        let t = ladder[i];
        let t_prev = if i > 0 { Some(ladder[i - 1]) } else { None };
        let ov = match hooks {
            Some(h) => {
                let states = h
                    .trace
                    .iter()
                    .find(|s| s.timestep == t)
                    .ok_or_else(|| err!(Index, "no cached states for timestep {t}"))?;
                Some(CiaOverride { blocks: h.blocks, states, mask: h.mask, mode: h.mode })
            }
            None => None,
        };
        let out = denoise_step(cfg, weights, schedule, &z, t, t_prev, conds, adapters, ov.as_ref(), false)?;
        z = out.z_prev;
    }
    Ok(z)
}

/// Deterministic DDIM sampling from `z` at the top of a fresh ladder.
pub fn ddim_sample(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    z_top: &Tensor,
    steps: usize,
    conds: &[CondTokens<'_>],
    adapters: Option<&AdapterSet>,
) -> Result<Tensor> {
    let ladder = ddim_timesteps(schedule.len(), steps)?;
    sample_along(cfg, weights, schedule, z_top, &ladder, conds, adapters, None)
}

/// Walks a ladder prefix upward from the clean latent, optionally caching
/// the attention states of every evaluated step.
pub fn invert_along(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    ladder: &[usize],
    capture: bool,
) -> Result<(Tensor, Vec<StepStates>)> {
    let mut z = z0.clone();
    let mut trace = Vec::new();
    for (i, &t) in ladder.iter().enumerate() {
        let out = forward(
            cfg,
            weights,
            &z,
            t,
            &[],
            None,
            None,
            Capture { states: capture, feature_block: None },
        )?;
        let ab_src = if i == 0 { 1.0 } else { schedule.alpha_bar(ladder[i - 1]) };
        let z0_hat = predict_clean(&z, &out.eps, ab_src);
        z = reproject(&z0_hat, &out.eps, schedule.alpha_bar(t));
        if let Some(states) = out.states {
            trace.push(states);
        }
    }
    Ok((z, trace))
}

/// DDIM inversion over its own evenly spaced ladder; `steps == 0` returns
/// the input unchanged with an empty cache.
pub fn ddim_invert(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    steps: usize,
    capture: bool,
) -> Result<(Tensor, Vec<StepStates>)> {
    let ladder = ddim_timesteps(schedule.len(), steps)?;
    invert_along(cfg, weights, schedule, z0, &ladder, capture)
}
