//! Zero-shot transfer stage.
//!
//! For each target frame: DDIM-invert the target and the reference to the
//! configured start rung (caching the reference attention states), build a
//! correspondence between anchor and target features, and denoise the target
//! with reference key/value injection in the designated blocks behind a
//! per-row top-k score mask.

use alloc::vec::Vec;

use crate::corr::{
    build_corr, build_corr_raw, descriptor_features, topk_mask_with, AttentionMask, MaskMode,
    DEFAULT_MASK_LARGE,
};
use crate::frame::{Frame, FrameTriplet, VideoSequence};
use crate::model::{
    ddim_timesteps, extract_features, invert_along, patchify, sample_along, unpatchify,
    DenoiserWeights, FeatureMap, ModelConfig, NoiseSchedule, SampleHooks,
};
use crate::{err, Result};

/// Which frame guided the transfer, recorded for training-pair provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuideRef {
    /// Guided by the edited reference frame.
    Reference,
    /// Guided by the unedited anchor frame (self-reconstruction pairs).
    Anchor,
}

/// Per-frame transfer outputs for a whole sequence.
#[derive(Debug, Clone)]
pub struct ZeroOutput {
    pub frames: Vec<Frame>,
    pub k: usize,
    pub guide: GuideRef,
}

/// Feature provider for the correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Descriptor,
    Diffusion,
}

#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub k: usize,
    /// Rungs of the inference ladder to invert before masked denoising.
    pub invert_steps: usize,
    /// Ladder length; defaults to the model's inference step count.
    pub total_steps: usize,
    pub provider: FeatureKind,
    pub feature_seed: u64,
    pub mask_mode: MaskMode,
    pub mask_large: f64,
    /// `false` runs plain cross-image attention with no mask.
    pub masked: bool,
    /// Cosine-normalize features before the dot product.
    pub normalize_features: bool,
}

impl TransferConfig {
    /// Defaults: k=1 masked transfer, 15 of 20 rungs inverted, descriptor
    /// features, additive mask offsets.
    pub fn standard(k: usize) -> Self {
        TransferConfig {
            k,
            invert_steps: 15,
            total_steps: 20,
            provider: FeatureKind::Descriptor,
            feature_seed: 17,
            mask_mode: MaskMode::Additive,
            mask_large: DEFAULT_MASK_LARGE,
            masked: true,
            normalize_features: true,
        }
    }
}

fn features_for(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    frame: &Frame,
    tcfg: &TransferConfig,
) -> Result<FeatureMap> {
    match tcfg.provider {
        FeatureKind::Descriptor => descriptor_features(frame, cfg.patch_size),
        FeatureKind::Diffusion => extract_features(
            cfg,
            weights,
            schedule,
            frame,
            cfg.t_star,
            cfg.block_star,
            tcfg.feature_seed,
        ),
    }
}

/// Builds the top-k mask guiding one transfer, from anchor/target features.
pub fn guidance_mask(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    anchor: &Frame,
    target: &Frame,
    tcfg: &TransferConfig,
) -> Result<AttentionMask> {
    let f_tgt = features_for(cfg, weights, schedule, target, tcfg)?;
    let f_anc = features_for(cfg, weights, schedule, anchor, tcfg)?;
    let corr = if tcfg.normalize_features {
        build_corr(&f_tgt, &f_anc)?
    } else {
        build_corr_raw(&f_tgt, &f_anc)?
    };
    topk_mask_with(&corr, tcfg.k, tcfg.mask_large)
}

/// Transfers the reference appearance onto one target frame.
pub fn transfer(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    triplet: &FrameTriplet,
    tcfg: &TransferConfig,
) -> Result<Frame> {
    let n = cfg.token_count();
    if tcfg.masked && (tcfg.k == 0 || tcfg.k > n) {
        return Err(err!(Config, "transfer k={} outside 1..={n}", tcfg.k));
    }
    if tcfg.invert_steps == 0 || tcfg.invert_steps > tcfg.total_steps {
        return Err(err!(
            Config,
            "invert_steps {} outside 1..={}",
            tcfg.invert_steps,
            tcfg.total_steps
        ));
    }
    let ladder = ddim_timesteps(schedule.len(), tcfg.total_steps)?;
    let prefix = &ladder[..tcfg.invert_steps];

    let z_ref = patchify(cfg, &triplet.reference)?.tokens;
    let z_tgt = patchify(cfg, &triplet.target)?.tokens;

    let (_, ref_trace) = invert_along(cfg, weights, schedule, &z_ref, prefix, true)?;
    let (z_tgt_top, _) = invert_along(cfg, weights, schedule, &z_tgt, prefix, false)?;

    let mask = if tcfg.masked {
        Some(guidance_mask(cfg, weights, schedule, &triplet.anchor, &triplet.target, tcfg)?)
    } else {
        None
    };
    let hooks = SampleHooks {
        blocks: &cfg.cia_blocks,
        trace: &ref_trace,
        mask: mask.as_ref(),
        mode: tcfg.mask_mode,
    };
    let z_out = sample_along(
        cfg,
        weights,
        schedule,
        &z_tgt_top,
        prefix,
        &[],
        None,
        Some(&hooks),
    )?;
    unpatchify(cfg, &z_out)
}

/// Applies [`transfer`] to every frame of a sequence, anchor included.
/// Frames are processed independently.
pub fn propagate(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    sequence: &VideoSequence,
    anchor_index: usize,
    reference: &Frame,
    guide: GuideRef,
    tcfg: &TransferConfig,
) -> Result<ZeroOutput> {
    if anchor_index >= sequence.len() {
        return Err(err!(Index, "anchor index {anchor_index} out of {} frames", sequence.len()));
    }
    let anchor = sequence.frames[anchor_index].clone();
    let mut frames = Vec::with_capacity(sequence.len());
    for target in &sequence.frames {
        let triplet = FrameTriplet::new(anchor.clone(), reference.clone(), target.clone())?;
        frames.push(transfer(cfg, weights, schedule, &triplet, tcfg)?);
    }
    Ok(ZeroOutput { frames, k: tcfg.k, guide })
}
