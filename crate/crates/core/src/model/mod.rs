//! A small patch-token diffusion transformer standing in for a pretrained
//! latent-diffusion backbone.
//!
//! Images are tokenized into raw pixel patches (no VAE): a 48x48 RGB frame
//! with 4x4 patches becomes 144 tokens of 48 values each, and the diffusion
//! process runs directly on those tokens. The denoiser is a pre-LN
//! transformer whose attention layers expose everything the editing pipeline
//! manipulates: per-step Q/K/V/score caching during DDIM inversion, key/value
//! injection from a reference cache, top-k score masking, and un-noised
//! condition token streams routed through low-rank adapters.

mod ddim;
mod eng;
mod forward;
mod schedule;
mod train;
mod weights;

pub use ddim::{
    add_noise, ddim_invert, ddim_sample, ddim_timesteps, denoise_step, invert_along, sample_along,
    DenoiseOutput, SampleHooks,
};
pub use forward::{
    forward, BlockAttentionState, Capture, CiaOverride, CondTokens, ForwardOutput, StepStates,
};
pub use schedule::NoiseSchedule;
pub use train::{denoiser_loss_taped, train_denoiser, TrainLog};
pub use weights::{BlockWeights, DenoiserWeights};

pub(crate) use forward::forward_taped as forward_taped_pub;
pub(crate) use forward::{LiftedAdapters, LiftedWeights};

use alloc::vec::Vec;

use crate::autograd::{NodeId, Tape};
use crate::frame::Frame;
use crate::hero::AdapterSet;
use crate::tensor::Tensor;
use crate::{err, Result};

/// Registers the base weights on a tape as frozen constants.
pub(crate) fn lift_frozen(tape: &mut Tape, w: &DenoiserWeights) -> LiftedWeights<NodeId> {
    LiftedWeights::map_from(w, &mut |t| tape.constant(t))
}

/// Registers adapters on a tape as trainable leaves.
pub(crate) fn lift_adapters(tape: &mut Tape, a: &AdapterSet) -> LiftedAdapters<NodeId> {
    LiftedAdapters::map_from(a, &mut |t| tape.leaf(t))
}

/// Adapter leaf ids in `AdapterSet::named()` order.
pub(crate) fn adapter_ids(a: &LiftedAdapters<NodeId>) -> Vec<NodeId> {
    a.ordered()
}

/// Architecture and diffusion hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Training timestep count T.
    pub diffusion_steps: usize,
    /// Default DDIM ladder length.
    pub inference_steps: usize,
    /// Blocks that accept cross-image key/value injection.
    pub cia_blocks: Vec<usize>,
    /// Timestep used for feature extraction.
    pub t_star: usize,
    /// Block whose output is the feature map.
    pub block_star: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 48,
            patch_size: 4,
            d_model: 64,
            heads: 4,
            blocks: 6,
            mlp_ratio: 4,
            diffusion_steps: 100,
            inference_steps: 20,
            cia_blocks: alloc::vec![2, 3, 4, 5],
            t_star: 30,
            block_star: 3,
        }
    }
}

impl ModelConfig {
    /// Reduced tier for quick evaluation suites: 32x32 canvas, 64 tokens,
    /// narrower embedding, same depth and schedule.
    pub fn compact() -> Self {
        ModelConfig {
            image_size: 32,
            d_model: 48,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % self.patch_size != 0 {
            return Err(err!(
                Config,
                "image_size {} not divisible by patch_size {}",
                self.image_size,
                self.patch_size
            ));
        }
        if self.d_model % self.heads != 0 {
            return Err(err!(Config, "d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.blocks == 0 || self.diffusion_steps == 0 || self.inference_steps == 0 {
            return Err(err!(Config, "blocks/steps must be positive"));
        }
        if self.inference_steps > self.diffusion_steps {
            return Err(err!(Config, "inference_steps exceed diffusion_steps"));
        }
        if let Some(&b) = self.cia_blocks.iter().find(|&&b| b >= self.blocks) {
            return Err(err!(Config, "cia block {b} out of {} blocks", self.blocks));
        }
        if self.block_star >= self.blocks {
            return Err(err!(Config, "block_star {} out of {} blocks", self.block_star, self.blocks));
        }
        if self.t_star >= self.diffusion_steps {
            return Err(err!(Config, "t_star {} out of T={}", self.t_star, self.diffusion_steps));
        }
        Ok(())
    }

    /// Tokens per frame: (image_size / patch_size)^2.
    pub fn token_count(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Values per raw patch token: patch_size^2 * 3.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }
}

/// Token-space latent plus the diffusion timestep it lives at (`None` for a
/// clean latent).
#[derive(Debug, Clone)]
pub struct LatentTokens {
    pub tokens: Tensor,
    pub timestep: Option<usize>,
}

/// Flattens a frame into raw patch tokens in [0, 1], row-major over the
/// patch grid. Exactly invertible on 8-bit frames via [`unpatchify`].
pub fn patchify(cfg: &ModelConfig, frame: &Frame) -> Result<LatentTokens> {
    if frame.width() != cfg.image_size || frame.height() != cfg.image_size {
        return Err(err!(
            Shape,
            "patchify: frame {}x{} does not match image_size {}",
            frame.width(),
            frame.height(),
            cfg.image_size
        ));
    }
    let p = cfg.patch_size;
    let g = cfg.grid();
    let mut data = Vec::with_capacity(cfg.token_count() * cfg.patch_dim());
    for ty in 0..g {
        for tx in 0..g {
            for dy in 0..p {
                for dx in 0..p {
                    for c in 0..3 {
                        data.push(frame.channel_f64(tx * p + dx, ty * p + dy, c) / 255.0);
                    }
                }
            }
        }
    }
    Ok(LatentTokens {
        tokens: Tensor::new(&[cfg.token_count(), cfg.patch_dim()], data)?,
        timestep: None,
    })
}

/// Reassembles tokens into an 8-bit frame (round half-up, clamped).
pub fn unpatchify(cfg: &ModelConfig, tokens: &Tensor) -> Result<Frame> {
    tokens.expect_shape(&[cfg.token_count(), cfg.patch_dim()], "unpatchify tokens")?;
    let p = cfg.patch_size;
    let g = cfg.grid();
    let mut frame = Frame::filled(cfg.image_size, cfg.image_size, [0, 0, 0]);
    for ty in 0..g {
        for tx in 0..g {
            let row = tokens.row(ty * g + tx);
            let mut i = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let mut rgb = [0u8; 3];
                    for c in &mut rgb {
                        let v = crate::fmath::round_half_up(row[i] * 255.0).clamp(0.0, 255.0);
                        *c = v as u8;
                        i += 1;
                    }
                    frame.set_pixel(tx * p + dx, ty * p + dy, rgb);
                }
            }
        }
    }
    Ok(frame)
}

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Raw-pixel descriptor (deterministic, training-free).
    Descriptor,
    /// Denoiser activations at (t_star, block_star).
    Diffusion { t_star: usize, block_star: usize },
}

/// Per-token feature rows used for correspondence.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub f: Tensor,
    pub source: FeatureSource,
}

/// Sinusoidal timestep embedding of width d_model.
pub fn timestep_embedding(cfg: &ModelConfig, t: usize) -> Tensor {
    let d = cfg.d_model;
    let half = d / 2;
    let mut data = Vec::with_capacity(d);
    for i in 0..half {
        let freq = crate::fmath::exp(-(i as f64) * crate::fmath::ln(10_000.0) / half as f64);
        let arg = t as f64 * freq;
        data.push(crate::fmath::sin(arg));
        data.push(crate::fmath::cos(arg));
    }
    while data.len() < d {
        data.push(0.0);
    }
    Tensor::new(&[d], data).expect("embedding shape")
}

/// Diffusion features: noise the frame at `t_star` with a seeded draw, run a
/// single denoising forward pass, and return the `block_star` activations.
///
/// The same seed must be used for the anchor and target frames of one
/// correspondence so both share the identical noise draw.
pub fn extract_features(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    frame: &Frame,
    t_star: usize,
    block_star: usize,
    noise_seed: u64,
) -> Result<FeatureMap> {
    if block_star >= cfg.blocks {
        return Err(err!(Index, "block_star {block_star} out of {} blocks", cfg.blocks));
    }
    let z0 = patchify(cfg, frame)?;
    let mut rng = crate::rng::Rng::derive(noise_seed, 0x6665_6174);
    let eps = Tensor::new(
        z0.tokens.shape(),
        rng.normal_vec(z0.tokens.numel()),
    )?;
    let zt = add_noise(schedule, &z0.tokens, t_star, &eps)?;
    let out = forward(
        cfg,
        weights,
        &zt,
        t_star,
        &[],
        None,
        None,
        Capture {
            states: false,
            feature_block: Some(block_star),
        },
    )?;
    Ok(FeatureMap {
        f: out.features.expect("feature capture requested"),
        source: FeatureSource::Diffusion { t_star, block_star },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{bundled_scene, default_camera, PaletteSel, SceneScale};

    #[test]
    fn patchify_roundtrip_bit_exact() {
        let cfg = ModelConfig::default();
        let spec = bundled_scene("wagon", default_camera(true, SceneScale::Standard), SceneScale::Standard);
        let frame = spec.render_frame(PaletteSel::A, 0);
        let tokens = patchify(&cfg, &frame).unwrap();
        let back = unpatchify(&cfg, &tokens.tokens).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn patchify_token_count() {
        let cfg = ModelConfig::default();
        let frame = Frame::filled(48, 48, [10, 20, 30]);
        let tokens = patchify(&cfg, &frame).unwrap();
        assert_eq!(tokens.tokens.shape(), &[144, 48]);
    }

    #[test]
    fn constant_image_gives_identical_tokens() {
        let cfg = ModelConfig::default();
        let frame = Frame::filled(48, 48, [128, 128, 128]);
        let tokens = patchify(&cfg, &frame).unwrap();
        let first = tokens.tokens.row(0).to_vec();
        for i in 1..cfg.token_count() {
            assert_eq!(tokens.tokens.row(i), &first[..]);
        }
    }

    #[test]
    fn patchify_size_mismatch() {
        let cfg = ModelConfig::default();
        let frame = Frame::filled(32, 32, [0, 0, 0]);
        assert!(patchify(&cfg, &frame).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.patch_size = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.cia_blocks = alloc::vec![7];
        assert!(cfg.validate().is_err());
    }
}
