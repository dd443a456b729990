//! Restoration stage: low-rank adapters trained on anchor-derived pairs,
//! then applied to every frame's stage-1 output.
//!
//! Condition images enter as extra token streams (see
//! [`crate::model::forward`]); only the adapter factors train, the base
//! denoiser stays frozen.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::Tape;
use crate::frame::{Frame, VideoSequence};
use crate::model::{
    add_noise, ddim_sample, patchify, unpatchify, CondTokens, DenoiserWeights, ModelConfig,
    NoiseSchedule, TrainLog,
};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::zero::ZeroOutput;
use crate::{err, Result};

const ADAPTER_A_STD: f64 = 0.05;

/// One low-rank factor pair: `delta(x) = (alpha/r) * (x A) B`.
#[derive(Debug, Clone)]
pub struct ProjAdapter {
    /// Down-projection `[d, r]`, small random init.
    pub a: Tensor,
    /// Up-projection `[r, d]`, zero init.
    pub b: Tensor,
}

/// Adapters for the four attended projections of one block, one branch.
#[derive(Debug, Clone)]
pub struct BranchBlockAdapters {
    pub q: ProjAdapter,
    pub k: ProjAdapter,
    pub v: ProjAdapter,
    pub o: ProjAdapter,
}

/// Per-branch low-rank adapters over every block's attention projections.
///
/// All `B` factors start at zero, so a freshly attached set leaves the base
/// model bit-identical and condition streams inert.
#[derive(Debug, Clone)]
pub struct AdapterSet {
    pub rank: usize,
    pub alpha: f64,
    pub branches: usize,
    pub d_model: usize,
    /// `[block][branch]`.
    pub blocks: Vec<Vec<BranchBlockAdapters>>,
}

impl AdapterSet {
    pub fn init(cfg: &ModelConfig, branches: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(err!(Config, "adapter rank must be positive"));
        }
        if branches == 0 || branches > 2 {
            return Err(err!(Config, "adapter branches must be 1 or 2, got {branches}"));
        }
        let d = cfg.d_model;
        let mut rng = Rng::derive(seed, 0x6c6f_7261);
        let proj = |rng: &mut Rng| ProjAdapter {
            a: Tensor::randn(&[d, rank], ADAPTER_A_STD, rng).with_grad(),
            b: Tensor::zeros(&[rank, d]).with_grad(),
        };
        let blocks = (0..cfg.blocks)
            .map(|_| {
                (0..branches)
                    .map(|_| BranchBlockAdapters {
                        q: proj(&mut rng),
                        k: proj(&mut rng),
                        v: proj(&mut rng),
                        o: proj(&mut rng),
                    })
                    .collect()
            })
            .collect();
        Ok(AdapterSet { rank, alpha, branches, d_model: d, blocks })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// True while every up-projection is still exactly zero.
    pub fn is_zero(&self) -> bool {
        self.blocks.iter().flatten().all(|b| {
            [&b.q, &b.k, &b.v, &b.o]
                .iter()
                .all(|p| p.b.data().iter().all(|&v| v == 0.0))
        })
    }

    /// Trainable parameters added on top of the frozen base:
    /// branches x blocks x 4 projections x (d*r + r*d).
    pub fn added_param_count(&self) -> usize {
        self.blocks
            .iter()
            .flatten()
            .map(|b| {
                [&b.q, &b.k, &b.v, &b.o]
                    .iter()
                    .map(|p| p.a.numel() + p.b.numel())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Stable name/tensor listing, `block{i}.branch{b}.{q|k|v|o}.{a|b}`.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, branches) in self.blocks.iter().enumerate() {
            for (bi, br) in branches.iter().enumerate() {
                for (tag, p) in [("q", &br.q), ("k", &br.k), ("v", &br.v), ("o", &br.o)] {
                    out.push((alloc::format!("block{i}.branch{bi}.{tag}.a"), &p.a));
                    out.push((alloc::format!("block{i}.branch{bi}.{tag}.b"), &p.b));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for branches in self.blocks.iter_mut() {
            for br in branches.iter_mut() {
                out.push(&mut br.q.a);
                out.push(&mut br.q.b);
                out.push(&mut br.k.a);
                out.push(&mut br.k.b);
                out.push(&mut br.v.a);
                out.push(&mut br.v.b);
                out.push(&mut br.o.a);
                out.push(&mut br.o.b);
            }
        }
        out
    }

    /// Rebuilds an adapter set from named tensors (deserialization).
    pub fn from_named(
        cfg: &ModelConfig,
        branches: usize,
        rank: usize,
        alpha: f64,
        mut map: alloc::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut set = AdapterSet::init(cfg, branches, rank, alpha, 0)?;
        let names: Vec<String> = set.named().iter().map(|(n, _)| n.clone()).collect();
        let shapes: Vec<Vec<usize>> = set.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        for ((name, shape), slot) in names.iter().zip(&shapes).zip(set.params_mut()) {
            let mut t = map
                .remove(name)
                .ok_or_else(|| err!(Data, "missing adapter tensor {name}"))?;
            t.expect_shape(shape, name)?;
            t.requires_grad = true;
            *slot = t;
        }
        if let Some((extra, _)) = map.into_iter().next() {
            return Err(err!(Data, "unexpected adapter tensor {extra}"));
        }
        Ok(set)
    }
}

/// Training-pair taxonomy, following the pair catalog:
/// a `{zero_ref^0, ref}`, b `{(zero_ref^0, tgt^0), ref}`,
/// c `{zero_anc^i, tgt^i}`, d `{(zero_anc^i, tgt^i), tgt^i}`,
/// plus the direct `{anchor, ref}` baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairTag {
    /// a: reference-guided zero output of the anchor -> reference.
    ZeroRef,
    /// b: (zero output, original frame) -> reference; the two-branch pair.
    ZeroTgtRef,
    /// c: anchor-guided zero output of frame i -> frame i.
    ZeroTgt,
    /// d: (anchor-guided zero output, frame i) -> frame i. Shortcut-leaky;
    /// only constructible on explicit request.
    ZeroTgtTgt,
    /// Direct anchor -> reference baseline.
    TgtRef,
}

impl PairTag {
    pub fn condition_arity(self) -> usize {
        match self {
            PairTag::ZeroRef | PairTag::ZeroTgt | PairTag::TgtRef => 1,
            PairTag::ZeroTgtRef | PairTag::ZeroTgtTgt => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub conditions: Vec<Frame>,
    pub target: Frame,
    pub tag: PairTag,
}

impl TrainingPair {
    pub fn new(conditions: Vec<Frame>, target: Frame, tag: PairTag) -> Result<Self> {
        if conditions.len() != tag.condition_arity() {
            return Err(err!(
                Config,
                "pair {tag:?} needs {} conditions, got {}",
                tag.condition_arity(),
                conditions.len()
            ));
        }
        Ok(TrainingPair { conditions, target, tag })
    }
}

/// Training-pair selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeroMode {
    /// Implicit target usage: pairs a + c.
    Mode1,
    /// Explicit target usage: pair b only.
    Mode2,
    /// Ablation: pair a only.
    ZeroRef,
    /// Ablation: direct anchor -> reference.
    TgtRef,
}

impl HeroMode {
    pub fn branches(self) -> usize {
        match self {
            HeroMode::Mode2 => 2,
            _ => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mode1" => Ok(HeroMode::Mode1),
            "mode2" => Ok(HeroMode::Mode2),
            "zero-ref" => Ok(HeroMode::ZeroRef),
            "tgt-ref" => Ok(HeroMode::TgtRef),
            other => Err(err!(Config, "unknown mode {other}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeroMode::Mode1 => "mode1",
            HeroMode::Mode2 => "mode2",
            HeroMode::ZeroRef => "zero-ref",
            HeroMode::TgtRef => "tgt-ref",
        }
    }
}

/// Assembles the training pairs for a mode.
///
/// `zero_ref` holds reference-guided transfers of every frame, `zero_anc`
/// anchor-guided ones (required for Mode 1's auxiliary pairs and for pair
/// d). Pair d leaks a shortcut from the second condition onto the target
/// and is only built when `include_d` is set, on the two-branch mode.
pub fn build_training_pairs(
    mode: HeroMode,
    zero_ref: &ZeroOutput,
    zero_anc: Option<&ZeroOutput>,
    sequence: &VideoSequence,
    reference: &Frame,
    anchor_index: usize,
    include_d: bool,
) -> Result<Vec<TrainingPair>> {
    let n = sequence.len();
    if anchor_index >= n {
        return Err(err!(Index, "anchor index {anchor_index} out of {n} frames"));
    }
    if zero_ref.frames.len() != n {
        return Err(err!(
            Config,
            "reference-guided zero outputs cover {} of {n} frames",
            zero_ref.frames.len()
        ));
    }
    let need_anc = matches!(mode, HeroMode::Mode1) || include_d;
    let anc = match (need_anc, zero_anc) {
        (true, None) => {
            return Err(err!(Config, "mode {} needs anchor-guided zero outputs", mode.name()))
        }
        (_, any) => any,
    };
    if let Some(anc) = anc {
        if anc.frames.len() != n {
            return Err(err!(
                Config,
                "anchor-guided zero outputs cover {} of {n} frames",
                anc.frames.len()
            ));
        }
    }
    if include_d && mode != HeroMode::Mode2 {
        return Err(err!(Config, "pair d requires the two-branch mode"));
    }

    let zero_anchor_frame = zero_ref.frames[anchor_index].clone();
    let mut pairs = Vec::new();
    match mode {
        HeroMode::TgtRef => {
            pairs.push(TrainingPair::new(
                alloc::vec![sequence.frames[anchor_index].clone()],
                reference.clone(),
                PairTag::TgtRef,
            )?);
        }
        HeroMode::ZeroRef => {
            pairs.push(TrainingPair::new(
                alloc::vec![zero_anchor_frame],
                reference.clone(),
                PairTag::ZeroRef,
            )?);
        }
        HeroMode::Mode1 => {
            pairs.push(TrainingPair::new(
                alloc::vec![zero_anchor_frame],
                reference.clone(),
                PairTag::ZeroRef,
            )?);
            let anc = anc.expect("checked above");
            for i in 0..n {
                pairs.push(TrainingPair::new(
                    alloc::vec![anc.frames[i].clone()],
                    sequence.frames[i].clone(),
                    PairTag::ZeroTgt,
                )?);
            }
        }
        HeroMode::Mode2 => {
            pairs.push(TrainingPair::new(
                alloc::vec![zero_anchor_frame, sequence.frames[anchor_index].clone()],
                reference.clone(),
                PairTag::ZeroTgtRef,
            )?);
            if include_d {
                let anc = anc.expect("checked above");
                for i in 0..n {
                    pairs.push(TrainingPair::new(
                        alloc::vec![anc.frames[i].clone(), sequence.frames[i].clone()],
                        sequence.frames[i].clone(),
                        PairTag::ZeroTgtTgt,
                    )?);
                }
            }
        }
    }
    Ok(pairs)
}

/// Adapter snapshots taken mid-training plus the final state.
pub struct HeroTrainResult {
    pub adapters: AdapterSet,
    pub checkpoints: Vec<(usize, AdapterSet)>,
    pub log: TrainLog,
}

/// Trains adapters on the given pairs with the base weights frozen.
///
/// Deterministic in the seed. Conditions stay un-noised; the loss is
/// epsilon-prediction MSE on the noisy tokens only. `checkpoints` lists step
/// counts at which to snapshot the adapters (for mid-training evaluation).
#[allow(clippy::too_many_arguments)]
pub fn train_hero(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    pairs: &[TrainingPair],
    mut adapters: AdapterSet,
    steps: usize,
    lr: f64,
    seed: u64,
    checkpoints: &[usize],
) -> Result<HeroTrainResult> {
    if pairs.is_empty() {
        return Err(err!(Config, "no training pairs"));
    }
    for p in pairs {
        if p.conditions.len() != adapters.branches {
            return Err(err!(
                Config,
                "pair {:?} has {} conditions but adapters drive {} branches",
                p.tag,
                p.conditions.len(),
                adapters.branches
            ));
        }
    }
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps)?;
    // Pre-tokenize all targets and conditions once.
    let mut targets = Vec::with_capacity(pairs.len());
    let mut conds: Vec<Vec<Tensor>> = Vec::with_capacity(pairs.len());
    for p in pairs {
        targets.push(patchify(cfg, &p.target)?.tokens);
        conds.push(
            p.conditions
                .iter()
                .map(|c| patchify(cfg, c).map(|l| l.tokens))
                .collect::<Result<_>>()?,
        );
    }
    let mut rng = Rng::derive(seed, 0x6865_726f);
    let adam = AdamConfig::with_lr(lr);
    let mut state = {
        let named = adapters.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::for_params(&refs)
    };
    let mut log = TrainLog::default();
    let mut snaps = Vec::new();
    for step in 0..steps {
        let pi = rng.below(pairs.len());
        let z0 = &targets[pi];
        let t = rng.below(cfg.diffusion_steps);
        let eps = Tensor::new(z0.shape(), rng.normal_vec(z0.numel()))?;
        let z_t = add_noise(&schedule, z0, t, &eps)?;

        let mut tape = Tape::new();
        let lifted_w = crate::model::lift_frozen(&mut tape, weights);
        let lifted_a = crate::model::lift_adapters(&mut tape, &adapters);
        let z_id = tape.constant(&z_t);
        let eps_id = tape.constant(&eps);
        let cond_ids: Vec<(crate::autograd::NodeId, usize)> = conds[pi]
            .iter()
            .enumerate()
            .map(|(b, c)| (tape.constant(c), b))
            .collect();
        let pred = crate::model::forward_taped_pub(
            &mut tape,
            cfg,
            &lifted_w,
            z_id,
            t,
            &cond_ids,
            Some(&lifted_a),
        )?;
        let loss = tape.mse(pred, eps_id)?;
        log.losses.push(tape.value(loss).data()[0]);
        let grads = tape.backward(loss)?;
        let ordered = crate::model::adapter_ids(&lifted_a);
        let grad_slices: Vec<&[f64]> = ordered.iter().map(|&id| grads.expect(id)).collect();
        let mut params = adapters.params_mut();
        adam_step(&mut params, &grad_slices, &mut state, &adam)?;

        if checkpoints.contains(&(step + 1)) {
            snaps.push((step + 1, adapters.clone()));
        }
    }
    Ok(HeroTrainResult { adapters, checkpoints: snaps, log })
}

/// Regenerates one frame: full DDIM sampling from seeded noise, conditioned
/// on the given frames through the trained adapters.
pub fn restore(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    adapters: &AdapterSet,
    conditions: &[Frame],
    sampler_steps: usize,
    seed: u64,
) -> Result<Frame> {
    if conditions.len() != adapters.branches {
        return Err(err!(
            Config,
            "{} conditions but adapters drive {} branches",
            conditions.len(),
            adapters.branches
        ));
    }
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps)?;
    let mut rng = Rng::derive(seed, 0x7265_7374);
    let z_top = Tensor::new(
        &[cfg.token_count(), cfg.patch_dim()],
        rng.normal_vec(cfg.token_count() * cfg.patch_dim()),
    )?;
    let cond_tokens: Vec<Tensor> = conditions
        .iter()
        .map(|c| patchify(cfg, c).map(|l| l.tokens))
        .collect::<Result<_>>()?;
    let cond_refs: Vec<CondTokens<'_>> = cond_tokens
        .iter()
        .enumerate()
        .map(|(b, t)| CondTokens { tokens: t, branch: b })
        .collect();
    let z0 = ddim_sample(
        cfg,
        weights,
        &schedule,
        &z_top,
        sampler_steps,
        &cond_refs,
        Some(adapters),
    )?;
    unpatchify(cfg, &z0)
}
