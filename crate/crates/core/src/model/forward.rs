//! Denoiser forward pass.
//!
//! One implementation serves both engines (plain tensors and the autograd
//! tape). Token streams are kept separate: the noisy stream always runs
//! through base weights; condition streams run through base weights plus
//! their branch adapters, and feed the noisy stream only through
//! adapter-gated cross-attention, so zero-initialized adapters leave the
//! base model bit-identical and conditions inert.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::eng::{Eng, InferEng, TapeEng};
use super::weights::{BlockWeights, DenoiserWeights};
use super::ModelConfig;
use crate::autograd::{NodeId, Tape};
use crate::corr::{mask_offsets, AttentionMask, MaskMode};
use crate::hero::AdapterSet;
use crate::tensor::Tensor;
use crate::{err, Result};

const LN_EPS: f64 = 1e-5;

/// Cached attention tensors for one block at one timestep. Q/K/V are
/// `[heads, tokens, d_head]`; `scores` is the pre-softmax, pre-mask
/// `Q K^T / sqrt(d_head)` as `[heads, q_tokens, k_tokens]`.
#[derive(Debug, Clone)]
pub struct BlockAttentionState {
    pub block: usize,
    pub timestep: usize,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub scores: Tensor,
}

/// All captured block states for one denoising/inversion step.
#[derive(Debug, Clone)]
pub struct StepStates {
    pub timestep: usize,
    pub blocks: Vec<BlockAttentionState>,
}

impl StepStates {
    pub fn block(&self, b: usize) -> Option<&BlockAttentionState> {
        self.blocks.iter().find(|s| s.block == b)
    }
}

/// Key/value injection into designated blocks, with an optional top-k score
/// mask. Queries stay with the running (target) stream.
#[derive(Debug, Clone, Copy)]
pub struct CiaOverride<'a> {
    pub blocks: &'a [usize],
    pub states: &'a StepStates,
    pub mask: Option<&'a AttentionMask>,
    pub mode: MaskMode,
}

/// Un-noised condition tokens for one adapter branch.
#[derive(Debug, Clone, Copy)]
pub struct CondTokens<'a> {
    /// Raw patch tokens `[N, patch_dim]`.
    pub tokens: &'a Tensor,
    pub branch: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Capture {
    pub states: bool,
    pub feature_block: Option<usize>,
}

pub struct ForwardOutput {
    pub eps: Tensor,
    pub states: Option<StepStates>,
    pub features: Option<Tensor>,
}

// --- lifted parameter handles ---------------------------------------------

pub(crate) struct LiftedBlock<V> {
    pub ln1_g: V,
    pub ln1_b: V,
    pub wq: V,
    pub bq: V,
    pub wk: V,
    pub bk: V,
    pub wv: V,
    pub bv: V,
    pub wo: V,
    pub bo: V,
    pub ln2_g: V,
    pub ln2_b: V,
    pub mlp_w1: V,
    pub mlp_b1: V,
    pub mlp_w2: V,
    pub mlp_b2: V,
}

pub(crate) struct LiftedWeights<V> {
    pub patch_w: V,
    pub patch_b: V,
    pub pos: V,
    pub blocks: Vec<LiftedBlock<V>>,
    pub fin_g: V,
    pub fin_b: V,
    pub head_w: V,
    pub head_b: V,
}

impl<V: Copy> LiftedWeights<V> {
    pub fn map_from(w: &DenoiserWeights, f: &mut impl FnMut(&Tensor) -> V) -> Self {
        let lift_block = |b: &BlockWeights, f: &mut dyn FnMut(&Tensor) -> V| LiftedBlock {
            ln1_g: f(&b.ln1_g),
            ln1_b: f(&b.ln1_b),
            wq: f(&b.wq),
            bq: f(&b.bq),
            wk: f(&b.wk),
            bk: f(&b.bk),
            wv: f(&b.wv),
            bv: f(&b.bv),
            wo: f(&b.wo),
            bo: f(&b.bo),
            ln2_g: f(&b.ln2_g),
            ln2_b: f(&b.ln2_b),
            mlp_w1: f(&b.mlp_w1),
            mlp_b1: f(&b.mlp_b1),
            mlp_w2: f(&b.mlp_w2),
            mlp_b2: f(&b.mlp_b2),
        };
        LiftedWeights {
            patch_w: f(&w.patch_embed_w),
            patch_b: f(&w.patch_embed_b),
            pos: f(&w.pos_embed),
            blocks: w.blocks.iter().map(|b| lift_block(b, f)).collect(),
            fin_g: f(&w.final_ln_g),
            fin_b: f(&w.final_ln_b),
            head_w: f(&w.head_w),
            head_b: f(&w.head_b),
        }
    }

    /// Handles in `DenoiserWeights::named()` order.
    pub fn ordered(&self) -> Vec<V> {
        let mut out = alloc::vec![self.patch_w, self.patch_b, self.pos];
        for b in &self.blocks {
            out.extend_from_slice(&[
                b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln2_g,
                b.ln2_b, b.mlp_w1, b.mlp_b1, b.mlp_w2, b.mlp_b2,
            ]);
        }
        out.extend_from_slice(&[self.fin_g, self.fin_b, self.head_w, self.head_b]);
        out
    }
}

pub(crate) struct LiftedProj<V> {
    pub a: V,
    pub b: V,
}

pub(crate) struct LiftedBranchBlock<V> {
    pub q: LiftedProj<V>,
    pub k: LiftedProj<V>,
    pub v: LiftedProj<V>,
    pub o: LiftedProj<V>,
}

pub(crate) struct LiftedAdapters<V> {
    pub scaling: f64,
    /// `[block][branch]`.
    pub blocks: Vec<Vec<LiftedBranchBlock<V>>>,
}

impl<V: Copy> LiftedAdapters<V> {
    pub fn map_from(set: &AdapterSet, f: &mut impl FnMut(&Tensor) -> V) -> Self {
        LiftedAdapters {
            scaling: set.scaling(),
            blocks: set
                .blocks
                .iter()
                .map(|branches| {
                    branches
                        .iter()
                        .map(|b| LiftedBranchBlock {
                            q: LiftedProj { a: f(&b.q.a), b: f(&b.q.b) },
                            k: LiftedProj { a: f(&b.k.a), b: f(&b.k.b) },
                            v: LiftedProj { a: f(&b.v.a), b: f(&b.v.b) },
                            o: LiftedProj { a: f(&b.o.a), b: f(&b.o.b) },
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Handles in `AdapterSet::named()` order.
    pub fn ordered(&self) -> Vec<V> {
        let mut out = Vec::new();
        for branches in &self.blocks {
            for b in branches {
                out.extend_from_slice(&[b.q.a, b.q.b, b.k.a, b.k.b, b.v.a, b.v.b, b.o.a, b.o.b]);
            }
        }
        out
    }
}

/// Per-block key/value handles and mask offsets, pre-split by head.
pub(crate) struct OverridePlan<V> {
    pub kv: BTreeMap<usize, Vec<(V, V)>>,
    pub offsets: Option<V>,
}

pub(crate) struct CapturedBlock<V> {
    pub block: usize,
    pub q: Vec<V>,
    pub k: Vec<V>,
    pub v: Vec<V>,
    pub scores: Vec<V>,
}

pub(crate) struct GenericOut<V> {
    pub eps: V,
    pub captured: Vec<CapturedBlock<V>>,
    pub feature: Option<V>,
}

fn proj<E: Eng>(
    eng: &mut E,
    x: E::V,
    w: E::V,
    b: E::V,
    adapter: Option<(&LiftedProj<E::V>, f64)>,
) -> Result<E::V> {
    let base = eng.matmul(x, w)?;
    let mut out = eng.add_bias_row(base, b)?;
    if let Some((p, s)) = adapter {
        let xa = eng.matmul(x, p.a)?;
        let xab = eng.matmul(xa, p.b)?;
        let delta = eng.scale(xab, s);
        out = eng.add(out, delta)?;
    }
    Ok(out)
}

fn split_heads<E: Eng>(eng: &mut E, x: E::V, heads: usize, dh: usize) -> Result<Vec<E::V>> {
    (0..heads).map(|h| eng.slice_cols(x, h * dh, dh)).collect()
}

/// One attention sub-layer over a single stream (self-attention), returning
/// the per-head K/V handles for later cross-attention reuse.
#[allow(clippy::too_many_arguments)]
fn self_attention<E: Eng>(
    eng: &mut E,
    cfg: &ModelConfig,
    bw: &LiftedBlock<E::V>,
    x: E::V,
    adapter: Option<(&LiftedBranchBlock<E::V>, f64)>,
) -> Result<(E::V, Vec<E::V>, Vec<E::V>)> {
    let heads = cfg.heads;
    let dh = cfg.d_head();
    let inv = 1.0 / crate::fmath::sqrt(dh as f64);
    let h = eng.layer_norm(x, bw.ln1_g, bw.ln1_b, LN_EPS)?;
    let q = proj(eng, h, bw.wq, bw.bq, adapter.map(|(a, s)| (&a.q, s)))?;
    let k = proj(eng, h, bw.wk, bw.bk, adapter.map(|(a, s)| (&a.k, s)))?;
    let v = proj(eng, h, bw.wv, bw.bv, adapter.map(|(a, s)| (&a.v, s)))?;
    let qs = split_heads(eng, q, heads, dh)?;
    let ks = split_heads(eng, k, heads, dh)?;
    let vs = split_heads(eng, v, heads, dh)?;
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let kt = eng.transpose(ks[hd])?;
        let raw = eng.matmul(qs[hd], kt)?;
        let scores = eng.scale(raw, inv);
        let attn = eng.softmax_rows(scores)?;
        outs.push(eng.matmul(attn, vs[hd])?);
    }
    let merged = eng.concat_cols(&outs)?;
    let out = proj(eng, merged, bw.wo, bw.bo, adapter.map(|(a, s)| (&a.o, s)))?;
    let res = eng.add(x, out)?;
    Ok((res, ks, vs))
}

fn mlp<E: Eng>(eng: &mut E, bw: &LiftedBlock<E::V>, x: E::V) -> Result<E::V> {
    let m = eng.layer_norm(x, bw.ln2_g, bw.ln2_b, LN_EPS)?;
    let m1 = eng.matmul(m, bw.mlp_w1)?;
    let m1 = eng.add_bias_row(m1, bw.mlp_b1)?;
    let m1 = eng.gelu(m1);
    let m2 = eng.matmul(m1, bw.mlp_w2)?;
    let m2 = eng.add_bias_row(m2, bw.mlp_b2)?;
    eng.add(x, m2)
}

/// Full denoiser forward over lifted handles.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_generic<E: Eng>(
    eng: &mut E,
    cfg: &ModelConfig,
    w: &LiftedWeights<E::V>,
    z: E::V,
    t: usize,
    conds: &[(E::V, usize)],
    adapters: Option<&LiftedAdapters<E::V>>,
    plan: Option<&OverridePlan<E::V>>,
    capture_states: bool,
    feature_block: Option<usize>,
) -> Result<GenericOut<E::V>> {
    let heads = cfg.heads;
    let dh = cfg.d_head();
    let inv = 1.0 / crate::fmath::sqrt(dh as f64);

    // Embed the noisy stream: patch projection + positions + timestep.
    let temb = super::timestep_embedding(cfg, t);
    let temb = eng.lift(&temb);
    let e = eng.matmul(z, w.patch_w)?;
    let e = eng.add_bias_row(e, w.patch_b)?;
    let e = eng.add(e, w.pos)?;
    let mut x_n = eng.add_bias_row(e, temb)?;

    // Condition streams share the positional table but stay un-noised.
    let mut streams: Vec<(E::V, usize)> = Vec::with_capacity(conds.len());
    for &(c, branch) in conds {
        let e = eng.matmul(c, w.patch_w)?;
        let e = eng.add_bias_row(e, w.patch_b)?;
        let xc = eng.add(e, w.pos)?;
        streams.push((xc, branch));
    }

    let mut captured = Vec::new();
    let mut feature = None;

    for (bi, bw) in w.blocks.iter().enumerate() {
        // Condition streams first; their fresh K/V feed cross-attention.
        let mut cond_kv: Vec<(Vec<E::V>, Vec<E::V>, usize)> = Vec::with_capacity(streams.len());
        for (xc, branch) in streams.iter_mut() {
            let ad = adapters.map(|a| (&a.blocks[bi][*branch], a.scaling));
            let (res, ks, vs) = self_attention(eng, cfg, bw, *xc, ad)?;
            *xc = res;
            cond_kv.push((ks, vs, *branch));
        }

        // Noisy stream self-attention, with optional key/value injection.
        let h = eng.layer_norm(x_n, bw.ln1_g, bw.ln1_b, LN_EPS)?;
        let q = proj(eng, h, bw.wq, bw.bq, None)?;
        let k = proj(eng, h, bw.wk, bw.bk, None)?;
        let v = proj(eng, h, bw.wv, bw.bv, None)?;
        let qs = split_heads(eng, q, heads, dh)?;
        let (ks, vs, inject) = match plan.and_then(|p| p.kv.get(&bi)) {
            Some(heads_kv) => (
                heads_kv.iter().map(|&(k, _)| k).collect::<Vec<_>>(),
                heads_kv.iter().map(|&(_, v)| v).collect::<Vec<_>>(),
                true,
            ),
            None => (split_heads(eng, k, heads, dh)?, split_heads(eng, v, heads, dh)?, false),
        };
        let mut outs = Vec::with_capacity(heads);
        let mut cap = CapturedBlock {
            block: bi,
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            scores: Vec::new(),
        };
        for hd in 0..heads {
            let kt = eng.transpose(ks[hd])?;
            let raw = eng.matmul(qs[hd], kt)?;
            let mut scores = eng.scale(raw, inv);
            if capture_states {
                cap.q.push(qs[hd]);
                cap.k.push(ks[hd]);
                cap.v.push(vs[hd]);
                cap.scores.push(scores);
            }
            if inject {
                if let Some(off) = plan.and_then(|p| p.offsets) {
                    scores = eng.add(scores, off)?;
                }
            }
            let attn = eng.softmax_rows(scores)?;
            outs.push(eng.matmul(attn, vs[hd])?);
        }
        let merged = eng.concat_cols(&outs)?;
        let self_out = proj(eng, merged, bw.wo, bw.bo, None)?;
        x_n = eng.add(x_n, self_out)?;
        if capture_states {
            captured.push(cap);
        }

        // Cross-attention from noisy queries into each condition stream,
        // entering through the branch's zero-initialized output adapter.
        if let Some(ads) = adapters {
            for (cks, cvs, branch) in &cond_kv {
                let ad = &ads.blocks[bi][*branch];
                let mut xouts = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let kt = eng.transpose(cks[hd])?;
                    let raw = eng.matmul(qs[hd], kt)?;
                    let scores = eng.scale(raw, inv);
                    let attn = eng.softmax_rows(scores)?;
                    xouts.push(eng.matmul(attn, cvs[hd])?);
                }
                let xmerged = eng.concat_cols(&xouts)?;
                let xa = eng.matmul(xmerged, ad.o.a)?;
                let xab = eng.matmul(xa, ad.o.b)?;
                let delta = eng.scale(xab, ads.scaling);
                x_n = eng.add(x_n, delta)?;
            }
        }

        // Feed-forward on every stream.
        for (xc, _) in streams.iter_mut() {
            *xc = mlp(eng, bw, *xc)?;
        }
        x_n = mlp(eng, bw, x_n)?;

        if feature_block == Some(bi) {
            feature = Some(x_n);
        }
    }

    let f = eng.layer_norm(x_n, w.fin_g, w.fin_b, LN_EPS)?;
    let eps = eng.matmul(f, w.head_w)?;
    let eps = eng.add_bias_row(eps, w.head_b)?;
    Ok(GenericOut { eps, captured, feature })
}

/// Splits a `[heads, n, d]` stacked tensor into per-head matrices.
fn unstack_heads(t: &Tensor) -> Result<Vec<Tensor>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(err!(Shape, "expected [heads, n, d], got {s:?}"));
    }
    let (heads, n, d) = (s[0], s[1], s[2]);
    (0..heads)
        .map(|h| Tensor::new(&[n, d], t.data()[h * n * d..(h + 1) * n * d].to_vec()))
        .collect()
}

fn stack_heads(parts: &[&Tensor]) -> Result<Tensor> {
    let (n, d) = parts[0].expect_matrix("stack_heads")?;
    let mut data = Vec::with_capacity(parts.len() * n * d);
    for p in parts {
        p.expect_shape(&[n, d], "stack_heads part")?;
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[parts.len(), n, d], data)
}

pub(crate) fn build_plan(
    eng: &mut InferEng,
    cfg: &ModelConfig,
    ov: &CiaOverride<'_>,
    t: usize,
    n_tokens: usize,
) -> Result<OverridePlan<usize>> {
    if ov.states.timestep != t {
        return Err(err!(
            Index,
            "override cache is for timestep {}, step runs at {t}",
            ov.states.timestep
        ));
    }
    let mut kv = BTreeMap::new();
    let mut n_ref = None;
    for &b in ov.blocks {
        if b >= cfg.blocks {
            return Err(err!(Index, "override block {b} out of {} blocks", cfg.blocks));
        }
        let st = ov
            .states
            .block(b)
            .ok_or_else(|| err!(Index, "no cached state for block {b}"))?;
        let ks = unstack_heads(&st.k)?;
        let vs = unstack_heads(&st.v)?;
        n_ref = Some(ks[0].rows());
        let pairs: Vec<(usize, usize)> = ks
            .iter()
            .zip(&vs)
            .map(|(k, v)| (eng.lift(k), eng.lift(v)))
            .collect();
        kv.insert(b, pairs);
    }
    let offsets = match ov.mask {
        Some(mask) => {
            let nr = n_ref.unwrap_or(mask.m.cols());
            mask.m.expect_shape(&[n_tokens, nr], "attention mask")?;
            mask_offsets(mask, ov.mode).map(|t| eng.lift(&t))
        }
        None => None,
    };
    Ok(OverridePlan { kv, offsets })
}

/// Inference forward pass.
///
/// Conditions require adapters with a matching branch count; adapter sets
/// that are still all-zero contribute nothing and are skipped along with
/// their condition streams, which keeps the output bit-identical to the
/// base model.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    cfg: &ModelConfig,
    weights: &DenoiserWeights,
    z: &Tensor,
    t: usize,
    conds: &[CondTokens<'_>],
    adapters: Option<&AdapterSet>,
    override_: Option<&CiaOverride<'_>>,
    capture: Capture,
) -> Result<ForwardOutput> {
    z.expect_shape(&[cfg.token_count(), cfg.patch_dim()], "noisy tokens")?;
    if t >= cfg.diffusion_steps {
        return Err(err!(Index, "timestep {t} out of T={}", cfg.diffusion_steps));
    }
    let active = match adapters {
        Some(a) => {
            if !conds.is_empty() && a.branches < conds.len() {
                return Err(err!(
                    Config,
                    "{} conditions but adapters have {} branches",
                    conds.len(),
                    a.branches
                ));
            }
            !a.is_zero()
        }
        None => {
            if !conds.is_empty() {
                return Err(err!(Config, "conditions supplied without adapters"));
            }
            false
        }
    };
    let mut eng = InferEng::new();
    let w = LiftedWeights::map_from(weights, &mut |tns| eng.lift(tns));
    let lifted_ads = adapters
        .filter(|_| active)
        .map(|a| LiftedAdapters::map_from(a, &mut |tns| eng.lift(tns)));
    let cond_handles: Vec<(usize, usize)> = if active {
        conds
            .iter()
            .map(|c| {
                c.tokens
                    .expect_shape(&[cfg.token_count(), cfg.patch_dim()], "condition tokens")
                    .map(|_| (eng.lift(c.tokens), c.branch))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let plan = match override_ {
        Some(ov) => Some(build_plan(&mut eng, cfg, ov, t, cfg.token_count())?),
        None => None,
    };
    let z_id = eng.lift(z);
    let out = forward_generic(
        &mut eng,
        cfg,
        &w,
        z_id,
        t,
        &cond_handles,
        lifted_ads.as_ref(),
        plan.as_ref(),
        capture.states,
        capture.feature_block,
    )?;
    let states = if capture.states {
        let blocks = out
            .captured
            .iter()
            .map(|c| {
                let collect = |ids: &[usize]| -> Result<Tensor> {
                    let ts: Vec<&Tensor> = ids.iter().map(|&i| eng.tensor(i)).collect();
                    stack_heads(&ts)
                };
                Ok(BlockAttentionState {
                    block: c.block,
                    timestep: t,
                    q: collect(&c.q)?,
                    k: collect(&c.k)?,
                    v: collect(&c.v)?,
                    scores: collect(&c.scores)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(StepStates { timestep: t, blocks })
    } else {
        None
    };
    Ok(ForwardOutput {
        eps: eng.tensor(out.eps).clone(),
        states,
        features: out.feature.map(|f| eng.tensor(f).clone()),
    })
}

/// Taped forward used by the training paths; weights and adapters arrive as
/// pre-registered leaves so gradients flow to whichever side is trainable.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_taped(
    tape: &mut Tape,
    cfg: &ModelConfig,
    w: &LiftedWeights<NodeId>,
    z: NodeId,
    t: usize,
    conds: &[(NodeId, usize)],
    adapters: Option<&LiftedAdapters<NodeId>>,
) -> Result<NodeId> {
    let mut eng = TapeEng { tape };
    let out = forward_generic(&mut eng, cfg, w, z, t, conds, adapters, None, false, None)?;
    Ok(out.eps)
}
