//! Denoiser parameters with stable names for serialization and optimizer
//! state alignment.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::ModelConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{err, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

impl BlockWeights {
    fn init(d: usize, mlp: usize, rng: &mut Rng) -> Self {
        let grad = |t: Tensor| t.with_grad();
        BlockWeights {
            ln1_g: grad(Tensor::full(&[d], 1.0)),
            ln1_b: grad(Tensor::zeros(&[d])),
            wq: grad(Tensor::randn(&[d, d], INIT_STD, rng)),
            bq: grad(Tensor::zeros(&[d])),
            wk: grad(Tensor::randn(&[d, d], INIT_STD, rng)),
            bk: grad(Tensor::zeros(&[d])),
            wv: grad(Tensor::randn(&[d, d], INIT_STD, rng)),
            bv: grad(Tensor::zeros(&[d])),
            wo: grad(Tensor::randn(&[d, d], INIT_STD, rng)),
            bo: grad(Tensor::zeros(&[d])),
            ln2_g: grad(Tensor::full(&[d], 1.0)),
            ln2_b: grad(Tensor::zeros(&[d])),
            mlp_w1: grad(Tensor::randn(&[d, mlp * d], INIT_STD, rng)),
            mlp_b1: grad(Tensor::zeros(&[mlp * d])),
            mlp_w2: grad(Tensor::randn(&[mlp * d, d], INIT_STD, rng)),
            mlp_b2: grad(Tensor::zeros(&[d])),
        }
    }
}

/// Full parameter set of the toy denoiser.
#[derive(Debug, Clone)]
pub struct DenoiserWeights {
    pub config: ModelConfig,
    pub patch_embed_w: Tensor,
    pub patch_embed_b: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub final_ln_g: Tensor,
    pub final_ln_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl DenoiserWeights {
    /// Fresh random initialization; deterministic in the seed. The output
    /// head starts at zero so the initial prediction is the zero tensor.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, 0x77_65_69);
        let d = config.d_model;
        let pd = config.patch_dim();
        let n = config.token_count();
        let grad = |t: Tensor| t.with_grad();
        Ok(DenoiserWeights {
            config: config.clone(),
            patch_embed_w: grad(Tensor::randn(&[pd, d], INIT_STD, &mut rng)),
            patch_embed_b: grad(Tensor::zeros(&[d])),
            pos_embed: grad(Tensor::randn(&[n, d], INIT_STD, &mut rng)),
            blocks: (0..config.blocks)
                .map(|_| BlockWeights::init(d, config.mlp_ratio, &mut rng))
                .collect(),
            final_ln_g: grad(Tensor::full(&[d], 1.0)),
            final_ln_b: grad(Tensor::zeros(&[d])),
            head_w: grad(Tensor::zeros(&[d, pd])),
            head_b: grad(Tensor::zeros(&[pd])),
        })
    }

    /// Stable name/tensor listing used for serialization, optimizer state,
    /// and gradient lookup. Order is fixed.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = alloc::vec![
            ("patch_embed.w".into(), &self.patch_embed_w),
            ("patch_embed.b".into(), &self.patch_embed_b),
            ("pos_embed".into(), &self.pos_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (suffix, t) in block_fields(b) {
                out.push((alloc::format!("block{i}.{suffix}"), t));
            }
        }
        out.push(("final_ln.g".into(), &self.final_ln_g));
        out.push(("final_ln.b".into(), &self.final_ln_b));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    /// Mutable parameter list in `named()` order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = alloc::vec![
            &mut self.patch_embed_w,
            &mut self.patch_embed_b,
            &mut self.pos_embed,
        ];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.ln1_g);
            out.push(&mut b.ln1_b);
            out.push(&mut b.wq);
            out.push(&mut b.bq);
            out.push(&mut b.wk);
            out.push(&mut b.bk);
            out.push(&mut b.wv);
            out.push(&mut b.bv);
            out.push(&mut b.wo);
            out.push(&mut b.bo);
            out.push(&mut b.ln2_g);
            out.push(&mut b.ln2_b);
            out.push(&mut b.mlp_w1);
            out.push(&mut b.mlp_b1);
            out.push(&mut b.mlp_w2);
            out.push(&mut b.mlp_b2);
        }
        out.push(&mut self.final_ln_g);
        out.push(&mut self.final_ln_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Rebuilds weights from a name -> tensor map (deserialization).
    pub fn from_named(config: &ModelConfig, mut map: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut template = DenoiserWeights::init(config, 0)?;
        let names: Vec<String> = template.named().iter().map(|(n, _)| n.clone()).collect();
        let shapes: Vec<Vec<usize>> = template
            .named()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        for ((name, shape), slot) in names.iter().zip(&shapes).zip(template.params_mut()) {
            let mut t = map
                .remove(name)
                .ok_or_else(|| err!(Data, "missing tensor {name}"))?;
            t.expect_shape(shape, name)?;
            t.requires_grad = true;
            *slot = t;
        }
        if let Some((extra, _)) = map.into_iter().next() {
            return Err(err!(Data, "unexpected tensor {extra}"));
        }
        Ok(template)
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

fn block_fields<'a>(b: &'a BlockWeights) -> Vec<(&'static str, &'a Tensor)> {
    alloc::vec![
        ("ln1.g", &b.ln1_g),
        ("ln1.b", &b.ln1_b),
        ("attn.wq", &b.wq),
        ("attn.bq", &b.bq),
        ("attn.wk", &b.wk),
        ("attn.bk", &b.bk),
        ("attn.wv", &b.wv),
        ("attn.bv", &b.bv),
        ("attn.wo", &b.wo),
        ("attn.bo", &b.bo),
        ("ln2.g", &b.ln2_g),
        ("ln2.b", &b.ln2_b),
        ("mlp.w1", &b.mlp_w1),
        ("mlp.b1", &b.mlp_b1),
        ("mlp.w2", &b.mlp_w2),
        ("mlp.b2", &b.mlp_b2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_deterministic() {
        let cfg = ModelConfig::compact();
        let a = DenoiserWeights::init(&cfg, 3).unwrap();
        let b = DenoiserWeights::init(&cfg, 3).unwrap();
        for ((_, x), (_, y)) in a.named().iter().zip(b.named()) {
            assert!(x.bit_eq(y));
        }
        let c = DenoiserWeights::init(&cfg, 4).unwrap();
        assert!(!a.patch_embed_w.bit_eq(&c.patch_embed_w));
    }

    #[test]
    fn named_roundtrip() {
        let cfg = ModelConfig::compact();
        let w = DenoiserWeights::init(&cfg, 9).unwrap();
        let map: BTreeMap<String, Tensor> = w
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let back = DenoiserWeights::from_named(&cfg, map).unwrap();
        for ((na, a), (nb, b)) in w.named().iter().zip(back.named()) {
            assert_eq!(na, &nb);
            assert!(a.bit_eq(b), "tensor {na} differs");
        }
    }

    #[test]
    fn params_mut_matches_named_order() {
        let cfg = ModelConfig::compact();
        let mut w = DenoiserWeights::init(&cfg, 1).unwrap();
        let shapes: Vec<Vec<usize>> = w.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> =
            w.params_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
    }
}
