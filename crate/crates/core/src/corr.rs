//! Feature correspondence and attention masking.
//!
//! Builds token-similarity matrices between target and anchor features,
//! derives per-row top-k masks, applies them to attention scores ahead of
//! the softmax, and implements the non-generative pixel-swap baseline.

use alloc::vec::Vec;

use crate::frame::Frame;
use crate::model::{FeatureMap, FeatureSource};
use crate::ops;
use crate::tensor::Tensor;
use crate::{err, Result};

/// Default magnitude of the additive mask offset.
pub const DEFAULT_MASK_LARGE: f64 = 1e4;

/// Token-similarity matrix `[N_tgt, N_anc]`; rows index target tokens.
#[derive(Debug, Clone)]
pub struct CorrespondenceMap {
    pub corr: Tensor,
    pub source: (FeatureSource, FeatureSource),
}

/// Per-row top-k selection over a correspondence matrix.
///
/// `m` is a 0/1 matrix with exactly `k` ones per row; `large` is the offset
/// magnitude separating selected from unselected scores.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    pub m: Tensor,
    pub k: usize,
    pub large: f64,
}

impl AttentionMask {
    pub fn is_all_ones(&self) -> bool {
        self.k == self.m.cols()
    }
}

/// How unselected scores are pushed out of the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Finite offset of `mask.large`; with the default 1e4 the unselected
    /// softmax mass underflows to zero for score magnitudes up to ~100.
    Additive,
    /// Strict negative infinity.
    HardNegInf,
}

/// Raw-pixel descriptor features: per token, the patch pixels at native
/// scale plus a 3x-strided sample of the 12x12 surrounding region
/// (edge-clamped), plus a constant component so proportional patches do not
/// alias, all L2-normalized.
pub fn descriptor_features(frame: &Frame, patch: usize) -> Result<FeatureMap> {
    if frame.width() % patch != 0 || frame.height() % patch != 0 {
        return Err(err!(Shape, "descriptor: frame not divisible by patch {patch}"));
    }
    let (tw, th) = (frame.width() / patch, frame.height() / patch);
    let ctx_offsets: Vec<i64> = (0..patch).map(|i| 3 * i as i64 - 4).collect();
    let dim = patch * patch * 3 + ctx_offsets.len() * ctx_offsets.len() * 3 + 1;
    let mut data = Vec::with_capacity(tw * th * dim);
    for ty in 0..th {
        for tx in 0..tw {
            let base = data.len();
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..3 {
                        data.push(frame.channel_f64(tx * patch + dx, ty * patch + dy, c) / 255.0);
                    }
                }
            }
            for &oy in &ctx_offsets {
                for &ox in &ctx_offsets {
                    let x = ((tx * patch) as i64 + ox).clamp(0, frame.width() as i64 - 1) as usize;
                    let y = ((ty * patch) as i64 + oy).clamp(0, frame.height() as i64 - 1) as usize;
                    for c in 0..3 {
                        data.push(frame.channel_f64(x, y, c) / 255.0);
                    }
                }
            }
            data.push(1.0);
            let norm = crate::fmath::sqrt(data[base..].iter().map(|v| v * v).sum::<f64>());
            for v in &mut data[base..] {
                *v /= norm;
            }
        }
    }
    Ok(FeatureMap {
        f: Tensor::new(&[tw * th, dim], data)?,
        source: FeatureSource::Descriptor,
    })
}

fn normalize_rows(f: &Tensor) -> Tensor {
    let (m, n) = (f.rows(), f.cols());
    let mut data = f.data().to_vec();
    for i in 0..m {
        let row = &mut data[i * n..(i + 1) * n];
        let norm = crate::fmath::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Tensor::new(&[m, n], data).expect("same shape")
}

/// Cosine-similarity correspondence: rows are unit-normalized before the
/// dot product.
pub fn build_corr(f_tgt: &FeatureMap, f_anc: &FeatureMap) -> Result<CorrespondenceMap> {
    corr_impl(f_tgt, f_anc, true)
}

/// Raw dot-product variant (no normalization).
pub fn build_corr_raw(f_tgt: &FeatureMap, f_anc: &FeatureMap) -> Result<CorrespondenceMap> {
    corr_impl(f_tgt, f_anc, false)
}

fn corr_impl(f_tgt: &FeatureMap, f_anc: &FeatureMap, normalize: bool) -> Result<CorrespondenceMap> {
    let (_, dt) = f_tgt.f.expect_matrix("target features")?;
    let (_, da) = f_anc.f.expect_matrix("anchor features")?;
    if dt != da {
        return Err(err!(Shape, "feature dims differ: {dt} vs {da}"));
    }
    let (t, a);
    let (ft, fa) = if normalize {
        t = normalize_rows(&f_tgt.f);
        a = normalize_rows(&f_anc.f);
        (&t, &a)
    } else {
        (&f_tgt.f, &f_anc.f)
    };
    let corr = ops::matmul_nt(ft, fa)?;
    Ok(CorrespondenceMap {
        corr,
        source: (f_tgt.source, f_anc.source),
    })
}

/// Per-row argmax with ties broken toward the lower column index.
pub fn argmax_rows(corr: &CorrespondenceMap) -> Vec<usize> {
    let (m, n) = (corr.corr.rows(), corr.corr.cols());
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let row = corr.corr.row(i);
        let mut best = 0usize;
        for j in 1..n {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    out
}

/// Top-k mask with the default offset magnitude.
pub fn topk_mask(corr: &CorrespondenceMap, k: usize) -> Result<AttentionMask> {
    topk_mask_with(corr, k, DEFAULT_MASK_LARGE)
}

/// Per-row top-k selection; ties broken toward lower column indices.
pub fn topk_mask_with(corr: &CorrespondenceMap, k: usize, large: f64) -> Result<AttentionMask> {
    let (m, n) = (corr.corr.rows(), corr.corr.cols());
    if k == 0 || k > n {
        return Err(err!(Config, "top-k with k={k} outside 1..={n}"));
    }
    let mut data = alloc::vec![0.0; m * n];
    for i in 0..m {
        let row = corr.corr.row(i);
        let sel = &mut data[i * n..(i + 1) * n];
        // Repeated max scans; k is tiny in practice and ties resolve to the
        // lowest untaken index deterministically.
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if sel[j] == 1.0 {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) => {
                        if row[j] > row[b] {
                            best = Some(j);
                        }
                    }
                }
            }
            sel[best.expect("k <= n")] = 1.0;
        }
    }
    Ok(AttentionMask {
        m: Tensor::new(&[m, n], data)?,
        k,
        large,
    })
}

/// Additive offsets realizing the mask under softmax, or `None` when the
/// mask is all ones (a uniform shift is the identity under softmax, so the
/// all-ones path must not touch the scores at all).
pub fn mask_offsets(mask: &AttentionMask, mode: MaskMode) -> Option<Tensor> {
    if mask.is_all_ones() {
        return None;
    }
    let drop = match mode {
        MaskMode::Additive => -mask.large,
        MaskMode::HardNegInf => f64::NEG_INFINITY,
    };
    let data = mask
        .m
        .data()
        .iter()
        .map(|&m| if m == 1.0 { 0.0 } else { drop })
        .collect();
    Some(Tensor::new(mask.m.shape(), data).expect("same shape"))
}

/// Offsets attention scores so softmax concentrates on the selected entries.
///
/// Selected scores are kept bit-identical and unselected ones are lowered by
/// `large` (equivalent under softmax to raising selected entries by the same
/// amount, but exact where it matters). All-ones masks return the scores
/// unchanged.
pub fn apply_mask(scores: &Tensor, mask: &AttentionMask, mode: MaskMode) -> Result<Tensor> {
    let (m, n) = scores.expect_matrix("masked scores")?;
    mask.m.expect_shape(&[m, n], "attention mask")?;
    match mask_offsets(mask, mode) {
        None => Ok(scores.clone()),
        Some(off) => ops::add(scores, &off),
    }
}

/// Non-generative baseline: replace every target patch with its
/// argmax-matched reference patch.
pub fn pixel_swap(corr: &CorrespondenceMap, reference: &Frame, patch: usize) -> Result<Frame> {
    if reference.width() % patch != 0 || reference.height() % patch != 0 {
        return Err(err!(Shape, "pixel_swap: frame not divisible by patch {patch}"));
    }
    let (tw, th) = (reference.width() / patch, reference.height() / patch);
    let (m, n) = (corr.corr.rows(), corr.corr.cols());
    if m != tw * th || n != tw * th {
        return Err(err!(
            Shape,
            "pixel_swap: corr {m}x{n} does not match a {tw}x{th} token grid"
        ));
    }
    let choice = argmax_rows(corr);
    let mut out = Frame::filled(reference.width(), reference.height(), [0, 0, 0]);
    for ty in 0..th {
        for tx in 0..tw {
            let src = choice[ty * tw + tx];
            let (sx, sy) = (src % tw, src / tw);
            for dy in 0..patch {
                for dx in 0..patch {
                    let p = reference.pixel(sx * patch + dx, sy * patch + dy);
                    out.set_pixel(tx * patch + dx, ty * patch + dy, p);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn fmap(t: Tensor) -> FeatureMap {
        FeatureMap { f: t, source: FeatureSource::Descriptor }
    }

    fn const_map(t: Tensor) -> CorrespondenceMap {
        CorrespondenceMap { corr: t, source: (FeatureSource::Descriptor, FeatureSource::Descriptor) }
    }

    #[test]
    fn self_similarity_argmax_is_diagonal() {
        let mut rng = Rng::new(21);
        let f = Tensor::randn(&[12, 9], 1.0, &mut rng);
        let corr = build_corr(&fmap(f.clone()), &fmap(f)).unwrap();
        let am = argmax_rows(&corr);
        for (i, &j) in am.iter().enumerate() {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn permuted_features_recover_permutation() {
        let mut rng = Rng::new(22);
        let f = Tensor::randn(&[10, 7], 1.0, &mut rng);
        let perm: Vec<usize> = (0..10).map(|i| (i + 3) % 10).collect();
        let anc = ops::gather_rows(&f, &perm).unwrap();
        let corr = build_corr(&fmap(f), &fmap(anc)).unwrap();
        let am = argmax_rows(&corr);
        for (tgt_row, &anc_row) in am.iter().enumerate() {
            assert_eq!(perm[anc_row], tgt_row);
        }
    }

    #[test]
    fn corr_transpose_symmetry() {
        let mut rng = Rng::new(23);
        let a = Tensor::randn(&[8, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[6, 5], 1.0, &mut rng);
        let ab = build_corr(&fmap(a.clone()), &fmap(b.clone())).unwrap();
        let ba = build_corr(&fmap(b), &fmap(a)).unwrap();
        let abt = ops::transpose(&ab.corr).unwrap();
        assert!(abt.max_abs_diff(&ba.corr) < 1e-12);
    }

    #[test]
    fn corr_dim_mismatch() {
        let a = Tensor::zeros(&[4, 5]);
        let b = Tensor::zeros(&[4, 6]);
        assert!(build_corr(&fmap(a), &fmap(b)).is_err());
    }

    #[test]
    fn topk_basics() {
        let corr = const_map(Tensor::new(&[1, 3], alloc::vec![0.9, 0.1, 0.5]).unwrap());
        let m = topk_mask(&corr, 1).unwrap();
        assert_eq!(m.m.data(), &[1.0, 0.0, 0.0]);
        let m = topk_mask(&corr, 3).unwrap();
        assert_eq!(m.m.data(), &[1.0, 1.0, 1.0]);
        assert!(m.is_all_ones());
        assert!(topk_mask(&corr, 0).is_err());
        assert!(topk_mask(&corr, 4).is_err());
    }

    #[test]
    fn topk_tie_breaks_to_lower_index() {
        let corr = const_map(Tensor::new(&[1, 3], alloc::vec![0.5, 0.5, 0.1]).unwrap());
        let m = topk_mask(&corr, 1).unwrap();
        assert_eq!(m.m.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn mask_rows_sum_to_k() {
        let mut rng = Rng::new(24);
        let corr = const_map(Tensor::randn(&[17, 13], 1.0, &mut rng));
        for k in [1usize, 3, 7, 13] {
            let m = topk_mask(&corr, k).unwrap();
            for i in 0..17 {
                let s: f64 = m.m.row(i).iter().sum();
                assert_eq!(s, k as f64);
            }
        }
    }

    #[test]
    fn all_ones_mask_is_bitwise_identity() {
        let mut rng = Rng::new(25);
        let scores = Tensor::randn(&[9, 9], 3.0, &mut rng);
        let corr = const_map(Tensor::randn(&[9, 9], 1.0, &mut rng));
        let mask = topk_mask(&corr, 9).unwrap();
        let masked = apply_mask(&scores, &mask, MaskMode::Additive).unwrap();
        assert!(masked.bit_eq(&scores));
        let s1 = ops::softmax_rows(&masked).unwrap();
        let s0 = ops::softmax_rows(&scores).unwrap();
        assert!(s1.bit_eq(&s0));
    }

    #[test]
    fn masked_softmax_drives_unselected_to_zero() {
        let scores = Tensor::new(&[1, 2], alloc::vec![2.0, 1.0]).unwrap();
        let corr = const_map(Tensor::new(&[1, 2], alloc::vec![0.0, 1.0]).unwrap());
        let mask = topk_mask(&corr, 1).unwrap();
        let masked = apply_mask(&scores, &mask, MaskMode::Additive).unwrap();
        let sm = ops::softmax_rows(&masked).unwrap();
        assert!(sm.data()[0] < 1e-300);
        assert!((sm.data()[1] - 1.0).abs() < 1e-12);
    }

    /// Brute-force restricted softmax: softmax over selected entries only,
    /// zeros elsewhere. Independent of the mask-offset path.
    fn restricted_softmax(scores: &Tensor, mask: &AttentionMask) -> Tensor {
        let (m, n) = (scores.rows(), scores.cols());
        let mut out = alloc::vec![0.0; m * n];
        for i in 0..m {
            let row = scores.row(i);
            let sel: Vec<usize> = (0..n).filter(|&j| mask.m.row(i)[j] == 1.0).collect();
            let max = sel.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &j in &sel {
                denom += crate::fmath::exp(row[j] - max);
            }
            for &j in &sel {
                out[i * n + j] = crate::fmath::exp(row[j] - max) / denom;
            }
        }
        Tensor::new(&[m, n], out).unwrap()
    }

    #[test]
    fn masked_softmax_matches_restricted_softmax() {
        let mut rng = Rng::new(26);
        for &k in &[1usize, 3, 8] {
            let scores = Tensor::randn(&[8, 8], 2.0, &mut rng);
            let corr = const_map(Tensor::randn(&[8, 8], 1.0, &mut rng));
            let mask = topk_mask(&corr, k).unwrap();
            for mode in [MaskMode::Additive, MaskMode::HardNegInf] {
                let masked = apply_mask(&scores, &mask, mode).unwrap();
                let got = ops::softmax_rows(&masked).unwrap();
                let want = restricted_softmax(&scores, &mask);
                assert!(
                    got.max_abs_diff(&want) < 1e-12,
                    "k={k} mode={mode:?} diff {}",
                    got.max_abs_diff(&want)
                );
            }
        }
    }

    #[test]
    fn additive_and_hard_modes_agree() {
        let mut rng = Rng::new(27);
        let scores = Tensor::randn(&[6, 10], 5.0, &mut rng);
        let corr = const_map(Tensor::randn(&[6, 10], 1.0, &mut rng));
        let mask = topk_mask(&corr, 2).unwrap();
        let a = ops::softmax_rows(&apply_mask(&scores, &mask, MaskMode::Additive).unwrap()).unwrap();
        let h =
            ops::softmax_rows(&apply_mask(&scores, &mask, MaskMode::HardNegInf).unwrap()).unwrap();
        assert!(a.max_abs_diff(&h) < 1e-9);
    }

    #[test]
    fn apply_mask_shape_mismatch() {
        let scores = Tensor::zeros(&[4, 4]);
        let corr = const_map(Tensor::zeros(&[4, 5]));
        let mask = topk_mask(&corr, 1).unwrap();
        assert!(apply_mask(&scores, &mask, MaskMode::Additive).is_err());
    }
}
