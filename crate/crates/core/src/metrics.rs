//! Image quality metrics: PSNR and single-scale SSIM on 8-bit frames.

use alloc::vec;
use alloc::vec::Vec;

use crate::frame::Frame;
use crate::{err, Result};

/// PSNR in dB for 8-bit frames; identical frames report the 100 dB cap so
/// reports stay finite and sortable.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    psnr_max(a, b, 255.0)
}

pub fn psnr_max(a: &Frame, b: &Frame, max_value: f64) -> Result<f64> {
    if !a.same_size(b) {
        return Err(err!(Shape, "psnr: frame sizes differ"));
    }
    let mut se = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        se += d * d;
    }
    let mse = se / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * crate::fmath::log10(max_value * max_value / mse)).min(100.0))
}

/// PSNR restricted to pixels where `select` is true.
pub fn psnr_masked(a: &Frame, b: &Frame, select: &[bool]) -> Result<f64> {
    if !a.same_size(b) {
        return Err(err!(Shape, "psnr_masked: frame sizes differ"));
    }
    if select.len() != a.width() * a.height() {
        return Err(err!(Shape, "psnr_masked: mask length mismatch"));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, &keep) in select.iter().enumerate() {
        if !keep {
            continue;
        }
        for c in 0..3 {
            let d = a.data()[i * 3 + c] as f64 - b.data()[i * 3 + c] as f64;
            se += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(err!(Data, "psnr_masked: empty selection"));
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * crate::fmath::log10(255.0 * 255.0 / mse)).min(100.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = crate::fmath::exp(-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * src[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
/// L=255, averaged over the three channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_size(b) {
        return Err(err!(Shape, "ssim: frame sizes differ"));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(err!(Shape, "ssim: image must be at least 11x11, got {w}x{h}"));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut total = 0.0;
    for ch in 0..3 {
        let xa: Vec<f64> = (0..w * h).map(|i| a.data()[i * 3 + ch] as f64).collect();
        let xb: Vec<f64> = (0..w * h).map(|i| b.data()[i * 3 + ch] as f64).collect();
        let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
        let (mu_a, ow, oh) = filter_valid(&xa, w, h, &k);
        let (mu_b, _, _) = filter_valid(&xb, w, h, &k);
        let (m_aa, _, _) = filter_valid(&aa, w, h, &k);
        let (m_bb, _, _) = filter_valid(&bb, w, h, &k);
        let (m_ab, _, _) = filter_valid(&ab, w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Mean RGB (0..1 scale) over the selected pixels.
pub fn mean_rgb(frame: &Frame, select: &[bool]) -> Option<[f64; 3]> {
    let mut acc = [0.0f64; 3];
    let mut n = 0usize;
    for (i, &keep) in select.iter().enumerate() {
        if keep {
            for c in 0..3 {
                acc[c] += frame.data()[i * 3 + c] as f64 / 255.0;
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    Some([acc[0] / n as f64, acc[1] / n as f64, acc[2] / n as f64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn noise_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = Rng::new(seed);
        Frame::from_fn(w, h, |_, _| {
            [
                (rng.next_u64() & 0xff) as u8,
                (rng.next_u64() & 0xff) as u8,
                (rng.next_u64() & 0xff) as u8,
            ]
        })
    }

    #[test]
    fn psnr_identical_frames_capped() {
        let f = noise_frame(16, 16, 1);
        assert_eq!(psnr(&f, &f).unwrap(), 100.0);
    }

    #[test]
    fn psnr_closed_form() {
        // a all 0, b all 10: MSE = 100, PSNR = 10*log10(255^2/100).
        let a = Frame::filled(12, 12, [0, 0, 0]);
        let b = Frame::filled(12, 12, [10, 10, 10]);
        let expect = 10.0 * crate::fmath::log10(255.0 * 255.0 / 100.0);
        let got = psnr(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 28.131).abs() < 1e-3);
    }

    #[test]
    fn psnr_symmetric() {
        let a = noise_frame(20, 15, 2);
        let b = noise_frame(20, 15, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_size_mismatch() {
        let a = Frame::filled(8, 8, [0; 3]);
        let b = Frame::filled(8, 9, [0; 3]);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let f = noise_frame(24, 24, 4);
        assert!((ssim(&f, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // Constant 100 vs constant 150: contrast and structure terms are
        // exactly 1, so SSIM reduces to the luminance term
        // (2*100*150 + C1) / (100^2 + 150^2 + C1).
        let a = Frame::filled(16, 16, [100, 100, 100]);
        let b = Frame::filled(16, 16, [150, 150, 150]);
        let c1 = (0.01f64 * 255.0) * (0.01 * 255.0);
        let expect = (2.0 * 100.0 * 150.0 + c1) / (100.0 * 100.0 + 150.0 * 150.0 + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-9, "got {got}, expect {expect}");
        // The closed form evaluates to 0.92309...
        assert!((got - 0.9231).abs() < 1e-3);
    }

    #[test]
    fn ssim_inverted_checker_is_low() {
        let a = Frame::from_fn(32, 32, |x, y| {
            if (x / 4 + y / 4) % 2 == 0 {
                [220, 220, 220]
            } else {
                [40, 40, 40]
            }
        });
        let b = Frame::from_fn(32, 32, |x, y| {
            let p = a.pixel(x, y);
            [255 - p[0], 255 - p[1], 255 - p[2]]
        });
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.2, "ssim {s}");
    }

    #[test]
    fn ssim_too_small_rejected() {
        let a = Frame::filled(10, 10, [0; 3]);
        assert!(ssim(&a, &a).is_err());
    }
}
