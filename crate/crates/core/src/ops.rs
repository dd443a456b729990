//! Forward tensor operations: pure functions, explicit shape errors, no
//! implicit broadcasting beyond the row-bias add.
//!
//! Both the autograd tape and the inference paths call into these, so a value
//! computed while training is bit-identical to the same value computed while
//! sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{err, Result};

/// C[m,n] = A[m,k] * B[k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.expect_matrix("matmul lhs")?;
    let (kb, n) = b.expect_matrix("matmul rhs")?;
    if k != kb {
        return Err(err!(Shape, "matmul: inner dims {k} vs {kb}"));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(&[m, n], out)
}

/// C[m,n] = A[m,k] * B[n,k]^T. Row-dot form, used for attention scores.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.expect_matrix("matmul_nt lhs")?;
    let (n, kb) = b.expect_matrix("matmul_nt rhs")?;
    if k != kb {
        return Err(err!(Shape, "matmul_nt: inner dims {k} vs {kb}"));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &bd[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *o = s;
        }
    }
    Tensor::new(&[m, n], out)
}

/// C[m,n] = A[k,m]^T * B[k,n]. Outer-product accumulation, used in backprop.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.expect_matrix("matmul_tn lhs")?;
    let (kb, n) = b.expect_matrix("matmul_tn rhs")?;
    if k != kb {
        return Err(err!(Shape, "matmul_tn: inner dims {k} vs {kb}"));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// axpy-form kernel: for each row of A, accumulate scaled rows of B.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn zip_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(err!(
            Shape,
            "{what}: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape(), data)
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), data)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// A[m,n] + bias[n] broadcast over rows; the only implicit broadcast.
pub fn add_bias_row(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = a.expect_matrix("add_bias_row input")?;
    bias.expect_shape(&[n], "add_bias_row bias")?;
    let mut data = a.data().to_vec();
    for i in 0..m {
        for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(&[m, n], data)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.expect_matrix("transpose")?;
    let ad = a.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(&[n, m], data)
}

/// Row-wise softmax with max-subtraction stabilization.
///
/// Rows sum to 1 within 1e-9 and entries lie in [0, 1]. NaN input is a data
/// error rather than a silent NaN row.
pub fn softmax_rows(scores: &Tensor) -> Result<Tensor> {
    let (m, n) = scores.expect_matrix("softmax_rows")?;
    let sd = scores.data();
    if sd.iter().any(|v| v.is_nan()) {
        return Err(err!(Data, "softmax_rows: NaN in scores"));
    }
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &sd[i * n..(i + 1) * n];
        let out = &mut data[i * n..(i + 1) * n];
        softmax_row_into(row, out);
    }
    Tensor::new(&[m, n], data)
}

/// One stabilized softmax row; shared by every attention path.
pub(crate) fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = crate::fmath::exp(v - max);
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Row-wise layer norm with learned gain/bias.
///
/// Returns the normalized output plus per-row mean and inverse std, which the
/// backward pass reuses.
pub fn layer_norm(
    a: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (m, n) = a.expect_matrix("layer_norm input")?;
    gain.expect_shape(&[n], "layer_norm gain")?;
    bias.expect_shape(&[n], "layer_norm bias")?;
    let ad = a.data();
    let mut data = vec![0.0; m * n];
    let mut means = vec![0.0; m];
    let mut invstds = vec![0.0; m];
    for i in 0..m {
        let row = &ad[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let invstd = 1.0 / crate::fmath::sqrt(var + eps);
        means[i] = mean;
        invstds[i] = invstd;
        let out = &mut data[i * n..(i + 1) * n];
        for ((o, &v), (g, b)) in out
            .iter_mut()
            .zip(row)
            .zip(gain.data().iter().zip(bias.data()))
        {
            *o = (v - mean) * invstd * g + b;
        }
    }
    Ok((Tensor::new(&[m, n], data)?, means, invstds))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| gelu_scalar(x)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + crate::fmath::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = crate::fmath::tanh(inner);
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Select rows by index (duplicates allowed).
pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (m, n) = a.expect_matrix("gather_rows")?;
    let mut data = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        if i >= m {
            return Err(err!(Index, "gather_rows: row {i} out of {m}"));
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::new(&[idx.len(), n], data)
}

/// Stack matrices along the token (row) axis.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(err!(Shape, "concat_rows: no inputs"));
    }
    let (_, n) = parts[0].expect_matrix("concat_rows")?;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (pm, pn) = p.expect_matrix("concat_rows part")?;
        if pn != n {
            return Err(err!(Shape, "concat_rows: column mismatch {pn} vs {n}"));
        }
        rows += pm;
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[rows, n], data)
}

pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (m, n) = a.expect_matrix("slice_rows")?;
    if start + len > m {
        return Err(err!(Index, "slice_rows: {start}+{len} out of {m} rows"));
    }
    let data = a.data()[start * n..(start + len) * n].to_vec();
    Tensor::new(&[len, n], data)
}

pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (m, n) = a.expect_matrix("slice_cols")?;
    if start + len > n {
        return Err(err!(Index, "slice_cols: {start}+{len} out of {n} cols"));
    }
    let ad = a.data();
    let mut data = Vec::with_capacity(m * len);
    for i in 0..m {
        data.extend_from_slice(&ad[i * n + start..i * n + start + len]);
    }
    Tensor::new(&[m, len], data)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(err!(Shape, "concat_cols: no inputs"));
    }
    let (m, _) = parts[0].expect_matrix("concat_cols")?;
    let mut n = 0;
    for p in parts {
        let (pm, pn) = p.expect_matrix("concat_cols part")?;
        if pm != m {
            return Err(err!(Shape, "concat_cols: row mismatch {pm} vs {m}"));
        }
        n += pn;
    }
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::new(&[m, n], data)
}

/// Sum of all elements as a scalar tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

/// Mean of all elements as a scalar tensor.
pub fn mean_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![3.0, -1.0, 2.5, 7.0]).unwrap();
        assert!(matmul(&i2, &b).unwrap().bit_eq(&b));
    }

    #[test]
    fn matmul_known_product() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Rng::new(11);
        let a = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        let c_nt = matmul_nt(&a, &transpose(&b).unwrap()).unwrap();
        let c_tn = matmul_tn(&transpose(&a).unwrap(), &b).unwrap();
        assert!(c.max_abs_diff(&c_nt) < 1e-12);
        assert!(c.max_abs_diff(&c_tn) < 1e-12);
    }

    #[test]
    fn softmax_symmetry() {
        let s = softmax_rows(&Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_direct_evaluation() {
        // exp/sum computed independently of the implementation path.
        let s = softmax_rows(&Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 3.0]
            .iter()
            .map(|&v| crate::fmath::exp(v))
            .collect();
        let z: f64 = e.iter().sum();
        for (got, want) in s.data().iter().zip(e.iter().map(|v| v / z)) {
            assert!((got - want).abs() < 1e-5);
        }
        // Frozen values from the same evaluation.
        assert!((s.data()[0] - 0.090031).abs() < 1e-5);
        assert!((s.data()[1] - 0.244728).abs() < 1e-5);
        assert!((s.data()[2] - 0.665241).abs() < 1e-5);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let row: Vec<f64> = (0..8).map(|_| rng.normal() * 3.0).collect();
            let c = rng.normal() * 10.0;
            let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
            let a = softmax_rows(&Tensor::new(&[1, 8], row).unwrap()).unwrap();
            let b = softmax_rows(&Tensor::new(&[1, 8], shifted).unwrap()).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(3);
        let t = Tensor::randn(&[16, 33], 5.0, &mut rng);
        let s = softmax_rows(&t).unwrap();
        for i in 0..16 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(s.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_nan_rejected() {
        let t = Tensor::new(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(softmax_rows(&t).is_err());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut rng = Rng::new(4);
        let a = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 5], 1.0, &mut rng);
        let cat = concat_rows(&[&a, &b]).unwrap();
        assert!(slice_rows(&cat, 0, 3).unwrap().bit_eq(&a));
        assert!(slice_rows(&cat, 3, 2).unwrap().bit_eq(&b));

        let c = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let d = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let cat = concat_cols(&[&c, &d]).unwrap();
        assert!(slice_cols(&cat, 0, 3).unwrap().bit_eq(&c));
        assert!(slice_cols(&cat, 3, 2).unwrap().bit_eq(&d));
    }

    #[test]
    fn gather_out_of_range() {
        let a = Tensor::zeros(&[3, 2]);
        assert!(gather_rows(&a, &[0, 3]).is_err());
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = Rng::new(6);
        let a = Tensor::randn(&[4, 16], 2.0, &mut rng);
        let g = Tensor::full(&[16], 1.0);
        let b = Tensor::zeros(&[16]);
        let (out, _, _) = layer_norm(&a, &g, &b, 1e-5).unwrap();
        for i in 0..4 {
            let row = out.row(i);
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
