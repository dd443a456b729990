//! Central finite-difference validation of taped gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{NodeId, Tape};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{err, Result};

/// Builds a scalar loss on the given tape from leaf ids of the parameters.
pub trait LossBuilder {
    fn build(&self, tape: &mut Tape, params: &[NodeId]) -> Result<NodeId>;
}

impl<F> LossBuilder for F
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    fn build(&self, tape: &mut Tape, params: &[NodeId]) -> Result<NodeId> {
        self(tape, params)
    }
}

fn eval_scalar(f: &dyn LossBuilder, params: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.constant(p)).collect();
    let out = f.build(&mut tape, &ids)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(err!(Shape, "grad_check: output must be scalar, got {:?}", v.shape()));
    }
    Ok(v.data()[0])
}

fn analytic_grads(f: &dyn LossBuilder, params: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.requires_grad = true;
            tape.leaf(&t)
        })
        .collect();
    let out = f.build(&mut tape, &ids)?;
    if tape.value(out).numel() != 1 {
        return Err(err!(Shape, "grad_check: output must be scalar"));
    }
    let grads = tape.backward(out)?;
    Ok(ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            grads
                .get(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect())
}

fn check_coords(
    f: &dyn LossBuilder,
    params: &[Tensor],
    analytic: &[Vec<f64>],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<f64> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for &(pi, ci) in coords {
        let orig = work[pi].data()[ci];
        work[pi].data_mut()[ci] = orig + eps;
        let plus = eval_scalar(f, &work)?;
        work[pi].data_mut()[ci] = orig - eps;
        let minus = eval_scalar(f, &work)?;
        work[pi].data_mut()[ci] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let a = analytic[pi][ci];
        let rel = (a - fd).abs() / (a.abs() + 1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Exhaustive check: max over every parameter coordinate of
/// `|analytic - central difference| / (|analytic| + 1e-8)`.
pub fn grad_check(f: impl LossBuilder, params: &[Tensor], eps: f64) -> Result<f64> {
    let analytic = analytic_grads(&f, params)?;
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
        .collect();
    check_coords(&f, params, &analytic, &coords, eps)
}

/// Same check over a random subset of coordinates per tensor, for models where
/// the exhaustive sweep would need two forward passes per parameter.
pub fn grad_check_sampled(
    f: impl LossBuilder,
    params: &[Tensor],
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<f64> {
    let analytic = analytic_grads(&f, params)?;
    let mut rng = Rng::new(seed);
    let mut coords = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        if n <= per_tensor {
            coords.extend((0..n).map(|ci| (pi, ci)));
        } else {
            for _ in 0..per_tensor {
                coords.push((pi, rng.below(n)));
            }
        }
    }
    check_coords(&f, params, &analytic, &coords, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |tape: &mut Tape, ids: &[NodeId]| {
                let c = tape.constant(&Tensor::scalar(4.0));
                let _ = ids;
                Ok(tape.sum_all(c))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn linear_function_matches_to_machine_precision() {
        let mut rng = Rng::new(8);
        let w = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let x = Tensor::randn(&[6, 1], 1.0, &mut rng);
        let wc = w.clone();
        let err = grad_check(
            move |tape: &mut Tape, ids: &[NodeId]| {
                let w = tape.constant(&wc);
                let y = tape.matmul(w, ids[0])?;
                Ok(tape.sum_all(y))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn matmul_gradient_vs_finite_differences() {
        let mut rng = Rng::new(9);
        let a = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let err = grad_check(
            |tape: &mut Tape, ids: &[NodeId]| {
                let c = tape.matmul(ids[0], ids[1])?;
                Ok(tape.sum_all(c))
            },
            &[a, b],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Tensor::zeros(&[2, 2]);
        let r = grad_check(
            |tape: &mut Tape, ids: &[NodeId]| tape.add(ids[0], ids[0]),
            &[x],
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn composite_expression_passes() {
        let mut rng = Rng::new(10);
        let a = Tensor::randn(&[4, 6], 0.7, &mut rng);
        let g = Tensor::randn(&[6], 0.2, &mut rng);
        let b = Tensor::randn(&[6], 0.2, &mut rng);
        let err = grad_check(
            |tape: &mut Tape, ids: &[NodeId]| {
                let ln = tape.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                let ge = tape.gelu(ln);
                let sm = tape.softmax_rows(ge)?;
                let prod = tape.mul(sm, ge)?;
                Ok(tape.mean_all(prod))
            },
            &[a, g, b],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }
}
