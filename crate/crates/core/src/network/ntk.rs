//! Parameter gradients and the empirical neural tangent kernel.
//!
//! For an affine block `z = W in + bias` with output sensitivity `s(x)`, the
//! gradient of `f(x)` is `s(x) in(x)^T` for `W` and `s(x)` for the bias, so
//! the block's contribution to `<grad f(x), grad f(x')>` factors as
//! `<s(x), s(x')> (<in(x), in(x')> + 1)`. The kernel is assembled from these
//! per-block Gram products without materializing flat gradients.

use super::pass::{backward, forward_batch};
use super::NetworkParams;
use crate::error::{ensure, Result};
use crate::kernels::{KernelMatrix, Provenance};
use crate::linalg::{gemm, gemm_into, Matrix};

fn single_row(x: &[f64]) -> Result<Matrix> {
    Matrix::from_vec(1, x.len(), x.to_vec())
}

/// `grad_theta f(x)` in flattening order.
pub fn param_gradients(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    let fwd = forward_batch(params, &single_row(x)?)?;
    let sens = backward(params, &fwd, &[1.0])?;
    let mut grad = vec![0.0; params.flat().len()];
    for ((block, s), input) in params.blocks().iter().zip(&sens).zip(&fwd.block_inputs) {
        let (s, input) = (s.row(0), input.row(0));
        let w = &mut grad[block.weight_offset..block.weight_offset + block.weight_len()];
        for (row, &si) in w.chunks_exact_mut(block.cols).zip(s) {
            for (g, &a) in row.iter_mut().zip(input) {
                *g = si * a;
            }
        }
        if let Some(o) = block.bias_offset {
            grad[o..o + block.rows].copy_from_slice(s);
        }
    }
    Ok(grad)
}

/// Outputs on the rows of `x` together with `sum_i c_i grad_theta f(x_i)`.
pub fn weighted_gradient<F>(params: &NetworkParams, x: &Matrix, cotangent: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let fwd = forward_batch(params, x)?;
    let c = cotangent(&fwd.outputs);
    let sens = backward(params, &fwd, &c)?;
    let mut grad = vec![0.0; params.flat().len()];
    for ((block, s), input) in params.blocks().iter().zip(&sens).zip(&fwd.block_inputs) {
        let w = &mut grad[block.weight_offset..block.weight_offset + block.weight_len()];
        gemm_into(1.0, s.view(), true, input.view(), false, 0.0, w, block.cols);
        if let Some(o) = block.bias_offset {
            grad[o..o + block.rows].copy_from_slice(&s.column_sums());
        }
    }
    Ok((fwd.outputs, grad))
}

/// Empirical NTK Gram on the rows of `x`, via the block factorization.
pub fn empirical_ntk(params: &NetworkParams, x: &Matrix) -> Result<KernelMatrix> {
    ensure!(x.rows() >= 1, "empirical NTK needs at least one input");
    let mut matrix = empirical_ntk_between(params, x, x)?;
    matrix.symmetrize();
    Ok(KernelMatrix {
        matrix,
        provenance: Provenance::Empirical {
            width: params.arch().width,
            epoch: None,
        },
    })
}

/// Cross kernel `K(x1_i, x2_j)` between two input sets.
pub fn empirical_ntk_between(params: &NetworkParams, x1: &Matrix, x2: &Matrix) -> Result<Matrix> {
    let f1 = forward_batch(params, x1)?;
    let s1 = backward(params, &f1, &vec![1.0; f1.len()])?;
    let (f2, s2) = if std::ptr::eq(x1, x2) {
        (None, None)
    } else {
        let f2 = forward_batch(params, x2)?;
        let s2 = backward(params, &f2, &vec![1.0; f2.len()])?;
        (Some(f2), Some(s2))
    };
    let inputs2 = f2.as_ref().map_or(&f1.block_inputs, |f| &f.block_inputs);
    let sens2 = s2.as_ref().unwrap_or(&s1);
    let (n1, n2) = (x1.rows(), x2.rows());

    let mut kernel = Matrix::zeros(n1, n2);
    let mut sg = Matrix::zeros(n1, n2);
    let mut ig = Matrix::zeros(n1, n2);
    for (b, block) in params.blocks().iter().enumerate() {
        gemm(1.0, s1[b].view(), false, sens2[b].view(), true, 0.0, &mut sg);
        gemm(1.0, f1.block_inputs[b].view(), false, inputs2[b].view(), true, 0.0, &mut ig);
        let bias = if block.bias_offset.is_some() { 1.0 } else { 0.0 };
        for ((k, &s), &i) in kernel.as_mut_slice().iter_mut().zip(sg.as_slice()).zip(ig.as_slice()) {
            *k += s * (i + bias);
        }
    }
    Ok(kernel)
}

/// Gram matrix of explicit flat gradients. Memory grows with the parameter
/// count; intended as a reference for [`empirical_ntk`].
pub fn flat_gradient_gram(params: &NetworkParams, x: &Matrix) -> Result<Matrix> {
    let grads = (0..x.rows())
        .map(|i| param_gradients(params, x.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let p = params.flat().len();
    let g = Matrix::from_vec(x.rows(), p, grads.concat())?;
    Ok(g.row_gram())
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over all
/// parameters, with perturbation `step`.
pub fn grad_check(params: &NetworkParams, x: &[f64], step: f64) -> Result<f64> {
    ensure!(step > 0.0 && step.is_finite(), "finite-difference step must be > 0, got {step}");
    let analytic = param_gradients(params, x)?;
    let input = single_row(x)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let eval = |p: &NetworkParams| forward_batch(p, &input).map(|f| f.outputs[0]);
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.flat()[k];
        probe.flat_mut()[k] = orig + step;
        let up = eval(&probe)?;
        probe.flat_mut()[k] = orig - step;
        let down = eval(&probe)?;
        probe.flat_mut()[k] = orig;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Smallest `|pre-activation|` of any hidden unit over the rows of `x`.
pub fn min_abs_preactivation(params: &NetworkParams, x: &Matrix) -> Result<f64> {
    Ok(forward_batch(params, x)?.min_abs_preactivation())
}
