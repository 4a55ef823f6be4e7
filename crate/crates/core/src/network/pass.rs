use bitvec::vec::BitVec;

use super::{BlockRole, Family, NetworkParams};
use crate::error::{ensure, Result};
use crate::linalg::{gemm, Matrix};

/// Activations of a batch of inputs (one sample per row).
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub outputs: Vec<f64>,
    /// Input of every affine block, in block order.
    pub block_inputs: Vec<Matrix>,
    /// Hidden pre-activations `W_l in + b_l`, `l = 1..=L`.
    pub preactivations: Vec<Matrix>,
}

impl BatchForward {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Smallest `|pre-activation|` over all hidden units and samples.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preactivations
            .iter()
            .flat_map(|h| h.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Activations of a single input.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub output: f64,
    /// `alpha^(0) ..= alpha^(L)`.
    pub activations: Vec<Vec<f64>>,
    /// ResNet branch activations `alpha~^(1) ..= alpha~^(L)`; empty for FCN.
    pub branch_activations: Vec<Vec<f64>>,
    /// ReLU masks `D^(1) ..= D^(L)`.
    pub masks: Vec<BitVec>,
    pub preactivations: Vec<Vec<f64>>,
}

fn affine(params: &NetworkParams, block_index: usize, input: &Matrix) -> Matrix {
    let block = &params.blocks()[block_index];
    let mut out = Matrix::zeros(input.rows(), block.rows);
    gemm(1.0, input.view(), false, params.weight(block), true, 0.0, &mut out);
    if let Some(bias) = params.bias(block) {
        out.add_row_broadcast(bias);
    }
    out
}

fn scaled_relu(h: &Matrix, scale: f64) -> Matrix {
    h.map(|v| if v > 0.0 { scale * v } else { 0.0 })
}

/// Forward pass over the rows of `x`.
pub fn forward_batch(params: &NetworkParams, x: &Matrix) -> Result<BatchForward> {
    let arch = *params.arch();
    ensure!(
        x.cols() == arch.input_dim,
        "input has dimension {}, network expects {}",
        x.cols(),
        arch.input_dim
    );
    let m = arch.width as f64;
    let relu_scale = (2.0 / m).sqrt();
    let mut block_inputs = vec![x.clone()];
    let mut preactivations = Vec::with_capacity(arch.depth);
    match arch.family {
        Family::Fcn => {
            for l in 0..arch.depth {
                let h = affine(params, l, &block_inputs[l]);
                block_inputs.push(scaled_relu(&h, relu_scale));
                preactivations.push(h);
            }
        }
        Family::ResNet { scale } => {
            let mut r = affine(params, 0, x).map(|v| v / m.sqrt());
            for l in 1..=arch.depth {
                let hidden = 2 * l - 1;
                let h = affine(params, hidden, &r);
                let t = scaled_relu(&h, relu_scale);
                preactivations.push(h);
                let v = affine(params, hidden + 1, &t);
                let next = r.add_scaled(scale / m.sqrt(), &v)?;
                block_inputs.push(r);
                block_inputs.push(t);
                r = next;
            }
            block_inputs.push(r);
        }
    }
    let last = block_inputs.len() - 1;
    let outputs = affine(params, last, &block_inputs[last]).into_vec();
    Ok(BatchForward {
        outputs,
        block_inputs,
        preactivations,
    })
}

fn mask_in_place(g: &mut Matrix, pre: &Matrix, scale: f64) {
    for (v, &h) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *v = if h > 0.0 { *v * scale } else { 0.0 };
    }
}

/// Per-block output sensitivities for the cotangent `c`: row `i` of the
/// returned matrix for a block is `c_i * d f(x_i) / d z_block(x_i)`, where
/// `z_block` is that block's affine output. With `c = 1` these are the
/// per-sample backward sensitivities; with `c` a loss derivative they sum to
/// the loss gradient.
pub fn backward(params: &NetworkParams, fwd: &BatchForward, cotangent: &[f64]) -> Result<Vec<Matrix>> {
    let n = fwd.len();
    ensure!(
        cotangent.len() == n,
        "cotangent has length {}, batch has {n} samples",
        cotangent.len()
    );
    let arch = *params.arch();
    let m = arch.width as f64;
    let relu_scale = (2.0 / m).sqrt();
    let blocks = params.blocks();
    let mut sens: Vec<Option<Matrix>> = vec![None; blocks.len()];
    let readout = blocks.len() - 1;
    debug_assert_eq!(blocks[readout].role, BlockRole::Readout);
    let c = Matrix::from_vec(n, 1, cotangent.to_vec())?;

    // d f / d (readout input) = c w
    let mut upstream = Matrix::zeros(n, arch.width);
    gemm(1.0, c.view(), false, params.weight(&blocks[readout]), false, 0.0, &mut upstream);
    sens[readout] = Some(c);

    match arch.family {
        Family::Fcn => {
            for l in (0..arch.depth).rev() {
                let mut s = upstream;
                mask_in_place(&mut s, &fwd.preactivations[l], relu_scale);
                upstream = Matrix::zeros(n, blocks[l].cols);
                if l > 0 {
                    gemm(1.0, s.view(), false, params.weight(&blocks[l]), false, 0.0, &mut upstream);
                }
                sens[l] = Some(s);
            }
        }
        Family::ResNet { scale } => {
            // `upstream` is d f / d r_l.
            for l in (1..=arch.depth).rev() {
                let (hidden, branch) = (2 * l - 1, 2 * l);
                let s_branch = upstream.map(|v| v * scale / m.sqrt());
                let mut s_hidden = Matrix::zeros(n, arch.width);
                gemm(1.0, s_branch.view(), false, params.weight(&blocks[branch]), false, 0.0, &mut s_hidden);
                mask_in_place(&mut s_hidden, &fwd.preactivations[l - 1], relu_scale);
                gemm(1.0, s_hidden.view(), false, params.weight(&blocks[hidden]), false, 1.0, &mut upstream);
                sens[branch] = Some(s_branch);
                sens[hidden] = Some(s_hidden);
            }
            sens[0] = Some(upstream.map(|v| v / m.sqrt()));
        }
    }
    Ok(sens.into_iter().map(|s| s.expect("every block visited")).collect())
}

/// Forward pass of a single input with every intermediate quantity kept.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<(f64, ForwardCache)> {
    let batch = forward_batch(params, &Matrix::from_vec(1, x.len(), x.to_vec())?)?;
    let arch = params.arch();
    let row = |m: &Matrix| m.row(0).to_vec();
    let (activations, branch_activations) = match arch.family {
        Family::Fcn => (batch.block_inputs.iter().map(row).collect(), Vec::new()),
        Family::ResNet { .. } => {
            // block inputs: x, r0, t1, r1, t2, ..., r_{L-1}, t_L, r_L
            let acts = batch.block_inputs[1..].iter().step_by(2).map(row).collect();
            let branches = batch.block_inputs[2..].iter().step_by(2).map(row).collect();
            (acts, branches)
        }
    };
    let masks = batch
        .preactivations
        .iter()
        .map(|h| h.row(0).iter().map(|&v| v > 0.0).collect())
        .collect();
    let cache = ForwardCache {
        output: batch.outputs[0],
        activations,
        branch_activations,
        masks,
        preactivations: batch.preactivations.iter().map(row).collect(),
    };
    Ok((cache.output, cache))
}
