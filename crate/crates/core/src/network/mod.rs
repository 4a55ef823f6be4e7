//! Finite-width ReLU networks in NTK parameterization.
//!
//! Fully connected (`L` hidden layers of width `m`):
//!
//! ```text
//! a0 = x,  a_l = sqrt(2/m) relu(W_l a_{l-1} + b_l),  f = w . a_L
//! ```
//!
//! Residual:
//!
//! ```text
//! r0  = (A x + b) / sqrt(m)
//! t_l = sqrt(2/m) relu(W_l r_{l-1} + b_l)
//! r_l = r_{l-1} + a / sqrt(m) (V_l t_l + d_l)
//! f   = w . r_L
//! ```
//!
//! Every network is a chain of affine blocks `z = W in + bias`. All
//! parameters live in one flat vector `theta`, laid out block by block in
//! layer order with each block's weight matrix (row-major, `out x in`)
//! followed by its bias:
//!
//! * FCN: `W_1, b_1, W_2, b_2, ..., W_L, b_L, w`
//! * ResNet: `A, b, W_1, b_1, V_1, d_1, ..., W_L, b_L, V_L, d_L, w`

mod ntk;
mod pass;

pub use ntk::{
    empirical_ntk, empirical_ntk_between, flat_gradient_gram, grad_check, min_abs_preactivation,
    param_gradients, weighted_gradient,
};
pub use pass::{backward, forward, forward_batch, BatchForward, ForwardCache};

use crate::error::{ensure, Result};
use crate::linalg::MatRef;
use crate::rng::{streams, RngStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    Fcn,
    ResNet { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchDescriptor {
    pub family: Family,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
}

impl ArchDescriptor {
    pub fn fcn(input_dim: usize, width: usize, depth: usize) -> Self {
        ArchDescriptor {
            family: Family::Fcn,
            input_dim,
            width,
            depth,
        }
    }

    pub fn resnet(input_dim: usize, width: usize, depth: usize, scale: f64) -> Self {
        ArchDescriptor {
            family: Family::ResNet { scale },
            input_dim,
            width,
            depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1, "input dimension must be >= 1");
        ensure!(self.width >= 1, "width must be >= 1");
        ensure!(self.depth >= 1, "depth must be >= 1");
        if let Family::ResNet { scale } = self.family {
            // A zero scale is allowed: it disables every residual branch.
            ensure!(scale >= 0.0 && scale.is_finite(), "residual scale must be >= 0, got {scale}");
        }
        Ok(())
    }

    /// Affine blocks in flattening order.
    pub fn blocks(&self) -> Vec<AffineBlock> {
        let (d, m, depth) = (self.input_dim, self.width, self.depth);
        let mut shapes = Vec::new();
        match self.family {
            Family::Fcn => {
                for l in 1..=depth {
                    let cols = if l == 1 { d } else { m };
                    shapes.push((BlockRole::Hidden(l), m, cols, true));
                }
            }
            Family::ResNet { .. } => {
                shapes.push((BlockRole::Input, m, d, true));
                for l in 1..=depth {
                    shapes.push((BlockRole::Hidden(l), m, m, true));
                    shapes.push((BlockRole::Residual(l), m, m, true));
                }
            }
        }
        shapes.push((BlockRole::Readout, 1, m, false));

        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(role, rows, cols, has_bias)| {
                let block = AffineBlock {
                    role,
                    rows,
                    cols,
                    weight_offset: offset,
                    bias_offset: has_bias.then_some(offset + rows * cols),
                };
                offset += rows * cols + if has_bias { rows } else { 0 };
                block
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.end())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockRole {
    /// ResNet input embedding `A, b`.
    Input,
    /// `W_l, b_l` (1-based layer index).
    Hidden(usize),
    /// ResNet branch output `V_l, d_l`.
    Residual(usize),
    /// Output row `W_{L+1}`.
    Readout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffineBlock {
    pub role: BlockRole,
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl AffineBlock {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn end(&self) -> usize {
        self.weight_offset + self.weight_len() + if self.bias_offset.is_some() { self.rows } else { 0 }
    }
}

/// All weights and biases of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: ArchDescriptor,
    blocks: Vec<AffineBlock>,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        arch.validate()?;
        let blocks = arch.blocks();
        let theta = vec![0.0; arch.param_count()];
        Ok(NetworkParams { arch, blocks, theta })
    }

    pub fn from_flat(arch: ArchDescriptor, theta: Vec<f64>) -> Result<Self> {
        let mut p = NetworkParams::zeros(arch)?;
        ensure!(
            theta.len() == p.theta.len(),
            "flat parameter vector has {} entries, architecture needs {}",
            theta.len(),
            p.theta.len()
        );
        p.theta = theta;
        Ok(p)
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn blocks(&self) -> &[AffineBlock] {
        &self.blocks
    }

    pub fn block(&self, role: BlockRole) -> Option<&AffineBlock> {
        self.blocks.iter().find(|b| b.role == role)
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn weight(&self, block: &AffineBlock) -> MatRef<'_> {
        MatRef::new(
            block.rows,
            block.cols,
            &self.theta[block.weight_offset..block.weight_offset + block.weight_len()],
        )
    }

    pub fn weight_mut(&mut self, block: &AffineBlock) -> &mut [f64] {
        &mut self.theta[block.weight_offset..block.weight_offset + block.weight_len()]
    }

    pub fn bias(&self, block: &AffineBlock) -> Option<&[f64]> {
        block.bias_offset.map(|o| &self.theta[o..o + block.rows])
    }

    pub fn bias_mut(&mut self, block: &AffineBlock) -> Option<&mut [f64]> {
        block.bias_offset.map(move |o| &mut self.theta[o..o + block.rows])
    }

    /// `max_k |theta_k - other_k|`.
    pub fn max_abs_distance(&self, other: &NetworkParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Standard normal initialization; ResNet hidden and branch biases start at
/// zero. Entries are drawn in flattening order, skipping zero blocks.
pub fn init_network(arch: ArchDescriptor, rng: &mut RngStream) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(arch)?;
    let resnet = matches!(arch.family, Family::ResNet { .. });
    let blocks = params.blocks.clone();
    for block in &blocks {
        rng.fill_standard_normal(params.weight_mut(block));
        let zero_bias = resnet && matches!(block.role, BlockRole::Hidden(_) | BlockRole::Residual(_));
        if let Some(bias) = params.bias_mut(block) {
            if !zero_bias {
                rng.fill_standard_normal(bias);
            }
        }
    }
    Ok(params)
}

/// [`init_network`] on the network-initialization stream of `seed`.
pub fn init_network_seeded(arch: ArchDescriptor, seed: u64) -> Result<NetworkParams> {
    init_network(arch, &mut RngStream::new(seed, streams::NETWORK_INIT))
}
