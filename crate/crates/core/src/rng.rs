//! Seeded random streams.
//!
//! Every stream is a ChaCha20 keystream (`rand_chacha::ChaCha20Rng`) keyed by
//! the 64-bit `seed` (expanded through `seed_from_u64`) with the 64-bit
//! `stream_id` selecting the ChaCha stream/nonce. Standard normals come from
//! the Box–Muller transform applied to pairs of 53-bit uniforms; the second
//! variate of each pair is cached and returned by the next call.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;

/// Well-known stream ids so that independent consumers of one seed never
/// share random numbers.
pub mod streams {
    pub const NETWORK_INIT: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const SUBSET: u64 = 3;
    pub const VALIDATION: u64 = 4;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// A `rows x cols` matrix of i.i.d. standard normal entries, filled in
/// row-major order.
pub fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Result<Matrix> {
    ensure!(
        rows >= 1 && cols >= 1,
        "gaussian matrix needs positive dimensions, got {rows}x{cols}"
    );
    let mut data = vec![0.0; rows * cols];
    rng.fill_standard_normal(&mut data);
    Matrix::from_vec(rows, cols, data)
}
