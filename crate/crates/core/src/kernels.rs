//! Infinite-width neural tangent kernels for ReLU networks.
//!
//! Two forms are provided for each architecture:
//!
//! * [`fcntk`] / [`resntk`] follow the published recursions literally.
//! * [`fcntk_width_limit`] / [`resntk_width_limit`] are the kernels that the
//!   finite networks in [`crate::network`] actually converge to as the width
//!   grows. They differ from the published forms only in how bias
//!   contributions enter: hidden biases are `N(0, 1)` and the output layer has
//!   no bias, and in the residual network the bias terms do not scale with
//!   the input norm.
//!
//! The Gaussian ReLU expectations inside the recursions are evaluated with
//! the arc-cosine functions: for a centred Gaussian pair with variances
//! `s, s'` and correlation `rho`,
//! `2 E[relu(u) relu(v)] = sqrt(s s') kappa1(rho)` and
//! `2 E[step(u) step(v)] = kappa0(rho)`.

use std::f64::consts::PI;

use crate::error::{ensure, Error, Result};
use crate::linalg::{dot, Matrix};

const DOMAIN_SLACK: f64 = 1e-12;

fn clamp_correlation(u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0 + DOMAIN_SLACK) {
        return Err(Error::Domain(format!("correlation {u} outside [-1, 1]")));
    }
    Ok(u.clamp(-1.0, 1.0))
}

/// `(pi - arccos u) / pi`.
pub fn kappa0(u: f64) -> Result<f64> {
    let u = clamp_correlation(u)?;
    Ok((PI - u.acos()) / PI)
}

/// `(u (pi - arccos u) + sqrt(1 - u^2)) / pi`.
pub fn kappa1(u: f64) -> Result<f64> {
    let u = clamp_correlation(u)?;
    Ok((u * (PI - u.acos()) + (1.0 - u * u).max(0.0).sqrt()) / PI)
}

/// Which analytic kernel and which convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFamily {
    FullyConnected { depth: usize },
    Residual { depth: usize, scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// The recursion exactly as published.
    Published,
    /// The width limit of the finite networks in this crate.
    WidthLimit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticKernelSpec {
    pub family: KernelFamily,
    pub convention: Convention,
}

impl AnalyticKernelSpec {
    pub fn fcntk(depth: usize) -> Self {
        AnalyticKernelSpec {
            family: KernelFamily::FullyConnected { depth },
            convention: Convention::Published,
        }
    }

    pub fn resntk(depth: usize, scale: f64) -> Self {
        AnalyticKernelSpec {
            family: KernelFamily::Residual { depth, scale },
            convention: Convention::Published,
        }
    }

    pub fn width_limit(self) -> Self {
        AnalyticKernelSpec {
            convention: Convention::WidthLimit,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::FullyConnected { depth } => {
                ensure!(depth >= 1, "kernel depth must be >= 1");
            }
            KernelFamily::Residual { depth, scale } => {
                ensure!(depth >= 1, "kernel depth must be >= 1");
                ensure!(scale > 0.0 && scale.is_finite(), "residual scale must be > 0, got {scale}");
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match (self.family, self.convention) {
            (KernelFamily::FullyConnected { depth }, Convention::Published) => fcntk(x, y, depth),
            (KernelFamily::FullyConnected { depth }, Convention::WidthLimit) => {
                fcntk_width_limit(x, y, depth)
            }
            (KernelFamily::Residual { depth, scale }, Convention::Published) => {
                resntk(x, y, depth, scale)
            }
            (KernelFamily::Residual { depth, scale }, Convention::WidthLimit) => {
                resntk_width_limit(x, y, depth, scale)
            }
        }
    }

    /// Gram matrix over the rows of `x`.
    pub fn gram(&self, x: &Matrix) -> Result<KernelMatrix> {
        self.validate()?;
        let n = x.rows();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(x.row(i), x.row(j))?;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(KernelMatrix {
            matrix: k,
            provenance: Provenance::Analytic(*self),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Analytic(AnalyticKernelSpec),
    /// Empirical kernel of a width-`width` network, at training epoch `epoch`
    /// when known.
    Empirical { width: usize, epoch: Option<usize> },
}

/// Symmetric Gram matrix together with where it came from.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub matrix: Matrix,
    pub provenance: Provenance,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }
}

/// Bias variances entering the fully connected recursion.
#[derive(Clone, Copy)]
struct FcBiases {
    /// Added to `2 E[relu relu]` for every hidden layer above the first.
    hidden: f64,
    /// Added at the final (output) step.
    output: f64,
    /// Whether the added constant multiplies the expectation by two as a
    /// whole, i.e. `2 (E + 1)` instead of `2 E + c`.
    doubled: bool,
}

struct FcState {
    sigma: f64,
    sigma_xx: f64,
    sigma_yy: f64,
    theta: f64,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    ensure!(!x.is_empty(), "kernel inputs must have dimension >= 1");
    ensure!(
        x.len() == y.len(),
        "kernel inputs have dimensions {} and {}",
        x.len(),
        y.len()
    );
    Ok(())
}

fn fc_recursion(x: &[f64], y: &[f64], depth: usize, biases: FcBiases) -> Result<f64> {
    check_pair(x, y)?;
    ensure!(depth >= 1, "depth must be >= 1");
    let first = dot(x, y) + 1.0;
    let mut st = FcState {
        sigma: first,
        sigma_xx: dot(x, x) + 1.0,
        sigma_yy: dot(y, y) + 1.0,
        theta: first,
    };
    for l in 1..=depth {
        let c = if l == depth { biases.output } else { biases.hidden };
        let scale = (st.sigma_xx * st.sigma_yy).sqrt();
        let rho = st.sigma / scale;
        let relu = scale * kappa1(rho)?;
        let step = kappa0(rho)?;
        let (next, next_xx, next_yy) = if biases.doubled {
            (relu + 2.0 * c, st.sigma_xx + 2.0 * c, st.sigma_yy + 2.0 * c)
        } else {
            (relu + c, st.sigma_xx + c, st.sigma_yy + c)
        };
        st.theta = st.theta * step + next;
        st.sigma = next;
        st.sigma_xx = next_xx;
        st.sigma_yy = next_yy;
    }
    Ok(st.theta)
}

/// Published fully connected NTK: `Theta^(1) = <x,x'> + 1`,
/// `Sigma^(l+1) = 2 (E[relu relu] + 1)`, `Sigma-dot^(l+1) = 2 E[step step]`,
/// `Theta^(l+1) = Theta^(l) Sigma-dot^(l+1) + Sigma^(l+1)`, returning
/// `Theta^(L+1)`.
pub fn fcntk(x: &[f64], y: &[f64], depth: usize) -> Result<f64> {
    fc_recursion(
        x,
        y,
        depth,
        FcBiases {
            hidden: 1.0,
            output: 1.0,
            doubled: true,
        },
    )
}

/// Width limit of the fully connected network: hidden pre-activations get
/// a unit-variance bias and the linear readout has none.
pub fn fcntk_width_limit(x: &[f64], y: &[f64], depth: usize) -> Result<f64> {
    fc_recursion(
        x,
        y,
        depth,
        FcBiases {
            hidden: 1.0,
            output: 0.0,
            doubled: false,
        },
    )
}

/// Intermediate quantities of the residual recursion on the normalised
/// inputs `x~ = (x, 1) / |(x, 1)|`.
#[derive(Clone, Debug)]
pub struct ResidualTerms {
    pub norm_x: f64,
    pub norm_y: f64,
    /// `K_0 ..= K_L`.
    pub k: Vec<f64>,
    /// `B_1 ..= B_{L+1}` stored at indices `0..=L`.
    pub b: Vec<f64>,
}

impl ResidualTerms {
    pub fn b_at(&self, l: usize) -> f64 {
        self.b[l - 1]
    }

    /// Argument of the arc-cosine functions at level `l` (1-based), i.e.
    /// `K_{l-1} / (1 + a^2)^(l-1)`.
    pub fn correlation(&self, l: usize, scale: f64) -> f64 {
        self.k[l - 1] / (1.0 + scale * scale).powi(l as i32 - 1)
    }
}

pub fn residual_terms(x: &[f64], y: &[f64], depth: usize, scale: f64) -> Result<ResidualTerms> {
    check_pair(x, y)?;
    ensure!(depth >= 1, "depth must be >= 1");
    ensure!(scale > 0.0 && scale.is_finite(), "residual scale must be > 0, got {scale}");
    let norm_x = (dot(x, x) + 1.0).sqrt();
    let norm_y = (dot(y, y) + 1.0).sqrt();
    let a2 = scale * scale;
    let mut k = Vec::with_capacity(depth + 1);
    k.push((dot(x, y) + 1.0) / (norm_x * norm_y));
    for l in 1..=depth {
        let growth = (1.0 + a2).powi(l as i32 - 1);
        let prev = k[l - 1];
        k.push(prev + a2 * growth * kappa1(prev / growth)?);
    }
    let mut b = vec![0.0; depth + 1];
    b[depth] = 1.0;
    for l in (1..=depth).rev() {
        let growth = (1.0 + a2).powi(l as i32 - 1);
        b[l - 1] = b[l] * (1.0 + a2 * kappa0(k[l - 1] / growth)?);
    }
    Ok(ResidualTerms { norm_x, norm_y, k, b })
}

/// Published residual NTK,
/// `|(x,1)| |(x',1)| [K_L + x~.x~' B_1 + a^2 r]` with
/// `r = sum_l B_{l+1} [(1+a^2)^(l-1) kappa1(.) + (K_{l-1} + 1) kappa0(.) + 1]`.
pub fn resntk(x: &[f64], y: &[f64], depth: usize, scale: f64) -> Result<f64> {
    let t = residual_terms(x, y, depth, scale)?;
    let a2 = scale * scale;
    let mut r = 0.0;
    for l in 1..=depth {
        let u = t.correlation(l, scale);
        let growth = (1.0 + a2).powi(l as i32 - 1);
        r += t.b_at(l + 1) * (growth * kappa1(u)? + (t.k[l - 1] + 1.0) * kappa0(u)? + 1.0);
    }
    Ok(t.norm_x * t.norm_y * (t.k[depth] + t.k[0] * t.b_at(1) + a2 * r))
}

/// Width limit of the residual network with every layer trained. Same
/// recursion as [`resntk`], but the bias contributions of `b^(l)` and
/// `d^(l)` are not multiplied by the input norms.
pub fn resntk_width_limit(x: &[f64], y: &[f64], depth: usize, scale: f64) -> Result<f64> {
    let t = residual_terms(x, y, depth, scale)?;
    let a2 = scale * scale;
    let nn = t.norm_x * t.norm_y;
    let mut r = 0.0;
    for l in 1..=depth {
        let u = t.correlation(l, scale);
        let growth = (1.0 + a2).powi(l as i32 - 1);
        r += t.b_at(l + 1)
            * (nn * growth * kappa1(u)? + (nn * t.k[l - 1] + 1.0) * kappa0(u)? + 1.0);
    }
    Ok(nn * (t.k[depth] + t.k[0] * t.b_at(1)) + a2 * r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kappa {
    Zero,
    One,
}

/// One non-zero term `coefficient * u^power` of a Maclaurin series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesTerm {
    pub power: u32,
    pub coefficient: f64,
}

/// The first `count` non-zero Maclaurin terms of `kappa0` or `kappa1`:
///
/// * `kappa0(u) = 1/2 + (1/pi) sum_n c_n u^(2n+1) / (2n+1)`,
/// * `kappa1(u) = 1/pi + u/2 + 1/(2 pi) sum_n c_n/(n+1) u^(2n+2) / (2n+1)`,
///
/// with `c_n = (2n)! / (4^n (n!)^2)`, generated by the ratio
/// `c_{n+1} / c_n = (2n+1) / (2n+2)`.
pub fn kappa_maclaurin_terms(which: Kappa, count: usize) -> Result<Vec<SeriesTerm>> {
    ensure!(count >= 1, "need at least one Maclaurin term");
    let mut terms = Vec::with_capacity(count);
    match which {
        Kappa::Zero => terms.push(SeriesTerm {
            power: 0,
            coefficient: 0.5,
        }),
        Kappa::One => {
            terms.push(SeriesTerm {
                power: 0,
                coefficient: 1.0 / PI,
            });
            terms.push(SeriesTerm {
                power: 1,
                coefficient: 0.5,
            });
        }
    }
    let mut central = 1.0_f64;
    let mut n = 0u32;
    while terms.len() < count {
        let odd = f64::from(2 * n + 1);
        let term = match which {
            Kappa::Zero => SeriesTerm {
                power: 2 * n + 1,
                coefficient: central / odd / PI,
            },
            Kappa::One => SeriesTerm {
                power: 2 * n + 2,
                coefficient: central / f64::from(n + 1) / odd / (2.0 * PI),
            },
        };
        terms.push(term);
        central *= odd / f64::from(2 * n + 2);
        n += 1;
    }
    terms.truncate(count);
    Ok(terms)
}

/// Evaluates a truncated series.
pub fn series_sum(terms: &[SeriesTerm], u: f64) -> f64 {
    terms
        .iter()
        .map(|t| t.coefficient * u.powi(t.power as i32))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kappa0_values() {
        assert_relative_eq!(kappa0(1.0).unwrap(), 1.0);
        assert_relative_eq!(kappa0(0.0).unwrap(), 0.5);
        assert!((kappa0(0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kappa1_values() {
        assert_relative_eq!(kappa1(1.0).unwrap(), 1.0);
        assert_relative_eq!(kappa1(0.0).unwrap(), 1.0 / PI);
        assert!(kappa1(-1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kappa_domain() {
        assert_eq!(kappa0(1.0 + 1e-13).unwrap(), 1.0);
        assert!(matches!(kappa0(1.0 + 1e-9), Err(Error::Domain(_))));
        assert!(matches!(kappa1(-1.5), Err(Error::Domain(_))));
        assert!(kappa1(f64::NAN).is_err());
    }

    #[test]
    fn kappa1_dominates_identity() {
        for i in 0..=200 {
            let u = -1.0 + i as f64 / 100.0;
            let k = kappa1(u).unwrap();
            assert!(k >= u - 1e-15 && (0.0..=1.0 + 1e-15).contains(&k));
        }
    }

    #[test]
    fn first_layer_is_affine_dot_product() {
        // Theta^(1) = <x, x'> + 1 before any ReLU layer.
        let x = [1.0, 0.0];
        let y = [0.0, 1.0];
        assert_eq!(dot(&x, &y) + 1.0, 1.0);
    }

    #[test]
    fn fcntk_zero_input_depth_one() {
        assert_relative_eq!(fcntk(&[0.0, 0.0], &[0.0, 0.0], 1).unwrap(), 4.0, epsilon = 1e-14);
        // Limit form: Sigma^(2) = 1 without the readout bias, so 1 + 1.
        assert_relative_eq!(
            fcntk_width_limit(&[0.0, 0.0], &[0.0, 0.0], 1).unwrap(),
            2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn fcntk_rejects_dimension_mismatch() {
        assert!(matches!(fcntk(&[1.0], &[1.0, 2.0], 2), Err(Error::Contract(_))));
        assert!(resntk(&[1.0], &[1.0, 2.0], 2, 1.0).is_err());
    }

    #[test]
    fn resntk_zero_input_hand_recursion() {
        // K0 = 1, K1 = 2, B2 = 1, B1 = 2, r = 4 => 1 * (2 + 2 + 4) = 8.
        let t = residual_terms(&[0.0], &[0.0], 1, 1.0).unwrap();
        assert_relative_eq!(t.k[0], 1.0);
        assert_relative_eq!(t.k[1], 2.0);
        assert_relative_eq!(t.b_at(2), 1.0);
        assert_relative_eq!(t.b_at(1), 2.0);
        assert_relative_eq!(resntk(&[0.0], &[0.0], 1, 1.0).unwrap(), 8.0, epsilon = 1e-14);
        assert_relative_eq!(
            resntk_width_limit(&[0.0], &[0.0], 1, 1.0).unwrap(),
            8.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn maclaurin_leading_coefficients() {
        let k0 = kappa_maclaurin_terms(Kappa::Zero, 3).unwrap();
        assert_relative_eq!(k0[0].coefficient, 0.5);
        assert_relative_eq!(k0[1].coefficient, 1.0 / PI);
        assert_eq!(k0[2].power, 3);
        assert_relative_eq!(k0[2].coefficient, 1.0 / (6.0 * PI));
        let k1 = kappa_maclaurin_terms(Kappa::One, 3).unwrap();
        assert_relative_eq!(k1[0].coefficient, 1.0 / PI);
        assert_relative_eq!(k1[1].coefficient, 0.5);
        assert_eq!(k1[2].power, 2);
        assert_relative_eq!(k1[2].coefficient, 1.0 / (2.0 * PI));
        assert!(kappa_maclaurin_terms(Kappa::One, 0).is_err());
    }
}
