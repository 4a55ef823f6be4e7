//! Full-batch gradient-descent training under cross-entropy or squared loss,
//! and the residual dynamics that cross-entropy training induces.
//!
//! With labels `y_i in {0, 1}`, signs `s_i = 2 y_i - 1` and outputs `f_i`,
//! the residual is `u_i = 1 / (1 + exp(s_i f_i))`. Under gradient flow on the
//! cross-entropy loss the residuals obey
//!
//! ```text
//! du_i/dt = -u_i (1 - u_i) (K^r u)_i,    K^r = diag(s) K diag(s)
//! ```
//!
//! and `V = -sum_i ln(1 - u_i)` decreases at rate `u^T K^r u`.

use crate::error::{ensure, Error, Result};
use crate::linalg::{dot, sym_eig_min, Matrix};
use crate::network::{empirical_ntk, forward_batch, init_network_seeded, weighted_gradient};
use crate::network::{ArchDescriptor, NetworkParams};

/// Minimum Euclidean distance between two rows of a sample set.
pub const DISTINCT_TOL: f64 = 1e-9;

/// Inputs (one per row) with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    x: Matrix,
    labels: Vec<u8>,
}

impl SampleSet {
    pub fn new(x: Matrix, labels: Vec<u8>) -> Result<Self> {
        ensure!(x.rows() >= 1, "sample set must not be empty");
        ensure!(
            labels.len() == x.rows(),
            "{} labels for {} inputs",
            labels.len(),
            x.rows()
        );
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::contract(format!("label {bad} is not in {{0, 1}}")));
        }
        ensure_distinct_rows(&x)?;
        Ok(SampleSet { x, labels })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// `2 y - 1` per sample.
    pub fn signs(&self) -> Vec<f64> {
        signs(&self.labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub(crate) fn ensure_distinct_rows(x: &Matrix) -> Result<()> {
    for i in 0..x.rows() {
        for j in 0..i {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            ensure!(
                d2.sqrt() > DISTINCT_TOL,
                "inputs {j} and {i} coincide (distance {})",
                d2.sqrt()
            );
        }
    }
    Ok(())
}

fn signs(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&y| 2.0 * f64::from(y) - 1.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `sum_i ln(1 + exp(-s_i f_i))`.
    CrossEntropy,
    /// `1/2 sum_i (f_i - s_i)^2`.
    Mse,
}

/// `ln(1 + exp(-z))` without overflow.
pub fn logistic_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))`, kept inside `[0, 1]` for any finite `z`.
fn reverse_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Residuals `u_i = 1 / (1 + exp((2 y_i - 1) f_i))` from network outputs.
pub fn residuals_from_outputs(outputs: &[f64], labels: &[u8]) -> Vec<f64> {
    outputs
        .iter()
        .zip(signs(labels))
        .map(|(&f, s)| reverse_sigmoid(s * f))
        .collect()
}

pub fn residuals(params: &NetworkParams, data: &SampleSet) -> Result<Vec<f64>> {
    let fwd = forward_batch(params, data.x())?;
    Ok(residuals_from_outputs(&fwd.outputs, data.labels()))
}

pub fn loss_from_outputs(outputs: &[f64], labels: &[u8], kind: LossKind) -> f64 {
    let pairs = outputs.iter().zip(signs(labels));
    match kind {
        LossKind::CrossEntropy => pairs.map(|(&f, s)| logistic_loss(s * f)).sum(),
        LossKind::Mse => 0.5 * pairs.map(|(&f, s)| (f - s) * (f - s)).sum::<f64>(),
    }
}

pub fn loss_value(params: &NetworkParams, data: &SampleSet, kind: LossKind) -> Result<f64> {
    let fwd = forward_batch(params, data.x())?;
    Ok(loss_from_outputs(&fwd.outputs, data.labels(), kind))
}

/// `d loss / d f_i`.
fn loss_derivative(outputs: &[f64], labels: &[u8], kind: LossKind) -> Vec<f64> {
    let s = signs(labels);
    match kind {
        LossKind::CrossEntropy => outputs
            .iter()
            .zip(&s)
            .map(|(&f, &s)| -s * reverse_sigmoid(s * f))
            .collect(),
        LossKind::Mse => outputs.iter().zip(&s).map(|(&f, &s)| f - s).collect(),
    }
}

/// One full-batch gradient-descent step in place. Returns the outputs
/// before the step.
pub fn gradient_step_in_place(
    params: &mut NetworkParams,
    data: &SampleSet,
    kind: LossKind,
    learning_rate: f64,
) -> Result<Vec<f64>> {
    ensure!(
        learning_rate >= 0.0 && learning_rate.is_finite(),
        "learning rate must be a finite non-negative number, got {learning_rate}"
    );
    let (outputs, grad) = weighted_gradient(params, data.x(), |f| loss_derivative(f, data.labels(), kind))?;
    for (t, g) in params.flat_mut().iter_mut().zip(&grad) {
        *t -= learning_rate * g;
    }
    Ok(outputs)
}

/// The parameters after one gradient-descent step of `config`.
pub fn loss_gradient_step(
    params: &NetworkParams,
    data: &SampleSet,
    config: &TrainingConfig,
) -> Result<NetworkParams> {
    let mut next = params.clone();
    gradient_step_in_place(&mut next, data, config.loss, config.learning_rate)?;
    Ok(next)
}

/// `diag(s) K diag(s)` with `s = 2 y - 1`.
pub fn kr_matrix(k: &Matrix, labels: &[u8]) -> Result<Matrix> {
    ensure!(
        k.is_square() && k.rows() == labels.len(),
        "kernel of shape {:?} does not match {} labels",
        k.shape(),
        labels.len()
    );
    let s = signs(labels);
    Ok(Matrix::from_fn(k.rows(), k.cols(), |i, j| s[i] * k[(i, j)] * s[j]))
}

/// Value of the Lyapunov function with a flag for saturated residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lyapunov {
    pub value: f64,
    /// Some `u_i` reached `1 - 1e-300`; its term is capped at
    /// `-ln(1e-300)`.
    pub saturated: bool,
}

const SATURATION_GAP: f64 = 1e-300;

/// `V(u) = -sum_i ln(1 - u_i)`.
pub fn lyapunov(u: &[f64]) -> Lyapunov {
    let mut saturated = false;
    let value = u
        .iter()
        .map(|&ui| {
            let gap = 1.0 - ui;
            if gap <= SATURATION_GAP {
                saturated = true;
                -SATURATION_GAP.ln()
            } else {
                -(-ui).ln_1p()
            }
        })
        .sum();
    Lyapunov { value, saturated }
}

fn kr_times(u: &[f64], k: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    ensure!(u.len() == labels.len(), "{} residuals for {} labels", u.len(), labels.len());
    let kr = kr_matrix(k, labels)?;
    Ok((0..u.len()).map(|i| dot(kr.row(i), u)).collect())
}

/// `du_i/dt = -u_i (1 - u_i) (K^r u)_i`.
pub fn residual_dynamics_rhs(u: &[f64], k: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    let kru = kr_times(u, k, labels)?;
    Ok(u.iter().zip(kru).map(|(&ui, v)| -ui * (1.0 - ui) * v).collect())
}

/// `dV/dt = -u^T K^r u`.
pub fn lyapunov_rate(u: &[f64], k: &Matrix, labels: &[u8]) -> Result<f64> {
    Ok(-dot(u, &kr_times(u, k, labels)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub arch: ArchDescriptor,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub record_every: usize,
    pub seed: u64,
    /// Index pairs whose empirical-kernel entries are recorded.
    pub ntk_watch: Vec<(usize, usize)>,
}

impl TrainingConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.arch.validate()?;
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be > 0, got {}",
            self.learning_rate
        );
        ensure!(self.record_every >= 1, "record_every must be >= 1");
        if let Some(&(i, j)) = self.ntk_watch.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::contract(format!("watched pair ({i}, {j}) out of range for {n} samples")));
        }
        Ok(())
    }

    fn records_at(&self, epoch: usize) -> bool {
        epoch % self.record_every == 0 || epoch == self.epochs
    }
}

/// Everything recorded at one epoch, measured before that epoch's step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub outputs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub lyapunov: f64,
    pub lyapunov_saturated: bool,
    /// Smallest eigenvalue of the empirical kernel Gram.
    pub lambda_min: f64,
    /// Kernel entries at the configured watch pairs, in order.
    pub watched: Vec<f64>,
    /// `max_k |theta_k(t) - theta_k(0)|`.
    pub theta_inf_dist: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub watch: Vec<(usize, usize)>,
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Record of `epoch`, if one was taken.
    pub fn at_epoch(&self, epoch: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    /// `min_i (2 y_i - 1) f_i` at every record.
    pub fn margins(&self, labels: &[u8]) -> Vec<f64> {
        let s = signs(labels);
        self.records
            .iter()
            .map(|r| r.outputs.iter().zip(&s).map(|(f, s)| f * s).fold(f64::INFINITY, f64::min))
            .collect()
    }
}

/// Final state of a completed run.
#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub trace: TrainingTrace,
    pub initial: NetworkParams,
    pub params: NetworkParams,
}

fn measure(
    params: &NetworkParams,
    initial: &NetworkParams,
    data: &SampleSet,
    config: &TrainingConfig,
    epoch: usize,
) -> Result<TraceRecord> {
    let kernel = empirical_ntk(params, data.x())?;
    let outputs = forward_batch(params, data.x())?.outputs;
    let residuals = residuals_from_outputs(&outputs, data.labels());
    let v = lyapunov(&residuals);
    let lambda_min = if kernel.matrix.is_finite() {
        sym_eig_min(&kernel.matrix)?
    } else {
        f64::NAN
    };
    Ok(TraceRecord {
        epoch,
        loss: loss_from_outputs(&outputs, data.labels(), config.loss),
        lyapunov: v.value,
        lyapunov_saturated: v.saturated,
        lambda_min,
        watched: config.ntk_watch.iter().map(|&(i, j)| kernel.get(i, j)).collect(),
        theta_inf_dist: params.max_abs_distance(initial),
        outputs,
        residuals,
    })
}

/// Train from the seeded initialization of `config.arch`.
pub fn train(config: &TrainingConfig, data: &SampleSet) -> Result<TrainingTrace> {
    train_observed(config, data, |_| Ok::<(), Error>(())).map(|o| o.trace)
}

/// [`train`], calling `observe` on every record as soon as it is taken.
/// Observer errors abort the run.
pub fn train_observed<E, F>(config: &TrainingConfig, data: &SampleSet, mut observe: F) -> Result<TrainingOutcome, E>
where
    E: From<Error>,
    F: FnMut(&TraceRecord) -> Result<(), E>,
{
    config.validate(data.len())?;
    let initial = init_network_seeded(config.arch, config.seed)?;
    let mut params = initial.clone();
    let mut trace = TrainingTrace {
        watch: config.ntk_watch.clone(),
        records: Vec::new(),
    };
    for epoch in 0..=config.epochs {
        if config.records_at(epoch) {
            let record = measure(&params, &initial, data, config, epoch)?;
            observe(&record)?;
            let loss = record.loss;
            trace.records.push(record);
            if !loss.is_finite() {
                return Err(diverged(epoch, loss, trace).into());
            }
        }
        if epoch == config.epochs {
            break;
        }
        let outputs = gradient_step_in_place(&mut params, data, config.loss, config.learning_rate)?;
        let loss = loss_from_outputs(&outputs, data.labels(), config.loss);
        if !loss.is_finite() || !params.flat().iter().all(|v| v.is_finite()) {
            return Err(diverged(epoch, loss, trace).into());
        }
    }
    Ok(TrainingOutcome {
        trace,
        initial,
        params,
    })
}

fn diverged(epoch: usize, loss: f64, trace: TrainingTrace) -> Error {
    Error::Diverged {
        epoch,
        loss,
        trace: Box::new(trace),
    }
}
