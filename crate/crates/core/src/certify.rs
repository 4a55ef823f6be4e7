//! Positive-definiteness certificates for analytic kernel Grams and the
//! kernel-deviation gap along a training trace.

use sha2::{Digest, Sha256};

use crate::dynamics::{ensure_distinct_rows, TrainingTrace};
use crate::error::{ensure, Result};
use crate::kernels::{AnalyticKernelSpec, KernelMatrix};
use crate::linalg::{frobenius_distance, sym_eig_min, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Failed,
}

#[derive(Clone, Debug)]
pub struct SpdCertificate {
    pub spec: AnalyticKernelSpec,
    /// Hex SHA-256 of the point set (see [`fingerprint`]).
    pub fingerprint: String,
    pub n: usize,
    pub lambda_min: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub gram: KernelMatrix,
}

impl SpdCertificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// SHA-256 over the row and column counts (little-endian `u64`) followed by
/// every entry's IEEE-754 bits (little-endian), row-major.
pub fn fingerprint(x: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((x.rows() as u64).to_le_bytes());
    h.update((x.cols() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Assemble the Gram of `spec` on the rows of `x` and certify
/// `lambda_min > tol`. Without `tol`, `1e-10 trace / n` is used.
pub fn certify_spd(spec: &AnalyticKernelSpec, x: &Matrix, tol: Option<f64>) -> Result<SpdCertificate> {
    ensure!(x.rows() >= 1, "certification needs at least one point");
    if let Some(t) = tol {
        ensure!(t > 0.0 && t.is_finite(), "certification tolerance must be > 0, got {t}");
    }
    ensure_distinct_rows(x)?;
    let gram = spec.gram(x)?;
    let n = gram.n();
    let tolerance = tol.unwrap_or(1e-10 * gram.matrix.trace() / n as f64);
    let lambda_min = sym_eig_min(&gram.matrix)?;
    Ok(SpdCertificate {
        spec: *spec,
        fingerprint: fingerprint(x),
        n,
        lambda_min,
        tolerance,
        verdict: if lambda_min > tolerance { Verdict::Certified } else { Verdict::Failed },
        gram,
    })
}

/// `lambda_min(K_emp) - lambda_min(K_ana)`. Fails if the difference exceeds
/// the Frobenius distance between the two Grams (beyond round-off), which
/// would contradict Weyl's inequality.
pub fn eigenvalue_transfer_check(emp: &KernelMatrix, ana: &KernelMatrix) -> Result<f64> {
    let distance = frobenius_distance(&emp.matrix, &ana.matrix)?;
    let diff = sym_eig_min(&emp.matrix)? - sym_eig_min(&ana.matrix)?;
    let slack = 1e-9 * emp.matrix.max_abs().max(ana.matrix.max_abs()).max(1.0);
    ensure!(
        diff.abs() <= distance + slack,
        "eigenvalue shift {diff} exceeds Frobenius distance {distance}"
    );
    Ok(diff)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairGap {
    pub i: usize,
    pub j: usize,
    /// Largest `|K_t(x_i, x_j) - reference|` over recorded epochs.
    pub sup_dev: f64,
    pub first_exceed_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub threshold: f64,
    pub pairs: Vec<PairGap>,
    pub exceeded: bool,
}

impl GapReport {
    pub fn max_sup_dev(&self) -> f64 {
        self.pairs.iter().fold(0.0, |m, p| m.max(p.sup_dev))
    }

    pub fn first_exceed_epoch(&self) -> Option<usize> {
        self.pairs.iter().filter_map(|p| p.first_exceed_epoch).min()
    }
}

/// Deviation of the watched entries from per-pair reference values. A pair
/// exceeds once a deviation reaches `threshold`.
pub fn gap_against(trace: &TrainingTrace, reference: &[f64], threshold: f64) -> Result<GapReport> {
    ensure!(!trace.watch.is_empty(), "trace has no watched kernel entries");
    ensure!(!trace.records.is_empty(), "trace has no records");
    ensure!(
        reference.len() == trace.watch.len(),
        "{} reference values for {} watched pairs",
        reference.len(),
        trace.watch.len()
    );
    if let Some(r) = trace.records.iter().find(|r| r.watched.len() != trace.watch.len()) {
        return Err(crate::Error::contract(format!(
            "record at epoch {} has {} watched entries, expected {}",
            r.epoch,
            r.watched.len(),
            trace.watch.len()
        )));
    }
    let pairs: Vec<PairGap> = trace
        .watch
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let mut sup_dev: f64 = 0.0;
            let mut first_exceed_epoch = None;
            for r in &trace.records {
                let dev = (r.watched[k] - reference[k]).abs();
                sup_dev = sup_dev.max(dev);
                if first_exceed_epoch.is_none() && dev >= threshold {
                    first_exceed_epoch = Some(r.epoch);
                }
            }
            PairGap {
                i,
                j,
                sup_dev,
                first_exceed_epoch,
            }
        })
        .collect();
    let exceeded = pairs.iter().any(|p| p.first_exceed_epoch.is_some());
    Ok(GapReport {
        threshold,
        pairs,
        exceeded,
    })
}

/// Gap of the watched entries from the analytic kernel, against
/// `lambda_0 / (2 n^2)` with `lambda_0` the certified minimum eigenvalue.
pub fn divergence_gap(trace: &TrainingTrace, certificate: &SpdCertificate) -> Result<GapReport> {
    ensure!(
        certificate.is_certified(),
        "reference Gram is not certified positive definite (lambda_min = {})",
        certificate.lambda_min
    );
    let n = certificate.n;
    let threshold = certificate.lambda_min / (2.0 * (n * n) as f64);
    if let Some(&(i, j)) = trace.watch.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(crate::Error::contract(format!("watched pair ({i}, {j}) outside {n} points")));
    }
    let reference: Vec<f64> = trace.watch.iter().map(|&(i, j)| certificate.gram.get(i, j)).collect();
    gap_against(trace, &reference, threshold)
}

/// Gap of the watched entries from their values at the first record, against
/// `rel_tol * max |K_0|` over the watched entries.
pub fn gap_from_initial(trace: &TrainingTrace, rel_tol: f64) -> Result<GapReport> {
    ensure!(rel_tol > 0.0, "relative tolerance must be > 0, got {rel_tol}");
    let first = trace
        .records
        .first()
        .ok_or_else(|| crate::Error::contract("trace has no records"))?;
    let reference = first.watched.clone();
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    gap_against(trace, &reference, rel_tol * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TraceRecord;

    fn points() -> Matrix {
        Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-0.6, 0.2]]).unwrap()
    }

    fn record(epoch: usize, watched: Vec<f64>) -> TraceRecord {
        TraceRecord {
            epoch,
            outputs: vec![],
            residuals: vec![],
            lyapunov: 0.0,
            lyapunov_saturated: false,
            lambda_min: 0.0,
            watched,
            theta_inf_dist: 0.0,
            loss: 0.0,
        }
    }

    #[test]
    fn single_point_is_certified() {
        let x = Matrix::from_rows(&[[0.3, -0.4]]).unwrap();
        let spec = AnalyticKernelSpec::fcntk(2);
        let c = certify_spd(&spec, &x, None).unwrap();
        assert!(c.is_certified());
        assert_eq!(c.lambda_min, spec.eval(x.row(0), x.row(0)).unwrap());
    }

    #[test]
    fn duplicates_and_bad_tolerance_are_rejected() {
        let x = Matrix::from_rows(&[[0.3, -0.4], [0.3, -0.4]]).unwrap();
        assert!(certify_spd(&AnalyticKernelSpec::fcntk(1), &x, None).is_err());
        assert!(certify_spd(&AnalyticKernelSpec::fcntk(1), &points(), Some(0.0)).is_err());
    }

    #[test]
    fn fingerprint_depends_on_points() {
        let a = fingerprint(&points());
        assert_eq!(a.len(), 64);
        let mut moved = points();
        moved[(2, 1)] = 0.2000001;
        assert_ne!(a, fingerprint(&moved));
    }

    #[test]
    fn transfer_check_shift() {
        let ana = AnalyticKernelSpec::fcntk(2).gram(&points()).unwrap();
        assert_eq!(eigenvalue_transfer_check(&ana, &ana).unwrap(), 0.0);
        let mut shifted = ana.clone();
        for i in 0..3 {
            shifted.matrix[(i, i)] += 0.25;
        }
        let d = eigenvalue_transfer_check(&shifted, &ana).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_trace_has_no_gap() {
        let spec = AnalyticKernelSpec::fcntk(2);
        let cert = certify_spd(&spec, &points(), None).unwrap();
        let watch = vec![(0, 0), (0, 1), (1, 2)];
        let values: Vec<f64> = watch.iter().map(|&(i, j)| cert.gram.get(i, j)).collect();
        let trace = TrainingTrace {
            watch,
            records: (0..5).map(|t| record(t, values.clone())).collect(),
        };
        let report = divergence_gap(&trace, &cert).unwrap();
        assert!(!report.exceeded);
        assert_eq!(report.max_sup_dev(), 0.0);
        assert!(report.threshold > 0.0);
    }

    #[test]
    fn linear_drift_exceeds_at_threshold_ceiling() {
        let spec = AnalyticKernelSpec::fcntk(2);
        let cert = certify_spd(&spec, &points(), None).unwrap();
        let base = cert.gram.get(1, 1);
        let final_epoch = 40;
        let trace = TrainingTrace {
            watch: vec![(1, 1)],
            records: (0..=final_epoch).map(|t| record(t, vec![base + t as f64])).collect(),
        };
        let report = divergence_gap(&trace, &cert).unwrap();
        let threshold = cert.lambda_min / 18.0;
        assert!((report.threshold - threshold).abs() < 1e-15);
        assert!((report.pairs[0].sup_dev - final_epoch as f64).abs() < 1e-9);
        assert_eq!(report.first_exceed_epoch(), Some(threshold.ceil() as usize));
        assert!(report.exceeded);
    }

    #[test]
    fn missing_watch_entries_are_rejected() {
        let cert = certify_spd(&AnalyticKernelSpec::fcntk(1), &points(), None).unwrap();
        let empty = TrainingTrace {
            watch: vec![],
            records: vec![record(0, vec![])],
        };
        assert!(divergence_gap(&empty, &cert).is_err());
        let ragged = TrainingTrace {
            watch: vec![(0, 0), (1, 1)],
            records: vec![record(0, vec![1.0, 2.0]), record(1, vec![1.0])],
        };
        assert!(divergence_gap(&ragged, &cert).is_err());
    }

    #[test]
    fn relative_gap_from_initial() {
        let trace = TrainingTrace {
            watch: vec![(0, 0), (0, 1)],
            records: vec![record(0, vec![10.0, 2.0]), record(5, vec![10.2, 2.3]), record(9, vec![10.6, 2.0])],
        };
        let report = gap_from_initial(&trace, 0.05).unwrap();
        assert!((report.threshold - 0.5).abs() < 1e-15);
        assert_eq!(report.pairs[0].first_exceed_epoch, Some(9));
        assert_eq!(report.pairs[1].first_exceed_epoch, None);
    }
}
