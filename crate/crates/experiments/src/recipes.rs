//! Experiment recipes: kernel slices, the initial-kernel width sweep, the
//! circle training runs, MNIST parity and standalone certification.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ntk_core::certify::{certify_spd, divergence_gap, gap_from_initial, GapReport, SpdCertificate};
use ntk_core::dynamics::{train_observed, LossKind, TraceRecord, TrainingConfig, TrainingTrace};
use ntk_core::kernels::AnalyticKernelSpec;
use ntk_core::network::{empirical_ntk, empirical_ntk_between, init_network_seeded, ArchDescriptor, NetworkParams};
use ntk_core::Matrix;

use crate::datasets::{load_mnist, make_circle_dataset, MnistSubset};
use crate::error::{ExpError, Result};
use crate::output::{write_certificate, write_gap, SliceRow, SliceSourceKind, TraceWriter};

/// Relative tolerance for the squared-loss control: watched kernel entries
/// may drift by at most this fraction of the largest initial entry.
pub const LAZY_TOLERANCE: f64 = 0.05;

/// Base point of every kernel slice.
pub const SLICE_BASE: [f64; 2] = [1.0, 0.0];

/// `points` angles evenly spaced over `[-pi, pi]`, both ends included.
pub fn slice_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(ntk_core::Error::Contract(format!("slice grid needs at least 2 points, got {points}")).into());
    }
    let step = 2.0 * PI / (points - 1) as f64;
    Ok((0..points)
        .map(|k| if k == points - 1 { PI } else { -PI + step * k as f64 })
        .collect())
}

fn unit_circle(thetas: &[f64]) -> Result<Matrix> {
    if let Some(t) = thetas.iter().find(|t| !(-PI..=PI).contains(*t)) {
        return Err(ntk_core::Error::Contract(format!("slice angle {t} outside [-pi, pi]")).into());
    }
    Ok(Matrix::from_fn(thetas.len(), 2, |k, c| {
        if c == 0 {
            thetas[k].cos()
        } else {
            thetas[k].sin()
        }
    }))
}

pub enum SliceSource<'a> {
    Analytic(AnalyticKernelSpec),
    Empirical(&'a NetworkParams),
}

/// `K(base, (cos t, sin t))` for every `t` in `thetas`.
pub fn kernel_slice(source: SliceSource<'_>, base: &[f64], thetas: &[f64]) -> Result<Vec<f64>> {
    let points = unit_circle(thetas)?;
    match source {
        SliceSource::Analytic(spec) => (0..points.rows())
            .map(|k| spec.eval(base, points.row(k)).map_err(ExpError::from))
            .collect(),
        SliceSource::Empirical(params) => {
            let base = Matrix::from_vec(1, base.len(), base.to_vec())?;
            Ok(empirical_ntk_between(params, &base, &points)?.into_vec())
        }
    }
}

#[derive(Clone, Debug)]
pub struct WidthSweepParams {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub first_seed: u64,
    pub grid_points: usize,
    /// Architecture template; its width is replaced by each swept width.
    pub arch: ArchDescriptor,
    pub kernel: AnalyticKernelSpec,
}

#[derive(Clone, Debug)]
pub struct WidthSweep {
    pub thetas: Vec<f64>,
    pub analytic: Vec<f64>,
    /// Empirical slice rows, one per `(m, seed, theta)`.
    pub rows: Vec<SliceRow>,
    /// `(m, seed, max_theta |K_0 - K_NT|)`.
    pub sup_devs: Vec<(usize, u64, f64)>,
}

impl WidthSweep {
    pub fn mean_sup_dev(&self, width: usize) -> Option<f64> {
        let devs: Vec<f64> = self
            .sup_devs
            .iter()
            .filter(|(m, _, _)| *m == width)
            .map(|&(_, _, d)| d)
            .collect();
        (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64)
    }

    pub fn analytic_rows(&self) -> Vec<SliceRow> {
        self.thetas
            .iter()
            .zip(&self.analytic)
            .map(|(&theta, &value)| SliceRow {
                m: 0,
                seed: 0,
                theta,
                value,
                source: SliceSourceKind::Analytic,
            })
            .collect()
    }
}

pub fn run_width_sweep(p: &WidthSweepParams) -> Result<WidthSweep> {
    if p.widths.is_empty() || p.seeds == 0 {
        return Err(ntk_core::Error::Contract("width sweep needs at least one width and one seed".into()).into());
    }
    let thetas = slice_grid(p.grid_points)?;
    let analytic = kernel_slice(SliceSource::Analytic(p.kernel), &SLICE_BASE, &thetas)?;
    let mut rows = Vec::with_capacity(p.widths.len() * p.seeds * thetas.len());
    let mut sup_devs = Vec::new();
    for &width in &p.widths {
        let arch = ArchDescriptor { width, ..p.arch };
        for s in 0..p.seeds as u64 {
            let seed = p.first_seed + s;
            let params = init_network_seeded(arch, seed)?;
            let values = kernel_slice(SliceSource::Empirical(&params), &SLICE_BASE, &thetas)?;
            let sup = values
                .iter()
                .zip(&analytic)
                .fold(0.0f64, |m, (e, a)| m.max((e - a).abs()));
            sup_devs.push((width, seed, sup));
            rows.extend(thetas.iter().zip(values).map(|(&theta, value)| SliceRow {
                m: width,
                seed,
                theta,
                value,
                source: SliceSourceKind::Empirical,
            }));
        }
    }
    Ok(WidthSweep {
        thetas,
        analytic,
        rows,
        sup_devs,
    })
}

/// All pairs `i <= j` of `n` samples.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn train_with_trace_file(
    config: &TrainingConfig,
    data: &ntk_core::dynamics::SampleSet,
    out: Option<&Path>,
) -> std::result::Result<TrainingTrace, (ExpError, Option<TrainingTrace>)> {
    let mut writer = match out {
        Some(dir) => Some(TraceWriter::create(&dir.join("trace.csv"), &config.ntk_watch).map_err(|e| (e, None))?),
        None => None,
    };
    let observe = |r: &TraceRecord| -> Result<()> {
        match writer.as_mut() {
            Some(w) => w.write(r),
            None => Ok(()),
        }
    };
    match train_observed(config, data, observe) {
        Ok(outcome) => Ok(outcome.trace),
        Err(ExpError::Core(ntk_core::Error::Diverged { epoch, loss, trace })) => {
            let partial = (*trace).clone();
            Err((ExpError::Core(ntk_core::Error::Diverged { epoch, loss, trace }), Some(partial)))
        }
        Err(e) => Err((e, None)),
    }
}

#[derive(Clone, Debug)]
pub struct CircleRun {
    pub config: TrainingConfig,
    /// Analytic kernel the deviation gap is measured against.
    pub kernel: AnalyticKernelSpec,
}

#[derive(Clone, Debug)]
pub struct CircleOutcome {
    pub trace: TrainingTrace,
    pub certificate: SpdCertificate,
    /// Cross-entropy runs: gap against the certified analytic Gram with
    /// threshold `lambda_0 / (2 n^2)`. Squared-loss runs: gap against the
    /// initial empirical kernel at [`LAZY_TOLERANCE`].
    pub gap: GapReport,
}

fn circle_gap(trace: &TrainingTrace, loss: LossKind, cert: &SpdCertificate) -> Result<GapReport> {
    Ok(match loss {
        LossKind::CrossEntropy => divergence_gap(trace, cert)?,
        LossKind::Mse => gap_from_initial(trace, LAZY_TOLERANCE)?,
    })
}

/// Train on the circle problem, writing `trace.csv`, `gap.csv` and
/// `certificate.csv` under `out` when given. A diverged run still writes
/// the partial trace and its gap before the error is returned.
pub fn run_circle(run: &CircleRun, out: Option<&Path>) -> Result<CircleOutcome> {
    let data = make_circle_dataset();
    let mut config = run.config.clone();
    if config.ntk_watch.is_empty() {
        config.ntk_watch = upper_pairs(data.len());
    }
    let certificate = certify_spd(&run.kernel, data.x(), None)?;
    if let Some(dir) = out {
        write_certificate(&dir.join("certificate.csv"), &kernel_name(&run.kernel), &certificate)?;
    }
    match train_with_trace_file(&config, &data, out) {
        Ok(trace) => {
            let gap = circle_gap(&trace, config.loss, &certificate)?;
            if let Some(dir) = out {
                write_gap(&dir.join("gap.csv"), &gap)?;
            }
            Ok(CircleOutcome {
                trace,
                certificate,
                gap,
            })
        }
        Err((err, partial)) => {
            if let (Some(dir), Some(trace)) = (out, partial) {
                if let Ok(gap) = circle_gap(&trace, config.loss, &certificate) {
                    write_gap(&dir.join("gap.csv"), &gap)?;
                }
            }
            Err(err)
        }
    }
}

/// Short identifier of an analytic kernel, e.g. `fcntk-L3-width-limit`.
pub fn kernel_name(spec: &AnalyticKernelSpec) -> String {
    use ntk_core::kernels::{Convention, KernelFamily};
    let family = match spec.family {
        KernelFamily::FullyConnected { depth } => format!("fcntk-L{depth}"),
        KernelFamily::Residual { depth, scale } => format!("resntk-L{depth}-a{scale}"),
    };
    let convention = match spec.convention {
        Convention::Published => "published",
        Convention::WidthLimit => "width-limit",
    };
    format!("{family}-{convention}")
}

#[derive(Clone, Debug)]
pub struct MnistRun {
    /// Training configuration; the watch list is chosen by the recipe.
    pub config: TrainingConfig,
    pub n: usize,
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Number of diagonal kernel entries to watch.
    pub watch_count: usize,
    /// Records before this epoch are discarded from the growth statistic.
    pub discard_before: usize,
}

#[derive(Clone, Debug)]
pub struct MnistOutcome {
    pub subset: MnistSubset,
    /// Samples whose diagonal kernel entries are watched.
    pub watched: Vec<usize>,
    pub trace: TrainingTrace,
    pub baseline_epoch: usize,
    /// Final over baseline value of each watched diagonal entry.
    pub growth: Vec<f64>,
}

/// Indices of the `count` largest diagonal entries, largest first.
pub fn largest_diagonal(k: &Matrix, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..k.rows()).collect();
    idx.sort_by(|&a, &b| k[(b, b)].total_cmp(&k[(a, a)]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Final over baseline ratio of every watched entry, where the baseline is
/// the first record at or after `discard_before`.
pub fn watched_growth(trace: &TrainingTrace, discard_before: usize) -> Result<(usize, Vec<f64>)> {
    let baseline = trace
        .records
        .iter()
        .find(|r| r.epoch >= discard_before)
        .ok_or_else(|| ntk_core::Error::Contract(format!("no record at or after epoch {discard_before}")))?;
    let last = trace.last().expect("baseline exists");
    let growth = baseline
        .watched
        .iter()
        .zip(&last.watched)
        .map(|(b, l)| l / b)
        .collect();
    Ok((baseline.epoch, growth))
}

pub fn run_mnist_parity(run: &MnistRun, out: Option<&Path>) -> Result<MnistOutcome> {
    let subset = load_mnist(&run.images, &run.labels, run.n, run.config.seed)?;
    let data = subset.sample_set()?;
    let initial = init_network_seeded(run.config.arch, run.config.seed)?;
    let watched = largest_diagonal(&empirical_ntk(&initial, data.x())?.matrix, run.watch_count);
    let mut config = run.config.clone();
    config.ntk_watch = watched.iter().map(|&i| (i, i)).collect();
    let trace = train_with_trace_file(&config, &data, out).map_err(|(e, _)| e)?;
    let (baseline_epoch, growth) = watched_growth(&trace, run.discard_before)?;
    Ok(MnistOutcome {
        subset,
        watched,
        trace,
        baseline_epoch,
        growth,
    })
}
