//! `ntk-exp` command line.
//!
//! Every subcommand reads an optional `--config` file of `key = value`
//! lines and then applies the flags given on the command line, which take
//! precedence. Keys and flags share their spelling.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ntk_core::certify::certify_spd;
use ntk_core::dynamics::{LossKind, TrainingConfig};
use ntk_core::kernels::{AnalyticKernelSpec, Convention, KernelFamily};
use ntk_core::network::{init_network_seeded, ArchDescriptor, Family};
use ntk_core::rng::{streams, RngStream};
use ntk_core::Matrix;

use crate::config::Settings;
use crate::datasets::{make_circle_dataset, mnist_paths};
use crate::error::{ExpError, Result};
use crate::output::{write_certificate, write_slice, write_summary, SliceRow, SliceSourceKind};
use crate::recipes::{
    kernel_name, kernel_slice, run_circle, run_mnist_parity, run_width_sweep, slice_grid, CircleRun, MnistRun,
    SliceSource, WidthSweepParams, SLICE_BASE,
};

#[derive(Debug, Parser)]
#[command(name = "ntk-exp", version, about = "Neural tangent kernel experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel values K((1,0), (cos t, sin t)) over a grid of angles.
    KernelSlice(Flags),
    /// Train on the six-point circle problem with cross-entropy.
    TrainCircle(Flags),
    /// Initial empirical kernel slices across widths and seeds.
    WidthSweep(Flags),
    /// Binary parity classification on an MNIST subset.
    MnistParity(Flags),
    /// Certify positive definiteness of an analytic kernel Gram.
    Certify(Flags),
    /// The circle problem with squared loss.
    MseControl(Flags),
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// `fcn` or `resnet`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub width: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    /// Residual branch scale.
    #[arg(long = "scale-a")]
    pub scale_a: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// `xent` or `mse`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long = "record-every")]
    pub record_every: Option<String>,
    /// Comma-separated widths.
    #[arg(long)]
    pub widths: Option<String>,
    /// Number of seeds per width.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Number of training samples.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long = "mnist-dir")]
    pub mnist_dir: Option<String>,
    #[arg(long = "grid-size")]
    pub grid_size: Option<String>,
    /// `width-limit` or `published`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// `empirical`, `analytic` or `both`.
    #[arg(long)]
    pub source: Option<String>,
    /// `circle` or `random:<n>`.
    #[arg(long)]
    pub points: Option<String>,
}

impl Flags {
    fn given(&self) -> [(&'static str, &Option<String>); 18] {
        [
            ("out", &self.out),
            ("arch", &self.arch),
            ("width", &self.width),
            ("depth", &self.depth),
            ("scale-a", &self.scale_a),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("loss", &self.loss),
            ("seed", &self.seed),
            ("record-every", &self.record_every),
            ("widths", &self.widths),
            ("seeds", &self.seeds),
            ("n", &self.n),
            ("mnist-dir", &self.mnist_dir),
            ("grid-size", &self.grid_size),
            ("kernel", &self.kernel),
            ("source", &self.source),
            ("points", &self.points),
        ]
    }

    /// Config file values overlaid with the flags given on the command line.
    pub fn settings(&self) -> Result<Settings> {
        let mut settings = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        for (key, value) in self.given() {
            if let Some(v) = value {
                settings.set(key, v.clone());
            }
        }
        Ok(settings)
    }
}

const TRAIN_KEYS: &[&str] = &[
    "out", "arch", "width", "depth", "scale-a", "lr", "epochs", "loss", "seed", "record-every", "kernel",
];

fn arch_from(s: &Settings, input_dim: usize, width: usize, depth: usize) -> Result<ArchDescriptor> {
    let width = s.get("width", width)?;
    let depth = s.get("depth", depth)?;
    let arch = match s.get("arch", "fcn".to_string())?.as_str() {
        "fcn" => ArchDescriptor::fcn(input_dim, width, depth),
        "resnet" => ArchDescriptor::resnet(input_dim, width, depth, s.get("scale-a", 1.0)?),
        other => return Err(ExpError::Config(format!("arch: expected fcn or resnet, got {other:?}"))),
    };
    arch.validate()?;
    Ok(arch)
}

fn kernel_for(s: &Settings, arch: &ArchDescriptor) -> Result<AnalyticKernelSpec> {
    let family = match arch.family {
        Family::Fcn => KernelFamily::FullyConnected { depth: arch.depth },
        Family::ResNet { scale } => KernelFamily::Residual {
            depth: arch.depth,
            scale,
        },
    };
    let convention = match s.get("kernel", "width-limit".to_string())?.as_str() {
        "width-limit" => Convention::WidthLimit,
        "published" => Convention::Published,
        other => {
            return Err(ExpError::Config(format!(
                "kernel: expected width-limit or published, got {other:?}"
            )))
        }
    };
    let spec = AnalyticKernelSpec { family, convention };
    spec.validate()?;
    Ok(spec)
}

fn loss_from(s: &Settings, default: LossKind) -> Result<LossKind> {
    match s.raw("loss") {
        None => Ok(default),
        Some("xent") => Ok(LossKind::CrossEntropy),
        Some("mse") => Ok(LossKind::Mse),
        Some(other) => Err(ExpError::Config(format!("loss: expected xent or mse, got {other:?}"))),
    }
}

fn out_dir(s: &Settings, recipe: &str) -> Result<PathBuf> {
    Ok(PathBuf::from(s.get("out", format!("results/{recipe}"))?))
}

fn training_config(s: &Settings, arch: ArchDescriptor, defaults: (f64, usize, usize), loss: LossKind) -> Result<TrainingConfig> {
    let (lr, epochs, record_every) = defaults;
    Ok(TrainingConfig {
        arch,
        loss: loss_from(s, loss)?,
        learning_rate: s.get("lr", lr)?,
        epochs: s.get("epochs", epochs)?,
        record_every: s.get("record-every", record_every)?,
        seed: s.get("seed", 0)?,
        ntk_watch: Vec::new(),
    })
}

/// Recipe summary as printed and written to `summary.csv`.
pub type Summary = Vec<(String, String)>;

fn entry(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn finish(out: &Path, summary: Summary) -> Result<Summary> {
    write_summary(&out.join("summary.csv"), &summary)?;
    for (k, v) in &summary {
        println!("{k}: {v}");
    }
    Ok(summary)
}

fn kernel_slice_cmd(s: &Settings) -> Result<Summary> {
    s.check_keys(&["out", "arch", "width", "depth", "scale-a", "seed", "grid-size", "kernel", "source"])?;
    let arch = arch_from(s, 2, 2000, 3)?;
    let spec = kernel_for(s, &arch)?;
    let seed: u64 = s.get("seed", 0)?;
    let source = s.get("source", "both".to_string())?;
    let (empirical, analytic) = match source.as_str() {
        "both" => (true, true),
        "empirical" => (true, false),
        "analytic" => (false, true),
        other => return Err(ExpError::Config(format!("source: expected empirical, analytic or both, got {other:?}"))),
    };
    let thetas = slice_grid(s.get("grid-size", 64)?)?;
    let out = out_dir(s, "kernel-slice")?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    if empirical {
        let params = init_network_seeded(arch, seed)?;
        let values = kernel_slice(SliceSource::Empirical(&params), &SLICE_BASE, &thetas)?;
        rows.extend(thetas.iter().zip(&values).map(|(&theta, &value)| SliceRow {
            m: arch.width,
            seed,
            theta,
            value,
            source: SliceSourceKind::Empirical,
        }));
        curves.push(values);
    }
    if analytic {
        let values = kernel_slice(SliceSource::Analytic(spec), &SLICE_BASE, &thetas)?;
        rows.extend(thetas.iter().zip(&values).map(|(&theta, &value)| SliceRow {
            m: 0,
            seed: 0,
            theta,
            value,
            source: SliceSourceKind::Analytic,
        }));
        curves.push(values);
    }
    write_slice(&out.join("slice.csv"), &rows)?;
    let mut summary = vec![entry("kernel", kernel_name(&spec)), entry("points", thetas.len())];
    if let [e, a] = curves.as_slice() {
        let sup = e.iter().zip(a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        summary.push(entry("sup_dev", sup));
    }
    finish(&out, summary)
}

fn circle_cmd(s: &Settings, loss: LossKind, recipe: &str) -> Result<Summary> {
    s.check_keys(TRAIN_KEYS)?;
    let arch = arch_from(s, 2, 500, 3)?;
    let run = CircleRun {
        config: training_config(s, arch, (0.1, 10_000, 50), loss)?,
        kernel: kernel_for(s, &arch)?,
    };
    let out = out_dir(s, recipe)?;
    let outcome = run_circle(&run, Some(&out))?;
    let last = outcome.trace.last().expect("at least one record");
    let data = make_circle_dataset();
    let final_margin = outcome.trace.margins(data.labels()).last().copied().unwrap_or(f64::NAN);
    let summary = vec![
        entry("kernel", kernel_name(&run.kernel)),
        entry("lambda_0", outcome.certificate.lambda_min),
        entry("verdict", format!("{:?}", outcome.certificate.verdict).to_lowercase()),
        entry("final_epoch", last.epoch),
        entry("final_loss", last.loss),
        entry("final_min_margin", final_margin),
        entry("final_lambda_min", last.lambda_min),
        entry("final_theta_inf_dist", last.theta_inf_dist),
        entry("gap_threshold", outcome.gap.threshold),
        entry("gap_max_sup_dev", outcome.gap.max_sup_dev()),
        entry("gap_exceeded", outcome.gap.exceeded),
        entry(
            "first_exceed_epoch",
            outcome.gap.first_exceed_epoch().map_or(String::new(), |e| e.to_string()),
        ),
    ];
    finish(&out, summary)
}

fn width_sweep_cmd(s: &Settings) -> Result<Summary> {
    s.check_keys(&["out", "arch", "widths", "seeds", "depth", "scale-a", "seed", "grid-size", "kernel"])?;
    let arch = arch_from(s, 2, 1, 3)?;
    let params = WidthSweepParams {
        widths: s.get_list("widths", &[200, 1000, 2000])?,
        seeds: s.get("seeds", 10)?,
        first_seed: s.get("seed", 0)?,
        grid_points: s.get("grid-size", 64)?,
        arch,
        kernel: kernel_for(s, &arch)?,
    };
    let sweep = run_width_sweep(&params)?;
    let out = out_dir(s, "width-sweep")?;
    write_slice(&out.join("width_sweep.csv"), &sweep.rows)?;
    write_slice(&out.join("width_sweep_analytic.csv"), &sweep.analytic_rows())?;
    let mut summary = vec![entry("kernel", kernel_name(&params.kernel))];
    for &m in &params.widths {
        if let Some(d) = sweep.mean_sup_dev(m) {
            summary.push(entry(&format!("mean_sup_dev_m{m}"), d));
        }
    }
    finish(&out, summary)
}

fn mnist_cmd(s: &Settings) -> Result<Summary> {
    let mut keys = TRAIN_KEYS.to_vec();
    keys.retain(|k| *k != "kernel");
    keys.extend(["n", "mnist-dir"]);
    s.check_keys(&keys)?;
    let arch = arch_from(s, crate::datasets::IMAGE_PIXELS, 500, 4)?;
    let (images, labels) = mnist_paths(Path::new(&s.get("mnist-dir", "data/mnist".to_string())?));
    let run = MnistRun {
        config: training_config(s, arch, (0.5, 5000, 10), LossKind::CrossEntropy)?,
        n: s.get("n", 200)?,
        images,
        labels,
        watch_count: 3,
        discard_before: 10,
    };
    let out = out_dir(s, "mnist-parity")?;
    let outcome = run_mnist_parity(&run, Some(&out))?;
    let last = outcome.trace.last().expect("at least one record");
    let mut summary = vec![
        entry("images_sha256", &outcome.subset.images_sha256),
        entry("labels_sha256", &outcome.subset.labels_sha256),
        entry("final_epoch", last.epoch),
        entry("final_loss", last.loss),
        entry("baseline_epoch", outcome.baseline_epoch),
    ];
    for (i, g) in outcome.watched.iter().zip(&outcome.growth) {
        summary.push(entry(&format!("growth_k{i}{i}"), g));
    }
    finish(&out, summary)
}

/// Uniform points in `[-1, 1]^2` from the dataset stream.
pub fn random_points(n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = RngStream::new(seed, streams::DATASET);
    let data: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    Ok(Matrix::from_vec(n, 2, data)?)
}

fn certify_cmd(s: &Settings) -> Result<Summary> {
    s.check_keys(&["out", "arch", "depth", "scale-a", "kernel", "points", "seed"])?;
    let arch = arch_from(s, 2, 1, 3)?;
    let spec = kernel_for(s, &arch)?;
    let points = s.get("points", "circle".to_string())?;
    let x = match points.as_str() {
        "circle" => make_circle_dataset().x().clone(),
        p => match p.strip_prefix("random:").and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if n > 0 => random_points(n, s.get("seed", 0)?)?,
            _ => return Err(ExpError::Config(format!("points: expected circle or random:<n>, got {p:?}"))),
        },
    };
    let cert = certify_spd(&spec, &x, None)?;
    let out = out_dir(s, "certify")?;
    let name = kernel_name(&spec);
    write_certificate(&out.join("certificate.csv"), &name, &cert)?;
    let summary = vec![
        entry("kernel", name),
        entry("n", cert.n),
        entry("fingerprint", &cert.fingerprint),
        entry("lambda_min", cert.lambda_min),
        entry("verdict", format!("{:?}", cert.verdict).to_lowercase()),
    ];
    finish(&out, summary)
}

pub fn run(cli: &Cli) -> Result<Summary> {
    match &cli.command {
        Command::KernelSlice(f) => kernel_slice_cmd(&f.settings()?),
        Command::TrainCircle(f) => circle_cmd(&f.settings()?, LossKind::CrossEntropy, "train-circle"),
        Command::WidthSweep(f) => width_sweep_cmd(&f.settings()?),
        Command::MnistParity(f) => mnist_cmd(&f.settings()?),
        Command::Certify(f) => certify_cmd(&f.settings()?),
        Command::MseControl(f) => circle_cmd(&f.settings()?, LossKind::Mse, "mse-control"),
    }
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
