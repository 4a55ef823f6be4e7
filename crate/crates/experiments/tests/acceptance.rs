//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::path::PathBuf;

use ntk_core::dynamics::{
    gradient_step_in_place, lyapunov, lyapunov_rate, residual_dynamics_rhs, residuals, LossKind, TrainingConfig,
};
use ntk_core::kernels::{kappa0, kappa1, kappa_maclaurin_terms, resntk, AnalyticKernelSpec, Kappa};
use ntk_core::linalg::{norm, Matrix};
use ntk_core::network::{
    empirical_ntk, flat_gradient_gram, grad_check, init_network, init_network_seeded, min_abs_preactivation,
    ArchDescriptor, NetworkParams,
};
use ntk_core::rng::RngStream;
use ntk_core::certify::certify_spd;
use ntk_experiments::datasets::{make_circle_dataset, mnist_paths};
use ntk_experiments::recipes::{run_circle, run_mnist_parity, run_width_sweep, CircleRun, MnistRun, WidthSweepParams};

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id}: {verdict} {detail}\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id}: {detail}");
}

const KINK_MARGIN: f64 = 1e-3;

fn away_from_kinks(arch: ArchDescriptor, rng: &mut RngStream) -> (NetworkParams, Vec<f64>) {
    loop {
        let params = init_network(arch, rng).unwrap();
        let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.standard_normal()).collect();
        let row = Matrix::from_vec(1, x.len(), x.clone()).unwrap();
        if min_abs_preactivation(&params, &row).unwrap() >= KINK_MARGIN {
            return (params, x);
        }
    }
}

#[test]
fn c1_gradient_correctness() {
    let mut rng = RngStream::new(1, 100);
    let mut worst: f64 = 0.0;
    for arch in [ArchDescriptor::fcn(3, 16, 2), ArchDescriptor::resnet(3, 16, 2, 1.0)] {
        for _ in 0..20 {
            let (params, x) = away_from_kinks(arch, &mut rng);
            worst = worst.max(grad_check(&params, &x, 1e-5).unwrap());
        }
    }
    report("1", worst <= 1e-5, &format!("max relative error {worst:.3e} (bound 1e-5)"));
}

#[test]
fn c2_factorized_kernel_equivalence() {
    let mut rng = RngStream::new(2, 100);
    let mut worst: f64 = 0.0;
    for resnet in [false, true] {
        for depth in 1..=3 {
            for width in [4, 8, 16] {
                let arch = if resnet {
                    ArchDescriptor::resnet(3, width, depth, 1.0)
                } else {
                    ArchDescriptor::fcn(3, width, depth)
                };
                let params = init_network(arch, &mut rng).unwrap();
                let x = Matrix::from_fn(4, 3, |_, _| rng.standard_normal());
                let k = empirical_ntk(&params, &x).unwrap().matrix;
                let flat = flat_gradient_gram(&params, &x).unwrap();
                let scale = flat.max_abs();
                for i in 0..4 {
                    for j in 0..4 {
                        worst = worst.max((k[(i, j)] - flat[(i, j)]).abs() / scale);
                    }
                }
            }
        }
    }
    report("2", worst <= 1e-10, &format!("max relative deviation {worst:.3e} over 18 configurations (bound 1e-10)"));
}

/// Monte-Carlo mean and standard error of `g(u, v)` for a centred Gaussian
/// pair with variances `s, t` and correlation `rho`.
fn gaussian_pair_mean(rng: &mut RngStream, s: f64, t: f64, rho: f64, g: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let draws = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    let orth = (1.0 - rho * rho).max(0.0).sqrt();
    for _ in 0..draws {
        let (z1, z2) = (rng.standard_normal(), rng.standard_normal());
        let v = g(s.sqrt() * z1, t.sqrt() * (rho * z1 + orth * z2));
        sum += v;
        sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    (mean, ((sq / n - mean * mean) / n).sqrt())
}

#[test]
fn c3_analytic_kernel_correctness() {
    let mut layers = RngStream::new(3, 100);
    let mut draws = RngStream::new(3, 101);
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let s = 0.2 + 5.0 * layers.uniform();
        let t = 0.2 + 5.0 * layers.uniform();
        let rho = 2.0 * layers.uniform() - 1.0;
        let (m1, se1) = gaussian_pair_mean(&mut draws, s, t, rho, |u, v| 2.0 * u.max(0.0) * v.max(0.0));
        worst_z = worst_z.max((m1 - (s * t).sqrt() * kappa1(rho).unwrap()).abs() / se1);
        let (m0, se0) = gaussian_pair_mean(&mut draws, s, t, rho, |u, v| {
            if u > 0.0 && v > 0.0 {
                2.0
            } else {
                0.0
            }
        });
        worst_z = worst_z.max((m0 - kappa0(rho).unwrap()).abs() / se0);
    }
    let origin = resntk(&[0.0], &[0.0], 1, 1.0).unwrap();
    let k0 = kappa0(0.5).unwrap();
    let pass = worst_z <= 3.0 && (origin - 8.0).abs() <= 1e-12 && (k0 - 2.0 / 3.0).abs() <= 1e-12;
    report(
        "3",
        pass,
        &format!("worst Monte-Carlo deviation {worst_z:.2} standard errors (bound 3); resntk(0,0,1,1) = {origin}; kappa0(0.5) = {k0:.15}"),
    );
}

#[test]
fn c4_spd_certification() {
    let mut rng = RngStream::new(4, 100);
    let x = Matrix::from_fn(50, 2, |_, _| 2.0 * rng.uniform() - 1.0);
    let mut details = Vec::new();
    let mut pass = true;
    for spec in [AnalyticKernelSpec::fcntk(3), AnalyticKernelSpec::resntk(2, 1.0)] {
        for spec in [spec, spec.width_limit()] {
            let cert = certify_spd(&spec, &x, None).unwrap();
            pass &= cert.lambda_min > 0.0 && cert.is_certified();
            details.push(format!("lambda_min {:.3e}", cert.lambda_min));
        }
    }
    for which in [Kappa::Zero, Kappa::One] {
        let terms = kappa_maclaurin_terms(which, 50).unwrap();
        pass &= terms.len() == 50 && terms.iter().all(|t| t.coefficient > 0.0);
    }
    report("4", pass, &format!("{}; 50 Maclaurin coefficients of each kappa checked", details.join(", ")));
}

#[test]
fn c5_initial_kernel_convergence() {
    let arch = ArchDescriptor::fcn(2, 1, 3);
    let sweep = run_width_sweep(&WidthSweepParams {
        widths: vec![200, 1000, 2000],
        seeds: 10,
        first_seed: 0,
        grid_points: 64,
        arch,
        kernel: AnalyticKernelSpec::fcntk(3).width_limit(),
    })
    .unwrap();
    let devs: Vec<f64> = [200, 1000, 2000].iter().map(|&m| sweep.mean_sup_dev(m).unwrap()).collect();
    let ratio = devs[0] / devs[2];
    let target = 10f64.sqrt();
    let pass = devs[0] > devs[1] && devs[1] > devs[2] && (target / 2.0..=target * 2.0).contains(&ratio);
    report(
        "5",
        pass,
        &format!("mean sup deviations {devs:.4?} for m = 200, 1000, 2000; ratio {ratio:.3} (target sqrt(10) within a factor 2)"),
    );
}

fn circle_run(loss: LossKind) -> CircleRun {
    CircleRun {
        config: TrainingConfig {
            arch: ArchDescriptor::fcn(2, 500, 3),
            loss,
            learning_rate: 0.1,
            epochs: 10_000,
            record_every: 50,
            seed: 0,
            ntk_watch: vec![],
        },
        kernel: AnalyticKernelSpec::fcntk(3).width_limit(),
    }
}

#[test]
fn c6_divergence_run() {
    let outcome = run_circle(&circle_run(LossKind::CrossEntropy), None).unwrap();
    let records = &outcome.trace.records;
    let v: Vec<f64> = records.iter().map(|r| r.lyapunov).collect();
    let v_final = *v.last().unwrap();
    let a = v.windows(2).all(|w| w[1] <= w[0]) && v_final < 0.01 * v[0];

    let margins = outcome.trace.margins(make_circle_dataset().labels());
    let final_margin = *margins.last().unwrap();
    let b = final_margin > 10.0 && margins[margins.len() / 2..].windows(2).all(|w| w[1] >= w[0]);

    let c = outcome.gap.exceeded;

    let dist_100 = outcome.trace.at_epoch(100).unwrap().theta_inf_dist;
    let dist_final = records.last().unwrap().theta_inf_dist;
    let growth = dist_final / dist_100;
    let d = growth >= 10.0;

    let mark = |ok: bool| if ok { "pass" } else { "fail" };
    report(
        "6",
        a && b && c && d,
        &format!(
            "(a) {}: V0 {:.4e}, V_final {:.4e}; (b) {}: final min margin {:.3} (needs > 10); \
             (c) {}: max gap {:.4e} vs threshold {:.4e}; (d) {}: theta distance growth {:.3}x from epoch 100 (needs >= 10x)",
            mark(a),
            v[0],
            v_final,
            mark(b),
            final_margin,
            mark(c),
            outcome.gap.max_sup_dev(),
            outcome.gap.threshold,
            mark(d),
            growth
        ),
    );
}

#[test]
fn c7_lazy_regime_control() {
    let outcome = run_circle(&circle_run(LossKind::Mse), None).unwrap();
    let max_dev = outcome.gap.max_sup_dev();
    let pass = max_dev <= outcome.gap.threshold && !outcome.gap.exceeded;
    report(
        "7",
        pass,
        &format!(
            "max watched |K_t - K_0| {:.4e} vs 5% of max |K_0| = {:.4e}; exceeded = {}",
            max_dev, outcome.gap.threshold, outcome.gap.exceeded
        ),
    );
}

#[test]
fn c8_dynamics_identities() {
    let data = make_circle_dataset();
    let lr = 1e-3;
    let mut params = init_network_seeded(ArchDescriptor::fcn(2, 500, 3), 0).unwrap();
    let (mut worst_u, mut worst_v): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let u = residuals(&params, &data).unwrap();
        let k = empirical_ntk(&params, data.x()).unwrap().matrix;
        let rhs = residual_dynamics_rhs(&u, &k, data.labels()).unwrap();
        let rate = lyapunov_rate(&u, &k, data.labels()).unwrap();
        let v0 = lyapunov(&u).value;

        gradient_step_in_place(&mut params, &data, LossKind::CrossEntropy, lr).unwrap();
        let u1 = residuals(&params, &data).unwrap();
        let diff: Vec<f64> = u1.iter().zip(&u).zip(&rhs).map(|((a, b), r)| (a - b) / lr - r).collect();
        worst_u = worst_u.max(norm(&diff) / norm(&rhs));
        let dv = (lyapunov(&u1).value - v0) / lr;
        worst_v = worst_v.max((dv - rate).abs() / rate.abs());
    }
    report(
        "8",
        worst_u <= 0.05 && worst_v <= 0.05,
        &format!("worst relative error du/dt {worst_u:.3e}, dV/dt {worst_v:.3e} over 100 steps (bound 5%)"),
    );
}

#[test]
fn c9_mnist_parity() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let (images, labels) = mnist_paths(&dir);
    let run = MnistRun {
        config: TrainingConfig {
            arch: ArchDescriptor::fcn(784, 500, 4),
            loss: LossKind::CrossEntropy,
            learning_rate: 0.5,
            epochs: 5000,
            record_every: 10,
            seed: 0,
            ntk_watch: vec![],
        },
        n: 200,
        images,
        labels,
        watch_count: 3,
        discard_before: 10,
    };
    match run_mnist_parity(&run, None) {
        Ok(outcome) => {
            let pass = outcome.growth.len() == 3 && outcome.growth.iter().all(|g| *g >= 2.0);
            report(
                "9",
                pass,
                &format!(
                    "watched diagonal entries {:?} grew {:.3?}x from epoch {} (needs >= 2x each)",
                    outcome.watched, outcome.growth, outcome.baseline_epoch
                ),
            );
        }
        Err(e) => report("9", false, &format!("run failed: {e} (fetch data with scripts/fetch_mnist.py)")),
    }
}
