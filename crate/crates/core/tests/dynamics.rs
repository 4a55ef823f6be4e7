use ntk_core::dynamics::{
    gradient_step_in_place, lyapunov, lyapunov_rate, residual_dynamics_rhs, residuals, train,
    LossKind, SampleSet, TrainingConfig,
};
use ntk_core::linalg::{norm, Matrix};
use ntk_core::network::{empirical_ntk, init_network_seeded, ArchDescriptor};

fn circle() -> SampleSet {
    let rows: Vec<[f64; 2]> = (1..=6)
        .map(|i| {
            let t = i as f64 * std::f64::consts::PI / 3.0;
            [t.cos(), t.sin()]
        })
        .collect();
    SampleSet::new(Matrix::from_rows(&rows).unwrap(), vec![0, 1, 0, 1, 0, 1]).unwrap()
}

#[test]
fn small_steps_follow_residual_dynamics() {
    let data = circle();
    let lr = 1e-3;
    let mut params = init_network_seeded(ArchDescriptor::fcn(2, 200, 3), 21).unwrap();
    for step in 0..30 {
        let u = residuals(&params, &data).unwrap();
        let k = empirical_ntk(&params, data.x()).unwrap().matrix;
        let rhs = residual_dynamics_rhs(&u, &k, data.labels()).unwrap();
        let rate = lyapunov_rate(&u, &k, data.labels()).unwrap();
        let v0 = lyapunov(&u).value;

        gradient_step_in_place(&mut params, &data, LossKind::CrossEntropy, lr).unwrap();
        let u1 = residuals(&params, &data).unwrap();
        let fd: Vec<f64> = u1.iter().zip(&u).map(|(a, b)| (a - b) / lr).collect();
        let diff: Vec<f64> = fd.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 0.05 * norm(&rhs), "step {step}: du/dt {fd:?} vs {rhs:?}");

        let dv = (lyapunov(&u1).value - v0) / lr;
        assert!(rate < 0.0);
        assert!((dv - rate).abs() <= 0.05 * rate.abs(), "step {step}: dV/dt {dv} vs {rate}");
    }
}

#[test]
fn training_is_deterministic_and_bounded() {
    let config = TrainingConfig {
        arch: ArchDescriptor::resnet(2, 32, 2, 1.0),
        loss: LossKind::CrossEntropy,
        learning_rate: 0.05,
        epochs: 60,
        record_every: 7,
        seed: 3,
        ntk_watch: vec![(0, 0), (2, 5)],
    };
    let a = train(&config, &circle()).unwrap();
    let b = train(&config, &circle()).unwrap();
    assert_eq!(a, b);
    for r in &a.records {
        assert!(r.residuals.iter().all(|u| (0.0..=1.0).contains(u)));
        assert!(r.lyapunov >= 0.0);
        assert_eq!(r.watched.len(), 2);
    }
    assert!(a.last().unwrap().loss < a.records[0].loss);
}
