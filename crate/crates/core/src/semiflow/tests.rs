use super::*;
use crate::noise::{sample_path_modes, CovarianceSpec};
use crate::stationary::{solve_fixed_point, FixedPointOptions, ShiftWindow};

fn linear(mu: Vec<f64>, h: f64) -> SemiflowModel {
    let op = OperatorSpec::from_eigenvalues(mu).unwrap();
    SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::None, Stepper::new(h)).unwrap()
}

fn sigmoid_additive(h: f64) -> SemiflowModel {
    let op = OperatorSpec::from_eigenvalues(vec![-1.0, 1.0, 3.0]).unwrap();
    let f = SigmoidCoupling::new(0.3, 0.7, DVector::from_vec(vec![0.1, -0.2, 0.05])).into_spec();
    let cov = CovarianceSpec::cylindrical(vec![0.5, 0.4, 0.3]).unwrap();
    SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), Stepper::new(h)).unwrap()
}

fn gbm(mu: f64, sigma: f64, h: f64) -> SemiflowModel {
    let op = OperatorSpec::from_eigenvalues(vec![mu]).unwrap();
    let cov = CovarianceSpec::cylindrical(vec![sigma]).unwrap();
    SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::DiagonalMultiplicative(cov), Stepper::new(h))
        .unwrap()
}

fn burgers(n: usize, nu: f64, sigma: f64, h: f64) -> SemiflowModel {
    let op = OperatorSpec::dirichlet_interval(n, nu).unwrap();
    let cov = CovarianceSpec::cylindrical((1..=n).map(|k| sigma / k as f64).collect()).unwrap();
    let f = NonlinearitySpec::new(Nonlinearity::BurgersAdvection);
    SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), Stepper::new(h)).unwrap()
}

fn mv(model: &SemiflowModel, v: &[f64]) -> ModeVec {
    model.operator().vector(DVector::from_column_slice(v)).unwrap()
}

#[test]
fn phi_and_noise_coefficient_limits() {
    assert!((phi(0.0, 0.1) - 0.1).abs() < 1e-15);
    assert!((phi(2.0, 0.5) - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
    // c^2 h equals the variance of int_0^h e^{-mu s} dW.
    let (mu, h) = (3.0, 0.2);
    let c = additive_coefficient(mu, h);
    assert!((c * c * h - (1.0 - (-2.0 * mu * h).exp()) / (2.0 * mu)).abs() < 1e-15);
}

#[test]
fn linear_flow_matches_semigroup() {
    let model = linear(vec![-1.0, 0.5, 4.0], 0.01);
    let path = sample_path_modes(1, 0.0, 3.0, 0.01, 1).unwrap();
    let x = mv(&model, &[1.0, -2.0, 0.5]);
    let traj = model.evolve(&x, &path, 3.0).unwrap();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let exact = model.operator().semigroup_apply(*t, &x).unwrap();
        assert!((s - &exact.coords).norm() <= 1e-12 * exact.norm());
    }
    let (_, j) = model.tangent_eval(2.0, &x, &path).unwrap();
    for i in 0..3 {
        let mu = model.operator().eigenvalues()[i];
        assert!((j[(i, i)] - (-mu * 2.0).exp()).abs() < 1e-12 * (-mu * 2.0f64).exp());
    }
    assert_eq!(j[(0, 1)], 0.0);
}

#[test]
fn zero_duration_is_identity() {
    let model = sigmoid_additive(0.01);
    let path = sample_path_modes(3, 1.0, 1.0, 0.01, 3).unwrap();
    let x = mv(&model, &[0.3, 0.2, 0.1]);
    assert_eq!(model.cocycle_eval(0.0, &x, &path).unwrap(), x);
}

#[test]
fn cocycle_identity_is_exact_on_the_grid() {
    let model = sigmoid_additive(0.01);
    let path = sample_path_modes(3, 0.0, 4.0, 0.01, 7).unwrap();
    let x = mv(&model, &[0.3, -0.2, 1.1]);
    let (t1, t2) = (0.73, 1.41);
    let direct = model.cocycle_eval(t1 + t2, &x, &path).unwrap();
    let mid = model.cocycle_eval(t1, &x, &path).unwrap();
    let composed = model.cocycle_eval(t2, &mid, &path.shift(t1).unwrap()).unwrap();
    assert_eq!(direct, composed);

    let (_, j12) = model.tangent_eval(t1 + t2, &x, &path).unwrap();
    let (_, j1) = model.tangent_eval(t1, &x, &path).unwrap();
    let (_, j2) = model.tangent_eval(t2, &mid, &path.shift(t1).unwrap()).unwrap();
    assert!((&j12 - &j2 * &j1).norm() <= 1e-12 * j12.norm());
}

#[test]
fn restart_from_recorded_state_reproduces_the_tail() {
    let model = burgers(8, 0.5, 0.5, 1e-3);
    let path = sample_path_modes(8, 0.0, 0.5, 1e-3, 11).unwrap();
    let x = model.operator().basis_vector(1).scaled(2.0);
    let traj = model.evolve(&x, &path, 0.5).unwrap();
    let j = 200;
    let rest = model.operator().vector(traj.states[j].clone()).unwrap();
    let tail = model.evolve(&rest, &path.shift(traj.times[j]).unwrap(), 0.5 - traj.times[j]).unwrap();
    assert_eq!(&tail.states[..], &traj.states[j..]);
}

#[test]
fn jacobian_matches_centered_differences() {
    for model in [sigmoid_additive(0.01), burgers(6, 0.3, 0.3, 1e-3)] {
        let n = model.dim();
        let path = sample_path_modes(n, 0.0, 1.0, model.h(), 5).unwrap();
        let x = DVector::from_iterator(n, (0..n).map(|i| 0.8 / (i + 1) as f64));
        let v = DVector::from_iterator(n, (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 })).normalize();
        let (_, j) = model.flow_frame(1.0, &x, DMatrix::identity(n, n), &path).unwrap();
        let jv = &j * &v;
        let mut errors = Vec::new();
        for delta in [1e-3, 1e-4] {
            let plus = model.flow(1.0, &(&x + &v * delta), &path).unwrap();
            let minus = model.flow(1.0, &(&x - &v * delta), &path).unwrap();
            errors.push(((plus - minus) / (2.0 * delta) - &jv).norm());
        }
        // O(delta^2): a tenfold smaller step gives about 100 times smaller error.
        assert!(errors[1] < errors[0] / 30.0 || errors[1] < 1e-9, "{errors:?}");
    }
}

#[test]
fn gbm_strong_order_under_refinement() {
    let (mu, sigma, x0) = (1.0, 0.5, 1.0);
    let fine_h = 1.0 / 4096.0;
    let factors = [8usize, 16, 32, 64];
    let seeds = 100u64;
    let mut mean = [0.0; 4];
    for seed in 0..seeds {
        let fine = sample_path_modes(1, 0.0, 1.0, fine_h, seed).unwrap();
        let w1 = fine.value(1.0, 0).unwrap();
        let exact = x0 * ((-mu - 0.5 * sigma * sigma) + sigma * w1).exp();
        for (k, factor) in factors.iter().enumerate() {
            let p = fine.coarsen(*factor).unwrap();
            let model = gbm(mu, sigma, p.h());
            let u = model.flow(1.0, &DVector::from_element(1, x0), &p).unwrap();
            mean[k] += (u[0] - exact).abs() / seeds as f64;
        }
    }
    let log_h: Vec<f64> = factors.iter().map(|f| (*f as f64 * fine_h).log2()).collect();
    let log_e: Vec<f64> = mean.iter().map(|e| e.log2()).collect();
    let rate = crate::linalg::fit_line(&log_h, &log_e).unwrap().slope;
    assert!(rate >= 0.5, "observed rate {rate} from {mean:?}");
}

#[test]
fn additive_linear_model_converges_strongly() {
    // F = 0: the scheme samples the exact law but not the exact path; the
    // pathwise error against a fine reference shrinks with h.
    let op = OperatorSpec::from_eigenvalues(vec![1.0, 5.0]).unwrap();
    let cov = CovarianceSpec::cylindrical(vec![1.0, 1.0]).unwrap();
    let fine = sample_path_modes(2, 0.0, 1.0, 1.0 / 8192.0, 3).unwrap();
    let run = |factor: usize| {
        let p = fine.coarsen(factor).unwrap();
        let m = SemiflowModel::new(
            op.clone(),
            NonlinearitySpec::zero(),
            NoiseCoupling::Additive(cov.clone()),
            Stepper::new(p.h()),
        )
        .unwrap();
        m.flow(1.0, &DVector::zeros(2), &p).unwrap()
    };
    let reference = run(1);
    let factors = [16usize, 32, 64, 128];
    let log_h: Vec<f64> = factors.iter().map(|f| (*f as f64).log2()).collect();
    let log_e: Vec<f64> = factors.iter().map(|f| (run(*f) - &reference).norm().log2()).collect();
    let rate = crate::linalg::fit_line(&log_h, &log_e).unwrap().slope;
    assert!(rate >= 0.9, "observed rate {rate}");
}

#[test]
fn lipschitz_difference_obeys_gronwall_bound() {
    let model = sigmoid_additive(0.01);
    let path = sample_path_modes(3, 0.0, 3.0, 0.01, 13).unwrap();
    let (l, mu1) = (0.3, -1.0);
    let x1 = DVector::from_vec(vec![0.4, -0.1, 0.3]);
    let x2 = DVector::from_vec(vec![-0.2, 0.5, 0.0]);
    let d0 = (&x1 - &x2).norm();
    for t in [0.5, 1.0, 2.0, 3.0] {
        let d = (model.flow(t, &x1, &path).unwrap() - model.flow(t, &x2, &path).unwrap()).norm();
        assert!(d <= ((l - mu1) * t).exp() * d0 * (1.0 + 1e-12));
    }
}

#[test]
fn deterministic_burgers_energy_decays() {
    let op = OperatorSpec::dirichlet_interval(16, 0.2).unwrap();
    let model = SemiflowModel::new(
        op,
        NonlinearitySpec::new(Nonlinearity::BurgersAdvection),
        NoiseCoupling::None,
        Stepper::new(1e-3),
    )
    .unwrap();
    let path = sample_path_modes(1, 0.0, 2.0, 1e-3, 0).unwrap();
    let x = model.operator().basis_vector(1).scaled(3.0);
    let traj = model.evolve_recorded(&x, &path, 2.0, 10, false).unwrap();
    let energy: Vec<f64> = traj.states.iter().map(|s| 0.5 * s.norm_squared()).collect();
    assert!(energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(energy.last().unwrap() < &(energy[0] * 1e-2));
}

#[test]
fn dissipative_reaction_is_absorbed() {
    // d|u|^2/dt <= 2 (1 - mu_1) |u|^2 - 2 |u|^{2 + alpha}, so the ball of
    // radius (1 - mu_1)^{1/alpha} absorbs noiseless trajectories.
    let (nu, alpha) = (0.05, 2.0);
    let op = OperatorSpec::dirichlet_interval(8, nu).unwrap();
    let r_abs = (1.0 - nu * std::f64::consts::PI.powi(2)).powf(1.0 / alpha);
    let model = SemiflowModel::new(
        op,
        NonlinearitySpec::new(Nonlinearity::DissipativeReaction { alpha }),
        NoiseCoupling::None,
        Stepper::new(1e-3),
    )
    .unwrap();
    let path = sample_path_modes(1, 0.0, 20.0, 1e-3, 0).unwrap();
    let x = DVector::from_iterator(8, (0..8).map(|i| 3.0 / (i + 1) as f64));
    let end = model.flow(20.0, &x, &path).unwrap();
    assert!(end.norm() <= 1.1 * r_abs, "{} vs {r_abs}", end.norm());
}

#[test]
fn centered_cocycle_of_linear_model_is_the_semigroup() {
    let op = OperatorSpec::from_eigenvalues(vec![-1.0, 2.0]).unwrap();
    let cov = CovarianceSpec::cylindrical(vec![0.7, 0.4]).unwrap();
    let model =
        SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::Additive(cov), Stepper::new(0.01)).unwrap();
    let path = sample_path_modes(2, 60.0, 60.0, 0.01, 21).unwrap();
    let y = solve_fixed_point(&model, &path, ShiftWindow::new(3.0, 3.0), &FixedPointOptions::default()).unwrap();
    let z = mv(&model, &[0.3, -0.4]);
    for t in [0.5, 2.0] {
        let zt = model.centered_eval(&y, t, &z, &path).unwrap();
        let exact = model.operator().semigroup_apply(t, &z).unwrap();
        assert!((zt.coords - exact.coords).norm() < 1e-10);
        let zero = model.centered_eval(&y, t, &model.operator().zeros(), &path).unwrap();
        assert!(zero.norm() < 1e-10);
        // Zhat(t, ., w) = Z(t, ., theta_{-t} w).
        let zhat = model.backward_centered_eval(&y, t, &z, &path).unwrap();
        let via = model.centered_eval(&y, t, &z, &path.shift(-t).unwrap()).unwrap();
        assert!((zhat.coords - via.coords).norm() < 1e-12);
    }
    assert!(model.centered_eval(&y, 4.0, &z, &path).is_err());
}

#[test]
fn dealiasing_and_grid_rules_are_enforced() {
    let op = OperatorSpec::dirichlet_interval(8, 1.0).unwrap();
    let bad = SemiflowModel::new(
        op.clone(),
        NonlinearitySpec::new(Nonlinearity::BurgersAdvection),
        NoiseCoupling::None,
        Stepper::new(1e-3).with_collocation(12),
    );
    assert!(matches!(bad, Err(FlowError::InvalidModel(_))));
    let ok = SemiflowModel::new(
        op,
        NonlinearitySpec::new(Nonlinearity::BurgersAdvection),
        NoiseCoupling::None,
        Stepper::new(1e-3).with_collocation(13),
    );
    assert!(ok.is_ok());

    let model = linear(vec![1.0], 0.01);
    let path = sample_path_modes(1, 0.0, 1.0, 0.02, 0).unwrap();
    let x = mv(&model, &[1.0]);
    assert!(matches!(model.evolve(&x, &path, 0.5), Err(FlowError::GridMismatch { .. })));
    let path = sample_path_modes(1, 0.0, 1.0, 0.01, 0).unwrap();
    assert!(matches!(model.evolve(&x, &path, 0.505), Err(FlowError::Noise(_))));
    assert!(matches!(model.evolve(&x, &path, 2.0), Err(FlowError::Noise(_))));
}

#[test]
fn blow_up_is_reported() {
    let model = SemiflowModel::new(
        OperatorSpec::from_eigenvalues(vec![-5.0]).unwrap(),
        NonlinearitySpec::zero(),
        NoiseCoupling::None,
        Stepper::new(0.01).with_blowup_cap(1e3),
    )
    .unwrap();
    let path = sample_path_modes(1, 0.0, 5.0, 0.01, 0).unwrap();
    let err = model.evolve(&mv(&model, &[1.0]), &path, 5.0).unwrap_err();
    match err {
        FlowError::BlowUp { time, .. } => assert!((time - 1.39).abs() < 0.02),
        other => panic!("{other}"),
    }
}

#[test]
fn trajectory_exports_round_trip() {
    let model = sigmoid_additive(0.01);
    let path = sample_path_modes(3, 0.0, 0.5, 0.01, 2).unwrap();
    let traj = model.evolve_recorded(&mv(&model, &[0.1, 0.2, 0.3]), &path, 0.5, 5, false).unwrap();
    let back = CocycleTrajectory::from_bytes(&traj.to_bytes()).unwrap();
    assert_eq!(back, traj);
    let csv = traj.to_csv();
    let row: Vec<f64> = csv.lines().nth(3).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[0], traj.times[2]);
    assert_eq!(row[1], traj.states[2][0]);
    assert_eq!(csv.lines().count(), traj.times.len() + 1);
}
