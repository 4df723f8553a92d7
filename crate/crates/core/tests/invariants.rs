//! Property tests of the structural laws that every model kind must obey.

use std::sync::Arc;

use cocycle_core::noise::{sample_path_modes, CovarianceSpec, WienerPath};
use cocycle_core::semiflow::{
    NoiseCoupling, Nonlinearity, NonlinearitySpec, SemiflowModel, SigmoidCoupling, SineFn, Stepper,
};
use cocycle_core::spectral_space::OperatorSpec;
use cocycle_core::spectrum::{log_det_rate, lyapunov_qr, QrOptions};
use cocycle_core::stationary::StationaryPoint;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const H: f64 = 0.01;

fn family(kind: usize) -> SemiflowModel {
    let stepper = Stepper::new(H);
    match kind {
        0 => {
            let op = OperatorSpec::from_eigenvalues(vec![1.0, 2.0, 3.0]).unwrap();
            let cov = CovarianceSpec::cylindrical(vec![1.0, 0.5, 0.2]).unwrap();
            SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::Additive(cov), stepper).unwrap()
        }
        1 => {
            let op = OperatorSpec::from_eigenvalues(vec![-1.0, 1.0]).unwrap();
            let f = SigmoidCoupling::new(0.2, 0.6, DVector::from_vec(vec![0.3, -0.1])).into_spec();
            let cov = CovarianceSpec::cylindrical(vec![0.3, 0.3]).unwrap();
            SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), stepper).unwrap()
        }
        2 => {
            let op = OperatorSpec::from_eigenvalues(vec![1.0, 2.0]).unwrap();
            let cov = CovarianceSpec::cylindrical(vec![0.5, 1.0]).unwrap();
            SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::DiagonalMultiplicative(cov), stepper)
                .unwrap()
        }
        3 => {
            let op = OperatorSpec::dirichlet_interval(8, 0.5).unwrap();
            let cov = CovarianceSpec::power_law(0.5, 1.0, 8).unwrap();
            let f = NonlinearitySpec::new(Nonlinearity::BurgersAdvection);
            SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), stepper).unwrap()
        }
        4 => {
            let op = OperatorSpec::dirichlet_interval(6, 0.1).unwrap();
            let cov = CovarianceSpec::cylindrical(vec![0.2; 6]).unwrap();
            let f = NonlinearitySpec::new(Nonlinearity::DissipativeReaction { alpha: 2.0 });
            SemiflowModel::new(op, f, NoiseCoupling::DiagonalMultiplicative(cov), stepper).unwrap()
        }
        _ => {
            let op = OperatorSpec::dirichlet_interval(6, 0.2).unwrap();
            let cov = CovarianceSpec::cylindrical(vec![0.3; 6]).unwrap();
            let f = NonlinearitySpec::new(Nonlinearity::Pointwise(Arc::new(SineFn { amplitude: 0.5 })));
            SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), stepper).unwrap()
        }
    }
}

const FAMILIES: usize = 6;

fn path_for(model: &SemiflowModel, seed: u64) -> WienerPath {
    sample_path_modes(model.noise_modes_needed().max(1), 3.0, 3.0, H, seed).unwrap()
}

fn state(model: &SemiflowModel, raw: &[f64]) -> DVector<f64> {
    DVector::from_iterator(model.dim(), raw.iter().cycle().copied().take(model.dim()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cocycle_identity_holds_for_state_and_jacobian(
        kind in 0..FAMILIES,
        c1 in 1usize..120,
        c2 in 1usize..120,
        seed in any::<u64>(),
        raw in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let model = family(kind);
        let path = path_for(&model, seed);
        let (t1, t2) = (c1 as f64 * H, c2 as f64 * H);
        let x = state(&model, &raw);
        let n = model.dim();
        let id = DMatrix::identity(n, n);
        let (direct, j_direct) = model.flow_frame(t1 + t2, &x, id.clone(), &path).unwrap();
        let (mid, j1) = model.flow_frame(t1, &x, id.clone(), &path).unwrap();
        let (composed, j2) = model.flow_frame(t2, &mid, id, &path.shift(t1).unwrap()).unwrap();
        prop_assert!((&direct - &composed).norm() <= 1e-9 * (1.0 + direct.norm()));
        prop_assert!((&j_direct - j2 * j1).norm() <= 1e-9 * (1.0 + j_direct.norm()));
    }

    #[test]
    fn restarting_a_trajectory_reproduces_its_tail(
        kind in 0..FAMILIES,
        j in 1usize..20,
        seed in any::<u64>(),
        raw in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let model = family(kind);
        let path = path_for(&model, seed);
        let x = model.operator().vector(state(&model, &raw)).unwrap();
        let traj = model.evolve_recorded(&x, &path, 2.0, 5, true).unwrap();
        prop_assert_eq!(&traj.states[0], &x.coords);
        prop_assert_eq!(&traj.tangents.as_ref().unwrap()[0], &DMatrix::identity(model.dim(), model.dim()));
        let start = model.operator().vector(traj.states[j].clone()).unwrap();
        let shifted = path.shift(traj.times[j]).unwrap();
        let rest = model.evolve_recorded(&start, &shifted, 2.0 - traj.times[j], 5, false).unwrap();
        for (a, b) in rest.states.iter().zip(&traj.states[j..]) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn shifts_compose_exactly_and_reanchor(
        a in -150i64..150,
        b in -150i64..150,
        seed in any::<u64>(),
    ) {
        let path = sample_path_modes(2, 4.0, 4.0, H, seed).unwrap();
        let two = path.shift_cells(a).unwrap().shift_cells(b).unwrap();
        let one = path.shift_cells(a + b).unwrap();
        for m in 0..2 {
            prop_assert_eq!(one.value(0.0, m).unwrap(), 0.0);
            for k in -50i64..=50 {
                let t = k as f64 * H;
                prop_assert_eq!(two.value(t, m).unwrap(), one.value(t, m).unwrap());
            }
        }
    }

    #[test]
    fn extending_the_future_keeps_drawn_increments(seed in any::<u64>(), extra in 1usize..200) {
        let short = sample_path_modes(3, 1.0, 1.0, H, seed).unwrap();
        let long = sample_path_modes(3, 1.0, 1.0 + extra as f64 * H, H, seed).unwrap();
        let (lo, hi) = short.stored_cells();
        for cell in lo..hi {
            prop_assert_eq!(short.abs_increments(cell), long.abs_increments(cell));
        }
    }

    #[test]
    fn paths_round_trip_through_bytes(seed in any::<u64>(), shift in -100i64..100) {
        let path = sample_path_modes(2, 2.0, 2.0, H, seed).unwrap().shift_cells(shift).unwrap();
        let back = WienerPath::from_bytes(&path.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), path.to_bytes());
        prop_assert_eq!(back.value(0.5, 1).unwrap(), path.value(0.5, 1).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exponents_are_sorted_and_obey_the_sum_rule(
        mu in prop::collection::vec(0.2f64..5.0, 2..5),
        sigma in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let n = mu.len();
        let op = OperatorSpec::from_eigenvalues({ let mut m = mu.clone(); m.sort_by(f64::total_cmp); m.dedup(); m });
        prop_assume!(op.is_ok());
        let op = op.unwrap();
        let n = op.mode_count().min(n);
        let cov = CovarianceSpec::cylindrical(vec![sigma; n]).unwrap();
        let model = SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::DiagonalMultiplicative(cov), Stepper::new(H))
            .unwrap();
        let y = StationaryPoint::equilibrium(DVector::zeros(n), H);
        let path = sample_path_modes(n, 0.0, 20.0, H, seed).unwrap();
        let report = lyapunov_qr(&model, &y, &path, &QrOptions::new(20.0, 1.0, n)).unwrap();
        prop_assert!(report.exponents.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(report.multiplicities.iter().sum::<usize>(), n);
        let total: f64 = report.exponents.iter().sum();
        let rate = log_det_rate(&model, &y, &path, 20.0).unwrap();
        prop_assert!((total - rate).abs() <= 1e-6 * rate.abs().max(1.0));
    }
}
