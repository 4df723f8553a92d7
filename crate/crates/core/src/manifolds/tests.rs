use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::noise::{sample_path_modes, CovarianceSpec};
use crate::semiflow::{
    NoiseCoupling, Nonlinearity, NonlinearitySpec, QuadraticCoupling, SigmoidCoupling, Stepper,
};
use crate::spectral_space::OperatorSpec;
use crate::spectrum::{split_subspaces, SplitOptions};
use crate::stationary::{required_path_extent, solve_fixed_point, FixedPointOptions, ShiftWindow};

// Coordinate 0 is the unstable x2 (mu = -1), coordinate 1 the stable x1 (mu = 1).
fn saddle(h: f64) -> SemiflowModel {
    let op = OperatorSpec::from_eigenvalues(vec![-1.0, 1.0]).unwrap();
    let f = NonlinearitySpec::new(Nonlinearity::Field(Arc::new(QuadraticCoupling {
        source: 1,
        target: 0,
        coefficient: 1.0,
    })));
    SemiflowModel::new(op, f, NoiseCoupling::None, Stepper::new(h)).unwrap()
}

fn linear_saddle(h: f64) -> SemiflowModel {
    let op = OperatorSpec::from_eigenvalues(vec![-1.0, 1.0]).unwrap();
    SemiflowModel::new(op, NonlinearitySpec::zero(), NoiseCoupling::None, Stepper::new(h)).unwrap()
}

fn origin(h: f64) -> StationaryPoint {
    StationaryPoint::equilibrium(DVector::zeros(2), h)
}

fn unit_gap() -> GapEdges {
    GapEdges { i0: 2, lambda_i0: -1.0, lambda_i0_minus_1: 1.0, unstable_dim: 1 }
}

fn params(n_max: usize, t_back: usize) -> ManifoldParams {
    ManifoldParams::from_gap(&unit_gap(), n_max, t_back, 1.0).unwrap()
}

fn axes_split(at_shift: f64) -> Splitting {
    Splitting {
        stable_basis: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        unstable_basis: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        at_shift,
        unstable_history: Vec::new(),
        stable_history: Vec::new(),
        min_angle: std::f64::consts::FRAC_PI_2,
    }
}

fn point(x2: f64, x1: f64) -> DVector<f64> {
    DVector::from_vec(vec![x2, x1])
}

/// Discrete stable graph coefficient of the exponential stepper:
/// `x2 = c x1^2` is invariant when `c e^{-2h} = c e^h + (e^h - 1)`.
fn discrete_graph(h: f64) -> f64 {
    (h.exp() - 1.0) / ((-2.0 * h).exp() - h.exp())
}

/// Reverse-time RK4 of `x1' = -x1, x2' = x2 + x1^2`, started on the stable
/// axis very close to the origin and run until `x1` reaches `target`.
/// Backward in time the stable manifold attracts, so this lands on it.
fn brute_force_graph(target: f64) -> f64 {
    let f = |x1: f64, x2: f64| (x1, -x2 - x1 * x1);
    let (mut x1, mut x2) = (target * 1e-6, 0.0f64);
    let dt = 1e-4;
    let steps = ((target / x1).ln() / dt).round() as usize;
    for _ in 0..steps {
        let k1 = f(x1, x2);
        let k2 = f(x1 + 0.5 * dt * k1.0, x2 + 0.5 * dt * k1.1);
        let k3 = f(x1 + 0.5 * dt * k2.0, x2 + 0.5 * dt * k2.1);
        let k4 = f(x1 + dt * k3.0, x2 + dt * k3.1);
        x1 += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        x2 += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    x2 * (target / x1).powi(2)
}

#[test]
fn brute_force_confirms_the_stable_graph() {
    for a in [0.01, 0.03, 0.05] {
        let x2 = brute_force_graph(a);
        assert!((x2 + a * a / 3.0).abs() < 1e-9 * a * a + 1e-14, "{a}: {x2}");
    }
    assert!((discrete_graph(1e-3) + 1.0 / 3.0).abs() < 1e-3);
}

#[test]
fn params_defaults_and_validation() {
    let p = params(10, 20);
    assert_eq!((p.eps1, p.eps2, p.rho1, p.beta1), (0.5, 0.5, 0.1, 0.2));
    let mut bad = p;
    bad.eps1 = 1.0;
    assert!(bad.validate().is_err());
    bad = p;
    bad.beta2 = 0.05;
    assert!(bad.validate().is_err());
    let all_stable = GapEdges { i0: 1, lambda_i0: -3.0, lambda_i0_minus_1: f64::INFINITY, unstable_dim: 0 };
    let p = ManifoldParams::from_gap(&all_stable, 10, 5, 2.0).unwrap();
    assert_eq!((p.lambda_stable, p.lambda_unstable, p.rho1), (-3.0, 2.0, 0.2));
}

#[test]
fn anchor_point_is_in_with_zero_distances() {
    let h = 1e-2;
    let model = saddle(h);
    let path = sample_path_modes(2, 0.0, 20.0, h, 1).unwrap();
    let c = classify_stable(&model, &origin(h), &path, &DVector::zeros(2), &params(10, 5)).unwrap();
    assert_eq!(c.verdict, Verdict::In);
    assert!(c.evidence.distances.iter().all(|d| *d == 0.0));
    assert!(matches!(stable_decay_rate(&c.evidence), Err(ManifoldError::SeriesTooShort { points: 0 })));
}

#[test]
fn linear_stable_direction_decays_at_rate_one() {
    let h = 1e-2;
    let model = linear_saddle(h);
    let path = sample_path_modes(2, 0.0, 20.0, h, 1).unwrap();
    let p = params(10, 5);
    let c = classify_stable(&model, &origin(h), &path, &point(0.0, p.rho1 / 2.0), &p).unwrap();
    assert_eq!(c.verdict, Verdict::In);
    assert_eq!(c.evidence.times.len(), 101);
    let rate = stable_decay_rate(&c.evidence).unwrap();
    assert!((rate.rate + 1.0).abs() < 1e-9, "{rate:?}");

    // Failure after 0.8 n_max is inconclusive.
    let late = point(0.2 * (-13.2f64).exp(), 0.0);
    let c = classify_stable(&model, &origin(h), &path, &late, &p).unwrap();
    assert_eq!((c.verdict, c.evidence.first_failure), (Verdict::Boundary, Some(9)));
    let early = point(1e-3, 0.0);
    assert_eq!(classify_stable(&model, &origin(h), &path, &early, &p).unwrap().verdict, Verdict::Out);
    assert!(matches!(
        classify_stable(&model, &origin(h), &path, &point(0.0, 0.2), &p),
        Err(ManifoldError::OutsideBall { .. })
    ));
}

#[test]
fn saddle_graph_points_are_in_and_offsets_are_out() {
    let h = 1e-4;
    let model = saddle(h);
    let path = sample_path_modes(2, 0.0, 10.0, h, 1).unwrap();
    let p = params(10, 5);
    for a in [-0.03, -0.01, 0.02, 0.04] {
        let on = point(-a * a / 3.0, a);
        let c = classify_stable(&model, &origin(h), &path, &on, &p).unwrap();
        assert_eq!(c.verdict, Verdict::In, "a = {a}");
        for off in [1e-2, -1e-2] {
            let c = classify_stable(&model, &origin(h), &path, &point(-a * a / 3.0 + off, a), &p).unwrap();
            assert_eq!(c.verdict, Verdict::Out, "a = {a}, offset {off}");
        }
    }
}

#[test]
fn synthetic_decay_series() {
    let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
    let ev = DecayEvidence {
        distances: times.iter().map(|t| 0.3 * (-t).exp()).collect(),
        times: times.clone(),
        checked_steps: 5,
        first_failure: None,
    };
    let r = stable_decay_rate(&ev).unwrap();
    assert!((r.rate + 1.0).abs() < 1e-9);
    let mut floored = ev.clone();
    floored.distances[3] = 1e-13;
    assert!(matches!(stable_decay_rate(&floored), Err(ManifoldError::SeriesTooShort { points: 3 })));
}

#[test]
fn shooting_lands_on_the_discrete_graph() {
    let h = 1e-3;
    let model = saddle(h);
    let path = sample_path_modes(2, 0.0, 20.0, h, 1).unwrap();
    let p = params(15, 5);
    let pts = sample_stable(&model, &origin(h), &path, &axes_split(0.0), &p, 8, 3).unwrap();
    assert_eq!(pts.len(), 8);
    let c = discrete_graph(h);
    for x in &pts {
        assert!((x[0] - c * x[1] * x[1]).abs() < 1e-14, "{x}");
        assert!(x.norm() <= p.rho1);
    }
}

#[test]
fn lipschitz_exponent_and_its_violation() {
    let h = 1e-2;
    let p = params(10, 5);
    let linear = linear_saddle(h);
    let path = sample_path_modes(2, 0.0, 10.0, h, 1).unwrap();
    let pairs: Vec<_> = (1..6).map(|i| (point(0.0, 0.01 * i as f64), point(0.0, -0.01 * i as f64))).collect();
    let r = stable_lipschitz_exponent(&linear, &path, &pairs, 5.0, &p).unwrap();
    assert!((r.estimate.rate + 1.0).abs() < 1e-9 && r.within_envelope);

    let model = saddle(h);
    let c = discrete_graph(h);
    let on = |a: f64| point(c * a * a, a);
    let pairs: Vec<_> = (1..6).map(|i| (on(0.008 * i as f64), on(-0.005 * i as f64))).collect();
    let r = stable_lipschitz_exponent(&model, &path, &pairs, 5.0, &p).unwrap();
    assert!(r.estimate.rate <= -0.95, "{r:?}");

    let mut mixed = pairs.clone();
    mixed[2].1 = point(1e-2, 0.01);
    let r = stable_lipschitz_exponent(&model, &path, &mixed, 5.0, &p).unwrap();
    assert!(r.estimate.rate >= p.lambda_unstable - p.eps2, "{r:?}");
    assert!(!r.within_envelope);

    assert!(matches!(
        stable_lipschitz_exponent(&model, &path, &pairs[..4], 5.0, &p),
        Err(ManifoldError::DegeneratePairs(_))
    ));
    let mut same = pairs.clone();
    same[0].1 = same[0].0.clone();
    assert!(matches!(stable_lipschitz_exponent(&model, &path, &same, 5.0, &p), Err(ManifoldError::DegeneratePairs(_))));
}

#[test]
fn unstable_chains_on_the_linear_saddle() {
    let h = 1e-2;
    let model = linear_saddle(h);
    let path = sample_path_modes(2, 30.0, 20.0, h, 1).unwrap();
    let p = params(10, 20);
    let built = build_unstable(&model, &origin(h), &path, &axes_split(-20.0), &p, 6, 2).unwrap();
    assert_eq!((built.samples.len(), built.rejected, built.shrinks), (6, 0, 0));
    for s in &built.samples {
        assert_eq!(s.point[1], 0.0);
        assert!(s.point.norm() <= p.rho2);
        assert_eq!(s.chain.depth(), 20);
        assert!(s.chain.consistency.iter().all(|r| *r <= 1e-12));
        let rate = s.backward_rate.unwrap().rate;
        assert!((rate + 1.0).abs() < 1e-9, "{rate}");
    }
    let pair = unstable_pairwise_rate(&built.samples[0].chain, &built.samples[2].chain).unwrap();
    assert!((pair.rate + 1.0).abs() < 1e-9);

    let mut deep = p;
    deep.history_depth = 30;
    let built = build_unstable(&model, &origin(h), &path, &axes_split(-20.0), &deep, 2, 2).unwrap();
    assert!(built.samples[0].chain.truncated && built.samples[0].chain.depth() == 20);

    let mut shallow = p;
    shallow.t_back = 5;
    let built = build_unstable(&model, &origin(h), &path, &axes_split(-5.0), &shallow, 2, 2).unwrap();
    assert!(matches!(unstable_backward_rate(&built.samples[0].chain), Err(ManifoldError::ChainTooShort { depth: 5 })));

    assert!(matches!(
        build_unstable(&model, &origin(h), &path, &axes_split(0.0), &p, 2, 2),
        Err(ManifoldError::InvalidParams(_))
    ));
    let mut none = axes_split(-20.0);
    none.unstable_basis = DMatrix::zeros(2, 0);
    assert!(matches!(
        build_unstable(&model, &origin(h), &path, &none, &p, 2, 2),
        Err(ManifoldError::NoUnstableDirections)
    ));
}

#[test]
fn oversized_offsets_are_shrunk() {
    let h = 1e-2;
    let model = linear_saddle(h);
    let path = sample_path_modes(2, 30.0, 20.0, h, 1).unwrap();
    let mut p = params(10, 20);
    // A tight history envelope rejects the largest images at first.
    p.beta2 = 0.101;
    p.rho2 = 0.1;
    p.eps2 = 0.01;
    let built = build_unstable(&model, &origin(h), &path, &axes_split(-20.0), &p, 4, 2).unwrap();
    assert!(built.samples.iter().all(|s| s.chain.distances[0] <= p.rho2));
    assert_eq!(built.samples.len() + built.rejected, 4);
}

fn saddle_atlas(h: f64) -> (SemiflowModel, WienerPath, ManifoldAtlas) {
    let model = saddle(h);
    let path = sample_path_modes(2, 30.0, 30.0, h, 1).unwrap();
    let p = params(12, 20);
    let atlas =
        build_atlas(&model, &origin(h), &path, &axes_split(0.0), Some(&axes_split(-20.0)), &p, 10, 7).unwrap();
    (model, path, atlas)
}

#[test]
fn saddle_battery() {
    let h = 1e-3;
    let (model, path, mut atlas) = saddle_atlas(h);
    assert_eq!((atlas.stable_samples.len(), atlas.stable_rejected), (10, 0));
    assert!(atlas.stable_samples.iter().all(|s| s.rate.unwrap().rate <= -0.95));
    assert_eq!(atlas.unstable_samples.len(), 10);
    for s in &atlas.unstable_samples {
        assert!(s.point[1].abs() < 1e-6);
        assert!(s.backward_rate.unwrap().rate <= -0.95);
    }

    let fit = tangency_and_transversality(&atlas, &axes_split(0.0), 1e-3).unwrap();
    let stable = fit.stable.as_ref().unwrap();
    assert!((stable.quadratic[(0, 0)] + 1.0 / 3.0).abs() < 1e-3, "{}", stable.quadratic);
    assert!((stable.quadratic[(0, 0)] - discrete_graph(h)).abs() < 1e-9);
    assert!(stable.tangent_ok);
    let unstable = fit.unstable.as_ref().unwrap();
    assert!(unstable.quadratic.norm() < 1e-12 && unstable.tangent_ok);
    assert!(fit.dims_sum_ok && fit.transversal);
    assert!((fit.min_angle - std::f64::consts::FRAC_PI_2).abs() < 1e-9);

    let inv = stable_invariance_check(&model, &origin(h), &path, &atlas, &[0.0, 1.0, 2.5]).unwrap();
    assert!(inv.rows.iter().all(|r| r.fraction == 1.0 && r.outside == 0));
    assert_eq!(inv.tau1, Some(0.0));

    atlas.tangent_fit = Some(fit);
    atlas.invariance = Some(inv);
    let json = serde_json::to_value(&atlas).unwrap();
    assert_eq!(json["stable_samples"].as_array().unwrap().len(), 10);
    assert_eq!(json["anchor"], serde_json::json!([0.0, 0.0]));
    assert!(atlas.stable_csv().starts_with("verdict,c1,c2\nin,"));
    assert_eq!(atlas.unstable_csv().lines().count(), 1 + 10 * 21);
}

#[test]
fn linear_manifolds_are_the_subspaces() {
    let h = 1e-2;
    let model = linear_saddle(h);
    let path = sample_path_modes(2, 30.0, 30.0, h, 1).unwrap();
    let p = params(10, 20);
    let atlas = build_atlas(&model, &origin(h), &path, &axes_split(0.0), Some(&axes_split(-20.0)), &p, 6, 1).unwrap();
    let fit = tangency_and_transversality(&atlas, &axes_split(0.0), 1e-3).unwrap();
    for g in [fit.stable.unwrap(), fit.unstable.unwrap()] {
        assert!(g.linear.norm() < 1e-12 && g.quadratic.norm() < 1e-12 && g.tangent_ok);
    }
    let inv = stable_invariance_check(&model, &origin(h), &path, &atlas, &[0.0, 0.5, 3.0]).unwrap();
    assert_eq!(inv.tau1, Some(0.0));
    assert!(inv.rows.iter().all(|r| r.fraction == 1.0));
}

#[test]
fn too_few_samples_for_a_fit() {
    let h = 1e-3;
    let (_, _, mut atlas) = saddle_atlas(h);
    atlas.stable_samples.truncate(1);
    assert!(matches!(
        tangency_and_transversality(&atlas, &axes_split(0.0), 1e-3),
        Err(ManifoldError::InsufficientSamples { manifold: "stable", have: 1, need: 2 })
    ));
}

#[test]
fn stochastic_saddle_atlas() {
    let h = 1e-2;
    let op = OperatorSpec::from_eigenvalues(vec![-1.0, 1.0]).unwrap();
    let f = SigmoidCoupling::new(0.2, 0.6, DVector::from_vec(vec![0.3, -0.1])).into_spec();
    let cov = CovarianceSpec::cylindrical(vec![0.3, 0.3]).unwrap();
    let model = SemiflowModel::new(op, f, NoiseCoupling::Additive(cov), Stepper::new(h)).unwrap();
    let window = ShiftWindow::new(60.0, 40.0);
    let opts = FixedPointOptions::default();
    let (back, fwd) = required_path_extent(&model, window, &opts).unwrap();
    let path = sample_path_modes(2, back, fwd, h, 12).unwrap();
    let y = solve_fixed_point(&model, &path, window, &opts).unwrap();

    let split_opts = SplitOptions::new(1, 32.0);
    let split = split_subspaces(&model, &y, &path, &split_opts).unwrap();
    let split_back = split_subspaces(&model, &y, &path.shift(-20.0).unwrap(), &split_opts).unwrap();
    let mut p = params(10, 20);
    // The drift moves the exponents away from -1 and 1 by at most 2L.
    p.lambda_stable = -0.6;
    p.lambda_unstable = 0.6;
    p.eps1 = 0.3;
    p.eps2 = 0.3;
    let atlas = build_atlas(&model, &y, &path, &split, Some(&split_back), &p, 10, 4).unwrap();
    assert_eq!(atlas.stable_samples.len(), 10);
    assert!(!atlas.unstable_samples.is_empty());
    for s in &atlas.unstable_samples {
        assert!(s.chain.consistency.iter().all(|r| *r <= 1e-12));
    }
    let fit = tangency_and_transversality(&atlas, &split, 1e-3).unwrap();
    assert!(fit.dims_sum_ok && fit.transversal);
    assert!(fit.stable.unwrap().tangent_ok && fit.unstable.unwrap().tangent_ok);

    // Forward images of stable points stay stable at the shifted anchor.
    let inv = stable_invariance_check(&model, &y, &path, &atlas, &[1.0, 2.0, 4.0]).unwrap();
    let last = inv.rows.last().unwrap();
    assert!(last.fraction >= 0.95, "{inv:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tightening_eps1_never_admits_more(x2 in -0.05f64..0.05, x1 in -0.05f64..0.05, shrink in 0.05f64..1.0) {
        let h = 1e-2;
        let model = saddle(h);
        let path = sample_path_modes(2, 0.0, 10.0, h, 1).unwrap();
        let loose = params(8, 5);
        let mut tight = loose;
        tight.eps1 *= shrink;
        let x = point(x2, x1);
        let a = classify_stable(&model, &origin(h), &path, &x, &loose).unwrap();
        let b = classify_stable(&model, &origin(h), &path, &x, &tight).unwrap();
        if a.verdict == Verdict::Out {
            prop_assert_eq!(b.verdict, Verdict::Out);
        }
        prop_assert!(b.evidence.checked_steps <= a.evidence.checked_steps);
    }
}
