//! Numerical self-checks of a configured model: cocycle law, Jacobian
//! accuracy, shift group law, contraction ratios and the exponent sum rule.

use cocycle_core::noise::WienerPath;
use cocycle_core::semiflow::SemiflowModel;
use cocycle_core::spectrum::{log_det_rate, lyapunov_qr, stiff_block_cells, QrOptions};
use cocycle_core::stationary::{contraction_constant, solve_fixed_point, ShiftWindow};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{ExperimentConfig, Stage};
use crate::pipeline::{fixed_point_options, resolve_method, sample_model_path, stationary_point, Method};
use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub measured: Option<f64>,
    pub threshold: f64,
    pub status: Status,
    pub note: String,
}

impl CheckRow {
    fn measured(check: &str, measured: f64, threshold: f64, note: impl Into<String>) -> Self {
        let status = if measured <= threshold { Status::Pass } else { Status::Fail };
        Self { check: check.into(), measured: Some(measured), threshold, status, note: note.into() }
    }

    fn skipped(check: &str, threshold: f64, note: impl Into<String>) -> Self {
        Self { check: check.into(), measured: None, threshold, status: Status::Skip, note: note.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status == Status::Fail).count()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<22} {:>12} {:>12}  {:<6} {}\n", "check", "measured", "threshold", "status", "note");
        for r in &self.rows {
            let m = r.measured.map_or("-".to_string(), |m| format!("{m:.3e}"));
            let s = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            out.push_str(&format!("{:<22} {:>12} {:>12.3e}  {:<6} {}\n", r.check, m, r.threshold, s, r.note));
        }
        out
    }
}

/// Grid-aligned time in `[0, max]`.
fn grid_time(rng: &mut ChaCha8Rng, h: f64, max: f64) -> f64 {
    let cells = (max / h).round().max(1.0) as u64;
    rng.random_range(1..=cells) as f64 * h
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn sim_err(e: impl std::fmt::Display) -> RunError {
    RunError::stage(Stage::Simulate, e)
}

fn relative(a: f64, b: f64) -> f64 {
    a / (1.0 + b)
}

/// Worst relative residuals of `U(s + t, x, w) = U(t, U(s, x, w), theta_s w)`
/// and of the chain rule for its Jacobian, over `cases` random draws.
pub fn cocycle_residuals(
    model: &SemiflowModel,
    path: &WienerPath,
    cases: usize,
    seed: u64,
    max_time: f64,
    state_scale: f64,
) -> Result<(f64, f64), RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    let h = model.h();
    let (mut worst_u, mut worst_j) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let s = grid_time(&mut rng, h, max_time);
        let t = grid_time(&mut rng, h, max_time);
        let x = random_state(&mut rng, n, state_scale);
        let id = DMatrix::identity(n, n);
        let (direct, j_direct) = model.flow_frame(s + t, &x, id.clone(), path).map_err(sim_err)?;
        let (mid, j_s) = model.flow_frame(s, &x, id.clone(), path).map_err(sim_err)?;
        let shifted = path.shift(s).map_err(sim_err)?;
        let (composed, j_t) = model.flow_frame(t, &mid, id, &shifted).map_err(sim_err)?;
        worst_u = worst_u.max(relative((&direct - &composed).norm(), direct.norm()));
        worst_j = worst_j.max(relative((&j_direct - j_t * j_s).norm(), j_direct.norm()));
    }
    Ok((worst_u, worst_j))
}

/// Worst relative gap between `DU(t, x, w) v` and a central difference.
pub fn finite_difference_gap(
    model: &SemiflowModel,
    path: &WienerPath,
    cases: usize,
    seed: u64,
    max_time: f64,
    state_scale: f64,
) -> Result<f64, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = grid_time(&mut rng, model.h(), max_time);
        let x = random_state(&mut rng, n, state_scale);
        let mut v = random_state(&mut rng, n, 1.0);
        v /= v.norm();
        let (_, jv) = model.flow_frame(t, &x, DMatrix::from_column_slice(n, 1, v.as_slice()), path).map_err(sim_err)?;
        let eps = 1e-5 * (1.0 + x.norm());
        let plus = model.flow(t, &(&x + &v * eps), path).map_err(sim_err)?;
        let minus = model.flow(t, &(&x - &v * eps), path).map_err(sim_err)?;
        let fd = (plus - minus) / (2.0 * eps);
        let jv = jv.column(0).into_owned();
        worst = worst.max(relative((&jv - fd).norm(), jv.norm()));
    }
    Ok(worst)
}

/// Worst discrepancy between `theta_a theta_b w` and `theta_{a+b} w`, read
/// through path values on a grid around the new origin.
pub fn shift_group_gap(path: &WienerPath, cases: usize, seed: u64, span: f64) -> Result<f64, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = path.h();
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let a = grid_time(&mut rng, h, span) - span / 2.0;
        let b = grid_time(&mut rng, h, span) - span / 2.0;
        let a = (a / h).round() * h;
        let b = (b / h).round() * h;
        let two = path.shift(a).and_then(|p| p.shift(b)).map_err(sim_err)?;
        let one = path.shift(a + b).map_err(sim_err)?;
        for k in 0..=10 {
            let t = (k as f64 / 10.0 * span / 4.0 / h).round() * h;
            for m in 0..path.mode_count() {
                let d = (two.value(t, m).map_err(sim_err)? - one.value(t, m).map_err(sim_err)?).abs();
                worst = worst.max(d);
            }
        }
    }
    Ok(worst)
}

/// Runs every applicable check and returns the measured-vs-threshold table.
pub fn run_verify(config: &ExperimentConfig) -> Result<VerifyReport, RunError> {
    config.validate()?;
    let model = config.build_model()?;
    let v = &config.verify;
    let seed = config.run.seed;
    let h = model.h();
    let span = 2.0;
    let horizon = (v.sum_rule_horizon / h).round() * h;
    let mut rows = Vec::new();

    let path = sample_model_path(&model, 4.0 * span, 4.0 * span, seed)?;
    let scale = 1.0 / (model.dim() as f64).sqrt();
    let (res_u, res_j) = cocycle_residuals(&model, &path, v.cases, seed ^ 0x1, span, scale)?;
    rows.push(CheckRow::measured("cocycle law", res_u, v.cocycle_tol, "|U(s+t) - U(t, U(s), theta_s)| / (1 + |U|)"));
    rows.push(CheckRow::measured("cocycle jacobian", res_j, v.jacobian_tol, "chain rule for DU"));
    let fd = finite_difference_gap(&model, &path, v.cases, seed ^ 0x2, span, scale)?;
    rows.push(CheckRow::measured("finite differences", fd, v.finite_difference_tol, "DU v against central differences"));
    let shift = shift_group_gap(&path, v.cases, seed ^ 0x3, span)?;
    rows.push(CheckRow::measured("shift group law", shift, v.shift_tol, "theta_a theta_b = theta_(a+b)"));

    let lipschitz = model.nonlinearity().bounded_lipschitz().map(|(l, _)| l);
    match lipschitz {
        Some(l)
            if model.coupling().is_additive()
                && model.operator().require_splitting().is_ok()
                && contraction_constant(&model, l) < 1.0 =>
        {
            let mu = contraction_constant(&model, l);
            let threshold = v.contraction_ratio.unwrap_or(mu + 0.05);
            let window = ShiftWindow::new(0.0, 1.0);
            let opts = fixed_point_options(&config.pipeline.stationary);
            let (back, fwd) = cocycle_core::stationary::required_path_extent(&model, window, &opts)
                .map_err(|e| RunError::stage(Stage::Stationary, e))?;
            let long = sample_model_path(&model, back, fwd, seed)?;
            let y = solve_fixed_point(&model, &long, window, &opts)
                .map_err(|e| RunError::stage(Stage::Stationary, e))?;
            let worst = y.report.iterate_ratios.iter().copied().fold(0.0, f64::max);
            rows.push(CheckRow::measured(
                "contraction ratios",
                worst,
                threshold,
                format!("{} iterations, condition constant {mu:.4}", y.report.iterations),
            ));
        }
        _ => rows.push(CheckRow::skipped(
            "contraction ratios",
            v.contraction_ratio.unwrap_or(1.0),
            "needs additive noise and a bounded Lipschitz drift with a contracting constant",
        )),
    }

    let sum_rule = sum_rule_gap(config, &model, horizon);
    match sum_rule {
        Ok((gap, note)) => rows.push(CheckRow::measured("exponent sum rule", gap, v.sum_rule_tol, note)),
        Err(e) => rows.push(CheckRow::skipped("exponent sum rule", v.sum_rule_tol, e.to_string())),
    }
    Ok(VerifyReport { rows })
}

/// Relative gap between the sum of all QR exponents and the log-determinant
/// growth rate along the stationary orbit.
fn sum_rule_gap(config: &ExperimentConfig, model: &SemiflowModel, horizon: f64) -> Result<(f64, String), RunError> {
    let c = &config.pipeline.stationary;
    let method = resolve_method(model, c.method);
    let window = ShiftWindow::new(0.0, horizon);
    let (back, fwd) = match method {
        Method::Equilibrium => (0.0, horizon),
        Method::Contraction => {
            cocycle_core::stationary::required_path_extent(model, window, &fixed_point_options(c))
                .map_err(|e| RunError::stage(Stage::Stationary, e))?
        }
        Method::Pullback => (c.t_pull, horizon),
    };
    let path = sample_model_path(model, back, fwd, config.run.seed)?;
    let y = stationary_point(model, &path, method, window, c)?;
    let n = model.dim();
    // Largest block dividing the horizon that keeps ten blocks and stays
    // within the representable range of the fastest mode.
    let cells = (horizon / model.h()).round() as usize;
    let limit = (cells / 10).min(stiff_block_cells(model)).max(1);
    let block = (1..=limit).rev().find(|b| cells.is_multiple_of(*b)).unwrap_or(1);
    let mut opts = QrOptions::new(horizon, block as f64 * model.h(), n);
    opts.batches = 10;
    let err = |e| RunError::stage(Stage::Spectrum, e);
    let report = lyapunov_qr(model, &y, &path, &opts).map_err(err)?;
    let rate = log_det_rate(model, &y, &path, horizon).map_err(err)?;
    let total: f64 = report.exponents.iter().sum();
    Ok(((total - rate).abs() / rate.abs().max(1.0), format!("sum {total:.9} vs log-det rate {rate:.9}")))
}
