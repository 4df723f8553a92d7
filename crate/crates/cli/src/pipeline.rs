//! Stage execution: simulate, stationary, spectrum, manifolds.

use std::io::Write;
use std::path::{Path, PathBuf};

use cocycle_core::manifolds::{
    build_atlas, stable_invariance_check, tangency_and_transversality, ManifoldAtlas, ManifoldParams,
};
use cocycle_core::noise::{sample_path_modes, WienerPath};
use cocycle_core::semiflow::{NoiseCoupling, SemiflowModel};
use cocycle_core::spectrum::{
    dichotomy_check, hyperbolicity_gap, lyapunov_qr, split_subspaces, subspace_samples, DichotomyParams,
    GapEdges, Hyperbolicity, LyapunovReport, QrOptions, SplitOptions, Splitting,
};
use cocycle_core::stationary::{
    contraction_constant, equilibrium_point, find_equilibrium, pullback, required_path_extent, solve_fixed_point,
    stationarity_residual, FixedPointOptions, PullbackOptions, ShiftWindow, StationaryPoint, StationarySummary,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::artifacts::{csv_table, sha256_hex, ArtifactDir, Manifest};
use crate::config::{ExperimentConfig, Format, Stage, StationaryChoice, StationaryConfig};
use crate::RunError;

/// How the stationary point is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Equilibrium,
    Contraction,
    Pullback,
}

/// Resolves `auto`: a rest point without additive forcing, the contraction
/// solver when its condition holds, pullback otherwise.
pub fn resolve_method(model: &SemiflowModel, choice: StationaryChoice) -> Method {
    match choice {
        StationaryChoice::Equilibrium => Method::Equilibrium,
        StationaryChoice::Contraction => Method::Contraction,
        StationaryChoice::Pullback => Method::Pullback,
        StationaryChoice::Auto => {
            let forced = matches!(model.coupling(), NoiseCoupling::Additive(cov) if !cov.is_zero());
            if !forced {
                return Method::Equilibrium;
            }
            let contracts = model.operator().require_splitting().is_ok()
                && model.nonlinearity().bounded_lipschitz().is_some_and(|(l, _)| contraction_constant(model, l) < 1.0);
            if contracts {
                Method::Contraction
            } else {
                Method::Pullback
            }
        }
    }
}

/// Shift window of `Y` and the path extent every requested stage reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plan {
    pub method: Option<Method>,
    pub window: ShiftWindow,
    pub path_back: f64,
    pub path_fwd: f64,
}

pub fn plan(config: &ExperimentConfig, model: &SemiflowModel) -> Result<Plan, RunError> {
    let p = &config.pipeline;
    let has = |s: Stage| p.stages.contains(&s);
    let (mut back, mut fwd) = (0.0f64, 0.0f64);
    if has(Stage::Stationary) {
        back = back.max(p.stationary.window_back);
        fwd = fwd.max(p.stationary.window_fwd).max(p.stationary.residual_horizon);
    }
    if has(Stage::Spectrum) {
        let sp = &p.spectrum;
        fwd = fwd.max(sp.horizon);
        if sp.split {
            back = back.max(sp.split_horizon);
            fwd = fwd.max(sp.split_horizon);
        }
        if let Some(d) = &sp.dichotomy {
            fwd = fwd.max(d.horizon);
        }
    }
    if has(Stage::Manifolds) {
        let mf = &p.manifolds;
        back = back.max(mf.t_back as f64 + p.spectrum.split_horizon);
        let inv = mf.invariance_times.iter().copied().fold(0.0, f64::max);
        fwd = fwd.max(mf.n_max as f64 + inv + 1.0);
    }
    let sim = if has(Stage::Simulate) { p.simulate.duration } else { 0.0 };
    let window = ShiftWindow::new(back, fwd);
    if !has(Stage::Stationary) {
        return Ok(Plan { method: None, window, path_back: 0.0, path_fwd: sim.max(model.h()) });
    }
    let method = resolve_method(model, p.stationary.method);
    let (path_back, path_fwd) = match method {
        Method::Equilibrium => (back, fwd),
        Method::Contraction => required_path_extent(model, window, &fixed_point_options(&p.stationary))
            .map_err(|e| RunError::stage(Stage::Stationary, e))?,
        Method::Pullback => (back + p.stationary.t_pull, fwd),
    };
    Ok(Plan { method: Some(method), window, path_back, path_fwd: path_fwd.max(sim).max(model.h()) })
}

pub fn fixed_point_options(c: &StationaryConfig) -> FixedPointOptions {
    FixedPointOptions { tol: c.tol, max_iter: c.max_iter, tail_tol: c.tail_tol, ..FixedPointOptions::default() }
}

pub fn sample_model_path(model: &SemiflowModel, back: f64, fwd: f64, seed: u64) -> Result<WienerPath, RunError> {
    sample_path_modes(model.noise_modes_needed().max(1), back, fwd, model.h(), seed)
        .map_err(|e| RunError::stage(Stage::Simulate, e))
}

/// Computes `Y` by the resolved method on `window`.
pub fn stationary_point(
    model: &SemiflowModel,
    path: &WienerPath,
    method: Method,
    window: ShiftWindow,
    c: &StationaryConfig,
) -> Result<StationaryPoint, RunError> {
    let err = |e| RunError::stage(Stage::Stationary, e);
    match method {
        Method::Equilibrium => {
            let x = find_equilibrium(model, DVector::zeros(model.dim()), c.tol, c.max_iter).map_err(err)?;
            equilibrium_point(model, x, c.tol).map_err(err)
        }
        Method::Contraction => solve_fixed_point(model, path, window, &fixed_point_options(c)).map_err(err),
        Method::Pullback => {
            let mut opts = PullbackOptions::new(model.dim(), c.t_pull);
            opts.tol = c.pull_tol;
            pullback(model, path, window, &opts).map_err(err)
        }
    }
}

/// Outcome of a completed or aborted run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

struct Context {
    model: SemiflowModel,
    path: WienerPath,
    plan: Plan,
    y: Option<StationaryPoint>,
    gap: Option<GapEdges>,
    report: Option<LyapunovReport>,
    split: Option<Splitting>,
}

/// Runs every configured stage in order, writing artifacts under `out`.
/// Artifacts of completed stages stay in place when a later stage fails.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, log: &mut dyn Write) -> Result<RunOutcome, RunError> {
    config.validate().map_err(RunError::Config)?;
    let model = config.build_model().map_err(RunError::Config)?;
    let plan = plan(config, &model)?;
    // The output location is not part of the experiment: reruns elsewhere
    // must hash identically.
    let mut recorded = config.clone();
    recorded.output.dir = ".".into();
    let toml = recorded.to_toml();
    let mut dir = ArtifactDir::open(out, sha256_hex(toml.as_bytes()), config.run.seed).map_err(RunError::io)?;
    dir.write("config.toml", toml.as_bytes()).map_err(RunError::io)?;
    let path = sample_model_path(&model, plan.path_back, plan.path_fwd, config.run.seed)?;
    let mut ctx = Context { model, path, plan, y: None, gap: None, report: None, split: None };
    let _ = writeln!(
        log,
        "model: {} modes, h = {}, noise {}, path [-{}, {}]",
        ctx.model.dim(),
        ctx.model.h(),
        ctx.model.coupling().label(),
        plan.path_back,
        plan.path_fwd
    );
    for &stage in &config.pipeline.stages {
        let result = match stage {
            Stage::Simulate => simulate(config, &ctx, &mut dir, log),
            Stage::Stationary => stationary(config, &mut ctx, &mut dir, log),
            Stage::Spectrum => spectrum(config, &mut ctx, &mut dir, log),
            Stage::Manifolds => manifolds(config, &ctx, &mut dir, log),
        };
        match result {
            Ok(()) => dir.record_stage(stage.name(), "ok", None).map_err(RunError::io)?,
            Err(e) => {
                let status = if matches!(e, RunError::NotHyperbolic { .. }) { "aborted" } else { "failed" };
                dir.record_stage(stage.name(), status, Some(e.to_string())).map_err(RunError::io)?;
                let _ = writeln!(log, "{}: {status}: {e}", stage.name());
                return Err(e);
            }
        }
    }
    dir.write_manifest().map_err(RunError::io)?;
    Ok(RunOutcome { dir: dir.root().to_path_buf(), manifest: dir.manifest() })
}

#[derive(Serialize)]
struct SimulateSummary {
    duration: f64,
    records: usize,
    initial_norm: f64,
    final_norm: f64,
    max_norm: f64,
}

fn simulate(config: &ExperimentConfig, ctx: &Context, dir: &mut ArtifactDir, log: &mut dyn Write) -> Result<(), RunError> {
    let c = &config.pipeline.simulate;
    let n = ctx.model.dim();
    let x = if c.initial.is_empty() { DVector::zeros(n) } else { DVector::from_column_slice(&c.initial) };
    let x = ctx.model.operator().vector(x).map_err(|e| RunError::stage(Stage::Simulate, e))?;
    let traj = ctx
        .model
        .evolve_recorded(&x, &ctx.path, c.duration, c.record_every, false)
        .map_err(|e| RunError::stage(Stage::Simulate, e))?;
    let summary = SimulateSummary {
        duration: c.duration,
        records: traj.states.len(),
        initial_norm: traj.states[0].norm(),
        final_norm: traj.final_state().norm(),
        max_norm: traj.states.iter().map(|s| s.norm()).fold(0.0, f64::max),
    };
    let out = &config.output;
    if out.wants(Format::Json) {
        dir.write_json("simulate/summary.json", &summary).map_err(RunError::io)?;
    }
    if out.wants(Format::Csv) {
        dir.write("simulate/trajectory.csv", traj.to_csv().as_bytes()).map_err(RunError::io)?;
    }
    if out.wants(Format::Bin) {
        dir.write("simulate/trajectory.bin", &traj.to_bytes()).map_err(RunError::io)?;
        dir.write("simulate/path.bin", &ctx.path.to_bytes()).map_err(RunError::io)?;
    }
    let _ = writeln!(log, "simulate: {} records, final |u| = {:.6e}", summary.records, summary.final_norm);
    Ok(())
}

#[derive(Serialize)]
struct StationaryArtifact<'a> {
    method: Method,
    window: ShiftWindow,
    residual_horizon: f64,
    stationarity_residual: f64,
    summary: &'a StationarySummary,
}

fn stationary(
    config: &ExperimentConfig,
    ctx: &mut Context,
    dir: &mut ArtifactDir,
    log: &mut dyn Write,
) -> Result<(), RunError> {
    let c = &config.pipeline.stationary;
    let method = ctx.plan.method.expect("planned with a stationary stage");
    let mut y = stationary_point(&ctx.model, &ctx.path, method, ctx.plan.window, c)?;
    let residual = stationarity_residual(&ctx.model, &y, &ctx.path, c.residual_horizon)
        .map_err(|e| RunError::stage(Stage::Stationary, e))?;
    y.report.stationarity_residual = Some(residual);
    let summary = y.summary();
    let out = &config.output;
    if out.wants(Format::Json) {
        let art = StationaryArtifact {
            method,
            window: ctx.plan.window,
            residual_horizon: c.residual_horizon,
            stationarity_residual: residual,
            summary: &summary,
        };
        dir.write_json("stationary/summary.json", &art).map_err(RunError::io)?;
    }
    if out.wants(Format::Csv) {
        let n = y.dim();
        let mut header = vec!["time".to_string()];
        header.extend((1..=n).map(|k| format!("c{k}")));
        let stride = ((0.05 / ctx.model.h()).round() as usize).max(1);
        let origin = ctx.path.origin_cell();
        let first = y.abs_range().0;
        let rows = y
            .values()
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(i, v)| {
                let t = if y.is_constant() { 0.0 } else { (first + i as i64 - origin) as f64 * y.h() };
                std::iter::once(t).chain(v.iter().copied()).collect()
            });
        dir.write("stationary/values.csv", csv_table(&header, rows).as_bytes()).map_err(RunError::io)?;
        if !y.report.sync_gap.is_empty() {
            let rows = y.report.sync_gap.iter().map(|(t, g)| vec![*t, *g]);
            dir.write("stationary/sync_gap.csv", csv_table(&["time".into(), "gap".into()], rows).as_bytes())
                .map_err(RunError::io)?;
        }
    }
    if out.wants(Format::Bin) {
        dir.write("stationary/point.bin", &y.to_bytes()).map_err(RunError::io)?;
    }
    let r = &y.report;
    let _ = writeln!(
        log,
        "stationary: {method:?}, condition_mu = {}, iterations = {}, max iterate ratio = {}, residual = {residual:.3e}",
        summary.condition_mu.map_or("n/a".into(), |m| format!("{m:.4}")),
        r.iterations,
        r.iterate_ratios.iter().copied().fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))))
            .map_or("n/a".into(), |m| format!("{m:.4}")),
    );
    ctx.y = Some(y);
    Ok(())
}

#[derive(Serialize)]
struct SpectrumArtifact<'a> {
    report: &'a LyapunovReport,
    zero_band: f64,
    hyperbolicity: Hyperbolicity,
}

fn spectrum(
    config: &ExperimentConfig,
    ctx: &mut Context,
    dir: &mut ArtifactDir,
    log: &mut dyn Write,
) -> Result<(), RunError> {
    let c = &config.pipeline.spectrum;
    let err = |e| RunError::stage(Stage::Spectrum, e);
    let y = ctx.y.as_ref().expect("stationary stage ran");
    let n = ctx.model.dim();
    let q = c.exponents.unwrap_or(n);
    let mut opts = QrOptions::new(c.horizon, c.reorth_every, q);
    opts.batches = c.batches;
    if let Some(seed) = c.frame_seed {
        opts = opts.with_random_frame(n, seed);
    }
    let report = lyapunov_qr(&ctx.model, y, &ctx.path, &opts).map_err(err)?;
    let hyp = hyperbolicity_gap(&report, c.zero_band);
    let out = &config.output;
    if out.wants(Format::Json) {
        let art = SpectrumArtifact { report: &report, zero_band: c.zero_band, hyperbolicity: hyp };
        dir.write_json("spectrum/lyapunov.json", &art).map_err(RunError::io)?;
    }
    if out.wants(Format::Csv) {
        dir.write("spectrum/running.csv", report.running_csv().as_bytes()).map_err(RunError::io)?;
    }
    let shown: Vec<String> = report
        .exponents
        .iter()
        .zip(&report.std_errors)
        .map(|(l, s)| format!("{l:.6} +- {s:.1e}"))
        .collect();
    let _ = writeln!(log, "spectrum: [{}]", shown.join(", "));
    let gap = match hyp {
        Hyperbolicity::Hyperbolic(g) => g,
        Hyperbolicity::NotHyperbolic { index, exponent } => {
            if config.pipeline.stages.contains(&Stage::Manifolds) {
                return Err(RunError::NotHyperbolic { index, exponent });
            }
            let _ = writeln!(log, "spectrum: exponent {index} = {exponent:e} lies in the zero band; no splitting");
            ctx.report = Some(report);
            return Ok(());
        }
    };
    let _ = writeln!(
        log,
        "spectrum: gap edges {} and {}, unstable dimension {}",
        gap.lambda_i0, gap.lambda_i0_minus_1, gap.unstable_dim
    );
    if c.split {
        let mut sopts = SplitOptions::new(gap.unstable_dim, c.split_horizon);
        sopts.tol = c.split_tol;
        let split = split_subspaces(&ctx.model, y, &ctx.path, &sopts).map_err(err)?;
        if out.wants(Format::Json) {
            dir.write_json("spectrum/splitting.json", &split).map_err(RunError::io)?;
        }
        let _ = writeln!(log, "spectrum: splitting angle {:.6}", split.min_angle);
        if let Some(d) = &c.dichotomy {
            let candidates = subspace_samples(&split, d.extra_samples, config.run.seed);
            let params = DichotomyParams::new(d.delta1, d.delta2, d.horizon);
            let rep = dichotomy_check(&ctx.model, y, &ctx.path, &split, &params, &candidates).map_err(err)?;
            if out.wants(Format::Json) {
                dir.write_json("spectrum/dichotomy.json", &rep).map_err(RunError::io)?;
            }
            let _ = writeln!(
                log,
                "spectrum: dichotomy tau* unstable {:?}, stable {:?}, violations {}",
                rep.max_tau_unstable, rep.max_tau_stable, rep.violations
            );
        }
        ctx.split = Some(split);
    }
    ctx.gap = Some(gap);
    ctx.report = Some(report);
    Ok(())
}

fn manifolds(
    config: &ExperimentConfig,
    ctx: &Context,
    dir: &mut ArtifactDir,
    log: &mut dyn Write,
) -> Result<(), RunError> {
    let c = &config.pipeline.manifolds;
    let sp = &config.pipeline.spectrum;
    let err = |e| RunError::stage(Stage::Manifolds, e);
    let y = ctx.y.as_ref().expect("stationary stage ran");
    let gap = ctx.gap.as_ref().expect("spectrum stage found a gap");
    let split = ctx.split.as_ref().expect("spectrum stage split");
    let mut params = ManifoldParams::from_gap(gap, c.n_max, c.t_back, c.fallback_rate).map_err(err)?;
    if let Some(rho) = c.rho {
        params.rho1 = rho;
        params.rho2 = rho;
        params.beta1 = (2.0 * rho).min(1.0);
        params.beta2 = params.beta1;
        params.validate().map_err(err)?;
    }
    let split_back = if gap.unstable_dim > 0 {
        let mut sopts = SplitOptions::new(gap.unstable_dim, sp.split_horizon);
        sopts.tol = sp.split_tol;
        let back = ctx.path.shift(-(c.t_back as f64)).map_err(|e| RunError::stage(Stage::Manifolds, e))?;
        Some(split_subspaces(&ctx.model, y, &back, &sopts).map_err(|e| RunError::stage(Stage::Manifolds, e))?)
    } else {
        None
    };
    let mut atlas: ManifoldAtlas =
        build_atlas(&ctx.model, y, &ctx.path, split, split_back.as_ref(), &params, c.points, config.run.seed)
            .map_err(err)?;
    let fit = tangency_and_transversality(&atlas, split, c.angle_floor).map_err(err)?;
    let inv = stable_invariance_check(&ctx.model, y, &ctx.path, &atlas, &c.invariance_times).map_err(err)?;
    let coefficients: Vec<f64> = fit.stable.iter().flat_map(|f| f.quadratic.iter().copied()).collect();
    let _ = writeln!(
        log,
        "manifolds: {} stable and {} unstable samples; stable graph quadratic coefficients {:?}; dims {} + {}, angle {:.4}",
        atlas.stable_samples.len(),
        atlas.unstable_samples.len(),
        coefficients,
        fit.stable_dim,
        fit.unstable_dim,
        fit.min_angle
    );
    atlas.tangent_fit = Some(fit);
    atlas.invariance = Some(inv);
    let out = &config.output;
    if out.wants(Format::Json) {
        dir.write_json("manifolds/atlas.json", &atlas).map_err(RunError::io)?;
    }
    if out.wants(Format::Csv) {
        dir.write("manifolds/stable.csv", atlas.stable_csv().as_bytes()).map_err(RunError::io)?;
        dir.write("manifolds/unstable.csv", atlas.unstable_csv().as_bytes()).map_err(RunError::io)?;
    }
    Ok(())
}
