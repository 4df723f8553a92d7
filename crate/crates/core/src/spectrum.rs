//! Lyapunov spectra and the stable/unstable splitting of the linearized
//! cocycle `T(t, w) = DU(t, Y(w), w)` along a stationary trajectory.
//!
//! Exponents come from discrete QR: an orthonormal frame is pushed through
//! the variational equation, re-orthonormalized every `reorth_every` time
//! units, and the logs of the `R` diagonals are accumulated. Standard errors
//! come from batch means of the per-block log increments.
//!
//! `U(w)` is the span of the leading left singular vectors of
//! `DU(T, Y(theta_{-T} w), theta_{-T} w)`; `S(w)` is the orthogonal complement
//! of the leading left singular vectors of the adjoint `DU(T, Y(w), w)^*`,
//! i.e. of the most expanded directions at `w`. Both are refined over a
//! doubling sequence of horizons until successive estimates stop moving.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::linalg;
use crate::noise::{NoiseError, WienerPath};
use crate::semiflow::{FlowError, SemiflowModel};
use crate::stationary::{StationaryPoint, WindowExceeded};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Window(#[from] WindowExceeded),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("degenerate R: diagonal {index} is {value:e} at t = {time}; reduce q or the horizon")]
    DegenerateR { index: usize, value: f64, time: f64 },
    #[error("subspace estimates did not converge: last angle change {last_angle:e} at horizon {horizon}")]
    NoSubspaceConvergence { last_angle: f64, horizon: f64 },
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

#[derive(Debug, Clone)]
pub struct QrOptions {
    pub horizon: f64,
    pub reorth_every: f64,
    /// Number of exponents (frame columns).
    pub q: usize,
    pub batches: usize,
    /// Initial frame; the leading `q` coordinate vectors when `None`.
    pub frame: Option<DMatrix<f64>>,
    /// Cap on the number of rows of the running-estimate series.
    pub max_series_rows: usize,
}

impl QrOptions {
    pub fn new(horizon: f64, reorth_every: f64, q: usize) -> Self {
        Self { horizon, reorth_every, q, batches: 20, frame: None, max_series_rows: 1000 }
    }

    /// A random orthonormal starting frame drawn from `seed`.
    pub fn with_random_frame(mut self, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, self.q, |_, _| StandardNormal.sample(&mut rng));
        self.frame = Some(linalg::orthonormalize(&a, 1e-12));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Non-increasing.
    pub exponents: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Sizes of the groups of numerically coincident exponents, in order.
    pub multiplicities: Vec<usize>,
    pub horizon: f64,
    pub reorth_every: f64,
    pub h: f64,
    pub batches: usize,
    /// `(t, running estimates)` at block ends, in frame order.
    pub running: Vec<(f64, Vec<f64>)>,
}

impl LyapunovReport {
    /// Exponents (with standard errors) considered equal when closer than
    /// `max(3 * combined standard error, 1e-3)`; adjacent ones are chained.
    pub fn group(exponents: &[f64], std_errors: &[f64]) -> Vec<usize> {
        let mut groups = Vec::new();
        let mut size = 0;
        for i in 0..exponents.len() {
            if i > 0 {
                let combined = (std_errors[i].powi(2) + std_errors[i - 1].powi(2)).sqrt();
                if (exponents[i - 1] - exponents[i]).abs() > (3.0 * combined).max(1e-3) {
                    groups.push(size);
                    size = 0;
                }
            }
            size += 1;
        }
        if size > 0 {
            groups.push(size);
        }
        groups
    }

    /// Running estimates as CSV: `time,l1,...,lq`.
    pub fn running_csv(&self) -> String {
        let q = self.exponents.len();
        let mut out = String::from("time");
        for k in 1..=q {
            out.push_str(&format!(",l{k}"));
        }
        out.push('\n');
        for (t, row) in &self.running {
            out.push_str(&format!("{t:.16e}"));
            for v in row {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Dimension of the unstable subspace: the count of positive exponents.
    pub fn positive_count(&self) -> usize {
        self.exponents.iter().filter(|l| **l > 0.0).count()
    }
}

/// Pushes `frame` through the linearization along the stationary orbit,
/// resetting the base state to the tabulated `Y` every `block` steps. Calls
/// `at_block(k, frame)` after each block with the cumulative step count.
fn propagate_along<F>(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    mut frame: DMatrix<f64>,
    cells: usize,
    block: usize,
    mut at_block: F,
) -> Result<DMatrix<f64>, SpectrumError>
where
    F: FnMut(usize, &mut DMatrix<f64>) -> Result<(), SpectrumError>,
{
    let h = model.h();
    let o = path.origin_cell();
    let mut done = 0;
    while done < cells {
        let len = block.min(cells - done);
        let base = y.value_at(path, done as f64 * h)?;
        model.integrate(base, path, o + done as i64, len, Some(&mut frame), |_, _, _| {})?;
        done += len;
        at_block(done, &mut frame)?;
    }
    Ok(frame)
}

/// Steps per re-anchoring block: one time unit, or one step on grids that
/// do not divide it.
fn unit_block(path: &WienerPath) -> usize {
    path.cells(1.0).map_or(1, |c| c.max(1) as usize)
}

/// `DU(cells * h, Y(w), w)` with the base state reset to `Y` every time unit,
/// so that an unstable stationary orbit is followed for long horizons.
pub fn orbit_jacobian(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    cells: usize,
) -> Result<DMatrix<f64>, SpectrumError> {
    let n = model.dim();
    propagate_along(model, y, path, DMatrix::identity(n, n), cells, unit_block(path), |_, _| Ok(()))
}

/// Discrete-QR Lyapunov exponents along `Y`.
pub fn lyapunov_qr(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    opts: &QrOptions,
) -> Result<LyapunovReport, SpectrumError> {
    let n = model.dim();
    let h = model.h();
    if opts.q == 0 || opts.q > n {
        return Err(SpectrumError::InvalidOptions(format!("q = {} must lie in 1..={n}", opts.q)));
    }
    let cells = path.cells(opts.horizon)?;
    let block = path.cells(opts.reorth_every)?;
    if block <= 0 || cells <= 0 || cells % block != 0 {
        return Err(SpectrumError::InvalidOptions(format!(
            "horizon {} must be a positive multiple of the re-orthonormalization interval {}",
            opts.horizon, opts.reorth_every
        )));
    }
    let blocks = (cells / block) as usize;
    let batches = opts.batches.min(blocks);
    if batches < 10 {
        return Err(SpectrumError::InvalidOptions(format!(
            "{blocks} blocks cannot form the 10 batches needed for standard errors"
        )));
    }
    path.check_abs_range(path.origin_cell(), path.origin_cell() + cells)?;
    // Tabulated Y must cover the whole horizon.
    y.value_at(path, opts.horizon)?;
    let frame = match &opts.frame {
        Some(f) => {
            if f.nrows() != n || f.ncols() != opts.q {
                return Err(SpectrumError::InvalidOptions(format!(
                    "frame is {}x{}, expected {n}x{}",
                    f.nrows(),
                    f.ncols(),
                    opts.q
                )));
            }
            f.clone()
        }
        None => DMatrix::identity(n, opts.q),
    };

    let q = opts.q;
    let mut increments: Vec<Vec<f64>> = Vec::with_capacity(blocks);
    let mut sums = vec![0.0; q];
    let mut running = Vec::new();
    let stride = blocks.div_ceil(opts.max_series_rows.max(1));
    propagate_along(model, y, path, frame, cells as usize, block as usize, |done, v| {
        let qr = v.clone().qr();
        let mut qm = qr.q();
        let r = qr.r();
        let mut logs = Vec::with_capacity(q);
        for j in 0..q {
            let d = r[(j, j)];
            if !(d.abs() > 1e-300) || !d.is_finite() {
                return Err(SpectrumError::DegenerateR { index: j + 1, value: d, time: done as f64 * h });
            }
            if d < 0.0 {
                qm.column_mut(j).neg_mut();
            }
            logs.push(d.abs().ln());
            sums[j] += d.abs().ln();
        }
        *v = qm;
        increments.push(logs);
        let b = increments.len();
        if b.is_multiple_of(stride) || b == blocks {
            let t = done as f64 * h;
            running.push((t, sums.iter().map(|s| s / t).collect()));
        }
        Ok(())
    })?;

    let t_total = cells as f64 * h;
    let per_batch = blocks / batches;
    let batch_time = per_batch as f64 * block as f64 * h;
    let mut exps: Vec<(f64, f64)> = (0..q)
        .map(|j| {
            let lambda = sums[j] / t_total;
            let means: Vec<f64> = (0..batches)
                .map(|b| increments[b * per_batch..(b + 1) * per_batch].iter().map(|r| r[j]).sum::<f64>() / batch_time)
                .collect();
            let m = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (lambda, (var / batches as f64).sqrt())
        })
        .collect();
    exps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let exponents: Vec<f64> = exps.iter().map(|e| e.0).collect();
    let std_errors: Vec<f64> = exps.iter().map(|e| e.1).collect();
    let multiplicities = LyapunovReport::group(&exponents, &std_errors);
    Ok(LyapunovReport {
        exponents,
        std_errors,
        multiplicities,
        horizon: t_total,
        reorth_every: block as f64 * h,
        h,
        batches,
        running,
    })
}

/// Longest step count over which the linear modes separate by at most a
/// factor `e^10`. Blockwise QR loses about `eps * cond` of relative accuracy
/// in `prod R_jj`, so stiff spectra need short blocks.
pub fn stiff_block_cells(model: &SemiflowModel) -> usize {
    let mu = model.operator().eigenvalues();
    let spread = mu.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - mu.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if !(spread * model.h() > 0.0) {
        return usize::MAX;
    }
    ((10.0 / (spread * model.h())).floor() as usize).max(1)
}

/// `(1/T) log |det DU(T, Y(w), w)|`, the sum of all exponents.
pub fn log_det_rate(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    horizon: f64,
) -> Result<f64, SpectrumError> {
    let n = model.dim();
    let cells = path.cells(horizon)? as usize;
    let mut log_det = 0.0;
    // Blockwise QR keeps the product representable; det = prod R_jj.
    propagate_along(model, y, path, DMatrix::identity(n, n), cells, cells.clamp(1, 100).min(stiff_block_cells(model)), |_, v| {
        let qr = v.clone().qr();
        let r = qr.r();
        log_det += (0..n).map(|j| r[(j, j)].abs().ln()).sum::<f64>();
        *v = qr.q();
        Ok(())
    })?;
    Ok(log_det / horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEdges {
    /// 1-based index of the largest negative exponent.
    pub i0: usize,
    #[serde(serialize_with = "ser_extended")]
    pub lambda_i0: f64,
    #[serde(serialize_with = "ser_extended")]
    pub lambda_i0_minus_1: f64,
    pub unstable_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Hyperbolicity {
    Hyperbolic(GapEdges),
    NotHyperbolic { index: usize, exponent: f64 },
}

impl Hyperbolicity {
    pub fn gap(&self) -> Option<GapEdges> {
        match self {
            Hyperbolicity::Hyperbolic(g) => Some(*g),
            Hyperbolicity::NotHyperbolic { .. } => None,
        }
    }
}

/// Gap edges `lambda_{i0} = max{lambda_i < 0}` and `lambda_{i0-1} = min{lambda_i > 0}`,
/// with `-inf` / `+inf` when a side is empty.
pub fn hyperbolicity_gap(report: &LyapunovReport, zero_band: f64) -> Hyperbolicity {
    for (i, (l, se)) in report.exponents.iter().zip(&report.std_errors).enumerate() {
        if l.abs() <= zero_band + 3.0 * se {
            return Hyperbolicity::NotHyperbolic { index: i + 1, exponent: *l };
        }
    }
    let positive = report.exponents.iter().filter(|l| **l > 0.0).count();
    let lambda_i0 = report.exponents.get(positive).copied().unwrap_or(f64::NEG_INFINITY);
    let lambda_i0_minus_1 = if positive == 0 { f64::INFINITY } else { report.exponents[positive - 1] };
    Hyperbolicity::Hyperbolic(GapEdges { i0: positive + 1, lambda_i0, lambda_i0_minus_1, unstable_dim: positive })
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    pub unstable_dim: usize,
    /// First horizon of the doubling sequence.
    pub t_start: f64,
    pub t_back_max: f64,
    pub t_fwd_max: f64,
    /// Convergence threshold on the angle between successive estimates.
    pub tol: f64,
}

impl SplitOptions {
    pub fn new(unstable_dim: usize, t_max: f64) -> Self {
        Self { unstable_dim, t_start: 1.0, t_back_max: t_max, t_fwd_max: t_max, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStep {
    pub horizon: f64,
    pub angle_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Splitting {
    #[serde(serialize_with = "linalg::ser_matrix")]
    pub stable_basis: DMatrix<f64>,
    #[serde(serialize_with = "linalg::ser_matrix")]
    pub unstable_basis: DMatrix<f64>,
    /// Path anchor at which the subspaces were estimated.
    pub at_shift: f64,
    pub unstable_history: Vec<ConvergenceStep>,
    pub stable_history: Vec<ConvergenceStep>,
    /// Smallest principal angle between the two subspaces.
    pub min_angle: f64,
}

impl Splitting {
    pub fn dim(&self) -> usize {
        self.stable_basis.nrows()
    }

    /// Distance from `x` to each subspace, relative to `|x|`.
    pub fn membership(&self, x: &DVector<f64>) -> (f64, f64) {
        let nx = x.norm();
        let off = |b: &DMatrix<f64>| (x - b * (b.transpose() * x)).norm() / nx;
        (off(&self.unstable_basis), off(&self.stable_basis))
    }
}

fn horizons(t_start: f64, t_max: f64, h: f64) -> Result<Vec<usize>, SpectrumError> {
    let first = ((t_start / h).round() as usize).max(1);
    let last = (t_max / h).round() as usize;
    if last < first {
        return Err(SpectrumError::InvalidOptions(format!("horizon range [{t_start}, {t_max}] is empty")));
    }
    let mut out = vec![first];
    while out.last().unwrap() * 2 <= last {
        out.push(out.last().unwrap() * 2);
    }
    if *out.last().unwrap() != last {
        out.push(last);
    }
    Ok(out)
}

/// Refines `estimate(cells)` along the horizon sequence until two successive
/// bases are within `tol`.
fn converge<F>(
    seq: &[usize],
    h: f64,
    tol: f64,
    mut estimate: F,
) -> Result<(DMatrix<f64>, Vec<ConvergenceStep>), SpectrumError>
where
    F: FnMut(usize) -> Result<Option<DMatrix<f64>>, SpectrumError>,
{
    let mut history = Vec::new();
    let mut prev: Option<DMatrix<f64>> = None;
    let mut last_angle = f64::INFINITY;
    for &cells in seq {
        let Some(basis) = estimate(cells)? else { break };
        if let Some(p) = &prev {
            last_angle = linalg::subspace_distance(p, &basis);
            history.push(ConvergenceStep { horizon: cells as f64 * h, angle_change: last_angle });
            if last_angle < tol {
                return Ok((basis, history));
            }
        }
        prev = Some(basis);
    }
    Err(SpectrumError::NoSubspaceConvergence {
        last_angle,
        horizon: history.last().map_or(0.0, |s| s.horizon),
    })
}

/// Leading singular subspace of `j`, or `None` when the matrix is no longer
/// finite or the gap already exceeds double precision.
fn leading(j: &DMatrix<f64>, k: usize) -> Option<DMatrix<f64>> {
    if j.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut b = linalg::leading_left_singular(j, k);
    linalg::normalize_signs(&mut b);
    Some(b)
}

/// Estimates `S(w)` and `U(w)` for the path as currently anchored. `Y` must be
/// tabulated on `[-t_back_max, t_fwd_max]`.
pub fn split_subspaces(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    opts: &SplitOptions,
) -> Result<Splitting, SpectrumError> {
    let n = model.dim();
    let k = opts.unstable_dim;
    let h = model.h();
    if k > n {
        return Err(SpectrumError::InvalidOptions(format!("unstable dimension {k} exceeds {n}")));
    }
    let (unstable_basis, unstable_history) = if k == 0 {
        (DMatrix::zeros(n, 0), Vec::new())
    } else {
        let seq = horizons(opts.t_start, opts.t_back_max, h)?;
        converge(&seq, h, opts.tol, |cells| {
            let back = path.shift_cells(-(cells as i64))?;
            Ok(leading(&orbit_jacobian(model, y, &back, cells)?, k))
        })?
    };
    let (stable_basis, stable_history) = if k == n {
        (DMatrix::zeros(n, 0), Vec::new())
    } else if k == 0 {
        (DMatrix::identity(n, n), Vec::new())
    } else {
        let seq = horizons(opts.t_start, opts.t_fwd_max, h)?;
        let (expanding, history) = converge(&seq, h, opts.tol, |cells| {
            Ok(leading(&orbit_jacobian(model, y, path, cells)?.transpose(), k))
        })?;
        let mut s = linalg::orthogonal_complement(&expanding);
        linalg::normalize_signs(&mut s);
        (s, history)
    };
    let min_angle = linalg::principal_angles(&unstable_basis, &stable_basis)
        .into_iter()
        .fold(std::f64::consts::FRAC_PI_2, f64::min);
    Ok(Splitting {
        stable_basis,
        unstable_basis,
        at_shift: path.anchor(),
        unstable_history,
        stable_history,
        min_angle,
    })
}

/// Orthonormal basis of `DU(t, Y(w), w) * span(basis)`.
pub fn propagate_subspace(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    basis: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>, SpectrumError> {
    let cells = path.cells(t)? as usize;
    let out = propagate_along(model, y, path, basis.clone(), cells, unit_block(path), |_, v| {
        *v = linalg::orthonormalize(v, 1e-300);
        Ok(())
    })?;
    Ok(linalg::orthonormalize(&out, 1e-300))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichotomyParams {
    pub delta1: f64,
    pub delta2: f64,
    pub horizon: f64,
    /// Relative distance below which a candidate counts as a subspace member.
    pub membership_tol: f64,
}

impl DichotomyParams {
    pub fn new(delta1: f64, delta2: f64, horizon: f64) -> Self {
        Self { delta1, delta2, horizon, membership_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SubspaceKind {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomySample {
    pub kind: SubspaceKind,
    /// First time after which the inequality holds through the horizon;
    /// `None` when it still fails at the horizon.
    pub tau: Option<f64>,
    /// `log |T(horizon) x| / horizon`.
    pub final_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyReport {
    pub delta1: f64,
    pub delta2: f64,
    pub horizon: f64,
    pub samples: Vec<DichotomySample>,
    /// Candidates in neither subspace.
    pub rejected: usize,
    pub max_tau_unstable: Option<f64>,
    pub max_tau_stable: Option<f64>,
    pub violations: usize,
}

/// Checks `|T(t) x| >= |x| e^{delta1 t}` on `U(w)` and `|T(t) x| <= |x| e^{-delta2 t}`
/// on `S(w)` for every candidate that lies in one of the subspaces.
pub fn dichotomy_check(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    split: &Splitting,
    params: &DichotomyParams,
    candidates: &[DVector<f64>],
) -> Result<DichotomyReport, SpectrumError> {
    let h = model.h();
    let cells = path.cells(params.horizon)? as usize;
    y.value_at(path, params.horizon)?;
    let mut samples = Vec::new();
    let mut rejected = 0;
    for x in candidates {
        let (off_u, off_s) = split.membership(x);
        let kind = if split.unstable_basis.ncols() > 0 && off_u <= params.membership_tol {
            SubspaceKind::Unstable
        } else if split.stable_basis.ncols() > 0 && off_s <= params.membership_tol {
            SubspaceKind::Stable
        } else {
            rejected += 1;
            continue;
        };
        let x = x.normalize();
        let mut last_fail: Option<usize> = None;
        let mut check = |k: usize, v: &DMatrix<f64>, log_scale: f64| {
            let t = k as f64 * h;
            let g = v.norm().ln() + log_scale;
            let ok = match kind {
                SubspaceKind::Unstable => g >= params.delta1 * t - 1e-12,
                SubspaceKind::Stable => g <= -params.delta2 * t + 1e-12,
            };
            if !ok {
                last_fail = Some(k);
            }
        };
        let o = path.origin_cell();
        // Re-anchor and renormalize every time unit.
        let block = unit_block(path);
        let mut v = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let mut log_scale = 0.0f64;
        check(0, &v, 0.0);
        let mut done = 0;
        while done < cells {
            let len = block.min(cells - done);
            let base = y.value_at(path, done as f64 * h)?;
            let s = log_scale;
            model.integrate(base, path, o + done as i64, len, Some(&mut v), |j, _, t| {
                if j > 0 {
                    check(done + j, t.expect("tangent requested"), s);
                }
            })?;
            done += len;
            let nv = v.norm();
            log_scale += nv.ln();
            v /= nv;
        }
        let tau = match last_fail {
            None => Some(0.0),
            Some(k) if k == cells => None,
            Some(k) => Some((k + 1) as f64 * h),
        };
        samples.push(DichotomySample { kind, tau, final_rate: log_scale / params.horizon });
    }
    let max_tau = |kind| {
        samples.iter().filter(|s| s.kind == kind).map(|s| s.tau).try_fold(0.0f64, |m, t| t.map(|t| m.max(t)))
    };
    let violations = samples.iter().filter(|s| s.tau.is_none()).count();
    Ok(DichotomyReport {
        delta1: params.delta1,
        delta2: params.delta2,
        horizon: params.horizon,
        max_tau_unstable: max_tau(SubspaceKind::Unstable),
        max_tau_stable: max_tau(SubspaceKind::Stable),
        samples,
        rejected,
        violations,
    })
}

/// Basis columns of both subspaces plus `extra` random unit combinations of
/// each, drawn from `seed`.
pub fn subspace_samples(split: &Splitting, extra: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for basis in [&split.unstable_basis, &split.stable_basis] {
        if basis.ncols() == 0 {
            continue;
        }
        out.extend(basis.column_iter().map(|c| c.into_owned()));
        for _ in 0..extra {
            let w = DVector::from_fn(basis.ncols(), |_, _| StandardNormal.sample(&mut rng));
            out.push((basis * w).normalize());
        }
    }
    out
}
