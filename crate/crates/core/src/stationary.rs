//! Stationary random points `Y` with `U(t, Y(w), w) = Y(theta_t w)`.
//!
//! For additive noise and a globally bounded Lipschitz drift, `Y = Z + Y1`
//! where `Y1` is the stationary stochastic convolution and `Z` is the fixed
//! point of
//!
//! ```text
//! M(Z)(w) = int_{-inf}^0 T_{-s} p+ F(Z(theta_s w) + Y1(theta_s w)) ds
//!         - int_0^inf   T_{-s} p- F(Z(theta_s w) + Y1(theta_s w)) ds.
//! ```
//!
//! Both integrals are evaluated with the exponentially fitted quadrature of
//! the time stepper: on stable modes the sum `sum_i T_h^i phi_h g_{k-1-i}`, on
//! unstable modes `-sum_i T_h^{-(i+1)} phi_h g_{k+i}`. These are the only sums
//! for which the discrete orbit of the stepper is exactly stationary, and
//! their weights add up to `1 / mu_n` exactly, so the discrete map inherits the
//! contraction constant `L (1/mu_{m+1} - 1/mu_m)` without quadrature slack.
//! `Z` is kept at every grid point of the shift window extended by the tails,
//! so no interpolation in `s` is needed.
//!
//! Models outside that setting get either a constant equilibrium (no additive
//! noise and `F(x*) = A x*`) or the pullback estimate `U(T, x0, theta_{-T} w)`,
//! accepted only when two initial conditions synchronize.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::noise::{weighted_integral, ExpWeight, NoiseError, PathId, WienerPath};
use crate::semiflow::{FlowError, NoiseCoupling, SemiflowModel};
use crate::snapshot::{self, SnapshotKind};
use crate::spectral_space::SpaceError;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("stationary point unavailable at t = {time}: {reason}")]
pub struct WindowExceeded {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Window(#[from] WindowExceeded),
    #[error("contraction condition violated: L (1/mu_(m+1) - 1/mu_m) = {mu} >= 1")]
    ConditionViolated { mu: f64 },
    #[error("the contraction solver needs a globally bounded Lipschitz drift (got {0}); use the pullback estimator")]
    NotBoundedLipschitz(String),
    #[error("the contraction solver needs additive noise (got {0})")]
    NotAdditive(&'static str),
    #[error("no convergence after {iterations} iterations: last distance {last_distance:e}")]
    NoConvergence { iterations: usize, last_distance: f64 },
    #[error("quadrature too coarse: h * |mu| = {value} exceeds {limit} for mode {mode}")]
    QuadratureTooCoarse { mode: usize, value: f64, limit: f64 },
    #[error("pullback runs did not synchronize: gap {gap:e} exceeds {tol:e}")]
    NotSynchronized { gap: f64, tol: f64 },
    #[error("no equilibrium: {0}")]
    NoEquilibrium(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

/// Grid-aligned shift times `[-t_back, t_fwd]` at which `Y` is tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftWindow {
    pub t_back: f64,
    pub t_fwd: f64,
}

impl ShiftWindow {
    pub fn new(t_back: f64, t_fwd: f64) -> Self {
        Self { t_back, t_fwd }
    }

    pub fn point() -> Self {
        Self { t_back: 0.0, t_fwd: 0.0 }
    }

    /// Relative grid indices of the two ends.
    fn cells(&self, path: &WienerPath) -> Result<(i64, i64), StationaryError> {
        if !(self.t_back >= 0.0 && self.t_fwd >= 0.0) {
            return Err(StationaryError::InvalidOptions(format!(
                "window [-{}, {}] must have non-negative ends",
                self.t_back, self.t_fwd
            )));
        }
        Ok((-path.cells(self.t_back)?, path.cells(self.t_fwd)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StationaryMethod {
    Equilibrium,
    Contraction,
    Pullback,
}

/// Starting field `Z_0` for the contraction iteration, as a function of the
/// shift time relative to the path origin.
pub type InitialField = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub tail_tol: f64,
    /// Upper limit for `h * |mu|` at the two gap-edge modes.
    pub max_step_rate: f64,
    pub initial: Option<InitialField>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, tail_tol: 1e-10, max_step_rate: 0.5, initial: None }
    }
}

impl std::fmt::Debug for FixedPointOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixedPointOptions")
            .field("tol", &self.tol)
            .field("max_iter", &self.max_iter)
            .field("tail_tol", &self.tail_tol)
            .field("max_step_rate", &self.max_step_rate)
            .field("initial", &self.initial.as_ref().map(|_| "custom"))
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct PullbackOptions {
    /// How far before the window the runs start.
    pub t_pull: f64,
    pub initial: [DVector<f64>; 2],
    /// Largest accepted gap between the two runs on the window.
    pub tol: f64,
    /// Gap series sampling stride in steps.
    pub record_every: usize,
}

impl PullbackOptions {
    pub fn new(dim: usize, t_pull: f64) -> Self {
        let a = DVector::zeros(dim);
        let b = DVector::from_iterator(dim, (0..dim).map(|i| 1.0 / (i + 1) as f64));
        Self { t_pull, initial: [a, b], tol: 1e-9, record_every: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    pub iterations: usize,
    /// `sup_k |Z_{j+1}(t_k) - Z_j(t_k)|` per iteration.
    pub iterate_distances: Vec<f64>,
    pub iterate_ratios: Vec<f64>,
    /// Bound on the discarded exponential tails.
    pub truncation_bound: f64,
    /// `(t, |u_a(t) - u_b(t)|)` of the two pullback runs.
    pub sync_gap: Vec<(f64, f64)>,
    pub stationarity_residual: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StationaryPoint {
    method: StationaryMethod,
    /// `None` for a constant point valid on every path.
    path_id: Option<PathId>,
    h: f64,
    first_cell: i64,
    values: Vec<DVector<f64>>,
    convolution_part: Option<Vec<DVector<f64>>>,
    condition_mu: Option<f64>,
    pub report: ResidualReport,
}

impl StationaryPoint {
    /// A deterministic rest point, valid on every path.
    pub fn equilibrium(x: DVector<f64>, h: f64) -> Self {
        Self {
            method: StationaryMethod::Equilibrium,
            path_id: None,
            h,
            first_cell: 0,
            values: vec![x],
            convolution_part: None,
            condition_mu: None,
            report: ResidualReport::default(),
        }
    }

    pub fn method(&self) -> StationaryMethod {
        self.method
    }

    pub fn is_constant(&self) -> bool {
        self.path_id.is_none()
    }

    pub fn condition_mu(&self) -> Option<f64> {
        self.condition_mu
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Absolute grid range `[first, last]` of the tabulated values.
    pub fn abs_range(&self) -> (i64, i64) {
        (self.first_cell, self.first_cell + self.values.len() as i64 - 1)
    }

    /// Window relative to the origin of `path`, or `None` for constants.
    pub fn window_on(&self, path: &WienerPath) -> Option<(f64, f64)> {
        if self.is_constant() {
            return None;
        }
        let (a, b) = self.abs_range();
        let o = path.origin_cell();
        Some(((a - o) as f64 * self.h, (b - o) as f64 * self.h))
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn convolution_part(&self) -> Option<&[DVector<f64>]> {
        self.convolution_part.as_deref()
    }

    /// `Y(theta_t w)` where `w` is the path as currently anchored.
    pub fn value_at(&self, path: &WienerPath, t: f64) -> Result<DVector<f64>, WindowExceeded> {
        if self.is_constant() {
            return Ok(self.values[0].clone());
        }
        let k = path.cells(t).map_err(|e| WindowExceeded { time: t, reason: e.to_string() })?;
        self.value_at_abs(path, path.origin_cell() + k)
            .map_err(|reason| WindowExceeded { time: t, reason })
    }

    fn value_at_abs(&self, path: &WienerPath, abs: i64) -> Result<DVector<f64>, String> {
        if self.is_constant() {
            return Ok(self.values[0].clone());
        }
        if Some(path.id()) != self.path_id {
            return Err("computed for a different noise path".into());
        }
        let (a, b) = self.abs_range();
        if abs < a || abs > b {
            let o = path.origin_cell();
            return Err(format!(
                "tabulated on [{}, {}] relative to the path origin",
                (a - o) as f64 * self.h,
                (b - o) as f64 * self.h
            ));
        }
        Ok(self.values[(abs - a) as usize].clone())
    }

    pub fn convolution_at(&self, path: &WienerPath, t: f64) -> Option<DVector<f64>> {
        let conv = self.convolution_part.as_ref()?;
        let k = path.cells(t).ok()?;
        let i = path.origin_cell() + k - self.first_cell;
        (Some(path.id()) == self.path_id && i >= 0).then(|| conv.get(i as usize).cloned()).flatten()
    }

    pub fn summary(&self) -> StationarySummary {
        let norms: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        StationarySummary {
            method: self.method,
            constant: self.is_constant(),
            points: self.values.len(),
            h: self.h,
            first_cell: self.first_cell,
            condition_mu: self.condition_mu,
            max_norm: norms.iter().copied().fold(0.0, f64::max),
            mean_norm: norms.iter().sum::<f64>() / norms.len() as f64,
            report: self.report.clone(),
        }
    }

    /// Binary record: header, method, grid metadata, values and (optionally)
    /// the convolution part.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = snapshot::header(SnapshotKind::StationaryPoint);
        let method = match self.method {
            StationaryMethod::Equilibrium => 0u64,
            StationaryMethod::Contraction => 1,
            StationaryMethod::Pullback => 2,
        };
        out.extend_from_slice(&method.to_le_bytes());
        let (has_path, id) = match self.path_id {
            Some(id) => (1u64, id),
            None => (0, PathId { seed: 0, h_bits: 0, modes: 0 }),
        };
        for v in [has_path, id.seed, id.h_bits, id.modes as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.h.to_le_bytes());
        out.extend_from_slice(&self.first_cell.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.convolution_part.is_some() as u64).to_le_bytes());
        snapshot::push_f64s(&mut out, [self.condition_mu.unwrap_or(f64::NAN)]);
        for v in &self.values {
            snapshot::push_f64s(&mut out, v.iter().copied());
        }
        if let Some(conv) = &self.convolution_part {
            for v in conv {
                snapshot::push_f64s(&mut out, v.iter().copied());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = snapshot::Reader::new(bytes);
        r.expect_header(SnapshotKind::StationaryPoint)?;
        let method = match r.u64()? {
            0 => StationaryMethod::Equilibrium,
            1 => StationaryMethod::Contraction,
            2 => StationaryMethod::Pullback,
            other => return Err(format!("unknown method tag {other}")),
        };
        let has_path = r.u64()?;
        let id = PathId { seed: r.u64()?, h_bits: r.u64()?, modes: r.u64()? as usize };
        let h = r.f64()?;
        let first_cell = r.u64()? as i64;
        let count = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let has_conv = r.u64()? == 1;
        let mu = r.f64()?;
        let mut read = |n: usize| -> Result<Vec<DVector<f64>>, String> {
            (0..n).map(|_| r.f64_vec(dim).map(DVector::from_vec)).collect()
        };
        let values = read(count)?;
        let convolution_part = if has_conv { Some(read(count)?) } else { None };
        r.finish()?;
        if values.is_empty() {
            return Err("no values".into());
        }
        Ok(Self {
            method,
            path_id: (has_path == 1).then_some(id),
            h,
            first_cell,
            values,
            convolution_part,
            condition_mu: (!mu.is_nan()).then_some(mu),
            report: ResidualReport::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySummary {
    pub method: StationaryMethod,
    pub constant: bool,
    pub points: usize,
    pub h: f64,
    pub first_cell: i64,
    pub condition_mu: Option<f64>,
    pub max_norm: f64,
    pub mean_norm: f64,
    pub report: ResidualReport,
}

/// `L (1/mu_{m+1} - 1/mu_m)`, with a missing side contributing nothing.
pub fn contraction_constant(model: &SemiflowModel, lipschitz: f64) -> f64 {
    let op = model.operator();
    let plus = op.mu_plus().map_or(0.0, |m| 1.0 / m);
    let minus = op.mu_minus().map_or(0.0, |m| -1.0 / m);
    lipschitz * (plus + minus)
}

fn additive_only(model: &SemiflowModel) -> Result<(), StationaryError> {
    match model.coupling() {
        NoiseCoupling::None | NoiseCoupling::Additive(_) => Ok(()),
        other => Err(StationaryError::NotAdditive(other.label())),
    }
}

fn check_resolution(model: &SemiflowModel, limit: f64) -> Result<(), StationaryError> {
    let op = model.operator();
    let m = op.unstable_dim();
    let h = model.h();
    for mode in [m.checked_sub(1), (m < op.mode_count()).then_some(m)].into_iter().flatten() {
        let value = h * op.eigenvalues()[mode].abs();
        if value > limit {
            return Err(StationaryError::QuadratureTooCoarse { mode: mode + 1, value, limit });
        }
    }
    Ok(())
}

/// Number of grid cells after which `exp(-|mu| s)` is below `tail_tol`.
fn tail_cells(rate: Option<f64>, tail_tol: f64, h: f64) -> i64 {
    rate.map_or(0, |r| (crate::noise::tail_length(r, tail_tol) / h).ceil() as i64)
}

/// Per-mode exponential recursions of the discrete variation-of-constants
/// sums over the absolute points `lo..=hi`. `forcing(k)` is the per-cell
/// input on cell `k`; stable modes start from zero at `lo`, unstable modes
/// from zero at `hi`.
fn discrete_convolution(
    model: &SemiflowModel,
    lo: i64,
    hi: i64,
    mut forcing: impl FnMut(i64) -> DVector<f64>,
) -> Vec<DVector<f64>> {
    let n = model.dim();
    let m = model.operator().unstable_dim();
    let e = model.exp_h();
    let len = (hi - lo + 1) as usize;
    let inputs: Vec<DVector<f64>> = (lo..hi).map(&mut forcing).collect();
    let mut out = vec![DVector::zeros(n); len];
    for i in 0..len - 1 {
        let (head, tail) = out.split_at_mut(i + 1);
        let (cur, next) = (&head[i], &mut tail[0]);
        for mode in m..n {
            next[mode] = e[mode] * cur[mode] + inputs[i][mode];
        }
    }
    for i in (0..len - 1).rev() {
        let (head, tail) = out.split_at_mut(i + 1);
        let (cur, next) = (&mut head[i], &tail[0]);
        for mode in 0..m {
            cur[mode] = (next[mode] - inputs[i][mode]) / e[mode];
        }
    }
    out
}

/// `Y1(theta_{t_k} w)` at every window point through the weighted Ito sums
/// of the noise module, scaled by the per-mode stepper factor
/// `c_n e^{mu_n h}`. Returns the values and the tail truncation bound.
pub fn stochastic_convolution(
    model: &SemiflowModel,
    path: &WienerPath,
    window: ShiftWindow,
    tail_tol: f64,
) -> Result<(Vec<DVector<f64>>, f64), StationaryError> {
    additive_only(model)?;
    model.operator().require_splitting()?;
    let n = model.dim();
    let (lo, hi) = window.cells(path)?;
    let b = match model.coupling() {
        NoiseCoupling::Additive(cov) => cov.additive_matrix(n)?,
        _ => return Ok((vec![DVector::zeros(n); (hi - lo + 1) as usize], 0.0)),
    };
    let mu = model.operator().eigenvalues();
    let h = model.h();
    let kappa: Vec<f64> =
        (0..n).map(|i| model.noise_coefficients()[i] * (mu[i] * h).exp()).collect();
    let mut bound: f64 = 0.0;
    let mut values = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        let shifted = path.shift_cells(k)?;
        let mut v = DVector::zeros(n);
        for (i, &mu_i) in mu.iter().enumerate() {
            let (weight, sign) =
                if mu_i > 0.0 { (ExpWeight::past(mu_i), 1.0) } else { (ExpWeight::future(mu_i), -1.0) };
            let mut acc = 0.0;
            let mut tail = 0.0;
            for j in 0..b.ncols() {
                if b[(i, j)] == 0.0 {
                    continue;
                }
                let w = weighted_integral(&shifted, j, weight, tail_tol)?;
                acc += b[(i, j)] * w.value;
                tail += (b[(i, j)] * kappa[i]).abs() * w.truncation_bound;
            }
            v[i] = sign * kappa[i] * acc;
            bound = bound.max(tail);
        }
        values.push(v);
    }
    Ok((values, bound))
}

/// Path extent `(t_back, t_fwd)` around the origin that [`solve_fixed_point`]
/// reads for `window`.
pub fn required_path_extent(
    model: &SemiflowModel,
    window: ShiftWindow,
    opts: &FixedPointOptions,
) -> Result<(f64, f64), StationaryError> {
    let (lipschitz, _) = model
        .nonlinearity()
        .bounded_lipschitz()
        .ok_or_else(|| StationaryError::NotBoundedLipschitz(model.nonlinearity().label()))?;
    let slow = 1.0 - contraction_constant(model, lipschitz).min(1.0 - 1e-12);
    let op = model.operator();
    let h = model.h();
    let back = tail_cells(op.mu_plus(), opts.tail_tol, h) + tail_cells(op.mu_plus().map(|r| r * slow), opts.tail_tol, h);
    let fwd = tail_cells(op.mu_minus(), opts.tail_tol, h) + tail_cells(op.mu_minus().map(|r| r * slow), opts.tail_tol, h);
    Ok((window.t_back + back as f64 * h, window.t_fwd + fwd as f64 * h))
}

/// Fixed point of the contraction map on the window, returning `Y = Z + Y1`.
pub fn solve_fixed_point(
    model: &SemiflowModel,
    path: &WienerPath,
    window: ShiftWindow,
    opts: &FixedPointOptions,
) -> Result<StationaryPoint, StationaryError> {
    additive_only(model)?;
    model.operator().require_splitting()?;
    if !(opts.tol > 0.0) || !(opts.tail_tol > 0.0 && opts.tail_tol < 1.0) || opts.max_iter == 0 {
        return Err(StationaryError::InvalidOptions(format!("{opts:?}")));
    }
    let (lipschitz, sup_norm) = model
        .nonlinearity()
        .bounded_lipschitz()
        .ok_or_else(|| StationaryError::NotBoundedLipschitz(model.nonlinearity().label()))?;
    let mu = contraction_constant(model, lipschitz);
    if mu >= 1.0 {
        return Err(StationaryError::ConditionViolated { mu });
    }
    check_resolution(model, opts.max_step_rate)?;
    if (model.h() - path.h()).abs() > 1e-12 * model.h() {
        return Err(FlowError::GridMismatch { model_h: model.h(), path_h: path.h() }.into());
    }

    let op = model.operator();
    let h = model.h();
    let n = model.dim();
    let (w_lo, w_hi) = window.cells(path)?;
    let o = path.origin_cell();
    let n_s = tail_cells(op.mu_plus(), opts.tail_tol, h);
    let n_u = tail_cells(op.mu_minus(), opts.tail_tol, h);
    // A perturbation at a truncation edge of Z decays only at the rate of the
    // linearized flow, which the drift can weaken to (1 - mu) times the
    // spectral rate.
    let slow = 1.0 - mu;
    let zn_s = tail_cells(op.mu_plus().map(|r| r * slow), opts.tail_tol, h);
    let zn_u = tail_cells(op.mu_minus().map(|r| r * slow), opts.tail_tol, h);
    let (z_lo, z_hi) = (o + w_lo - zn_s, o + w_hi + zn_u);
    let (y_lo, y_hi) = (z_lo - n_s, z_hi + n_u);
    path.check_abs_range(y_lo, y_hi)?;

    let y1 = if matches!(model.coupling(), NoiseCoupling::Additive(_)) {
        let mut scratch = DVector::zeros(n);
        let full = discrete_convolution(model, y_lo, y_hi, |k| {
            scratch.copy_from(&model.additive_increment(path.abs_increments(k)).expect("additive"));
            scratch.clone()
        });
        full[(z_lo - y_lo) as usize..=(z_hi - y_lo) as usize].to_vec()
    } else {
        vec![DVector::zeros(n); (z_hi - z_lo + 1) as usize]
    };

    let mut z: Vec<DVector<f64>> = match &opts.initial {
        Some(f) => (z_lo..=z_hi).map(|k| f((k - o) as f64 * h)).collect(),
        None => vec![DVector::zeros(n); y1.len()],
    };
    if z.iter().any(|v| v.len() != n) {
        return Err(SpaceError::DimensionMismatch { expected: n, found: z[0].len() }.into());
    }

    let phi = model.phi_h().clone();
    let mut report = ResidualReport::default();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = discrete_convolution(model, z_lo, z_hi, |k| {
            let i = (k - z_lo) as usize;
            model.drift(&(&z[i] + &y1[i])).component_mul(&phi)
        });
        let d = next.iter().zip(&z).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if let Some(prev) = report.iterate_distances.last() {
            if *prev > 0.0 {
                report.iterate_ratios.push(d / prev);
            }
        }
        report.iterate_distances.push(d);
        report.iterations += 1;
        z = next;
        if !d.is_finite() {
            break;
        }
        if d < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StationaryError::NoConvergence {
            iterations: report.iterations,
            last_distance: report.iterate_distances.last().copied().unwrap_or(f64::NAN),
        });
    }

    // Tail bounds: truncated forcing integrals of F and of the noise.
    let noise_scale = match model.coupling() {
        NoiseCoupling::Additive(cov) => cov.additive_matrix(n)?.norm(),
        _ => 0.0,
    };
    let f_tail = sup_norm
        * (op.mu_plus().map_or(0.0, |m| 1.0 / m) + op.mu_minus().map_or(0.0, |m| -1.0 / m))
        * opts.tail_tol;
    let w_tail = noise_scale
        * (op.mu_plus().map_or(0.0, |m| 1.0 / (2.0 * m).sqrt())
            + op.mu_minus().map_or(0.0, |m| 1.0 / (-2.0 * m).sqrt()))
        * opts.tail_tol;
    report.truncation_bound = f_tail + w_tail;

    let a = (o + w_lo - z_lo) as usize;
    let b = (o + w_hi - z_lo) as usize;
    let values: Vec<DVector<f64>> = (a..=b).map(|i| &z[i] + &y1[i]).collect();
    let conv: Vec<DVector<f64>> = y1[a..=b].to_vec();
    Ok(StationaryPoint {
        method: StationaryMethod::Contraction,
        path_id: Some(path.id()),
        h,
        first_cell: o + w_lo,
        values,
        convolution_part: Some(conv),
        condition_mu: Some(mu),
        report,
    })
}

/// `Y(theta_t w) ~ U(T, x0, theta_{t-T} w)` on the window, from two initial
/// conditions that must agree within `opts.tol`.
pub fn pullback(
    model: &SemiflowModel,
    path: &WienerPath,
    window: ShiftWindow,
    opts: &PullbackOptions,
) -> Result<StationaryPoint, StationaryError> {
    if !(opts.t_pull > 0.0) || !(opts.tol > 0.0) {
        return Err(StationaryError::InvalidOptions(format!("{opts:?}")));
    }
    let h = model.h();
    let (w_lo, w_hi) = window.cells(path)?;
    let n_pull = path.cells(opts.t_pull)?;
    let o = path.origin_cell();
    let start = o + w_lo - n_pull;
    let total = (n_pull + w_hi - w_lo) as usize;
    let every = opts.record_every.max(1);
    let mut runs: Vec<Vec<DVector<f64>>> = Vec::with_capacity(2);
    let mut sampled: Vec<Vec<DVector<f64>>> = Vec::with_capacity(2);
    for x0 in &opts.initial {
        let mut on_window = Vec::with_capacity((w_hi - w_lo + 1) as usize);
        let mut samples = Vec::new();
        model.integrate(x0.clone(), path, start, total, None, |k, u, _| {
            if k as i64 >= n_pull {
                on_window.push(u.clone());
            }
            if k % every == 0 {
                samples.push(u.clone());
            }
        })?;
        runs.push(on_window);
        sampled.push(samples);
    }
    let mut report = ResidualReport {
        sync_gap: sampled[0]
            .iter()
            .zip(&sampled[1])
            .enumerate()
            .map(|(i, (a, b))| (((i * every) as i64 + start - o) as f64 * h, (a - b).norm()))
            .collect(),
        ..Default::default()
    };
    let gap = runs[0].iter().zip(&runs[1]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    report.notes.push(format!("pullback from t = -{} with two initial conditions", opts.t_pull));
    if !(gap <= opts.tol) {
        return Err(StationaryError::NotSynchronized { gap, tol: opts.tol });
    }
    Ok(StationaryPoint {
        method: StationaryMethod::Pullback,
        path_id: Some(path.id()),
        h,
        first_cell: o + w_lo,
        values: runs.swap_remove(0),
        convolution_part: None,
        condition_mu: None,
        report,
    })
}

/// Newton iteration for `-A x + F(x) = 0`, which is also the fixed point of
/// the noiseless stepper.
pub fn find_equilibrium(
    model: &SemiflowModel,
    guess: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, StationaryError> {
    let mu = DVector::from_column_slice(model.operator().eigenvalues());
    let mut x = guess;
    for _ in 0..max_iter {
        let g = model.drift(&x) - mu.component_mul(&x);
        if g.norm() <= tol {
            return Ok(x);
        }
        let mut j = model.drift_jacobian(&x)?.unwrap_or_else(|| DMatrix::zeros(x.len(), x.len()));
        for i in 0..x.len() {
            j[(i, i)] -= mu[i];
        }
        let dx = j
            .lu()
            .solve(&g)
            .ok_or_else(|| StationaryError::NoEquilibrium("singular linearization".into()))?;
        x -= dx;
    }
    Err(StationaryError::NoEquilibrium(format!("Newton did not reach {tol:e} in {max_iter} steps")))
}

/// A constant stationary point at a rest point `x*`, for models without
/// additive forcing. Multiplicative noise must vanish at `x*`.
pub fn equilibrium_point(
    model: &SemiflowModel,
    x: DVector<f64>,
    tol: f64,
) -> Result<StationaryPoint, StationaryError> {
    let mu = DVector::from_column_slice(model.operator().eigenvalues());
    let residual = (model.drift(&x) - mu.component_mul(&x)).norm();
    if residual > tol {
        return Err(StationaryError::NoEquilibrium(format!("|-A x + F(x)| = {residual:e}")));
    }
    match model.coupling() {
        NoiseCoupling::None => {}
        NoiseCoupling::Additive(cov) if cov.is_zero() => {}
        NoiseCoupling::Additive(_) => {
            return Err(StationaryError::NoEquilibrium("additive noise moves every rest point".into()))
        }
        NoiseCoupling::DiagonalMultiplicative(cov) => {
            if cov.sigma().iter().zip(x.iter()).any(|(s, v)| *s != 0.0 && *v != 0.0) {
                return Err(StationaryError::NoEquilibrium("multiplicative noise does not vanish there".into()));
            }
        }
    }
    let mut p = StationaryPoint::equilibrium(x, model.h());
    p.report.notes.push(format!("rest point with drift residual {residual:e}"));
    Ok(p)
}

/// `max_{t <= horizon} |U(t, Y(w), w) - Y(theta_t w)| / (1 + |Y(theta_t w)|)`.
pub fn stationarity_residual(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    horizon: f64,
) -> Result<f64, StationaryError> {
    let cells = path.cells(horizon)?;
    if cells < 0 {
        return Err(StationaryError::InvalidOptions(format!("negative horizon {horizon}")));
    }
    y.value_at(path, horizon)?;
    let y0 = y.value_at(path, 0.0)?;
    let o = path.origin_cell();
    let mut worst: f64 = 0.0;
    let mut failure = None;
    model.integrate(y0, path, o, cells as usize, None, |k, u, _| {
        match y.value_at_abs(path, o + k as i64) {
            Ok(target) => {
                let r = (u - &target).norm() / (1.0 + target.norm());
                worst = worst.max(if r.is_nan() { f64::INFINITY } else { r });
            }
            Err(reason) => failure = Some(WindowExceeded { time: k as f64 * model.h(), reason }),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(worst)
}
