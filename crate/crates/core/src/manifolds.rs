//! Local stable and unstable manifolds of a hyperbolic stationary point.
//!
//! Stable membership is decided directly by the decay envelope
//! `|Z(n, x, w)| <= beta1 e^{(lambda_{i0} + eps1) n}` at integer times. Points
//! on the stable manifold are produced by shooting: the unstable coordinates
//! of a trial point are corrected by Newton's method until the orbit carries
//! no unstable component at a finite horizon.
//!
//! Unstable points are pushed forward from `theta_{-T} w` along the unstable
//! subspace there, recording the integer-time orbit. That orbit is the
//! history process of the resulting point.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, ser_matrix, ser_vector, ser_vectors, LineFit};
use crate::noise::{NoiseError, WienerPath};
use crate::semiflow::{FlowError, SemiflowModel};
use crate::spectrum::{propagate_subspace, GapEdges, SpectrumError, Splitting};
use crate::stationary::{StationaryPoint, WindowExceeded};

/// Distances below this are treated as numerically zero in rate fits.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Window(#[from] WindowExceeded),
    #[error("invalid manifold parameters: {0}")]
    InvalidParams(String),
    #[error("point lies {distance:e} from Y, outside the ball of radius {radius:e}")]
    OutsideBall { distance: f64, radius: f64 },
    #[error("series too short: {points} usable points above the noise floor, need 10")]
    SeriesTooShort { points: usize },
    #[error("degenerate pairs: {0}")]
    DegeneratePairs(String),
    #[error("no unstable directions")]
    NoUnstableDirections,
    #[error("all unstable seeds rejected after {attempts} offset reductions")]
    AllSeedsRejected { attempts: usize },
    #[error("history chain of depth {depth} is too short, need 10")]
    ChainTooShort { depth: usize },
    #[error("{manifold} manifold: {have} samples near Y, need {need}")]
    InsufficientSamples { manifold: &'static str, have: usize, need: usize },
    #[error("{manifold} manifold graph fit is ill-conditioned")]
    FitIllConditioned { manifold: &'static str },
    #[error("shooting did not converge at horizon {horizon}: residual {residual:e}")]
    ShootingFailed { horizon: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManifoldParams {
    pub rho1: f64,
    pub rho2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// `lambda_{i0}`, or a configured negative rate when there are no negative exponents.
    pub lambda_stable: f64,
    /// `lambda_{i0-1}`, or a configured positive rate when there are no positive exponents.
    pub lambda_unstable: f64,
    /// Integer horizon of the stable envelope test.
    pub n_max: usize,
    /// Integer pushforward depth for unstable points.
    pub t_back: usize,
    /// Requested history depth; chains are truncated at `t_back`.
    pub history_depth: usize,
    /// Spacing of the decay-evidence series, in time units.
    pub sample_stride: f64,
}

impl ManifoldParams {
    /// Defaults from the gap edges: `eps` at half the distance from each
    /// edge to zero, `rho = 0.1 * scale` (capped below 1/2) with
    /// `scale = min(|lambda_{i0}|, lambda_{i0-1})`, and `beta = min(2 rho, 1)`.
    /// `fallback_rate` stands in for an infinite edge.
    pub fn from_gap(gap: &GapEdges, n_max: usize, t_back: usize, fallback_rate: f64) -> Result<Self, ManifoldError> {
        if !(fallback_rate > 0.0) {
            return Err(ManifoldError::InvalidParams(format!("fallback rate {fallback_rate} must be positive")));
        }
        let ls = if gap.lambda_i0.is_finite() { gap.lambda_i0 } else { -fallback_rate };
        let lu = if gap.lambda_i0_minus_1.is_finite() { gap.lambda_i0_minus_1 } else { fallback_rate };
        let scale = (-ls).min(lu);
        let rho = (0.1 * scale).min(0.45);
        let beta = (2.0 * rho).min(1.0);
        let params = Self {
            rho1: rho,
            rho2: rho,
            beta1: beta,
            beta2: beta,
            eps1: -ls / 2.0,
            eps2: lu / 2.0,
            lambda_stable: ls,
            lambda_unstable: lu,
            n_max,
            t_back,
            history_depth: t_back,
            sample_stride: 0.1,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ManifoldError> {
        let bad = |m: String| Err(ManifoldError::InvalidParams(m));
        if !(self.lambda_stable < 0.0) || !(self.lambda_unstable > 0.0) {
            return bad(format!("gap edges {} and {} must straddle zero", self.lambda_stable, self.lambda_unstable));
        }
        if !(self.eps1 > 0.0 && self.eps1 < -self.lambda_stable) {
            return bad(format!("eps1 = {} must lie in (0, {})", self.eps1, -self.lambda_stable));
        }
        if !(self.eps2 > 0.0 && self.eps2 < self.lambda_unstable) {
            return bad(format!("eps2 = {} must lie in (0, {})", self.eps2, self.lambda_unstable));
        }
        for (name, rho, beta) in [("1", self.rho1, self.beta1), ("2", self.rho2, self.beta2)] {
            if !(rho > 0.0 && beta > rho && beta <= 1.0) {
                return bad(format!("need 0 < rho{name} < beta{name} <= 1, got rho = {rho}, beta = {beta}"));
            }
        }
        if self.n_max == 0 || self.t_back == 0 {
            return bad("n_max and t_back must be at least 1".into());
        }
        if !(self.sample_stride > 0.0) {
            return bad(format!("sample stride {} must be positive", self.sample_stride));
        }
        Ok(())
    }

    /// Stable envelope `beta1 e^{(lambda_{i0} + eps1) n}`.
    pub fn stable_envelope(&self, n: f64) -> f64 {
        self.beta1 * ((self.lambda_stable + self.eps1) * n).exp()
    }

    /// History envelope `beta2 e^{-(lambda_{i0-1} - eps2) n}`.
    pub fn unstable_envelope(&self, n: f64) -> f64 {
        self.beta2 * (-(self.lambda_unstable - self.eps2) * n).exp()
    }

    fn stride_cells(&self, h: f64) -> usize {
        ((self.sample_stride / h).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    In,
    Out,
    /// First envelope failure past `0.8 * n_max`: inconclusive at this horizon.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEvidence {
    pub times: Vec<f64>,
    /// `|Z(t, x - Y(w), w)|` on the sampling stride.
    pub distances: Vec<f64>,
    /// Integer steps tested against the envelope.
    pub checked_steps: usize,
    pub first_failure: Option<usize>,
}

impl DecayEvidence {
    pub fn log_distances(&self) -> Vec<f64> {
        self.distances.iter().map(|d| d.ln()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub evidence: DecayEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub std_error: f64,
    pub points: usize,
}

impl RateEstimate {
    fn from_fit(fit: LineFit, points: usize) -> Self {
        Self { rate: fit.slope, std_error: fit.slope_std_error, points }
    }
}

fn ensure_in_ball(x: &DVector<f64>, center: &DVector<f64>, radius: f64) -> Result<(), ManifoldError> {
    let distance = (x - center).norm();
    if distance > radius * (1.0 + 1e-12) {
        return Err(ManifoldError::OutsideBall { distance, radius });
    }
    Ok(())
}

/// Tests the stable envelope at `n = 1..=n_max` for the orbit of `x`.
pub fn classify_stable(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    x: &DVector<f64>,
    params: &ManifoldParams,
) -> Result<Classification, ManifoldError> {
    let h = model.h();
    let y0 = y.value_at(path, 0.0)?;
    ensure_in_ball(x, &y0, params.rho1)?;
    let per_unit = path.cells(1.0)? as usize;
    let stride = params.stride_cells(h);
    let o = path.origin_cell();
    let mut evidence = DecayEvidence {
        times: vec![0.0],
        distances: vec![(x - &y0).norm()],
        checked_steps: 0,
        first_failure: None,
    };
    let mut u = x.clone();
    for n in 1..=params.n_max {
        let base = (n - 1) * per_unit;
        let mut recorded = Vec::new();
        u = model.integrate(u, path, o + base as i64, per_unit, None, |k, s, _| {
            if k > 0 && (base + k).is_multiple_of(stride) {
                recorded.push((base + k, s.clone()));
            }
        })?;
        for (k, s) in recorded {
            let t = k as f64 * h;
            evidence.times.push(t);
            evidence.distances.push((s - y.value_at(path, t)?).norm());
        }
        evidence.checked_steps = n;
        let d = (&u - y.value_at(path, n as f64)?).norm();
        if !(d <= params.stable_envelope(n as f64)) {
            evidence.first_failure = Some(n);
            break;
        }
    }
    let verdict = match evidence.first_failure {
        None => Verdict::In,
        Some(n) if n as f64 > 0.8 * params.n_max as f64 => Verdict::Boundary,
        Some(_) => Verdict::Out,
    };
    Ok(Classification { verdict, evidence })
}

/// Regression slope of `log |Z|` against time over the longest prefix above
/// the noise floor.
pub fn stable_decay_rate(evidence: &DecayEvidence) -> Result<RateEstimate, ManifoldError> {
    let len = evidence.distances.iter().take_while(|d| **d >= NOISE_FLOOR && d.is_finite()).count();
    if len < 10 {
        return Err(ManifoldError::SeriesTooShort { points: len });
    }
    let logs: Vec<f64> = evidence.distances[..len].iter().map(|d| d.ln()).collect();
    let fit = linalg::fit_line(&evidence.times[..len], &logs).ok_or(ManifoldError::SeriesTooShort { points: len })?;
    Ok(RateEstimate::from_fit(fit, len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub estimate: RateEstimate,
    /// `lambda_{i0} + eps1`.
    pub envelope_rate: f64,
    /// Whether the estimate stays below the envelope rate within three standard errors.
    pub within_envelope: bool,
}

/// Growth rate of `sup_pairs |U(t, x1) - U(t, x2)| / |x1 - x2|`.
pub fn stable_lipschitz_exponent(
    model: &SemiflowModel,
    path: &WienerPath,
    pairs: &[(DVector<f64>, DVector<f64>)],
    horizon: f64,
    params: &ManifoldParams,
) -> Result<LipschitzReport, ManifoldError> {
    if pairs.len() < 5 {
        return Err(ManifoldError::DegeneratePairs(format!("{} pairs given, need 5", pairs.len())));
    }
    if let Some((i, _)) = pairs.iter().enumerate().find(|(_, (a, b))| !((a - b).norm() > 1e-8)) {
        return Err(ManifoldError::DegeneratePairs(format!("pair {i} is closer than 1e-8")));
    }
    let h = model.h();
    let cells = path.cells(horizon)? as usize;
    let stride = params.stride_cells(h);
    let o = path.origin_cell();
    let series: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|(a, b)| -> Result<Vec<f64>, ManifoldError> {
            let orbit = |x: &DVector<f64>| -> Result<Vec<DVector<f64>>, ManifoldError> {
                let mut out = Vec::new();
                model.integrate(x.clone(), path, o, cells, None, |k, s, _| {
                    if k % stride == 0 {
                        out.push(s.clone());
                    }
                })?;
                Ok(out)
            };
            let (ua, ub) = (orbit(a)?, orbit(b)?);
            Ok(ua.iter().zip(&ub).map(|(p, q)| (p - q).norm()).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut times = Vec::new();
    let mut logs = Vec::new();
    for k in 0..series[0].len() {
        let dists: Vec<f64> = series.iter().map(|s| s[k]).collect();
        if dists.iter().any(|d| !(*d >= NOISE_FLOOR) || !d.is_finite()) {
            break;
        }
        let sup = pairs
            .iter()
            .zip(&dists)
            .map(|((a, b), d)| d / (a - b).norm())
            .fold(0.0, f64::max);
        times.push((k * stride) as f64 * h);
        logs.push(sup.ln());
    }
    if times.len() < 10 {
        return Err(ManifoldError::SeriesTooShort { points: times.len() });
    }
    let fit = linalg::fit_line(&times, &logs).ok_or(ManifoldError::SeriesTooShort { points: times.len() })?;
    let estimate = RateEstimate::from_fit(fit, times.len());
    let envelope_rate = params.lambda_stable + params.eps1;
    Ok(LipschitzReport {
        estimate,
        envelope_rate,
        within_envelope: estimate.rate <= envelope_rate + 3.0 * estimate.std_error,
    })
}

/// Unit directions in a `dim`-dimensional coordinate space, paired with
/// radii spread over `(0, max_radius]`. One-dimensional spaces alternate signs.
fn seed_offsets(dim: usize, count: usize, max_radius: f64, seed: u64) -> Vec<(DVector<f64>, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let levels = count.div_ceil(2).max(1);
    (0..count)
        .map(|i| {
            let w = if dim == 1 {
                DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng)).normalize()
            };
            (w, max_radius * ((i / 2) + 1) as f64 / levels as f64)
        })
        .collect()
}

/// Points on the local stable manifold at `w`, spread over radii up to
/// `rho1 / 2` along `S(w)`.
///
/// With unstable directions present, each trial point `Y + S a + U b` has
/// its coordinates `b` corrected so that the unstable component of
/// `Z(n, ., w)` vanishes, for integer horizons doubling up to
/// `min(n_max, ln(1e8) / lambda_{i0-1})`.
pub fn sample_stable(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    split: &Splitting,
    params: &ManifoldParams,
    n_points: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, ManifoldError> {
    let s_basis = &split.stable_basis;
    let u_basis = &split.unstable_basis;
    if s_basis.ncols() == 0 {
        return Ok(Vec::new());
    }
    let y0 = y.value_at(path, 0.0)?;
    let offsets = seed_offsets(s_basis.ncols(), n_points, 0.5 * params.rho1, seed);
    if u_basis.ncols() == 0 {
        return Ok(offsets.iter().map(|(w, r)| &y0 + s_basis * w * *r).collect());
    }
    let target = ((1e8f64).ln() / params.lambda_unstable).ceil().max(1.0) as usize;
    let n_h = target.min(params.n_max);
    let mut horizons = vec![1usize];
    while *horizons.last().unwrap() < n_h {
        horizons.push((horizons.last().unwrap() * 2).min(n_h));
    }
    // Unstable directions carried to each horizon along Y.
    let carried: Vec<(usize, DMatrix<f64>, DVector<f64>)> = horizons
        .iter()
        .map(|&n| -> Result<_, ManifoldError> {
            let un = propagate_subspace(model, y, path, u_basis, n as f64)?;
            Ok((n, un, y.value_at(path, n as f64)?))
        })
        .collect::<Result<_, _>>()?;
    offsets
        .par_iter()
        .map(|(w, r)| {
            let base = &y0 + s_basis * w * *r;
            let mut b = DVector::zeros(u_basis.ncols());
            for (n, un, yn) in &carried {
                let t = *n as f64;
                let mut residual = f64::INFINITY;
                let mut converged = false;
                for _ in 0..50 {
                    let x = &base + u_basis * &b;
                    let (xn, j) = model.flow_frame(t, &x, u_basis.clone(), path)?;
                    let g = un.transpose() * (xn - yn);
                    residual = g.norm();
                    let jb = un.transpose() * j;
                    let db = jb.lu().solve(&g).ok_or(ManifoldError::ShootingFailed { horizon: *n, residual })?;
                    b -= &db;
                    if db.norm() <= 1e-15 * (1.0 + b.norm()) {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(ManifoldError::ShootingFailed { horizon: *n, residual });
                }
            }
            Ok(&base + u_basis * &b)
        })
        .collect()
}

/// Recorded integer-time orbit ending at an unstable sample:
/// `points[n] = y(-n, w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryChain {
    #[serde(serialize_with = "ser_vectors")]
    pub points: Vec<DVector<f64>>,
    /// `|y(-n, w) - Y(theta_{-n} w)|`.
    pub distances: Vec<f64>,
    /// `|U(1, y(-n, w), theta_{-n} w) - y(-(n-1), w)|` for `n = 1..=depth`.
    pub consistency: Vec<f64>,
    /// Set when the requested depth exceeded the pushforward depth.
    pub truncated: bool,
}

impl HistoryChain {
    pub fn depth(&self) -> usize {
        self.points.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnstableSample {
    #[serde(serialize_with = "ser_vector")]
    pub point: DVector<f64>,
    pub chain: HistoryChain,
    pub backward_rate: Option<RateEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnstableBuild {
    pub samples: Vec<UnstableSample>,
    pub rejected: usize,
    /// Number of times all offsets were halved before any seed was accepted.
    pub shrinks: usize,
}

const MAX_SHRINKS: usize = 12;
const AIM_ITERATIONS: usize = 20;

/// Pushes seeds `Y(theta_{-T} w) + s U(theta_{-T} w) v` forward by `T = t_back`.
/// Offsets `s` are sized by the linearization so that the images spread over
/// radii up to `rho2 / 2`; seeds whose chains leave the history envelope or
/// whose images leave `B(Y(w), rho2)` are rejected.
pub fn build_unstable(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    split_back: &Splitting,
    params: &ManifoldParams,
    n_points: usize,
    seed: u64,
) -> Result<UnstableBuild, ManifoldError> {
    let h = model.h();
    let t_back = params.t_back;
    let k = split_back.unstable_basis.ncols();
    if k == 0 {
        return Err(ManifoldError::NoUnstableDirections);
    }
    if ((split_back.at_shift - (path.anchor() - t_back as f64)) / h).abs() > 0.5 {
        return Err(ManifoldError::InvalidParams(format!(
            "splitting estimated at shift {}, need {}",
            split_back.at_shift,
            path.anchor() - t_back as f64
        )));
    }
    let back = path.shift(-(t_back as f64))?;
    let yb = y.value_at(&back, 0.0)?;
    let basis = &split_back.unstable_basis;
    let y0 = y.value_at(path, 0.0)?;
    let (_, gain) = model.flow_frame(t_back as f64, &yb, basis.clone(), &back)?;
    let image = linalg::orthonormalize(&gain, 1e-300);
    if image.ncols() < k {
        return Err(ManifoldError::InvalidParams("unstable subspace collapses under the flow".into()));
    }
    let depth = params.history_depth.min(t_back);
    let truncated = params.history_depth > t_back;
    let targets: Vec<DVector<f64>> = (0..=depth).map(|n| y.value_at(path, -(n as f64))).collect::<Result<_, _>>()?;
    let seeds = seed_offsets(k, n_points, 0.5 * params.rho2, seed);
    let per_unit = path.cells(1.0)? as usize;

    for shrink in 0..=MAX_SHRINKS {
        let scale = 0.5f64.powi(shrink as i32);
        let results: Vec<Option<UnstableSample>> = seeds
            .par_iter()
            .map(|(w, r)| -> Result<Option<UnstableSample>, ManifoldError> {
                let s = scale * r / (&gain * w).norm();
                let target = image.transpose() * (&gain * w) * s;
                let aimed = aim_unstable(model, &back, &yb, &y0, basis, &image, &target, w * s, t_back, per_unit)?;
                let Some(mut orbit) = aimed else {
                    return Ok(None);
                };
                orbit.truncate(depth + 1);
                let distances: Vec<f64> = orbit.iter().zip(&targets).map(|(p, t)| (p - t).norm()).collect();
                if distances[0] > params.rho2
                    || distances.iter().enumerate().any(|(n, d)| !(*d <= params.unstable_envelope(n as f64)))
                {
                    return Ok(None);
                }
                let consistency = (1..=depth)
                    .map(|n| -> Result<f64, ManifoldError> {
                        let from = path.shift(-(n as f64))?;
                        Ok((model.flow(1.0, &orbit[n], &from)? - &orbit[n - 1]).norm())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let chain = HistoryChain { points: orbit, distances, consistency, truncated };
                let backward_rate = unstable_backward_rate(&chain).ok();
                Ok(Some(UnstableSample { point: chain.points[0].clone(), chain, backward_rate }))
            })
            .collect::<Result<_, _>>()?;
        let rejected = results.iter().filter(|r| r.is_none()).count();
        let samples: Vec<UnstableSample> = results.into_iter().flatten().collect();
        if !samples.is_empty() {
            return Ok(UnstableBuild { samples, rejected, shrinks: shrink });
        }
    }
    Err(ManifoldError::AllSeedsRejected { attempts: MAX_SHRINKS })
}

/// Newton iteration on the coordinates `c` of `z = Y(theta_{-T} w) + B c`
/// so that the image after `T` units has unstable coordinates `target`
/// relative to `Y(w)`. Small errors in the tabulated `Y` are amplified along
/// the unstable directions, so aiming with the linear gain alone misses the
/// requested radius. The image is placed to a relative 1e-3. Returns the
/// integer-time orbit, or `None` without convergence.
#[allow(clippy::too_many_arguments)]
fn aim_unstable(
    model: &SemiflowModel,
    back: &WienerPath,
    yb: &DVector<f64>,
    y0: &DVector<f64>,
    basis: &DMatrix<f64>,
    image: &DMatrix<f64>,
    target: &DVector<f64>,
    mut c: DVector<f64>,
    t_back: usize,
    per_unit: usize,
) -> Result<Option<Vec<DVector<f64>>>, ManifoldError> {
    let tol = 1e-3 * target.norm();
    for _ in 0..AIM_ITERATIONS {
        let mut orbit = Vec::with_capacity(t_back + 1);
        let mut tangent = basis.clone();
        let end = model.integrate(yb + basis * &c, back, back.origin_cell(), t_back * per_unit, Some(&mut tangent), |j, u, _| {
            if j % per_unit == 0 {
                orbit.push(u.clone());
            }
        })?;
        if !end.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        let residual = image.transpose() * (&end - y0) - target;
        if residual.norm() <= tol {
            orbit.reverse();
            return Ok(Some(orbit));
        }
        let Some(step) = (image.transpose() * &tangent).lu().solve(&residual) else {
            return Ok(None);
        };
        c -= step;
    }
    Ok(None)
}

fn chain_fit(distances: &[f64]) -> Result<RateEstimate, ManifoldError> {
    let depth = distances.len().saturating_sub(1);
    if depth < 10 {
        return Err(ManifoldError::ChainTooShort { depth });
    }
    let (n, logs): (Vec<f64>, Vec<f64>) = distances
        .iter()
        .enumerate()
        .filter(|(_, d)| **d >= NOISE_FLOOR && d.is_finite())
        .map(|(n, d)| (n as f64, d.ln()))
        .unzip();
    if n.len() < 10 {
        return Err(ManifoldError::SeriesTooShort { points: n.len() });
    }
    let fit = linalg::fit_line(&n, &logs).ok_or(ManifoldError::SeriesTooShort { points: n.len() })?;
    Ok(RateEstimate::from_fit(fit, n.len()))
}

/// Slope of `log |y(-n, w) - Y(theta_{-n} w)|` against `n`.
pub fn unstable_backward_rate(chain: &HistoryChain) -> Result<RateEstimate, ManifoldError> {
    chain_fit(&chain.distances)
}

/// Slope of `log |y1(-n, w) - y2(-n, w)|` against `n`.
pub fn unstable_pairwise_rate(a: &HistoryChain, b: &HistoryChain) -> Result<RateEstimate, ManifoldError> {
    let d: Vec<f64> = a.points.iter().zip(&b.points).map(|(p, q)| (p - q).norm()).collect();
    chain_fit(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableSample {
    #[serde(serialize_with = "ser_vector")]
    pub point: DVector<f64>,
    pub verdict: Verdict,
    pub rate: Option<RateEstimate>,
    pub first_failure: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceRow {
    pub t: f64,
    pub inside: usize,
    pub outside: usize,
    pub boundary: usize,
    /// `inside / (inside + outside)`; boundary verdicts are excluded.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub rows: Vec<InvarianceRow>,
    /// Smallest listed `t` with fraction 1.
    pub tau1: Option<f64>,
}

/// Graph fit `r = L a + Q(a)` of a manifold over its tangent candidate, with
/// `a` the tangent coordinates and `r` the complementary ones of `x - Y(w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphFit {
    pub dim: usize,
    pub samples_used: usize,
    pub radius: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub linear: DMatrix<f64>,
    /// Columns follow the monomials `a_i a_j`, `i <= j`, in lexicographic order.
    #[serde(serialize_with = "ser_matrix")]
    pub quadratic: DMatrix<f64>,
    pub residual_rms: f64,
    pub condition: f64,
    /// Whether cubic monomials were included in the fit.
    pub cubic_terms: bool,
    /// `|L_c| <= 1e-3 |Q_c| radius + 1e-9` for every output row `c`.
    pub tangent_ok: bool,
    #[serde(serialize_with = "ser_matrix")]
    pub tangent_basis: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangencyReport {
    pub stable: Option<GraphFit>,
    pub unstable: Option<GraphFit>,
    pub stable_dim: usize,
    pub unstable_dim: usize,
    pub dims_sum_ok: bool,
    pub min_angle: f64,
    pub angle_floor: f64,
    pub transversal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldAtlas {
    #[serde(serialize_with = "ser_vector")]
    pub anchor: DVector<f64>,
    pub shift: f64,
    pub params: ManifoldParams,
    pub stable_samples: Vec<StableSample>,
    pub stable_rejected: usize,
    pub unstable_samples: Vec<UnstableSample>,
    pub unstable_rejected: usize,
    pub offset_shrinks: usize,
    pub tangent_fit: Option<TangencyReport>,
    pub invariance: Option<InvarianceReport>,
}

impl ManifoldAtlas {
    /// `verdict,c1..cN` for every stable sample.
    pub fn stable_csv(&self) -> String {
        let n = self.anchor.len();
        let mut out = String::from("verdict");
        for i in 1..=n {
            out.push_str(&format!(",c{i}"));
        }
        out.push('\n');
        for s in &self.stable_samples {
            out.push_str(&format!("{:?}", s.verdict).to_lowercase());
            for v in s.point.iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// `sample,n,c1..cN` for every point of every history chain.
    pub fn unstable_csv(&self) -> String {
        let n = self.anchor.len();
        let mut out = String::from("sample,n");
        for i in 1..=n {
            out.push_str(&format!(",c{i}"));
        }
        out.push('\n');
        for (i, s) in self.unstable_samples.iter().enumerate() {
            for (depth, p) in s.chain.points.iter().enumerate() {
                out.push_str(&format!("{i},{depth}"));
                for v in p.iter() {
                    out.push_str(&format!(",{v:.16e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Samples both manifolds at `w`. Stable samples that fail the envelope are
/// counted as rejected; `split_back` is required when `U(w)` is nontrivial.
#[allow(clippy::too_many_arguments)]
pub fn build_atlas(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    split: &Splitting,
    split_back: Option<&Splitting>,
    params: &ManifoldParams,
    n_points: usize,
    seed: u64,
) -> Result<ManifoldAtlas, ManifoldError> {
    params.validate()?;
    let anchor = y.value_at(path, 0.0)?;
    let candidates = sample_stable(model, y, path, split, params, n_points, seed)?;
    let classified: Vec<StableSample> = candidates
        .par_iter()
        .map(|x| -> Result<StableSample, ManifoldError> {
            let c = classify_stable(model, y, path, x, params)?;
            Ok(StableSample {
                point: x.clone(),
                verdict: c.verdict,
                rate: stable_decay_rate(&c.evidence).ok(),
                first_failure: c.evidence.first_failure,
            })
        })
        .collect::<Result<_, _>>()?;
    let (stable_samples, rejected): (Vec<_>, Vec<_>) = classified.into_iter().partition(|s| s.verdict == Verdict::In);
    let (unstable_samples, unstable_rejected, offset_shrinks) = if split.unstable_basis.ncols() == 0 {
        (Vec::new(), 0, 0)
    } else {
        let back = split_back.ok_or_else(|| {
            ManifoldError::InvalidParams("a splitting at the pushforward start is required".into())
        })?;
        let built = build_unstable(model, y, path, back, params, n_points, seed.wrapping_add(1))?;
        (built.samples, built.rejected, built.shrinks)
    };
    Ok(ManifoldAtlas {
        anchor,
        shift: path.anchor(),
        params: *params,
        stable_samples,
        stable_rejected: rejected.len(),
        unstable_samples,
        unstable_rejected,
        offset_shrinks,
        tangent_fit: None,
        invariance: None,
    })
}

/// Maps each "in" stable sample forward by `t` and re-classifies it against
/// the envelope anchored at `Y(theta_t w)`.
pub fn stable_invariance_check(
    model: &SemiflowModel,
    y: &StationaryPoint,
    path: &WienerPath,
    atlas: &ManifoldAtlas,
    t_list: &[f64],
) -> Result<InvarianceReport, ManifoldError> {
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        path.cells(t)?;
        let shifted = path.shift(t)?;
        let verdicts: Vec<Verdict> = atlas
            .stable_samples
            .par_iter()
            .filter(|s| s.verdict == Verdict::In)
            .map(|s| -> Result<Verdict, ManifoldError> {
                let xt = model.flow(t, &s.point, path)?;
                match classify_stable(model, y, &shifted, &xt, &atlas.params) {
                    Ok(c) => Ok(c.verdict),
                    Err(ManifoldError::OutsideBall { .. }) => Ok(Verdict::Out),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, _>>()?;
        let count = |v| verdicts.iter().filter(|x| **x == v).count();
        let (inside, outside, boundary) = (count(Verdict::In), count(Verdict::Out), count(Verdict::Boundary));
        let fraction = if inside + outside == 0 { 1.0 } else { inside as f64 / (inside + outside) as f64 };
        rows.push(InvarianceRow { t, inside, outside, boundary, fraction });
    }
    let tau1 = rows.iter().find(|r| r.fraction == 1.0).map(|r| r.t);
    Ok(InvarianceReport { rows, tau1 })
}

fn fit_graph(
    manifold: &'static str,
    anchor: &DVector<f64>,
    points: &[&DVector<f64>],
    tangent: &DMatrix<f64>,
    radius_limit: f64,
) -> Result<GraphFit, ManifoldError> {
    let m = tangent.ncols();
    let complement = {
        let mut c = linalg::orthogonal_complement(tangent);
        linalg::normalize_signs(&mut c);
        c
    };
    let codim = complement.ncols();
    let near: Vec<DVector<f64>> =
        points.iter().map(|p| *p - anchor).filter(|d| d.norm() <= radius_limit).collect();
    let quad = m * (m + 1) / 2;
    // A full-dimensional manifold is the ball itself: nothing to fit.
    if codim == 0 {
        return Ok(GraphFit {
            dim: m,
            samples_used: near.len(),
            radius: near.iter().map(|d| d.norm()).fold(0.0, f64::max),
            linear: DMatrix::zeros(0, m),
            quadratic: DMatrix::zeros(0, quad),
            residual_rms: 0.0,
            condition: 1.0,
            cubic_terms: false,
            tangent_ok: true,
            tangent_basis: tangent.clone(),
        });
    }
    let need = (2 * m).max(m + quad);
    if near.len() < need {
        return Err(ManifoldError::InsufficientSamples { manifold, have: near.len(), need });
    }
    let a: Vec<DVector<f64>> = near.iter().map(|d| tangent.transpose() * d).collect();
    let r: Vec<DVector<f64>> = near.iter().map(|d| complement.transpose() * d).collect();
    let radius = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut monomials: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    monomials.extend(index_tuples(m, 2));
    // Odd cubic terms leak into the linear coefficient on symmetric samples;
    // fit them too whenever the samples overdetermine the larger model.
    let cubic = index_tuples(m, 3);
    let cubic_terms = near.len() > monomials.len() + cubic.len();
    if cubic_terms {
        monomials.extend(cubic);
    }
    let design = DMatrix::from_fn(near.len(), monomials.len(), |row, col| {
        monomials[col].iter().map(|&i| a[row][i]).product()
    });
    let mut linear = DMatrix::zeros(codim, m);
    let mut quadratic = DMatrix::zeros(codim, quad);
    let mut condition = 1.0f64;
    let mut sq = 0.0;
    for c in 0..codim {
        let target = DVector::from_iterator(near.len(), r.iter().map(|v| v[c]));
        let (coef, cond) =
            linalg::least_squares(&design, &target, 1e-10).ok_or(ManifoldError::FitIllConditioned { manifold })?;
        condition = condition.min(cond);
        sq += (&design * &coef - &target).norm_squared();
        linear.row_mut(c).copy_from(&coef.rows(0, m).transpose());
        quadratic.row_mut(c).copy_from(&coef.rows(m, quad).transpose());
    }
    let tangent_ok = (0..codim)
        .all(|c| linear.row(c).norm() <= 1e-3 * quadratic.row(c).norm() * radius + 1e-9);
    let tangent_basis = linalg::orthonormalize(&(tangent + &complement * &linear), 1e-12);
    Ok(GraphFit {
        dim: m,
        samples_used: near.len(),
        radius,
        linear,
        quadratic,
        residual_rms: (sq / (near.len() * codim) as f64).sqrt(),
        condition,
        cubic_terms,
        tangent_ok,
        tangent_basis,
    })
}

/// Nondecreasing index tuples of length `degree` over `0..m`, in
/// lexicographic order.
fn index_tuples(m: usize, degree: usize) -> Vec<Vec<usize>> {
    if degree == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for head in index_tuples(m, degree - 1) {
        let start = head.last().copied().unwrap_or(0);
        for i in start..m {
            let mut t = head.clone();
            t.push(i);
            out.push(t);
        }
    }
    out
}

/// Quadratic graph fits of both manifolds over `S(w)` and `U(w)`, using
/// samples within a quarter of the respective ball radius, and the angle
/// between the fitted tangent spaces.
pub fn tangency_and_transversality(
    atlas: &ManifoldAtlas,
    split: &Splitting,
    angle_floor: f64,
) -> Result<TangencyReport, ManifoldError> {
    let mut s_tangent = split.stable_basis.clone();
    let mut u_tangent = split.unstable_basis.clone();
    linalg::normalize_signs(&mut s_tangent);
    linalg::normalize_signs(&mut u_tangent);
    let stable = if s_tangent.ncols() > 0 {
        let pts: Vec<&DVector<f64>> = atlas.stable_samples.iter().map(|s| &s.point).collect();
        Some(fit_graph("stable", &atlas.anchor, &pts, &s_tangent, atlas.params.rho1 / 4.0)?)
    } else {
        None
    };
    let unstable = if u_tangent.ncols() > 0 {
        let pts: Vec<&DVector<f64>> = atlas.unstable_samples.iter().map(|s| &s.point).collect();
        Some(fit_graph("unstable", &atlas.anchor, &pts, &u_tangent, atlas.params.rho2 / 4.0)?)
    } else {
        None
    };
    let n = atlas.anchor.len();
    let empty = DMatrix::zeros(n, 0);
    let ts = stable.as_ref().map_or(&empty, |f| &f.tangent_basis);
    let tu = unstable.as_ref().map_or(&empty, |f| &f.tangent_basis);
    let min_angle = linalg::principal_angles(ts, tu).into_iter().fold(std::f64::consts::FRAC_PI_2, f64::min);
    let (stable_dim, unstable_dim) = (ts.ncols(), tu.ncols());
    Ok(TangencyReport {
        stable,
        unstable,
        stable_dim,
        unstable_dim,
        dims_sum_ok: stable_dim + unstable_dim == n,
        min_angle,
        angle_floor,
        transversal: min_angle >= angle_floor,
    })
}

#[cfg(test)]
mod tests;
