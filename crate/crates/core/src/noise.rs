//! Two-sided multi-mode Wiener paths and the Wiener shift.
//!
//! A [`WienerPath`] stores i.i.d. Gaussian increments on a uniform grid that
//! covers `[-t_back, t_fwd]`. The negative-time and positive-time halves come
//! from two independent ChaCha streams keyed by the same seed, so a path can be
//! extended on either side without disturbing the draws already made.
//!
//! Shifting never copies data: a shifted path shares the increment buffer and
//! only moves its origin. Every value is reconstructed relative to the current
//! origin, which makes `W(0) = 0` hold by construction and keeps the group law
//! `shift(shift(p, a), b) = shift(p, a + b)` exact on the grid.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::{self, SnapshotKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time {time} is not a multiple of the grid step {h}")]
    NotGridAligned { time: f64, h: f64 },
    #[error("out of window: requested cells [{lo}, {hi}) but the path stores [{min}, {max})")]
    OutOfWindow { lo: i64, hi: i64, min: i64, max: i64 },
    #[error("tail not negligible: {0}")]
    TailNotNegligible(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("mode {mode} out of range (path has {modes} modes)")]
    ModeOutOfRange { mode: usize, modes: usize },
    #[error("corrupt path record: {0}")]
    Corrupt(String),
}

/// How noise modes enter the state equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovarianceKind {
    /// Noise mode `n` drives state mode `n` with amplitude `sigma[n]`.
    CylindricalWithAmplitudes,
    /// Additive noise `B0 diag(sigma) dW`; `b0` has one row per state mode and
    /// one column per noise mode.
    AdditiveB0 { b0: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    mode_count: usize,
    sigma: Vec<f64>,
    kind: CovarianceKind,
    tail_bound: f64,
}

impl CovarianceSpec {
    pub fn new(sigma: Vec<f64>, kind: CovarianceKind) -> Result<Self, NoiseError> {
        if sigma.is_empty() {
            return Err(NoiseError::InvalidCovariance("mode_count must be at least 1".into()));
        }
        if let Some(bad) = sigma.iter().find(|s| !s.is_finite()) {
            return Err(NoiseError::InvalidCovariance(format!("non-finite amplitude {bad}")));
        }
        if let CovarianceKind::AdditiveB0 { b0 } = &kind {
            if b0.ncols() != sigma.len() {
                return Err(NoiseError::InvalidCovariance(format!(
                    "B0 has {} columns but {} noise modes are declared",
                    b0.ncols(),
                    sigma.len()
                )));
            }
            if b0.iter().any(|v| !v.is_finite()) {
                return Err(NoiseError::InvalidCovariance("B0 has non-finite entries".into()));
            }
        }
        Ok(Self { mode_count: sigma.len(), sigma, kind, tail_bound: 0.0 })
    }

    pub fn cylindrical(sigma: Vec<f64>) -> Result<Self, NoiseError> {
        Self::new(sigma, CovarianceKind::CylindricalWithAmplitudes)
    }

    /// Amplitudes `sigma_n = amplitude * n^(-decay)`, n = 1..=modes, with the
    /// discarded tail `sum_{n > modes} |sigma_n|` bounded by the integral test.
    pub fn power_law(amplitude: f64, decay: f64, modes: usize) -> Result<Self, NoiseError> {
        let sigma = (1..=modes).map(|n| amplitude * (n as f64).powf(-decay)).collect();
        let tail = if decay > 1.0 {
            amplitude.abs() * (modes as f64).powf(1.0 - decay) / (decay - 1.0)
        } else if amplitude == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(Self::cylindrical(sigma)?.with_tail_bound(tail))
    }

    pub fn with_tail_bound(mut self, tail: f64) -> Self {
        self.tail_bound = tail;
        self
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    /// Recorded bound on the amplitudes dropped by the truncation.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// The state-by-noise matrix multiplying `dW` for additive coupling.
    pub fn additive_matrix(&self, state_modes: usize) -> Result<DMatrix<f64>, NoiseError> {
        match &self.kind {
            CovarianceKind::CylindricalWithAmplitudes => {
                if self.mode_count < state_modes {
                    return Err(NoiseError::InvalidCovariance(format!(
                        "{} noise modes cannot drive {} state modes",
                        self.mode_count, state_modes
                    )));
                }
                let mut b = DMatrix::zeros(state_modes, self.mode_count);
                for n in 0..state_modes {
                    b[(n, n)] = self.sigma[n];
                }
                Ok(b)
            }
            CovarianceKind::AdditiveB0 { b0 } => {
                if b0.nrows() != state_modes {
                    return Err(NoiseError::InvalidCovariance(format!(
                        "B0 has {} rows but the state has {} modes",
                        b0.nrows(),
                        state_modes
                    )));
                }
                let mut b = b0.clone();
                for (k, s) in self.sigma.iter().enumerate() {
                    b.column_mut(k).scale_mut(*s);
                }
                Ok(b)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            CovarianceKind::CylindricalWithAmplitudes => self.sigma.iter().all(|s| *s == 0.0),
            CovarianceKind::AdditiveB0 { b0 } => {
                self.sigma.iter().all(|s| *s == 0.0) || b0.iter().all(|v| *v == 0.0)
            }
        }
    }
}

/// Number of grid cells in `t`, failing unless `t` is a multiple of `h`.
pub fn grid_cells(t: f64, h: f64) -> Result<i64, NoiseError> {
    if !(h > 0.0) || !t.is_finite() {
        return Err(NoiseError::InvalidGrid(format!("t = {t}, h = {h}")));
    }
    let k = (t / h).round();
    let tol = 1e-9 * k.abs().max(1.0);
    if ((t / h) - k).abs() > tol {
        return Err(NoiseError::NotGridAligned { time: t, h });
    }
    Ok(k as i64)
}

#[derive(Debug)]
struct PathData {
    h: f64,
    n_back: usize,
    n_fwd: usize,
    modes: usize,
    seed: u64,
    /// Cell-major: cell `c` (absolute, in `[-n_back, n_fwd)`) occupies
    /// `[(c + n_back) * modes, (c + n_back + 1) * modes)`.
    increments: Vec<f64>,
}

/// Identifies the increment buffer a path or stationary point refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathId {
    pub seed: u64,
    pub h_bits: u64,
    pub modes: usize,
}

/// A two-sided multi-mode Brownian path viewed from a movable origin.
#[derive(Debug, Clone)]
pub struct WienerPath {
    data: Arc<PathData>,
    origin: i64,
}

const FORWARD_STREAM: u64 = 1;
const BACKWARD_STREAM: u64 = 2;

fn draw_stream(seed: u64, stream: u64, cells: usize, modes: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..cells * modes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Samples a path on `[-t_back, t_fwd]` with step `h`. Both ends are rounded
/// outward to the grid.
pub fn sample_path(
    cov: &CovarianceSpec,
    t_back: f64,
    t_fwd: f64,
    h: f64,
    seed: u64,
) -> Result<WienerPath, NoiseError> {
    sample_path_modes(cov.mode_count(), t_back, t_fwd, h, seed)
}

pub fn sample_path_modes(
    modes: usize,
    t_back: f64,
    t_fwd: f64,
    h: f64,
    seed: u64,
) -> Result<WienerPath, NoiseError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(NoiseError::InvalidGrid(format!("step h = {h} must be positive")));
    }
    if !(t_back >= 0.0) || !(t_fwd >= 0.0) || !t_back.is_finite() || !t_fwd.is_finite() {
        return Err(NoiseError::InvalidGrid(format!(
            "window [-{t_back}, {t_fwd}] must have non-negative finite ends"
        )));
    }
    if modes == 0 {
        return Err(NoiseError::InvalidGrid("mode_count must be at least 1".into()));
    }
    let n_back = (t_back / h - 1e-9).ceil().max(0.0) as usize;
    let n_fwd = (t_fwd / h - 1e-9).ceil().max(0.0) as usize;
    if n_back + n_fwd == 0 {
        return Err(NoiseError::InvalidGrid("empty window".into()));
    }
    let scale = h.sqrt();
    // The backward stream is drawn outward from t = 0 so that enlarging t_back
    // appends draws instead of re-drawing existing ones.
    let back = draw_stream(seed, BACKWARD_STREAM, n_back, modes, scale);
    let fwd = draw_stream(seed, FORWARD_STREAM, n_fwd, modes, scale);
    let mut increments = Vec::with_capacity((n_back + n_fwd) * modes);
    for cell in (0..n_back).rev() {
        increments.extend_from_slice(&back[cell * modes..(cell + 1) * modes]);
    }
    increments.extend_from_slice(&fwd);
    Ok(WienerPath {
        data: Arc::new(PathData { h, n_back, n_fwd, modes, seed, increments }),
        origin: 0,
    })
}

impl WienerPath {
    pub fn h(&self) -> f64 {
        self.data.h
    }

    pub fn mode_count(&self) -> usize {
        self.data.modes
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn id(&self) -> PathId {
        PathId { seed: self.data.seed, h_bits: self.data.h.to_bits(), modes: self.data.modes }
    }

    /// Absolute cell index of the current origin.
    pub fn origin_cell(&self) -> i64 {
        self.origin
    }

    /// Total shift applied so far, in time units.
    pub fn anchor(&self) -> f64 {
        self.origin as f64 * self.data.h
    }

    /// Range of absolute cells stored.
    pub fn stored_cells(&self) -> (i64, i64) {
        (-(self.data.n_back as i64), self.data.n_fwd as i64)
    }

    /// Time available before the current origin.
    pub fn t_back(&self) -> f64 {
        (self.origin + self.data.n_back as i64) as f64 * self.data.h
    }

    /// Time available after the current origin.
    pub fn t_fwd(&self) -> f64 {
        (self.data.n_fwd as i64 - self.origin) as f64 * self.data.h
    }

    pub fn cells(&self, t: f64) -> Result<i64, NoiseError> {
        grid_cells(t, self.data.h)
    }

    pub fn check_abs_range(&self, lo: i64, hi: i64) -> Result<(), NoiseError> {
        let (min, max) = self.stored_cells();
        if lo < min || hi > max || lo > hi {
            return Err(NoiseError::OutOfWindow { lo, hi, min, max });
        }
        Ok(())
    }

    /// Increments of all modes over absolute cell `cell`.
    #[inline]
    pub fn abs_increments(&self, cell: i64) -> &[f64] {
        let m = self.data.modes;
        let i = (cell + self.data.n_back as i64) as usize;
        &self.data.increments[i * m..(i + 1) * m]
    }

    /// Increment of `mode` over the cell starting at relative grid index `cell`.
    pub fn increment(&self, cell: i64, mode: usize) -> Result<f64, NoiseError> {
        if mode >= self.data.modes {
            return Err(NoiseError::ModeOutOfRange { mode, modes: self.data.modes });
        }
        let abs = self.origin + cell;
        self.check_abs_range(abs, abs + 1)?;
        Ok(self.abs_increments(abs)[mode])
    }

    /// `W(i h)` relative to the current origin, summed outward from the origin.
    pub fn value_at_index(&self, i: i64, mode: usize) -> Result<f64, NoiseError> {
        if mode >= self.data.modes {
            return Err(NoiseError::ModeOutOfRange { mode, modes: self.data.modes });
        }
        let (lo, hi) = if i >= 0 { (self.origin, self.origin + i) } else { (self.origin + i, self.origin) };
        self.check_abs_range(lo, hi)?;
        let s: f64 = (lo..hi).map(|c| self.abs_increments(c)[mode]).sum();
        Ok(if i >= 0 { s } else { -s })
    }

    pub fn value(&self, t: f64, mode: usize) -> Result<f64, NoiseError> {
        self.value_at_index(self.cells(t)?, mode)
    }

    /// `W(b) - W(a)` summed cell by cell from `a` up to `b`.
    pub fn increment_over(&self, a: f64, b: f64, mode: usize) -> Result<f64, NoiseError> {
        let (ia, ib) = (self.cells(a)?, self.cells(b)?);
        if mode >= self.data.modes {
            return Err(NoiseError::ModeOutOfRange { mode, modes: self.data.modes });
        }
        let (lo, hi) = (self.origin + ia.min(ib), self.origin + ia.max(ib));
        self.check_abs_range(lo, hi)?;
        let s: f64 = (lo..hi).map(|c| self.abs_increments(c)[mode]).sum();
        Ok(if ib >= ia { s } else { -s })
    }

    /// The Wiener shift `theta(t, w)(s) = w(t + s) - w(t)` for grid-aligned `t`.
    pub fn shift(&self, t: f64) -> Result<WienerPath, NoiseError> {
        let k = self.cells(t)?;
        self.shift_cells(k)
    }

    pub fn shift_cells(&self, k: i64) -> Result<WienerPath, NoiseError> {
        let target = self.origin + k;
        let (min, max) = self.stored_cells();
        if target < min || target > max {
            return Err(NoiseError::OutOfWindow { lo: target, hi: target, min, max });
        }
        Ok(WienerPath { data: Arc::clone(&self.data), origin: target })
    }

    /// The same Brownian path on the grid of step `factor * h`: each coarse
    /// increment is the sum of `factor` fine ones. Cells that do not fill a
    /// whole coarse cell at either end are dropped.
    pub fn coarsen(&self, factor: usize) -> Result<WienerPath, NoiseError> {
        if factor == 0 {
            return Err(NoiseError::InvalidGrid("coarsening factor must be positive".into()));
        }
        let k = factor as i64;
        if self.origin % k != 0 {
            return Err(NoiseError::NotGridAligned { time: self.anchor(), h: self.h() * factor as f64 });
        }
        let d = &self.data;
        let n_back = d.n_back / factor;
        let n_fwd = d.n_fwd / factor;
        if n_back + n_fwd == 0 {
            return Err(NoiseError::InvalidGrid("coarsened window is empty".into()));
        }
        let mut increments = Vec::with_capacity((n_back + n_fwd) * d.modes);
        for c in -(n_back as i64)..n_fwd as i64 {
            let mut acc = vec![0.0; d.modes];
            for fine in c * k..(c + 1) * k {
                for (a, v) in acc.iter_mut().zip(self.abs_increments(fine)) {
                    *a += v;
                }
            }
            increments.extend_from_slice(&acc);
        }
        Ok(WienerPath {
            data: Arc::new(PathData { h: d.h * factor as f64, n_back, n_fwd, modes: d.modes, seed: d.seed, increments }),
            origin: self.origin / k,
        })
    }

    /// True when both paths view the same increment buffer.
    pub fn same_noise(&self, other: &WienerPath) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.id() == other.id() && self.data.increments == other.data.increments)
    }

    /// Binary record: 16-byte header, grid metadata, then little-endian f64
    /// increments in storage order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.data;
        let mut out = snapshot::header(SnapshotKind::WienerPath);
        out.extend_from_slice(&d.h.to_le_bytes());
        out.extend_from_slice(&(d.n_back as u64).to_le_bytes());
        out.extend_from_slice(&(d.n_fwd as u64).to_le_bytes());
        out.extend_from_slice(&(d.modes as u64).to_le_bytes());
        out.extend_from_slice(&d.seed.to_le_bytes());
        out.extend_from_slice(&self.origin.to_le_bytes());
        for v in &d.increments {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WienerPath, NoiseError> {
        let mut r = snapshot::Reader::new(bytes);
        r.expect_header(SnapshotKind::WienerPath).map_err(NoiseError::Corrupt)?;
        let mut next = || r.u64().map_err(NoiseError::Corrupt);
        let h = f64::from_bits(next()?);
        let n_back = next()? as usize;
        let n_fwd = next()? as usize;
        let modes = next()? as usize;
        let seed = next()?;
        let origin = next()? as i64;
        let count = (n_back + n_fwd)
            .checked_mul(modes)
            .ok_or_else(|| NoiseError::Corrupt("size overflow".into()))?;
        let increments = r.f64_vec(count).map_err(NoiseError::Corrupt)?;
        r.finish().map_err(NoiseError::Corrupt)?;
        if !(h > 0.0) || modes == 0 || origin < -(n_back as i64) || origin > n_fwd as i64 {
            return Err(NoiseError::Corrupt("inconsistent grid header".into()));
        }
        Ok(WienerPath { data: Arc::new(PathData { h, n_back, n_fwd, modes, seed, increments }), origin })
    }
}

/// Exponential weight `exp(rate * s)` restricted to `[lower, upper]`; `None`
/// marks an infinite end, which is truncated where the weight falls below the
/// tail tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpWeight {
    pub rate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl ExpWeight {
    /// `int_{-inf}^0 e^{rate s} dW(s)`, rate > 0.
    pub fn past(rate: f64) -> Self {
        Self { rate, lower: None, upper: Some(0.0) }
    }

    /// `int_0^inf e^{rate s} dW(s)`, rate < 0.
    pub fn future(rate: f64) -> Self {
        Self { rate, lower: Some(0.0), upper: None }
    }

    pub fn unit(a: f64, b: f64) -> Self {
        Self { rate: 0.0, lower: Some(a), upper: Some(b) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedIntegral {
    pub value: f64,
    /// Standard deviation of the discarded tail (0 for finite intervals).
    pub truncation_bound: f64,
    pub cells: usize,
}

/// Truncation length where `exp(-|rate| T) < tail_tol`.
pub fn tail_length(rate: f64, tail_tol: f64) -> f64 {
    (1.0 / tail_tol).ln() / rate.abs()
}

/// Left-point Ito sum `sum_j exp(rate s_j) dW(s_j)` over the (truncated) interval.
pub fn weighted_integral(
    path: &WienerPath,
    mode: usize,
    weight: ExpWeight,
    tail_tol: f64,
) -> Result<WeightedIntegral, NoiseError> {
    if mode >= path.mode_count() {
        return Err(NoiseError::ModeOutOfRange { mode, modes: path.mode_count() });
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(NoiseError::TailNotNegligible(format!("tail tolerance {tail_tol} must lie in (0, 1)")));
    }
    let h = path.h();
    let rate = weight.rate;
    let mut truncation_bound = 0.0;
    let (lo, hi) = match (weight.lower, weight.upper) {
        (Some(a), Some(b)) => (path.cells(a)?, path.cells(b)?),
        (None, Some(b)) => {
            if !(rate > 0.0) {
                return Err(NoiseError::TailNotNegligible(format!(
                    "weight exp({rate} s) does not decay as s -> -inf"
                )));
            }
            let hi = path.cells(b)?;
            let n = (tail_length(rate, tail_tol) / h).ceil() as i64;
            let cut = (hi - n) as f64 * h;
            truncation_bound = (rate * cut).exp() / (2.0 * rate).sqrt();
            (hi - n, hi)
        }
        (Some(a), None) => {
            if !(rate < 0.0) {
                return Err(NoiseError::TailNotNegligible(format!(
                    "weight exp({rate} s) does not decay as s -> +inf"
                )));
            }
            let lo = path.cells(a)?;
            let n = (tail_length(rate, tail_tol) / h).ceil() as i64;
            let cut = (lo + n) as f64 * h;
            truncation_bound = (rate * cut).exp() / (-2.0 * rate).sqrt();
            (lo, lo + n)
        }
        (None, None) => {
            return Err(NoiseError::TailNotNegligible("both ends infinite".into()));
        }
    };
    if lo > hi {
        return Err(NoiseError::InvalidGrid(format!("empty interval [{lo}, {hi})")));
    }
    path.check_abs_range(path.origin + lo, path.origin + hi)?;
    let mut value = 0.0;
    for j in lo..hi {
        let s = j as f64 * h;
        value += (rate * s).exp() * path.abs_increments(path.origin + j)[mode];
    }
    Ok(WeightedIntegral { value, truncation_bound, cells: (hi - lo) as usize })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> WienerPath {
        sample_path_modes(3, 2.0, 3.0, 0.01, 42).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_path_modes(2, 1.0, 1.0, 0.01, 9).unwrap();
        let b = sample_path_modes(2, 1.0, 1.0, 0.01, 9).unwrap();
        assert_eq!(a.data.increments, b.data.increments);
    }

    #[test]
    fn forward_only_path_is_anchored() {
        let p = sample_path_modes(1, 0.0, 1.0, 0.1, 1).unwrap();
        assert_eq!(p.value(0.0, 0).unwrap(), 0.0);
        assert!(p.value(-0.1, 0).is_err());
        assert!(p.value(1.0, 0).is_ok());
    }

    #[test]
    fn extending_either_side_keeps_existing_draws() {
        let small = sample_path_modes(2, 1.0, 1.0, 0.1, 5).unwrap();
        let big = sample_path_modes(2, 3.0, 4.0, 0.1, 5).unwrap();
        for c in -10..10 {
            assert_eq!(small.abs_increments(c), big.abs_increments(c));
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(sample_path_modes(1, 1.0, 1.0, 0.0, 1), Err(NoiseError::InvalidGrid(_))));
        assert!(matches!(sample_path_modes(1, 0.0, 0.0, 0.1, 1), Err(NoiseError::InvalidGrid(_))));
        assert!(matches!(sample_path_modes(0, 1.0, 1.0, 0.1, 1), Err(NoiseError::InvalidGrid(_))));
    }

    #[test]
    fn shift_identity_and_re_anchoring() {
        let p = path();
        let q = p.shift(0.0).unwrap();
        assert_eq!(q.origin, p.origin);
        let s = p.shift(0.5).unwrap();
        assert_eq!(s.value(0.0, 1).unwrap(), 0.0);
        for i in -20..20 {
            let t = i as f64 * 0.01;
            let expect = p.value(0.5 + t, 1).unwrap() - p.value(0.5, 1).unwrap();
            assert!((s.value(t, 1).unwrap() - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn shift_rejects_misaligned_and_out_of_window() {
        let p = path();
        assert!(matches!(p.shift(0.005), Err(NoiseError::NotGridAligned { .. })));
        assert!(matches!(p.shift(3.5), Err(NoiseError::OutOfWindow { .. })));
        assert!(matches!(p.shift(-2.5), Err(NoiseError::OutOfWindow { .. })));
    }

    #[test]
    fn weighted_integral_edge_cases() {
        let p = path();
        let w = weighted_integral(&p, 0, ExpWeight::unit(0.0, 1.0), 1e-8).unwrap();
        assert!((w.value - p.value(1.0, 0).unwrap()).abs() < 1e-13);
        assert_eq!(w.truncation_bound, 0.0);
        assert!(matches!(
            weighted_integral(&p, 0, ExpWeight::past(-1.0), 1e-8),
            Err(NoiseError::TailNotNegligible(_))
        ));
        assert!(matches!(
            weighted_integral(&p, 0, ExpWeight::future(0.5), 1e-8),
            Err(NoiseError::TailNotNegligible(_))
        ));
        // e^{-T} < 1e-8 needs T ~ 18.4, beyond the 2.0 stored backward.
        assert!(matches!(
            weighted_integral(&p, 0, ExpWeight::past(1.0), 1e-8),
            Err(NoiseError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn zero_amplitude_path_integrates_to_zero() {
        let cov = CovarianceSpec::cylindrical(vec![0.0]).unwrap();
        assert!(cov.is_zero());
        let b = cov.additive_matrix(1).unwrap();
        assert_eq!(b[(0, 0)], 0.0);
    }

    #[test]
    fn power_law_tail_bound() {
        let c = CovarianceSpec::power_law(1.0, 2.0, 10).unwrap();
        assert!((c.tail_bound() - 0.1).abs() < 1e-12);
        let exact: f64 = (11..200000).map(|n| 1.0 / (n as f64).powi(2)).sum();
        assert!(exact <= c.tail_bound());
        assert!(CovarianceSpec::power_law(1.0, 1.0, 10).unwrap().tail_bound().is_infinite());
    }

    #[test]
    fn covariance_validation() {
        assert!(CovarianceSpec::cylindrical(vec![]).is_err());
        assert!(CovarianceSpec::cylindrical(vec![f64::NAN]).is_err());
        let b0 = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let c = CovarianceSpec::new(vec![0.5], CovarianceKind::AdditiveB0 { b0 }).unwrap();
        let b = c.additive_matrix(2).unwrap();
        assert_eq!(b[(1, 0)], 1.0);
        assert!(c.additive_matrix(3).is_err());
        assert!(CovarianceSpec::cylindrical(vec![1.0]).unwrap().additive_matrix(2).is_err());
    }

    #[test]
    fn coarsening_sums_fine_increments() {
        let p = path().shift_cells(4).unwrap();
        let c = p.coarsen(4).unwrap();
        assert!((c.h() - 0.04).abs() < 1e-15);
        assert_eq!(c.origin_cell(), 1);
        for i in [-20i64, -3, 0, 5, 40] {
            let fine = p.value_at_index(4 * i, 1).unwrap();
            let coarse = c.value_at_index(i, 1).unwrap();
            assert!((fine - coarse).abs() < 1e-12);
        }
        assert!(p.shift_cells(1).unwrap().coarsen(4).is_err());
    }

    #[test]
    fn binary_record_round_trip() {
        let p = path().shift(0.3).unwrap();
        let q = WienerPath::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(q.origin, p.origin);
        assert_eq!(q.data.increments, p.data.increments);
        assert_eq!(q.seed(), 42);
        let mut bytes = p.to_bytes();
        bytes.pop();
        assert!(WienerPath::from_bytes(&bytes).is_err());
    }
}
