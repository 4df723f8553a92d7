//! Spectral-Galerkin cocycles of semilinear stochastic evolution equations.
//!
//! One step of the exponential-Euler scheme with step `h` reads
//!
//! ```text
//! u_{j+1} = T_h u_j + phi_h F(u_j) + noise_j,     phi_h = int_0^h T_s ds
//! ```
//!
//! with per-coupling noise terms:
//!
//! * additive: `c_n (B dW_j)_n` where `c_n^2 h = int_0^h e^{-2 mu_n s} ds`, so
//!   the per-mode law of the stochastic convolution is matched exactly;
//! * diagonal multiplicative: `T_h (sigma_n u_n dW_n + 1/2 sigma_n^2 u_n (dW_n^2 - h))`,
//!   the Ito step of strong order one for diagonal noise.
//!
//! Every step consumes the increments of one absolute grid cell of the
//! [`WienerPath`], so restarting from an intermediate state on the shifted path
//! replays exactly the same floating-point operations. That is what makes the
//! cocycle identity hold to the last bit on the grid.

mod nonlinearity;

pub use nonlinearity::{
    Collocation, LinearField, ModeField, Nonlinearity, NonlinearitySpec, QuadraticCoupling, ScalarFn,
    SigmoidCoupling, SineFn, Smoothness, TanhFn,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::noise::{CovarianceSpec, NoiseError, WienerPath};
use crate::snapshot::{self, SnapshotKind};
use crate::spectral_space::{DomainTag, ModeVec, OperatorSpec, SpaceError};
use crate::stationary::{StationaryPoint, WindowExceeded};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Window(#[from] WindowExceeded),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model step {model_h} does not match the noise grid step {path_h}")]
    GridMismatch { model_h: f64, path_h: f64 },
    #[error("path has {available} noise modes but the model needs {needed}")]
    NotEnoughNoiseModes { needed: usize, available: usize },
    #[error("blow-up at t = {time}: |coordinate| = {value:e} exceeds the cap {cap:e}")]
    BlowUp { time: f64, value: f64, cap: f64 },
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("the drift has no derivative")]
    NoDerivative,
}

#[derive(Debug, Clone)]
pub enum NoiseCoupling {
    None,
    /// `B0 dW` independent of the state.
    Additive(CovarianceSpec),
    /// `sigma_n u_n dW_n`, mode by mode.
    DiagonalMultiplicative(CovarianceSpec),
}

impl NoiseCoupling {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseCoupling::None => "none",
            NoiseCoupling::Additive(_) => "additive",
            NoiseCoupling::DiagonalMultiplicative(_) => "diagonal-multiplicative",
        }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, NoiseCoupling::None | NoiseCoupling::Additive(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepper {
    pub h: f64,
    /// Collocation intervals for physical-space drifts; `None` picks the
    /// dealiased default.
    pub collocation: Option<usize>,
    pub blowup_cap: f64,
}

impl Stepper {
    pub fn new(h: f64) -> Self {
        Self { h, collocation: None, blowup_cap: 1e8 }
    }

    pub fn with_collocation(mut self, intervals: usize) -> Self {
        self.collocation = Some(intervals);
        self
    }

    pub fn with_blowup_cap(mut self, cap: f64) -> Self {
        self.blowup_cap = cap;
        self
    }
}

#[derive(Debug, Clone)]
enum NoiseTerm {
    None,
    /// `diag(c) B`, applied to the first `B.ncols()` path modes.
    Additive(DMatrix<f64>),
    Multiplicative(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SemiflowModel {
    operator: OperatorSpec,
    nonlinearity: NonlinearitySpec,
    coupling: NoiseCoupling,
    stepper: Stepper,
    exp_h: DVector<f64>,
    phi_h: DVector<f64>,
    noise_coef: DVector<f64>,
    noise: NoiseTerm,
    collocation: Option<Collocation>,
}

/// `int_0^h e^{-mu s} ds`.
pub fn phi(mu: f64, h: f64) -> f64 {
    if (mu * h).abs() < 1e-8 {
        h * (1.0 - 0.5 * mu * h)
    } else {
        -(-mu * h).exp_m1() / mu
    }
}

/// `c` with `c^2 h = int_0^h e^{-2 mu s} ds`.
pub fn additive_coefficient(mu: f64, h: f64) -> f64 {
    (phi(2.0 * mu, h) / h).sqrt()
}

impl SemiflowModel {
    pub fn new(
        operator: OperatorSpec,
        nonlinearity: NonlinearitySpec,
        coupling: NoiseCoupling,
        stepper: Stepper,
    ) -> Result<Self, FlowError> {
        let n = operator.mode_count();
        let h = stepper.h;
        if !(h > 0.0) || !h.is_finite() {
            return Err(FlowError::InvalidModel(format!("step h = {h} must be positive")));
        }
        if !(stepper.blowup_cap > 0.0) {
            return Err(FlowError::InvalidModel("blow-up cap must be positive".into()));
        }
        let collocation = if nonlinearity.needs_collocation() {
            if !matches!(operator.tag(), DomainTag::DirichletInterval { .. }) {
                return Err(FlowError::InvalidModel(
                    "physical-space drifts need the Dirichlet interval sine basis".into(),
                ));
            }
            let intervals = stepper.collocation.unwrap_or_else(|| Collocation::dealiased_intervals(n));
            if matches!(nonlinearity.kind, Nonlinearity::BurgersAdvection) && 2 * intervals <= 3 * n {
                return Err(FlowError::InvalidModel(format!(
                    "{intervals} collocation intervals alias the quadratic term for {n} modes; need more than {}",
                    3 * n / 2
                )));
            }
            if intervals < n + 1 {
                return Err(FlowError::InvalidModel(format!(
                    "{intervals} collocation intervals cannot resolve {n} modes"
                )));
            }
            Some(Collocation::new(n, intervals))
        } else {
            None
        };
        if let Nonlinearity::DissipativeReaction { alpha } = nonlinearity.kind {
            if !(alpha > 0.0) {
                return Err(FlowError::InvalidModel(format!("reaction exponent {alpha} must be positive")));
            }
        }
        if let Nonlinearity::BoundedLipschitz { lipschitz, sup_norm, .. } = nonlinearity.kind {
            if !(lipschitz.is_finite() && sup_norm.is_finite() && lipschitz >= 0.0 && sup_norm >= 0.0) {
                return Err(FlowError::InvalidModel("Lipschitz constant and bound must be finite".into()));
            }
        }
        let mu = operator.eigenvalues();
        let exp_h = DVector::from_iterator(n, mu.iter().map(|m| (-m * h).exp()));
        let phi_h = DVector::from_iterator(n, mu.iter().map(|m| phi(*m, h)));
        let noise_coef = DVector::from_iterator(n, mu.iter().map(|m| additive_coefficient(*m, h)));
        let noise = match &coupling {
            NoiseCoupling::None => NoiseTerm::None,
            NoiseCoupling::Additive(cov) => {
                let mut b = cov.additive_matrix(n)?;
                for (i, c) in noise_coef.iter().enumerate() {
                    b.row_mut(i).scale_mut(*c);
                }
                NoiseTerm::Additive(b)
            }
            NoiseCoupling::DiagonalMultiplicative(cov) => {
                if cov.mode_count() < n {
                    return Err(FlowError::InvalidModel(format!(
                        "{} noise amplitudes for {n} state modes",
                        cov.mode_count()
                    )));
                }
                NoiseTerm::Multiplicative(cov.sigma()[..n].to_vec())
            }
        };
        Ok(Self { operator, nonlinearity, coupling, stepper, exp_h, phi_h, noise_coef, noise, collocation })
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.operator
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.nonlinearity
    }

    pub fn coupling(&self) -> &NoiseCoupling {
        &self.coupling
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn h(&self) -> f64 {
        self.stepper.h
    }

    pub fn dim(&self) -> usize {
        self.operator.mode_count()
    }

    pub fn collocation(&self) -> Option<&Collocation> {
        self.collocation.as_ref()
    }

    /// Per-mode `T_h` factors.
    pub fn exp_h(&self) -> &DVector<f64> {
        &self.exp_h
    }

    /// Per-mode `int_0^h T_s ds` factors.
    pub fn phi_h(&self) -> &DVector<f64> {
        &self.phi_h
    }

    /// Per-mode variance-matching factors of the additive noise.
    pub fn noise_coefficients(&self) -> &DVector<f64> {
        &self.noise_coef
    }

    pub fn noise_modes_needed(&self) -> usize {
        match &self.noise {
            NoiseTerm::None => 0,
            NoiseTerm::Additive(b) => b.ncols(),
            NoiseTerm::Multiplicative(s) => s.len(),
        }
    }

    /// Additive noise contribution of one cell, `diag(c) B dW`.
    pub fn additive_increment(&self, dw: &[f64]) -> Option<DVector<f64>> {
        match &self.noise {
            NoiseTerm::Additive(b) => Some(b * DVector::from_column_slice(&dw[..b.ncols()])),
            NoiseTerm::None => Some(DVector::zeros(self.dim())),
            NoiseTerm::Multiplicative(_) => None,
        }
    }

    pub fn drift(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.nonlinearity.kind {
            Nonlinearity::Zero => DVector::zeros(u.len()),
            Nonlinearity::BoundedLipschitz { field, .. } | Nonlinearity::Field(field) => field.eval(u),
            Nonlinearity::Pointwise(f) => self.colloc().pointwise(u, |x| f.value(x)),
            Nonlinearity::DissipativeReaction { alpha } => {
                let a = *alpha;
                self.colloc().pointwise(u, |x| nonlinearity::reaction(a, x))
            }
            Nonlinearity::BurgersAdvection => self.colloc().burgers(u),
        }
    }

    /// `DF(u)`; `Ok(None)` for the zero drift.
    pub fn drift_jacobian(&self, u: &DVector<f64>) -> Result<Option<DMatrix<f64>>, FlowError> {
        Ok(match &self.nonlinearity.kind {
            Nonlinearity::Zero => None,
            Nonlinearity::BoundedLipschitz { field, .. } | Nonlinearity::Field(field) => {
                Some(field.jacobian(u).ok_or(FlowError::NoDerivative)?)
            }
            Nonlinearity::Pointwise(f) => {
                let x = self.colloc().to_physical(u);
                if x.iter().any(|v| f.derivative(*v).is_none()) {
                    return Err(FlowError::NoDerivative);
                }
                Some(self.colloc().pointwise_jacobian(u, |v| f.derivative(v).unwrap()))
            }
            Nonlinearity::DissipativeReaction { alpha } => {
                let a = *alpha;
                Some(self.colloc().pointwise_jacobian(u, |v| nonlinearity::reaction_derivative(a, v)))
            }
            Nonlinearity::BurgersAdvection => Some(self.colloc().burgers_jacobian(u)),
        })
    }

    fn colloc(&self) -> &Collocation {
        self.collocation.as_ref().expect("collocation built for physical-space drifts")
    }

    fn check_path(&self, path: &WienerPath) -> Result<(), FlowError> {
        let (a, b) = (self.h(), path.h());
        if (a - b).abs() > 1e-12 * a {
            return Err(FlowError::GridMismatch { model_h: a, path_h: b });
        }
        let needed = self.noise_modes_needed();
        if path.mode_count() < needed {
            return Err(FlowError::NotEnoughNoiseModes { needed, available: path.mode_count() });
        }
        Ok(())
    }

    /// One exponential-Euler step over a cell with increments `dw`; updates
    /// the tangent frame `v` with the derivative of the same step.
    pub fn step(
        &self,
        u: &DVector<f64>,
        dw: &[f64],
        v: Option<&mut DMatrix<f64>>,
    ) -> Result<DVector<f64>, FlowError> {
        let h = self.h();
        let f = self.drift(u);
        let mut next = self.exp_h.component_mul(u) + self.phi_h.component_mul(&f);
        let mut mult_factor: Option<DVector<f64>> = None;
        match &self.noise {
            NoiseTerm::None => {}
            NoiseTerm::Additive(b) => {
                next.gemv(1.0, b, &DVector::from_column_slice(&dw[..b.ncols()]), 1.0);
            }
            NoiseTerm::Multiplicative(sigma) => {
                let g = DVector::from_iterator(
                    u.len(),
                    sigma.iter().zip(dw).zip(self.exp_h.iter()).map(|((s, w), e)| {
                        e * (s * w + 0.5 * s * s * (w * w - h))
                    }),
                );
                next += g.component_mul(u);
                mult_factor = Some(g);
            }
        }
        if let Some(v) = v {
            let mut nv = v.clone();
            for (i, e) in self.exp_h.iter().enumerate() {
                nv.row_mut(i).scale_mut(*e);
            }
            if let Some(j) = self.drift_jacobian(u)? {
                let mut jv = j * &*v;
                for (i, p) in self.phi_h.iter().enumerate() {
                    jv.row_mut(i).scale_mut(*p);
                }
                nv += jv;
            }
            if let Some(g) = &mult_factor {
                for (i, gi) in g.iter().enumerate() {
                    let row = v.row(i) * *gi;
                    let mut dst = nv.row_mut(i);
                    dst += row;
                }
            }
            *v = nv;
        }
        Ok(next)
    }

    /// Integrates `cells` steps starting at absolute cell `start`, calling
    /// `observe(k, state, tangent)` for k = 0..=cells.
    pub fn integrate<O>(
        &self,
        x: DVector<f64>,
        path: &WienerPath,
        start: i64,
        cells: usize,
        mut tangent: Option<&mut DMatrix<f64>>,
        mut observe: O,
    ) -> Result<DVector<f64>, FlowError>
    where
        O: FnMut(usize, &DVector<f64>, Option<&DMatrix<f64>>),
    {
        self.check_path(path)?;
        if x.len() != self.dim() {
            return Err(SpaceError::DimensionMismatch { expected: self.dim(), found: x.len() }.into());
        }
        path.check_abs_range(start, start + cells as i64)?;
        let cap = self.stepper.blowup_cap;
        let mut u = x;
        observe(0, &u, tangent.as_deref());
        for k in 0..cells {
            let cell = start + k as i64;
            u = self.step(&u, path.abs_increments(cell), tangent.as_deref_mut())?;
            let worst = u.iter().fold(0.0f64, |m, c| if c.is_nan() { f64::INFINITY } else { m.max(c.abs()) });
            if worst > cap {
                let time = (cell + 1 - path.origin_cell()) as f64 * self.h();
                return Err(FlowError::BlowUp { time, value: worst, cap });
            }
            observe(k + 1, &u, tangent.as_deref());
        }
        Ok(u)
    }

    fn cells_for(&self, path: &WienerPath, t: f64) -> Result<usize, FlowError> {
        if t < 0.0 {
            return Err(FlowError::NegativeDuration(t));
        }
        Ok(path.cells(t)? as usize)
    }

    fn coords(&self, x: &ModeVec) -> Result<DVector<f64>, FlowError> {
        if x.basis_id() != self.operator.basis_id() {
            return Err(SpaceError::BasisMismatch.into());
        }
        Ok(x.coords.clone())
    }

    /// `U(t, x, w)` from raw coordinates.
    pub fn flow(&self, t: f64, x: &DVector<f64>, path: &WienerPath) -> Result<DVector<f64>, FlowError> {
        let n = self.cells_for(path, t)?;
        self.integrate(x.clone(), path, path.origin_cell(), n, None, |_, _, _| {})
    }

    /// `(U(t, x, w), DU(t, x, w) V)` from raw coordinates.
    pub fn flow_frame(
        &self,
        t: f64,
        x: &DVector<f64>,
        frame: DMatrix<f64>,
        path: &WienerPath,
    ) -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
        let n = self.cells_for(path, t)?;
        let mut v = frame;
        let u = self.integrate(x.clone(), path, path.origin_cell(), n, Some(&mut v), |_, _, _| {})?;
        Ok((u, v))
    }

    /// Integrates for `duration` and records every `record_every` steps plus
    /// the final state.
    pub fn evolve_recorded(
        &self,
        x: &ModeVec,
        path: &WienerPath,
        duration: f64,
        record_every: usize,
        with_tangent: bool,
    ) -> Result<CocycleTrajectory, FlowError> {
        let n = self.cells_for(path, duration)?;
        let every = record_every.max(1);
        let h = self.h();
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut tangents = with_tangent.then(Vec::new);
        let mut v = with_tangent.then(|| DMatrix::identity(self.dim(), self.dim()));
        self.integrate(self.coords(x)?, path, path.origin_cell(), n, v.as_mut(), |k, u, t| {
            if k % every == 0 || k == n {
                times.push(k as f64 * h);
                states.push(u.clone());
                if let (Some(store), Some(t)) = (tangents.as_mut(), t) {
                    store.push(t.clone());
                }
            }
        })?;
        Ok(CocycleTrajectory {
            times,
            states,
            tangents,
            path_anchor: path.anchor(),
            path_seed: path.seed(),
        })
    }

    pub fn evolve(&self, x: &ModeVec, path: &WienerPath, duration: f64) -> Result<CocycleTrajectory, FlowError> {
        self.evolve_recorded(x, path, duration, 1, false)
    }

    /// `U(t, x, w)`.
    pub fn cocycle_eval(&self, t: f64, x: &ModeVec, path: &WienerPath) -> Result<ModeVec, FlowError> {
        let u = self.flow(t, &self.coords(x)?, path)?;
        Ok(self.operator.vector(u)?)
    }

    /// `(U(t, x, w), DU(t, x, w))`.
    pub fn tangent_eval(
        &self,
        t: f64,
        x: &ModeVec,
        path: &WienerPath,
    ) -> Result<(ModeVec, DMatrix<f64>), FlowError> {
        let id = DMatrix::identity(self.dim(), self.dim());
        let (u, j) = self.flow_frame(t, &self.coords(x)?, id, path)?;
        Ok((self.operator.vector(u)?, j))
    }

    /// `Z(t, z, w) = U(t, z + Y(w), w) - Y(theta_t w)`.
    pub fn centered_eval(
        &self,
        y: &StationaryPoint,
        t: f64,
        z: &ModeVec,
        path: &WienerPath,
    ) -> Result<ModeVec, FlowError> {
        let y0 = y.value_at(path, 0.0)?;
        let yt = y.value_at(path, t)?;
        let u = self.flow(t, &(self.coords(z)? + y0), path)?;
        Ok(self.operator.vector(u - yt)?)
    }

    /// `Zhat(t, z, w) = U(t, z + Y(theta_{-t} w), theta_{-t} w) - Y(w)`.
    pub fn backward_centered_eval(
        &self,
        y: &StationaryPoint,
        t: f64,
        z: &ModeVec,
        path: &WienerPath,
    ) -> Result<ModeVec, FlowError> {
        let back = path.shift(-t)?;
        let ym = y.value_at(&back, 0.0)?;
        let y0 = y.value_at(path, 0.0)?;
        let u = self.flow(t, &(self.coords(z)? + ym), &back)?;
        Ok(self.operator.vector(u - y0)?)
    }

    /// `D Zhat(t, 0, w) = DU(t, Y(theta_{-t} w), theta_{-t} w)`; its transpose
    /// is the adjoint backward cocycle.
    pub fn backward_jacobian(
        &self,
        y: &StationaryPoint,
        t: f64,
        path: &WienerPath,
    ) -> Result<DMatrix<f64>, FlowError> {
        let back = path.shift(-t)?;
        let ym = y.value_at(&back, 0.0)?;
        let id = DMatrix::identity(self.dim(), self.dim());
        Ok(self.flow_frame(t, &ym, id, &back)?.1)
    }
}

/// A recorded grid orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct CocycleTrajectory {
    /// Times relative to the path origin at the start of the run.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub tangents: Option<Vec<DMatrix<f64>>>,
    pub path_anchor: f64,
    pub path_seed: u64,
}

impl CocycleTrajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// `time,c1,...,cN` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = String::from("time");
        for k in 1..=n {
            out.push_str(&format!(",c{k}"));
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t:.16e}"));
            for c in s.iter() {
                out.push_str(&format!(",{c:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = snapshot::header(SnapshotKind::Trajectory);
        out.extend_from_slice(&(self.times.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.path_seed.to_le_bytes());
        snapshot::push_f64s(&mut out, [self.path_anchor]);
        snapshot::push_f64s(&mut out, self.times.iter().copied());
        for s in &self.states {
            snapshot::push_f64s(&mut out, s.iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = snapshot::Reader::new(bytes);
        r.expect_header(SnapshotKind::Trajectory)?;
        let len = r.u64()? as usize;
        let n = r.u64()? as usize;
        let path_seed = r.u64()?;
        let path_anchor = r.f64()?;
        let times = r.f64_vec(len)?;
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            states.push(DVector::from_vec(r.f64_vec(n)?));
        }
        r.finish()?;
        Ok(Self { times, states, tangents: None, path_anchor, path_seed })
    }
}

#[cfg(test)]
mod tests;
