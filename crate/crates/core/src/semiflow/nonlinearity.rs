//! Nonlinear drift terms `F: H -> H` and their derivatives.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A drift given directly on mode coordinates.
pub trait ModeField: Debug + Send + Sync {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64>;

    /// `DF(u)`, or `None` when the field has no derivative available.
    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>>;

    fn name(&self) -> String;
}

/// A scalar function applied pointwise in physical space.
pub trait ScalarFn: Debug + Send + Sync {
    fn value(&self, x: f64) -> f64;

    fn derivative(&self, x: f64) -> Option<f64>;

    fn name(&self) -> String;
}

/// Class `C^{k, eps}` of the drift, recorded for reports only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub k: u32,
    pub eps: f64,
}

impl Default for Smoothness {
    fn default() -> Self {
        Self { k: 1, eps: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub enum Nonlinearity {
    Zero,
    /// Globally bounded and Lipschitz, with the recorded `sup |F|` and `L`.
    BoundedLipschitz { field: Arc<dyn ModeField>, sup_norm: f64, lipschitz: f64 },
    /// Any other mode-space drift (e.g. polynomial test systems).
    Field(Arc<dyn ModeField>),
    /// `F(u) = f o u` evaluated at collocation points.
    Pointwise(Arc<dyn ScalarFn>),
    /// `u (1 - |u|^alpha)`.
    DissipativeReaction { alpha: f64 },
    /// `-u du/dxi`, in conservative form `-1/2 d(u^2)/dxi`.
    BurgersAdvection,
}

#[derive(Debug, Clone)]
pub struct NonlinearitySpec {
    pub kind: Nonlinearity,
    pub smoothness: Smoothness,
}

impl NonlinearitySpec {
    pub fn new(kind: Nonlinearity) -> Self {
        let smoothness = match &kind {
            Nonlinearity::Zero => Smoothness { k: u32::MAX, eps: 1.0 },
            _ => Smoothness::default(),
        };
        Self { kind, smoothness }
    }

    pub fn zero() -> Self {
        Self::new(Nonlinearity::Zero)
    }

    pub fn with_smoothness(mut self, smoothness: Smoothness) -> Self {
        self.smoothness = smoothness;
        self
    }

    /// Whether the drift is evaluated on a physical collocation grid.
    pub fn needs_collocation(&self) -> bool {
        matches!(
            self.kind,
            Nonlinearity::Pointwise(_) | Nonlinearity::DissipativeReaction { .. } | Nonlinearity::BurgersAdvection
        )
    }

    /// `(L, sup |F|)` when the drift is globally bounded and Lipschitz.
    pub fn bounded_lipschitz(&self) -> Option<(f64, f64)> {
        match &self.kind {
            Nonlinearity::Zero => Some((0.0, 0.0)),
            Nonlinearity::BoundedLipschitz { lipschitz, sup_norm, .. } => Some((*lipschitz, *sup_norm)),
            _ => None,
        }
    }

    /// For the dissipative reaction: `alpha < 4/d`, the exponent range in which
    /// the local manifold theorem for reaction-diffusion applies.
    pub fn dissipative_exponent_admissible(&self, dim: usize) -> Option<bool> {
        match self.kind {
            Nonlinearity::DissipativeReaction { alpha } => Some(alpha > 0.0 && alpha < 4.0 / dim as f64),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            Nonlinearity::Zero => "zero".into(),
            Nonlinearity::BoundedLipschitz { field, .. } => format!("bounded-lipschitz:{}", field.name()),
            Nonlinearity::Field(f) => format!("field:{}", f.name()),
            Nonlinearity::Pointwise(f) => format!("pointwise:{}", f.name()),
            Nonlinearity::DissipativeReaction { alpha } => format!("dissipative-reaction:alpha={alpha}"),
            Nonlinearity::BurgersAdvection => "burgers-advection".into(),
        }
    }
}

/// `F(u) = L (R tanh(u) + b)` where `R` rotates the first two coordinates by
/// `angle`. Lipschitz constant `L`; `|F| <= L (sqrt(N) + |b|)`.
#[derive(Debug, Clone)]
pub struct SigmoidCoupling {
    pub lipschitz: f64,
    pub angle: f64,
    pub offset: DVector<f64>,
}

impl SigmoidCoupling {
    pub fn new(lipschitz: f64, angle: f64, offset: DVector<f64>) -> Self {
        Self { lipschitz, angle, offset }
    }

    pub fn sup_norm(&self) -> f64 {
        self.lipschitz * ((self.offset.len() as f64).sqrt() + self.offset.norm())
    }

    pub fn into_spec(self) -> NonlinearitySpec {
        let (lipschitz, sup_norm) = (self.lipschitz, self.sup_norm());
        NonlinearitySpec::new(Nonlinearity::BoundedLipschitz { field: Arc::new(self), sup_norm, lipschitz })
            .with_smoothness(Smoothness { k: u32::MAX, eps: 1.0 })
    }

    fn rotate(&self, v: &mut DVector<f64>) {
        if v.len() >= 2 {
            let (c, s) = (self.angle.cos(), self.angle.sin());
            let (a, b) = (v[0], v[1]);
            v[0] = c * a - s * b;
            v[1] = s * a + c * b;
        }
    }
}

impl ModeField for SigmoidCoupling {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut t = u.map(f64::tanh);
        self.rotate(&mut t);
        (t + &self.offset) * self.lipschitz
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = u.len();
        let mut j = DMatrix::from_diagonal(&u.map(|x| 1.0 / x.cosh().powi(2)));
        if n >= 2 {
            let (c, s) = (self.angle.cos(), self.angle.sin());
            for col in 0..n {
                let (a, b) = (j[(0, col)], j[(1, col)]);
                j[(0, col)] = c * a - s * b;
                j[(1, col)] = s * a + c * b;
            }
        }
        Some(j * self.lipschitz)
    }

    fn name(&self) -> String {
        format!("sigmoid(L={}, angle={})", self.lipschitz, self.angle)
    }
}

/// `F(u)_target = coefficient * u_source^2`, all other components zero.
#[derive(Debug, Clone)]
pub struct QuadraticCoupling {
    pub source: usize,
    pub target: usize,
    pub coefficient: f64,
}

impl ModeField for QuadraticCoupling {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(u.len());
        f[self.target] = self.coefficient * u[self.source] * u[self.source];
        f
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(u.len(), u.len());
        j[(self.target, self.source)] = 2.0 * self.coefficient * u[self.source];
        Some(j)
    }

    fn name(&self) -> String {
        format!("quadratic({}<-{}^2 x {})", self.target, self.source, self.coefficient)
    }
}

/// `F(u) = M u`.
#[derive(Debug, Clone)]
pub struct LinearField(pub DMatrix<f64>);

impl ModeField for LinearField {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.0 * u
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.0.clone())
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

/// `f(x) = amplitude * sin(x)`.
#[derive(Debug, Clone, Copy)]
pub struct SineFn {
    pub amplitude: f64,
}

impl ScalarFn for SineFn {
    fn value(&self, x: f64) -> f64 {
        self.amplitude * x.sin()
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        Some(self.amplitude * x.cos())
    }

    fn name(&self) -> String {
        format!("{}*sin", self.amplitude)
    }
}

/// `f(x) = amplitude * tanh(x)`.
#[derive(Debug, Clone, Copy)]
pub struct TanhFn {
    pub amplitude: f64,
}

impl ScalarFn for TanhFn {
    fn value(&self, x: f64) -> f64 {
        self.amplitude * x.tanh()
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        Some(self.amplitude / x.cosh().powi(2))
    }

    fn name(&self) -> String {
        format!("{}*tanh", self.amplitude)
    }
}

pub(crate) fn reaction(alpha: f64, u: f64) -> f64 {
    u * (1.0 - u.abs().powf(alpha))
}

pub(crate) fn reaction_derivative(alpha: f64, u: f64) -> f64 {
    1.0 - (1.0 + alpha) * u.abs().powf(alpha)
}

/// Sine-basis collocation on the interior points `xi_j = j / M` of (0, 1).
///
/// With `e_n = sqrt(2) sin(n pi xi)` and `M` intervals, the trapezoidal rule is
/// exact for cosine polynomials of degree below `2M`, so the quadratic Burgers
/// term is alias-free whenever `2M > 3N`.
#[derive(Debug, Clone)]
pub struct Collocation {
    intervals: usize,
    basis: DMatrix<f64>,
    basis_dx: DMatrix<f64>,
}

impl Collocation {
    pub fn new(modes: usize, intervals: usize) -> Self {
        let pts = intervals.saturating_sub(1);
        let basis = DMatrix::from_fn(pts, modes, |j, n| {
            let xi = (j + 1) as f64 / intervals as f64;
            SQRT_2 * ((n + 1) as f64 * PI * xi).sin()
        });
        let basis_dx = DMatrix::from_fn(pts, modes, |j, n| {
            let xi = (j + 1) as f64 / intervals as f64;
            let k = (n + 1) as f64 * PI;
            SQRT_2 * k * (k * xi).cos()
        });
        Self { intervals, basis, basis_dx }
    }

    /// Smallest interval count satisfying `2M > 3N`.
    pub fn dealiased_intervals(modes: usize) -> usize {
        3 * modes / 2 + 1
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn points(&self) -> Vec<f64> {
        (1..self.intervals).map(|j| j as f64 / self.intervals as f64).collect()
    }

    pub fn to_physical(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }

    fn weight(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    /// `<g, e_n>` by the trapezoidal rule (endpoint values vanish).
    pub fn project(&self, g: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(g) * self.weight()
    }

    pub fn pointwise(&self, c: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        self.project(&self.to_physical(c).map(f))
    }

    /// `<f'(u) e_k, e_n>`.
    pub fn pointwise_jacobian(&self, c: &DVector<f64>, df: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.to_physical(c).map(df);
        let mut scaled = self.basis.clone();
        for (j, w) in d.iter().enumerate() {
            scaled.row_mut(j).scale_mut(*w);
        }
        self.basis.tr_mul(&scaled) * self.weight()
    }

    /// Galerkin projection of `-1/2 d(u^2)/dxi`, integrated by parts to
    /// `1/2 <u^2, e_n'>`.
    pub fn burgers(&self, c: &DVector<f64>) -> DVector<f64> {
        let u = self.to_physical(c);
        let sq = u.map(|x| x * x);
        self.basis_dx.tr_mul(&sq) * (0.5 * self.weight())
    }

    /// `<u e_k, e_n'>`.
    pub fn burgers_jacobian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let u = self.to_physical(c);
        let mut scaled = self.basis.clone();
        for (j, w) in u.iter().enumerate() {
            scaled.row_mut(j).scale_mut(*w);
        }
        self.basis_dx.tr_mul(&scaled) * self.weight()
    }
}
