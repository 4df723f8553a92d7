//! The state space in the eigenbasis of the linear operator `A`.
//!
//! `A` is stored purely by its eigenvalues. The semigroup `T_t = exp(-A t)`
//! acts diagonally, and the negative eigenvalues span the finite-dimensional
//! unstable block `H-` of the hyperbolic splitting `H = H+ (+) H-`.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Sub};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("zero eigenvalue at mode {mode}: the splitting H+ (+) H- is undefined")]
    ZeroEigenvalue { mode: usize },
    #[error("vector has {found} coordinates but the operator has {expected} modes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector belongs to a different basis")]
    BasisMismatch,
    #[error("vector is not in H-: coordinate {mode} is {value:e}")]
    NotInMinusSubspace { mode: usize, value: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainTag {
    Abstract,
    /// `-viscosity * Laplacian` on (0, 1) with zero Dirichlet conditions.
    DirichletInterval { viscosity: f64 },
    /// `-viscosity * Laplacian` on the unit box in `dim` dimensions.
    DirichletBox { viscosity: f64, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    eigenvalues: Vec<f64>,
    unstable_dim: usize,
    tag: DomainTag,
    basis_id: u64,
}

fn fingerprint(eigs: &[f64], tag: &DomainTag) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for e in eigs {
        e.to_bits().hash(&mut h);
    }
    format!("{tag:?}").hash(&mut h);
    h.finish()
}

impl OperatorSpec {
    /// Eigenvalues must be finite and non-decreasing. Repeated values are
    /// allowed; zero is allowed here but rejected by [`require_splitting`].
    ///
    /// [`require_splitting`]: OperatorSpec::require_splitting
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self, SpaceError> {
        Self::with_tag(eigenvalues, DomainTag::Abstract)
    }

    fn with_tag(eigenvalues: Vec<f64>, tag: DomainTag) -> Result<Self, SpaceError> {
        if eigenvalues.is_empty() {
            return Err(SpaceError::InvalidOperator("no eigenvalues".into()));
        }
        if eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(SpaceError::InvalidOperator("non-finite eigenvalue".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(SpaceError::InvalidOperator("eigenvalues must be non-decreasing".into()));
        }
        let unstable_dim = eigenvalues.iter().filter(|e| **e < 0.0).count();
        let basis_id = fingerprint(&eigenvalues, &tag);
        Ok(Self { eigenvalues, unstable_dim, tag, basis_id })
    }

    /// First `n` eigenvalues of `-viscosity * d^2/dxi^2` on (0, 1):
    /// `viscosity * k^2 pi^2`.
    pub fn dirichlet_interval(n: usize, viscosity: f64) -> Result<Self, SpaceError> {
        if !(viscosity > 0.0) {
            return Err(SpaceError::InvalidOperator(format!("viscosity {viscosity} must be positive")));
        }
        let eigs = (1..=n).map(|k| viscosity * (k * k) as f64 * PI * PI).collect();
        Self::with_tag(eigs, DomainTag::DirichletInterval { viscosity })
    }

    /// The `n` smallest eigenvalues `viscosity * pi^2 |k|^2` of the Dirichlet
    /// Laplacian on `(0,1)^dim`, with multiplicity.
    pub fn dirichlet_box(n: usize, viscosity: f64, dim: usize) -> Result<Self, SpaceError> {
        if !(viscosity > 0.0) || dim == 0 || dim > 3 {
            return Err(SpaceError::InvalidOperator(format!(
                "box Laplacian needs positive viscosity and dim in 1..=3 (got {viscosity}, {dim})"
            )));
        }
        // Every index k_i <= n contributes, which over-covers the n smallest.
        let mut sums: Vec<usize> = Vec::new();
        let mut idx = vec![1usize; dim];
        loop {
            sums.push(idx.iter().map(|k| k * k).sum());
            let mut d = 0;
            loop {
                if d == dim {
                    sums.sort_unstable();
                    let eigs = sums.iter().take(n).map(|s| viscosity * *s as f64 * PI * PI).collect();
                    return Self::with_tag(eigs, DomainTag::DirichletBox { viscosity, dim });
                }
                idx[d] += 1;
                if idx[d] <= n {
                    break;
                }
                idx[d] = 1;
                d += 1;
            }
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `m`, the number of negative eigenvalues.
    pub fn unstable_dim(&self) -> usize {
        self.unstable_dim
    }

    pub fn tag(&self) -> DomainTag {
        self.tag
    }

    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    /// Fails on a vanishing eigenvalue; the sign pattern is ordered by construction.
    pub fn require_splitting(&self) -> Result<(), SpaceError> {
        match self.eigenvalues.iter().position(|e| *e == 0.0) {
            Some(mode) => Err(SpaceError::ZeroEigenvalue { mode }),
            None => Ok(()),
        }
    }

    /// Largest negative eigenvalue `mu_m`, if any.
    pub fn mu_minus(&self) -> Option<f64> {
        self.unstable_dim.checked_sub(1).map(|i| self.eigenvalues[i])
    }

    /// Smallest positive eigenvalue `mu_{m+1}`, if any.
    pub fn mu_plus(&self) -> Option<f64> {
        self.eigenvalues.iter().copied().find(|e| *e > 0.0)
    }

    /// `sum 1/|mu_n|`: the truncated trace of `|A|^-1`, reported as a diagnostic.
    pub fn trace_inverse(&self) -> f64 {
        self.eigenvalues.iter().map(|e| 1.0 / e.abs()).sum()
    }

    pub fn zeros(&self) -> ModeVec {
        ModeVec { coords: DVector::zeros(self.mode_count()), basis_id: self.basis_id }
    }

    pub fn vector(&self, coords: DVector<f64>) -> Result<ModeVec, SpaceError> {
        if coords.len() != self.mode_count() {
            return Err(SpaceError::DimensionMismatch { expected: self.mode_count(), found: coords.len() });
        }
        Ok(ModeVec { coords, basis_id: self.basis_id })
    }

    pub fn basis_vector(&self, n: usize) -> ModeVec {
        let mut v = self.zeros();
        v.coords[n] = 1.0;
        v
    }

    fn check(&self, v: &ModeVec) -> Result<(), SpaceError> {
        if v.basis_id != self.basis_id {
            return Err(SpaceError::BasisMismatch);
        }
        Ok(())
    }

    /// `T_t v`: coordinate n scaled by `exp(-mu_n t)`.
    pub fn semigroup_apply(&self, t: f64, v: &ModeVec) -> Result<ModeVec, SpaceError> {
        if t < 0.0 {
            return Err(SpaceError::NegativeTime(t));
        }
        self.check(v)?;
        let coords = DVector::from_iterator(
            v.coords.len(),
            v.coords.iter().zip(&self.eigenvalues).map(|(c, mu)| (-mu * t).exp() * c),
        );
        Ok(ModeVec { coords, basis_id: self.basis_id })
    }

    /// `p+ v` or `p- v`: masks the coordinates outside the chosen block.
    pub fn project(&self, sign: Sign, v: &ModeVec) -> Result<ModeVec, SpaceError> {
        self.check(v)?;
        let m = self.unstable_dim;
        let mut out = v.clone();
        for (n, c) in out.coords.iter_mut().enumerate() {
            let keep = match sign {
                Sign::Minus => n < m,
                Sign::Plus => n >= m,
            };
            if !keep {
                *c = 0.0;
            }
        }
        Ok(out)
    }

    /// `T_{-t} = [T_t | H-]^{-1}`; coordinate n scaled by `exp(mu_n t)`.
    pub fn semigroup_inverse_minus(&self, t: f64, v: &ModeVec) -> Result<ModeVec, SpaceError> {
        if t < 0.0 {
            return Err(SpaceError::NegativeTime(t));
        }
        self.check(v)?;
        let m = self.unstable_dim;
        if let Some((mode, value)) =
            v.coords.iter().enumerate().skip(m).find(|(_, c)| c.abs() > 1e-12).map(|(i, c)| (i, *c))
        {
            return Err(SpaceError::NotInMinusSubspace { mode, value });
        }
        let mut out = self.zeros();
        for n in 0..m {
            out.coords[n] = (self.eigenvalues[n] * t).exp() * v.coords[n];
        }
        Ok(out)
    }
}

/// A state vector in the eigenbasis of an [`OperatorSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeVec {
    pub coords: DVector<f64>,
    basis_id: u64,
}

impl ModeVec {
    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    /// H-norm; the eigenbasis is orthonormal.
    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn checked_add(&self, other: &ModeVec) -> Result<ModeVec, SpaceError> {
        if self.basis_id != other.basis_id {
            return Err(SpaceError::BasisMismatch);
        }
        Ok(ModeVec { coords: &self.coords + &other.coords, basis_id: self.basis_id })
    }

    pub fn checked_sub(&self, other: &ModeVec) -> Result<ModeVec, SpaceError> {
        if self.basis_id != other.basis_id {
            return Err(SpaceError::BasisMismatch);
        }
        Ok(ModeVec { coords: &self.coords - &other.coords, basis_id: self.basis_id })
    }

    pub fn scaled(&self, a: f64) -> ModeVec {
        ModeVec { coords: &self.coords * a, basis_id: self.basis_id }
    }
}

impl Add for &ModeVec {
    type Output = ModeVec;

    fn add(self, rhs: &ModeVec) -> ModeVec {
        self.checked_add(rhs).expect("ModeVec addition across bases")
    }
}

impl Sub for &ModeVec {
    type Output = ModeVec;

    fn sub(self, rhs: &ModeVec) -> ModeVec {
        self.checked_sub(rhs).expect("ModeVec subtraction across bases")
    }
}
