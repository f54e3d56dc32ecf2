//! The state space `X = L^p(0, π)` realised on a truncated sine eigenbasis.
//!
//! States are stored as coefficients against `ã_k(ζ) = √(2/π) sin(kζ)`, `k = 1..n_modes`.
//! Pointwise work (norms, the duality map) happens on a uniform spatial grid that
//! includes both endpoints, weighted with the composite trapezoid rule. On that grid
//! the retained sines are exactly orthonormal, so the coefficient/grid transform is
//! lossless and the dual pairing reduces to a coefficient dot product.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// An element of `X`, stored as sine coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(DVector<f64>);

/// An element of `X* = L^q`, stored against the same basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector(DVector<f64>);

macro_rules! coefficient_vector {
    ($name:ident) => {
        impl $name {
            pub fn new(coeffs: DVector<f64>) -> Self {
                Self(coeffs)
            }

            pub fn from_vec(coeffs: Vec<f64>) -> Self {
                Self(DVector::from_vec(coeffs))
            }

            pub fn zeros(n: usize) -> Self {
                Self(DVector::zeros(n))
            }

            /// Unit coefficient vector for mode `k` (1-based, matching `ã_k`).
            pub fn unit(n: usize, k: usize) -> Self {
                assert!(k >= 1 && k <= n, "mode index {k} outside 1..={n}");
                let mut v = DVector::zeros(n);
                v[k - 1] = 1.0;
                Self(v)
            }

            pub fn coeffs(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_inner(self) -> DVector<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn scaled(&self, a: f64) -> Self {
                Self(&self.0 * a)
            }

            /// Euclidean norm of the coefficients.
            pub fn coeff_norm(&self) -> f64 {
                self.0.norm()
            }
        }

        impl Add for &$name {
            type Output = $name;
            fn add(self, rhs: Self) -> $name {
                $name(&self.0 + &rhs.0)
            }
        }

        impl Sub for &$name {
            type Output = $name;
            fn sub(self, rhs: Self) -> $name {
                $name(&self.0 - &rhs.0)
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: Self) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: Self) -> $name {
                $name(self.0 - rhs.0)
            }
        }

        impl Mul<f64> for &$name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(&self.0 * rhs)
            }
        }

        impl Mul<f64> for $name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(self.0 * rhs)
            }
        }

        impl Neg for $name {
            type Output = $name;
            fn neg(self) -> $name {
                $name(-self.0)
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                Self(v)
            }
        }
    };
}

coefficient_vector!(StateVector);
coefficient_vector!(DualVector);

/// Duality pairing `⟨f, x⟩`; a dot product because the basis is L²-orthonormal.
pub fn pairing(f: &DualVector, x: &StateVector) -> Result<f64> {
    check_dim(f.len(), x.len())?;
    Ok(f.0.dot(&x.0))
}

/// Spectrum `λ_k = −k²` of the Dirichlet Laplacian on `(0, π)`.
pub fn laplacian_eigenvalues(n_modes: usize) -> Vec<f64> {
    (1..=n_modes).map(|k| -((k * k) as f64)).collect()
}

/// Sine basis function `ã_k(ζ)`.
pub fn basis_function(k: usize, zeta: f64) -> f64 {
    (2.0 / PI).sqrt() * (k as f64 * zeta).sin()
}

/// Discretisation of `L^p(0, π)`.
#[derive(Clone, Debug)]
pub struct SpaceConfig {
    p: f64,
    n_modes: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `n_grid × n_modes`, entry `(i, k)` is `ã_{k+1}(ζ_i)`.
    basis: DMatrix<f64>,
    /// `Φᵀ W`, the discrete projection onto coefficients.
    projector: DMatrix<f64>,
}

impl SpaceConfig {
    pub fn new(p: f64, n_modes: usize, n_grid: usize) -> Result<Self> {
        if !(p.is_finite() && p >= 2.0) {
            return Err(Error::Validation {
                field: "space.p".into(),
                message: format!("exponent must lie in [2, ∞), got {p}"),
            });
        }
        if n_modes == 0 {
            return Err(Error::Validation {
                field: "space.n_modes".into(),
                message: "at least one mode is required".into(),
            });
        }
        // n_grid - 2 interior nodes must resolve every retained sine
        if n_grid < 2 * n_modes || n_grid < n_modes + 2 {
            return Err(Error::Validation {
                field: "space.n_grid".into(),
                message: format!(
                    "{n_grid} nodes cannot resolve {n_modes} modes (need at least {})",
                    (2 * n_modes).max(n_modes + 2)
                ),
            });
        }
        let step = PI / (n_grid - 1) as f64;
        let nodes: Vec<f64> = (0..n_grid).map(|i| i as f64 * step).collect();
        let mut weights = vec![step; n_grid];
        weights[0] *= 0.5;
        weights[n_grid - 1] *= 0.5;
        let basis = DMatrix::from_fn(n_grid, n_modes, |i, k| basis_function(k + 1, nodes[i]));
        let projector = DMatrix::from_fn(n_modes, n_grid, |k, i| weights[i] * basis[(i, k)]);
        Ok(Self {
            p,
            n_modes,
            nodes,
            weights,
            basis,
            projector,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Conjugate exponent `q = p/(p−1)`.
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        laplacian_eigenvalues(self.n_modes)
    }

    /// Samples `Σ_k c_k ã_k(ζ_i)` at every grid node.
    pub fn to_grid(&self, x: &StateVector) -> Result<DVector<f64>> {
        check_dim(self.n_modes, x.len())?;
        Ok(&self.basis * &x.0)
    }

    /// Discrete L² projection of grid samples onto the retained modes.
    pub fn from_grid(&self, samples: &DVector<f64>) -> Result<StateVector> {
        check_dim(self.n_grid(), samples.len())?;
        Ok(StateVector(&self.projector * samples))
    }

    fn dual_from_grid(&self, samples: &DVector<f64>) -> DualVector {
        DualVector(&self.projector * samples)
    }

    /// `(Σ_i w_i |s_i|^r)^{1/r}` for an arbitrary exponent `r ≥ 1`.
    pub fn weighted_norm(&self, samples: &DVector<f64>, r: f64) -> f64 {
        let peak = samples.amax();
        if peak == 0.0 || !peak.is_finite() {
            return peak;
        }
        let sum: f64 = samples
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (s.abs() / peak).powf(r))
            .sum();
        peak * sum.powf(1.0 / r)
    }

    /// `L^p` norm of grid samples.
    pub fn lp_norm_samples(&self, samples: &DVector<f64>) -> f64 {
        self.weighted_norm(samples, self.p)
    }

    /// `‖x‖_{L^p}` evaluated by quadrature on the grid.
    pub fn lp_norm(&self, x: &StateVector) -> f64 {
        self.lp_norm_samples(&(&self.basis * &x.0))
    }

    /// Duality map `𝒥x = ‖x‖^{2−p} |x|^{p−2} x`, applied pointwise and projected back.
    ///
    /// On the grid this is exactly the gradient of `½‖x‖²`, so
    /// `⟨𝒥x, x⟩ = ‖x‖²` holds to rounding.
    pub fn duality_map(&self, x: &StateVector) -> DualVector {
        if self.p == 2.0 {
            return DualVector(x.0.clone());
        }
        let s = &self.basis * &x.0;
        let norm = self.lp_norm_samples(&s);
        if norm == 0.0 {
            return DualVector::zeros(self.n_modes);
        }
        let exponent = self.p - 2.0;
        let j = s.map(|v| (v.abs() / norm).powf(exponent) * v);
        self.dual_from_grid(&j)
    }

    /// Jacobian of the duality map (the Hessian of `½‖x‖²`), symmetric positive semidefinite.
    pub fn duality_jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        let n = self.n_modes;
        if self.p == 2.0 {
            return DMatrix::identity(n, n);
        }
        let s = &self.basis * &x.0;
        let norm = self.lp_norm_samples(&s);
        if norm == 0.0 {
            return DMatrix::zeros(n, n);
        }
        let exponent = self.p - 2.0;
        let a = s.map(|v| (v.abs() / norm).powf(exponent));
        let mut weighted = self.basis.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= self.weights[i] * a[i];
        }
        let mut h = self.basis.transpose() * weighted * (self.p - 1.0);
        let j = self.projector.clone() * s.component_mul(&a);
        h -= (&j * j.transpose()) * ((self.p - 2.0) / (norm * norm));
        h
    }

    /// Inverse of the duality map on the retained subspace.
    ///
    /// Minimises the strictly convex `½‖x‖² − ⟨f, x⟩` by damped Newton.
    pub fn inverse_duality_map(&self, f: &DualVector) -> Result<StateVector> {
        check_dim(self.n_modes, f.len())?;
        if self.p == 2.0 {
            return Ok(StateVector(f.0.clone()));
        }
        let scale = f.0.norm();
        if scale == 0.0 {
            return Ok(StateVector::zeros(self.n_modes));
        }
        let objective = |x: &StateVector| {
            let n = self.lp_norm(x);
            0.5 * n * n - f.0.dot(&x.0)
        };
        let mut x = StateVector(f.0.clone());
        let tol = 1e-13 * scale.max(1.0);
        for _ in 0..100 {
            let grad = &self.duality_map(&x).0 - &f.0;
            if grad.norm() <= tol {
                return Ok(x);
            }
            let hess = self.duality_jacobian(&x);
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => hess
                    .lu()
                    .solve(&grad)
                    .ok_or_else(|| Error::SolverFailure {
                        iterations: 0,
                        residual: grad.norm(),
                    })?,
            };
            let f0 = objective(&x);
            let gnorm = grad.norm();
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = StateVector(&x.0 - &step * t);
                // near the solution the objective decrease drops below rounding,
                // so a reduced gradient also qualifies
                let sufficient = objective(&trial) <= f0 - 1e-4 * t * slope
                    || (&self.duality_map(&trial).0 - &f.0).norm() < (1.0 - 1e-4 * t) * gnorm;
                if sufficient {
                    x = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // objective is flat at rounding level; accept if gradient is small
                let residual = grad.norm();
                if residual <= 1e-10 * scale.max(1.0) {
                    return Ok(x);
                }
                return Err(Error::SolverFailure {
                    iterations: 100,
                    residual,
                });
            }
        }
        let residual = (&self.duality_map(&x).0 - &f.0).norm();
        if residual <= 1e-10 * scale.max(1.0) {
            Ok(x)
        } else {
            Err(Error::SolverFailure {
                iterations: 100,
                residual,
            })
        }
    }

    /// Norm of a functional on the retained subspace: `‖f‖_* = ‖𝒥⁻¹f‖`.
    pub fn dual_norm(&self, f: &DualVector) -> Result<f64> {
        Ok(self.lp_norm(&self.inverse_duality_map(f)?))
    }
}
