//! The regularised equation `αx + Γ𝒥(x) = αy` and the control law built from it.
//!
//! For `p = 2` the duality map is the identity and the equation is a symmetric
//! positive-definite linear system. For `p > 2` it is solved by Newton's method with a
//! backtracking line search on the residual norm, started from the `p = 2` solution;
//! if Newton stalls, a damped Picard sweep takes over.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::gramian::ControlMap;
use crate::propagator::ControlBundle;
use crate::space::{DualVector, SpaceConfig, StateVector};

/// Tolerances and iteration limits of the regularised solve.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerSettings {
    pub alpha: f64,
    pub tol: f64,
    pub max_newton: usize,
    /// Relaxation of the fallback Picard sweep, in `(0, 1]`.
    pub damping: f64,
}

impl RegularizerSettings {
    pub fn new(alpha: f64) -> Result<Self> {
        let s = Self {
            alpha,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation {
                field: "solver.alphas".into(),
                message: format!("α must be positive, got {}", self.alpha),
            });
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Validation {
                field: "solver.tol".into(),
                message: format!("tolerance must be positive, got {}", self.tol),
            });
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Validation {
                field: "solver.newton_damping".into(),
                message: format!("damping must lie in (0, 1], got {}", self.damping),
            });
        }
        Ok(())
    }
}

impl Default for RegularizerSettings {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            tol: 1e-10,
            max_newton: 50,
            damping: 0.5,
        }
    }
}

fn symmetric(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    (gamma + gamma.transpose()) * 0.5
}

/// Solves `(aI + Γ) x = rhs` for symmetric positive semidefinite `Γ` and `a > 0`.
fn linear_solve(gamma: &DMatrix<f64>, a: f64, rhs: &StateVector) -> Result<StateVector> {
    let n = gamma.nrows();
    let shifted = symmetric(gamma) + DMatrix::identity(n, n) * a;
    let x = match shifted.clone().cholesky() {
        Some(ch) => ch.solve(rhs.coeffs()),
        None => shifted.lu().solve(rhs.coeffs()).ok_or(Error::SolverFailure {
            iterations: 0,
            residual: f64::INFINITY,
        })?,
    };
    Ok(StateVector::new(x))
}

fn residual(gamma: &DMatrix<f64>, a: f64, rhs: &StateVector, x: &StateVector, space: &SpaceConfig) -> nalgebra::DVector<f64> {
    x.coeffs() * a + gamma * space.duality_map(x).coeffs() - rhs.coeffs()
}

/// Newton iteration for `a·x + Γ𝒥(x) = rhs` from a given start.
pub fn solve_newton(
    gamma: &DMatrix<f64>,
    a: f64,
    rhs: &StateVector,
    settings: &RegularizerSettings,
    space: &SpaceConfig,
    init: &StateVector,
) -> Result<StateVector> {
    let n = gamma.nrows();
    let target = settings.tol * (1.0 + rhs.coeff_norm());
    let mut x = init.clone();
    let mut f = residual(gamma, a, rhs, &x, space);
    let mut iterations = 0;
    while f.norm() > target {
        if iterations == settings.max_newton {
            return picard_fallback(gamma, a, rhs, settings, space, x, iterations);
        }
        iterations += 1;
        let jac = DMatrix::identity(n, n) * a + gamma * space.duality_jacobian(&x);
        let Some(step) = jac.lu().solve(&f) else {
            return picard_fallback(gamma, a, rhs, settings, space, x, iterations);
        };
        let norm0 = f.norm();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = StateVector::new(x.coeffs() - &step * t);
            let ft = residual(gamma, a, rhs, &trial, space);
            if ft.norm() <= (1.0 - 1e-4 * t) * norm0 {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ft)) => {
                x = trial;
                f = ft;
            }
            None => return picard_fallback(gamma, a, rhs, settings, space, x, iterations),
        }
    }
    Ok(x)
}

fn picard_fallback(
    gamma: &DMatrix<f64>,
    a: f64,
    rhs: &StateVector,
    settings: &RegularizerSettings,
    space: &SpaceConfig,
    mut x: StateVector,
    newton_iterations: usize,
) -> Result<StateVector> {
    let target = settings.tol * (1.0 + rhs.coeff_norm());
    let d = settings.damping;
    let budget = 100 * settings.max_newton.max(1);
    let mut norm = f64::INFINITY;
    for _ in 0..budget {
        let update = (rhs.coeffs() - gamma * space.duality_map(&x).coeffs()) / a;
        x = StateVector::new(x.coeffs() * (1.0 - d) + update * d);
        norm = residual(gamma, a, rhs, &x, space).norm();
        if norm <= target {
            return Ok(x);
        }
        if !norm.is_finite() {
            break;
        }
    }
    Err(Error::SolverFailure {
        iterations: newton_iterations + budget,
        residual: norm,
    })
}

/// Solves `a·x + Γ𝒥(x) = rhs`; closed form for `p = 2`, Newton otherwise.
pub fn solve_shifted(
    gamma: &DMatrix<f64>,
    a: f64,
    rhs: &StateVector,
    settings: &RegularizerSettings,
    space: &SpaceConfig,
) -> Result<StateVector> {
    check_dim(gamma.nrows(), rhs.len())?;
    check_dim(gamma.ncols(), rhs.len())?;
    if a.is_nan() || a <= 0.0 {
        return Err(Error::Precondition(format!("shift must be positive, got {a}")));
    }
    let start = linear_solve(gamma, a, rhs)?;
    if space.p() == 2.0 {
        return Ok(start);
    }
    solve_newton(gamma, a, rhs, settings, space, &start)
}

/// `x_α(y)`: the solution of `αx + Γ𝒥(x) = αy`.
pub fn solve_regularized(
    gamma: &DMatrix<f64>,
    y: &StateVector,
    settings: &RegularizerSettings,
    space: &SpaceConfig,
) -> Result<StateVector> {
    settings.validate()?;
    solve_shifted(gamma, settings.alpha, &y.scaled(settings.alpha), settings, space)
}

/// Norm bound `‖x_α(y)‖ ≤ ‖y‖` (with relative slack 1e−8).
pub fn norm_bound_check(x_alpha: &StateVector, y: &StateVector, space: &SpaceConfig) -> bool {
    space.lp_norm(x_alpha) <= space.lp_norm(y) * (1.0 + 1e-8)
}

/// `‖x_α(y)‖` for each `α`.
pub fn alpha_limit_probe(
    gamma: &DMatrix<f64>,
    y: &StateVector,
    alphas: &[f64],
    settings: &RegularizerSettings,
    space: &SpaceConfig,
) -> Result<Vec<f64>> {
    alphas
        .iter()
        .map(|&alpha| {
            let s = RegularizerSettings {
                alpha,
                ..settings.clone()
            };
            Ok(space.lp_norm(&solve_regularized(gamma, y, &s, space)?))
        })
        .collect()
}

/// The regularised dual direction for a target defect `σ`.
#[derive(Clone, Debug)]
pub struct RegularizedDual {
    /// `z = (αI + Γ𝒥)⁻¹ σ`.
    pub z: StateVector,
    /// `φ̂_α = 𝒥(z)`.
    pub phi: DualVector,
}

impl RegularizedDual {
    pub fn solve(
        gamma: &DMatrix<f64>,
        sigma: &StateVector,
        settings: &RegularizerSettings,
        space: &SpaceConfig,
    ) -> Result<Self> {
        settings.validate()?;
        let z = solve_shifted(gamma, settings.alpha, sigma, settings, space)?;
        let phi = space.duality_map(&z);
        Ok(Self { z, phi })
    }

    /// Predicted terminal error `α z = x_α(σ)`.
    pub fn terminal_offset(&self, alpha: f64) -> StateVector {
        self.z.scaled(alpha)
    }
}

/// `(u_α, {v_k}) = M* φ̂_α`.
pub fn synthesize_controls(map: &ControlMap, phi_hat: &DualVector) -> Result<ControlBundle> {
    map.adjoint(phi_hat)
}
