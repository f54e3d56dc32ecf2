//! Regularised steering of the semilinear system and the α-sweep experiment.
//!
//! One application of the steering map `G_α` tabulates the nonlinear source along a
//! trajectory, forms the target defect `σ`, solves the regularised equation for the dual
//! direction `φ̂_α`, applies the controls `M*φ̂_α` and propagates a new trajectory. Its
//! fixed point is sought by (optionally damped) Picard iteration.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::gramian::{sigma_defect, ControlMap};
use crate::kernels::Nonlinearity;
use crate::propagator::{mild_solution, tabulate_source, ControlBundle, Plant, Source, Trajectory};
use crate::regularizer::{RegularizedDual, RegularizerSettings};
use crate::space::{SpaceConfig, StateVector};

/// Stopping rule of the Picard iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointSettings {
    /// Absolute sup-norm tolerance; `None` means `1e−8·(1 + ‖h‖)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Initial relaxation `d` in `x ← (1−d)x + d·G(x)`; halved whenever the residual grows.
    pub damping: f64,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

impl FixedPointSettings {
    pub fn tolerance(&self, h: &StateVector, space: &SpaceConfig) -> f64 {
        self.tol.unwrap_or(1e-8 * (1.0 + space.lp_norm(h)))
    }
}

/// Everything the steering map needs, assembled once per configuration.
pub struct Controller<'a> {
    pub plant: &'a Plant,
    pub map: &'a ControlMap,
    pub gramian: &'a DMatrix<f64>,
    pub space: &'a SpaceConfig,
}

/// Outcome of one application of `G_α`.
#[derive(Clone, Debug)]
pub struct SteeringStep {
    pub source: Vec<StateVector>,
    pub sigma: StateVector,
    pub dual: RegularizedDual,
    pub controls: ControlBundle,
    pub trajectory: Trajectory,
}

/// Per-α summary of a steering run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub alpha: f64,
    pub iterations: usize,
    pub fp_residual: f64,
    pub terminal_error: f64,
    pub identity_defect: f64,
    pub wall_ms: f64,
    pub converged: bool,
    pub sigma_norm: f64,
    pub max_control_norm: f64,
    /// `M̃β/α`, when the bound applies (`p = 2`).
    pub control_bound: Option<f64>,
}

impl ExperimentRecord {
    pub fn bound_holds(&self) -> Option<bool> {
        self.control_bound
            .map(|b| self.max_control_norm <= b * (1.0 + 1e-9))
    }
}

/// A converged steering run.
#[derive(Clone, Debug)]
pub struct SteeringRun {
    pub trajectory: Trajectory,
    pub controls: ControlBundle,
    pub sigma: StateVector,
    pub record: ExperimentRecord,
    pub residual_history: Vec<f64>,
}

impl<'a> Controller<'a> {
    pub fn new(plant: &'a Plant, map: &'a ControlMap, gramian: &'a DMatrix<f64>, space: &'a SpaceConfig) -> Result<Self> {
        check_dim(plant.n_modes(), space.n_modes())?;
        check_dim(plant.n_modes(), gramian.nrows())?;
        Ok(Self {
            plant,
            map,
            gramian,
            space,
        })
    }

    /// Trajectory with zero controls and the source evaluated causally along it.
    pub fn free_solution(&self, f: &dyn Nonlinearity) -> Result<Trajectory> {
        let source = if f.is_zero() { Source::None } else { Source::Causal(f) };
        mild_solution(self.plant, &self.plant.zero_controls(), &source)
    }

    /// `‖h − x_free(b)‖`.
    pub fn uncontrolled_defect(&self, f: &dyn Nonlinearity, h: &StateVector) -> Result<f64> {
        let free = self.free_solution(f)?;
        Ok(self.space.lp_norm(&(h - free.terminal())))
    }

    fn tabulate(&self, f: &dyn Nonlinearity, x: &Trajectory) -> Result<Vec<StateVector>> {
        if f.is_zero() {
            Ok(vec![StateVector::zeros(self.plant.n_modes()); x.left.len()])
        } else {
            tabulate_source(self.plant, x, f)
        }
    }

    /// One application of `G_α` to the trajectory `x`.
    pub fn steer_once(
        &self,
        f: &dyn Nonlinearity,
        h: &StateVector,
        x: &Trajectory,
        settings: &RegularizerSettings,
    ) -> Result<SteeringStep> {
        let source = self.tabulate(f, x)?;
        let sigma = sigma_defect(self.plant, self.map.chain(), h, &source)?;
        let dual = RegularizedDual::solve(self.gramian, &sigma, settings, self.space)?;
        let controls = self.map.adjoint(&dual.phi)?;
        let trajectory = mild_solution(self.plant, &controls, &Source::Table(&source))?;
        Ok(SteeringStep {
            source,
            sigma,
            dual,
            controls,
            trajectory,
        })
    }

    /// `‖x(b) − h + α(αI + Γ𝒥)⁻¹σ(x)‖`, with `σ` re-evaluated along `x`.
    pub fn terminal_identity_defect(
        &self,
        f: &dyn Nonlinearity,
        h: &StateVector,
        x: &Trajectory,
        settings: &RegularizerSettings,
    ) -> Result<f64> {
        let source = self.tabulate(f, x)?;
        let sigma = sigma_defect(self.plant, self.map.chain(), h, &source)?;
        let dual = RegularizedDual::solve(self.gramian, &sigma, settings, self.space)?;
        let predicted = h - &dual.terminal_offset(settings.alpha);
        Ok(self.space.lp_norm(&(x.terminal() - &predicted)))
    }

    /// Picard iteration for the fixed point of `G_α`.
    pub fn fixed_point_solve(
        &self,
        f: &dyn Nonlinearity,
        h: &StateVector,
        settings: &RegularizerSettings,
        fp: &FixedPointSettings,
    ) -> Result<SteeringRun> {
        let clock = Instant::now();
        let tol = fp.tolerance(h, self.space);
        let mut x = mild_solution(self.plant, &self.plant.zero_controls(), &Source::None)?;
        let mut history: Vec<f64> = Vec::new();
        let mut damping = fp.damping;
        for iteration in 1..=fp.max_iter.max(1) {
            let step = self.steer_once(f, h, &x, settings)?;
            // without a nonlinear source G_α does not depend on its argument
            let residual = if f.is_zero() {
                0.0
            } else {
                step.trajectory.sup_distance(&x, self.space)
            };
            if !residual.is_finite() {
                break;
            }
            if history.last().is_some_and(|&prev| residual > prev) {
                damping = (damping * 0.5).max(1.0 / 1024.0);
            }
            history.push(residual);
            if residual <= tol {
                let defect = self.terminal_identity_defect(f, h, &step.trajectory, settings)?;
                let record = self.record(settings.alpha, iteration, residual, defect, &step, h, clock);
                return Ok(SteeringRun {
                    trajectory: step.trajectory,
                    controls: step.controls,
                    sigma: step.sigma,
                    record,
                    residual_history: history,
                });
            }
            x = if damping == 1.0 {
                step.trajectory
            } else {
                x.blend(&step.trajectory, damping)
            };
        }
        Err(Error::FixedPoint {
            iterations: history.len(),
            last: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        alpha: f64,
        iterations: usize,
        fp_residual: f64,
        identity_defect: f64,
        step: &SteeringStep,
        h: &StateVector,
        clock: Instant,
    ) -> ExperimentRecord {
        let terminal_error = self.space.lp_norm(&(step.trajectory.terminal() - h));
        let control_bound = (self.space.p() == 2.0)
            .then(|| ControlBoundConstants::new(self.plant, h, &step.source).bound(alpha));
        ExperimentRecord {
            alpha,
            iterations,
            fp_residual,
            terminal_error,
            identity_defect,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            converged: true,
            sigma_norm: self.space.lp_norm(&step.sigma),
            max_control_norm: step.controls.max_u_norm(),
            control_bound,
        }
    }

    /// Runs the fixed point for every `α`; failures are kept as unconverged records.
    pub fn alpha_sweep(
        &self,
        f: &dyn Nonlinearity,
        h: &StateVector,
        alphas: &[f64],
        settings: &RegularizerSettings,
        fp: &FixedPointSettings,
    ) -> Vec<ExperimentRecord> {
        alphas
            .par_iter()
            .map(|&alpha| {
                let s = RegularizerSettings {
                    alpha,
                    ..settings.clone()
                };
                let clock = Instant::now();
                match self.fixed_point_solve(f, h, &s, fp) {
                    Ok(run) => run.record,
                    Err(err) => failed_record(alpha, &err, clock),
                }
            })
            .collect()
    }
}

fn failed_record(alpha: f64, err: &Error, clock: Instant) -> ExperimentRecord {
    let (iterations, fp_residual) = match err {
        Error::FixedPoint { iterations, last, .. } => (*iterations, *last),
        Error::SolverFailure { iterations, residual } => (*iterations, *residual),
        _ => (0, f64::NAN),
    };
    ExperimentRecord {
        alpha,
        iterations,
        fp_residual,
        terminal_error: f64::NAN,
        identity_defect: f64::NAN,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged: false,
        sigma_norm: f64::NAN,
        max_control_norm: f64::NAN,
        control_bound: None,
    }
}

/// Constants of the a-priori control bound `‖u_α(s)‖ ≤ M̃β/α`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBoundConstants {
    /// `M̃ = M_B Σ_{k=1}^{m+1} M_ℛ^k (1 + M_D)^{k−1}`.
    pub m_tilde: f64,
    /// Bound on `‖σ‖` from the norms of `h`, `ψ(0)` and the sources.
    pub beta: f64,
}

impl ControlBoundConstants {
    pub fn new(plant: &Plant, h: &StateVector, source: &[StateVector]) -> Self {
        let m = plant.schedule.len();
        let m_b = plant.control.bound();
        let m_r = plant.resolvent.bound();
        let growth = 1.0 + plant.schedule.d_bound();
        let m_tilde = m_b
            * (1..=m + 1)
                .map(|k| m_r.powi(k as i32) * growth.powi(k as i32 - 1))
                .sum::<f64>();

        let grid = plant.grid();
        let step = grid.h();
        let bounds = grid.segment_bounds();
        let mut beta = h.coeff_norm() + m_r.powi(m as i32 + 1) * growth.powi(m as i32) * plant.history.at_zero().coeff_norm();
        for seg in 0..=m {
            let (a, e) = (bounds[seg], bounds[seg + 1]);
            let l1: f64 = (a..=e)
                .map(|j| {
                    let w = if j == a || j == e { 0.5 * step } else { step };
                    w * (source[j].coeffs() + plant.forcing[j].coeffs()).norm()
                })
                .sum();
            // impulses between the end of this segment and b
            let k = (m - seg) as i32;
            beta += growth.powi(k) * m_r.powi(k + 1) * l1;
        }
        Self { m_tilde, beta }
    }

    pub fn bound(&self, alpha: f64) -> f64 {
        self.m_tilde * self.beta / alpha
    }
}
