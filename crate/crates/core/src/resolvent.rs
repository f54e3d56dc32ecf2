//! The resolvent family on the time grid, one scalar Volterra problem per eigenmode.
//!
//! For an eigenvalue `λ` of `A` the resolvent acts as multiplication by `r(t)` solving
//!
//! ```text
//! d/dt [ r(t) + ∫₀ᵗ g(t−s) r(s) ds ] = λ r(t) + ∫₀ᵗ n(t−s) r(s) ds,   r(0) = 1.
//! ```
//!
//! The outer derivative is integrated with the trapezoid rule. The neutral convolution
//! is evaluated by product integration (the piecewise-linear interpolant of `r` is
//! integrated exactly against `g`), which keeps second order despite the `t^γ` cusp of
//! the kernel; the smooth relaxation convolution uses the plain trapezoid rule.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelParams, ScalarKernel};
use crate::quadrature::gauss8;
use crate::space::StateVector;

/// Uniform time grid on `[0, b]` whose nodes include every impulse instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    b: f64,
    n_steps: usize,
    impulse_indices: Vec<usize>,
}

impl TimeGrid {
    pub fn new(b: f64, n_steps: usize, impulse_times: &[f64]) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Validation {
                field: "grid.b".into(),
                message: format!("final time must be positive, got {b}"),
            });
        }
        if n_steps < 2 {
            return Err(Error::Validation {
                field: "grid.n_steps".into(),
                message: format!("need at least 2 steps, got {n_steps}"),
            });
        }
        let mut grid = Self {
            b,
            n_steps,
            impulse_indices: Vec::new(),
        };
        let mut previous = 0;
        for &t in impulse_times {
            if !(t > 0.0 && t < b) {
                return Err(Error::Validation {
                    field: "impulses.times".into(),
                    message: format!("impulse instant {t} must lie strictly inside (0, {b})"),
                });
            }
            let j = grid.index_of(t)?;
            if j <= previous {
                return Err(Error::Validation {
                    field: "impulses.times".into(),
                    message: "impulse instants must be strictly increasing".into(),
                });
            }
            grid.impulse_indices.push(j);
            previous = j;
        }
        Ok(grid)
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.b / self.n_steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.b
        } else {
            j as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|j| self.node(j)).collect()
    }

    pub fn impulse_indices(&self) -> &[usize] {
        &self.impulse_indices
    }

    pub fn impulse_times(&self) -> Vec<f64> {
        self.impulse_indices.iter().map(|&j| self.node(j)).collect()
    }

    /// Segment boundaries `0 = j_0 < j_1 < … < j_m < j_{m+1} = N` as node indices.
    pub fn segment_bounds(&self) -> Vec<usize> {
        let mut bounds = vec![0];
        bounds.extend_from_slice(&self.impulse_indices);
        bounds.push(self.n_steps);
        bounds
    }

    /// Index of the node equal to `t` (to within rounding of the step).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let pos = t / self.h();
        let j = pos.round();
        if j < 0.0 || j > self.n_steps as f64 || (pos - j).abs() > 1e-9 * (1.0 + pos.abs()) {
            return Err(Error::OffGrid { t });
        }
        Ok(j as usize)
    }
}

/// Panel moments of a kernel against the two hat functions on `[ph, (p+1)h]`:
/// `(∫ g, ∫ g·(τ−ph)/h)`.
fn panel_moments(kernel: &ScalarKernel, h: f64, count: usize) -> Vec<(f64, f64)> {
    (0..count)
        .map(|p| {
            let a = p as f64 * h;
            let b = a + h;
            (
                kernel.integrate_against(a, b, |_| 1.0),
                kernel.integrate_against(a, b, |tau| (tau - a) / h),
            )
        })
        .collect()
}

/// Solves the scalar resolvent equation for one eigenvalue.
pub fn solve_mode(
    lambda: f64,
    g: &ScalarKernel,
    n: &ScalarKernel,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let moments = panel_moments(g, grid.h(), grid.n_steps());
    solve_with_moments(lambda, &moments, n, grid)
}

fn solve_with_moments(
    lambda: f64,
    moments: &[(f64, f64)],
    n: &ScalarKernel,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let steps = grid.n_steps();
    let h = grid.h();
    let n_vals: Vec<f64> = (0..=steps).map(|j| n.value(j as f64 * h)).collect();
    let n_active = !n.is_zero();

    // G_j = Σ_p [(A_p − B_p) r_{j−p} + B_p r_{j−p−1}], omitting the unknown r_j term
    let neutral_known = |r: &[f64], j: usize| -> f64 {
        let mut acc = moments[0].1 * r[j - 1];
        for p in 1..j {
            let (a, b) = moments[p];
            acc += (a - b) * r[j - p] + b * r[j - p - 1];
        }
        acc
    };
    // trapezoid for (n*r)(t_j), omitting the ½h n(0) r_j term
    let relax_known = |r: &[f64], j: usize| -> f64 {
        if !n_active || j == 0 {
            return 0.0;
        }
        let mut acc = 0.5 * n_vals[j] * r[0];
        for i in 1..j {
            acc += n_vals[j - i] * r[i];
        }
        acc * h
    };

    let diag_neutral = moments.first().map_or(0.0, |&(a, b)| a - b);
    let coeff = 1.0 + diag_neutral - 0.5 * h * lambda - 0.25 * h * h * n_vals[0];
    if coeff.abs() < 1e-12 {
        return Err(Error::Config(format!(
            "implicit step coefficient {coeff:e} vanishes for λ = {lambda}; reduce the time step"
        )));
    }

    let mut r = vec![0.0; steps + 1];
    r[0] = 1.0;
    let mut y_prev = 1.0;
    let mut c_prev = 0.0;
    for j in 1..=steps {
        let g_known = neutral_known(&r, j);
        let c_known = relax_known(&r, j);
        let rhs = y_prev - g_known + 0.5 * h * (lambda * r[j - 1] + c_prev + c_known);
        r[j] = rhs / coeff;
        y_prev = r[j] + g_known + diag_neutral * r[j];
        c_prev = c_known + 0.5 * h * n_vals[0] * r[j];
    }
    Ok(r)
}

/// Per-mode samples of the diagonal resolvent `ℛ(t_j)`.
#[derive(Clone, Debug)]
pub struct ResolventFamily {
    eigenvalues: Vec<f64>,
    grid: TimeGrid,
    neutral: ScalarKernel,
    relaxation: ScalarKernel,
    /// `n_modes × (n_steps + 1)`.
    modes: DMatrix<f64>,
    bound: f64,
}

impl ResolventFamily {
    pub fn build(eigs: &[f64], kp: &KernelParams, grid: &TimeGrid) -> Result<Self> {
        Self::build_with(eigs, &kp.neutral(), &kp.relaxation(), grid)
    }

    pub fn build_with(
        eigs: &[f64],
        g: &ScalarKernel,
        n: &ScalarKernel,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let moments = panel_moments(g, grid.h(), grid.n_steps());
        let rows: Vec<Vec<f64>> = eigs
            .par_iter()
            .map(|&lambda| solve_with_moments(lambda, &moments, n, grid))
            .collect::<Result<_>>()?;
        let cols = grid.n_steps() + 1;
        let modes = DMatrix::from_fn(eigs.len(), cols, |k, j| rows[k][j]);
        let bound = modes.amax();
        Ok(Self {
            eigenvalues: eigs.to_vec(),
            grid: grid.clone(),
            neutral: *g,
            relaxation: *n,
            modes,
            bound,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `M_ℛ = max_{k,j} |r_k(t_j)|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// `r_k(t_j)` with 0-based mode index.
    pub fn value(&self, mode: usize, j: usize) -> f64 {
        self.modes[(mode, j)]
    }

    /// `ℛ(t_j) x`.
    pub fn apply_index(&self, j: usize, x: &StateVector) -> Result<StateVector> {
        check_dim(self.n_modes(), x.len())?;
        Ok(StateVector::new(self.modes.column(j).component_mul(x.coeffs())))
    }

    /// `ℛ(t) x` for a grid node `t`.
    pub fn apply(&self, t: f64, x: &StateVector) -> Result<StateVector> {
        let j = self.grid.index_of(t)?;
        self.apply_index(j, x)
    }

    /// `ℛ(t_j)` as a diagonal matrix.
    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.modes.column(j).into_owned())
    }

    /// Defects of the integrated identity at nodes `1..N`, written both as `g * r` and
    /// as `r * g`. The samples are interpolated by local cubics and every integral is
    /// evaluated by Gauss–Legendre panels, independently of the stepping scheme.
    pub fn residual_arrays(&self, mode: usize) -> (Vec<f64>, Vec<f64>) {
        let r: Vec<f64> = self.modes.row(mode).iter().copied().collect();
        let lambda = self.eigenvalues[mode];
        let h = self.grid.h();
        let steps = self.grid.n_steps();
        let interp = CubicInterpolant::new(&r, h);
        let n_primitive = |tau: f64| self.relaxation.primitive(tau);

        let mut forward = Vec::with_capacity(steps.saturating_sub(1));
        let mut commuted = Vec::with_capacity(steps.saturating_sub(1));
        for j in 1..steps {
            let t = j as f64 * h;
            let mut integral_r = 0.0;
            let mut relax = 0.0;
            let mut gr = 0.0;
            let mut rg = 0.0;
            for i in 0..j {
                let (s0, s1) = (i as f64 * h, (i + 1) as f64 * h);
                integral_r += gauss8().integrate(s0, s1, |s| interp.eval(s));
                if !self.relaxation.is_zero() {
                    relax += gauss8().integrate(s0, s1, |s| n_primitive(t - s) * interp.eval(s));
                }
                // g*r: ∫ g(t−s) r(s) ds over the s-panel, as a τ = t − s integral
                gr += self
                    .neutral
                    .integrate_against(t - s1, t - s0, |tau| interp.eval(t - tau));
                // r*g: ∫ r(t−s) g(s) ds over the same s-panel
                rg += self
                    .neutral
                    .integrate_against(s0, s1, |s| interp.eval(t - s));
            }
            let common = r[j] - 1.0 - lambda * integral_r - relax;
            forward.push(common + gr);
            commuted.push(common + rg);
        }
        (forward, commuted)
    }

    /// Largest absolute defect of either identity over interior nodes.
    pub fn residual(&self, mode: usize) -> f64 {
        let (a, b) = self.residual_arrays(mode);
        a.iter().chain(&b).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes `k, t, r` rows (1-based mode index).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["k", "t", "r"])?;
        for k in 0..self.n_modes() {
            for j in 0..=self.grid.n_steps() {
                out.write_record([
                    (k + 1).to_string(),
                    format!("{:.12e}", self.grid.node(j)),
                    format!("{:.12e}", self.modes[(k, j)]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Piecewise cubic through four neighbouring samples, shifted inward at the ends.
struct CubicInterpolant<'a> {
    values: &'a [f64],
    h: f64,
}

impl<'a> CubicInterpolant<'a> {
    fn new(values: &'a [f64], h: f64) -> Self {
        Self { values, h }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let pos = t / self.h;
        let i = (pos.floor().max(0.0) as usize).min(n - 1);
        if n < 3 {
            let frac = pos - i as f64;
            return self.values[i] * (1.0 - frac) + self.values[i + 1] * frac;
        }
        let start = i.saturating_sub(1).min(n - 3);
        let x = pos - start as f64;
        let mut sum = 0.0;
        for a in 0..4 {
            let mut basis = 1.0;
            for b in 0..4 {
                if a != b {
                    basis *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            sum += basis * self.values[start + a];
        }
        sum
    }
}
