//! Impulsive mild solutions on the time grid.
//!
//! Between impulses the state is given by the variation-of-constants formula with the
//! resolvent family; at each impulse instant the state jumps by
//! `x(t_k⁺) = (I + D_k) x(t_k) + E_k v_k`. Every segment restarts from the post-impulse
//! value, and segment integrals use the trapezoid rule on the grid nodes, so impulse
//! instants are never straddled by a quadrature panel.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{history_f1_prime, history_f2, HistoryFunction, KernelParams, Nonlinearity, PathView};
use crate::quadrature::gauss16;
use crate::resolvent::{ResolventFamily, TimeGrid};
use crate::space::{basis_function, SpaceConfig, StateVector};

/// Impulse instants (as grid indices) with their jump operators.
#[derive(Clone, Debug)]
pub struct ImpulseSchedule {
    indices: Vec<usize>,
    times: Vec<f64>,
    d: Vec<DMatrix<f64>>,
    e: Vec<DMatrix<f64>>,
}

impl ImpulseSchedule {
    pub fn new(grid: &TimeGrid, d: Vec<DMatrix<f64>>, e: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = grid.impulse_indices().len();
        check_dim(m, d.len())?;
        check_dim(m, e.len())?;
        if let (Some(d0), Some(e0)) = (d.first(), e.first()) {
            let n = d0.nrows();
            for dk in &d {
                check_dim(n, dk.nrows())?;
                check_dim(n, dk.ncols())?;
            }
            for ek in &e {
                check_dim(n, ek.nrows())?;
                check_dim(e0.ncols(), ek.ncols())?;
            }
        }
        Ok(Self {
            indices: grid.impulse_indices().to_vec(),
            times: grid.impulse_times(),
            d,
            e,
        })
    }

    /// `D_k = d_scale·I`, `E_k = e_scale·I` at every impulse of the grid.
    pub fn uniform(grid: &TimeGrid, n_modes: usize, d_scale: f64, e_scale: f64) -> Result<Self> {
        let m = grid.impulse_indices().len();
        let eye = DMatrix::<f64>::identity(n_modes, n_modes);
        Self::new(grid, vec![&eye * d_scale; m], vec![&eye * e_scale; m])
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `D_k` for 0-based impulse index `k`.
    pub fn d(&self, k: usize) -> &DMatrix<f64> {
        &self.d[k]
    }

    pub fn e(&self, k: usize) -> &DMatrix<f64> {
        &self.e[k]
    }

    /// `I + D_k`.
    pub fn jump_matrix(&self, k: usize) -> DMatrix<f64> {
        let n = self.d[k].nrows();
        DMatrix::identity(n, n) + &self.d[k]
    }

    /// `max_k ‖D_k‖₂` (zero without impulses).
    pub fn d_bound(&self) -> f64 {
        self.d.iter().map(spectral_norm).fold(0.0, f64::max)
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `x(t_k⁺) = (I + D_k) x(t_k) + E_k v_k`.
pub fn jump(x: &StateVector, k: usize, sched: &ImpulseSchedule, v: &DVector<f64>) -> Result<StateVector> {
    check_dim(sched.d(k).ncols(), x.len())?;
    check_dim(sched.e(k).ncols(), v.len())?;
    Ok(StateVector::new(
        x.coeffs() + sched.d(k) * x.coeffs() + sched.e(k) * v,
    ))
}

/// The distributed-control operator `B` in coefficient form.
#[derive(Clone, Debug)]
pub struct ControlOperator {
    matrix: DMatrix<f64>,
}

impl ControlOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn zero(n_modes: usize) -> Self {
        Self::new(DMatrix::zeros(n_modes, n_modes))
    }

    /// Galerkin matrix `⟨ã_j, K ã_k⟩` of an integral operator with kernel `K(ζ, ω)`,
    /// assumed smooth away from the diagonal `ζ = ω` (where the inner integral is split).
    pub fn from_kernel(n_modes: usize, kernel: impl Fn(f64, f64) -> f64) -> Self {
        use std::f64::consts::PI;
        let panels = 4 * n_modes.max(4);
        let width = PI / panels as f64;
        // (Kã_k)(ζ) on the outer quadrature nodes
        let mut outer = Vec::new();
        for p in 0..panels {
            for &(x, w) in gauss16().pairs() {
                outer.push((p as f64 * width + x * width, w * width));
            }
        }
        let mut matrix = DMatrix::zeros(n_modes, n_modes);
        for &(zeta, wz) in &outer {
            let inner: Vec<f64> = (1..=n_modes)
                .map(|k| {
                    let f = |omega: f64| kernel(zeta, omega) * basis_function(k, omega);
                    composite(0.0, zeta, &f) + composite(zeta, PI, &f)
                })
                .collect();
            for j in 0..n_modes {
                let aj = basis_function(j + 1, zeta) * wz;
                for k in 0..n_modes {
                    matrix[(j, k)] += aj * inner[k];
                }
            }
        }
        Self::new(matrix)
    }

    /// The Green's kernel `K(ζ, ω) = min{ζ, ω}`.
    pub fn min_kernel(n_modes: usize) -> Self {
        Self::from_kernel(n_modes, f64::min)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, u: &DVector<f64>) -> Result<StateVector> {
        check_dim(self.matrix.ncols(), u.len())?;
        Ok(StateVector::new(&self.matrix * u))
    }

    /// `‖B‖₂`.
    pub fn bound(&self) -> f64 {
        spectral_norm(&self.matrix)
    }
}

fn composite(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = 4;
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| gauss16().integrate(a + i as f64 * w, a + (i + 1) as f64 * w, f))
        .sum()
}

/// Distributed control values on the grid plus the impulse controls.
///
/// `u` holds the value at each node as seen from the segment ending there (or starting
/// there, for node 0); `u_right[k]` is the value just after impulse `k`, which starts
/// the next segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBundle {
    pub u: DMatrix<f64>,
    pub u_right: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl ControlBundle {
    pub fn zeros(n_controls: usize, grid: &TimeGrid, n_impulse_controls: usize) -> Self {
        let m = grid.impulse_indices().len();
        Self {
            u: DMatrix::zeros(n_controls, grid.n_steps() + 1),
            u_right: vec![DVector::zeros(n_controls); m],
            v: vec![DVector::zeros(n_impulse_controls); m],
        }
    }

    /// Control value at node `j` used by segment `seg` (0-based).
    pub fn u_in_segment(&self, seg: usize, j: usize, bounds: &[usize]) -> DVector<f64> {
        if seg > 0 && j == bounds[seg] {
            self.u_right[seg - 1].clone()
        } else {
            self.u.column(j).into_owned()
        }
    }

    /// `max_s ‖u(s)‖` over all node values, both sides of impulses.
    pub fn max_u_norm(&self) -> f64 {
        self.u
            .column_iter()
            .map(|c| c.norm())
            .chain(self.u_right.iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite())
            && self.u_right.iter().flatten().all(|v| v.is_finite())
            && self.v.iter().flatten().all(|v| v.is_finite())
    }
}

/// Left values at every node and right values after each impulse.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub left: Vec<StateVector>,
    pub right: Vec<Option<StateVector>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &StateVector {
        self.left.last().expect("non-empty trajectory")
    }

    /// Post-impulse states `x(t_k⁺)` in impulse order.
    pub fn post_impulse(&self) -> Vec<StateVector> {
        self.right.iter().flatten().cloned().collect()
    }

    /// `sup_j ‖x_j − y_j‖` over left and right values.
    pub fn sup_distance(&self, other: &Trajectory, space: &SpaceConfig) -> f64 {
        let left = self
            .left
            .iter()
            .zip(&other.left)
            .map(|(a, b)| space.lp_norm(&(a - b)));
        let right = self
            .right
            .iter()
            .zip(&other.right)
            .filter_map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(space.lp_norm(&(a - b))),
                _ => None,
            });
        left.chain(right).fold(0.0, f64::max)
    }

    /// `(1 − d)·self + d·other`, node by node.
    pub fn blend(&self, other: &Trajectory, d: f64) -> Trajectory {
        let mix = |a: &StateVector, b: &StateVector| &a.scaled(1.0 - d) + &b.scaled(d);
        Trajectory {
            times: self.times.clone(),
            left: self.left.iter().zip(&other.left).map(|(a, b)| mix(a, b)).collect(),
            right: self
                .right
                .iter()
                .zip(&other.right)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(mix(a, b)),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn view<'a>(&'a self, psi: &'a HistoryFunction, known: usize, now: f64) -> PathView<'a> {
        PathView::new(psi, &self.times, &self.left[..=known], &self.right[..=known], now)
    }

    /// Writes `t, side, k, coeff` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["t", "side", "k", "coeff"])?;
        let mut emit = |t: f64, side: &str, x: &StateVector| -> Result<()> {
            for (k, c) in x.coeffs().iter().enumerate() {
                out.write_record([
                    format!("{t:.12e}"),
                    side.to_string(),
                    (k + 1).to_string(),
                    format!("{c:.12e}"),
                ])?;
            }
            Ok(())
        };
        for (j, x) in self.left.iter().enumerate() {
            emit(self.times[j], "left", x)?;
            if let Some(r) = &self.right[j] {
                emit(self.times[j], "right", r)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Everything that defines the linear part of the impulsive system.
#[derive(Clone, Debug)]
pub struct Plant {
    pub resolvent: ResolventFamily,
    pub schedule: ImpulseSchedule,
    pub control: ControlOperator,
    pub history: HistoryFunction,
    /// `f₁′(t_j) + f₂(t_j)` at every node.
    pub forcing: Vec<StateVector>,
}

impl Plant {
    /// Tabulates the history forcings and assembles the plant.
    pub fn new(
        resolvent: ResolventFamily,
        schedule: ImpulseSchedule,
        control: ControlOperator,
        history: HistoryFunction,
        kp: &KernelParams,
    ) -> Result<Self> {
        let n = resolvent.n_modes();
        check_dim(n, control.n_modes())?;
        check_dim(n, history.n_modes())?;
        if let Some(d) = (0..schedule.len()).map(|k| schedule.d(k)).next() {
            check_dim(n, d.nrows())?;
        }
        let grid = resolvent.grid().clone();
        let eigs = resolvent.eigenvalues().to_vec();
        let forcing = if history.samples().iter().all(|s| s.coeffs().iter().all(|&c| c == 0.0)) {
            vec![StateVector::zeros(n); grid.n_steps() + 1]
        } else {
            (0..=grid.n_steps())
                .map(|j| {
                    let t = grid.node(j);
                    Ok(history_f1_prime(t, &history, kp)? + history_f2(t, &history, kp, &eigs)?)
                })
                .collect::<Result<_>>()?
        };
        Ok(Self {
            resolvent,
            schedule,
            control,
            history,
            forcing,
        })
    }

    /// Assembles a plant with a prescribed forcing table (used for linear studies).
    pub fn with_forcing(
        resolvent: ResolventFamily,
        schedule: ImpulseSchedule,
        control: ControlOperator,
        history: HistoryFunction,
        forcing: Vec<StateVector>,
    ) -> Result<Self> {
        check_dim(resolvent.grid().n_steps() + 1, forcing.len())?;
        Ok(Self {
            resolvent,
            schedule,
            control,
            history,
            forcing,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.resolvent.grid()
    }

    pub fn n_modes(&self) -> usize {
        self.resolvent.n_modes()
    }

    pub fn n_controls(&self) -> usize {
        self.control.n_controls()
    }

    pub fn n_impulse_controls(&self) -> usize {
        if self.schedule.is_empty() {
            self.n_controls()
        } else {
            self.schedule.e(0).ncols()
        }
    }

    pub fn zero_controls(&self) -> ControlBundle {
        ControlBundle::zeros(self.n_controls(), self.grid(), self.n_impulse_controls())
    }
}

/// The nonlinear source as either a precomputed table or a causal evaluator.
pub enum Source<'a> {
    /// No nonlinear source.
    None,
    /// `f(t_j)` for every node.
    Table(&'a [StateVector]),
    /// `f(t, x_t)` evaluated while marching; lagged by one node inside each step.
    Causal(&'a dyn Nonlinearity),
}

/// `∫_{t_a}^{t_n} ℛ(t_n − s) w(s) ds` by the trapezoid rule; `w[i]` is the value at node `a + i`.
pub fn segment_convolve(r: &ResolventFamily, w: &[StateVector], a: usize, n: usize) -> Result<StateVector> {
    if n < a {
        return Err(Error::Precondition(format!("segment end {n} precedes its start {a}")));
    }
    check_dim(n - a + 1, w.len())?;
    let dim = r.n_modes();
    let mut acc = DVector::zeros(dim);
    if n == a {
        return Ok(StateVector::new(acc));
    }
    for (i, wi) in w.iter().enumerate() {
        check_dim(dim, wi.len())?;
        let weight = if i == 0 || i == n - a { 0.5 } else { 1.0 };
        acc += r.modes().column(n - a - i).component_mul(wi.coeffs()) * weight;
    }
    Ok(StateVector::new(acc * r.grid().h()))
}

/// Marches the impulsive mild solution forward over the whole grid.
pub fn mild_solution(plant: &Plant, controls: &ControlBundle, source: &Source<'_>) -> Result<Trajectory> {
    let grid = plant.grid();
    let r = &plant.resolvent;
    let sched = &plant.schedule;
    let steps = grid.n_steps();
    let h = grid.h();
    let dim = plant.n_modes();
    check_dim(steps + 1, controls.u.ncols())?;
    check_dim(sched.len(), controls.v.len())?;
    check_dim(sched.len(), controls.u_right.len())?;
    if let Source::Table(table) = source {
        check_dim(steps + 1, table.len())?;
    }

    let times = grid.nodes();
    let bounds = grid.segment_bounds();
    let mut left: Vec<StateVector> = Vec::with_capacity(steps + 1);
    let mut right: Vec<Option<StateVector>> = vec![None; steps + 1];
    left.push(plant.history.at_zero().clone());
    // f(t_j, x_{t_j}) once x_j is known
    let mut f_known: Vec<StateVector> = Vec::with_capacity(steps + 1);

    let eval_causal = |f: &dyn Nonlinearity, left: &[StateVector], right: &[Option<StateVector>], now: f64| {
        let view = PathView::new(&plant.history, &times, left, right, now);
        let value = f.eval(now, &view);
        match view.violation() {
            Some(query) => Err(Error::NonCausal { query, now }),
            None => Ok(value),
        }
    };
    let source_at = |j: usize, left: &[StateVector], right: &[Option<StateVector>]| -> Result<StateVector> {
        match source {
            Source::None => Ok(StateVector::zeros(dim)),
            Source::Table(t) => Ok(t[j].clone()),
            Source::Causal(f) => eval_causal(*f, left, right, times[j]),
        }
    };
    f_known.push(source_at(0, &left, &right)?);

    for seg in 0..bounds.len() - 1 {
        let (a, e) = (bounds[seg], bounds[seg + 1]);
        let start = if seg == 0 {
            left[0].clone()
        } else {
            let post = jump(&left[a], seg - 1, sched, &controls.v[seg - 1])?;
            right[a] = Some(post.clone());
            // f(t_a) does not see the jump: it integrates the path up to t_a
            post
        };
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(e - a + 1);
        let forcing_at = |j: usize, f: &StateVector| -> Result<DVector<f64>> {
            let bu = plant.control.apply(&controls.u_in_segment(seg, j, &bounds))?;
            Ok(bu.coeffs() + f.coeffs() + plant.forcing[j].coeffs())
        };
        w.push(forcing_at(a, &f_known[a])?);
        for n in a + 1..=e {
            let lagged = match source {
                Source::Causal(_) => source_at(n, &left, &right[..n])?,
                _ => source_at(n, &left, &right)?,
            };
            w.push(forcing_at(n, &lagged)?);
            let mut acc = r.modes().column(n - a).component_mul(start.coeffs());
            let mut conv = DVector::zeros(dim);
            for (i, wi) in w.iter().enumerate() {
                let weight = if i == 0 || i == n - a { 0.5 } else { 1.0 };
                conv += r.modes().column(n - a - i).component_mul(wi) * weight;
            }
            acc += conv * h;
            left.push(StateVector::new(acc));
            let settled = match source {
                Source::Causal(_) => {
                    let value = source_at(n, &left, &right[..=n])?;
                    *w.last_mut().expect("pushed above") = forcing_at(n, &value)?;
                    value
                }
                _ => lagged,
            };
            f_known.push(settled);
        }
    }
    Ok(Trajectory {
        times,
        left,
        right,
    })
}

/// Tabulates `f(t_j, x_{t_j})` along a complete trajectory.
pub fn tabulate_source(plant: &Plant, traj: &Trajectory, f: &dyn Nonlinearity) -> Result<Vec<StateVector>> {
    (0..traj.left.len())
        .map(|j| {
            let now = traj.times[j];
            let view = traj.view(&plant.history, j, now);
            let value = f.eval(now, &view);
            match view.violation() {
                Some(query) => Err(Error::NonCausal { query, now }),
                None => Ok(value),
            }
        })
        .collect()
}

/// Evaluates the explicit product/sum formula for every post-impulse state.
pub fn post_impulse_closed_form(
    plant: &Plant,
    controls: &ControlBundle,
    source: &[StateVector],
) -> Result<Vec<StateVector>> {
    let grid = plant.grid();
    let r = &plant.resolvent;
    let sched = &plant.schedule;
    let bounds = grid.segment_bounds();
    let m = sched.len();
    let segment_integral = |seg: usize| -> Result<StateVector> {
        let (a, e) = (bounds[seg], bounds[seg + 1]);
        let w = (a..=e)
            .map(|j| {
                let bu = plant.control.apply(&controls.u_in_segment(seg, j, &bounds))?;
                Ok(StateVector::new(bu.coeffs() + source[j].coeffs() + plant.forcing[j].coeffs()))
            })
            .collect::<Result<Vec<_>>>()?;
        segment_convolve(r, &w, a, e)
    };
    let propagate = |i: usize| r.matrix(bounds[i] - bounds[i - 1]);
    let mut out = Vec::with_capacity(m);
    for k in 1..=m {
        // ∏_{j=k}^{1} (I + D_j) ℛ(t_j − t_{j−1}) ψ(0)
        let mut chain = plant.history.at_zero().coeffs().clone();
        for j in 1..=k {
            chain = sched.jump_matrix(j - 1) * (propagate(j) * chain);
        }
        let mut total = chain;
        for i in 1..=k {
            let mut term = sched.jump_matrix(i - 1) * segment_integral(i - 1)?.coeffs()
                + sched.e(i - 1) * &controls.v[i - 1];
            for j in i + 1..=k {
                term = sched.jump_matrix(j - 1) * (propagate(j) * term);
            }
            total += term;
        }
        out.push(StateVector::new(total));
    }
    Ok(out)
}
