//! The control-to-terminal-state operator `M`, its adjoint, and the Gramian blocks.
//!
//! Controls live in a weighted space: every grid node of every segment carries one
//! distributed-control value (impulse nodes carry two, one per adjacent segment) with
//! its trapezoid weight `ω`, and each impulse carries one vector `v_k`. Under that
//! inner product the adjoint of the materialised `M` is a plain transpose, so
//! `M M*` equals the trapezoid Gramian to rounding.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::propagator::{segment_convolve, ControlBundle, Plant};
use crate::space::{DualVector, StateVector};

/// One quadrature slot of the distributed control.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Slot {
    segment: usize,
    node: usize,
    weight: f64,
}

/// Propagators from the end of each segment to the final time.
///
/// `p[i] = ℛ(b − t_m) ∏_{j=m}^{i+1} (I + D_j) ℛ(t_j − t_{j−1})` for `i = 0..=m`
/// (so `p[m] = ℛ(b − t_m)`), and `c[i] = p[i+1] (I + D_{i+1})` maps the end state of
/// pre-impulse segment `i` (0-based) to the terminal state.
#[derive(Clone, Debug)]
pub struct ImpulseChain {
    pub p: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
}

impl ImpulseChain {
    pub fn new(plant: &Plant) -> Self {
        let grid = plant.grid();
        let r = &plant.resolvent;
        let sched = &plant.schedule;
        let bounds = grid.segment_bounds();
        let m = sched.len();
        let mut p = vec![DMatrix::zeros(0, 0); m + 1];
        p[m] = r.matrix(bounds[m + 1] - bounds[m]);
        for i in (1..=m).rev() {
            p[i - 1] = &p[i] * sched.jump_matrix(i - 1) * r.matrix(bounds[i] - bounds[i - 1]);
        }
        let c = (0..m).map(|i| &p[i + 1] * sched.jump_matrix(i)).collect();
        Self { p, c }
    }

    /// Map from the end state of segment `seg` to `x(b)`; identity for the tail.
    pub fn to_terminal(&self, seg: usize) -> DMatrix<f64> {
        if seg < self.c.len() {
            self.c[seg].clone()
        } else {
            let n = self.p[0].nrows();
            DMatrix::identity(n, n)
        }
    }
}

/// The materialised operator `M : (u, {v_k}) ↦ x(b)` (control part only).
#[derive(Clone, Debug)]
pub struct ControlMap {
    /// Columns `√ω K(s)` per slot followed by the impulse maps `L_k`.
    matrix: DMatrix<f64>,
    slots: Vec<Slot>,
    bounds: Vec<usize>,
    n_u: usize,
    n_v: usize,
    n_steps: usize,
    chain: ImpulseChain,
}

impl ControlMap {
    pub fn assemble(plant: &Plant) -> Result<Self> {
        let grid = plant.grid();
        let r = &plant.resolvent;
        let sched = &plant.schedule;
        let b = plant.control.matrix();
        let (n, n_u, n_v) = (plant.n_modes(), plant.n_controls(), plant.n_impulse_controls());
        let m = sched.len();
        let h = grid.h();
        let bounds = grid.segment_bounds();
        let chain = ImpulseChain::new(plant);

        let mut slots = Vec::new();
        for seg in 0..=m {
            let (a, e) = (bounds[seg], bounds[seg + 1]);
            for node in a..=e {
                let weight = if node == a || node == e { 0.5 * h } else { h };
                slots.push(Slot { segment: seg, node, weight });
            }
        }
        let mut matrix = DMatrix::zeros(n, slots.len() * n_u + m * n_v);
        for (s, slot) in slots.iter().enumerate() {
            let end = bounds[slot.segment + 1];
            let k = chain.to_terminal(slot.segment) * r.matrix(end - slot.node) * b;
            matrix
                .columns_mut(s * n_u, n_u)
                .copy_from(&(k * slot.weight.sqrt()));
        }
        let offset = slots.len() * n_u;
        for k in 0..m {
            let l = &chain.p[k + 1] * sched.e(k);
            matrix.columns_mut(offset + k * n_v, n_v).copy_from(&l);
        }
        Ok(Self {
            matrix,
            slots,
            bounds,
            n_u,
            n_v,
            n_steps: grid.n_steps(),
            chain,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn chain(&self) -> &ImpulseChain {
        &self.chain
    }

    fn impulse_count(&self) -> usize {
        self.bounds.len() - 2
    }

    /// Coordinates of a control bundle in the orthonormalised control space.
    fn coordinates(&self, controls: &ControlBundle) -> Result<DVector<f64>> {
        check_dim(self.n_steps + 1, controls.u.ncols())?;
        check_dim(self.n_u, controls.u.nrows())?;
        check_dim(self.impulse_count(), controls.v.len())?;
        let mut coords = DVector::zeros(self.matrix.ncols());
        for (s, slot) in self.slots.iter().enumerate() {
            let value = controls.u_in_segment(slot.segment, slot.node, &self.bounds);
            coords
                .rows_mut(s * self.n_u, self.n_u)
                .copy_from(&(value * slot.weight.sqrt()));
        }
        let offset = self.slots.len() * self.n_u;
        for (k, v) in controls.v.iter().enumerate() {
            check_dim(self.n_v, v.len())?;
            coords.rows_mut(offset + k * self.n_v, self.n_v).copy_from(v);
        }
        Ok(coords)
    }

    /// `M(u, {v_k})`.
    pub fn apply(&self, controls: &ControlBundle) -> Result<StateVector> {
        Ok(StateVector::new(&self.matrix * self.coordinates(controls)?))
    }

    /// `M* φ`, the transpose in the weighted control space.
    pub fn adjoint(&self, phi: &DualVector) -> Result<ControlBundle> {
        check_dim(self.matrix.nrows(), phi.len())?;
        let coords = self.matrix.transpose() * phi.coeffs();
        let m = self.impulse_count();
        let mut bundle = ControlBundle {
            u: DMatrix::zeros(self.n_u, self.n_steps + 1),
            u_right: vec![DVector::zeros(self.n_u); m],
            v: vec![DVector::zeros(self.n_v); m],
        };
        for (s, slot) in self.slots.iter().enumerate() {
            let value = coords.rows(s * self.n_u, self.n_u) / slot.weight.sqrt();
            if slot.segment > 0 && slot.node == self.bounds[slot.segment] {
                bundle.u_right[slot.segment - 1] = value;
            } else {
                bundle.u.set_column(slot.node, &value);
            }
        }
        let offset = self.slots.len() * self.n_u;
        for k in 0..m {
            bundle.v[k] = coords.rows(offset + k * self.n_v, self.n_v).into_owned();
        }
        Ok(bundle)
    }

    /// `⟨(u, v), (u', v')⟩` in the weighted control space.
    pub fn control_inner(&self, a: &ControlBundle, b: &ControlBundle) -> Result<f64> {
        Ok(self.coordinates(a)?.dot(&self.coordinates(b)?))
    }

    /// `M Mᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.matrix * self.matrix.transpose()
    }
}

/// Target defect `σ`: `h` minus every non-control contribution to `x(b)`.
pub fn sigma_defect(plant: &Plant, chain: &ImpulseChain, h: &StateVector, source: &[StateVector]) -> Result<StateVector> {
    let grid = plant.grid();
    check_dim(grid.n_steps() + 1, source.len())?;
    check_dim(plant.n_modes(), h.len())?;
    let bounds = grid.segment_bounds();
    let m = plant.schedule.len();
    let mut sigma = h.coeffs() - &chain.p[0] * plant.history.at_zero().coeffs();
    for seg in 0..=m {
        let (a, e) = (bounds[seg], bounds[seg + 1]);
        let w: Vec<StateVector> = (a..=e)
            .map(|j| StateVector::new(source[j].coeffs() + plant.forcing[j].coeffs()))
            .collect();
        let integral = segment_convolve(&plant.resolvent, &w, a, e)?;
        sigma -= chain.to_terminal(seg) * integral.coeffs();
    }
    Ok(StateVector::new(sigma))
}

/// The four Gramian blocks and their sum.
#[derive(Clone, Debug)]
pub struct GramianBlocks {
    pub gamma: DMatrix<f64>,
    pub gamma_tilde: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub theta_tilde: DMatrix<f64>,
    pub total: DMatrix<f64>,
}

/// Result of the symmetric eigensolve of the total Gramian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositivityReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub strictly_positive: bool,
}

impl fmt::Display for PositivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "min_eig={:e} strictly_positive={}",
            self.min_eigenvalue, self.strictly_positive
        )
    }
}

impl GramianBlocks {
    /// Evaluates each block from its own product/quadrature formula and checks the sum
    /// against `M Mᵀ`.
    pub fn assemble(plant: &Plant, map: &ControlMap) -> Result<Self> {
        let blocks = Self::from_formulas(plant);
        let product = map.gram();
        let scale = product.norm().max(blocks.total.norm());
        let gap = (&blocks.total - &product).norm();
        if scale > 0.0 && gap > 1e-6 * scale {
            return Err(Error::Consistency(format!(
                "Gramian blocks differ from M·Mᵀ by {:.3e} (relative)",
                gap / scale
            )));
        }
        Ok(blocks)
    }

    /// Block formulas, written out directly from the products over impulse segments.
    pub fn from_formulas(plant: &Plant) -> Self {
        let grid = plant.grid();
        let r = &plant.resolvent;
        let sched = &plant.schedule;
        let bb = plant.control.matrix() * plant.control.matrix().transpose();
        let n = plant.n_modes();
        let m = sched.len();
        let h = grid.h();
        let bounds = grid.segment_bounds();
        let rt = |steps: usize| r.matrix(steps);

        // ∏_{j=m}^{i+1} (I + D_j) ℛ(t_j − t_{j−1}), applied as a left product
        let between = |i: usize| -> DMatrix<f64> {
            let mut acc = DMatrix::identity(n, n);
            for j in i + 1..=m {
                acc = sched.jump_matrix(j - 1) * rt(bounds[j] - bounds[j - 1]) * acc;
            }
            acc
        };
        let terminal = rt(bounds[m + 1] - bounds[m]);

        let weighted_sum = |a: usize, e: usize, outer: &DMatrix<f64>| -> DMatrix<f64> {
            let mut acc = DMatrix::zeros(n, n);
            for j in a..=e {
                let w = if j == a || j == e { 0.5 * h } else { h };
                let k = outer * rt(e - j);
                acc += &k * &bb * k.transpose() * w;
            }
            acc
        };

        let gamma = weighted_sum(bounds[m], bounds[m + 1], &DMatrix::identity(n, n));
        let mut gamma_tilde = DMatrix::zeros(n, n);
        let mut theta = DMatrix::zeros(n, n);
        let mut theta_tilde = DMatrix::zeros(n, n);
        if m > 0 {
            let l = &terminal * sched.e(m - 1);
            gamma_tilde = &l * l.transpose();
            for i in 1..=m {
                let c = &terminal * between(i) * sched.jump_matrix(i - 1);
                theta += weighted_sum(bounds[i - 1], bounds[i], &c);
            }
            for i in 1..m {
                let l = &terminal * between(i) * sched.e(i - 1);
                theta_tilde += &l * l.transpose();
            }
        }
        let total = &gamma + &gamma_tilde + &theta + &theta_tilde;
        Self {
            gamma,
            gamma_tilde,
            theta,
            theta_tilde,
            total,
        }
    }

    pub fn positivity(&self) -> PositivityReport {
        positivity_report(&self.total)
    }

    /// Writes `block, i, j, value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["block", "i", "j", "value"])?;
        for (name, mat) in [
            ("gamma", &self.gamma),
            ("gamma_tilde", &self.gamma_tilde),
            ("theta", &self.theta),
            ("theta_tilde", &self.theta_tilde),
            ("total", &self.total),
        ] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    out.write_record([
                        name.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        format!("{:.12e}", mat[(i, j)]),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix, with the strict-positivity
/// flag at threshold `1e−10·λ_max`.
pub fn positivity_report(total: &DMatrix<f64>) -> PositivityReport {
    if total.is_empty() {
        return PositivityReport {
            min_eigenvalue: 0.0,
            max_eigenvalue: 0.0,
            strictly_positive: false,
        };
    }
    let sym = (total + total.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let min = eig.min();
    let max = eig.max();
    PositivityReport {
        min_eigenvalue: min,
        max_eigenvalue: max,
        strictly_positive: max > 0.0 && min > 1e-10 * max,
    }
}
