//! Memory kernels, history forcings and the history-dependent nonlinearity.
//!
//! The heat-conduction example uses the neutral kernel `g(t) = t^γ e^{−κt}` and the
//! relaxation kernel `n(t) = e^{−μt}`, both acting as scalar multiples of the identity.
//! The initial history `ψ` is truncated at a finite horizon and interpolated linearly
//! between its samples; the forcings `f₁′` and `f₂` it induces are evaluated by
//! Gauss–Legendre quadrature on each interpolation piece.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::quadrature::{gauss16, gauss4, gauss8};
use crate::space::{SpaceConfig, StateVector};

/// Largest admissible `e^{−rate·T_hist}` before the truncated history is rejected.
pub const HORIZON_TOLERANCE: f64 = 1e-2;

/// Parameters of the memory kernels and of the nonlinearity kernel `ℋ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub hist_scale: f64,
    pub hist_rate: f64,
}

impl KernelParams {
    pub fn new(gamma: f64, kappa: f64, mu: f64, hist_scale: f64, hist_rate: f64) -> Result<Self> {
        let fail = |field: &str, message: String| {
            Err(Error::Validation {
                field: format!("kernels.{field}"),
                message,
            })
        };
        if !(gamma > 0.0 && gamma < 1.0) {
            return fail("gamma", format!("must lie in (0, 1), got {gamma}"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return fail("kappa", format!("must be positive, got {kappa}"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return fail("mu", format!("must be positive, got {mu}"));
        }
        if !hist_scale.is_finite() {
            return fail("hist_scale", format!("must be finite, got {hist_scale}"));
        }
        if !(hist_rate > 0.0 && hist_rate.is_finite()) {
            return fail("hist_rate", format!("must be positive, got {hist_rate}"));
        }
        Ok(Self {
            gamma,
            kappa,
            mu,
            hist_scale,
            hist_rate,
        })
    }

    /// `g(t) = t^γ e^{−κt}`.
    pub fn kernel_g(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.neutral().value(t))
    }

    /// `n(t) = e^{−μt}`.
    pub fn kernel_n(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.relaxation().value(t))
    }

    /// `g′(τ) = (γτ^{γ−1} − κτ^γ) e^{−κτ}` for `τ > 0`.
    pub fn kernel_g_prime(&self, tau: f64) -> f64 {
        (self.gamma * tau.powf(self.gamma - 1.0) - self.kappa * tau.powf(self.gamma))
            * (-self.kappa * tau).exp()
    }

    /// `ℋ(τ) = scale · e^{−rate·τ}`.
    pub fn hist_kernel(&self, tau: f64) -> f64 {
        self.hist_scale * (-self.hist_rate * tau).exp()
    }

    pub fn neutral(&self) -> ScalarKernel {
        ScalarKernel::PowerExp {
            gamma: self.gamma,
            kappa: self.kappa,
        }
    }

    pub fn relaxation(&self) -> ScalarKernel {
        ScalarKernel::Exp { rate: self.mu }
    }

    /// Smallest decay rate among the kernels acting on the history.
    pub fn slowest_rate(&self) -> f64 {
        self.kappa.min(self.mu).min(self.hist_rate)
    }

    /// Truncation horizon `8 / min(κ, μ, rate)`.
    pub fn default_horizon(&self) -> f64 {
        8.0 / self.slowest_rate()
    }

    /// Rejects horizons at which the neglected tail is not exponentially small.
    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        let tail = (-self.kappa.min(self.mu) * horizon).exp();
        if tail > HORIZON_TOLERANCE {
            return Err(Error::Config(format!(
                "history horizon {horizon} leaves a kernel tail of {tail:.3e} (> {HORIZON_TOLERANCE:e})"
            )));
        }
        Ok(())
    }
}

fn check_nonnegative(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("kernel evaluated at negative time {t}")))
    }
}

/// A scalar convolution kernel on `[0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarKernel {
    Zero,
    Constant(f64),
    /// `t^γ e^{−κt}`.
    PowerExp { gamma: f64, kappa: f64 },
    /// `e^{−rate·t}`.
    Exp { rate: f64 },
}

impl ScalarKernel {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c,
            Self::PowerExp { gamma, kappa } => {
                if t == 0.0 {
                    0.0
                } else {
                    t.powf(gamma) * (-kappa * t).exp()
                }
            }
            Self::Exp { rate } => (-rate * t).exp(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Constant(c) if *c == 0.0)
    }

    /// `∫_a^b k(τ) φ(τ) dτ` for smooth `φ` and `0 ≤ a ≤ b`.
    ///
    /// Intervals that start at (or within rounding of) `τ = 0` are integrated in the
    /// variable `σ = τ^γ`, which removes the `τ^γ` cusp of the power kernel.
    pub fn integrate_against(&self, a: f64, b: f64, phi: impl Fn(f64) -> f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::PowerExp { gamma, kappa } if a < 1e-3 * (b - a) => {
                let from_zero = |end: f64| {
                    if end <= 0.0 {
                        return 0.0;
                    }
                    gauss16().integrate(0.0, end.powf(gamma), |sigma| {
                        let tau = sigma.powf(1.0 / gamma);
                        // τ^γ dτ = σ · (1/γ) σ^{1/γ−1} dσ
                        tau * (-kappa * tau).exp() * phi(tau) / gamma
                    })
                };
                from_zero(b) - from_zero(a)
            }
            _ => gauss16().integrate(a, b, |tau| self.value(tau) * phi(tau)),
        }
    }

    /// `∫_0^t k(τ) dτ`.
    pub fn primitive(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c * t,
            Self::Exp { rate } => -(-rate * t).exp_m1() / rate,
            Self::PowerExp { .. } => self.integrate_against(0.0, t, |_| 1.0),
        }
    }
}

/// The initial history `ψ`, sampled on a uniform grid of `[−T_hist, 0]`.
#[derive(Clone, Debug)]
pub struct HistoryFunction {
    horizon: f64,
    samples: Vec<StateVector>,
}

impl HistoryFunction {
    /// `samples[j]` is `ψ(−T_hist + j·T_hist/(len−1))`; the last sample is `ψ(0)`.
    pub fn new(horizon: f64, samples: Vec<StateVector>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Validation {
                field: "kernels.hist_horizon".into(),
                message: format!("must be positive, got {horizon}"),
            });
        }
        if samples.len() < 2 {
            return Err(Error::Validation {
                field: "kernels.hist_steps".into(),
                message: "history needs at least one interval".into(),
            });
        }
        let n = samples[0].len();
        for s in &samples {
            crate::error::check_dim(n, s.len())?;
            if !s.is_finite() {
                return Err(Error::Domain("history samples must be finite".into()));
            }
        }
        Ok(Self { horizon, samples })
    }

    pub fn from_fn(
        horizon: f64,
        n_steps: usize,
        psi: impl Fn(f64) -> StateVector,
    ) -> Result<Self> {
        let n_steps = n_steps.max(1);
        let step = horizon / n_steps as f64;
        let samples = (0..=n_steps)
            .map(|j| psi(-horizon + j as f64 * step))
            .collect();
        Self::new(horizon, samples)
    }

    pub fn zeros(n_modes: usize, horizon: f64, n_steps: usize) -> Result<Self> {
        Self::from_fn(horizon, n_steps, |_| StateVector::zeros(n_modes))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_modes(&self) -> usize {
        self.samples[0].len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.samples.len() - 1) as f64
    }

    pub fn samples(&self) -> &[StateVector] {
        &self.samples
    }

    /// Sample times `θ_j`, ascending and ending at 0.
    pub fn thetas(&self) -> Vec<f64> {
        let n = self.samples.len() - 1;
        (0..=n)
            .map(|j| {
                if j == n {
                    0.0
                } else {
                    -self.horizon + j as f64 * self.step()
                }
            })
            .collect()
    }

    pub fn at_zero(&self) -> &StateVector {
        self.samples.last().expect("non-empty history")
    }

    /// Linear interpolation; zero beyond the horizon, `ψ(0)` for `θ ≥ 0`.
    pub fn at(&self, theta: f64) -> StateVector {
        if theta >= 0.0 {
            return self.at_zero().clone();
        }
        if theta < -self.horizon {
            return StateVector::zeros(self.n_modes());
        }
        let pos = (theta + self.horizon) / self.step();
        let j = (pos.floor() as usize).min(self.samples.len() - 2);
        let frac = pos - j as f64;
        &self.samples[j].scaled(1.0 - frac) + &self.samples[j + 1].scaled(frac)
    }

    pub fn sup_norm(&self, space: &SpaceConfig) -> f64 {
        self.samples
            .iter()
            .map(|s| space.lp_norm(s))
            .fold(0.0, f64::max)
    }

    /// `∫_{−T}^0 w(θ) ψ(θ) dθ` for a smooth scalar weight, piece by piece.
    fn weighted_integral(&self, weight: impl Fn(f64) -> f64) -> StateVector {
        let thetas = self.thetas();
        let mut acc = StateVector::zeros(self.n_modes()).into_inner();
        for j in 0..self.samples.len() - 1 {
            let (a, b) = (thetas[j], thetas[j + 1]);
            let (mut wl, mut wr) = (0.0, 0.0);
            for &(x, w) in gauss8().pairs() {
                let ww = w * weight(a + (b - a) * x) * (b - a);
                wl += ww * (1.0 - x);
                wr += ww * x;
            }
            acc += self.samples[j].coeffs() * wl + self.samples[j + 1].coeffs() * wr;
        }
        StateVector::new(acc)
    }
}

/// `f₁′(t) = −∫_{−T}^0 g′(t−s) ψ(s) ds`.
pub fn history_f1_prime(t: f64, psi: &HistoryFunction, kp: &KernelParams) -> Result<StateVector> {
    check_nonnegative(t)?;
    kp.check_horizon(psi.horizon())?;
    let (gamma, kappa) = (kp.gamma, kp.kappa);
    let thetas = psi.thetas();
    let mut acc = StateVector::zeros(psi.n_modes()).into_inner();
    for j in 0..thetas.len() - 1 {
        let (s0, s1) = (thetas[j], thetas[j + 1]);
        // τ = t − s runs over [t − s1, t − s0]; ψ is linear in τ with weight `ℓ(τ)` on ψ_{j}
        let (ta, tb) = (t - s1, t - s0);
        let len = s1 - s0;
        let left_weight = |tau: f64| (s1 - (t - tau)) / len;
        let (wl, wr) = if ta < tb - ta {
            // near the singularity: integrate from τ = 0 in σ = τ^γ, where
            // g′(τ) dτ = (1 − κτ/γ) e^{−κτ} dσ
            let from_zero = |end: f64| {
                let mut pair = (0.0, 0.0);
                if end <= 0.0 {
                    return pair;
                }
                let top = end.powf(gamma);
                for &(x, w) in gauss16().pairs() {
                    let tau = (top * x).powf(1.0 / gamma);
                    let ww = w * top * (1.0 - kappa * tau / gamma) * (-kappa * tau).exp();
                    let l = left_weight(tau);
                    pair.0 += ww * l;
                    pair.1 += ww * (1.0 - l);
                }
                pair
            };
            let (hi, lo) = (from_zero(tb), from_zero(ta));
            (hi.0 - lo.0, hi.1 - lo.1)
        } else {
            let mut pair = (0.0, 0.0);
            for &(x, w) in gauss16().pairs() {
                let tau = ta + (tb - ta) * x;
                let ww = w * (tb - ta) * kp.kernel_g_prime(tau);
                let l = left_weight(tau);
                pair.0 += ww * l;
                pair.1 += ww * (1.0 - l);
            }
            pair
        };
        acc -= psi.samples[j].coeffs() * wl + psi.samples[j + 1].coeffs() * wr;
    }
    Ok(StateVector::new(acc))
}

/// `(f₂(t))_k = λ_k ∫_{−T}^0 e^{−μ(t−s)} ψ_k(s) ds` with `λ_k = −k²`.
pub fn history_f2(
    t: f64,
    psi: &HistoryFunction,
    kp: &KernelParams,
    eigs: &[f64],
) -> Result<StateVector> {
    check_nonnegative(t)?;
    crate::error::check_dim(psi.n_modes(), eigs.len())?;
    kp.check_horizon(psi.horizon())?;
    let mu = kp.mu;
    let integral = psi.weighted_integral(|s| (-mu * (t - s)).exp());
    let coeffs = integral
        .coeffs()
        .iter()
        .zip(eigs)
        .map(|(c, l)| c * l)
        .collect();
    Ok(StateVector::from_vec(coeffs))
}

/// Read-only view of the path `s ↦ x(s)` known up to some time, used by source terms.
///
/// Values for `s ≤ 0` come from the history; on `(t_j, t_{j+1}]` the trajectory is
/// interpolated linearly from the right value at `t_j` to the left value at `t_{j+1}`.
/// Beyond the last known node the last value is held. Reading past `now` is recorded
/// as a causality violation.
pub struct PathView<'a> {
    psi: &'a HistoryFunction,
    times: &'a [f64],
    left: &'a [StateVector],
    right: &'a [Option<StateVector>],
    now: f64,
    violation: Cell<Option<f64>>,
}

impl<'a> PathView<'a> {
    /// `left[j]` (and `right[j]` where an impulse acted) are known for every `j < left.len()`.
    pub fn new(
        psi: &'a HistoryFunction,
        times: &'a [f64],
        left: &'a [StateVector],
        right: &'a [Option<StateVector>],
        now: f64,
    ) -> Self {
        debug_assert!(!left.is_empty() && left.len() <= times.len());
        Self {
            psi,
            times,
            left,
            right,
            now,
            violation: Cell::new(None),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn history(&self) -> &HistoryFunction {
        self.psi
    }

    pub fn violation(&self) -> Option<f64> {
        self.violation.get()
    }

    fn known(&self) -> usize {
        self.left.len() - 1
    }

    fn start_value(&self, j: usize) -> &StateVector {
        self.right
            .get(j)
            .and_then(|r| r.as_ref())
            .unwrap_or(&self.left[j])
    }

    pub fn at(&self, s: f64) -> StateVector {
        if s > self.now + 1e-12 * (1.0 + self.now.abs()) && self.violation.get().is_none() {
            self.violation.set(Some(s));
        }
        if s <= 0.0 {
            return self.psi.at(s);
        }
        let known = self.known();
        // first node strictly at or after s
        let idx = self.times.partition_point(|&t| t < s);
        if idx == 0 {
            return self.psi.at_zero().clone();
        }
        let j = idx - 1;
        if j >= known || idx >= self.times.len() {
            return self.start_value(known).clone();
        }
        let (t0, t1) = (self.times[j], self.times[idx]);
        let frac = (s - t0) / (t1 - t0);
        &self.start_value(j).scaled(1.0 - frac) + &self.left[idx].scaled(frac)
    }

    /// Breakpoints of the piecewise-linear path inside `[a, b]`, including both ends.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut points = vec![a];
        for theta in self.psi.thetas() {
            if theta > a && theta < b {
                points.push(theta);
            }
        }
        for &t in &self.times[..=self.known()] {
            if t > a && t < b && t > 0.0 {
                points.push(t);
            }
        }
        points.push(b);
        points.sort_by(f64::total_cmp);
        points.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
        points
    }
}

/// A source term `f(t, x_t)` that may only look at the path up to time `t`.
pub trait Nonlinearity: Send + Sync {
    fn eval(&self, t: f64, view: &PathView<'_>) -> StateVector;

    /// True when the term vanishes identically, letting callers skip the fixed point.
    fn is_zero(&self) -> bool {
        false
    }
}

impl<F> Nonlinearity for F
where
    F: Fn(f64, &PathView<'_>) -> StateVector + Send + Sync,
{
    fn eval(&self, t: f64, view: &PathView<'_>) -> StateVector {
        self(t, view)
    }
}

/// The identically-zero source.
#[derive(Clone, Debug)]
pub struct ZeroSource {
    pub n_modes: usize,
}

impl Nonlinearity for ZeroSource {
    fn eval(&self, _t: f64, _view: &PathView<'_>) -> StateVector {
        StateVector::zeros(self.n_modes)
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `f(t, x_t) = ∫_{t−T}^{t} ℋ(t−s) x(s) ds`, scaled back onto the ball of radius `clamp`.
#[derive(Clone, Debug)]
pub struct HistoryIntegral {
    pub params: KernelParams,
    pub horizon: f64,
    pub clamp: f64,
    pub space: SpaceConfig,
}

impl HistoryIntegral {
    /// Unclamped value of the integral.
    pub fn raw(&self, t: f64, view: &PathView<'_>) -> StateVector {
        let n = self.space.n_modes();
        if self.params.hist_scale == 0.0 {
            return StateVector::zeros(n);
        }
        let points = view.breakpoints(t - self.horizon, t);
        let mut acc = StateVector::zeros(n).into_inner();
        for pair in points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for &(x, w) in gauss4().pairs() {
                let s = a + (b - a) * x;
                acc += view.at(s).coeffs() * (w * (b - a) * self.params.hist_kernel(t - s));
            }
        }
        StateVector::new(acc)
    }
}

impl Nonlinearity for HistoryIntegral {
    fn eval(&self, t: f64, view: &PathView<'_>) -> StateVector {
        let value = self.raw(t, view);
        let norm = self.space.lp_norm(&value);
        if norm > self.clamp {
            value.scaled(self.clamp / norm)
        } else {
            value
        }
    }

    fn is_zero(&self) -> bool {
        self.params.hist_scale == 0.0 || self.clamp == 0.0
    }
}
