//! Run configuration: TOML ingestion, defaults and validation.
//!
//! Every section is optional; an empty file yields the documented defaults. Validation
//! re-checks the invariants of the numerical modules and reports the offending field by
//! its dotted path (`kernels.gamma`, `impulses.times`, …).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{HistoryFunction, KernelParams};
use crate::propagator::ControlOperator;
use crate::regularizer::RegularizerSettings;
use crate::resolvent::TimeGrid;
use crate::semilinear::FixedPointSettings;
use crate::space::{SpaceConfig, StateVector};

fn invalid<T>(field: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Validation {
        field: field.into(),
        message: message.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub p: f64,
    pub n_modes: usize,
    pub n_grid: usize,
}

impl Default for SpaceSection {
    fn default() -> Self {
        Self {
            p: 2.0,
            n_modes: 16,
            n_grid: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    /// Amplitude of the nonlinear history kernel; `0` makes the problem linear.
    pub hist_scale: f64,
    pub hist_rate: f64,
    /// Norm bound γ̄ on the nonlinear source; defaults to `10·max(‖ψ‖_sup, ‖h‖)`.
    pub clamp: Option<f64>,
    /// Length of the stored history; defaults to `8 / min(κ, μ)`.
    pub hist_horizon: Option<f64>,
    pub hist_steps: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            kappa: 1.0,
            mu: 1.0,
            hist_scale: 0.01,
            hist_rate: 1.0,
            clamp: None,
            hist_horizon: None,
            hist_steps: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub b: f64,
    pub n_steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { b: 1.0, n_steps: 400 }
    }
}

/// Impulse instants with `D_k = d_scale·I`, `E_k = e_scale·I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpulseSection {
    pub times: Vec<f64>,
    pub d_scale: f64,
    pub e_scale: f64,
}

impl Default for ImpulseSection {
    fn default() -> Self {
        Self {
            times: vec![0.4, 0.7],
            d_scale: -1.0,
            e_scale: -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKernel {
    /// `K(ζ, ω) = min{ζ, ω}`.
    Min,
    /// No distributed actuation.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub kernel: ControlKernel,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            kernel: ControlKernel::Min,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryKind {
    Zero,
    Constant,
    ExpDecay,
}

/// Initial history `ψ(θ)`, `θ ≤ 0`, given by its leading sine coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySection {
    pub kind: HistoryKind,
    pub coeffs: Vec<f64>,
    /// Growth rate `r` of `ψ(θ) = c·e^{rθ}` for the `exp_decay` family.
    pub rate: f64,
}

impl Default for HistorySection {
    fn default() -> Self {
        Self {
            kind: HistoryKind::Zero,
            coeffs: Vec::new(),
            rate: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub coeffs: Vec<f64>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            coeffs: vec![1.0, 0.5, 0.25],
        }
    }
}

/// Data of the `limit` experiment; `y` defaults to the target.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSection {
    pub y: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Strictly decreasing list of regularisation parameters.
    pub alphas: Vec<f64>,
    pub tol: f64,
    pub max_newton: usize,
    /// Relaxation of the regularised solve's fallback iteration.
    pub newton_damping: f64,
    /// Initial relaxation of the Picard iteration.
    pub damping: f64,
    pub fp_tol: Option<f64>,
    pub fp_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let reg = RegularizerSettings::default();
        let fp = FixedPointSettings::default();
        Self {
            alphas: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            tol: reg.tol,
            max_newton: reg.max_newton,
            newton_damping: reg.damping,
            damping: fp.damping,
            fp_tol: fp.tol,
            fp_max_iter: fp.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A complete experiment configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceSection,
    pub kernels: KernelSection,
    pub grid: GridSection,
    pub impulses: ImpulseSection,
    pub control: ControlSection,
    pub history: HistorySection,
    pub target: TargetSection,
    pub limit: LimitSection,
    pub solver: SolverSection,
    pub output: OutputSection,
}

/// Reads, parses and validates a TOML configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = fs::read_to_string(path.as_ref())?;
    RunConfig::from_toml(&text)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Re-checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let space = self.space_config()?;
        let kp = self.kernel_params()?;
        self.time_grid()?;
        kp.check_horizon(self.history_horizon(&kp)?)
            .or_else(|e| invalid("kernels.hist_horizon", e.to_string()))?;
        if self.kernels.hist_steps == 0 {
            return invalid("kernels.hist_steps", "must be positive");
        }
        if let Some(c) = self.kernels.clamp {
            if !(c > 0.0 && c.is_finite()) {
                return invalid("kernels.clamp", format!("must be positive, got {c}"));
            }
        }
        for (field, v) in [("impulses.d_scale", self.impulses.d_scale), ("impulses.e_scale", self.impulses.e_scale)] {
            if !v.is_finite() {
                return invalid(field, format!("must be finite, got {v}"));
            }
        }
        self.history(&space, &kp)?;
        self.target(&space)?;
        self.limit_data(&space)?;
        let s = &self.solver;
        if s.alphas.is_empty() {
            return invalid("solver.alphas", "at least one α is required");
        }
        for &a in &s.alphas {
            self.regularizer_settings(a)?;
        }
        if s.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("solver.alphas", "α values must be strictly decreasing");
        }
        if s.max_newton == 0 {
            return invalid("solver.max_newton", "must be positive");
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return invalid("solver.damping", format!("must lie in (0, 1], got {}", s.damping));
        }
        if let Some(t) = s.fp_tol {
            if !(t > 0.0 && t.is_finite()) {
                return invalid("solver.fp_tol", format!("must be positive, got {t}"));
            }
        }
        if s.fp_max_iter == 0 {
            return invalid("solver.fp_max_iter", "must be positive");
        }
        Ok(())
    }

    pub fn space_config(&self) -> Result<SpaceConfig> {
        SpaceConfig::new(self.space.p, self.space.n_modes, self.space.n_grid)
    }

    pub fn kernel_params(&self) -> Result<KernelParams> {
        let k = &self.kernels;
        KernelParams::new(k.gamma, k.kappa, k.mu, k.hist_scale, k.hist_rate)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.b, self.grid.n_steps, &self.impulses.times)
    }

    pub fn history_horizon(&self, kp: &KernelParams) -> Result<f64> {
        match self.kernels.hist_horizon {
            None => Ok(kp.default_horizon()),
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => invalid("kernels.hist_horizon", format!("must be positive, got {t}")),
        }
    }

    pub fn control_operator(&self) -> ControlOperator {
        match self.control.kernel {
            ControlKernel::Min => ControlOperator::min_kernel(self.space.n_modes),
            ControlKernel::None => ControlOperator::zero(self.space.n_modes),
        }
    }

    pub fn history(&self, space: &SpaceConfig, kp: &KernelParams) -> Result<HistoryFunction> {
        let h = &self.history;
        let n = space.n_modes();
        let horizon = self.history_horizon(kp)?;
        let steps = self.kernels.hist_steps;
        if h.kind == HistoryKind::Zero {
            if !h.coeffs.is_empty() {
                return invalid("history.coeffs", "the zero history takes no coefficients");
            }
            return HistoryFunction::zeros(n, horizon, steps);
        }
        let c = padded("history.coeffs", &h.coeffs, n)?;
        match h.kind {
            HistoryKind::Constant => HistoryFunction::from_fn(horizon, steps, |_| c.clone()),
            _ => {
                if !(h.rate >= 0.0 && h.rate.is_finite()) {
                    return invalid("history.rate", format!("must be non-negative, got {}", h.rate));
                }
                HistoryFunction::from_fn(horizon, steps, |th| c.scaled((h.rate * th).exp()))
            }
        }
    }

    pub fn target(&self, space: &SpaceConfig) -> Result<StateVector> {
        padded("target.coeffs", &self.target.coeffs, space.n_modes())
    }

    /// Data of the limit probe: `[limit] y`, or the target when absent.
    pub fn limit_data(&self, space: &SpaceConfig) -> Result<StateVector> {
        match &self.limit.y {
            Some(y) => padded("limit.y", y, space.n_modes()),
            None => self.target(space),
        }
    }

    /// γ̄ as configured, or `10·max(‖ψ‖_sup, ‖h‖)` (and `1` if both vanish).
    pub fn clamp(&self, space: &SpaceConfig, psi: &HistoryFunction, h: &StateVector) -> f64 {
        self.kernels.clamp.unwrap_or_else(|| {
            let scale = psi.sup_norm(space).max(space.lp_norm(h));
            if scale > 0.0 {
                10.0 * scale
            } else {
                1.0
            }
        })
    }

    pub fn regularizer_settings(&self, alpha: f64) -> Result<RegularizerSettings> {
        let s = RegularizerSettings {
            alpha,
            tol: self.solver.tol,
            max_newton: self.solver.max_newton,
            damping: self.solver.newton_damping,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn fixed_point_settings(&self) -> FixedPointSettings {
        FixedPointSettings {
            tol: self.solver.fp_tol,
            max_iter: self.solver.fp_max_iter,
            damping: self.solver.damping,
        }
    }
}

fn padded(field: &str, coeffs: &[f64], n: usize) -> Result<StateVector> {
    if coeffs.len() > n {
        return invalid(field, format!("{} coefficients given but only {n} modes are retained", coeffs.len()));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return invalid(field, "coefficients must be finite");
    }
    let mut v = vec![0.0; n];
    v[..coeffs.len()].copy_from_slice(coeffs);
    Ok(StateVector::from_vec(v))
}
