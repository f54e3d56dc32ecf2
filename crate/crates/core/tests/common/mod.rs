//! Shared oracles, instance builders and the acceptance criteria used by the
//! integration tests and by the `acceptance` runner.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use memctrl::config::RunConfig;
use memctrl::experiments::{Problem, SweepVerdict, PAPER_DEMO_PRESET};
use memctrl::gramian::{positivity_report, ControlMap, GramianBlocks};
use memctrl::kernels::{HistoryFunction, ScalarKernel};
use memctrl::propagator::{mild_solution, ControlBundle, ControlOperator, ImpulseSchedule, Plant, Source};
use memctrl::regularizer::{alpha_limit_probe, norm_bound_check, solve_newton, solve_regularized, RegularizerSettings};
use memctrl::resolvent::{solve_mode, ResolventFamily, TimeGrid};
use memctrl::semilinear::ExperimentRecord;
use memctrl::space::{laplacian_eigenvalues, pairing, SpaceConfig, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    /// Runs `check`, timing it and failing it when it exceeds `limit`.
    pub fn timed(limit: Duration, check: impl FnOnce() -> (bool, String)) -> Self {
        let start = Instant::now();
        let (pass, detail) = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let detail = if in_time {
            detail
        } else {
            format!("{detail}; runtime {elapsed:.2?} exceeds {limit:?}")
        };
        Self {
            pass: pass && in_time,
            detail,
            elapsed,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * normal(rng))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

pub fn preset() -> RunConfig {
    RunConfig::from_toml(PAPER_DEMO_PRESET).expect("preset is valid")
}

/// The preset with distributed and impulsive actuation removed.
pub fn without_actuators(mut cfg: RunConfig) -> RunConfig {
    cfg.control.kernel = memctrl::config::ControlKernel::None;
    cfg.impulses.e_scale = 0.0;
    cfg
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn orders(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

// ---------------------------------------------------------------------------
// 1. resolvent

/// Identity residuals of one mode at the given step counts on `[0, 1]`.
pub fn residual_sequence(lambda: f64, g: &ScalarKernel, n: &ScalarKernel, steps: &[usize]) -> Vec<f64> {
    steps
        .iter()
        .map(|&s| {
            let grid = TimeGrid::new(1.0, s, &[]).unwrap();
            ResolventFamily::build_with(&[lambda], g, n, &grid).unwrap().residual(0)
        })
        .collect()
}

pub fn ac1_resolvent() -> (bool, String) {
    let grid = TimeGrid::new(1.0, 200, &[]).unwrap();
    let r = solve_mode(-1.0, &ScalarKernel::Zero, &ScalarKernel::Zero, &grid).unwrap();
    let memoryless = (r[200] - (-1.0f64).exp()).abs();

    let steps = [50, 100, 200, 400];
    let mut smooth = f64::INFINITY;
    for (lambda, g, n) in [
        (-1.0, ScalarKernel::Zero, ScalarKernel::Zero),
        (-1.0, ScalarKernel::Constant(0.3), ScalarKernel::Exp { rate: 1.0 }),
        (-4.0, ScalarKernel::Exp { rate: 2.0 }, ScalarKernel::Constant(0.25)),
    ] {
        let o = orders(&residual_sequence(lambda, &g, &n, &steps));
        smooth = o.into_iter().fold(smooth, f64::min);
    }
    let singular_g = ScalarKernel::PowerExp { gamma: 0.5, kappa: 1.0 };
    let mut singular = f64::INFINITY;
    for lambda in [-1.0, -4.0, -9.0] {
        let o = orders(&residual_sequence(lambda, &singular_g, &ScalarKernel::Exp { rate: 1.0 }, &steps));
        singular = o.into_iter().fold(singular, f64::min);
    }
    let pass = memoryless <= 5e-4 && smooth >= 1.9 && singular >= 1.5;
    (
        pass,
        format!("|r(1)-e^-1|={memoryless:.2e} smooth_order={smooth:.3} singular_order={singular:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 2. duality map

pub fn ac2_duality() -> (bool, String) {
    let mut worst_identity: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    let mut worst_homog: f64 = 0.0;
    let mut worst_mono = f64::INFINITY;
    let mut worst_p2: f64 = 0.0;
    for (i, p) in [2.0, 3.0, 4.0].into_iter().enumerate() {
        let space = SpaceConfig::new(p, 8, 32).unwrap();
        let mut rng = rng(100 + i as u64);
        let mut previous: Option<StateVector> = None;
        for _ in 0..500 {
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let x = StateVector::new(random_vector(&mut rng, 8, scale));
            let jx = space.duality_map(&x);
            let nx = space.lp_norm(&x);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
            worst_identity = worst_identity.max(rel(pairing(&jx, &x).unwrap(), nx * nx));
            worst_norm = worst_norm.max(rel(space.dual_norm(&jx).unwrap(), nx));
            let c = rng.random_range(0.1..10.0);
            let jcx = space.duality_map(&x.scaled(c));
            worst_homog = worst_homog.max((jcx.coeffs() - jx.coeffs() * c).norm() / (c * jx.coeffs().norm()));
            if let Some(y) = &previous {
                let jy = space.duality_map(y);
                let gap = pairing(&(jx.clone() - jy), &(x.clone() - y.clone())).unwrap();
                worst_mono = worst_mono.min(gap / (nx * nx + space.lp_norm(y).powi(2)));
            }
            if p == 2.0 {
                worst_p2 = worst_p2.max((jx.coeffs() - x.coeffs()).amax());
            }
            previous = Some(x);
        }
    }
    let pass = worst_identity <= 1e-8 && worst_norm <= 1e-8 && worst_homog <= 1e-10 && worst_mono >= -1e-12 && worst_p2 <= 1e-12;
    (
        pass,
        format!(
            "pairing={worst_identity:.1e} dual_norm={worst_norm:.1e} homogeneity={worst_homog:.1e} monotone_min={worst_mono:.1e} p2_identity={worst_p2:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Gramian

/// Checks `Σ blocks = MMᵀ`, symmetry and positive semidefiniteness of each block.
pub fn gramian_defects(plant: &Plant) -> (f64, f64, f64) {
    let map = ControlMap::assemble(plant).unwrap();
    let blocks = GramianBlocks::from_formulas(plant);
    let mmt = map.gram();
    let rel = (&blocks.total - &mmt).norm() / mmt.norm().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    let mut neg: f64 = 0.0;
    for b in [&blocks.gamma, &blocks.gamma_tilde, &blocks.theta, &blocks.theta_tilde] {
        let scale = b.norm().max(f64::MIN_POSITIVE);
        asym = asym.max((b - b.transpose()).norm() / scale);
        neg = neg.max(-min_eigenvalue(b) / scale);
    }
    (rel, asym, neg)
}

pub fn random_schedule_plant(rng: &mut ChaCha8Rng, n: usize, steps: usize) -> Plant {
    let m = rng.random_range(1..=3);
    let mut idx: Vec<usize> = Vec::new();
    while idx.len() < m {
        let j = rng.random_range(5..steps - 5);
        if !idx.contains(&j) {
            idx.push(j);
        }
    }
    idx.sort_unstable();
    let times: Vec<f64> = idx.iter().map(|&j| j as f64 / steps as f64).collect();
    let grid = TimeGrid::new(1.0, steps, &times).unwrap();
    let kp = memctrl::kernels::KernelParams::new(0.5, 1.0, 1.0, 0.0, 1.0).unwrap();
    let fam = ResolventFamily::build(&laplacian_eigenvalues(n), &kp, &grid).unwrap();
    let n_v = rng.random_range(1..=n);
    let d = (0..m).map(|_| random_matrix(rng, n, n, 0.4)).collect();
    let e = (0..m).map(|_| random_matrix(rng, n, n_v, 0.6)).collect();
    let sched = ImpulseSchedule::new(&grid, d, e).unwrap();
    let n_u = rng.random_range(1..=n);
    let ctrl = ControlOperator::new(random_matrix(rng, n, n_u, 0.5));
    let psi = HistoryFunction::zeros(n, 8.0, 8).unwrap();
    Plant::with_forcing(fam, sched, ctrl, psi, vec![StateVector::zeros(n); steps + 1]).unwrap()
}

pub fn ac3_gramian() -> (bool, String) {
    let problem = Problem::build(&preset()).unwrap();
    let (rel, asym, neg) = gramian_defects(&problem.plant);
    let theta_zero = problem.blocks.theta.iter().all(|&v| v == 0.0);
    let mut worst = (rel, asym, neg);
    let mut rng = rng(300);
    for _ in 0..20 {
        let plant = random_schedule_plant(&mut rng, 6, 120);
        let (r, a, m) = gramian_defects(&plant);
        worst = (worst.0.max(r), worst.1.max(a), worst.2.max(m));
    }
    let pass = worst.0 <= 1e-6 && worst.1 <= 1e-12 && worst.2 <= 1e-10 && theta_zero;
    (
        pass,
        format!(
            "rel_frobenius={:.1e} asymmetry={:.1e} neg_eig={:.1e} theta_zero={theta_zero}",
            worst.0, worst.1, worst.2
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. regularised equation

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let rank = rng.random_range(0..=n);
    let l = random_matrix(rng, n, rank, 1.0);
    &l * l.transpose()
}

/// Minimises `‖αx + Γ𝒥(x) − αy‖` over `ℝ²` by a shrinking grid search.
pub fn brute_force_root(gamma: &DMatrix<f64>, alpha: f64, y: &StateVector, space: &SpaceConfig) -> StateVector {
    let residual = |x: &DVector<f64>| {
        let xs = StateVector::new(x.clone());
        let jx = space.duality_map(&xs);
        (x * alpha + gamma * jx.coeffs() - y.coeffs() * alpha).norm()
    };
    let mut centre = DVector::zeros(2);
    let mut radius = 2.0 * y.coeffs().norm().max(1e-3);
    let mut best = residual(&centre);
    for _ in 0..80 {
        let mut improved = centre.clone();
        for a in -10..=10 {
            for b in -10..=10 {
                let trial = &centre + DVector::from_vec(vec![a as f64, b as f64]) * (radius / 10.0);
                let r = residual(&trial);
                if r < best {
                    best = r;
                    improved = trial;
                }
            }
        }
        centre = improved;
        radius *= 0.5;
    }
    StateVector::new(centre)
}

pub fn ac4_regularized() -> (bool, String) {
    let mut rng = rng(400);
    let mut bound_ok = true;
    for i in 0..500 {
        let n = rng.random_range(2..=6);
        let p = [2.0, 3.0, 4.0][i % 3];
        let space = SpaceConfig::new(p, n, 4 * n).unwrap();
        let gamma = random_psd(&mut rng, n);
        let y = StateVector::new(random_vector(&mut rng, n, 1.0));
        let alpha = 10f64.powf(rng.random_range(-4.0..0.0));
        let settings = RegularizerSettings::new(alpha).unwrap();
        match solve_regularized(&gamma, &y, &settings, &space) {
            Ok(x) => bound_ok &= norm_bound_check(&x, &y, &space),
            Err(_) => bound_ok = false,
        }
    }

    let mut closed: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let space = SpaceConfig::new(2.0, n, 4 * n).unwrap();
        let gamma = random_psd(&mut rng, n);
        let y = StateVector::new(random_vector(&mut rng, n, 1.0));
        let alpha = 10f64.powf(rng.random_range(-3.0..0.0));
        let settings = RegularizerSettings::new(alpha).unwrap();
        let shifted = &gamma + DMatrix::identity(n, n) * alpha;
        let exact = shifted.lu().solve(&(y.coeffs() * alpha)).unwrap();
        let newton = solve_newton(&gamma, alpha, &y.scaled(alpha), &settings, &space, &StateVector::zeros(n)).unwrap();
        closed = closed.max((newton.coeffs() - &exact).norm() / exact.norm().max(1e-300));
    }

    let mut brute: f64 = 0.0;
    let space = SpaceConfig::new(3.0, 2, 8).unwrap();
    for _ in 0..20 {
        let gamma = random_psd(&mut rng, 2);
        let y = StateVector::new(random_vector(&mut rng, 2, 1.0));
        let alpha = 10f64.powf(rng.random_range(-2.0..0.0));
        let settings = RegularizerSettings::new(alpha).unwrap();
        let x = solve_regularized(&gamma, &y, &settings, &space).unwrap();
        let oracle = brute_force_root(&gamma, alpha, &y, &space);
        brute = brute.max((x.coeffs() - oracle.coeffs()).norm());
    }
    let pass = bound_ok && closed <= 1e-10 && brute <= 1e-4;
    (pass, format!("bound_ok={bound_ok} p2_closed_form={closed:.1e} p3_brute_force={brute:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. positivity of the Gramian versus decay of the regularised solution

pub fn ac5_equivalence() -> (bool, String) {
    let alphas: Vec<f64> = (2..=12).map(|k| 10f64.powf(-(k as f64) / 2.0)).collect();
    let settings = RegularizerSettings::default();

    let positive = Problem::build(&preset()).unwrap();
    let y = positive.target.clone();
    let ny = positive.space.lp_norm(&y);
    let norms = alpha_limit_probe(&positive.blocks.total, &y, &alphas, &settings, &positive.space).unwrap();
    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);
    let final_ratio = norms.last().unwrap() / ny;
    let flagged = positive.positivity().strictly_positive;

    let zero = Problem::build(&without_actuators(preset())).unwrap();
    let null_y = StateVector::from_vec((0..zero.space.n_modes()).map(|k| 1.0 / (k + 1) as f64).collect());
    let in_null = (&zero.blocks.total * null_y.coeffs()).norm() == 0.0;
    let nz = zero.space.lp_norm(&null_y);
    let flat = alpha_limit_probe(&zero.blocks.total, &null_y, &alphas, &settings, &zero.space).unwrap();
    let spread = flat.iter().map(|v| (v - nz).abs() / nz).fold(0.0, f64::max);
    let unflagged = !zero.positivity().strictly_positive;

    let pass = flagged && decreasing && final_ratio < 1e-3 && in_null && unflagged && spread <= 1e-12;
    (
        pass,
        format!(
            "positive: monotone={decreasing} ratio@1e-6={final_ratio:.2e}; zero actuation: null_space={in_null} max_rel_change={spread:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. mild solution vs direct time stepping

/// A linear four-mode, one-impulse instance with smooth closed-form data.
pub struct DirectInstance {
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub x0: DVector<f64>,
    pub b_mat: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub v: DVector<f64>,
    pub impulse: f64,
}

impl DirectInstance {
    pub fn new() -> Self {
        let mut rng = rng(600);
        let n = 4;
        Self {
            lambdas: laplacian_eigenvalues(n),
            gamma: 0.5,
            kappa: 1.0,
            mu: 1.0,
            x0: DVector::from_vec(vec![1.0, -0.5, 0.25, 0.1]),
            b_mat: ControlOperator::min_kernel(n).matrix().clone(),
            d: random_matrix(&mut rng, n, n, 0.4),
            e: random_matrix(&mut rng, n, 2, 0.6),
            v: DVector::from_vec(vec![0.3, -0.7]),
            impulse: 0.5,
        }
    }

    pub fn control(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(4, |k, _| ((k + 1) as f64 * t).sin() + 0.5 * (k as f64 - t).cos())
    }

    pub fn forcing(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(4, |k, _| (-(k as f64 + 1.0) * t).exp() * 0.3)
    }

    fn total_forcing(&self, t: f64) -> DVector<f64> {
        &self.b_mat * self.control(t) + self.forcing(t)
    }

    /// `K(u) = Λ + (N₁(u) − g(u))I` of the second-kind Volterra form.
    fn memory(&self, u: f64, k: usize) -> f64 {
        let n1 = (1.0 - (-self.mu * u).exp()) / self.mu;
        let g = if u > 0.0 { u.powf(self.gamma) * (-self.kappa * u).exp() } else { 0.0 };
        self.lambdas[k] + n1 - g
    }

    /// Marches `x(t) = x_a + ∫_a^t K(t−s)x(s) ds + ∫_a^t F`, restarting the memory at the
    /// impulse, with a trapezoidal memory sum and an explicit predictor plus two
    /// corrector sweeps. Returns left values at every node.
    pub fn direct(&self, steps: usize) -> Vec<DVector<f64>> {
        let h = 1.0 / steps as f64;
        let j_imp = (self.impulse * steps as f64).round() as usize;
        let mut left = vec![DVector::zeros(4); steps + 1];
        left[0] = self.x0.clone();
        let mut segments = vec![(0usize, steps)];
        segments[0].1 = j_imp;
        segments.push((j_imp, steps));
        let mut start_value = self.x0.clone();
        for (s, &(a, e)) in segments.iter().enumerate() {
            if s == 1 {
                let identity = DMatrix::<f64>::identity(4, 4);
                start_value = (identity + &self.d) * &left[a] + &self.e * &self.v;
            }
            let mut seg = vec![start_value.clone()];
            let mut forcing_integral = DVector::zeros(4);
            for j in a + 1..=e {
                // Simpson on the closed-form forcing over [t_{j−1}, t_j]
                let (t0, t1) = ((j - 1) as f64 * h, j as f64 * h);
                forcing_integral += (self.total_forcing(t0)
                    + self.total_forcing(0.5 * (t0 + t1)) * 4.0
                    + self.total_forcing(t1))
                    * (h / 6.0);
                let i_new = j - a;
                let history_sum = |x_new: &DVector<f64>, seg: &[DVector<f64>]| {
                    let mut acc = DVector::zeros(4);
                    for (i, xi) in seg.iter().enumerate().take(i_new) {
                        let w = if i == 0 { 0.5 * h } else { h };
                        let u = (i_new - i) as f64 * h;
                        for k in 0..4 {
                            acc[k] += w * self.memory(u, k) * xi[k];
                        }
                    }
                    for k in 0..4 {
                        acc[k] += 0.5 * h * self.memory(0.0, k) * x_new[k];
                    }
                    acc
                };
                let mut x = if seg.len() >= 2 {
                    &seg[seg.len() - 1] * 2.0 - &seg[seg.len() - 2]
                } else {
                    seg[seg.len() - 1].clone()
                };
                for _ in 0..3 {
                    x = &start_value + history_sum(&x, &seg) + &forcing_integral;
                }
                seg.push(x);
            }
            for (i, x) in seg.into_iter().enumerate().skip(1) {
                left[a + i] = x;
            }
        }
        left
    }

    /// The same instance through the resolvent-based mild solution.
    pub fn mild(&self, steps: usize) -> Vec<DVector<f64>> {
        let grid = TimeGrid::new(1.0, steps, &[self.impulse]).unwrap();
        let g = ScalarKernel::PowerExp {
            gamma: self.gamma,
            kappa: self.kappa,
        };
        let fam = ResolventFamily::build_with(&self.lambdas, &g, &ScalarKernel::Exp { rate: self.mu }, &grid).unwrap();
        let sched = ImpulseSchedule::new(&grid, vec![self.d.clone()], vec![self.e.clone()]).unwrap();
        let psi = HistoryFunction::from_fn(8.0, 8, |_| StateVector::new(self.x0.clone())).unwrap();
        let forcing = (0..=steps).map(|j| StateVector::new(self.forcing(grid.node(j)))).collect();
        let plant = Plant::with_forcing(fam, sched, ControlOperator::new(self.b_mat.clone()), psi, forcing).unwrap();
        let mut controls = ControlBundle::zeros(4, &grid, 2);
        for j in 0..=steps {
            controls.u.set_column(j, &self.control(grid.node(j)));
        }
        controls.u_right[0] = self.control(self.impulse);
        controls.v[0] = self.v.clone();
        let traj = mild_solution(&plant, &controls, &Source::None).unwrap();
        traj.left.into_iter().map(StateVector::into_inner).collect()
    }

    pub fn sup_error(&self, steps: usize) -> f64 {
        self.direct(steps)
            .iter()
            .zip(self.mild(steps))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub fn ac6_direct_oracle() -> (bool, String) {
    let inst = DirectInstance::new();
    let errors: Vec<f64> = [50, 100, 200, 400].iter().map(|&s| inst.sup_error(s)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&r| r >= 2.0);
    (
        pass,
        format!(
            "sup errors {} ratios {}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(","),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(",")
        ),
    )
}

// ---------------------------------------------------------------------------
// 7–9. sweep experiments

/// Records of the preset sweep, its linear variant and the zero-actuator control.
pub struct SweepData {
    pub preset: Vec<ExperimentRecord>,
    pub linear: Vec<ExperimentRecord>,
    pub zero_actuation: Vec<ExperimentRecord>,
    pub uncontrolled: f64,
    pub fp_tol: f64,
    pub elapsed: Duration,
}

impl SweepData {
    pub fn run() -> Self {
        let start = Instant::now();
        let cfg = preset();
        let problem = Problem::build(&cfg).unwrap();
        let alphas = cfg.solver.alphas.clone();
        let preset_records = problem.sweep(&alphas).unwrap();
        let uncontrolled = problem.uncontrolled_defect().unwrap();
        let fp_tol = cfg.fixed_point_settings().tolerance(&problem.target, &problem.space);

        let mut linear_cfg = cfg.clone();
        linear_cfg.kernels.hist_scale = 0.0;
        let linear = Problem::build(&linear_cfg).unwrap().sweep(&alphas).unwrap();

        let zero = Problem::build(&without_actuators(cfg)).unwrap().sweep(&alphas).unwrap();
        Self {
            preset: preset_records,
            linear,
            zero_actuation: zero,
            uncontrolled,
            fp_tol,
            elapsed: start.elapsed(),
        }
    }
}

pub fn ac7_identity(data: &SweepData) -> (bool, String) {
    let runs: Vec<&ExperimentRecord> = data.preset.iter().chain(&data.linear).collect();
    let converged = runs.iter().all(|r| r.converged);
    let worst = runs.iter().map(|r| r.identity_defect).fold(0.0, f64::max);
    let limit = 10.0 * data.fp_tol;
    (
        converged && worst <= limit,
        format!("runs={} max_defect={worst:.2e} limit={limit:.2e}", runs.len()),
    )
}

/// Terminal errors of the preset sweep recorded on the first verified run.
pub const BASELINE: &str = include_str!("../data/paper_demo_baseline.csv");

pub fn baseline() -> Vec<(f64, f64)> {
    BASELINE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',').map(|v| v.trim().parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect()
}

pub fn ac8_end_to_end(data: &SweepData) -> (bool, String) {
    let verdict = SweepVerdict::new(&data.preset, data.uncontrolled);
    let z = &data.zero_actuation;
    let z0 = z[0].terminal_error;
    let spread = z.iter().map(|r| (r.terminal_error - z0).abs() / z0).fold(0.0, f64::max);
    let base = baseline();
    let drift = data
        .preset
        .iter()
        .zip(&base)
        .map(|(r, &(a, e))| if r.alpha == a { (r.terminal_error - e).abs() / e } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let matches = base.len() == data.preset.len() && drift <= 1e-6;
    let pass = verdict.controllable() && spread <= 1e-9 && matches;
    (
        pass,
        format!(
            "monotone={} final/uncontrolled={:.2e} zero_actuation_spread={spread:.1e} baseline_drift={drift:.1e}",
            verdict.monotone, verdict.final_ratio
        ),
    )
}

pub fn ac9_control_bound(data: &SweepData) -> (bool, String) {
    let runs: Vec<&ExperimentRecord> = data.preset.iter().chain(&data.linear).collect();
    let all = runs.iter().all(|r| r.bound_holds() == Some(true));
    let tightest = runs
        .iter()
        .filter_map(|r| r.control_bound.map(|b| r.max_control_norm / b))
        .fold(0.0, f64::max);
    (all, format!("entries={} max ‖u‖/(M̃β/α)={tightest:.2e}", runs.len()))
}

/// Smallest eigenvalue of a Gramian, for diagnostics.
pub fn min_eig(plant: &Plant) -> f64 {
    let map = ControlMap::assemble(plant).unwrap();
    positivity_report(&map.gram()).min_eigenvalue
}
