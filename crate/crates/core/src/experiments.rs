//! Experiment orchestration: problem assembly, the CLI subcommands and result files.
//!
//! Every CSV is written with a header row next to a `<name>.meta.json` sidecar carrying
//! the configuration hash and the artifact version. Outputs are deterministic for a fixed
//! configuration, apart from the `wall_ms` column of the sweep.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gramian::{ControlMap, GramianBlocks, PositivityReport};
use crate::kernels::{HistoryIntegral, KernelParams, Nonlinearity, ZeroSource};
use crate::propagator::{ImpulseSchedule, Plant};
use crate::regularizer::alpha_limit_probe;
use crate::resolvent::{ResolventFamily, TimeGrid};
use crate::semilinear::{Controller, ExperimentRecord, SteeringRun};
use crate::space::{laplacian_eigenvalues, SpaceConfig, StateVector};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The configuration shipped for the worked heat-equation example.
pub const PAPER_DEMO_PRESET: &str = include_str!("../presets/paper_demo.toml");

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "MEMCTRL_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Resolvent,
    Gramian,
    Limit,
    Steer,
    Sweep,
    PaperDemo,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Resolvent => "resolvent",
            Self::Gramian => "gramian",
            Self::Limit => "limit",
            Self::Steer => "steer",
            Self::Sweep => "sweep",
            Self::PaperDemo => "paper-demo",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command-line overrides applied on top of the configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

/// Process exit status for a run outcome: 0 success, 2 invalid input, 3 solver failure.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(Error::SolverFailure { .. } | Error::FixedPoint { .. } | Error::Consistency(_) | Error::NonCausal { .. }) => 3,
        Err(_) => 2,
    }
}

/// Everything assembled from a validated configuration.
pub struct Problem {
    pub config: RunConfig,
    pub space: SpaceConfig,
    pub kernels: KernelParams,
    pub plant: Plant,
    pub map: ControlMap,
    pub blocks: GramianBlocks,
    pub target: StateVector,
    pub source: Box<dyn Nonlinearity>,
}

impl Problem {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let space = config.space_config()?;
        let kernels = config.kernel_params()?;
        let grid = config.time_grid()?;
        let n = space.n_modes();
        let resolvent = ResolventFamily::build(&laplacian_eigenvalues(n), &kernels, &grid)?;
        let schedule = ImpulseSchedule::uniform(&grid, n, config.impulses.d_scale, config.impulses.e_scale)?;
        let history = config.history(&space, &kernels)?;
        let target = config.target(&space)?;
        let source: Box<dyn Nonlinearity> = if kernels.hist_scale == 0.0 {
            Box::new(ZeroSource { n_modes: n })
        } else {
            Box::new(HistoryIntegral {
                params: kernels.clone(),
                horizon: config.history_horizon(&kernels)?,
                clamp: config.clamp(&space, &history, &target),
                space: space.clone(),
            })
        };
        let plant = Plant::new(resolvent, schedule, config.control_operator(), history, &kernels)?;
        let map = ControlMap::assemble(&plant)?;
        let blocks = GramianBlocks::assemble(&plant, &map)?;
        Ok(Self {
            config: config.clone(),
            space,
            kernels,
            plant,
            map,
            blocks,
            target,
            source,
        })
    }

    pub fn controller(&self) -> Result<Controller<'_>> {
        Controller::new(&self.plant, &self.map, &self.blocks.total, &self.space)
    }

    pub fn positivity(&self) -> PositivityReport {
        self.blocks.positivity()
    }

    /// Refuses to continue unless the discrete Gramian is strictly positive.
    pub fn require_positive(&self) -> Result<PositivityReport> {
        let report = self.positivity();
        if report.strictly_positive {
            Ok(report)
        } else {
            Err(Error::Precondition(format!(
                "assumption (H1) fails: the controllability Gramian is not strictly positive ({report})"
            )))
        }
    }

    pub fn steer(&self, alpha: f64) -> Result<SteeringRun> {
        let settings = self.config.regularizer_settings(alpha)?;
        self.controller()?
            .fixed_point_solve(self.source.as_ref(), &self.target, &settings, &self.config.fixed_point_settings())
    }

    pub fn sweep(&self, alphas: &[f64]) -> Result<Vec<ExperimentRecord>> {
        let settings = self.config.regularizer_settings(alphas[0])?;
        Ok(self.controller()?.alpha_sweep(
            self.source.as_ref(),
            &self.target,
            alphas,
            &settings,
            &self.config.fixed_point_settings(),
        ))
    }

    pub fn uncontrolled_defect(&self) -> Result<f64> {
        self.controller()?.uncontrolled_defect(self.source.as_ref(), &self.target)
    }
}

/// Decay verdict of a sweep: non-increasing within 5% per step and a final error at most
/// 1% of the uncontrolled defect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepVerdict {
    pub all_converged: bool,
    pub monotone: bool,
    pub final_ratio: f64,
}

impl SweepVerdict {
    pub fn new(records: &[ExperimentRecord], uncontrolled: f64) -> Self {
        let all_converged = records.iter().all(|r| r.converged);
        let monotone = records
            .windows(2)
            .all(|w| w[1].terminal_error <= 1.05 * w[0].terminal_error);
        let last = records.last().map_or(f64::NAN, |r| r.terminal_error);
        let final_ratio = if uncontrolled > 0.0 { last / uncontrolled } else { last };
        Self {
            all_converged,
            monotone,
            final_ratio,
        }
    }

    pub fn controllable(&self) -> bool {
        self.all_converged && self.monotone && self.final_ratio <= 0.01
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    artifact: &'a str,
    version: &'a str,
    subcommand: &'a str,
    config_hash: String,
    seed: Option<u64>,
}

/// Writes CSV files and their metadata sidecars into one run directory.
pub struct OutputDir {
    dir: PathBuf,
    hash: String,
    subcommand: Subcommand,
    seed: Option<u64>,
}

impl OutputDir {
    pub fn create(dir: impl Into<PathBuf>, config: &RunConfig, subcommand: Subcommand, seed: Option<u64>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hash: config.hash(),
            subcommand,
            seed,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Creates `name`, hands a buffered writer to `fill`, then writes `name.meta.json`.
    pub fn write(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        fill(&mut w)?;
        w.flush()?;
        let meta = Meta {
            artifact: name,
            version: ARTIFACT_VERSION,
            subcommand: self.subcommand.name(),
            config_hash: self.hash.clone(),
            seed: self.seed,
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(self.dir.join(format!("{name}.meta.json")), text + "\n")?;
        Ok(path)
    }
}

fn write_rows<R: Serialize>(w: &mut dyn Write, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    alpha: f64,
    iterations: usize,
    fp_residual: f64,
    terminal_error: f64,
    identity_defect: f64,
    wall_ms: f64,
}

#[derive(Serialize)]
struct BoundRow {
    alpha: f64,
    converged: bool,
    sigma_norm: f64,
    max_control_norm: f64,
    control_bound: Option<f64>,
    bound_holds: Option<bool>,
}

#[derive(Serialize)]
struct LimitRow {
    alpha: f64,
    norm: f64,
}

#[derive(Serialize)]
struct ResidualRow {
    k: usize,
    residual: f64,
    residual_coarse: f64,
    order: f64,
}

/// Builds a thread pool honouring `MEMCTRL_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Validation {
            field: THREADS_VAR.into(),
            message: format!("expected a positive integer, got {v:?}"),
        })?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

/// Runs a subcommand, printing a human-readable report to `log`.
pub fn run(cmd: Subcommand, config: &RunConfig, opts: &RunOptions, log: &mut (dyn Write + Send)) -> Result<()> {
    if let Some(a) = opts.alpha {
        config.regularizer_settings(a)?;
    }
    thread_pool()?.install(|| dispatch(cmd, config, opts, log))
}

fn dispatch(cmd: Subcommand, config: &RunConfig, opts: &RunOptions, log: &mut (dyn Write + Send)) -> Result<()> {
    let out_dir = opts.out.clone().unwrap_or_else(|| config.output.dir.clone());
    let out = OutputDir::create(out_dir, config, cmd, opts.seed)?;
    match cmd {
        Subcommand::Resolvent => resolvent_report(config, &out, log),
        Subcommand::Gramian => {
            let problem = Problem::build(config)?;
            gramian_report(&problem, &out, log).map(|_| ())
        }
        Subcommand::Limit => {
            let problem = Problem::build(config)?;
            let report = gramian_report(&problem, &out, log)?;
            let y = config.limit_data(&problem.space)?;
            let alphas = opts.alpha.map_or_else(|| config.solver.alphas.clone(), |a| vec![a]);
            let settings = config.regularizer_settings(alphas[0])?;
            let norms = alpha_limit_probe(&problem.blocks.total, &y, &alphas, &settings, &problem.space)?;
            out.write("limit.csv", |w| {
                write_rows(w, alphas.iter().zip(&norms).map(|(&alpha, &norm)| LimitRow { alpha, norm }))
            })?;
            let y_norm = problem.space.lp_norm(&y);
            for (a, n) in alphas.iter().zip(&norms) {
                writeln!(log, "alpha={a:e} norm={n:e} ratio={:e}", n / y_norm)?;
            }
            writeln!(log, "decays={}", report.strictly_positive)?;
            Ok(())
        }
        Subcommand::Steer => {
            let problem = Problem::build(config)?;
            let alpha = opts.alpha.unwrap_or(*config.solver.alphas.last().expect("validated"));
            let run = problem.steer(alpha)?;
            out.write("trajectory.csv", |w| run.trajectory.write_csv(w))?;
            out.write("steer.csv", |w| write_rows(w, [sweep_row(&run.record)]))?;
            writeln!(
                log,
                "alpha={:e} iterations={} terminal_error={:e} identity_defect={:e}",
                alpha, run.record.iterations, run.record.terminal_error, run.record.identity_defect
            )?;
            Ok(())
        }
        Subcommand::Sweep => {
            let problem = Problem::build(config)?;
            sweep_report(&problem, opts, &out, log)
        }
        Subcommand::PaperDemo => {
            resolvent_report(config, &out, log)?;
            let problem = Problem::build(config)?;
            gramian_report(&problem, &out, log)?;
            sweep_report(&problem, opts, &out, log)
        }
    }
}

fn sweep_row(r: &ExperimentRecord) -> SweepRow {
    SweepRow {
        alpha: r.alpha,
        iterations: r.iterations,
        fp_residual: r.fp_residual,
        terminal_error: r.terminal_error,
        identity_defect: r.identity_defect,
        wall_ms: r.wall_ms,
    }
}

fn resolvent_report(config: &RunConfig, out: &OutputDir, log: &mut (dyn Write + Send)) -> Result<()> {
    let kp = config.kernel_params()?;
    let eigs = laplacian_eigenvalues(config.space.n_modes);
    let grid = config.time_grid()?;
    let fine = ResolventFamily::build(&eigs, &kp, &grid)?;
    let coarse_grid = TimeGrid::new(config.grid.b, (config.grid.n_steps / 2).max(2), &[])?;
    let coarse = ResolventFamily::build(&eigs, &kp, &coarse_grid)?;
    let rows: Vec<ResidualRow> = (0..eigs.len())
        .map(|k| {
            let (r, rc) = (fine.residual(k), coarse.residual(k));
            ResidualRow {
                k: k + 1,
                residual: r,
                residual_coarse: rc,
                order: (rc / r).log2(),
            }
        })
        .collect();
    out.write("resolvent.csv", |w| fine.write_csv(w))?;
    out.write("resolvent_residual.csv", |w| write_rows(w, &rows))?;
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let order = rows.iter().map(|r| r.order).filter(|o| o.is_finite()).fold(f64::INFINITY, f64::min);
    writeln!(log, "resolvent modes={} max_residual={worst:e} min_order={order:.3} bound={:e}", rows.len(), fine.bound())?;
    Ok(())
}

fn gramian_report(problem: &Problem, out: &OutputDir, log: &mut (dyn Write + Send)) -> Result<PositivityReport> {
    out.write("gramian.csv", |w| problem.blocks.write_csv(w))?;
    let report = problem.positivity();
    writeln!(log, "{report}")?;
    Ok(report)
}

fn sweep_report(problem: &Problem, opts: &RunOptions, out: &OutputDir, log: &mut (dyn Write + Send)) -> Result<()> {
    problem.require_positive()?;
    let alphas = opts.alpha.map_or_else(|| problem.config.solver.alphas.clone(), |a| vec![a]);
    let records = problem.sweep(&alphas)?;
    let uncontrolled = problem.uncontrolled_defect()?;
    out.write("sweep.csv", |w| write_rows(w, records.iter().map(sweep_row)))?;
    out.write("sweep_bounds.csv", |w| {
        write_rows(
            w,
            records.iter().map(|r| BoundRow {
                alpha: r.alpha,
                converged: r.converged,
                sigma_norm: r.sigma_norm,
                max_control_norm: r.max_control_norm,
                control_bound: r.control_bound,
                bound_holds: r.bound_holds(),
            }),
        )
    })?;
    for r in &records {
        writeln!(
            log,
            "alpha={:e} converged={} iterations={} terminal_error={:e} identity_defect={:e}",
            r.alpha, r.converged, r.iterations, r.terminal_error, r.identity_defect
        )?;
    }
    let verdict = SweepVerdict::new(&records, uncontrolled);
    writeln!(log, "uncontrolled_defect={uncontrolled:e} final_ratio={:e}", verdict.final_ratio)?;
    writeln!(log, "controllable={}", verdict.controllable())?;
    if let Some(r) = records.iter().find(|r| !r.converged) {
        return Err(Error::FixedPoint {
            iterations: r.iterations,
            last: r.fp_residual,
            history: Vec::new(),
        });
    }
    Ok(())
}
