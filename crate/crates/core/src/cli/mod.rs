//! Batch front end: `run`, `convergence`, `verify` and `sweep` driven by a
//! config file (see [`config`]).
//!
//! Every subcommand writes into the output directory:
//!
//! | file | content |
//! |---|---|
//! | `trace.csv` | per-step diagnostics, columns [`output::TRACE_COLUMNS`] |
//! | `snapshot_<step>.csv` | stored states, one value per line, row-major |
//! | `summary.json` | config echo, check reports, flags, version |
//! | `timing.json` | wall-clock seconds |
//! | `convergence.csv` | `convergence` only: n_steps, tau, error, bound_rhs, order |
//! | `sweep.csv` | `sweep` only: one row per member, members in `member_<i>/` |
//!
//! Wall-clock lives in its own file so that `summary.json` is
//! byte-identical across repeated runs of the same config.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::energy::Truncation;
use crate::error::{Error, Result};
use crate::exec;
use crate::flow::{self, ConvergenceTable, FlowFlag, FlowTrace};
use crate::grid::Field;
use crate::presets;
use crate::verify::{self, CheckContext, CheckReport, SingularityReport};

pub use config::{parse_config, ConfigError, ConfigErrors, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Run,
    Convergence,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Convergence => "convergence",
            Self::Verify => "verify",
            Self::Sweep => "sweep",
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    NonConvergence = 2,
    CheckFailure = 3,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }

    fn rank(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::CheckFailure => 1,
            Self::NonConvergence => 2,
            Self::Usage => 3,
        }
    }

    /// The more severe of two outcomes.
    pub fn worst(self, other: Exit) -> Exit {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }

    fn status(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Usage => "error",
            Self::NonConvergence => "nonconvergence",
            Self::CheckFailure => "check_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Loads the config named by the invocation and applies the overrides.
pub fn load(inv: &Invocation) -> std::result::Result<RunConfig, String> {
    let text = fs::read_to_string(&inv.config).map_err(|e| format!("{}: {e}", inv.config.display()))?;
    let base = inv.config.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config(&text, base).map_err(|e| format!("{}:\n{e}", inv.config.display()))?;
    if let Some(out) = &inv.out {
        cfg.output.directory = out.clone();
    }
    if let Some(seed) = inv.seed {
        cfg.reseed(seed);
    }
    if inv.command == Command::Sweep && cfg.sweep.is_none() {
        return Err(format!("{}: sweep needs sweep_axis and sweep_values", inv.config.display()));
    }
    Ok(cfg)
}

/// Runs one invocation end to end; errors are reported on stderr.
pub fn execute(inv: &Invocation) -> Exit {
    let start = Instant::now();
    let cfg = match load(inv) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return Exit::Usage;
        }
    };
    let outcome = exec::with_threads(inv.threads, || dispatch(inv.command, &cfg));
    let exit = match outcome {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::Usage;
        }
    };
    if cfg.output.json {
        let timing = Timing {
            command: inv.command.name(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            threads: inv.threads,
        };
        if let Err(e) = output::write_json(&cfg.output.directory.join("timing.json"), &timing) {
            eprintln!("error: timing.json: {e}");
            return Exit::Usage;
        }
    }
    exit
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Exit> {
    fs::create_dir_all(&cfg.output.directory)?;
    match command {
        Command::Run | Command::Verify => run(cfg, command),
        Command::Convergence => convergence(cfg),
        Command::Sweep => sweep(cfg),
    }
}

#[derive(Serialize)]
struct Timing {
    command: &'static str,
    wall_clock_seconds: f64,
    threads: Option<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'static str,
    command: &'static str,
    status: &'static str,
    exit_code: u8,
    config: &'a RunConfig,
    policy: Option<Truncation>,
    steps_completed: usize,
    flags: &'a [FlowFlag],
    checks: &'a [CheckReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<&'a ConvergenceTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    singularity: Option<&'a SingularityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a [SweepRow]>,
}

impl<'a> Summary<'a> {
    fn new(command: Command, cfg: &'a RunConfig, exit: Exit) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            command: command.name(),
            status: exit.status(),
            exit_code: exit.code(),
            config: cfg,
            policy: None,
            steps_completed: 0,
            flags: &[],
            checks: &[],
            convergence: None,
            singularity: None,
            sweep: None,
        }
    }
}

/// Evolves and keeps a partial trace on failure, with the matching exit.
fn evolve_logged(u0: &Field, cfg: &flow::FlowConfig) -> Result<(FlowTrace, Exit)> {
    match flow::evolve(u0, cfg) {
        Ok(t) => Ok((t, Exit::Ok)),
        Err(Error::NonConvergence { step, grad_norm, trace }) => {
            log::error!("step {step}: Newton did not converge (gradient norm {grad_norm:e})");
            Ok((*trace, Exit::NonConvergence))
        }
        Err(Error::MeasureBound { step, total, c_star, trace }) => {
            log::error!("step {step}: left the measure ball (|Δu| = {total:e} > C* = {c_star:e})");
            Ok((*trace, Exit::CheckFailure))
        }
        Err(e) => Err(e),
    }
}

/// The configured number of band-limited test fields, plus `0`, `u⁰` and
/// the final state.
fn test_fields(cfg: &RunConfig, u0: &Field, trace: &FlowTrace) -> Vec<Field> {
    let amplitude = u0.max().max(-u0.min()).max(1e-3);
    let mut tests = presets::test_battery(*u0.grid(), cfg.verify.test_fields, amplitude, cfg.seed);
    tests.push(Field::zeros(*u0.grid()));
    tests.push(u0.clone());
    tests.push(trace.last().clone());
    tests
}

fn corrupt(trace: &FlowTrace, seed: u64) -> FlowTrace {
    let scale = trace.initial().max().max(-trace.initial().min()).max(1e-3);
    let noisy = verify::corrupt_with_noise(trace, 1e-2 * scale, seed);
    verify::corrupt_mean(&verify::corrupt_mass_split(&noisy), 1e-6 * scale)
}

/// Mirror image under `x ↦ L − x`.
fn reflect(u: &Field) -> Field {
    let g = *u.grid();
    let n = g.n();
    let v = u.values();
    let values = (0..g.cells()).map(|c| v[c - c % n + (n - 1 - c % n)]).collect();
    Field::new(g, values).expect("same grid")
}

fn singularity_level(policy: Truncation, u0: &Field) -> f64 {
    match policy {
        Truncation::Level(n) => n,
        Truncation::None => Truncation::auto(u0).cap(),
    }
}

fn run(cfg: &RunConfig, command: Command) -> Result<Exit> {
    let dir = &cfg.output.directory;
    let u0 = cfg.initial_state()?;
    let policy = cfg.truncation(&u0);
    let flow_cfg = cfg.flow_config(policy);
    let (trace, mut exit) = evolve_logged(&u0, &flow_cfg)?;
    let tests = test_fields(cfg, &u0, &trace);
    let checked = if cfg.verify.self_test_corrupt {
        log::warn!("self-test: checking a deliberately corrupted trace");
        corrupt(&trace, cfg.seed)
    } else {
        trace.clone()
    };
    let mut checks = verify::run_battery(&checked, &tests);
    let mut singularity = None;
    if command == Command::Verify {
        singularity = Some(verify::singularity_report(&trace, singularity_level(policy, &u0)));
        match flow::two_flow_run(&u0, &reflect(&u0), &flow_cfg) {
            Ok(two) => checks.push(verify::check_contraction(&two)),
            Err(Error::NonConvergence { step, .. }) => {
                log::error!("contraction pair: Newton did not converge at step {step}");
                exit = exit.worst(Exit::NonConvergence);
            }
            Err(Error::MeasureBound { .. }) => exit = exit.worst(Exit::CheckFailure),
            Err(e) => return Err(e),
        }
        let states: Vec<&Field> = trace.snapshots.iter().map(|(_, u)| u).collect();
        let triples: Vec<(Field, Field, Field)> = (0..tests.len())
            .map(|i| {
                let u = states[i * states.len() / tests.len()].clone();
                (u, tests[i].clone(), tests[(i + 1) % tests.len()].clone())
            })
            .collect();
        checks.extend(verify::check_convexity(&triples, trace.tau, policy));
        let densities: Vec<Field> = states
            .iter()
            .map(|u| {
                let lap = u.grid().laplacian(u).expect("same grid");
                let pos = lap.values().iter().map(|x| x.max(0.0)).collect();
                Field::new(*u.grid(), pos).expect("finite")
            })
            .collect();
        checks.push(verify::check_duality(&densities));
    }
    for c in checks.iter().filter(|c| c.fails()) {
        log::error!("{} failed: violation {:e} > tolerance {:e}", c.name, c.max_violation, c.tolerance);
    }
    if checks.iter().any(CheckReport::fails) {
        exit = exit.worst(Exit::CheckFailure);
    }
    if cfg.output.csv {
        output::write_trace(dir, &trace)?;
    }
    if cfg.output.json {
        let mut s = Summary::new(command, cfg, exit);
        s.policy = Some(policy);
        s.steps_completed = trace.steps();
        s.flags = &trace.flags;
        s.checks = &checks;
        s.singularity = singularity.as_ref();
        output::write_json(&dir.join("summary.json"), &s)?;
    }
    Ok(exit)
}

fn convergence(cfg: &RunConfig) -> Result<Exit> {
    let dir = &cfg.output.directory;
    let u0 = cfg.initial_state()?;
    let policy = cfg.truncation(&u0);
    let prox = cfg.prox_options(policy);
    let steps = &cfg.verify.steps_list;
    let (table, exit) = match flow::convergence_study(&u0, cfg.flow.t_final, steps, &prox) {
        Ok(t) => (Some(t), Exit::Ok),
        Err(Error::NonConvergence { step, grad_norm, .. }) => {
            log::error!("step {step}: Newton did not converge (gradient norm {grad_norm:e})");
            (None, Exit::NonConvergence)
        }
        Err(Error::MeasureBound { .. }) => (None, Exit::CheckFailure),
        Err(e) => return Err(e),
    };
    let checks = table
        .as_ref()
        .map(|t| convergence_checks(t, &u0, policy))
        .unwrap_or_default();
    let exit = if checks.iter().any(CheckReport::fails) {
        exit.worst(Exit::CheckFailure)
    } else {
        exit
    };
    if let (true, Some(t)) = (cfg.output.csv, &table) {
        fs::write(dir.join("convergence.csv"), output::convergence_csv(t))?;
    }
    if cfg.output.json {
        let mut s = Summary::new(Command::Convergence, cfg, exit);
        s.policy = Some(policy);
        s.checks = &checks;
        s.convergence = table.as_ref();
        output::write_json(&dir.join("summary.json"), &s)?;
    }
    Ok(exit)
}

/// `error ≤ (τ/√2)·slope(u⁰)` on every row (enforced) and the smallest
/// observed order against 0.9 (logged only: nonsmooth data may be slower).
pub fn convergence_checks(table: &ConvergenceTable, u0: &Field, policy: Truncation) -> Vec<CheckReport> {
    let ctx = |step: Option<usize>| CheckContext {
        dim: u0.grid().dim(),
        n: u0.grid().n(),
        tau: table.rows.first().map_or(0.0, |r| r.tau),
        steps: table.reference_steps,
        policy,
        worst_step: step,
    };
    let (mut bound, mut bound_at, mut scale) = (0.0f64, None, 0.0f64);
    for r in &table.rows {
        let v = r.error - r.bound_rhs;
        if v > bound || bound_at.is_none() {
            bound = bound.max(v);
            bound_at = Some(r.n_steps);
        }
        scale = scale.max(r.bound_rhs);
    }
    let orders: Vec<(usize, f64)> = table.rows.iter().filter_map(|r| r.order.map(|o| (r.n_steps, o))).collect();
    let slowest = orders.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1));
    let order_violation = slowest.map_or(0.0, |(_, o)| (0.9 - o).max(0.0));
    let order_ok = order_violation == 0.0;
    vec![
        CheckReport {
            name: "error_bound".into(),
            max_violation: bound.max(0.0),
            tolerance: 1e-12 * scale,
            passed: bound.max(0.0) <= 1e-12 * scale,
            enforced: true,
            context: ctx(bound_at),
        },
        CheckReport {
            name: "temporal_order".into(),
            max_violation: order_violation,
            tolerance: 0.0,
            passed: order_ok,
            enforced: false,
            context: ctx(slowest.map(|(n, _)| n)),
        },
    ]
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    member: usize,
    value: f64,
    directory: String,
    exit_code: u8,
    error: Option<String>,
}

fn sweep(cfg: &RunConfig) -> Result<Exit> {
    let spec = cfg.sweep.as_ref().expect("validated in load");
    let dir = &cfg.output.directory;
    let jobs: Vec<(usize, f64, RunConfig)> = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut m = spec.member(cfg, v);
            m.output.directory = dir.join(format!("member_{i}"));
            (i, v, m)
        })
        .collect();
    let rows = exec::map_jobs(jobs, |(i, value, m)| {
        let outcome = fs::create_dir_all(&m.output.directory)
            .map_err(Error::from)
            .and_then(|_| run(&m, Command::Run));
        let (exit, error) = match outcome {
            Ok(e) => (e, None),
            Err(e) => (Exit::Usage, Some(e.to_string())),
        };
        SweepRow {
            member: i,
            value,
            directory: format!("member_{i}"),
            exit_code: exit.code(),
            error,
        }
    });
    let exit = rows
        .iter()
        .map(|r| match r.exit_code {
            0 => Exit::Ok,
            2 => Exit::NonConvergence,
            3 => Exit::CheckFailure,
            _ => Exit::Usage,
        })
        .fold(Exit::Ok, Exit::worst);
    if cfg.output.csv {
        let mut s = format!("member,{},exit_code,directory\n", spec.axis.name());
        for r in &rows {
            writeln!(s, "{},{},{},{}", r.member, r.value, r.exit_code, r.directory).expect("writing to a String");
        }
        fs::write(dir.join("sweep.csv"), s)?;
    }
    if cfg.output.json {
        let mut s = Summary::new(Command::Sweep, cfg, exit);
        s.sweep = Some(&rows);
        output::write_json(&dir.join("summary.json"), &s)?;
    }
    Ok(exit)
}
