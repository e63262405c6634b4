//! The minimizing-movement time loop `u_k = J_τ u_{k−1}` and the studies
//! built on it.

use serde::Serialize;

use crate::energy::{self, EnergyReport, Truncation};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Field, Grid};
use crate::prox::{self, ProxOptions};

/// Radius of the measure ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum CStar {
    /// `2 φ(u⁰) + 1`
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    pub t_final: f64,
    pub n_steps: usize,
    /// Solver settings; the step size is always `t_final / n_steps`.
    pub prox: ProxOptions,
    /// Keep every `snapshot_stride`-th state. The initial and final states
    /// are always kept.
    pub snapshot_stride: usize,
    pub c_star: CStar,
}

impl FlowConfig {
    pub fn new(t_final: f64, n_steps: usize) -> Self {
        Self {
            t_final,
            n_steps,
            prox: ProxOptions::new(t_final / n_steps.max(1) as f64),
            snapshot_stride: 1,
            c_star: CStar::Auto,
        }
    }

    pub fn with_policy(mut self, policy: Truncation) -> Self {
        self.prox.policy = policy;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::Precondition("t_final must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Precondition("n_steps must be at least 1".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Precondition("snapshot_stride must be at least 1".into()));
        }
        if let CStar::Value(c) = self.c_star {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Precondition("c_star must be positive".into()));
            }
        }
        self.step_options().validate()
    }

    fn step_options(&self) -> ProxOptions {
        let mut opts = self.prox.clone();
        opts.tau = self.tau();
        opts.c_star = None;
        opts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowFlag {
    Clamp { step: usize, count: usize },
    NonConvergence { step: usize, grad_norm: f64 },
    RoundingLimited { step: usize, grad_norm: f64 },
}

/// Everything recorded along one run. Per-step vectors are indexed by step
/// and start with the initial state at step 0 (zero displacement, no solver
/// work).
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub grid: Grid,
    pub tau: f64,
    pub policy: Truncation,
    pub c_star: f64,
    pub times: Vec<f64>,
    pub reports: Vec<EnergyReport>,
    pub displacements: Vec<f64>,
    pub ut_norms: Vec<f64>,
    pub pde_residuals: Vec<f64>,
    pub newton_iters: Vec<usize>,
    pub cg_iters: Vec<usize>,
    pub grad_tols: Vec<f64>,
    pub snapshots: Vec<(usize, Field)>,
    pub flags: Vec<FlowFlag>,
}

impl FlowTrace {
    fn start(u0: &Field, tau: f64, policy: Truncation, c_star: f64) -> Self {
        let report = EnergyReport::of(u0, policy);
        let mut flags = Vec::new();
        if report.clamp_events > 0 {
            flags.push(FlowFlag::Clamp {
                step: 0,
                count: report.clamp_events,
            });
        }
        Self {
            grid: *u0.grid(),
            tau,
            policy,
            c_star,
            times: vec![0.0],
            reports: vec![report],
            displacements: vec![0.0],
            ut_norms: vec![0.0],
            pde_residuals: vec![0.0],
            newton_iters: vec![0],
            cg_iters: vec![0],
            grad_tols: vec![0.0],
            snapshots: vec![(0, u0.clone())],
            flags,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.reports.len() - 1
    }

    pub fn initial(&self) -> &Field {
        &self.snapshots[0].1
    }

    /// Last stored state; after a completed run this is `u_n`.
    pub fn last(&self) -> &Field {
        &self.snapshots.last().expect("trace always holds u0").1
    }

    pub fn snapshot(&self, step: usize) -> Option<&Field> {
        self.snapshots
            .binary_search_by_key(&step, |(k, _)| *k)
            .ok()
            .map(|i| &self.snapshots[i].1)
    }

    /// Whether every state is stored.
    pub fn is_dense(&self) -> bool {
        self.snapshots.len() == self.reports.len()
    }

    pub fn max_grad_tol(&self) -> f64 {
        self.grad_tols.iter().copied().fold(0.0, f64::max)
    }
}

/// Runs `n_steps` resolvent steps from `u0`.
pub fn evolve(u0: &Field, cfg: &FlowConfig) -> Result<FlowTrace> {
    cfg.validate()?;
    if !(u0.is_mean_zero() || u0.check_mean_zero(1e-10)) {
        return Err(Error::Precondition(format!(
            "initial state must be mean-zero (mean {:e})",
            u0.mean()
        )));
    }
    let policy = cfg.prox.policy;
    let phi0 = energy::phi(u0, policy);
    if !phi0.is_finite() {
        return Err(Error::Precondition("phi(u0) is not finite".into()));
    }
    let c_star = match cfg.c_star {
        CStar::Auto => energy::auto_c_star(u0, policy),
        CStar::Value(c) => c,
    };
    let opts = cfg.step_options();
    let tau = opts.tau;
    let mut trace = FlowTrace::start(u0, tau, policy, c_star);
    let mut u = u0.clone();
    for step in 1..=cfg.n_steps {
        let r = prox::prox_step(&u, &opts)?;
        if !r.converged() {
            trace.flags.push(FlowFlag::NonConvergence {
                step,
                grad_norm: r.final_grad_norm,
            });
            trace.snapshots.push((step - 1, u.clone()));
            trace.snapshots.dedup_by_key(|(k, _)| *k);
            return Err(Error::NonConvergence {
                step,
                grad_norm: r.final_grad_norm,
                trace: Box::new(trace),
            });
        }
        if r.rounding_limited {
            trace.flags.push(FlowFlag::RoundingLimited {
                step,
                grad_norm: r.final_grad_norm,
            });
        }
        let report = EnergyReport::of(&r.v, policy);
        let residual = prox::strong_residual(&u, &r.v, tau, policy)?;
        if report.clamp_events > 0 {
            trace.flags.push(FlowFlag::Clamp {
                step,
                count: report.clamp_events,
            });
        }
        trace.times.push(step as f64 * tau);
        trace.displacements.push(r.displacement);
        trace.ut_norms.push(r.displacement / tau);
        trace.pde_residuals.push(residual);
        trace.newton_iters.push(r.newton_iters);
        trace.cg_iters.push(r.cg_iters_total);
        trace.grad_tols.push(r.grad_tol);
        let total = report.measure_total;
        trace.reports.push(report);
        u = r.v;
        if step % cfg.snapshot_stride == 0 || step == cfg.n_steps {
            trace.snapshots.push((step, u.clone()));
        }
        log::debug!(
            "step {step}: phi {:.12e} newton {} cg {}",
            trace.reports[step].phi,
            trace.newton_iters[step],
            trace.cg_iters[step]
        );
        // the ball is provably never reached; check after the fact
        if total > c_star {
            if trace.snapshots.last().map(|(k, _)| *k) != Some(step) {
                trace.snapshots.push((step, u.clone()));
            }
            return Err(Error::MeasureBound {
                step,
                total,
                c_star,
                trace: Box::new(trace),
            });
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub tau: f64,
    pub error: f64,
    pub bound_rhs: f64,
    /// `log2(error(τ) / error(τ/2))` against the next row, when it halves τ.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub t_final: f64,
    pub reference_steps: usize,
    pub slope_u0: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// τ-refinement against the same scheme run with 8× the finest step count.
pub fn convergence_study(
    u0: &Field,
    t_final: f64,
    steps_list: &[usize],
    prox: &ProxOptions,
) -> Result<ConvergenceTable> {
    if steps_list.is_empty() || steps_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("steps_list must be nonempty and increasing".into()));
    }
    let reference_steps = 8 * steps_list[steps_list.len() - 1];
    let mut jobs = steps_list.to_vec();
    jobs.push(reference_steps);
    let finals = exec::map_jobs(jobs, |n| {
        let mut cfg = FlowConfig::new(t_final, n).with_stride(n);
        cfg.prox = prox.clone();
        evolve(u0, &cfg).map(|t| t.last().clone())
    });
    let mut finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = finals.pop().expect("reference run");
    let slope_u0 = energy::metric_slope(u0, prox.policy);
    let mut rows: Vec<ConvergenceRow> = steps_list
        .iter()
        .zip(&finals)
        .map(|(&n, f)| {
            let tau = t_final / n as f64;
            Ok(ConvergenceRow {
                n_steps: n,
                tau,
                error: f.distance(&reference)?,
                bound_rhs: tau / std::f64::consts::SQRT_2 * slope_u0,
                order: None,
            })
        })
        .collect::<Result<_>>()?;
    for k in 0..rows.len().saturating_sub(1) {
        if rows[k + 1].n_steps == 2 * rows[k].n_steps && rows[k + 1].error > 0.0 && rows[k].error > 0.0 {
            rows[k].order = Some((rows[k].error / rows[k + 1].error).log2());
        }
    }
    Ok(ConvergenceTable {
        t_final,
        reference_steps,
        slope_u0,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct TwoFlow {
    pub first: FlowTrace,
    pub second: FlowTrace,
    /// `‖u_k − v_k‖` for k = 0..=n.
    pub distances: Vec<f64>,
}

/// Runs two flows side by side and records their distance at every step.
pub fn two_flow_run(u0: &Field, v0: &Field, cfg: &FlowConfig) -> Result<TwoFlow> {
    if u0.grid() != v0.grid() {
        return Err(Error::GridMismatch);
    }
    let dense = cfg.clone().with_stride(1);
    let (a, b) = exec::join(|| evolve(u0, &dense), || evolve(v0, &dense));
    let (first, second) = (a?, b?);
    let distances = first
        .snapshots
        .iter()
        .zip(&second.snapshots)
        .map(|((_, x), (_, y))| x.distance(y))
        .collect::<Result<_>>()?;
    Ok(TwoFlow {
        first,
        second,
        distances,
    })
}
