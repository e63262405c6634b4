//! Checks of the inequalities the gradient-flow theory guarantees, evaluated
//! on recorded traces.
//!
//! Every check is a pure function of its inputs. A violation is `lhs − rhs`
//! of the inequality in question (reported as 0 when it holds with margin),
//! and tolerances are an absolute floor tied to the solver tolerance plus a
//! relative factor times the size of the quantities involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{self, EnergyReport, Truncation};
use crate::flow::{FlowTrace, TwoFlow};
use crate::grid::Field;
use crate::prox;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckContext {
    pub dim: usize,
    pub n: usize,
    pub tau: f64,
    pub steps: usize,
    pub policy: Truncation,
    /// Step of the largest violation.
    pub worst_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// False for diagnostics that are logged but do not decide the outcome.
    pub enforced: bool,
    pub context: CheckContext,
}

impl CheckReport {
    /// Whether this report makes a battery fail.
    pub fn fails(&self) -> bool {
        self.enforced && !self.passed
    }
}

/// Running maximum of `lhs − rhs` and of the magnitudes involved.
struct Worst {
    violation: f64,
    step: Option<usize>,
    scale: f64,
}

impl Worst {
    fn new() -> Self {
        Self {
            violation: f64::NEG_INFINITY,
            step: None,
            scale: 0.0,
        }
    }

    fn push(&mut self, step: usize, lhs: f64, rhs: f64) {
        let v = lhs - rhs;
        // NaN counts as an infinite violation
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > self.violation {
            self.violation = v;
            self.step = Some(step);
        }
        self.scale = self.scale.max(lhs.abs()).max(rhs.abs());
    }

    fn report(self, name: &str, trace: &FlowTrace, tolerance: f64, enforced: bool) -> CheckReport {
        let ctx = context(trace, self.step);
        self.report_in(name, ctx, tolerance, enforced)
    }

    fn report_in(self, name: &str, context: CheckContext, tolerance: f64, enforced: bool) -> CheckReport {
        let max_violation = self.violation.max(0.0);
        CheckReport {
            name: name.to_string(),
            max_violation,
            tolerance,
            passed: max_violation <= tolerance,
            enforced,
            context,
        }
    }
}

fn context(trace: &FlowTrace, worst_step: Option<usize>) -> CheckContext {
    CheckContext {
        dim: trace.grid.dim(),
        n: trace.grid.n(),
        tau: trace.tau,
        steps: trace.steps(),
        policy: trace.policy,
        worst_step,
    }
}

fn slack(trace: &FlowTrace) -> f64 {
    10.0 * trace.max_grad_tol()
}

/// Consecutive stored states `(a, u_a), (b, u_b)`.
fn stored_pairs(trace: &FlowTrace) -> impl Iterator<Item = (usize, &Field, usize, &Field)> {
    trace
        .snapshots
        .windows(2)
        .map(|w| (w[0].0, &w[0].1, w[1].0, &w[1].1))
}

/// `(‖b − w‖² − ‖a − w‖²)` as `⟨b − a, b + a − 2w⟩`, free of cancellation.
fn distance_change(a: &Field, b: &Field, w: &Field) -> f64 {
    let (x, y, z) = (a.values(), b.values(), w.values());
    a.grid().cell_volume() * (0..x.len()).map(|i| (y[i] - x[i]) * (y[i] + x[i] - 2.0 * z[i])).sum::<f64>()
}

fn feasible<'a>(trace: &FlowTrace, tests: &'a [Field]) -> Vec<&'a Field> {
    tests
        .iter()
        .filter(|w| energy::psi(w, trace.c_star) == energy::Psi::Zero)
        .collect()
}

/// One-step variational inequality
/// `(‖u_k − w‖² − ‖u_{k−1} − w‖²)/(2τ) ≤ φ(w) − φ(u_k)`, summed over the
/// steps between stored states. Tolerance `10·grad_tol·max‖u_k − w‖`, times
/// the widest gap between stored states.
pub fn check_evi(trace: &FlowTrace, tests: &[Field]) -> CheckReport {
    let mut worst = Worst::new();
    let mut dist = 0.0f64;
    let mut gap = 1usize;
    for w in feasible(trace, tests) {
        let phi_w = energy::phi(w, trace.policy);
        for (_, u) in &trace.snapshots {
            dist = dist.max(u.distance(w).expect("same grid"));
        }
        for (a, ua, b, ub) in stored_pairs(trace) {
            gap = gap.max(b - a);
            let lhs = distance_change(ua, ub, w) / (2.0 * trace.tau);
            let rhs: f64 = (a + 1..=b).map(|k| phi_w - trace.reports[k].phi).sum();
            worst.push(b, lhs, rhs);
        }
    }
    worst.report("evi", trace, slack(trace) * dist.max(1e-300) * gap as f64, true)
}

/// Exact discrete dissipation `φ(u_k) + ‖u_k − u_{k−1}‖²/(2τ) ≤ φ(u_{k−1})`,
/// per step, with slack `10·grad_tol`.
pub fn check_dissipation(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    for k in 1..=trace.steps() {
        let d = match (trace.snapshot(k - 1), trace.snapshot(k)) {
            (Some(a), Some(b)) => a.distance(b).expect("same grid"),
            _ => trace.displacements[k],
        };
        let lhs = trace.reports[k].phi + d * d / (2.0 * trace.tau);
        worst.push(k, lhs, trace.reports[k - 1].phi);
    }
    worst.report("dissipation", trace, slack(trace), true)
}

/// `φ(u_k) ≤ φ(u_{k−1})` and `E(u_k) ≤ E(u⁰)`. The second is a diagnostic on
/// truncated runs.
pub fn check_dissipation_pair(trace: &FlowTrace) -> Vec<CheckReport> {
    let mut phi = Worst::new();
    let mut e = Worst::new();
    let e0 = trace.reports[0].dissipation_e;
    for k in 1..=trace.steps() {
        phi.push(k, trace.reports[k].phi, trace.reports[k - 1].phi);
        e.push(k, trace.reports[k].dissipation_e, e0);
    }
    let e_tol = 1e-6 * e.scale + slack(trace);
    vec![
        phi.report("phi_monotone", trace, slack(trace), true),
        e.report("dissipation_e_bound", trace, e_tol, trace.policy.is_none()),
    ]
}

/// `‖u_k − u_{k−1}‖` nonincreasing (the discrete form of `E(u(t))`
/// decreasing). A diagnostic on truncated runs.
pub fn check_ut_monotone(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    for k in 2..=trace.steps() {
        worst.push(k, trace.ut_norms[k], trace.ut_norms[k - 1]);
    }
    let tol = 1e-6 * worst.scale + slack(trace);
    worst.report("ut_monotone", trace, tol, trace.policy.is_none())
}

/// `max_k ‖u_t‖ ≤ |∂φ|(u⁰)·(1 + 10⁻⁶)`.
pub fn check_ut_bound(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    let s0 = trace.reports[0].slope;
    for k in 1..=trace.steps() {
        worst.push(k, trace.ut_norms[k], s0);
    }
    worst.report("ut_bound", trace, 1e-6 * s0, true)
}

/// `Σ τ(½‖u_t‖² + ½|∂φ|²(u_k)) ≤ φ(u⁰) − φ(u_n) + n·slack`, the integrated
/// maximal-slope inequality. A diagnostic on truncated runs, where the
/// reported slope is one-sided at the kink.
pub fn check_max_slope_budget(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    let tau = trace.tau;
    let mut spent = 0.0;
    for k in 1..=trace.steps() {
        let r = &trace.reports[k];
        spent += tau * 0.5 * (trace.ut_norms[k].powi(2) + r.slope.powi(2));
        worst.push(k, spent, trace.reports[0].phi - r.phi);
    }
    let tol = trace.steps() as f64 * slack(trace);
    worst.report("max_slope_budget", trace, tol, trace.policy.is_none())
}

/// Regularization estimates with the flat minimizer `ū = 0`:
/// `φ(u_k) ≤ φ(w) + ‖w − u⁰‖²/(2t_k)`, `|∂φ|(u_k) ≤ ‖u⁰‖/t_k`,
/// `φ(u_k) − |Ω| ≤ ‖u⁰‖²/(2t_k)`, `‖u_k‖` nonincreasing, and
/// `|∂φ|²(u_k) ≤ |∂φ|²(w) + ‖w − u⁰‖²/t_k²`. Tolerance `10⁻⁶·scale`.
pub fn check_regularization(trace: &FlowTrace, tests: &[Field]) -> Vec<CheckReport> {
    let u0 = trace.initial();
    let norm0 = u0.norm();
    let omega = trace.grid.volume();
    let enforced = trace.policy.is_none();
    let tests = feasible(trace, tests);
    let probes: Vec<(f64, f64, f64)> = tests
        .iter()
        .map(|w| {
            let d = w.distance(u0).expect("same grid");
            (energy::phi(w, trace.policy), energy::metric_slope(w, trace.policy), d)
        })
        .collect();

    let mut phi_dec = Worst::new();
    let mut slope_asym = Worst::new();
    let mut energy_asym = Worst::new();
    let mut dphi_dec = Worst::new();
    for k in 1..=trace.steps() {
        let t = trace.times[k];
        let r = &trace.reports[k];
        for &(phi_w, slope_w, d) in &probes {
            phi_dec.push(k, r.phi, phi_w + d * d / (2.0 * t));
            dphi_dec.push(k, r.slope * r.slope, slope_w * slope_w + d * d / (t * t));
        }
        slope_asym.push(k, r.slope, norm0 / t);
        energy_asym.push(k, r.phi - omega, norm0 * norm0 / (2.0 * t));
    }
    let mut monotone = Worst::new();
    for (_, ua, b, ub) in stored_pairs(trace) {
        monotone.push(b, ub.norm(), ua.norm());
    }
    let floor = slack(trace);
    let tol = |w: &Worst| 1e-6 * w.scale + floor;
    let t1 = tol(&phi_dec);
    let t2 = tol(&slope_asym);
    let t3 = tol(&energy_asym);
    let t4 = tol(&monotone);
    let t5 = tol(&dphi_dec);
    vec![
        phi_dec.report("regularization_phi", trace, t1, true),
        slope_asym.report("regularization_slope", trace, t2, enforced),
        energy_asym.report("regularization_energy", trace, t3, true),
        monotone.report("regularization_monotone_norm", trace, t4, true),
        dphi_dec.report("regularization_slope_squared", trace, t5, enforced),
    ]
}

/// `‖(u_k − u_{k−1})/τ − Δ_h flux(Δ_h u_k)‖ ≤ grad_tol/τ`, recomputed from
/// stored consecutive states.
pub fn check_strong_residual(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    for (a, ua, b, ub) in stored_pairs(trace) {
        if b == a + 1 {
            let r = prox::strong_residual(ua, ub, trace.tau, trace.policy).expect("same grid");
            worst.push(b, r, 0.0);
        }
    }
    if worst.step.is_none() {
        // no consecutive pair stored: fall back to the per-step column
        for k in 1..=trace.steps() {
            worst.push(k, trace.pde_residuals[k], 0.0);
        }
    }
    worst.report("strong_residual", trace, trace.max_grad_tol() / trace.tau, true)
}

/// `|pos − neg| ≤ 10⁻¹⁰·total` for the Laplacian mass at every step.
pub fn check_mass_split(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    for (k, r) in trace.reports.iter().enumerate() {
        worst.push(k, (r.measure_pos - r.measure_neg).abs(), 1e-10 * r.measure_total);
    }
    worst.report("mass_split", trace, 0.0, true)
}

/// `|mean(u_k)| ≤ 10⁻¹²·‖u_k‖` on every stored state.
pub fn check_mean_conservation(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    for (k, u) in &trace.snapshots {
        worst.push(*k, u.mean().abs() - 1e-12 * u.norm(), 0.0);
    }
    worst.report("mean_conservation", trace, 0.0, true)
}

/// `‖Δ_h u_k‖ ≤ 2φ(u⁰) + 10⁻⁸` at every step.
pub fn check_measure_bound(trace: &FlowTrace) -> CheckReport {
    let mut worst = Worst::new();
    let bound = 2.0 * trace.reports[0].phi;
    for (k, r) in trace.reports.iter().enumerate() {
        worst.push(k, r.measure_total, bound);
    }
    worst.report("measure_bound", trace, 1e-8, true)
}

/// The truncation `L²` lemma on every stored state, with `μ = Δ_h u_k`,
/// `A = φ(u⁰)` (valid along the flow since φ decreases and dominates the
/// untruncated energy) and `N` the run's level, or `10·max(1, max Δ_h u⁰)`
/// without truncation. A failed hypothesis `∫exp(−μ) ≤ A` counts as a
/// violation.
pub fn check_truncation_l2(trace: &FlowTrace) -> CheckReport {
    let a = trace.reports[0].phi;
    let level = match trace.policy {
        Truncation::Level(n) => n,
        Truncation::None => Truncation::auto(trace.initial()).cap(),
    };
    let mut worst = Worst::new();
    let mut hypothesis: f64 = 0.0;
    for (k, u) in &trace.snapshots {
        let mu = trace.grid.laplacian(u).expect("own grid");
        let raw = trace.reports[*k].phi_raw;
        hypothesis = hypothesis.max(raw - a * (1.0 + 1e-12));
        let (lhs, rhs) = energy::truncation_l2_sides(&mu, level, a);
        worst.push(*k, lhs, rhs);
    }
    if hypothesis > 0.0 {
        worst.violation = worst.violation.max(hypothesis);
    }
    worst.report("truncation_l2", trace, 0.0, true)
}

/// Contraction `‖u_k − v_k‖ ≤ ‖u_{k−1} − v_{k−1}‖` within `10⁻¹⁰` relative,
/// and `‖u_k − v_k‖ ≤ ‖u⁰ − v⁰‖` throughout.
pub fn check_contraction(two: &TwoFlow) -> CheckReport {
    let d = &two.distances;
    let mut worst = Worst::new();
    for k in 1..d.len() {
        worst.push(k, d[k], d[k - 1]);
        worst.push(k, d[k], d[0]);
    }
    worst.report("contraction", &two.first, 1e-10 * d[0], true)
}

#[derive(Debug, Clone, Serialize)]
pub struct SingularityPoint {
    pub step: usize,
    pub time: f64,
    pub max_pos_laplacian: f64,
    pub excess_mass: f64,
    pub neg_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingularityReport {
    pub level: f64,
    pub series: Vec<SingularityPoint>,
    /// First step with positive mass above the level.
    pub onset: Option<usize>,
}

/// Mass of `Δ_h u` above `level` on every stored state.
pub fn singularity_report(trace: &FlowTrace, level: f64) -> SingularityReport {
    let policy = Truncation::Level(level);
    let series: Vec<SingularityPoint> = trace
        .snapshots
        .iter()
        .map(|(k, u)| {
            let r = EnergyReport::of(u, policy);
            SingularityPoint {
                step: *k,
                time: trace.times[*k],
                max_pos_laplacian: r.max_pos_laplacian,
                excess_mass: r.excess_mass,
                neg_min: r.min_laplacian.min(0.0),
            }
        })
        .collect();
    let onset = series.iter().find(|p| p.excess_mass > 0.0).map(|p| p.step);
    SingularityReport { level, series, onset }
}

/// Convexity of φ and τ⁻¹-convexity of the prox objective `Φ(τ, u; ·)`
/// along segments `a → b`, for each triple `(u, a, b)`, sampled at
/// `t ∈ {1/8, …, 7/8}`. Tolerance `10⁻¹⁰` times the largest objective value.
pub fn check_convexity(triples: &[(Field, Field, Field)], tau: f64, policy: Truncation) -> Vec<CheckReport> {
    let samples: Vec<f64> = (1..8).map(|i| i as f64 / 8.0).collect();
    let (mut phi_worst, mut prox_worst) = (Worst::new(), Worst::new());
    let mut grid = None;
    for (i, (u, a, b)) in triples.iter().enumerate() {
        grid = Some(*u.grid());
        let (fa, fb) = (energy::phi(a, policy), energy::phi(b, policy));
        for &t in &samples {
            let ft = energy::phi(&a.lincomb(1.0 - t, b, t).expect("same grid"), policy);
            phi_worst.push(i, ft, (1.0 - t) * fa + t * fb);
        }
        let gap = prox::tau_convexity_probe(u, a, b, tau, &samples, policy).expect("same grid");
        let opts = prox::ProxOptions::new(tau).with_policy(policy);
        let scale = prox::objective(u, a, &opts)
            .expect("same grid")
            .abs()
            .max(prox::objective(u, b, &opts).expect("same grid").abs());
        prox_worst.push(i, gap, 0.0);
        prox_worst.scale = prox_worst.scale.max(scale);
    }
    let ctx = |step| CheckContext {
        dim: grid.map_or(0, |g| g.dim()),
        n: grid.map_or(0, |g| g.n()),
        tau,
        steps: 0,
        policy,
        worst_step: step,
    };
    let (ps, qs) = (phi_worst.scale, prox_worst.scale);
    let (p_step, q_step) = (phi_worst.step, prox_worst.step);
    vec![
        phi_worst.report_in("phi_convexity", ctx(p_step), 1e-10 * ps, true),
        prox_worst.report_in("prox_tau_convexity", ctx(q_step), 1e-10 * qs, true),
    ]
}

/// Duality: `sup_{−1≤y≤0} ∫ (μy + y ln(−y) − y)`, maximized cell by cell,
/// equals `∫ exp(−μ)` within `10⁻⁸` relative, for each nonnegative density.
pub fn check_duality(densities: &[Field]) -> CheckReport {
    let mut worst = Worst::new();
    let mut grid = None;
    for (i, mu) in densities.iter().enumerate() {
        grid = Some(*mu.grid());
        let raw = energy::phi_from_laplacian(mu.grid(), mu.values(), f64::INFINITY);
        let dual = energy::dual_phi(mu);
        worst.push(i, (dual - raw).abs() / raw.abs().max(f64::MIN_POSITIVE), 0.0);
    }
    let ctx = CheckContext {
        dim: grid.map_or(0, |g| g.dim()),
        n: grid.map_or(0, |g| g.n()),
        tau: 0.0,
        steps: 0,
        policy: Truncation::None,
        worst_step: worst.step,
    };
    worst.report_in("duality", ctx, 1e-8, true)
}

/// All trace checks.
pub fn run_battery(trace: &FlowTrace, tests: &[Field]) -> Vec<CheckReport> {
    let mut out = vec![
        check_dissipation(trace),
        check_evi(trace, tests),
        check_strong_residual(trace),
        check_ut_bound(trace),
        check_ut_monotone(trace),
        check_max_slope_budget(trace),
        check_mass_split(trace),
        check_mean_conservation(trace),
        check_measure_bound(trace),
        check_truncation_l2(trace),
    ];
    out.extend(check_dissipation_pair(trace));
    out.extend(check_regularization(trace, tests));
    out
}

fn refresh_derived(trace: &mut FlowTrace) {
    let policy = trace.policy;
    let stored: Vec<(usize, Field)> = trace.snapshots.clone();
    for (k, u) in &stored {
        trace.reports[*k] = EnergyReport::of(u, policy);
    }
    for w in stored.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if b == a + 1 {
            let d = w[0].1.distance(&w[1].1).expect("same grid");
            trace.displacements[b] = d;
            trace.ut_norms[b] = d / trace.tau;
        }
    }
}

/// Negative control: adds mean-zero cellwise noise of size `amplitude` to
/// every stored state after the first and recomputes the diagnostics.
pub fn corrupt_with_noise(trace: &FlowTrace, amplitude: f64, seed: u64) -> FlowTrace {
    let mut out = trace.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, u) in out.snapshots.iter_mut() {
        if *k == 0 {
            continue;
        }
        let noisy: Vec<f64> = u.values().iter().map(|x| x + amplitude * rng.gen_range(-1.0..1.0)).collect();
        *u = Field::new(*u.grid(), noisy).expect("finite").mean_zero_project();
    }
    refresh_derived(&mut out);
    out
}

/// Negative control for the mass split: the last report is replaced by that
/// of a one-signed density, which no Laplacian can produce.
pub fn corrupt_mass_split(trace: &FlowTrace) -> FlowTrace {
    let mut out = trace.clone();
    let cells = trace.grid.cells();
    let density: Vec<f64> = (0..cells).map(|i| 1.0 + (i % 3) as f64).collect();
    let last = out.reports.len() - 1;
    out.reports[last] = EnergyReport::from_laplacian(&trace.grid, &density, trace.policy);
    out
}

/// Negative control for mean conservation: shifts the last stored state.
pub fn corrupt_mean(trace: &FlowTrace, shift: f64) -> FlowTrace {
    let mut out = trace.clone();
    if let Some((_, u)) = out.snapshots.last_mut() {
        let shifted: Vec<f64> = u.values().iter().map(|x| x + shift).collect();
        *u = Field::new(*u.grid(), shifted).expect("finite");
    }
    out
}
