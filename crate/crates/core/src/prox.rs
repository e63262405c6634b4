//! The resolvent: one minimizing-movement step.
//!
//! Minimizes `Φ(v) = φ(v) + ‖v − u‖² / (2τ)` over mean-zero fields with a
//! damped Newton method whose linear systems are solved matrix-free by
//! Jacobi-preconditioned conjugate gradients. With `s = L v` the gradient is
//!
//! ```text
//! ∇Φ(v) = (v − u)/τ − L flux(s),        flux(s) = exp(−s)·[s < N]
//! ∇²Φ(v) = I/τ + L diag(flux(s)) L
//! ```
//!
//! and both live in the mean-zero subspace, where the Hessian is SPD.

use serde::Serialize;

use crate::energy::{self, Psi, Truncation};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{project_mean_zero, Field, Grid};

mod dual;

pub use dual::{kink_band, residual_norm, select_flux};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxOptions {
    pub tau: f64,
    /// Absolute gradient tolerance; `None` means `1e-10 · max(1, ‖u‖)`.
    pub grad_tol: Option<f64>,
    pub max_newton: usize,
    /// `None` means `10 · n^dim`.
    pub max_cg: Option<usize>,
    pub policy: Truncation,
    pub line_search: LineSearch,
    /// Radius of the measure ball; `None` disables the indicator.
    pub c_star: Option<f64>,
}

impl ProxOptions {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            grad_tol: None,
            max_newton: 50,
            max_cg: None,
            policy: Truncation::None,
            line_search: LineSearch::default(),
            c_star: None,
        }
    }

    pub fn with_policy(mut self, policy: Truncation) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = Some(tol);
        self
    }

    pub fn grad_tol_for(&self, u: &Field) -> f64 {
        self.grad_tol.unwrap_or_else(|| 1e-10 * u.norm().max(1.0))
    }

    pub fn max_cg_for(&self, grid: &Grid) -> usize {
        self.max_cg.unwrap_or(10 * grid.cells())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Precondition(what.to_string()));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if let Some(t) = self.grad_tol {
            if !(t.is_finite() && t > 0.0) {
                return bad("grad_tol must be positive");
            }
        }
        if self.max_newton == 0 {
            return bad("max_newton must be positive");
        }
        if self.max_cg == Some(0) {
            return bad("max_cg must be positive");
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0 && ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return bad("line search parameters must lie in (0, 1)");
        }
        if let Some(c) = self.c_star {
            if !(c > 0.0) {
                return bad("c_star must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProxStatus {
    Converged,
    NonConvergence,
}

#[derive(Debug, Clone)]
pub struct ProxResult {
    pub v: Field,
    pub newton_iters: usize,
    pub cg_iters_total: usize,
    pub final_grad_norm: f64,
    /// Tolerance the certificate was checked against.
    pub grad_tol: f64,
    /// Φ(τ, u; v), `+inf` when the measure ball is violated.
    pub objective: f64,
    /// Largest violation of the one-step variational inequality over a
    /// fixed battery of test fields.
    pub evi_gap: f64,
    pub displacement: f64,
    pub status: ProxStatus,
    /// Exponent-guard firings observed at the returned iterate.
    pub clamp_events: usize,
    /// Number of Newton iterations that fell back to steepest descent.
    pub fallback_steps: usize,
    /// The gradient stalled below the floating-point accuracy of its own
    /// evaluation before reaching the requested tolerance; `grad_tol` then
    /// holds the attained norm.
    pub rounding_limited: bool,
}

impl ProxResult {
    pub fn converged(&self) -> bool {
        self.status == ProxStatus::Converged
    }
}

/// Work buffers for one resolvent solve.
struct Newton<'a> {
    grid: Grid,
    u: &'a [f64],
    tau: f64,
    cap: f64,
    cv: f64,
    v: Vec<f64>,
    lap_v: Vec<f64>,
    flux: Vec<f64>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Newton<'a> {
    fn new(grid: Grid, u: &'a [f64], v0: Vec<f64>, tau: f64, cap: f64) -> Self {
        let len = u.len();
        Self {
            grid,
            u,
            tau,
            cap,
            cv: grid.cell_volume(),
            v: v0,
            lap_v: vec![0.0; len],
            flux: vec![0.0; len],
            grad: vec![0.0; len],
            scratch: vec![0.0; len],
        }
    }

    fn h_norm(&self, x: &[f64]) -> f64 {
        (self.cv * exec::dot(x, x)).sqrt()
    }

    /// Φ at `v` given its Laplacian.
    fn objective_at(&self, v: &[f64], lap: &[f64]) -> f64 {
        let u = self.u;
        let dist2 = self.cv * exec::sum_by(v.len(), |i| (v[i] - u[i]).powi(2));
        energy::phi_from_laplacian(&self.grid, lap, self.cap) + dist2 / (2.0 * self.tau)
    }

    /// Refreshes `lap_v`, `flux`, `grad` at the current `v`; returns ‖∇Φ‖.
    fn refresh(&mut self) -> f64 {
        self.grid.laplacian_into(&self.v, &mut self.lap_v);
        energy::flux_into(&self.lap_v, self.cap, &mut self.flux);
        self.grid.laplacian_into(&self.flux, &mut self.scratch);
        let (u, v, lf, tau) = (self.u, &self.v, &self.scratch, self.tau);
        exec::fill(&mut self.grad, |i| (v[i] - u[i]) / tau - lf[i]);
        project_mean_zero(&mut self.grad);
        self.h_norm(&self.grad)
    }

    /// Forward-error bound for evaluating the gradient at `v` in floating
    /// point: below this, ‖∇Φ‖ carries no information.
    fn rounding_floor(&self) -> f64 {
        let len = self.v.len();
        let k = 4.0 * self.grid.dim() as f64 / (self.grid.h() * self.grid.h());
        // |L| x ≤ L x + k x for x ≥ 0
        let abs_apply = |x: &[f64], out: &mut [f64]| {
            self.grid.laplacian_into(x, out);
            exec::update(out, |i, y| y + k * x[i]);
        };
        let abs_v: Vec<f64> = self.v.iter().map(|x| x.abs()).collect();
        let mut lv = vec![0.0; len];
        abs_apply(&abs_v, &mut lv);
        let w: Vec<f64> = (0..len).map(|i| self.flux[i] * (1.0 + lv[i])).collect();
        let mut lw = vec![0.0; len];
        abs_apply(&w, &mut lw);
        let (u, v, tau) = (self.u, &self.v, self.tau);
        let e: Vec<f64> = (0..len)
            .map(|i| f64::EPSILON * ((v[i].abs() + u[i].abs()) / tau + lw[i]))
            .collect();
        self.h_norm(&e)
    }

    /// `out = (I/τ + L diag(flux) L) p`, projected.
    fn hessian_apply(&self, p: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.grid.laplacian_into(p, tmp);
        let w = &self.flux;
        exec::update(tmp, |i, x| x * w[i]);
        self.grid.laplacian_into(tmp, out);
        let tau = self.tau;
        exec::update(out, |i, x| x + p[i] / tau);
        project_mean_zero(out);
    }

    /// PCG for `H x = −grad`; returns (x, iterations).
    fn solve_direction(&self, target: f64, max_cg: usize) -> (Vec<f64>, usize) {
        let len = self.v.len();
        let mut diag = vec![0.0; len];
        self.grid.weighted_biharmonic_diag(&self.flux, &mut diag);
        let inv_tau = 1.0 / self.tau;
        exec::update(&mut diag, |_, d| d + inv_tau);

        let mut x = vec![0.0; len];
        let mut r: Vec<f64> = self.grad.iter().map(|g| -g).collect();
        let mut z = vec![0.0; len];
        exec::fill(&mut z, |i| r[i] / diag[i]);
        project_mean_zero(&mut z);
        let mut p = z.clone();
        let mut q = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        let mut rz = exec::dot(&r, &z);
        let mut iters = 0;
        while iters < max_cg {
            if self.h_norm(&r) <= target {
                break;
            }
            self.hessian_apply(&p, &mut tmp, &mut q);
            iters += 1;
            let pq = exec::dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            exec::update(&mut x, |i, xi| xi + alpha * p[i]);
            exec::update(&mut r, |i, ri| ri - alpha * q[i]);
            exec::fill(&mut z, |i| r[i] / diag[i]);
            project_mean_zero(&mut z);
            let rz_new = exec::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            exec::update(&mut p, |i, pi| z[i] + beta * pi);
        }
        (x, iters)
    }

    /// Backtracking along `dir`. Returns true when a step was taken; on
    /// success `v`, `lap_v`, `flux`, `grad` describe the new iterate.
    fn line_search(&mut self, dir: &[f64], ls: &LineSearch, grad_norm: f64) -> bool {
        let len = dir.len();
        let mut lap_dir = vec![0.0; len];
        self.grid.laplacian_into(dir, &mut lap_dir);
        let slope = self.cv * exec::dot(&self.grad, dir);
        if !(slope < 0.0) {
            return false;
        }
        let phi0 = self.objective_at(&self.v, &self.lap_v);
        // Below this predicted decrease Φ differences drown in rounding and
        // the gradient norm is the only reliable merit function.
        let rounding_regime = slope.abs() <= 1e-11 * (1.0 + phi0.abs());
        let v_old = self.v.clone();
        let mut trial_lap = vec![0.0; len];
        let mut alpha = 1.0;
        for _ in 0..=ls.max_backtracks {
            if rounding_regime {
                exec::fill(&mut self.v, |i| v_old[i] + alpha * dir[i]);
                if self.refresh() < grad_norm {
                    return true;
                }
            } else {
                let lap_v = &self.lap_v;
                exec::fill(&mut trial_lap, |i| lap_v[i] + alpha * lap_dir[i]);
                let mut trial = vec![0.0; len];
                exec::fill(&mut trial, |i| v_old[i] + alpha * dir[i]);
                let phi1 = self.objective_at(&trial, &trial_lap);
                if phi1 <= phi0 + ls.sufficient_decrease * alpha * slope {
                    self.v = trial;
                    self.refresh();
                    return true;
                }
            }
            alpha *= ls.shrink;
        }
        self.v = v_old;
        self.refresh();
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    newton_iters: usize,
    cg_iters: usize,
    fallback_steps: usize,
}

impl Stats {
    fn absorb(&mut self, other: &Stats) {
        self.newton_iters += other.newton_iters;
        self.cg_iters += other.cg_iters;
        self.fallback_steps += other.fallback_steps;
    }
}

impl<'a> Newton<'a> {
    /// Damped inexact Newton from the current `v`, for at most `budget`
    /// iterations. With `stop_on_stall` it also gives up once the gradient
    /// has not halved over five iterations.
    fn run(&mut self, opts: &ProxOptions, grad_tol: f64, max_cg: usize, budget: usize, stop_on_stall: bool) -> Stats {
        let mut stats = Stats::default();
        let mut grad_norm = self.refresh();
        let g0 = grad_norm.max(f64::MIN_POSITIVE);
        let mut history = vec![grad_norm];
        while grad_norm > grad_tol && stats.newton_iters < budget {
            let h = history.len();
            if h > 8 && grad_norm > 0.5 * history[h - 6] {
                // With a cap, cells pinned at the kink keep the one-sided
                // gradient away from zero and the caller switches to the
                // dual. Without one, a stall below the rounding floor ends
                // the solve.
                if stop_on_stall || grad_norm <= self.rounding_floor() {
                    break;
                }
            }
            stats.newton_iters += 1;
            let eta = (grad_norm / g0).sqrt().min(1e-2);
            let target = (eta * grad_norm).max(1e-2 * grad_tol);
            let (dir, its) = self.solve_direction(target, max_cg);
            stats.cg_iters += its;
            if !self.line_search(&dir, &opts.line_search, grad_norm) {
                // Fallback: Cauchy-scaled steepest descent, then resume Newton.
                stats.fallback_steps += 1;
                let len = dir.len();
                let mut hg = vec![0.0; len];
                let mut tmp = vec![0.0; len];
                self.hessian_apply(&self.grad, &mut tmp, &mut hg);
                let gg = exec::dot(&self.grad, &self.grad);
                let ghg = exec::dot(&self.grad, &hg);
                let scale = if ghg > 0.0 { gg / ghg } else { opts.tau };
                let sd: Vec<f64> = self.grad.iter().map(|g| -scale * g).collect();
                if !self.line_search(&sd, &opts.line_search, grad_norm) {
                    log::debug!("resolvent stalled at gradient norm {grad_norm:e}");
                    break;
                }
            }
            grad_norm = self.h_norm(&self.grad);
            history.push(grad_norm);
        }
        stats
    }

    /// Optimality certificate at the current `v`: the gradient norm, or with
    /// a cap the smaller kink-aware subgradient residual.
    fn certificate(&self, truncated: bool) -> f64 {
        let g = self.h_norm(&self.grad);
        if !truncated {
            return g;
        }
        let mut sel = vec![0.0; self.v.len()];
        dual::select_flux(&self.lap_v, self.cap, &self.flux, &mut sel);
        g.min(dual::residual_norm(&self.grid, self.u, &self.v, self.tau, &sel))
    }
}

fn require_mean_zero(f: &Field, what: &str) -> Result<()> {
    if f.is_mean_zero() || f.check_mean_zero(1e-10) {
        Ok(())
    } else {
        Err(Error::Precondition(format!("{what} must be mean-zero (mean {:e})", f.mean())))
    }
}

/// One resolvent step `J_τ u`, starting Newton from `u`.
pub fn prox_step(u: &Field, opts: &ProxOptions) -> Result<ProxResult> {
    prox_step_from(u, u, opts)
}

/// One resolvent step started from an arbitrary mean-zero guess.
pub fn prox_step_from(u: &Field, guess: &Field, opts: &ProxOptions) -> Result<ProxResult> {
    opts.validate()?;
    require_mean_zero(u, "u")?;
    require_mean_zero(guess, "initial guess")?;
    let grid = *u.grid();
    if *guess.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if let Some(c) = opts.c_star {
        if energy::psi(u, c) == Psi::Infinite {
            return Err(Error::Precondition("u lies outside the measure ball".into()));
        }
    }
    let grad_tol = opts.grad_tol_for(u);
    let max_cg = opts.max_cg_for(&grid);
    let mut v0 = guess.values().to_vec();
    project_mean_zero(&mut v0);
    let mut nt = Newton::new(grid, u.values(), v0, opts.tau, opts.policy.cap());

    let truncated = !opts.policy.is_none();
    let mut stats = nt.run(opts, grad_tol, max_cg, opts.max_newton, truncated);
    let mut grad_norm = nt.certificate(truncated);
    let mut floor = 0.0f64;
    if truncated && grad_norm > grad_tol {
        let out = dual::solve(
            grid,
            u.values(),
            nt.flux.clone(),
            opts.tau,
            nt.cap,
            grad_tol,
            opts.max_newton,
            max_cg,
            &opts.line_search,
        );
        stats.newton_iters += out.iterations;
        stats.cg_iters += out.cg_iterations;
        if out.certificate < grad_norm {
            grad_norm = out.certificate;
            floor = floor.max(out.floor);
            nt.v = out.v;
            nt.refresh();
            if grad_norm > grad_tol {
                // The dual stagnates once its objective is flat to rounding,
                // while primal Newton converges fast near the solution unless
                // cells sit on the kink; keep whichever certifies better.
                let dual_v = nt.v.clone();
                let polish = nt.run(opts, grad_tol, max_cg, 10, false);
                stats.absorb(&polish);
                let polished = nt.certificate(true);
                if polished < grad_norm {
                    grad_norm = polished;
                } else {
                    nt.v = dual_v;
                    nt.refresh();
                }
            }
        }
    }
    let Stats {
        newton_iters,
        cg_iters: cg_total,
        fallback_steps,
    } = stats;

    let floor = floor.max(nt.rounding_floor());
    let rounding_limited = grad_norm > grad_tol && grad_norm <= floor;
    if rounding_limited {
        log::debug!("resolvent limited by rounding: gradient {grad_norm:e}, floor {floor:e}, tolerance {grad_tol:e}");
    }
    let status = if grad_norm <= grad_tol || rounding_limited {
        ProxStatus::Converged
    } else {
        ProxStatus::NonConvergence
    };
    let grad_tol = if rounding_limited { grad_norm } else { grad_tol };
    let clamp_events = energy::count_clamps(&nt.lap_v, nt.cap);
    let v = Field::from_parts(grid, nt.v, true);
    let displacement = v.distance(u)?;
    let obj = objective(u, &v, opts)?;
    let gap = evi_gap(u, &v, opts.tau, opts.policy)?;
    Ok(ProxResult {
        v,
        newton_iters,
        cg_iters_total: cg_total,
        final_grad_norm: grad_norm,
        grad_tol,
        objective: obj,
        evi_gap: gap,
        displacement,
        status,
        clamp_events,
        fallback_steps,
        rounding_limited,
    })
}

/// Φ(τ, u; v) = (φ + ψ)(v) + ‖u − v‖²/(2τ); `+inf` outside the measure ball.
pub fn objective(u: &Field, v: &Field, opts: &ProxOptions) -> Result<f64> {
    if let Some(c) = opts.c_star {
        if energy::psi(v, c) == Psi::Infinite {
            return Ok(f64::INFINITY);
        }
    }
    let d = v.distance(u)?;
    Ok(energy::phi(v, opts.policy) + d * d / (2.0 * opts.tau))
}

/// ∇Φ(τ, u; v) in the discrete L² inner product.
pub fn gradient(u: &Field, v: &Field, opts: &ProxOptions) -> Result<Field> {
    let grid = *u.grid();
    if *v.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mut nt = Newton::new(grid, u.values(), v.values().to_vec(), opts.tau, opts.policy.cap());
    nt.refresh();
    Ok(Field::from_parts(grid, nt.grad, true))
}

/// Strong residual `‖(v − u)/τ − L ξ‖` of the implicit step `u → v`, with
/// `ξ = flux(L v)` off the kink and, on cells with `L v` at the cap, the
/// selection in `[0, e^{−N}]` that minimizes the residual.
pub fn strong_residual(u: &Field, v: &Field, tau: f64, policy: Truncation) -> Result<f64> {
    let grid = *u.grid();
    if *v.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let cap = policy.cap();
    let len = grid.cells();
    let (uv, vv) = (u.values(), v.values());
    let mut s = vec![0.0; len];
    grid.laplacian_into(vv, &mut s);
    let mut xi = vec![0.0; len];
    energy::flux_into(&s, cap, &mut xi);
    let band = kink_band(cap);
    let kink: Vec<usize> = (0..len).filter(|&i| cap.is_finite() && (s[i] - cap).abs() <= band).collect();
    if kink.is_empty() {
        return Ok(residual_norm(&grid, uv, vv, tau, &xi));
    }
    // projected gradient on the kink cells for min ‖P b − L ξ‖²
    let top = (-cap).exp();
    for &i in &kink {
        xi[i] = top;
    }
    let mut b = vec![0.0; len];
    exec::fill(&mut b, |i| (vv[i] - uv[i]) / tau);
    project_mean_zero(&mut b);
    let lmax = 4.0 * grid.dim() as f64 / (grid.h() * grid.h());
    let step = 1.0 / (lmax * lmax);
    let mut lx = vec![0.0; len];
    let mut r = vec![0.0; len];
    let mut g = vec![0.0; len];
    for _ in 0..2000 {
        grid.laplacian_into(&xi, &mut lx);
        exec::fill(&mut r, |i| b[i] - lx[i]);
        grid.laplacian_into(&r, &mut g);
        let mut moved = 0.0f64;
        for &i in &kink {
            let next = (xi[i] + step * g[i]).clamp(0.0, top);
            moved = moved.max((next - xi[i]).abs());
            xi[i] = next;
        }
        if moved <= 1e-15 * top {
            break;
        }
    }
    Ok(residual_norm(&grid, uv, vv, tau, &xi))
}

/// ∇²Φ(τ, u; v) applied to `p`.
pub fn hessian_apply(u: &Field, v: &Field, p: &Field, opts: &ProxOptions) -> Result<Field> {
    let grid = *u.grid();
    if *v.grid() != grid || *p.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mut nt = Newton::new(grid, u.values(), v.values().to_vec(), opts.tau, opts.policy.cap());
    nt.refresh();
    let mut tmp = vec![0.0; grid.cells()];
    let mut out = vec![0.0; grid.cells()];
    let mut pv = p.values().to_vec();
    project_mean_zero(&mut pv);
    nt.hessian_apply(&pv, &mut tmp, &mut out);
    Ok(Field::from_parts(grid, out, true))
}

/// Violation of the one-step variational inequality
/// `(‖v − w‖² − ‖u − w‖²)/(2τ) ≤ φ(w) − φ(v)` for a test field `w`.
pub fn evi_violation(u: &Field, v: &Field, w: &Field, tau: f64, policy: Truncation, phi_v: f64) -> Result<f64> {
    // ‖v−w‖² − ‖u−w‖² = ⟨v − u, v + u − 2w⟩, evaluated without cancellation
    let cv = u.grid().cell_volume();
    let (a, b, c) = (v.values(), u.values(), w.values());
    if v.grid() != u.grid() || w.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    let diff = cv * exec::sum_by(a.len(), |i| (a[i] - b[i]) * (a[i] + b[i] - 2.0 * c[i]));
    Ok(diff / (2.0 * tau) - (energy::phi(w, policy) - phi_v))
}

/// Largest one-step EVI violation over `{u, 0, (u+v)/2, 2v − u}`.
pub fn evi_gap(u: &Field, v: &Field, tau: f64, policy: Truncation) -> Result<f64> {
    let phi_v = energy::phi(v, policy);
    let battery = [
        u.clone(),
        Field::zeros(*u.grid()),
        u.lincomb(0.5, v, 0.5)?,
        v.lincomb(2.0, u, -1.0)?,
    ];
    let mut gap = f64::NEG_INFINITY;
    for w in &battery {
        gap = gap.max(evi_violation(u, v, w, tau, policy, phi_v)?);
    }
    Ok(gap)
}

/// Largest violation of τ⁻¹-convexity of Φ(τ, u; ·) along the segment
/// from `v0` to `v1`, over the given interpolation parameters.
pub fn tau_convexity_probe(
    u: &Field,
    v0: &Field,
    v1: &Field,
    tau: f64,
    t_samples: &[f64],
    policy: Truncation,
) -> Result<f64> {
    let opts = ProxOptions::new(tau).with_policy(policy);
    let f0 = objective(u, v0, &opts)?;
    let f1 = objective(u, v1, &opts)?;
    let d01 = v0.distance(v1)?;
    let mut worst = f64::NEG_INFINITY;
    for &t in t_samples {
        let vt = v0.lincomb(1.0 - t, v1, t)?;
        let lhs = objective(u, &vt, &opts)?;
        let rhs = (1.0 - t) * f0 + t * f1 - t * (1.0 - t) * d01 * d01 / (2.0 * tau);
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn bandlimited(g: Grid, seed: u64, amp: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(usize, usize, f64)> = (0..6)
            .map(|_| (rng.gen_range(0..4), rng.gen_range(0..4), rng.gen_range(-1.0..1.0)))
            .collect();
        let dim = g.dim();
        Field::from_fn(g, |x| {
            modes
                .iter()
                .map(|&(kx, ky, a)| {
                    let ky = if dim == 1 { 0 } else { ky };
                    a * amp * (kx as f64 * PI * x[0]).cos() * (ky as f64 * PI * x[1]).cos()
                })
                .sum()
        })
        .unwrap()
        .mean_zero_project()
    }

    fn cosine(g: Grid, eps: f64) -> Field {
        Field::from_fn(g, |x| eps * (PI * x[0] / g.length()).cos()).unwrap().mean_zero_project()
    }

    #[test]
    fn flat_state_is_stationary() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let r = prox_step(&Field::zeros(g), &ProxOptions::new(0.3)).unwrap();
        assert!(r.newton_iters <= 1);
        assert!(r.v.values().iter().all(|&x| x == 0.0));
        assert!(r.converged());
    }

    #[test]
    fn vanishing_step_is_identity() {
        let g = Grid::new(1, 32, 1.0).unwrap();
        let u = bandlimited(g, 3, 0.01);
        let r = prox_step(&u, &ProxOptions::new(1e-12)).unwrap();
        assert!(r.v.distance(&u).unwrap() <= 1e-8 * u.norm());
    }

    /// Dense solve of (I + τ L²) v = u by Gaussian elimination.
    fn dense_linear_backward_euler(g: &Grid, u: &[f64], tau: f64) -> Vec<f64> {
        let n = u.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut col = vec![0.0; n];
            g.laplacian_into(&e, &mut col);
            for i in 0..n {
                l[i][j] = col[i];
            }
        }
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                let l2: f64 = (0..n).map(|k| l[i][k] * l[k][j]).sum();
                a[i][j] = tau * l2 + if i == j { 1.0 } else { 0.0 };
            }
            a[i][n] = u[i];
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn small_cosine_matches_linear_backward_euler() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let lam = g.eigenvalue_1d(1);
        let eps = 1e-3;
        let u = cosine(g, eps);
        for &scale in &[0.1, 0.5, 1.0] {
            let tau = scale / (lam * lam);
            let r = prox_step(&u, &ProxOptions::new(tau)).unwrap();
            assert!(r.converged());
            let dense = dense_linear_backward_euler(&g, u.values(), tau);
            let predicted = 1.0 / (1.0 + tau * lam * lam);
            for i in 0..16 {
                let lin = u.values()[i] * predicted;
                assert!((r.v.values()[i] - lin).abs() <= 1e-2 * eps);
                assert!((dense[i] - lin).abs() <= 1e-12);
            }
        }
        // and on the finer grid from the examples
        let g = Grid::new(1, 64, 1.0).unwrap();
        let lam = g.eigenvalue_1d(1);
        let u = cosine(g, eps);
        let tau = 1.0 / (lam * lam);
        let r = prox_step(&u, &ProxOptions::new(tau)).unwrap();
        let amp = g.inner(&r.v, &u).unwrap() / g.inner(&u, &u).unwrap();
        assert!((amp - 0.5).abs() <= 0.005, "{amp}");
    }

    #[test]
    fn optimality_and_descent_postconditions() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 16, 1.0).unwrap();
            for seed in 0..4 {
                let u = bandlimited(g, seed, 0.02);
                for policy in [Truncation::None, Truncation::Level(2.0)] {
                    let opts = ProxOptions::new(1e-4).with_policy(policy);
                    let r = prox_step(&u, &opts).unwrap();
                    assert!(r.converged(), "dim {dim} seed {seed} {policy:?}: {:e} newton {} cg {} fb {}", r.final_grad_norm, r.newton_iters, r.cg_iters_total, r.fallback_steps);
                    assert!(r.v.check_mean_zero(1e-12));
                    if policy.is_none() {
                        let grad = gradient(&u, &r.v, &opts).unwrap();
                        assert!(grad.norm() <= r.grad_tol / opts.tau);
                    } else {
                        // at the kink the one-sided gradient is not a certificate;
                        // probe Φ along random directions instead
                        for k in 0..8 {
                            let w = bandlimited(g, 100 + k, 1e-4);
                            for eps in [1e-2, -1e-2, 1.0, -1.0] {
                                let vw = r.v.lincomb(1.0, &w, eps).unwrap();
                                let f = objective(&u, &vw, &opts).unwrap();
                                assert!(r.objective <= f + 1e-14 * f.abs());
                            }
                        }
                    }
                    assert!(r.objective <= energy::phi(&u, policy) + 10.0 * r.grad_tol);
                    assert!(r.evi_gap <= 10.0 * r.grad_tol * (u.norm() + r.v.norm()).max(1.0));
                }
            }
        }
    }

    #[test]
    fn minimizer_is_unique_across_initial_guesses() {
        let g = Grid::new(1, 32, 1.0).unwrap();
        let u = bandlimited(g, 7, 0.02);
        let opts = ProxOptions::new(5e-5);
        let a = prox_step(&u, &opts).unwrap();
        let guess = u.lincomb(1.0, &bandlimited(g, 99, 0.005), 1.0).unwrap();
        let b = prox_step_from(&u, &guess, &opts).unwrap();
        assert!(b.converged());
        assert!(a.v.distance(&b.v).unwrap() <= 10.0 * a.grad_tol);
    }

    #[test]
    fn resolvent_is_nonexpansive() {
        let g = Grid::new(2, 12, 1.0).unwrap();
        let opts = ProxOptions::new(1e-4);
        for seed in 0..5 {
            let u = bandlimited(g, seed, 0.03);
            let w = bandlimited(g, seed + 50, 0.03);
            let ju = prox_step(&u, &opts).unwrap();
            let jw = prox_step(&w, &opts).unwrap();
            let lhs = ju.v.distance(&jw.v).unwrap();
            assert!(lhs <= u.distance(&w).unwrap() + 10.0 * ju.grad_tol);
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let g = Grid::new(1, 24, 1.0).unwrap();
        let opts = ProxOptions::new(1e-3);
        for seed in 0..5 {
            let u = bandlimited(g, seed, 0.02);
            let v = bandlimited(g, seed + 10, 0.02);
            let p = bandlimited(g, seed + 20, 1.0);
            let step = 1e-5;
            let gp = gradient(&u, &v.lincomb(1.0, &p, step).unwrap(), &opts).unwrap();
            let gm = gradient(&u, &v.lincomb(1.0, &p, -step).unwrap(), &opts).unwrap();
            let fd = gp.lincomb(0.5 / step, &gm, -0.5 / step).unwrap();
            let hp = hessian_apply(&u, &v, &p, &opts).unwrap();
            let err = fd.distance(&hp).unwrap();
            assert!(err <= 1e-6 * hp.norm(), "{err:e} vs {:e}", hp.norm());
        }
    }

    #[test]
    fn objective_examples() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let u = bandlimited(g, 1, 0.01);
        let opts = ProxOptions::new(0.1);
        assert_eq!(objective(&u, &u, &opts).unwrap(), energy::phi(&u, Truncation::None));
        let z = Field::zeros(g);
        assert!((objective(&z, &z, &opts).unwrap() - 1.0).abs() < 1e-15);
        // φ(v) + d²/(2τ) with d = 0.2, τ = 0.1
        let d: f64 = 0.2;
        assert!((1.5 + d * d / (2.0 * 0.1) - 1.7).abs() < 1e-12);
        let shifted = u.lincomb(1.0, &Field::from_fn(g, |x| (PI * x[0]).cos()).unwrap(), 0.4).unwrap();
        let got = objective(&u, &shifted, &opts).unwrap();
        let dist = shifted.distance(&u).unwrap();
        assert!((got - energy::phi(&shifted, Truncation::None) - dist * dist / 0.2).abs() < 1e-12);
        let tight = ProxOptions { c_star: Some(1e-9), ..opts };
        assert_eq!(objective(&u, &shifted, &tight).unwrap(), f64::INFINITY);
    }

    #[test]
    fn tau_convexity_probe_examples() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let u = bandlimited(g, 2, 0.02);
        let v = bandlimited(g, 3, 0.02);
        let ts = [0.25, 0.5, 0.75];
        assert!(tau_convexity_probe(&u, &v, &v, 0.01, &ts, Truncation::None).unwrap() <= 1e-12);
        let c = cosine(g, 1e-2);
        let z = Field::zeros(g);
        let viol = tau_convexity_probe(&z, &c, &c.scaled(-1.0), 0.01, &ts, Truncation::None).unwrap();
        assert!(viol <= 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let u = Field::constant(g, 1.0);
        assert!(prox_step(&u, &ProxOptions::new(0.1)).is_err());
        let z = Field::zeros(g);
        assert!(prox_step(&z, &ProxOptions::new(-1.0)).is_err());
    }
}
