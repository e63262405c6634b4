//! Projected Newton on the dual of the resolvent problem, used when the
//! truncated energy leaves cells pinned at its kink `s = N`.
//!
//! With `h(ξ)` the conjugate of the energy density (`ξ ln ξ − ξ` above
//! `e^{−N}`, linear `−Nξ − e^{−N}` below) the dual reads
//!
//! ```text
//! min_{ξ ≥ 0}  Σ h(ξ) + ⟨ξ, L u⟩ + τ/2 ‖L ξ‖²,      v = u + τ L ξ
//! ```
//!
//! The kink of the primal density turns into a region of zero curvature,
//! and cells above the cap become active bounds `ξ = 0`.

use crate::energy;
use crate::exec;
use crate::grid::{project_mean_zero, Grid};

use super::LineSearch;

/// Half-width of the band around `N` whose cells count as sitting on the kink.
pub fn kink_band(cap: f64) -> f64 {
    1e-9 * cap.abs().max(1.0)
}

/// Subgradient selection: the flux for cells off the kink, `hint` clipped
/// into `[0, e^{−N}]` for cells on it.
pub fn select_flux(s: &[f64], cap: f64, hint: &[f64], out: &mut [f64]) {
    let band = kink_band(cap);
    let top = (-cap).exp();
    exec::fill(out, |i| {
        let si = s[i];
        if !cap.is_finite() || si < cap - band || si > cap + band {
            energy::flux(si, cap)
        } else {
            hint[i].clamp(0.0, top)
        }
    });
}

/// ‖(v − u)/τ − L ξ‖ for a given flux selection.
pub fn residual_norm(grid: &Grid, u: &[f64], v: &[f64], tau: f64, xi: &[f64]) -> f64 {
    let mut lx = vec![0.0; xi.len()];
    grid.laplacian_into(xi, &mut lx);
    let mut r = vec![0.0; xi.len()];
    exec::fill(&mut r, |i| (v[i] - u[i]) / tau - lx[i]);
    project_mean_zero(&mut r);
    (grid.cell_volume() * exec::dot(&r, &r)).sqrt()
}

fn h(xi: f64, cap: f64) -> f64 {
    let top = (-cap).exp();
    if xi > top {
        xi * xi.ln() - xi
    } else {
        -xi * cap - top
    }
}

fn h_prime(xi: f64, cap: f64) -> f64 {
    if xi > (-cap).exp() {
        xi.ln()
    } else {
        -cap
    }
}

fn h_second(xi: f64, cap: f64) -> f64 {
    if xi > (-cap).exp() {
        1.0 / xi
    } else {
        0.0
    }
}

pub struct DualOutcome {
    pub v: Vec<f64>,
    pub certificate: f64,
    /// Forward-error bound of the certificate at the returned point.
    pub floor: f64,
    pub iterations: usize,
    pub cg_iterations: usize,
}

struct Dual<'a> {
    grid: Grid,
    u: &'a [f64],
    lap_u: Vec<f64>,
    tau: f64,
    cap: f64,
    cv: f64,
    xi: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Dual<'a> {
    fn objective(&self, xi: &[f64]) -> f64 {
        let mut lx = vec![0.0; xi.len()];
        self.grid.laplacian_into(xi, &mut lx);
        let (cap, lu) = (self.cap, &self.lap_u);
        let sum = exec::sum_by(xi.len(), |i| h(xi[i], cap) + xi[i] * lu[i] + 0.5 * self.tau * lx[i] * lx[i]);
        self.cv * sum
    }

    fn refresh(&mut self) {
        let len = self.xi.len();
        let mut lx = vec![0.0; len];
        self.grid.laplacian_into(&self.xi, &mut lx);
        let (u, tau) = (self.u, self.tau);
        exec::fill(&mut self.v, |i| u[i] + tau * lx[i]);
        self.grid.laplacian_into(&self.v, &mut self.s);
        let (s, xi, cap) = (&self.s, &self.xi, self.cap);
        exec::fill(&mut self.grad, |i| s[i] + h_prime(xi[i], cap));
    }

    /// Like the primal bound, but `v` is formed as `u + τ L ξ`, whose
    /// rounding scales with `|u| + τ |L| ξ` rather than `|v|`.
    fn rounding_floor(&self) -> f64 {
        let len = self.xi.len();
        let k = 4.0 * self.grid.dim() as f64 / (self.grid.h() * self.grid.h());
        let abs_apply = |x: &[f64], out: &mut [f64]| {
            self.grid.laplacian_into(x, out);
            exec::update(out, |i, y| y + k * x[i]);
        };
        let mut lxi = vec![0.0; len];
        abs_apply(&self.xi, &mut lxi);
        let (u, tau) = (self.u, self.tau);
        let vmag: Vec<f64> = (0..len).map(|i| u[i].abs() + tau * lxi[i]).collect();
        let mut lv = vec![0.0; len];
        abs_apply(&vmag, &mut lv);
        let cap = self.cap;
        let w: Vec<f64> = (0..len).map(|i| energy::flux(self.s[i], cap).max(self.xi[i]) * (1.0 + lv[i])).collect();
        let mut lw = vec![0.0; len];
        abs_apply(&w, &mut lw);
        let e: Vec<f64> = (0..len).map(|i| f64::EPSILON * (vmag[i] / tau + lxi[i] + lw[i])).collect();
        (self.cv * exec::dot(&e, &e)).sqrt()
    }

    fn certificate(&self) -> f64 {
        let mut sel = vec![0.0; self.xi.len()];
        select_flux(&self.s, self.cap, &self.xi, &mut sel);
        residual_norm(&self.grid, self.u, &self.v, self.tau, &sel)
    }

    /// `(diag(h'') + τ L²) p` restricted to the free cells.
    fn hessian_apply(&self, free: &[bool], p: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.grid.laplacian_into(p, tmp);
        self.grid.laplacian_into(tmp, out);
        let (xi, cap, tau) = (&self.xi, self.cap, self.tau);
        exec::update(out, |i, x| {
            if free[i] {
                tau * x + h_second(xi[i], cap) * p[i]
            } else {
                0.0
            }
        });
    }
}

#[allow(clippy::too_many_arguments)]
/// Solves the dual starting from `xi0 ≥ 0`; stops once the primal
/// subgradient certificate drops below `tol`.
pub fn solve(
    grid: Grid,
    u: &[f64],
    xi0: Vec<f64>,
    tau: f64,
    cap: f64,
    tol: f64,
    max_iter: usize,
    max_cg: usize,
    ls: &LineSearch,
) -> DualOutcome {
    let len = u.len();
    let mut lap_u = vec![0.0; len];
    grid.laplacian_into(u, &mut lap_u);
    let mut d = Dual {
        grid,
        u,
        lap_u,
        tau,
        cap,
        cv: grid.cell_volume(),
        xi: xi0.into_iter().map(|x| x.max(0.0)).collect(),
        v: vec![0.0; len],
        s: vec![0.0; len],
        grad: vec![0.0; len],
    };
    let mut biharm = vec![0.0; len];
    grid.weighted_biharmonic_diag(&vec![1.0; len], &mut biharm);

    d.refresh();
    let mut cert = d.certificate();
    let mut iterations = 0;
    let mut cg_iterations = 0;
    while cert > tol && iterations < max_iter {
        iterations += 1;
        let pg: f64 = exec::sum_by(len, |i| (d.xi[i] - (d.xi[i] - d.grad[i]).max(0.0)).powi(2)).sqrt();
        let eps = pg.min(1e-3);
        let free: Vec<bool> = (0..len).map(|i| !(d.xi[i] <= eps && d.grad[i] > 0.0)).collect();
        let mut diag = vec![0.0; len];
        exec::fill(&mut diag, |i| h_second(d.xi[i], cap) + tau * biharm[i]);

        // PCG on the free block
        let mut x = vec![0.0; len];
        let mut r: Vec<f64> = (0..len).map(|i| if free[i] { -d.grad[i] } else { 0.0 }).collect();
        let rnorm0 = exec::dot(&r, &r).sqrt();
        let target = rnorm0 * 1e-3f64.min((cert / tol.max(f64::MIN_POSITIVE)).recip().sqrt().max(1e-8));
        let mut z: Vec<f64> = (0..len).map(|i| r[i] / diag[i]).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        let mut rz = exec::dot(&r, &z);
        for _ in 0..max_cg {
            if exec::dot(&r, &r).sqrt() <= target {
                break;
            }
            d.hessian_apply(&free, &p, &mut tmp, &mut q);
            cg_iterations += 1;
            let pq = exec::dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            exec::update(&mut x, |i, xi| xi + alpha * p[i]);
            exec::update(&mut r, |i, ri| ri - alpha * q[i]);
            exec::fill(&mut z, |i| r[i] / diag[i]);
            let rz_new = exec::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            exec::update(&mut p, |i, pi| z[i] + beta * pi);
        }
        // scaled gradient step on the active cells
        for i in 0..len {
            if !free[i] {
                x[i] = -d.grad[i] / diag[i];
            }
        }

        // Armijo along the projection arc
        let f0 = d.objective(&d.xi);
        let xi_old = d.xi.clone();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=ls.max_backtracks {
            let trial: Vec<f64> = (0..len).map(|i| (xi_old[i] + alpha * x[i]).max(0.0)).collect();
            let pred: f64 = d.cv
                * exec::sum_by(len, |i| {
                    if free[i] {
                        d.grad[i] * alpha * x[i]
                    } else {
                        d.grad[i] * (trial[i] - xi_old[i])
                    }
                });
            let rounding = pred.abs() <= 1e-11 * (1.0 + f0.abs());
            if rounding {
                d.xi = trial;
                d.refresh();
                let c = d.certificate();
                if c < cert {
                    cert = c;
                    accepted = true;
                    break;
                }
            } else if d.objective(&trial) <= f0 + ls.sufficient_decrease * pred {
                d.xi = trial;
                d.refresh();
                cert = d.certificate();
                accepted = true;
                break;
            }
            alpha *= ls.shrink;
        }
        if !accepted {
            d.xi = xi_old;
            d.refresh();
            cert = d.certificate();
            break;
        }
    }
    let floor = d.rounding_floor();
    let mut v = d.v;
    project_mean_zero(&mut v);
    DualOutcome {
        v,
        certificate: cert,
        floor,
        iterations,
        cg_iterations,
    }
}
