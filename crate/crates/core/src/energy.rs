//! Scalar functionals of a surface profile.
//!
//! The energy density is `c(s) = exp(-min(s, N))` evaluated on the discrete
//! Laplacian `s = L u`. Mass above the truncation level `N` is the grid
//! surrogate of the singular part of the Laplacian: it carries no energy.
//! With `Truncation::None` the cap is `+inf` and `c(s) = exp(-s)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Field, Grid, MeasureNorms};

/// Exponents are clamped to `[-EXP_CLAMP, EXP_CLAMP]`; each clamp is counted.
pub const EXP_CLAMP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Truncation {
    None,
    Level(f64),
}

impl Truncation {
    pub fn level(level: f64) -> Result<Self> {
        if level.is_finite() && level > 0.0 {
            Ok(Self::Level(level))
        } else {
            Err(Error::Precondition(format!(
                "truncation level must be positive and finite, got {level}"
            )))
        }
    }

    /// `10 · max(1, max L u0)`: inert until the Laplacian concentrates.
    pub fn auto(u0: &Field) -> Self {
        let lap = u0.grid().laplacian(u0).expect("field lives on its own grid");
        Self::Level(10.0 * lap.max().max(1.0))
    }

    /// The cap `N`, `+inf` when untruncated.
    pub fn cap(self) -> f64 {
        match self {
            Self::None => f64::INFINITY,
            Self::Level(n) => n,
        }
    }

    pub fn is_none(self) -> bool {
        matches!(self, Self::None)
    }
}

#[inline]
fn clamped_exp(x: f64) -> (f64, bool) {
    if x > EXP_CLAMP {
        (EXP_CLAMP.exp(), true)
    } else if x < -EXP_CLAMP {
        ((-EXP_CLAMP).exp(), true)
    } else {
        (x.exp(), false)
    }
}

/// Energy density `exp(-min(s, cap))`.
#[inline]
pub fn density(s: f64, cap: f64) -> f64 {
    clamped_exp(-s.min(cap)).0
}

/// `-c'(s)`: equals `exp(-s)` below the cap and 0 above it. It is both the
/// flux whose Laplacian drives the flow and the curvature weight `c''(s)`.
#[inline]
pub fn flux(s: f64, cap: f64) -> f64 {
    if s < cap {
        clamped_exp(-s).0
    } else {
        0.0
    }
}

pub(crate) fn count_clamps(lap: &[f64], cap: f64) -> usize {
    lap.iter()
        .filter(|&&s| clamped_exp(-s.min(cap)).1)
        .count()
}

/// `cell_volume · Σ exp(-min(s_i, cap))` over a Laplacian image.
pub fn phi_from_laplacian(grid: &Grid, lap: &[f64], cap: f64) -> f64 {
    grid.cell_volume() * exec::sum_by(lap.len(), |i| density(lap[i], cap))
}

/// Writes the flux `-c'(L u)` into `out`.
pub fn flux_into(lap: &[f64], cap: f64, out: &mut [f64]) {
    exec::fill(out, |i| flux(lap[i], cap));
}

/// `½ ‖L flux(L u)‖²` from a Laplacian image.
fn dissipation_from_laplacian(grid: &Grid, lap: &[f64], cap: f64) -> f64 {
    let mut f = vec![0.0; lap.len()];
    flux_into(lap, cap, &mut f);
    let mut lf = vec![0.0; lap.len()];
    grid.laplacian_into(&f, &mut lf);
    0.5 * grid.cell_volume() * exec::dot(&lf, &lf)
}

/// The truncated energy φ_N(u). Equals [`phi_raw`] when `max L u ≤ N`.
pub fn phi(u: &Field, policy: Truncation) -> f64 {
    let g = u.grid();
    let lap = g.laplacian(u).expect("own grid");
    phi_from_laplacian(g, lap.values(), policy.cap())
}

/// The untruncated energy `∫ exp(-L u)`.
pub fn phi_raw(u: &Field) -> f64 {
    phi(u, Truncation::None)
}

/// Indicator of the measure ball `‖L u‖ ≤ C*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Psi {
    Zero,
    Infinite,
}

pub fn psi(u: &Field, c_star: f64) -> Psi {
    let g = u.grid();
    let lap = g.laplacian(u).expect("own grid");
    if MeasureNorms::of(g, lap.values()).total <= c_star {
        Psi::Zero
    } else {
        Psi::Infinite
    }
}

/// `C* = 2 φ(u0) + 1`.
pub fn auto_c_star(u0: &Field, policy: Truncation) -> f64 {
    2.0 * phi(u0, policy) + 1.0
}

/// `E(u) = ½ ‖L flux(L u)‖²`.
pub fn dissipation_e(u: &Field, policy: Truncation) -> f64 {
    let g = u.grid();
    let lap = g.laplacian(u).expect("own grid");
    dissipation_from_laplacian(g, lap.values(), policy.cap())
}

/// Metric slope |∂φ|(u) = ‖L flux(L u)‖ = sqrt(2E).
pub fn metric_slope(u: &Field, policy: Truncation) -> f64 {
    (2.0 * dissipation_e(u, policy)).sqrt()
}

/// All scalar diagnostics of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub phi: f64,
    pub phi_raw: f64,
    /// `∫ exp(-L u)`; the same formula as `phi_raw`.
    pub free_energy_f: f64,
    pub dissipation_e: f64,
    pub measure_total: f64,
    pub measure_pos: f64,
    pub measure_neg: f64,
    pub max_pos_laplacian: f64,
    pub min_laplacian: f64,
    /// Mass of `(L u - N)^+`.
    pub excess_mass: f64,
    /// Mass of `(-N - L u)^+`; diagnostic only.
    pub negative_excess_mass: f64,
    pub slope: f64,
    pub clamp_events: usize,
}

impl EnergyReport {
    pub fn of(u: &Field, policy: Truncation) -> Self {
        let g = u.grid();
        let lap = g.laplacian(u).expect("own grid");
        Self::from_laplacian(g, lap.values(), policy)
    }

    /// Builds a report from a measure density directly. Densities that are
    /// not Laplacian images are accepted so checks can be fed negative controls.
    pub fn from_laplacian(grid: &Grid, lap: &[f64], policy: Truncation) -> Self {
        let cap = policy.cap();
        let cv = grid.cell_volume();
        let m = MeasureNorms::of(grid, lap);
        let phi = phi_from_laplacian(grid, lap, cap);
        let phi_raw = phi_from_laplacian(grid, lap, f64::INFINITY);
        let e = dissipation_from_laplacian(grid, lap, cap);
        let (excess, neg_excess) = if cap.is_finite() {
            (
                cv * exec::sum_by(lap.len(), |i| (lap[i] - cap).max(0.0)),
                cv * exec::sum_by(lap.len(), |i| (-cap - lap[i]).max(0.0)),
            )
        } else {
            (0.0, 0.0)
        };
        let max = exec::max_by(lap.len(), |i| lap[i]);
        let min = -exec::max_by(lap.len(), |i| -lap[i]);
        Self {
            phi,
            phi_raw,
            free_energy_f: phi_raw,
            dissipation_e: e,
            measure_total: m.total,
            measure_pos: m.pos,
            measure_neg: m.neg,
            max_pos_laplacian: max.max(0.0),
            min_laplacian: min,
            excess_mass: excess,
            negative_excess_mass: neg_excess,
            slope: (2.0 * e).sqrt(),
            clamp_events: count_clamps(lap, cap) + count_clamps(lap, f64::INFINITY),
        }
    }
}

/// Conjugate `f*(y) = y - y ln(-y)` of `exp(-x)` on `x ≥ 0`, for `y ∈ [-1, 0]`.
fn conjugate(y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y - y * (-y).ln()
    }
}

/// Maximizes `y μ - f*(y)` over `y ∈ [-1, 0]` by safeguarded Newton on the
/// concave objective, bracketing in magnitude so tiny maximizers resolve to
/// full relative precision.
fn dual_cell(mu: f64) -> f64 {
    let objective = |y: f64| y * mu - conjugate(y);
    // derivative of the objective: μ + ln(-y), strictly decreasing in y
    let slope = |y: f64| mu + (-y).ln();
    if slope(-1.0) <= 0.0 {
        return objective(-1.0);
    }
    // Bracket [lo, hi] in y with slope(lo) > 0 > slope(hi).
    let mut lo = -1.0f64;
    let mut hi = -f64::MIN_POSITIVE;
    if slope(hi) >= 0.0 {
        // maximizer below the smallest normal magnitude: value is 0 to
        // double precision
        return objective(hi).max(0.0);
    }
    let mut y = -0.5f64;
    for _ in 0..400 {
        let d = slope(y);
        if d == 0.0 {
            break;
        }
        if d > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        // Newton step on the derivative: d'(y) = 1/y
        let newton = y - d * y;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            -(0.5 * ((-lo).ln() + (-hi).ln())).exp()
        };
        if ((next - y) / y).abs() <= 1e-15 {
            y = next;
            break;
        }
        y = next;
    }
    objective(y)
}

/// Dual (sup over `-1 ≤ y ≤ 0`) form of `∫ exp(-μ)` for a nonnegative
/// density, evaluated by per-cell numerical maximization.
pub fn dual_phi(mu: &Field) -> f64 {
    let v = mu.values();
    mu.grid().cell_volume() * exec::sum_by(v.len(), |i| dual_cell(v[i]))
}

/// Both sides of `‖min(μ, N)‖² ≤ 4 e^N A + 2 |Ω| N²`, without checking the
/// hypothesis `∫ exp(-μ) ≤ A`.
pub fn truncation_l2_sides(mu: &Field, level: f64, a: f64) -> (f64, f64) {
    let g = mu.grid();
    let v = mu.values();
    let lhs = g.cell_volume() * exec::sum_by(v.len(), |i| v[i].min(level).powi(2));
    let rhs = 4.0 * level.exp() * a + 2.0 * g.volume() * level * level;
    (lhs, rhs)
}

/// Checks `‖min(μ, N)‖² ≤ 4 e^N A + 2 |Ω| N²` given `∫ exp(-μ) ≤ A`.
pub fn truncation_l2_bound_check(mu: &Field, level: f64, a: f64) -> Result<bool> {
    let g = mu.grid();
    let raw = phi_from_laplacian(g, mu.values(), f64::INFINITY);
    if raw > a * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "∫exp(-μ) = {raw:e} exceeds A = {a:e}"
        )));
    }
    if !(level > 0.0) {
        return Err(Error::Precondition("truncation level must be positive".into()));
    }
    let (lhs, rhs) = truncation_l2_sides(mu, level, a);
    Ok(lhs <= rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize) -> Grid {
        Grid::new(1, n, 1.0).unwrap()
    }

    fn smooth_random(g: Grid, seed: u64, amp: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(f64, f64)> = (1..=4).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        Field::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let w = (k + 1) as f64 * std::f64::consts::PI;
                    amp * (a * (w * x[0]).cos() + b * (w * x[1]).cos()) / ((k + 1) * (k + 1)) as f64
                })
                .sum()
        })
        .unwrap()
        .mean_zero_project()
    }

    #[test]
    fn flat_state_has_unit_energy() {
        let g = grid1(16);
        let z = Field::zeros(g);
        assert!((phi(&z, Truncation::None) - 1.0).abs() < 1e-15);
        assert_eq!(dissipation_e(&z, Truncation::None), 0.0);
        assert_eq!(metric_slope(&z, Truncation::Level(3.0)), 0.0);
        assert_eq!(psi(&z, 1e-3), Psi::Zero);
    }

    #[test]
    fn hand_evaluated_energy() {
        let g = grid1(4);
        let lap = [2.0, -1.0, -1.0, 0.0];
        // direct summation of the formula
        let truncated = 0.25 * ((-1.0f64).exp() + 1f64.exp() + 1f64.exp() + 1.0);
        let raw = 0.25 * ((-2.0f64).exp() + 2.0 * 1f64.exp() + 1.0);
        assert!((phi_from_laplacian(&g, &lap, 1.0) - truncated).abs() < 1e-14);
        assert!((truncated - 1.701111).abs() < 1e-6);
        assert!((phi_from_laplacian(&g, &lap, f64::INFINITY) - raw).abs() < 1e-14);
        assert!((raw - 1.642975).abs() < 1e-6);
        let r = EnergyReport::from_laplacian(&g, &lap, Truncation::Level(1.0));
        assert_eq!(r.measure_total, 1.0);
        assert_eq!(r.excess_mass, 0.25);
        assert!(r.phi >= r.phi_raw);
    }

    #[test]
    fn psi_and_c_star() {
        // Lu = (+2,-1,-1,0) scaled so the total is 3: u solves L u = lap.
        let g = grid1(4);
        let u = Field::new(g, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(psi(&u, 2.0), Psi::Zero);
        let u = Field::from_fn(g, |x| 3.0 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let total = MeasureNorms::of(&g, g.laplacian(&u).unwrap().values()).total;
        assert_eq!(psi(&u, total * 0.99), Psi::Infinite);
        assert_eq!(psi(&u, total), Psi::Zero);
        let c = auto_c_star(&u, Truncation::None);
        assert_eq!(c, 2.0 * phi(&u, Truncation::None) + 1.0);
        assert_eq!(psi(&u, c), Psi::Zero);
    }

    #[test]
    fn dissipation_vanishes_only_for_uniform_flux() {
        // On a Neumann grid a constant Laplacian must be zero, so the
        // constant-Laplacian profiles are the constants themselves.
        let g = grid1(8);
        let c = Field::constant(g, 3.0);
        assert_eq!(dissipation_e(&c, Truncation::None), 0.0);
        assert_eq!(dissipation_e(&c, Truncation::Level(0.5)), 0.0);
        let u = Field::from_fn(g, |x| 0.1 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        assert!(dissipation_e(&u, Truncation::None) > 0.0);
    }

    #[test]
    fn small_cosine_dissipation_matches_linearization() {
        let n = 64;
        let g = grid1(n);
        let eps = 1e-3;
        let lam = g.eigenvalue_1d(1);
        let c = Field::from_fn(g, |x| (std::f64::consts::PI * x[0]).cos()).unwrap();
        let u = c.scaled(eps);
        let cnorm2 = g.inner(&c, &c).unwrap();
        let predicted = 0.5 * eps * eps * lam.powi(4) * cnorm2;
        let e = dissipation_e(&u, Truncation::None);
        assert!((e - predicted).abs() <= 2e-3 * predicted, "{e} vs {predicted}");
        let slope = metric_slope(&u, Truncation::None);
        let predicted_slope = eps * lam * lam * cnorm2.sqrt();
        assert!((slope - predicted_slope).abs() <= 2e-3 * predicted_slope);
    }

    #[test]
    fn slope_squared_is_twice_dissipation() {
        for seed in 0..10 {
            let g = Grid::new(2, 10, 1.0).unwrap();
            let u = smooth_random(g, seed, 0.05);
            for policy in [Truncation::None, Truncation::Level(0.5)] {
                let e = dissipation_e(&u, policy);
                let s = metric_slope(&u, policy);
                assert!((s * s - 2.0 * e).abs() <= 1e-12 * (1.0 + e));
            }
        }
    }

    #[test]
    fn dual_oracle_examples() {
        let g = grid1(8);
        assert!((dual_phi(&Field::zeros(g)) - 1.0).abs() < 1e-15);
        let two = Field::constant(g, 2.0);
        assert!((dual_phi(&two) - 0.135335).abs() < 1e-6);
        assert!((dual_phi(&two) - (-2.0f64).exp()).abs() <= 1e-8 * (-2.0f64).exp());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = Field::new(g, (0..8).map(|_| rng.gen_range(0.0..40.0)).collect()).unwrap();
        let raw = phi_from_laplacian(&g, mu.values(), f64::INFINITY);
        assert!((dual_phi(&mu) - raw).abs() <= 1e-8 * raw);
        // extreme densities resolve too
        let big = Field::constant(g, 700.0);
        let expect = (-700.0f64).exp();
        assert!((dual_phi(&big) - expect).abs() <= 1e-8 * expect);
    }

    #[test]
    fn truncation_bound_examples() {
        let g = grid1(16);
        assert!(truncation_l2_bound_check(&Field::zeros(g), 1.0, 1.0).unwrap());
        let mut v = vec![0.0; 16];
        v[3] = -10.0;
        let mu = Field::new(g, v).unwrap();
        let a = g.h() * (15.0 + 10f64.exp());
        let lhs = g.h() * 100.0;
        assert!(lhs <= 4.0 * 1f64.exp() * a + 2.0);
        assert!(truncation_l2_bound_check(&mu, 1.0, a).unwrap());
        assert!(truncation_l2_bound_check(&mu, 1.0, a * 0.5).is_err());
    }

    #[test]
    fn truncation_is_monotone_and_jensen_holds() {
        for seed in 0..20 {
            let g = Grid::new(1 + (seed as usize % 2), 12, 1.0).unwrap();
            let u = smooth_random(g, seed, 0.1);
            let raw = phi(&u, Truncation::None);
            let hi = phi(&u, Truncation::Level(2.0));
            let lo = phi(&u, Truncation::Level(0.5));
            assert!(lo >= hi && hi >= raw);
            assert!(raw >= g.volume() - 1e-10);
            let r = EnergyReport::of(&u, Truncation::Level(1e9));
            assert_eq!(r.excess_mass, 0.0);
            assert_eq!(r.phi, r.phi_raw);
            assert_eq!(r.measure_total, r.measure_pos + r.measure_neg);
        }
    }

    #[test]
    fn convexity_of_energy_along_segments() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        for seed in 0..50u64 {
            let u = smooth_random(g, seed, 0.2);
            let v = smooth_random(g, seed + 1000, 0.2);
            for policy in [Truncation::None, Truncation::Level(1.0)] {
                let pu = phi(&u, policy);
                let pv = phi(&v, policy);
                for t in [0.25, 0.5, 0.75] {
                    let w = u.lincomb(1.0 - t, &v, t).unwrap();
                    let lhs = phi(&w, policy);
                    let rhs = (1.0 - t) * pu + t * pv;
                    assert!(lhs <= rhs + 1e-10 * (1.0 + pu.abs() + pv.abs()));
                }
            }
        }
    }

    #[test]
    fn overflow_guard_counts_clamps() {
        let g = grid1(4);
        let r = EnergyReport::from_laplacian(&g, &[-600.0, 600.0, 0.0, 0.0], Truncation::None);
        assert!(r.clamp_events > 0);
        assert!(r.phi.is_finite());
    }
}
