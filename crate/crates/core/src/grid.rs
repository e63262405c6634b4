//! Cell-centered uniform grids, grid functions, and the homogeneous-Neumann
//! discrete Laplacian.
//!
//! Cells are stored row-major: index `i + n * j` for column `i`, row `j`.
//! The Neumann condition is realized by reflecting ghost cells, which makes
//! the boundary contribution of the stencil vanish: a cell only exchanges
//! with neighbours that exist.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    h: f64,
    cell_volume: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n ≥ 4 required, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        let h = length / n as f64;
        Ok(Self {
            dim,
            n,
            length,
            h,
            cell_volume: h.powi(dim as i32),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Total number of cells, `n^dim`.
    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// |Ω| = length^dim.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Cell-center coordinates; the second entry is 0 in 1D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.n;
        let j = idx / self.n;
        let x = (i as f64 + 0.5) * self.h;
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.h } else { 0.0 };
        [x, y]
    }

    /// Eigenvalue of the 1D reflecting stencil for the mode `cos(kπx/L)`.
    pub fn eigenvalue_1d(&self, k: usize) -> f64 {
        let theta = k as f64 * std::f64::consts::PI * self.h / self.length;
        -(2.0 / (self.h * self.h)) * (1.0 - theta.cos())
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.grid != *self {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Raw-slice Laplacian used by the solvers; `src` and `dst` hold `cells()` values.
    pub fn laplacian_into(&self, src: &[f64], dst: &mut [f64]) {
        debug_assert_eq!(src.len(), self.cells());
        debug_assert_eq!(dst.len(), self.cells());
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        if self.dim == 1 {
            exec::fill(dst, |i| {
                let c = src[i];
                let mut acc = 0.0;
                if i > 0 {
                    acc += src[i - 1] - c;
                }
                if i + 1 < n {
                    acc += src[i + 1] - c;
                }
                acc * inv_h2
            });
        } else {
            exec::fill(dst, |idx| {
                let i = idx % n;
                let j = idx / n;
                let c = src[idx];
                let mut acc = 0.0;
                if i > 0 {
                    acc += src[idx - 1] - c;
                }
                if i + 1 < n {
                    acc += src[idx + 1] - c;
                }
                if j > 0 {
                    acc += src[idx - n] - c;
                }
                if j + 1 < n {
                    acc += src[idx + n] - c;
                }
                acc * inv_h2
            });
        }
    }

    /// Discrete Laplacian with homogeneous Neumann boundary conditions.
    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = vec![0.0; self.cells()];
        self.laplacian_into(&f.values, &mut out);
        Ok(Field {
            grid: *self,
            values: out,
            mean_zero: true,
        })
    }

    /// Number of existing neighbours of a cell (2 or fewer per axis).
    fn degree(&self, idx: usize) -> f64 {
        let n = self.n;
        let axis = |k: usize| (k > 0) as usize + (k + 1 < n) as usize;
        let d = if self.dim == 1 {
            axis(idx)
        } else {
            axis(idx % n) + axis(idx / n)
        };
        d as f64
    }

    /// Diagonal of `L diag(w) L`, the Jacobi preconditioner for the Newton system.
    pub fn weighted_biharmonic_diag(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h4 = 1.0 / (self.h * self.h * self.h * self.h);
        let dim = self.dim;
        exec::fill(out, |idx| {
            let deg = self.degree(idx);
            let mut acc = deg * deg * w[idx];
            let i = idx % n;
            if i > 0 {
                acc += w[idx - 1];
            }
            if i + 1 < n {
                acc += w[idx + 1];
            }
            if dim == 2 {
                let j = idx / n;
                if j > 0 {
                    acc += w[idx - n];
                }
                if j + 1 < n {
                    acc += w[idx + n];
                }
            }
            acc * inv_h4
        });
    }

    /// ⟨f, g⟩ = cell_volume · Σ f_i g_i.
    pub fn inner(&self, f: &Field, g: &Field) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.cell_volume * exec::dot(&f.values, &g.values))
    }

    pub fn norm(&self, f: &Field) -> Result<f64> {
        Ok(self.inner(f, f)?.sqrt())
    }

    /// Discrete L¹ norms of a Laplacian image: total, positive and negative mass.
    pub fn measure_norms(&self, lap: &Field) -> Result<MeasureNorms> {
        self.check(lap)?;
        Ok(MeasureNorms::of(self, &lap.values))
    }
}

/// Positive/negative mass split of a discrete measure density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureNorms {
    pub total: f64,
    pub pos: f64,
    pub neg: f64,
}

impl MeasureNorms {
    pub fn of(grid: &Grid, values: &[f64]) -> Self {
        let cv = grid.cell_volume;
        let pos = cv * exec::sum_by(values.len(), |i| values[i].max(0.0));
        let neg = cv * exec::sum_by(values.len(), |i| (-values[i]).max(0.0));
        Self {
            total: pos + neg,
            pos,
            neg,
        }
    }
}

/// A real-valued grid function with an optional mean-zero certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    mean_zero: bool,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::ShapeMismatch {
                expected: grid.cells(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            mean_zero: false,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.cells()],
            mean_zero: true,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.cells()],
            mean_zero: c == 0.0,
        }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.cells()).map(|i| f(grid.center(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    /// Cell-volume weighted mean over Ω.
    pub fn mean(&self) -> f64 {
        exec::sum_by(self.values.len(), |i| self.values[i]) / self.values.len() as f64
    }

    pub fn norm(&self) -> f64 {
        (self.grid.cell_volume * exec::dot(&self.values, &self.values)).sqrt()
    }

    pub fn max(&self) -> f64 {
        exec::max_by(self.values.len(), |i| self.values[i])
    }

    pub fn min(&self) -> f64 {
        -exec::max_by(self.values.len(), |i| -self.values[i])
    }

    /// Subtracts the mean and sets the certificate.
    pub fn mean_zero_project(&self) -> Field {
        let mut values = self.values.clone();
        project_mean_zero(&mut values);
        Field {
            grid: self.grid,
            values,
            mean_zero: true,
        }
    }

    /// `a·self + b·other`; the certificate survives when both inputs carry it.
    pub fn lincomb(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let mut values = vec![0.0; self.values.len()];
        exec::fill(&mut values, |i| a * self.values[i] + b * other.values[i]);
        Ok(Field {
            grid: self.grid,
            values,
            mean_zero: self.mean_zero && other.mean_zero,
        })
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut values = self.values.clone();
        exec::update(&mut values, |_, x| a * x);
        Field {
            grid: self.grid,
            values,
            mean_zero: self.mean_zero,
        }
    }

    /// ‖self − other‖_h.
    pub fn distance(&self, other: &Field) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let a = &self.values;
        let b = &other.values;
        Ok((self.grid.cell_volume * exec::sum_by(a.len(), |i| (a[i] - b[i]).powi(2))).sqrt())
    }

    /// Numerical mean-zero test used for preconditions.
    pub fn check_mean_zero(&self, rel_tol: f64) -> bool {
        let l2 = exec::dot(&self.values, &self.values).sqrt();
        let s = exec::sum_by(self.values.len(), |i| self.values[i]);
        s.abs() <= rel_tol * l2.max(f64::MIN_POSITIVE)
    }

    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, mean_zero: bool) -> Self {
        debug_assert_eq!(values.len(), grid.cells());
        Self {
            grid,
            values,
            mean_zero,
        }
    }
}

/// In-place mean removal; a second pass removes the rounding left by the first.
pub(crate) fn project_mean_zero(values: &mut [f64]) {
    let len = values.len() as f64;
    for _ in 0..2 {
        let m = exec::sum_by(values.len(), |i| values[i]) / len;
        if m == 0.0 {
            break;
        }
        exec::update(values, |_, x| x - m);
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_values(len: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn build_grid_examples() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.cell_volume(), 0.25);
        let g = Grid::new(2, 8, 2.0).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.cell_volume(), 0.0625);
        assert_eq!(g.volume(), 4.0);
        assert!(Grid::new(3, 8, 1.0).is_err());
        assert!(Grid::new(1, 3, 1.0).is_err());
        assert!(Grid::new(1, 8, 0.0).is_err());
        assert!(Grid::new(1, 8, -1.0).is_err());
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 9, 1.3).unwrap();
            let lap = g.laplacian(&Field::constant(g, 4.2)).unwrap();
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cosine_is_an_exact_eigenvector_of_the_reflecting_stencil() {
        // Dense matrix built independently of the stencil kernel.
        let n = 16;
        let len = 1.0;
        let g = Grid::new(1, n, len).unwrap();
        let h = g.h();
        let mut mat = vec![vec![0.0; n]; n];
        for i in 0..n {
            if i > 0 {
                mat[i][i - 1] += 1.0 / (h * h);
                mat[i][i] -= 1.0 / (h * h);
            }
            if i + 1 < n {
                mat[i][i + 1] += 1.0 / (h * h);
                mat[i][i] -= 1.0 / (h * h);
            }
        }
        for k in 1..n {
            let f = Field::from_fn(g, |x| (k as f64 * std::f64::consts::PI * x[0] / len).cos()).unwrap();
            let lam = -(2.0 / (h * h)) * (1.0 - (k as f64 * std::f64::consts::PI * h / len).cos());
            assert!((g.eigenvalue_1d(k) - lam).abs() <= 1e-12 * lam.abs());
            let lap = g.laplacian(&f).unwrap();
            for i in 0..n {
                let dense: f64 = (0..n).map(|j| mat[i][j] * f.values()[j]).sum();
                assert!((lap.values()[i] - dense).abs() <= 1e-9 * lam.abs());
                assert!((lap.values()[i] - lam * f.values()[i]).abs() <= 1e-9 * lam.abs());
            }
        }
    }

    #[test]
    fn mean_zero_projection() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let z = Field::constant(g, 5.0).mean_zero_project();
        assert!(z.values().iter().all(|&v| v.abs() < 1e-15));
        assert!(z.is_mean_zero());
        let f = Field::new(g, random_values(8, 1)).unwrap();
        let m = f.mean();
        let p = f.mean_zero_project();
        assert!(p.mean().abs() <= 1e-12);
        for (a, b) in f.values().iter().zip(p.values()) {
            assert!((a - m - b).abs() < 1e-14);
        }
        let pp = p.mean_zero_project();
        for (a, b) in p.values().iter().zip(pp.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn inner_product_examples() {
        let g = Grid::new(2, 6, 1.0).unwrap();
        let one = Field::constant(g, 1.0);
        assert!((g.norm(&one).unwrap() - 1.0).abs() < 1e-14);
        let f = Field::new(g, random_values(36, 2)).unwrap();
        assert!((g.inner(&f, &f).unwrap() - g.norm(&f).unwrap().powi(2)).abs() < 1e-14);
        let a = Field::from_fn(g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let b = Field::from_fn(g, |x| if x[0] >= 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(g.inner(&a, &b).unwrap(), 0.0);
        let other = Grid::new(2, 7, 1.0).unwrap();
        assert!(other.inner(&a, &b).is_err());
    }

    #[test]
    fn measure_norm_examples() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let zero = g.measure_norms(&Field::zeros(g)).unwrap();
        assert_eq!((zero.total, zero.pos, zero.neg), (0.0, 0.0, 0.0));
        let lap = Field::new(g, vec![2.0, -1.0, -1.0, 0.0]).unwrap();
        let m = g.measure_norms(&lap).unwrap();
        assert_eq!((m.total, m.pos, m.neg), (1.0, 0.5, 0.5));
        let g2 = Grid::new(2, 12, 1.0).unwrap();
        let f = Field::new(g2, random_values(144, 3)).unwrap();
        let m = g2.measure_norms(&g2.laplacian(&f).unwrap()).unwrap();
        assert!((m.pos - m.neg).abs() <= 1e-10 * m.total);
    }

    #[test]
    fn biharmonic_diag_matches_column_norms() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 5, 1.0).unwrap();
            let w = random_values(g.cells(), 9).iter().map(|x| x.abs() + 0.1).collect::<Vec<_>>();
            let mut diag = vec![0.0; g.cells()];
            g.weighted_biharmonic_diag(&w, &mut diag);
            for i in 0..g.cells() {
                let mut e = vec![0.0; g.cells()];
                e[i] = 1.0;
                let mut col = vec![0.0; g.cells()];
                g.laplacian_into(&e, &mut col);
                let expect: f64 = col.iter().zip(&w).map(|(c, w)| c * c * w).sum();
                assert!((diag[i] - expect).abs() <= 1e-12 * expect);
            }
        }
    }

    /// CG on the mean-zero subspace; used only to probe the kernel.
    fn cg_solve_neg_laplacian(g: &Grid, rhs: &[f64]) -> Vec<f64> {
        let len = rhs.len();
        let mut x = vec![0.0; len];
        let mut r = rhs.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; len];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        for _ in 0..10 * len {
            if rr.sqrt() < 1e-14 {
                break;
            }
            g.laplacian_into(&p, &mut ap);
            ap.iter_mut().for_each(|v| *v = -*v);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            project_mean_zero(&mut r);
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            for i in 0..len {
                p[i] = r[i] + rr_new / rr * p[i];
            }
            rr = rr_new;
        }
        x
    }

    #[test]
    fn kernel_is_exactly_the_constants() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 8, 1.0).unwrap();
            let f = Field::new(g, random_values(g.cells(), 4)).unwrap().mean_zero_project();
            let mut lap = vec![0.0; g.cells()];
            g.laplacian_into(f.values(), &mut lap);
            lap.iter_mut().for_each(|v| *v = -*v);
            let x = cg_solve_neg_laplacian(&g, &lap);
            let diff: f64 = x.iter().zip(f.values()).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(diff.sqrt() <= 1e-9, "dim {dim}: {}", diff.sqrt());
            // Laplacian-free mean-zero field must be zero: solve with zero rhs.
            let z = cg_solve_neg_laplacian(&g, &vec![0.0; g.cells()]);
            assert!(z.iter().all(|v| v.abs() <= 1e-10));
        }
    }

    proptest! {
        #[test]
        fn laplacian_is_symmetric_nsd_and_conservative(dim in 1usize..=2, n in 4usize..20, seed in any::<u64>()) {
            let g = Grid::new(dim, n, 1.0).unwrap();
            let f = Field::new(g, random_values(g.cells(), seed)).unwrap();
            let h = Field::new(g, random_values(g.cells(), seed ^ 0xdead)).unwrap();
            let lf = g.laplacian(&f).unwrap();
            let lh = g.laplacian(&h).unwrap();
            let nf = g.norm(&f).unwrap();
            let nh = g.norm(&h).unwrap();
            let sym = g.inner(&lf, &h).unwrap() - g.inner(&f, &lh).unwrap();
            prop_assert!(sym.abs() <= 1e-10 * nf * nh);
            prop_assert!(g.inner(&lf, &f).unwrap() <= 1e-10 * nf * nf);
            let m = g.measure_norms(&lf).unwrap();
            let s: f64 = lf.values().iter().sum();
            prop_assert!(s.abs() * g.cell_volume() <= 1e-12 * m.total.max(1e-300));
            prop_assert!((m.pos - m.neg).abs() <= 1e-10 * m.total);
        }
    }
}
