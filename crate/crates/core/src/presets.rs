//! Initial-condition presets. Every preset is returned mean-zero; the
//! removed mean is logged.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Preset {
    /// `amplitude · cos(kπx/L)`, constant in `y`.
    Cosine { k: usize, amplitude: f64 },
    GaussianBump { center: [f64; 2], width: f64, amplitude: f64 },
    /// `slope · |x − center|`, whose Laplacian concentrates at the tip.
    Cone { center: [f64; 2], slope: f64 },
    /// Random cosine modes up to `max_mode` per axis, scaled so `max |u| = amplitude`.
    RandomBandlimited { max_mode: usize, amplitude: f64, seed: u64 },
    /// One value per line, row-major.
    FromFile { path: PathBuf },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cosine { .. } => "cosine",
            Self::GaussianBump { .. } => "gaussian_bump",
            Self::Cone { .. } => "cone",
            Self::RandomBandlimited { .. } => "random_bandlimited",
            Self::FromFile { .. } => "from_file",
        }
    }

    pub fn build(&self, grid: Grid) -> Result<Field> {
        let raw = match self {
            Self::Cosine { k, amplitude } => {
                let (k, a, l) = (*k as f64, *amplitude, grid.length());
                Field::from_fn(grid, |x| a * (k * PI * x[0] / l).cos())?
            }
            Self::GaussianBump { center, width, amplitude } => {
                if !(*width > 0.0) {
                    return Err(Error::Precondition("gaussian width must be positive".into()));
                }
                let r2 = radius2(grid, *center);
                Field::from_fn(grid, |x| amplitude * (-r2(x) / (2.0 * width * width)).exp())?
            }
            Self::Cone { center, slope } => {
                let r2 = radius2(grid, *center);
                Field::from_fn(grid, |x| slope * r2(x).sqrt())?
            }
            Self::RandomBandlimited { max_mode, amplitude, seed } => random_bandlimited(grid, *max_mode, *amplitude, *seed)?,
            Self::FromFile { path } => {
                let text = std::fs::read_to_string(path)?;
                let values = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .enumerate()
                    .map(|(i, l)| {
                        l.parse::<f64>()
                            .map_err(|e| Error::Config(format!("{}: line {}: {e}", path.display(), i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Field::new(grid, values)?
            }
        };
        let mean = raw.mean();
        if mean != 0.0 {
            log::info!("{}: removed mean {mean:e}", self.name());
        }
        Ok(raw.mean_zero_project())
    }
}

fn radius2(grid: Grid, center: [f64; 2]) -> impl Fn([f64; 2]) -> f64 {
    let dim = grid.dim();
    move |x| {
        let dx = x[0] - center[0];
        let dy = if dim == 2 { x[1] - center[1] } else { 0.0 };
        dx * dx + dy * dy
    }
}

fn random_bandlimited(grid: Grid, max_mode: usize, amplitude: f64, seed: u64) -> Result<Field> {
    if max_mode == 0 {
        return Err(Error::Precondition("max_mode must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ky_max = if grid.dim() == 2 { max_mode } else { 0 };
    let mut modes = Vec::new();
    for kx in 0..=max_mode {
        for ky in 0..=ky_max {
            if kx + ky > 0 {
                modes.push((kx as f64, ky as f64, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let l = grid.length();
    let f = Field::from_fn(grid, |x| {
        modes
            .iter()
            .map(|&(kx, ky, c)| c * (kx * PI * x[0] / l).cos() * (ky * PI * x[1] / l).cos())
            .sum()
    })?;
    let peak = f.max().max(-f.min());
    if peak == 0.0 {
        return Ok(f);
    }
    Ok(f.scaled(amplitude / peak))
}

/// `count` reproducible band-limited mean-zero fields.
pub fn test_battery(grid: Grid, count: usize, amplitude: f64, seed: u64) -> Vec<Field> {
    (0..count as u64)
        .map(|i| {
            random_bandlimited(grid, 4, amplitude, seed.wrapping_add(i))
                .expect("valid parameters")
                .mean_zero_project()
        })
        .collect()
}
