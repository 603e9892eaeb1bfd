//! Density inputs and seeded random density families.

use crate::error::{HarnessError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use vortexlab_core::energy::{LatticeCell, LatticeDensity};
use vortexlab_core::{GridParams, GriddedDensity, Vec2};

/// Compact bump `height · (1 − |x−c|²/r²)³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec2,
    pub radius: f64,
    pub height: f64,
}

impl Bump {
    pub fn value(&self, x: Vec2) -> f64 {
        let s = (x - self.center).norm_sq() / (self.radius * self.radius);
        if s < 1.0 { self.height * (1.0 - s).powi(3) } else { 0.0 }
    }
}

/// One density given in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityInput {
    /// Explicit grid.
    Grid { name: String, grid: GriddedDensity },
    /// Grid stored as JSON in another file.
    GridFile { name: String, path: PathBuf },
    /// Sum of bumps sampled on a grid.
    Bumps { name: String, grid: GridParams, bumps: Vec<Bump> },
    /// Indicator of `B₁(0) ∪ B_s(s⁻¹⁰ e₁)` on a lattice of spacing `s / cells_per_s`.
    TwoBall { name: String, s: f64, cells_per_s: f64 },
}

impl DensityInput {
    pub fn name(&self) -> &str {
        match self {
            DensityInput::Grid { name, .. }
            | DensityInput::GridFile { name, .. }
            | DensityInput::Bumps { name, .. }
            | DensityInput::TwoBall { name, .. } => name,
        }
    }

    pub fn load(&self) -> Result<LatticeDensity> {
        Ok(match self {
            DensityInput::Grid { grid, .. } => {
                grid.check()?;
                LatticeDensity::from(grid)
            }
            DensityInput::GridFile { path, .. } => {
                let grid: GriddedDensity = crate::config::load(path)?;
                grid.check()?;
                LatticeDensity::from(&grid)
            }
            DensityInput::Bumps { grid, bumps, .. } => LatticeDensity::from(&bump_grid(*grid, bumps)),
            DensityInput::TwoBall { s, cells_per_s, .. } => {
                if !(*s > 0.0 && *s < 1.0 && *cells_per_s >= 1.0) {
                    return Err(HarnessError::Validation(vec![format!("two_ball needs 0 < s < 1 and cells_per_s ≥ 1")]));
                }
                two_ball(*s, s / cells_per_s)?
            }
        })
    }
}

pub fn bump_grid(grid: GridParams, bumps: &[Bump]) -> GriddedDensity {
    GriddedDensity::from_fn(grid, 2, |x| bumps.iter().map(|b| b.value(x)).sum())
}

/// Fraction of the cell `[x, x+h] × [y, y+h]` inside the disk, by 8×8 subsampling.
fn disk_coverage(x: f64, y: f64, h: f64, center: Vec2, r: f64) -> f64 {
    let mut inside = 0;
    for a in 0..8 {
        for b in 0..8 {
            let p = Vec2::new(x + (a as f64 + 0.5) * h / 8.0, y + (b as f64 + 0.5) * h / 8.0);
            if p.dist(center) < r {
                inside += 1;
            }
        }
    }
    inside as f64 / 64.0
}

fn disk_cells(center_cells: (i64, i64), offset: Vec2, r: f64, h: f64, out: &mut Vec<LatticeCell>) {
    // Cells indexed relative to `center_cells`; `offset` is the disk centre inside that cell frame.
    let reach = (r / h).ceil() as i64 + 1;
    for j in -reach..=reach {
        for i in -reach..=reach {
            let v = disk_coverage(i as f64 * h, j as f64 * h, h, offset, r);
            if v > 0.0 {
                out.push(LatticeCell { ix: center_cells.0 + i, iy: center_cells.1 + j, value: v });
            }
        }
    }
}

/// Indicator of `B₁(0) ∪ B_s(s⁻¹⁰ e₁)` with cell averages from subsampling.
pub fn two_ball(s: f64, spacing: f64) -> Result<LatticeDensity> {
    let mut cells = Vec::new();
    disk_cells((0, 0), Vec2::ZERO, 1.0, spacing, &mut cells);
    let far = s.powi(-10) / spacing;
    if !(far < 2f64.powi(53)) {
        return Err(HarnessError::Validation(vec![format!("two_ball: offset {far:e} cells exceeds exact integer range")]));
    }
    let base = far.floor();
    disk_cells((base as i64, 0), Vec2::new((far - base) * spacing, 0.0), s, spacing, &mut cells);
    Ok(LatticeDensity { origin: Vec2::ZERO, spacing, cells })
}

/// Random mixture of 1–4 bumps on a 64×64 grid of spacing 1/16.
pub fn random_mixture(rng: &mut ChaCha8Rng) -> GriddedDensity {
    let grid = GridParams { origin: Vec2::ZERO, spacing: 1.0 / 16.0, nx: 64, ny: 64 };
    let k = rng.gen_range(1..=4);
    let bumps: Vec<Bump> = (0..k)
        .map(|_| Bump {
            center: Vec2::new(rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0)),
            radius: rng.gen_range(0.25..0.9),
            height: rng.gen_range(0.2..1.0),
        })
        .collect();
    bump_grid(grid, &bumps)
}

/// The 100 seeded Riesz-check densities.
pub fn riesz_corpus(seed: u64, count: usize) -> Vec<GriddedDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_mixture(&mut rng)).collect()
}

/// A certificate-corpus member: name, family and density.
#[derive(Clone, Debug)]
pub struct CorpusMember {
    pub name: String,
    pub family: &'static str,
    pub density: LatticeDensity,
}

/// Near-radial member: a unit disk or bump with boundary/angle perturbation `1 + A cos(mθ)`.
fn near_radial(rng: &mut ChaCha8Rng) -> GriddedDensity {
    let h = 1.0 / 16.0;
    let grid = GridParams { origin: Vec2::new(-1.5, -1.5), spacing: h, nx: 48, ny: 48 };
    let amplitude = rng.gen_range(0.0..0.25);
    let mode = rng.gen_range(2..=5) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let center = Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * h;
    let smooth = rng.gen_bool(0.5);
    let r0 = 1.0 / (1.0 + amplitude);
    GriddedDensity::from_fn(grid, 4, move |x| {
        let d = x - center;
        let theta = d.y.atan2(d.x);
        let edge = r0 * (1.0 + amplitude * (mode * theta + phase).cos());
        let s = d.norm() / edge;
        if s >= 1.0 {
            0.0
        } else if smooth {
            (1.0 - s * s).powi(3)
        } else {
            1.0
        }
    })
}

/// Two-component member: a unit bump plus a small bump at distance `L ∈ [1.5, 9]`.
fn two_component(rng: &mut ChaCha8Rng) -> GriddedDensity {
    let h = 1.0 / 12.0;
    let distance = rng.gen_range(1.5..9.0);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let small = Bump {
        center: Vec2::new(distance * angle.cos(), distance * angle.sin()),
        radius: rng.gen_range(0.15..0.4),
        height: rng.gen_range(0.3..1.0),
    };
    let main = Bump { center: Vec2::ZERO, radius: 1.0, height: 1.0 };
    let half = ((distance + 1.5) / h).ceil() as usize;
    let grid = GridParams::centered(Vec2::ZERO, h, half);
    bump_grid(grid, &[main, small])
}

/// Certificate corpus: alternating near-radial and two-component members.
pub fn certificate_corpus(seed: u64, size: usize) -> Vec<CorpusMember> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|k| {
            let (family, grid) = if k % 2 == 0 { ("near_radial", near_radial(&mut rng)) } else { ("two_component", two_component(&mut rng)) };
            CorpusMember { name: format!("seed{seed}-{k:03}"), family, density: LatticeDensity::from(&grid) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ball_masses() {
        let d = two_ball(0.2, 0.02).unwrap();
        let m = d.mass();
        let exact = std::f64::consts::PI * (1.0 + 0.04);
        assert!((m - exact).abs() < 2e-3 * exact, "{m} vs {exact}");
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = certificate_corpus(3, 4);
        let b = certificate_corpus(3, 4);
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.density, y.density);
        }
    }
}
