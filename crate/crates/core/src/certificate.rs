//! Stability certificate for the energy defect: close/far split of a density, Wasserstein
//! closeness of the close part to its rearrangement, and the logarithmic moment of the far part.

use crate::energy::{clusters, LatticeCell, LatticeDensity};
use crate::error::{Error, Result};
use crate::geometry::{compensated_sum, Vec2};
use crate::model::GriddedDensity;
use crate::transport::{quantize_lattice, transport_cost_exact};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Normalized defect (defect / mass²) above which a certificate is flagged out of regime.
pub const REGIME_GATE: f64 = 0.1;

/// Radius margin, in units of `R₀`, added to `D` for the pigeonhole ball.
pub const PIGEONHOLE_MARGIN: f64 = 0.01;

/// Close part: `ρ` restricted to `B_{SPLIT_FACTOR·D}(x₀)`.
pub const SPLIT_FACTOR: f64 = 3.0;

/// Support cap of the quantized clouds entering the exact transport solver.
pub const CERTIFICATE_MAX_POINTS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub mass: f64,
    pub sup: f64,
    /// `R₀ = sqrt(mass / sup)`.
    pub r0: f64,
    /// `ℰ(ρ*) − ℰ(ρ)`.
    pub defect: f64,
    pub defect_bound: f64,
    /// Diameter of the support of `ρ*`.
    pub d_star: f64,
    pub x0: Vec2,
    /// Fraction of the mass within `D + PIGEONHOLE_MARGIN·R₀` of `x₀`.
    pub x0_mass_fraction: f64,
    pub y0: Vec2,
    pub split_radius: f64,
    pub mass_close: f64,
    pub mass_far: f64,
    /// `W₂²(ρᶜ, (ρᶜ)*)` with `(ρᶜ)*` centred at `y₀`.
    pub w2_sq_close: f64,
    /// `∫ ρᶠ |ln(|x − y₀| / D)|`.
    pub far_log_moment: f64,
    /// Defect / mass² (scale-free).
    pub normalized_defect: f64,
    /// `(defect/m²) / (W₂²/(m R₀²))`, `None` when the denominator vanishes.
    pub ratio_t22: Option<f64>,
    /// `(defect/m²) / (far_log_moment/m)`, `None` when the denominator vanishes.
    pub ratio_t24: Option<f64>,
    /// `max |x − y₀|` over the close support, divided by `D`.
    pub supp_radius_ratio: f64,
    pub in_regime: bool,
}

/// The close/far decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub close: LatticeDensity,
    pub far: LatticeDensity,
    pub x0: Vec2,
    pub x0_mass_fraction: f64,
    pub d_star: f64,
    pub r0: f64,
    pub split_radius: f64,
}

fn check_density(density: &LatticeDensity) -> Result<()> {
    if !(density.spacing > 0.0) {
        return Err(Error::InvalidParameter("spacing must be positive".into()));
    }
    if density.cells.iter().any(|c| !(c.value.is_finite() && c.value >= 0.0)) {
        return Err(Error::InvalidParameter("density must be finite and nonnegative".into()));
    }
    if !(density.mass() > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(())
}

/// Row prefix sums of one dense cluster of cells: mass and mass-weighted offsets from the block corner.
struct PrefixBlock {
    ix0: i64,
    iy0: i64,
    width: i64,
    height: i64,
    /// `height × (width + 1)` running sums along each row, three channels per entry.
    prefix: Vec<[f64; 3]>,
}

impl PrefixBlock {
    fn row_sum(&self, iy: i64, lo: i64, hi: i64) -> [f64; 3] {
        if iy < self.iy0 || iy >= self.iy0 + self.height {
            return [0.0; 3];
        }
        let lo = (lo - self.ix0).max(0);
        let hi = (hi - self.ix0 + 1).min(self.width);
        if lo >= hi {
            return [0.0; 3];
        }
        let row = ((iy - self.iy0) * (self.width + 1)) as usize;
        let (a, b) = (self.prefix[row + lo as usize], self.prefix[row + hi as usize]);
        [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
    }
}

fn prefix_blocks(density: &LatticeDensity) -> Vec<PrefixBlock> {
    let a = density.spacing * density.spacing;
    let cells: Vec<(i64, i64, f64)> = density.cells.iter().filter(|c| c.value > 0.0).map(|c| (c.ix, c.iy, c.value * a)).collect();
    clusters(&cells, 16)
        .into_iter()
        .map(|group| {
            let ix0 = group.iter().map(|&k| cells[k].0).min().unwrap();
            let ix1 = group.iter().map(|&k| cells[k].0).max().unwrap();
            let iy0 = group.iter().map(|&k| cells[k].1).min().unwrap();
            let iy1 = group.iter().map(|&k| cells[k].1).max().unwrap();
            let (width, height) = (ix1 - ix0 + 1, iy1 - iy0 + 1);
            let mut raw = vec![0.0; (width * height) as usize];
            for &k in &group {
                let (ix, iy, w) = cells[k];
                raw[((iy - iy0) * width + ix - ix0) as usize] += w;
            }
            let stride = width as usize + 1;
            let mut prefix = vec![[0.0; 3]; height as usize * stride];
            for r in 0..height as usize {
                for c in 0..width as usize {
                    let w = raw[r * width as usize + c];
                    let p = prefix[r * stride + c];
                    prefix[r * stride + c + 1] = [p[0] + w, p[1] + w * c as f64, p[2] + w * r as f64];
                }
            }
            PrefixBlock { ix0, iy0, width, height, prefix }
        })
        .collect()
}

/// Mass in cells whose centres lie within `radius_cells` of cell `(cx, cy)`, and the mass-weighted
/// mean cell offset from `(cx, cy)`.
fn ball_mass(blocks: &[PrefixBlock], cx: i64, cy: i64, radius_cells: f64) -> (f64, Vec2) {
    let reach = radius_cells.floor() as i64;
    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for b in blocks {
        if cx + reach < b.ix0 || cx - reach >= b.ix0 + b.width || cy + reach < b.iy0 || cy - reach >= b.iy0 + b.height {
            continue;
        }
        let lo_row = (cy - reach).max(b.iy0);
        let hi_row = (cy + reach).min(b.iy0 + b.height - 1);
        for iy in lo_row..=hi_row {
            let dy = (iy - cy) as f64;
            let half = (radius_cells * radius_cells - dy * dy).max(0.0).sqrt().floor() as i64;
            let [w, wx, wy] = b.row_sum(iy, cx - half, cx + half);
            m += w;
            mx += wx + w * (b.ix0 - cx) as f64;
            my += wy + w * (b.iy0 - cy) as f64;
        }
    }
    let offset = if m > 0.0 { Vec2::new(mx / m, my / m) } else { Vec2::ZERO };
    (m, offset)
}

/// Cell centre `x₀` maximizing the mass within `D + PIGEONHOLE_MARGIN·R₀`. Returns the point and
/// the captured mass fraction.
///
/// Candidates within `1e-12` relative of the maximum count as tied (a ball of radius `D` often
/// captures everything from a whole plateau of centres); among them the one nearest the centroid
/// of the first maximizer's ball wins, then the smallest row-major index.
pub fn pigeonhole_center(density: &LatticeDensity) -> Result<(Vec2, f64)> {
    check_density(density)?;
    let d_star = density.rearranged().support_diameter();
    let radius = d_star + PIGEONHOLE_MARGIN * density.r0();
    let blocks = prefix_blocks(density);
    let radius_cells = radius / density.spacing;
    let mut candidates: Vec<&LatticeCell> = density.cells.iter().filter(|c| c.value > 0.0).collect();
    candidates.sort_by_key(|c| (c.iy, c.ix));
    let balls: Vec<(f64, Vec2)> = candidates.par_iter().map(|c| ball_mass(&blocks, c.ix, c.iy, radius_cells)).collect();
    let total = density.mass();
    let max = balls.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let tied = |k: usize| balls[k].0 >= max - 1e-12 * total;
    let first = (0..balls.len()).find(|&k| tied(k)).unwrap();
    let (fx, fy) = (candidates[first].ix as f64 + balls[first].1.x, candidates[first].iy as f64 + balls[first].1.y);
    let mut best = first;
    let mut best_dist = f64::INFINITY;
    for k in (0..balls.len()).filter(|&k| tied(k)) {
        let d = (candidates[k].ix as f64 - fx).powi(2) + (candidates[k].iy as f64 - fy).powi(2);
        if d < best_dist {
            best_dist = d;
            best = k;
        }
    }
    Ok((density.cell_center(candidates[best]), balls[best].0 / total))
}

/// `ρᶜ = ρ·1_{B_{3D}(x₀)}`, `ρᶠ = ρ − ρᶜ` by cell centres.
pub fn split(density: &LatticeDensity) -> Result<Split> {
    check_density(density)?;
    let d_star = density.rearranged().support_diameter();
    let (x0, x0_mass_fraction) = pigeonhole_center(density)?;
    let split_radius = SPLIT_FACTOR * d_star;
    let (mut close, mut far) = (Vec::new(), Vec::new());
    for c in density.cells.iter().filter(|c| c.value > 0.0) {
        if density.cell_center(c).dist(x0) <= split_radius {
            close.push(*c);
        } else {
            far.push(*c);
        }
    }
    let with = |cells| LatticeDensity { origin: density.origin, spacing: density.spacing, cells };
    Ok(Split { close: with(close), far: with(far), x0, x0_mass_fraction, d_star, r0: density.r0(), split_radius })
}

/// `Σ h² ρᶠ_c |ln(|x_c − y₀| / d_star)|`.
pub fn far_log_moment(far: &LatticeDensity, y0: Vec2, d_star: f64) -> Result<f64> {
    if !(d_star > 0.0) {
        return Err(Error::InvalidParameter("d_star must be positive".into()));
    }
    let a = far.spacing * far.spacing;
    Ok(compensated_sum(far.cells.iter().map(|c| a * c.value * (far.cell_center(c).dist(y0) / d_star).ln().abs())))
}

/// Certificate of a gridded density.
pub fn certify(grid: &GriddedDensity) -> Result<StabilityCertificate> {
    grid.check()?;
    certify_lattice(&LatticeDensity::from(grid))
}

/// Certificate of a sparse lattice density.
pub fn certify_lattice(density: &LatticeDensity) -> Result<StabilityCertificate> {
    check_density(density)?;
    let report = density.defect()?;
    let parts = split(density)?;
    let mass = density.mass();
    let r0 = parts.r0;
    let y0 = parts.close.center_of_mass()?;
    let close_star = parts.close.rearranged_about(y0);
    let mu = quantize_lattice(&parts.close, CERTIFICATE_MAX_POINTS)?;
    let nu = quantize_lattice(&close_star, CERTIFICATE_MAX_POINTS)?;
    let w2_sq_close = transport_cost_exact(&mu, &nu, 2)?;
    let far_log_moment = if parts.far.cells.is_empty() { 0.0 } else { far_log_moment(&parts.far, y0, parts.d_star)? };
    let max_close = parts.close.cells.iter().map(|c| parts.close.cell_center(c).dist(y0)).fold(0.0, f64::max);
    let normalized_defect = report.defect / (mass * mass);
    let w2_normalized = w2_sq_close / (mass * r0 * r0);
    let far_normalized = far_log_moment / mass;
    Ok(StabilityCertificate {
        mass,
        sup: density.sup(),
        r0,
        defect: report.defect,
        defect_bound: report.quadrature_error_bound,
        d_star: parts.d_star,
        x0: parts.x0,
        x0_mass_fraction: parts.x0_mass_fraction,
        y0,
        split_radius: parts.split_radius,
        mass_close: parts.close.mass(),
        mass_far: if parts.far.cells.is_empty() { 0.0 } else { parts.far.mass() },
        w2_sq_close,
        far_log_moment,
        normalized_defect,
        ratio_t22: (w2_normalized > 0.0).then(|| normalized_defect / w2_normalized),
        ratio_t24: (far_normalized > 0.0).then(|| normalized_defect / far_normalized),
        supp_radius_ratio: max_close / parts.d_star,
        in_regime: normalized_defect <= REGIME_GATE,
    })
}
