//! Initial-data description, assumption checks, particle discretization and gridding.

use crate::error::{Error, Result};
use crate::geometry::{compensated_sum, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// Fluid domain. The disk variant is the unit disk centred at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    FullPlane,
    UnitDisk,
}

impl Domain {
    /// Whether `x` is strictly inside the domain.
    pub fn contains(self, x: Vec2) -> bool {
        match self {
            Domain::FullPlane => x.is_finite(),
            Domain::UnitDisk => x.is_finite() && x.norm_sq() < 1.0,
        }
    }
}

/// Radial vorticity profile of one patch, before normalization to its circulation.
///
/// `R` below is the support radius `support_radius_factor * epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// Constant on the disk of radius `R`.
    UniformDisk,
    /// `(1 - r²/R²)³` on the disk of radius `R`; C² at the edge.
    SmoothBump,
    /// Constant inside the curve `r(θ) = r₀(1 + amplitude·cos(mode·θ))`, `r₀ = R/(1+|amplitude|)`.
    PerturbedDisk { amplitude: f64, mode: u32 },
    /// Smooth bump whose level sets are the curves of [`Profile::PerturbedDisk`].
    PerturbedBump { amplitude: f64, mode: u32 },
}

impl Profile {
    fn perturbation(&self) -> Option<(f64, u32)> {
        match *self {
            Profile::PerturbedDisk { amplitude, mode } | Profile::PerturbedBump { amplitude, mode } => {
                Some((amplitude, mode))
            }
            _ => None,
        }
    }

    /// Base radius `r₀` of the profile for support radius `r`.
    fn base_radius(&self, r: f64) -> f64 {
        match self.perturbation() {
            Some((a, _)) => r / (1.0 + a.abs()),
            None => r,
        }
    }

    /// Unnormalized nonnegative shape at offset `rel` from the patch center.
    pub fn shape(&self, rel: Vec2, radius: f64) -> f64 {
        let r0 = self.base_radius(radius);
        let edge = match self.perturbation() {
            Some((a, m)) if a != 0.0 => {
                let theta = rel.y.atan2(rel.x);
                r0 * (1.0 + a * (m as f64 * theta).cos())
            }
            _ => r0,
        };
        let s2 = rel.norm_sq() / (edge * edge);
        if s2 >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::UniformDisk | Profile::PerturbedDisk { .. } => 1.0,
            Profile::SmoothBump | Profile::PerturbedBump { .. } => {
                let q = 1.0 - s2;
                q * q * q
            }
        }
    }

    /// Exact integral of [`Profile::shape`] over the plane.
    pub fn shape_integral(&self, radius: f64) -> f64 {
        let r0 = self.base_radius(radius);
        let aniso = match self.perturbation() {
            Some((a, m)) if m > 0 => 1.0 + 0.5 * a * a,
            Some((a, _)) => (1.0 + a) * (1.0 + a),
            None => 1.0,
        };
        let disk = PI * r0 * r0 * aniso;
        match self {
            Profile::UniformDisk | Profile::PerturbedDisk { .. } => disk,
            Profile::SmoothBump | Profile::PerturbedBump { .. } => disk / 4.0,
        }
    }

    /// Largest value of the shape (attained at the center).
    pub fn shape_max(&self) -> f64 {
        1.0
    }
}

/// One concentrated vortex patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexPatchSpec {
    pub center: Vec2,
    /// Circulation `a_i`.
    pub intensity: f64,
    /// Concentration scale ε.
    pub epsilon: f64,
    pub profile: Profile,
    /// Support radius in units of ε.
    #[serde(default = "one")]
    pub support_radius_factor: f64,
    /// Explicit peak vorticity. When absent the peak follows from `intensity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_vorticity: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

impl VortexPatchSpec {
    pub fn support_radius(&self) -> f64 {
        self.support_radius_factor * self.epsilon
    }

    /// Peak vorticity implied by the intensity.
    pub fn implied_peak(&self) -> f64 {
        self.intensity * self.profile.shape_max() / self.profile.shape_integral(self.support_radius())
    }

    /// Vorticity of the patch at `x`.
    pub fn vorticity(&self, x: Vec2) -> f64 {
        let r = self.support_radius();
        self.intensity * self.profile.shape(x - self.center, r) / self.profile.shape_integral(r)
    }
}

/// Complete initial configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDataSpec {
    pub domain: Domain,
    pub patches: Vec<VortexPatchSpec>,
    /// Minimal separation `b` between centers and from the boundary.
    pub separation_b: f64,
    /// Exponent β of the energy-defect assumption.
    pub beta: f64,
    /// Constant `N₃` of the energy-defect assumption.
    pub n3: f64,
    /// Support-radius constant `N₁`.
    #[serde(default = "one")]
    pub n1: f64,
    /// Peak-vorticity constant `N₂`.
    #[serde(default = "ten")]
    pub n2: f64,
}

/// Which hypothesis a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    /// Support inside `B_{N₁ε}` of the center.
    A2,
    /// Patch integral equals the intensity.
    A3,
    /// Sup bound `N₂ε⁻²`.
    A4,
    /// Nonzero intensity and matching sign.
    A5,
    /// Defect exponent range `β > 2/3`.
    A6,
    /// Separation of centers from each other and from the boundary.
    A7,
    /// Malformed parameter or placement outside the domain.
    Structure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: Assumption,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.assumption, self.message)
    }
}

/// Checks the assumptions on the initial data. An empty list means every check passed.
pub fn validate(spec: &InitialDataSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |assumption, message: String| out.push(Violation { assumption, message });

    if spec.patches.is_empty() {
        push(Assumption::Structure, "no patches".into());
    }
    if !(spec.separation_b > 0.0) {
        push(Assumption::Structure, format!("separation b = {} must be positive", spec.separation_b));
    }
    if !(spec.n1 > 0.0) || !(spec.n2 > 0.0) {
        push(Assumption::Structure, "N1 and N2 must be positive".into());
    }
    if !(spec.beta > 2.0 / 3.0) {
        push(Assumption::A6, format!("beta = {} must exceed 2/3", spec.beta));
    }

    for (i, p) in spec.patches.iter().enumerate() {
        if !(p.epsilon > 0.0) || !p.epsilon.is_finite() {
            push(Assumption::Structure, format!("patch {i}: epsilon = {} must be positive", p.epsilon));
            continue;
        }
        if !p.center.is_finite() {
            push(Assumption::Structure, format!("patch {i}: center is not finite"));
            continue;
        }
        if let Some((a, m)) = p.profile.perturbation() {
            if !(a.abs() < 1.0) || m == 0 {
                push(
                    Assumption::Structure,
                    format!("patch {i}: perturbation needs |amplitude| < 1 and mode >= 1"),
                );
                continue;
            }
        }
        if !(p.support_radius_factor > 0.0) || p.support_radius_factor > spec.n1 {
            push(
                Assumption::A2,
                format!(
                    "patch {i}: support radius factor {} not in (0, N1 = {}]",
                    p.support_radius_factor, spec.n1
                ),
            );
        }
        if p.intensity == 0.0 || !p.intensity.is_finite() {
            push(Assumption::A5, format!("patch {i}: intensity must be nonzero and finite"));
            continue;
        }
        let implied = p.implied_peak();
        let peak = match p.peak_vorticity {
            Some(v) => {
                if v == 0.0 || v.signum() != p.intensity.signum() {
                    push(
                        Assumption::A5,
                        format!("patch {i}: vorticity sign {v:+e} differs from intensity sign {:+e}", p.intensity),
                    );
                } else if (v - implied).abs() > 1e-9 * implied.abs() {
                    push(
                        Assumption::A3,
                        format!("patch {i}: peak {v:e} integrates to {:e}, not {:e}", p.intensity * v / implied, p.intensity),
                    );
                }
                v
            }
            None => implied,
        };
        let cap = spec.n2 / (p.epsilon * p.epsilon);
        if peak.abs() > cap {
            push(Assumption::A4, format!("patch {i}: |peak| {:e} exceeds N2/eps^2 = {cap:e}", peak.abs()));
        }
        if spec.domain == Domain::UnitDisk {
            let c = p.center.norm();
            if c + p.support_radius() >= 1.0 {
                push(Assumption::Structure, format!("patch {i}: support leaves the unit disk"));
            }
            if 1.0 - c < spec.separation_b {
                push(
                    Assumption::A7,
                    format!("patch {i}: distance {:.6} to the boundary is below b = {}", 1.0 - c, spec.separation_b),
                );
            }
        }
    }

    for i in 0..spec.patches.len() {
        for j in (i + 1)..spec.patches.len() {
            let d = spec.patches[i].center.dist(spec.patches[j].center);
            if !(d >= spec.separation_b) {
                push(
                    Assumption::A7,
                    format!("patches {i} and {j} are {d:.6} apart, below b = {}", spec.separation_b),
                );
            }
        }
    }
    out
}

/// Lagrangian discretization of the vorticity: one Gaussian blob per particle.
///
/// Labels are 0-based patch indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleField {
    pub positions: Vec<Vec2>,
    pub circulations: Vec<f64>,
    pub labels: Vec<usize>,
    pub blob_radius: f64,
    pub domain: Domain,
}

impl ParticleField {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0)
    }

    /// Sum of circulations carrying `label`, accumulated in particle order.
    pub fn label_circulation(&self, label: usize) -> f64 {
        compensated_sum(
            self.labels
                .iter()
                .zip(&self.circulations)
                .filter(|(&l, _)| l == label)
                .map(|(_, &g)| g),
        )
    }

    pub fn total_circulation(&self) -> f64 {
        compensated_sum(self.circulations.iter().copied())
    }

    /// Indices of particles with the given label.
    pub fn label_indices(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.labels[p] == label).collect()
    }

    /// Checks length agreement, finiteness and (disk) interior placement.
    pub fn check(&self) -> Result<()> {
        let n = self.positions.len();
        if self.circulations.len() != n || self.labels.len() != n {
            return Err(Error::InvalidParameter("particle arrays differ in length".into()));
        }
        if !(self.blob_radius > 0.0) {
            return Err(Error::InvalidParameter("blob radius must be positive".into()));
        }
        for (p, (&x, &g)) in self.positions.iter().zip(&self.circulations).enumerate() {
            if !x.is_finite() || !g.is_finite() {
                return Err(Error::InvalidParameter(format!("particle {p} is not finite")));
            }
            if self.domain == Domain::UnitDisk && x.norm_sq() >= 1.0 {
                return Err(Error::Integrity { index: p, radius: x.norm() });
            }
        }
        Ok(())
    }
}

/// Subsamples per cell side used when integrating profiles over discretization cells.
const SUBSAMPLES: i64 = 8;

/// Tiles each patch with a cell-centred lattice of spacing `h_p = R·sqrt(π/particles_per_patch)`.
///
/// Each cell whose intersection with the support is nonempty becomes one particle placed at the
/// vorticity-weighted centroid of that intersection, carrying the cell-integrated vorticity. Per-patch
/// circulations are then rescaled to the intensity. The blob radius is twice the coarsest lattice spacing.
pub fn discretize(spec: &InitialDataSpec, particles_per_patch: usize) -> Result<ParticleField> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    if particles_per_patch < 16 {
        return Err(Error::InvalidParameter(format!(
            "particles_per_patch = {particles_per_patch} is below 16"
        )));
    }
    let mut positions = Vec::new();
    let mut circulations = Vec::new();
    let mut labels = Vec::new();
    let mut coarsest = 0.0_f64;

    for (label, patch) in spec.patches.iter().enumerate() {
        let radius = patch.support_radius();
        let hp = radius * (PI / particles_per_patch as f64).sqrt();
        coarsest = coarsest.max(hp);
        let (rel, weight) = tile_patch(&patch.profile, radius, hp);
        let total = compensated_sum(weight.iter().copied());
        for (r, w) in rel.into_iter().zip(weight) {
            positions.push(patch.center + r);
            circulations.push(patch.intensity * (w / total));
            labels.push(label);
        }
    }
    let field = ParticleField { positions, circulations, labels, blob_radius: 2.0 * coarsest, domain: spec.domain };
    field.check()?;
    Ok(field)
}

/// Cell centroids (relative to the patch center) and integrated shape weights.
fn tile_patch(profile: &Profile, radius: f64, hp: f64) -> (Vec<Vec2>, Vec<f64>) {
    let n = (radius / hp).ceil() as i64 + 1;
    let step = hp / SUBSAMPLES as f64;
    let sub_area = step * step;
    let mut rel = Vec::new();
    let mut weight = Vec::new();
    for cj in -n..n {
        for ci in -n..n {
            let mut w = 0.0;
            let mut mx = 0.0;
            let mut my = 0.0;
            for sj in 0..SUBSAMPLES {
                let y = ((cj * SUBSAMPLES + sj) as f64 + 0.5) * step;
                for si in 0..SUBSAMPLES {
                    let x = ((ci * SUBSAMPLES + si) as f64 + 0.5) * step;
                    let f = profile.shape(Vec2::new(x, y), radius);
                    if f > 0.0 {
                        w += f;
                        mx += f * x;
                        my += f * y;
                    }
                }
            }
            if w > 0.0 {
                rel.push(Vec2::new(mx / w, my / w));
                weight.push(w * sub_area);
            }
        }
    }
    (rel, weight)
}

/// Uniform cell-centred grid geometry. Cell `(i, j)` covers
/// `[origin.x + i·h, origin.x + (i+1)·h] × [origin.y + j·h, origin.y + (j+1)·h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridParams {
    /// Square grid of `2·half_cells` cells per side centred at `center`.
    pub fn centered(center: Vec2, spacing: f64, half_cells: usize) -> Self {
        let w = half_cells as f64 * spacing;
        GridParams { origin: center - Vec2::new(w, w), spacing, nx: 2 * half_cells, ny: 2 * half_cells }
    }

    /// Smallest grid with spacing `h` covering `points` with `margin` extra cells on every side.
    pub fn covering(points: &[Vec2], spacing: f64, margin: usize) -> Self {
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let m = (margin + 1) as f64 * spacing;
        let origin = lo - Vec2::new(m, m);
        let nx = ((hi.x - origin.x + m) / spacing).ceil() as usize;
        let ny = ((hi.y - origin.y + m) / spacing).ceil() as usize;
        GridParams { origin, spacing, nx, ny }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new((i as f64 + 0.5) * self.spacing, (j as f64 + 0.5) * self.spacing)
    }
}

/// Nonnegative cell-averaged density, row-major (`values[j * nx + i]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriddedDensity {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl GriddedDensity {
    pub fn zeros(g: GridParams) -> Self {
        GriddedDensity { origin: g.origin, spacing: g.spacing, nx: g.nx, ny: g.ny, values: vec![0.0; g.nx * g.ny] }
    }

    pub fn params(&self) -> GridParams {
        GridParams { origin: self.origin, spacing: self.spacing, nx: self.nx, ny: self.ny }
    }

    /// Cell averages of `f`, each approximated by `sub × sub` midpoint samples.
    pub fn from_fn(g: GridParams, sub: usize, f: impl Fn(Vec2) -> f64) -> Self {
        let mut out = Self::zeros(g);
        let step = g.spacing / sub as f64;
        let norm = 1.0 / (sub * sub) as f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let lo = g.origin + Vec2::new(i as f64 * g.spacing, j as f64 * g.spacing);
                let mut s = 0.0;
                for b in 0..sub {
                    for a in 0..sub {
                        s += f(lo + Vec2::new((a as f64 + 0.5) * step, (b as f64 + 0.5) * step));
                    }
                }
                out.values[j * g.nx + i] = s * norm;
            }
        }
        out
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        self.params().cell_center(i, j)
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    /// `h² Σ values`.
    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.cell_area()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn nonzero_cells(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Mass-weighted mean of cell centers.
    pub fn center_of_mass(&self) -> Result<Vec2> {
        let mut m = crate::geometry::CompensatedSum::new();
        let mut sx = crate::geometry::CompensatedSum::new();
        let mut sy = crate::geometry::CompensatedSum::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = self.values[j * self.nx + i];
                if v != 0.0 {
                    let c = self.cell_center(i, j);
                    m.add(v);
                    sx.add(v * c.x);
                    sy.add(v * c.y);
                }
            }
        }
        if m.value() <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Vec2::new(sx.value() / m.value(), sy.value() / m.value()))
    }

    /// Nonnegativity and finiteness of every cell.
    pub fn check(&self) -> Result<()> {
        if self.values.len() != self.nx * self.ny || !(self.spacing > 0.0) {
            return Err(Error::InvalidParameter("grid shape mismatch or nonpositive spacing".into()));
        }
        if let Some(k) = self.values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("cell {k} is negative or not finite")));
        }
        Ok(())
    }
}

/// Minimal free margin, in cells, required around deposited particles.
pub const DEPOSIT_MARGIN_CELLS: usize = 4;

/// Area-weighted (cloud-in-cell) deposition of `|Γ|` for particles carrying `label`.
///
/// A particle at a cell center lands entirely in that cell; one at a cell corner is split equally four ways.
pub fn deposit(field: &ParticleField, label: usize, grid: &GridParams) -> Result<GriddedDensity> {
    let h = grid.spacing;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("grid spacing must be positive".into()));
    }
    let margin = DEPOSIT_MARGIN_CELLS as f64 * h;
    let hi = grid.origin + Vec2::new(grid.nx as f64 * h, grid.ny as f64 * h);
    let mut out = GriddedDensity::zeros(*grid);
    let inv_area = 1.0 / (h * h);
    for p in 0..field.len() {
        if field.labels[p] != label {
            continue;
        }
        let x = field.positions[p];
        if x.x - margin < grid.origin.x || x.y - margin < grid.origin.y || x.x + margin > hi.x || x.y + margin > hi.y {
            return Err(Error::GridTooSmall { margin_cells: DEPOSIT_MARGIN_CELLS });
        }
        let fx = (x.x - grid.origin.x) / h - 0.5;
        let fy = (x.y - grid.origin.y) / h - 0.5;
        let i0 = fx.floor();
        let j0 = fy.floor();
        let wx = fx - i0;
        let wy = fy - j0;
        let (i0, j0) = (i0 as usize, j0 as usize);
        let m = field.circulations[p].abs() * inv_area;
        let idx = |i: usize, j: usize| j * grid.nx + i;
        out.values[idx(i0, j0)] += m * (1.0 - wx) * (1.0 - wy);
        out.values[idx(i0 + 1, j0)] += m * wx * (1.0 - wy);
        out.values[idx(i0, j0 + 1)] += m * (1.0 - wx) * wy;
        out.values[idx(i0 + 1, j0 + 1)] += m * wx * wy;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(center: Vec2, intensity: f64, epsilon: f64, profile: Profile) -> VortexPatchSpec {
        VortexPatchSpec { center, intensity, epsilon, profile, support_radius_factor: 1.0, peak_vorticity: None }
    }

    fn pair(separation: f64) -> InitialDataSpec {
        InitialDataSpec {
            domain: Domain::FullPlane,
            patches: vec![
                patch(Vec2::new(-separation / 2.0, 0.0), 1.0, 0.05, Profile::UniformDisk),
                patch(Vec2::new(separation / 2.0, 0.0), 1.0, 0.05, Profile::UniformDisk),
            ],
            separation_b: 1.0,
            beta: 1.0,
            n3: 1.0,
            n1: 1.0,
            n2: 10.0,
        }
    }

    #[test]
    fn well_separated_pair_is_valid() {
        assert!(validate(&pair(2.0)).is_empty());
    }

    #[test]
    fn close_pair_violates_separation() {
        let v = validate(&pair(0.02));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].assumption, Assumption::A7);
    }

    #[test]
    fn negative_profile_for_positive_intensity_violates_sign() {
        let mut s = pair(2.0);
        s.patches[0].peak_vorticity = Some(-1.0);
        let v = validate(&s);
        assert!(v.iter().any(|v| v.assumption == Assumption::A5));
    }

    #[test]
    fn small_beta_flagged() {
        let mut s = pair(2.0);
        s.beta = 0.5;
        let v = validate(&s);
        assert_eq!(v[0].assumption, Assumption::A6);
        assert!(v[0].to_string().contains("2/3"));
    }

    #[test]
    fn peak_bound_and_support_factor() {
        let mut s = pair(2.0);
        s.n2 = 0.1;
        assert!(validate(&s).iter().any(|v| v.assumption == Assumption::A4));
        let mut s = pair(2.0);
        s.patches[1].support_radius_factor = 2.0;
        assert!(validate(&s).iter().any(|v| v.assumption == Assumption::A2));
    }

    #[test]
    fn disk_boundary_separation() {
        let mut s = pair(1.0);
        s.domain = Domain::UnitDisk;
        s.separation_b = 0.4;
        assert!(validate(&s).is_empty());
        s.separation_b = 0.6;
        assert!(validate(&s).iter().any(|v| v.assumption == Assumption::A7));
    }

    #[test]
    fn shape_integrals_match_quadrature() {
        let profiles = [
            Profile::UniformDisk,
            Profile::SmoothBump,
            Profile::PerturbedDisk { amplitude: 0.2, mode: 3 },
            Profile::PerturbedBump { amplitude: 0.15, mode: 2 },
        ];
        let r = 0.3;
        let n = 1200;
        let step = 2.0 * r / n as f64;
        for p in profiles {
            let mut s = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let x = Vec2::new(-r + (i as f64 + 0.5) * step, -r + (j as f64 + 0.5) * step);
                    s += p.shape(x, r);
                }
            }
            s *= step * step;
            let exact = p.shape_integral(r);
            assert!((s - exact).abs() < 2e-3 * exact, "{p:?}: {s} vs {exact}");
        }
    }

    #[test]
    fn discretized_circulation_is_normalized() {
        let mut s = pair(2.0);
        s.patches[0].epsilon = 0.1;
        s.patches[1].intensity = -0.7;
        let f = discretize(&s, 400).unwrap();
        assert!((f.label_circulation(0) - 1.0).abs() < 1e-12);
        assert!((f.label_circulation(1) + 0.7).abs() < 1e-12);
        assert_eq!(f.n_labels(), 2);
        let n0 = f.labels.iter().filter(|&&l| l == 0).count();
        assert!((350..=480).contains(&n0), "{n0} particles");
    }

    #[test]
    fn zero_amplitude_perturbation_reproduces_uniform_disk() {
        let s = pair(2.0);
        let mut t = s.clone();
        for p in &mut t.patches {
            p.profile = Profile::PerturbedDisk { amplitude: 0.0, mode: 3 };
        }
        assert_eq!(discretize(&s, 300).unwrap(), discretize(&t, 300).unwrap());
    }

    #[test]
    fn deposit_at_center_and_corner() {
        let g = GridParams { origin: Vec2::ZERO, spacing: 0.5, nx: 12, ny: 12 };
        let field = ParticleField {
            positions: vec![g.cell_center(5, 6)],
            circulations: vec![1.0],
            labels: vec![0],
            blob_radius: 0.1,
            domain: Domain::FullPlane,
        };
        let d = deposit(&field, 0, &g).unwrap();
        assert_eq!(d.values[6 * 12 + 5], 4.0);
        assert_eq!(d.nonzero_cells(), 1);

        let corner = Vec2::new(3.0, 3.0);
        let field = ParticleField { positions: vec![corner], ..field };
        let d = deposit(&field, 0, &g).unwrap();
        for (i, j) in [(5, 5), (6, 5), (5, 6), (6, 6)] {
            assert_eq!(d.values[j * 12 + i], 1.0);
        }
        assert_eq!(d.mass(), 1.0);
    }

    #[test]
    fn deposit_rejects_small_grid() {
        let field = ParticleField {
            positions: vec![Vec2::new(0.2, 0.2)],
            circulations: vec![1.0],
            labels: vec![0],
            blob_radius: 0.1,
            domain: Domain::FullPlane,
        };
        let g = GridParams { origin: Vec2::ZERO, spacing: 0.1, nx: 20, ny: 20 };
        assert!(matches!(deposit(&field, 0, &g), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn deposited_patch_conserves_mass() {
        let s = pair(2.0);
        let f = discretize(&s, 500).unwrap();
        let idx = f.label_indices(1);
        let pts: Vec<Vec2> = idx.iter().map(|&p| f.positions[p]).collect();
        let g = GridParams::covering(&pts, 0.01, DEPOSIT_MARGIN_CELLS);
        let d = deposit(&f, 1, &g).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-10);
    }
}
