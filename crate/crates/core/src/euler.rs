//! Lagrangian vortex-blob solver with Gaussian-regularized Biot–Savart kernel.

use crate::error::{Error, Result};
use crate::geometry::{CompensatedSum, Vec2};
use crate::model::{Domain, ParticleField};
use crate::special::{ein, exp_integral_e1, EULER_GAMMA};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const INV_2PI: f64 = 0.5 / PI;

/// `|r|²/δ²` beyond which `e^{−|r|²/δ²}` is below half an ulp of 1 and the kernel is exactly singular.
pub const GAUSSIAN_CUTOFF: f64 = 40.0;

/// Gaussian blob kernel `K_δ(r) = r⊥/(2π|r|²) (1 − e^{−|r|²/δ²})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobKernel {
    pub delta: f64,
}

impl BlobKernel {
    pub fn gaussian(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("blob radius {delta} must be positive")));
        }
        Ok(BlobKernel { delta })
    }

    /// Velocity induced at offset `r` by a unit-circulation blob.
    pub fn velocity(&self, r: Vec2) -> Vec2 {
        let r2 = r.norm_sq();
        if r2 == 0.0 {
            return Vec2::ZERO;
        }
        let z = r2 / (self.delta * self.delta);
        let shield = if z > GAUSSIAN_CUTOFF { 1.0 } else { -(-z).exp_m1() };
        r.perp() * (INV_2PI * shield / r2)
    }

    /// Streamfunction of a unit blob, `−(1/2π)(ln|r| + ½E₁(|r|²/δ²))`, finite at `r = 0`.
    pub fn streamfunction(&self, r2: f64) -> f64 {
        let d2 = self.delta * self.delta;
        let z = r2 / d2;
        if z > GAUSSIAN_CUTOFF {
            -0.25 / PI * r2.ln()
        } else if z < 1.0 {
            // ln r + ½E₁(z) = ln δ − γ/2 + ½Ein(z)
            -INV_2PI * (self.delta.ln() - 0.5 * EULER_GAMMA + 0.5 * ein(z))
        } else {
            -INV_2PI * (0.5 * r2.ln() + 0.5 * exp_integral_e1(z))
        }
    }
}

/// Velocity evaluation strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluator {
    #[default]
    Direct,
    /// Quadtree with a far field expanded through the quadrupole term and opening angle `theta`.
    BarnesHut { theta: f64 },
}

const LANES: usize = 8;
const BLOCK: usize = 64;

/// Branch-free `e^x` for `x ≤ 0`, clamped at `x = −40` (where `1 − e^x` rounds to 1).
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const MAGIC: f64 = 6_755_399_441_055_744.0;
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = if x < -GAUSSIAN_CUTOFF { -GAUSSIAN_CUTOFF } else { x };
    let t = x * std::f64::consts::LOG2_E + MAGIC;
    let k = t - MAGIC;
    let r = x - k * LN2_HI - k * LN2_LO;
    let ki = (t.to_bits() as i64).wrapping_sub(MAGIC.to_bits() as i64);
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(((ki + 1023) as u64) << 52)
}

/// Sources in structure-of-arrays layout, Morton-sorted and padded to whole blocks.
struct SourceBlocks {
    x: Vec<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
    /// Per block: (min x, min y, max x, max y).
    bbox: Vec<[f64; 4]>,
}

fn interleave(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

/// Source order along a Morton curve of the bounding box; ties keep input order.
fn morton_order(pos: &[Vec2]) -> Vec<usize> {
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pos {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
    let scale = 65535.0 / span;
    let mut keyed: Vec<(u64, usize)> = pos
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let ix = ((p.x - lo.x) * scale) as u32;
            let iy = ((p.y - lo.y) * scale) as u32;
            (interleave(ix) | (interleave(iy) << 1), k)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, k)| k).collect()
}

impl SourceBlocks {
    fn new(pos: &[Vec2], circ: &[f64]) -> Self {
        let order = morton_order(pos);
        let n = pos.len();
        let padded = n.div_ceil(BLOCK) * BLOCK;
        let mut x = Vec::with_capacity(padded);
        let mut y = Vec::with_capacity(padded);
        let mut g = Vec::with_capacity(padded);
        for &k in &order {
            x.push(pos[k].x);
            y.push(pos[k].y);
            g.push(circ[k]);
        }
        let mut bbox = Vec::with_capacity(padded / BLOCK);
        for b in 0..padded / BLOCK {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(n);
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for k in start..end {
                bb[0] = bb[0].min(x[k]);
                bb[1] = bb[1].min(y[k]);
                bb[2] = bb[2].max(x[k]);
                bb[3] = bb[3].max(y[k]);
            }
            bbox.push(bb);
            // Padding copies the block's first source with zero circulation.
            for _ in end..start + BLOCK {
                x.push(x[start]);
                y.push(y[start]);
                g.push(0.0);
            }
        }
        SourceBlocks { x, y, g, bbox }
    }
}

#[inline(always)]
fn blob_sum_generic(tx: f64, ty: f64, s: &SourceBlocks, inv_d2: f64, cut2: f64) -> (f64, f64) {
    let mut ax = [0.0_f64; LANES];
    let mut ay = [0.0_f64; LANES];
    for (b, bb) in s.bbox.iter().enumerate() {
        let ex = (bb[0] - tx).max(tx - bb[2]).max(0.0);
        let ey = (bb[1] - ty).max(ty - bb[3]).max(0.0);
        let range = b * BLOCK..(b + 1) * BLOCK;
        let (xs, ys, gs) = (&s.x[range.clone()], &s.y[range.clone()], &s.g[range]);
        let chunks = xs.chunks_exact(LANES).zip(ys.chunks_exact(LANES)).zip(gs.chunks_exact(LANES));
        if ex * ex + ey * ey > cut2 {
            for ((cx, cy), cg) in chunks {
                for l in 0..LANES {
                    let dx = tx - cx[l];
                    let dy = ty - cy[l];
                    let f = cg[l] / (dx * dx + dy * dy);
                    ax[l] -= f * dy;
                    ay[l] += f * dx;
                }
            }
        } else {
            for ((cx, cy), cg) in chunks {
                for l in 0..LANES {
                    let dx = tx - cx[l];
                    let dy = ty - cy[l];
                    let r2 = dx * dx + dy * dy;
                    let shield = 1.0 - exp_nonpositive(-r2 * inv_d2);
                    let f = cg[l] * shield / (r2 + 1e-300);
                    ax[l] -= f * dy;
                    ay[l] += f * dx;
                }
            }
        }
    }
    lane_total(&ax, &ay)
}

#[inline(always)]
fn lane_total(ax: &[f64; LANES], ay: &[f64; LANES]) -> (f64, f64) {
    let (mut sx, mut sy) = (0.0, 0.0);
    for l in 0..LANES {
        sx += ax[l];
        sy += ay[l];
    }
    (sx, sy)
}

/// Image (reflection) velocity `Σ −Γ_p ∇⊥ₓγ(x, x_p)` times 2π.
#[inline(always)]
fn image_sum_generic(tx: f64, ty: f64, s: &SourceBlocks) -> (f64, f64) {
    let mut ax = [0.0_f64; LANES];
    let mut ay = [0.0_f64; LANES];
    let t2 = tx * tx + ty * ty;
    let chunks = s.x.chunks_exact(LANES).zip(s.y.chunks_exact(LANES)).zip(s.g.chunks_exact(LANES));
    for ((cx, cy), cg) in chunks {
        for l in 0..LANES {
            let (px, py) = (cx[l], cy[l]);
            let p2 = px * px + py * py;
            let dx = tx - px;
            let dy = ty - py;
            let q = dx * dx + dy * dy + (1.0 - t2) * (1.0 - p2);
            // ∇ₓγ·2π = (|y|²x − y)/Q; velocity contribution is −Γ (∇ₓγ)⊥.
            let f = cg[l] / q;
            let gx = p2 * tx - px;
            let gy = p2 * ty - py;
            ax[l] += f * gy;
            ay[l] -= f * gx;
        }
    }
    lane_total(&ax, &ay)
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;

    #[target_feature(enable = "avx512f,avx512dq,avx2,fma")]
    pub unsafe fn blob_avx512(tx: f64, ty: f64, s: &SourceBlocks, inv_d2: f64, cut2: f64) -> (f64, f64) {
        blob_sum_generic(tx, ty, s, inv_d2, cut2)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn blob_avx2(tx: f64, ty: f64, s: &SourceBlocks, inv_d2: f64, cut2: f64) -> (f64, f64) {
        blob_sum_generic(tx, ty, s, inv_d2, cut2)
    }

    #[target_feature(enable = "avx512f,avx512dq,avx2,fma")]
    pub unsafe fn image_avx512(tx: f64, ty: f64, s: &SourceBlocks) -> (f64, f64) {
        image_sum_generic(tx, ty, s)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn image_avx2(tx: f64, ty: f64, s: &SourceBlocks) -> (f64, f64) {
        image_sum_generic(tx, ty, s)
    }
}

#[derive(Clone, Copy)]
enum Isa {
    Generic,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn detect_isa() -> Isa {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512dq") && is_x86_feature_detected!("fma") {
            return Isa::Avx512;
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return Isa::Avx2;
        }
    }
    Isa::Generic
}

fn blob_sum(isa: Isa, t: Vec2, s: &SourceBlocks, inv_d2: f64, cut2: f64) -> Vec2 {
    let (x, y) = match isa {
        Isa::Generic => blob_sum_generic(t.x, t.y, s, inv_d2, cut2),
        // SAFETY: the variant is only selected after runtime detection of the enabled features.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { simd::blob_avx2(t.x, t.y, s, inv_d2, cut2) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { simd::blob_avx512(t.x, t.y, s, inv_d2, cut2) },
    };
    Vec2::new(x, y) * INV_2PI
}

fn image_sum(isa: Isa, t: Vec2, s: &SourceBlocks) -> Vec2 {
    let (x, y) = match isa {
        Isa::Generic => image_sum_generic(t.x, t.y, s),
        // SAFETY: the variant is only selected after runtime detection of the enabled features.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { simd::image_avx2(t.x, t.y, s) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { simd::image_avx512(t.x, t.y, s) },
    };
    Vec2::new(x, y) * INV_2PI
}

/// Velocities induced by blobs at `sources` (with circulations `circ`) at each target.
///
/// Each target's sum runs in a fixed order, so results do not depend on the thread count.
pub fn velocities_at(
    targets: &[Vec2],
    sources: &[Vec2],
    circ: &[f64],
    domain: Domain,
    kernel: &BlobKernel,
    evaluator: Evaluator,
) -> Result<Vec<Vec2>> {
    if sources.len() != circ.len() {
        return Err(Error::InvalidParameter("sources and circulations differ in length".into()));
    }
    if domain == Domain::UnitDisk {
        if let Some(&x) = targets.iter().chain(sources).find(|x| !(x.norm_sq() <= 1.0)) {
            return Err(Error::OutsideDomain(x));
        }
    }
    if sources.is_empty() {
        return Ok(vec![Vec2::ZERO; targets.len()]);
    }
    let isa = detect_isa();
    let blocks = SourceBlocks::new(sources, circ);
    let inv_d2 = 1.0 / (kernel.delta * kernel.delta);
    let cut2 = GAUSSIAN_CUTOFF * kernel.delta * kernel.delta;
    let tree = match evaluator {
        Evaluator::Direct => None,
        Evaluator::BarnesHut { theta } => {
            if !(theta > 0.0 && theta < 1.5) {
                return Err(Error::InvalidParameter(format!("opening angle {theta} outside (0, 1.5)")));
            }
            Some(QuadTree::build(sources, circ, theta))
        }
    };
    let out = targets
        .par_iter()
        .with_min_len(32)
        .map(|&t| {
            let mut u = match &tree {
                None => blob_sum(isa, t, &blocks, inv_d2, cut2),
                Some(tree) => tree.velocity(t, kernel, cut2),
            };
            if domain == Domain::UnitDisk {
                u += image_sum(isa, t, &blocks);
            }
            u
        })
        .collect();
    Ok(out)
}

/// Velocity of the blob field at one point (direct summation).
pub fn blob_velocity(field: &ParticleField, kernel: &BlobKernel, x: Vec2) -> Result<Vec2> {
    Ok(velocities_at(&[x], &field.positions, &field.circulations, field.domain, kernel, Evaluator::Direct)?[0])
}

/// Velocities at every particle of the field.
pub fn field_velocities(field: &ParticleField, kernel: &BlobKernel, evaluator: Evaluator) -> Result<Vec<Vec2>> {
    velocities_at(&field.positions, &field.positions, &field.circulations, field.domain, kernel, evaluator)
}

/// Quadtree over sources with truncated multipole far field.
struct QuadTree {
    nodes: Vec<Node>,
    px: Vec<f64>,
    py: Vec<f64>,
    g: Vec<f64>,
    theta2: f64,
}

struct Node {
    /// |Γ|-weighted centroid; expansion center.
    com: Vec2,
    circulation: f64,
    /// Complex moments `Σ Γ (z_p − c)^k` for k = 1, 2, as (re, im).
    q1: (f64, f64),
    q2: (f64, f64),
    /// Tight bounding box of the node's sources.
    lo: Vec2,
    hi: Vec2,
    start: usize,
    end: usize,
    children: [u32; 4],
}

const LEAF_SIZE: usize = 16;
const NO_CHILD: u32 = u32::MAX;

impl QuadTree {
    fn build(pos: &[Vec2], circ: &[f64], theta: f64) -> Self {
        let order = morton_order(pos);
        let mut idx: Vec<usize> = order;
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in pos {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let center = (lo + hi) * 0.5;
        let half = 0.5 * (hi.x - lo.x).max(hi.y - lo.y) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        let mut tree = QuadTree { nodes: Vec::new(), px: Vec::new(), py: Vec::new(), g: Vec::new(), theta2: theta * theta };
        let n = idx.len();
        tree.subdivide(pos, circ, &mut idx, 0, n, center, half, 0);
        tree.px = idx.iter().map(|&k| pos[k].x).collect();
        tree.py = idx.iter().map(|&k| pos[k].y).collect();
        tree.g = idx.iter().map(|&k| circ[k]).collect();
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn subdivide(
        &mut self,
        pos: &[Vec2],
        circ: &[f64],
        idx: &mut [usize],
        start: usize,
        end: usize,
        center: Vec2,
        half: f64,
        depth: usize,
    ) -> u32 {
        let mut wsum = CompensatedSum::new();
        let mut gsum = CompensatedSum::new();
        let (mut cx, mut cy) = (CompensatedSum::new(), CompensatedSum::new());
        for &k in &idx[start..end] {
            let w = circ[k].abs();
            wsum.add(w);
            gsum.add(circ[k]);
            cx.add(w * pos[k].x);
            cy.add(w * pos[k].y);
        }
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &k in &idx[start..end] {
            lo = Vec2::new(lo.x.min(pos[k].x), lo.y.min(pos[k].y));
            hi = Vec2::new(hi.x.max(pos[k].x), hi.y.max(pos[k].y));
        }
        let w = wsum.value();
        let com = if w > 0.0 { Vec2::new(cx.value() / w, cy.value() / w) } else { center };
        let (mut q1r, mut q1i, mut q2r, mut q2i) =
            (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
        for &k in &idx[start..end] {
            let (dx, dy) = (pos[k].x - com.x, pos[k].y - com.y);
            let g = circ[k];
            q1r.add(g * dx);
            q1i.add(g * dy);
            q2r.add(g * (dx * dx - dy * dy));
            q2i.add(g * 2.0 * dx * dy);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            com,
            circulation: gsum.value(),
            q1: (q1r.value(), q1i.value()),
            q2: (q2r.value(), q2i.value()),
            lo,
            hi,
            start,
            end,
            children: [NO_CHILD; 4],
        });
        if end - start <= LEAF_SIZE || depth >= 48 {
            return id;
        }
        // Stable partition into quadrants: (x<cx,y<cy), (x>=cx,y<cy), (x<cx,y>=cy), (x>=cx,y>=cy).
        let quadrant = |k: usize| -> usize {
            let p = pos[k];
            (p.x >= center.x) as usize + 2 * (p.y >= center.y) as usize
        };
        let mut buckets: [Vec<usize>; 4] = Default::default();
        for &k in &idx[start..end] {
            buckets[quadrant(k)].push(k);
        }
        let mut cursor = start;
        let mut ranges = [(0, 0); 4];
        for (q, b) in buckets.iter().enumerate() {
            idx[cursor..cursor + b.len()].copy_from_slice(b);
            ranges[q] = (cursor, cursor + b.len());
            cursor += b.len();
        }
        let h = 0.5 * half;
        for q in 0..4 {
            let (s, e) = ranges[q];
            if s == e {
                continue;
            }
            let off = Vec2::new(if q & 1 == 1 { h } else { -h }, if q & 2 == 2 { h } else { -h });
            let child = self.subdivide(pos, circ, idx, s, e, center + off, h, depth + 1);
            self.nodes[id as usize].children[q] = child;
        }
        id
    }

    fn velocity(&self, t: Vec2, kernel: &BlobKernel, cut2: f64) -> Vec2 {
        let inv_d2 = 1.0 / (kernel.delta * kernel.delta);
        let (mut ux, mut uy) = (0.0, 0.0);
        let mut stack: Vec<u32> = vec![0];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let d = t - node.com;
            let r2 = d.norm_sq();
            let size = (node.hi.x - node.lo.x).max(node.hi.y - node.lo.y);
            // Opening test against the nearest point of the node's sources; the monopole is used only
            // outside the blob core, where the kernel is the exact singular one.
            let ex = (node.lo.x - t.x).max(t.x - node.hi.x).max(0.0);
            let ey = (node.lo.y - t.y).max(t.y - node.hi.y).max(0.0);
            let gap2 = ex * ex + ey * ey;
            if gap2 > cut2 && size * size < self.theta2 * gap2 {
                // u − iv = (−i/2π) Σ_k Q_k / w^{k+1}, w = z − c.
                let (wr, wi) = (d.x / r2, -d.y / r2);
                let (w2r, w2i) = (wr * wr - wi * wi, 2.0 * wr * wi);
                let (w3r, w3i) = (w2r * wr - w2i * wi, w2r * wi + w2i * wr);
                let (q1r, q1i) = node.q1;
                let (q2r, q2i) = node.q2;
                let sr = node.circulation * wr + (q1r * w2r - q1i * w2i) + (q2r * w3r - q2i * w3i);
                let si = node.circulation * wi + (q1r * w2i + q1i * w2r) + (q2r * w3i + q2i * w3r);
                // (−i)(sr + i si) = si − i sr = u − iv
                ux += si;
                uy += sr;
                continue;
            }
            if node.children.iter().all(|&c| c == NO_CHILD) {
                for k in node.start..node.end {
                    let dx = t.x - self.px[k];
                    let dy = t.y - self.py[k];
                    let r2 = dx * dx + dy * dy;
                    if r2 == 0.0 {
                        continue;
                    }
                    let z = r2 * inv_d2;
                    let shield = if z > GAUSSIAN_CUTOFF { 1.0 } else { -(-z).exp_m1() };
                    let f = self.g[k] * shield / r2;
                    ux -= f * dy;
                    uy += f * dx;
                }
                continue;
            }
            for &c in node.children.iter().rev() {
                if c != NO_CHILD {
                    stack.push(c);
                }
            }
        }
        Vec2::new(ux, uy) * INV_2PI
    }
}

/// Time-step policy: `min(0.8 · 0.5δ / max speed, 10⁻² / strain)`, with the strain estimated as half
/// the largest particle vorticity `|Γ_p| / (δ/2)²`.
pub fn default_time_step(field: &ParticleField, velocities: &[Vec2]) -> f64 {
    let vmax = velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let hp = 0.5 * field.blob_radius;
    let peak = field.circulations.iter().map(|g| g.abs()).fold(0.0, f64::max) / (hp * hp);
    let strain = 0.5 * peak;
    let cfl = if vmax > 0.0 { 0.8 * 0.5 * field.blob_radius / vmax } else { f64::INFINITY };
    let strain_dt = if strain > 0.0 { 1e-2 / strain } else { f64::INFINITY };
    cfl.min(strain_dt)
}

/// One RK4 step of all particle positions; circulations and labels are untouched.
///
/// Fails if `dt · max speed > δ/2` or, on the disk, if a particle leaves the closed disk.
pub fn advance(field: &ParticleField, kernel: &BlobKernel, evaluator: Evaluator, dt: f64) -> Result<ParticleField> {
    let k1 = field_velocities(field, kernel, evaluator)?;
    advance_with(field, kernel, evaluator, dt, k1)
}

/// [`advance`] with the first-stage velocities already computed.
pub fn advance_with(
    field: &ParticleField,
    kernel: &BlobKernel,
    evaluator: Evaluator,
    dt: f64,
    k1: Vec<Vec2>,
) -> Result<ParticleField> {
    if !(dt.abs() > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be nonzero and finite")));
    }
    let vmax = k1.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let limit = 0.5 * kernel.delta;
    if dt.abs() * vmax > limit {
        return Err(Error::StepTooLarge { dt: dt.abs(), limit: limit / vmax });
    }
    let stage = |k: &[Vec2], s: f64| -> Vec<Vec2> { field.positions.iter().zip(k).map(|(&x, &v)| x + v * s).collect() };
    let eval = |pos: &[Vec2]| velocities_at(pos, pos, &field.circulations, field.domain, kernel, evaluator);
    let k2 = eval(&stage(&k1, 0.5 * dt))?;
    let k3 = eval(&stage(&k2, 0.5 * dt))?;
    let k4 = eval(&stage(&k3, dt))?;
    let positions: Vec<Vec2> = (0..field.len())
        .map(|p| field.positions[p] + (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]) * (dt / 6.0))
        .collect();
    if field.domain == Domain::UnitDisk {
        if let Some(index) = positions.iter().position(|x| !(x.norm_sq() <= 1.0)) {
            return Err(Error::Integrity { index, radius: positions[index].norm() });
        }
    }
    Ok(ParticleField {
        positions,
        circulations: field.circulations.clone(),
        labels: field.labels.clone(),
        blob_radius: field.blob_radius,
        domain: field.domain,
    })
}
