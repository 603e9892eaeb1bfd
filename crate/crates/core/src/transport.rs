//! Discrete Wasserstein distances: an exact network-simplex transportation solver and a
//! log-domain Sinkhorn approximation.

use crate::energy::LatticeDensity;
use crate::error::{Error, Result};
use crate::geometry::{compensated_sum, CompensatedSum, Vec2};
use crate::model::GriddedDensity;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Largest support size accepted by [`wasserstein_exact`].
pub const EXACT_SUPPORT_LIMIT: usize = 4000;

/// Relative mass mismatch tolerated before renormalization.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Positive weights on points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointCloud {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl WeightedPointCloud {
    pub fn new(points: Vec<Vec2>, weights: Vec<f64>) -> Result<Self> {
        let cloud = WeightedPointCloud { points, weights };
        cloud.check()?;
        Ok(cloud)
    }

    pub fn dirac(x: Vec2) -> Self {
        WeightedPointCloud { points: vec![x], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    pub fn check(&self) -> Result<()> {
        if self.points.len() != self.weights.len() {
            return Err(Error::InvalidParameter("points and weights differ in length".into()));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite point".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be positive and finite".into()));
        }
        if self.is_empty() {
            return Err(Error::ZeroMass);
        }
        Ok(())
    }

    pub fn translated(&self, v: Vec2) -> Self {
        WeightedPointCloud { points: self.points.iter().map(|&p| p + v).collect(), weights: self.weights.clone() }
    }

    pub fn dilated(&self, c: f64) -> Self {
        WeightedPointCloud { points: self.points.iter().map(|&p| p * c).collect(), weights: self.weights.clone() }
    }
}

/// Point cloud of a gridded density, merging 2×2 blocks level by level until at most `max_points` remain.
///
/// Each point sits at the mass-weighted centroid of the cells it represents.
pub fn quantize(grid: &GriddedDensity, max_points: usize) -> Result<WeightedPointCloud> {
    grid.check()?;
    quantize_lattice(&LatticeDensity::from(grid), max_points)
}

/// [`quantize`] for a sparse lattice density.
pub fn quantize_lattice(density: &LatticeDensity, max_points: usize) -> Result<WeightedPointCloud> {
    if max_points == 0 {
        return Err(Error::InvalidParameter("max_points must be positive".into()));
    }
    let a = density.spacing * density.spacing;
    let cells: Vec<((i64, i64), f64, Vec2)> =
        density.cells.iter().filter(|c| c.value > 0.0).map(|c| ((c.ix, c.iy), c.value * a, density.cell_center(c))).collect();
    if cells.is_empty() {
        return Err(Error::ZeroMass);
    }
    if cells.len() <= max_points {
        let (points, weights) = cells.into_iter().map(|(_, w, x)| (x, w)).unzip();
        return Ok(WeightedPointCloud { points, weights });
    }
    let mut level = 0u32;
    loop {
        level += 1;
        let mut blocks: BTreeMap<(i64, i64), (CompensatedSum, CompensatedSum, CompensatedSum)> = BTreeMap::new();
        for &((i, j), w, x) in &cells {
            let e = blocks.entry((j >> level, i >> level)).or_default();
            e.0.add(w);
            e.1.add(w * x.x);
            e.2.add(w * x.y);
        }
        if blocks.len() <= max_points {
            let mut points = Vec::with_capacity(blocks.len());
            let mut weights = Vec::with_capacity(blocks.len());
            for (w, mx, my) in blocks.into_values() {
                let w = w.value();
                points.push(Vec2::new(mx.value() / w, my.value() / w));
                weights.push(w);
            }
            return Ok(WeightedPointCloud { points, weights });
        }
    }
}

fn ground_cost(x: Vec2, y: Vec2, p: u32) -> f64 {
    match p {
        1 => x.dist(y),
        _ => (x - y).norm_sq(),
    }
}

fn check_order(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("transport order p = {p} not supported (use 1 or 2)")))
    }
}

/// Second marginal rescaled to the first marginal's total.
fn balanced(mu: &WeightedPointCloud, nu: &WeightedPointCloud) -> Result<Vec<f64>> {
    mu.check()?;
    nu.check()?;
    let (tm, tn) = (mu.total(), nu.total());
    if (tm - tn).abs() > MASS_TOLERANCE * tm.max(tn) {
        return Err(Error::MassMismatch(tm, tn));
    }
    let s = tm / tn;
    Ok(nu.weights.iter().map(|w| w * s).collect())
}

/// Exact `W_p(μ, ν)`, p ∈ {1, 2}.
pub fn wasserstein_exact(mu: &WeightedPointCloud, nu: &WeightedPointCloud, p: u32) -> Result<f64> {
    let cost = transport_cost_exact(mu, nu, p)?;
    Ok(if p == 1 { cost } else { cost.sqrt() })
}

/// Exact optimal transport cost `W_p(μ, ν)^p`.
pub fn transport_cost_exact(mu: &WeightedPointCloud, nu: &WeightedPointCloud, p: u32) -> Result<f64> {
    check_order(p)?;
    let size = mu.len().max(nu.len());
    if size > EXACT_SUPPORT_LIMIT {
        return Err(Error::SizeLimit { size, limit: EXACT_SUPPORT_LIMIT });
    }
    let b = balanced(mu, nu)?;
    let mut solver = NetworkSimplex::new(&mu.points, &mu.weights, &nu.points, &b, p);
    solver.solve()?;
    Ok(solver.total_cost().max(0.0))
}

/// Network simplex on the complete bipartite transportation network.
///
/// Nodes are the `m` sources, the `n` sinks and an artificial root joined to every node by a
/// high-cost arc. The spanning tree is kept strongly feasible (last blocking arc leaves), and
/// entering arcs are chosen by block search over reduced costs.
struct NetworkSimplex<'a> {
    xs: &'a [Vec2],
    ys: &'a [Vec2],
    m: usize,
    n: usize,
    p: u32,
    artificial_cost: f64,
    parent: Vec<usize>,
    pred_arc: Vec<usize>,
    /// True when the tree arc to the parent is directed node → parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    flow: Vec<f64>,
    adjacency: Vec<Vec<(usize, usize)>>,
    next_arc: usize,
}

impl<'a> NetworkSimplex<'a> {
    fn new(xs: &'a [Vec2], a: &[f64], ys: &'a [Vec2], b: &[f64], p: u32) -> Self {
        let (m, n) = (xs.len(), ys.len());
        let nodes = m + n + 1;
        let root = m + n;
        let mut max_cost: f64 = 0.0;
        for &x in xs {
            for &y in ys {
                max_cost = max_cost.max(ground_cost(x, y, p));
            }
        }
        let artificial_cost = (max_cost + 1.0) * nodes as f64;
        let mut s = NetworkSimplex {
            xs,
            ys,
            m,
            n,
            p,
            artificial_cost,
            parent: vec![root; nodes],
            pred_arc: vec![usize::MAX; nodes],
            up: vec![false; nodes],
            depth: vec![1; nodes],
            potential: vec![0.0; nodes],
            flow: vec![0.0; m * n + m + n],
            adjacency: vec![Vec::new(); nodes],
            next_arc: 0,
        };
        s.depth[root] = 0;
        s.parent[root] = usize::MAX;
        for v in 0..m + n {
            let arc = m * n + v;
            s.pred_arc[v] = arc;
            s.adjacency[v].push((root, arc));
            s.adjacency[root].push((v, arc));
            if v < m {
                s.up[v] = true;
                s.flow[arc] = a[v];
                s.potential[v] = -artificial_cost;
            } else {
                s.flow[arc] = b[v - m];
                s.potential[v] = artificial_cost;
            }
        }
        s
    }

    fn arc_ends(&self, arc: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if arc < real {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let v = arc - real;
            let root = self.m + self.n;
            if v < self.m {
                (v, root)
            } else {
                (root, v)
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.m * self.n {
            ground_cost(self.xs[arc / self.n], self.ys[arc % self.n], self.p)
        } else {
            self.artificial_cost
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (s, t) = self.arc_ends(arc);
        self.arc_cost(arc) + self.potential[s] - self.potential[t]
    }

    /// Block search for an arc with sufficiently negative reduced cost.
    fn find_entering(&mut self, tol: f64) -> Option<usize> {
        let total = self.flow.len();
        let block = ((total as f64).sqrt().ceil() as usize).max(10);
        let mut best = None;
        let mut best_rc = -tol;
        let mut scanned = 0;
        let mut arc = self.next_arc;
        while scanned < total {
            let end = scanned + block;
            while scanned < end && scanned < total {
                let rc = self.reduced_cost(arc);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(arc);
                }
                arc += 1;
                if arc == total {
                    arc = 0;
                }
                scanned += 1;
            }
            if best.is_some() {
                self.next_arc = arc;
                return best;
            }
        }
        None
    }

    fn solve(&mut self) -> Result<()> {
        let scale = self.artificial_cost / (self.m + self.n + 1) as f64;
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (self.m + self.n) * (self.m + self.n) + 1000;
        let mut pivots = 0;
        while let Some(arc) = self.find_entering(tol) {
            self.pivot(arc);
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NotConverged { iterations: pivots, residual: self.reduced_cost(arc).abs() });
            }
        }
        // Balanced supplies leave no flow on the artificial arcs at optimality.
        let real = self.m * self.n;
        let leftover: f64 = self.flow[real..].iter().sum();
        let shipped: f64 = self.flow[..real].iter().sum();
        if leftover > 1e-9 * (leftover + shipped) {
            return Err(Error::NotConverged { iterations: pivots, residual: leftover });
        }
        Ok(())
    }

    fn pivot(&mut self, entering: usize) {
        let (u, v) = self.arc_ends(entering);
        // Cycle: join → … → u → v → … → join. Walk both endpoints to the common ancestor.
        let mut u_side: Vec<usize> = Vec::new();
        let mut v_side: Vec<usize> = Vec::new();
        let (mut a, mut b) = (u, v);
        while self.depth[a] > self.depth[b] {
            u_side.push(a);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            v_side.push(b);
            b = self.parent[b];
        }
        while a != b {
            u_side.push(a);
            a = self.parent[a];
            v_side.push(b);
            b = self.parent[b];
        }
        // Flow on the u side runs parent → node; blocking arcs are those directed node → parent.
        // On the v side it runs node → parent; blocking arcs are those directed parent → node.
        let mut delta = f64::INFINITY;
        let mut leaving: Option<(usize, bool)> = None;
        for &w in u_side.iter().rev() {
            if self.up[w] && self.flow[self.pred_arc[w]] <= delta {
                delta = self.flow[self.pred_arc[w]];
                leaving = Some((w, true));
            }
        }
        for &w in &v_side {
            if !self.up[w] && self.flow[self.pred_arc[w]] <= delta {
                delta = self.flow[self.pred_arc[w]];
                leaving = Some((w, false));
            }
        }
        let (cut, on_u_side) = leaving.expect("uncapacitated cycle must contain a blocking arc");
        self.flow[entering] += delta;
        for &w in &u_side {
            let arc = self.pred_arc[w];
            if self.up[w] {
                self.flow[arc] -= delta;
            } else {
                self.flow[arc] += delta;
            }
        }
        for &w in &v_side {
            let arc = self.pred_arc[w];
            if self.up[w] {
                self.flow[arc] += delta;
            } else {
                self.flow[arc] -= delta;
            }
        }
        let leaving_arc = self.pred_arc[cut];
        self.flow[leaving_arc] = 0.0;
        let cut_parent = self.parent[cut];
        self.adjacency[cut].retain(|&(_, arc)| arc != leaving_arc);
        self.adjacency[cut_parent].retain(|&(_, arc)| arc != leaving_arc);
        self.adjacency[u].push((v, entering));
        self.adjacency[v].push((u, entering));
        // Re-hang the detached subtree from the endpoint of the entering arc inside it.
        let (inner, outer) = if on_u_side { (u, v) } else { (v, u) };
        self.rehang(inner, outer, entering);
    }

    fn rehang(&mut self, inner: usize, outer: usize, arc: usize) {
        let mut stack = vec![(inner, outer, arc)];
        while let Some((w, par, a)) = stack.pop() {
            self.parent[w] = par;
            self.pred_arc[w] = a;
            let (s, _) = self.arc_ends(a);
            self.up[w] = s == w;
            self.depth[w] = self.depth[par] + 1;
            let c = self.arc_cost(a);
            // Tree arcs have zero reduced cost: c + π_s − π_t = 0.
            self.potential[w] = if self.up[w] { self.potential[par] - c } else { self.potential[par] + c };
            for k in 0..self.adjacency[w].len() {
                let (x, xa) = self.adjacency[w][k];
                if x != par {
                    stack.push((x, w, xa));
                }
            }
        }
    }

    fn total_cost(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for (arc, &f) in self.flow[..self.m * self.n].iter().enumerate() {
            if f > 0.0 {
                acc.add(f * self.arc_cost(arc));
            }
        }
        acc.value()
    }
}

/// Result of an entropic solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropicEstimate {
    /// Debiased Sinkhorn divergence `OT_ε(μ,ν) − ½OT_ε(μ,μ) − ½OT_ε(ν,ν)`, an estimate of `W_p^p`.
    pub debiased_cost: f64,
    /// Transport cost `⟨P_ε, C⟩` of the entropic plan; at least the exact cost, decreasing to it as `reg → 0`.
    pub plan_cost: f64,
    pub iterations: usize,
}

/// Entropic estimate of `W_p(μ, ν)`: the p-th root of the debiased Sinkhorn divergence.
///
/// The regularized cost exceeds `W_p^p` by at most `reg·ln(|μ|·|ν|)`.
pub fn wasserstein_entropic(mu: &WeightedPointCloud, nu: &WeightedPointCloud, p: u32, reg: f64) -> Result<f64> {
    let est = entropic_estimate(mu, nu, p, reg)?;
    let c = est.debiased_cost.max(0.0);
    Ok(if p == 1 { c } else { c.sqrt() })
}

pub fn entropic_estimate(mu: &WeightedPointCloud, nu: &WeightedPointCloud, p: u32, reg: f64) -> Result<EntropicEstimate> {
    check_order(p)?;
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidParameter("entropic regularization must be positive".into()));
    }
    let b = balanced(mu, nu)?;
    let total = mu.total();
    let a: Vec<f64> = mu.weights.iter().map(|w| w / total).collect();
    let b: Vec<f64> = b.iter().map(|w| w / total).collect();
    let xy = sinkhorn(&mu.points, &a, &nu.points, &b, p, reg)?;
    let xx = symmetric_sinkhorn(&mu.points, &a, p, reg)?;
    let yy = symmetric_sinkhorn(&nu.points, &b, p, reg)?;
    Ok(EntropicEstimate {
        debiased_cost: total * (xy.dual - 0.5 * xx - 0.5 * yy),
        plan_cost: total * xy.plan_cost,
        iterations: xy.iterations,
    })
}

const MAX_ITERATIONS: usize = 100_000;
/// L1 marginal error accepted at the target regularization.
const FINAL_TOLERANCE: f64 = 1e-7;
/// L1 marginal error accepted at intermediate stages of ε-scaling.
const STAGE_TOLERANCE: f64 = 1e-5;

struct SinkhornOutcome {
    dual: f64,
    plan_cost: f64,
    iterations: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with geometric ε-scaling; probability vectors `a`, `b`.
fn sinkhorn(xs: &[Vec2], a: &[f64], ys: &[Vec2], b: &[f64], p: u32, reg: f64) -> Result<SinkhornOutcome> {
    let (m, n) = (xs.len(), ys.len());
    let cost: Vec<f64> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| ground_cost(x, y, p))).collect();
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let (la, lb): (Vec<f64>, Vec<f64>) = (a.iter().map(|w| w.ln()).collect(), b.iter().map(|w| w.ln()).collect());
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut eps = cmax.max(reg);
    let mut iterations = 0;
    loop {
        let tol = if eps <= reg { FINAL_TOLERANCE } else { STAGE_TOLERANCE };
        loop {
            for i in 0..m {
                let row = &cost[i * n..(i + 1) * n];
                f[i] = -eps * log_sum_exp((0..n).map(|j| lb[j] + (g[j] - row[j]) / eps));
            }
            for j in 0..n {
                g[j] = -eps * log_sum_exp((0..m).map(|i| la[i] + (f[i] - cost[i * n + j]) / eps));
            }
            iterations += 1;
            // After the g update the column marginals are exact; measure the row marginal error.
            let mut err = 0.0;
            for i in 0..m {
                let row = &cost[i * n..(i + 1) * n];
                let s: f64 = (0..n).map(|j| (la[i] + lb[j] + (f[i] + g[j] - row[j]) / eps).exp()).sum();
                err += (s - a[i]).abs();
            }
            if err < tol {
                break;
            }
            if iterations >= MAX_ITERATIONS {
                return Err(Error::NotConverged { iterations, residual: err });
            }
        }
        if eps <= reg {
            break;
        }
        eps = (eps * 0.5).max(reg);
    }
    let mut plan_cost = CompensatedSum::new();
    for i in 0..m {
        for j in 0..n {
            let c = cost[i * n + j];
            let pij = (la[i] + lb[j] + (f[i] + g[j] - c) / eps).exp();
            plan_cost.add(pij * c);
        }
    }
    let dual = compensated_sum(a.iter().zip(&f).map(|(w, v)| w * v)) + compensated_sum(b.iter().zip(&g).map(|(w, v)| w * v));
    Ok(SinkhornOutcome { dual, plan_cost: plan_cost.value(), iterations })
}

/// `OT_ε(μ, μ)` by the averaged symmetric fixed point `f ← ½(f + T(f))`, which avoids the
/// oscillation of alternating updates on self-transport.
fn symmetric_sinkhorn(xs: &[Vec2], a: &[f64], p: u32, reg: f64) -> Result<f64> {
    let m = xs.len();
    let cost: Vec<f64> = xs.iter().flat_map(|&x| xs.iter().map(move |&y| ground_cost(x, y, p))).collect();
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let la: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; m];
    let mut eps = cmax.max(reg);
    let mut iterations = 0;
    loop {
        let tol = if eps <= reg { FINAL_TOLERANCE } else { STAGE_TOLERANCE } * cmax.max(reg);
        loop {
            let t: Vec<f64> = (0..m)
                .map(|i| -eps * log_sum_exp((0..m).map(|j| la[j] + (f[j] - cost[i * m + j]) / eps)))
                .collect();
            let mut change: f64 = 0.0;
            for i in 0..m {
                let next = 0.5 * (f[i] + t[i]);
                change = change.max((next - f[i]).abs());
                f[i] = next;
            }
            iterations += 1;
            if change < tol {
                break;
            }
            if iterations >= MAX_ITERATIONS {
                return Err(Error::NotConverged { iterations, residual: change });
            }
        }
        if eps <= reg {
            break;
        }
        eps = (eps * 0.5).max(reg);
    }
    Ok(2.0 * compensated_sum(a.iter().zip(&f).map(|(w, v)| w * v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridParams;

    #[test]
    fn dirac_pair() {
        let mu = WeightedPointCloud::dirac(Vec2::ZERO);
        let nu = WeightedPointCloud::dirac(Vec2::new(3.0, 4.0));
        assert!((wasserstein_exact(&mu, &nu, 1).unwrap() - 5.0).abs() < 1e-14);
        assert!((wasserstein_exact(&mu, &nu, 2).unwrap() - 5.0).abs() < 1e-14);
        assert!((wasserstein_entropic(&mu, &nu, 2, 1e-3).unwrap() - 5.0).abs() < 1e-2);
        assert!((wasserstein_entropic(&mu, &nu, 1, 1e-3).unwrap() - 5.0).abs() < 1e-2);
    }

    #[test]
    fn split_mass() {
        // Half of the mass at the origin must travel to each of two targets.
        let mu = WeightedPointCloud::new(vec![Vec2::ZERO], vec![2.0]).unwrap();
        let nu = WeightedPointCloud::new(vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 3.0)], vec![1.0, 1.0]).unwrap();
        assert!((transport_cost_exact(&mu, &nu, 2).unwrap() - 10.0).abs() < 1e-12);
        assert!((transport_cost_exact(&mu, &nu, 1).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mu = WeightedPointCloud::dirac(Vec2::ZERO);
        let nu = WeightedPointCloud::new(vec![Vec2::ZERO], vec![2.0]).unwrap();
        assert!(matches!(wasserstein_exact(&mu, &nu, 2), Err(Error::MassMismatch(..))));
        let big = WeightedPointCloud::new(vec![Vec2::ZERO; 4001], vec![1.0; 4001]).unwrap();
        assert!(matches!(wasserstein_exact(&big, &big, 2), Err(Error::SizeLimit { .. })));
        assert!(WeightedPointCloud::new(vec![Vec2::ZERO], vec![0.0]).is_err());
    }

    #[test]
    fn quantize_small_and_merged() {
        let g = GridParams { origin: Vec2::ZERO, spacing: 1.0, nx: 4, ny: 4 };
        let mut d = GriddedDensity::zeros(g);
        d.values[0] = 1.0;
        d.values[1] = 1.0;
        d.values[5] = 2.0;
        let q = quantize(&d, 10).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.points[0], Vec2::new(0.5, 0.5));
        // The symmetric pair in the bottom row merges with the heavier cell above.
        let q = quantize(&d, 1).unwrap();
        assert_eq!(q.len(), 1);
        assert!((q.weights[0] - 4.0).abs() < 1e-15);
        let mut e = GriddedDensity::zeros(g);
        e.values[0] = 1.0;
        e.values[1] = 1.0;
        e.values[15] = 1.0;
        let q = quantize(&e, 2).unwrap();
        assert_eq!(q.points[0], Vec2::new(1.0, 0.5));
        assert_eq!(q.weights[0], 2.0);
    }
}
