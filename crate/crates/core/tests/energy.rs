use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use vortexlab_core::energy::{self, LatticeCell, LatticeDensity};
use vortexlab_core::{GridParams, GriddedDensity, Profile, Vec2, VortexPatchSpec};

fn unit_disk(cells_per_radius: usize) -> GriddedDensity {
    let h = 1.0 / cells_per_radius as f64;
    let g = GridParams::centered(Vec2::ZERO, h, cells_per_radius + 1);
    GriddedDensity::from_fn(g, 8, |x| if x.norm_sq() < 1.0 { 1.0 / PI } else { 0.0 })
}

fn bump_lattice(cells_per_radius: i64) -> LatticeDensity {
    let h = 1.0 / cells_per_radius as f64;
    let mut cells = Vec::new();
    for iy in -cells_per_radius..cells_per_radius {
        for ix in -cells_per_radius..cells_per_radius {
            let c = Vec2::new((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h);
            let s = c.norm_sq();
            if s < 1.0 {
                cells.push(LatticeCell { ix, iy, value: (1.0 - s).powi(3) });
            }
        }
    }
    let mut d = LatticeDensity { origin: Vec2::ZERO, spacing: h, cells };
    let m = d.mass();
    d.cells.iter_mut().for_each(|c| c.value /= m);
    d
}

/// Monte-Carlo estimate of `−(1/2π) E[ln|X − Y|]` for independent uniform points on the unit disk.
fn disk_energy_monte_carlo(samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| loop {
        let p = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if p.norm_sq() < 1.0 {
            return p;
        }
    };
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let v = point(&mut rng).dist(point(&mut rng)).ln();
        s += v;
        s2 += v * v;
    }
    let mean = s / samples as f64;
    let sd = ((s2 / samples as f64 - mean * mean) / samples as f64).sqrt();
    (-mean / (2.0 * PI), sd / (2.0 * PI))
}

#[test]
fn uniform_disk_energy_matches_closed_form_and_monte_carlo() {
    let grid = unit_disk(48);
    let e = energy::log_energy(&grid).unwrap();
    let bound = energy::defect(&grid).unwrap().quadrature_error_bound;
    let exact = 1.0 / (8.0 * PI);
    assert!((e - exact).abs() <= bound, "{e} vs {exact}, bound {bound}");
    let (mc, sd) = disk_energy_monte_carlo(10_000_000, 17);
    assert!((mc - exact).abs() <= 5.0 * sd, "oracle {mc} ± {sd}");
    assert!((e - mc).abs() <= bound + 5.0 * sd);
}

#[test]
fn mass_preserving_dilation_shifts_energy_by_log() {
    let d = bump_lattice(12);
    let e = d.log_energy().unwrap();
    for c in [0.25, 3.0, 40.0] {
        let mut s = d.clone();
        s.spacing *= c;
        s.cells.iter_mut().for_each(|cell| cell.value /= c * c);
        let shifted = s.log_energy().unwrap();
        let expected = e - c.ln() / (2.0 * PI);
        assert!((shifted - expected).abs() <= 1e-12 * expected.abs().max(1.0), "c = {c}: {shifted} vs {expected}");
    }
}

#[test]
fn far_separated_bumps_cross_term() {
    let one = bump_lattice(6);
    let e1 = one.log_energy().unwrap();
    for offset_cells in [2_400_i64, 24_000, 2_400_000] {
        let mut both = one.clone();
        both.cells.extend(one.cells.iter().map(|c| LatticeCell { ix: c.ix + offset_cells, ..*c }));
        let cross = both.log_energy().unwrap() - 2.0 * e1;
        let l = offset_cells as f64 * one.spacing;
        let expected = -l.ln() / PI;
        assert!((cross - expected).abs() <= 0.01 * expected.abs(), "L = {l}: {cross} vs {expected}");
    }
}

#[test]
fn linear_kernel_cross_term_of_point_masses() {
    let h = 1e-3;
    let a = LatticeDensity { origin: Vec2::ZERO, spacing: h, cells: vec![LatticeCell { ix: 0, iy: 0, value: 1.0 / (h * h) }] };
    let mut both = a.clone();
    both.cells.push(LatticeCell { ix: 2000, iy: 0, value: 1.0 / (h * h) });
    let ea = a.power_energy(1.0).unwrap();
    let cross = -(both.power_energy(1.0).unwrap() - 2.0 * ea) / 2.0;
    let bound = both.power_defect(1.0).unwrap().quadrature_error_bound;
    assert!((cross - 2.0).abs() <= bound.max(1e-6), "{cross}");
}

#[test]
fn small_alpha_defect_approaches_scaled_log_defect() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let g = GridParams { origin: Vec2::ZERO, spacing: 1.0 / 8.0, nx: 16, ny: 16 };
        let values: Vec<f64> = (0..256).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        let grid = GriddedDensity { origin: g.origin, spacing: g.spacing, nx: g.nx, ny: g.ny, values };
        let log = energy::defect(&grid).unwrap().defect;
        let alpha = 1e-3;
        let pow = energy::power_defect(&grid, alpha).unwrap().defect;
        let ratio = pow / alpha / (2.0 * PI * log);
        assert!((ratio - 1.0).abs() <= 0.05, "ratio {ratio}");
    }
}

#[test]
fn perturbed_disk_defect_is_quadratic_in_amplitude() {
    let n = 200;
    let g = GridParams::centered(Vec2::ZERO, 2.4 / n as f64, n / 2);
    let amps = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let defects: Vec<f64> = amps
        .iter()
        .map(|&amplitude| {
            let p = VortexPatchSpec {
                center: Vec2::ZERO,
                intensity: 1.0,
                epsilon: 1.0,
                profile: Profile::PerturbedDisk { amplitude, mode: 3 },
                support_radius_factor: 1.0,
                peak_vorticity: None,
            };
            energy::defect(&GriddedDensity::from_fn(g, 8, |x| p.vorticity(x))).unwrap().defect
        })
        .collect();
    let x: Vec<f64> = amps.iter().map(|a| a.ln()).collect();
    let y: Vec<f64> = defects.iter().map(|d| d.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 5.0, y.iter().sum::<f64>() / 5.0);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() <= 0.2, "slope {slope}, defects {defects:?}");
}

fn small_grid() -> impl Strategy<Value = GriddedDensity> {
    (2usize..10, 2usize..10).prop_flat_map(|(nx, ny)| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64, Just(1.0)], nx * ny)
            .prop_map(move |values| GriddedDensity { origin: Vec2::new(-0.3, 0.7), spacing: 0.25, nx, ny, values })
    })
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rearrangement_preserves_values_and_is_idempotent(g in small_grid()) {
        let r = energy::rearrange(&g);
        prop_assert_eq!(sorted(&r.values), sorted(&g.values));
        let rr = energy::rearrange(&r);
        prop_assert_eq!(sorted(&rr.values), sorted(&r.values));
        let radial = |d: &GriddedDensity| {
            let c = Vec2::new(d.origin.x + 0.5 * d.nx as f64 * d.spacing, d.origin.y + 0.5 * d.ny as f64 * d.spacing);
            let mut p: Vec<(f64, f64)> = (0..d.ny).flat_map(|j| (0..d.nx).map(move |i| (i, j))).map(|(i, j)| (d.cell_center(i, j).dist(c), d.values[j * d.nx + i])).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
            p.into_iter().map(|x| x.1).collect::<Vec<_>>()
        };
        prop_assert_eq!(radial(&rr), radial(&r));
    }

    #[test]
    fn riesz_inequality_on_random_grids(g in small_grid()) {
        prop_assume!(g.values.iter().any(|&v| v > 0.0));
        let r = energy::defect(&g).unwrap();
        prop_assert!(r.defect >= -r.quadrature_error_bound);
        for alpha in [-1.5, -0.5, 0.5, 1.5] {
            let p = energy::power_defect(&g, alpha).unwrap();
            prop_assert!(p.defect >= -p.quadrature_error_bound, "alpha {}", alpha);
        }
    }

    #[test]
    fn translation_changes_energy_by_rounding_only(g in small_grid(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        prop_assume!(g.values.iter().any(|&v| v > 0.0));
        let e = energy::log_energy(&g).unwrap();
        let mut s = g.clone();
        s.origin = s.origin + Vec2::new(dx, dy);
        let e2 = energy::log_energy(&s).unwrap();
        prop_assert!((e - e2).abs() <= 1e-12 * e.abs().max(1e-300));
    }
}
