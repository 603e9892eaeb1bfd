//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line; a shared lock runs them
//! one at a time so wall-clock budgets are measured without contention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use vortexlab_core::diagnostics::{cutoff_eta, sample, DiagnosticsSettings};
use vortexlab_core::energy::defect;
use vortexlab_core::greens::{intrinsic_distance, intrinsic_distance_grad, pvs_self_velocity, pvs_velocity, PointVortexState};
use vortexlab_core::transport::{wasserstein_exact, WeightedPointCloud};
use vortexlab_core::{discretize, Domain, InitialDataSpec, Profile, Vec2, VortexPatchSpec};
use vortexlab_harness::config::{self, CorpusConfig, PvsConfig, ScalingConfig, SimulateConfig};
use vortexlab_harness::constants::FrozenConstants;
use vortexlab_harness::corpus::riesz_corpus;
use vortexlab_harness::fit::log_log_fit;
use vortexlab_harness::lemma::{check_suite, surrogate_suite};
use vortexlab_harness::output::OutputDir;
use vortexlab_harness::run::{run_pvs, run_simulation_samples};
use vortexlab_harness::scaling::scaling_study;
use vortexlab_harness::stability::{run_corpus, two_ball_point};

static SERIAL: Mutex<()> = Mutex::new(());

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Runs `check` under the lock, prints the verdict line and fails the test on `FAIL`.
fn criterion(id: &str, budget: Duration, check: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, detail) = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    // Written to the raw handle so the line survives libtest output capture.
    let _ = writeln!(std::io::stderr(), "criterion {id}: {verdict} ({detail}; {:.1} s of {:.0} s)", elapsed.as_secs_f64(), budget.as_secs_f64());
    assert!(ok, "criterion {id}: {detail}");
    assert!(in_time, "criterion {id}: {:.1} s exceeds the {:.0} s budget", elapsed.as_secs_f64(), budget.as_secs_f64());
}

fn minutes(m: f64) -> Duration {
    Duration::from_secs_f64(60.0 * m)
}

#[test]
fn criterion_1_riesz_inequality() {
    criterion("1", minutes(2.0), || {
        let corpus = riesz_corpus(101, 100);
        let reports: Vec<_> = corpus.iter().map(|g| defect(g).unwrap()).collect();
        let worst = reports.iter().map(|r| r.defect / r.quadrature_error_bound).fold(f64::INFINITY, f64::min);
        let ok = reports.iter().all(|r| r.defect >= -r.quadrature_error_bound);
        (ok, format!("100 mixtures, min defect/bound = {worst:.3e}"))
    });
}

#[test]
fn criterion_2_two_vortex_rotation() {
    criterion("2", minutes(5.0), || {
        let dir = tempfile::tempdir().unwrap();
        let pvs: PvsConfig = config::load(&configs().join("pvs_two_vortex.json")).unwrap();
        let s = run_pvs(&pvs, &OutputDir::create(dir.path()).unwrap(), None).unwrap();
        let d = pvs.positions[0].dist(pvs.positions[1]);
        let omega = (pvs.intensities[0] + pvs.intensities[1]) / (2.0 * std::f64::consts::PI * d * d);
        let sep = s.final_state.positions[1] - s.final_state.positions[0];
        let sep0 = pvs.positions[1] - pvs.positions[0];
        let turned = sep.y.atan2(sep.x) - sep0.y.atan2(sep0.x);
        let period = 2.0 * std::f64::consts::PI / omega;
        let laps = (s.t_final / period).round();
        let angle = turned.rem_euclid(2.0 * std::f64::consts::PI) + 2.0 * std::f64::consts::PI * laps;
        let angle = if angle > omega * s.t_final + std::f64::consts::PI { angle - 2.0 * std::f64::consts::PI } else { angle };
        let pvs_err = (angle / s.t_final - omega).abs() / omega;

        let (eps, n, sep_e, steps, dt) = (0.02, 2048, 0.5, 200usize, 2.51e-5);
        let patch = |x: f64| VortexPatchSpec { center: Vec2::new(x, 0.0), intensity: 1.0, epsilon: eps, profile: Profile::UniformDisk, support_radius_factor: 1.0, peak_vorticity: None };
        let sim = SimulateConfig {
            initial: InitialDataSpec { domain: Domain::FullPlane, patches: vec![patch(-0.5 * sep_e), patch(0.5 * sep_e)], separation_b: sep_e, beta: 2.0, n3: 1.0, n1: 1.0, n2: 10.0 },
            simulation: serde_json::from_value(serde_json::json!({ "particles_per_patch": n, "dt": dt, "t_end": steps as f64 * dt, "sample_every": steps, "energies": false })).unwrap(),
            stop_spread_fraction: None,
            snapshot_every: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let (summary, samples) = run_simulation_samples(&sim, &OutputDir::create(dir.path()).unwrap(), None).unwrap();
        let c = &samples.last().unwrap().centers;
        let d = c[1] - c[0];
        let omega_e = 2.0 / (2.0 * std::f64::consts::PI * sep_e * sep_e);
        let euler_err = (d.y.atan2(d.x) / summary.t_final - omega_e).abs() / omega_e;
        (pvs_err <= 1e-6 && euler_err <= 0.02, format!("point vortex Ω error {pvs_err:.2e} (≤ 1e-6), blob Ω error {euler_err:.2e} (≤ 2e-2)"))
    });
}

#[test]
fn criterion_3_intrinsic_distance() {
    criterion("3", minutes(1.0), || {
        let state = PointVortexState::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], vec![1.0, 1.0], Domain::FullPlane).unwrap();
        let radii: Vec<f64> = (0..=20).map(|k| 1e-3 * 10f64.powf(k as f64 / 10.0)).collect();
        let err: Vec<f64> = radii
            .iter()
            .map(|&r| (0..12).map(|k| {
                let th = std::f64::consts::PI * (2.0 * k as f64 + 0.5) / 12.0;
                (intrinsic_distance(&state, 0, Vec2::new(r * th.cos(), r * th.sin())).unwrap() - r).abs()
            }).fold(0.0, f64::max))
            .collect();
        let fit = log_log_fit(&radii, &err).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut worst: f64 = 0.0;
        for trial in 0..200 {
            let domain = if trial % 2 == 0 { Domain::FullPlane } else { Domain::UnitDisk };
            let positions = vec![Vec2::new(-0.3, 0.1), Vec2::new(0.35, 0.05), Vec2::new(0.0, -0.4)];
            let positions: Vec<Vec2> = positions.into_iter().map(|p| p + Vec2::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05))).collect();
            let intensities = (0..3).map(|_| rng.gen_range(0.3..2.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 }).collect();
            let state = PointVortexState::new(positions, intensities, domain).unwrap();
            let i = trial % 3;
            let (r, th) = (rng.gen_range(1e-3..0.1), rng.gen_range(0.0..std::f64::consts::TAU));
            let x = state.positions[i] + Vec2::new(r * th.cos(), r * th.sin());
            let g = intrinsic_distance_grad(&state, i, x).unwrap();
            let u = pvs_velocity(&state, x).unwrap() - pvs_self_velocity(&state, i).unwrap();
            worst = worst.max(g.dot(u).abs() / (g.norm() * u.norm()));
        }
        let ci = fit.slope_ci95.unwrap();
        (fit.slope >= 2.9 && worst <= 1e-6, format!("cubic slope {:.3} (95% CI {:.3}..{:.3}, {} radii), max orthogonality defect {worst:.1e}", fit.slope, ci.0, ci.1, fit.points))
    });
}

#[test]
fn criterion_4_certificate_constants() {
    criterion("4 (constants)", minutes(15.0), || {
        let frozen = FrozenConstants::bundled();
        let (report, records) = run_corpus(&CorpusConfig { calibration_seed: frozen.calibration.certificate_seed, validation_seed: 2002, size: 200 }, &frozen).unwrap();
        let v = &report.validation;
        let t21 = records.iter().all(|r| r.certificate.supp_radius_ratio <= 10.0);
        let ok = frozen.c22 > 0.0 && frozen.c24 > 0.0 && v.all_pass() && v.in_regime > 0 && t21;
        (ok, format!(
            "c22 = {:.3e}, c24 = {:.3e}; validation in-regime {}/{}, T22 {}/{}, T24 {}/{}, T21 all = {t21}",
            frozen.c22, frozen.c24, v.in_regime, v.total, v.t22_pass, v.t22_checked, v.t24_pass, v.t24_checked
        ))
    });
}

#[test]
fn criterion_4_two_ball_example() {
    criterion("4 (two-ball)", minutes(15.0), || {
        let points: Vec<_> = [0.05, 0.1, 0.2].iter().map(|&s| two_ball_point(s, 8.0).unwrap()).collect();
        let ok = points.iter().all(|p| p.ratio_to_reference >= 1.0 / 3.0 && p.ratio_to_reference <= 3.0);
        let detail = points
            .iter()
            .map(|p| format!("s = {}: defect/(s²|ln s|) = {:.2}, defect/(10π s²|ln s|) = {:.4}", p.s, p.ratio_to_reference, p.defect / p.leading_order))
            .collect::<Vec<_>>()
            .join("; ");
        (ok, detail)
    });
}

fn brute_force(xs: &[Vec2], ys: &[Vec2], p: i32) -> f64 {
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut c = vec![0usize; n];
    let cost = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| xs[i].dist(ys[j]).powi(p)).sum::<f64>() / n as f64;
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 { perm.swap(0, i) } else { perm.swap(c[i], i) }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best.powf(1.0 / p as f64)
}

#[test]
fn criterion_5_exact_transport() {
    criterion("5", minutes(1.0), || {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut worst: f64 = 0.0;
        for k in 0..50 {
            let n = 1 + k % 6;
            let pts = |rng: &mut ChaCha8Rng| (0..n).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect::<Vec<_>>();
            let (xs, ys) = (pts(&mut rng), pts(&mut rng));
            let w = vec![1.0 / n as f64; n];
            for p in [1, 2] {
                let exact = wasserstein_exact(&WeightedPointCloud::new(xs.clone(), w.clone()).unwrap(), &WeightedPointCloud::new(ys.clone(), w.clone()).unwrap(), p as u32).unwrap();
                worst = worst.max((exact - brute_force(&xs, &ys, p)).abs());
            }
        }
        let mut axioms = true;
        for _ in 0..100 {
            let cloud = |rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(1..8);
                let pts = (0..n).map(|_| Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
                let t: f64 = w.iter().sum();
                WeightedPointCloud::new(pts, w.iter().map(|v| v / t).collect()).unwrap()
            };
            let (a, b, c) = (cloud(&mut rng), cloud(&mut rng), cloud(&mut rng));
            for p in [1u32, 2] {
                let ab = wasserstein_exact(&a, &b, p).unwrap();
                let ba = wasserstein_exact(&b, &a, p).unwrap();
                let ac = wasserstein_exact(&a, &c, p).unwrap();
                let bc = wasserstein_exact(&b, &c, p).unwrap();
                let aa = wasserstein_exact(&a, &a, p).unwrap();
                axioms &= aa.abs() <= 1e-12 && (ab - ba).abs() <= 1e-10 && ab >= 0.0 && ac <= ab + bc + 1e-10;
            }
        }
        (worst <= 1e-10 && axioms, format!("max |exact − brute force| = {worst:.1e} over 50 instances, metric axioms on 100 = {axioms}"))
    });
}

#[test]
fn criterion_6_moment_bookkeeping() {
    criterion("6", Duration::from_secs(1), || {
        let eps = 0.05;
        let patch = |x: f64, profile| VortexPatchSpec { center: Vec2::new(x, 0.0), intensity: 1.0, epsilon: eps, profile, support_radius_factor: 1.0, peak_vorticity: None };
        let spec = InitialDataSpec {
            domain: Domain::FullPlane,
            patches: vec![patch(-0.5, Profile::SmoothBump), patch(0.5, Profile::PerturbedDisk { amplitude: 0.2, mode: 3 })],
            separation_b: 1.0, beta: 2.0, n3: 1.0, n1: 1.0, n2: 10.0,
        };
        let field = discretize(&spec, 256).unwrap();
        let mut settings = DiagnosticsSettings::new(eps, 1.0);
        settings.energies = false;
        let s = sample(&field, 0.0, &settings).unwrap();
        let moments_zero = s.m_k.iter().all(|m| m.value == 0.0);
        let spread_ok = s.spread == 40.0 * eps;
        let eta_ok = cutoff_eta(40.0 * eps, eps, 1.0) == 0.0 && cutoff_eta(80.0 * eps, eps, 1.0) == 1.0;
        (moments_zero && spread_ok && eta_ok, format!("M_k(0) = 0 for {} orders: {moments_zero}; S(0) = {} (40N₁ε = {}); η endpoints exact: {eta_ok}", s.m_k.len(), s.spread, 40.0 * eps))
    });
}

#[test]
fn criterion_7_surrogate_equivalence() {
    criterion("7", minutes(10.0), || {
        let frozen = FrozenConstants::bundled();
        let runs = surrogate_suite(3003, 20).unwrap();
        let s = check_suite(&runs, frozen.surrogate_k);
        (frozen.surrogate_k > 0.0 && s.all_pass(), format!("K = {:.3e}; {}/{} samples over {} runs within bound, max ratio {:.3e}", s.k, s.passed, s.points, s.runs, s.max_ratio))
    });
}

#[test]
fn criterion_8_confinement_scaling() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    criterion("8", minutes(60.0 * 8.0 / cores as f64), || {
        let cfg: ScalingConfig = config::load(&configs().join("scaling_study.json")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = scaling_study(&cfg, &OutputDir::create(dir.path()).unwrap(), None).unwrap();
        let conf = r.max_confinement_exponent.unwrap_or(f64::INFINITY);
        let res = r.residual_exponent.as_ref().map_or(f64::NEG_INFINITY, |f| f.slope);
        let flat = r.control.as_ref().is_some_and(|c| c.flat);
        let ok = r.failures.is_empty() && conf <= 0.6 && res >= 1.5 && flat;
        let ci = r.residual_exponent.as_ref().and_then(|f| f.slope_ci95).unwrap_or((f64::NAN, f64::NAN));
        (ok, format!(
            "max diameter time-exponent {conf:.3} (≤ 0.6); residual ε-slope {res:.3} (95% CI {:.2}..{:.2}, ≥ 1.5); control flat = {flat}; failures {}",
            ci.0, ci.1, r.failures.len()
        ))
    });
}

#[test]
fn criterion_9_conservation() {
    criterion("9", minutes(10.0), || {
        let cfg: SimulateConfig = config::load(&configs().join("conservation.json")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (summary, samples) = run_simulation_samples(&cfg, &OutputDir::create(dir.path()).unwrap(), None).unwrap();
        let circ0 = samples[0].conservation.total_circulation;
        let exact = samples.iter().all(|s| s.conservation.total_circulation == circ0);
        let d = &summary.drift;
        let n = samples[0].centers.len() * cfg.simulation.particles_per_patch;
        let ok = summary.stopped.is_none() && summary.t_final == cfg.simulation.t_end && exact && d.angular_momentum_rel <= 1e-4 && d.energy_rel <= 5e-3;
        (ok, format!(
            "t = {}, N ≈ {n}; circulation exact = {exact}; angular momentum drift {:.2e} (≤ 1e-4); energy drift {:.2e} (≤ 5e-3)",
            summary.t_final, d.angular_momentum_rel, d.energy_rel
        ))
    });
}
