use proptest::prelude::*;
use vortexlab_core::{deposit, discretize, validate, Domain, GridParams, InitialDataSpec, Profile, Vec2, VortexPatchSpec};

fn profile() -> impl Strategy<Value = Profile> {
    prop_oneof![
        Just(Profile::UniformDisk),
        Just(Profile::SmoothBump),
        (0.0..0.4f64, 1u32..6).prop_map(|(amplitude, mode)| Profile::PerturbedDisk { amplitude, mode }),
        (0.0..0.4f64, 1u32..6).prop_map(|(amplitude, mode)| Profile::PerturbedBump { amplitude, mode }),
    ]
}

fn spec() -> impl Strategy<Value = InitialDataSpec> {
    (prop::bool::ANY, 0.01..0.08f64, prop::collection::vec((profile(), prop_oneof![-2.0..-0.3f64, 0.3..2.0f64]), 1..4)).prop_map(|(disk, epsilon, p)| {
        let n = p.len();
        let patches = p
            .into_iter()
            .enumerate()
            .map(|(k, (profile, intensity))| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                VortexPatchSpec { center: Vec2::new(0.4 * th.cos(), 0.4 * th.sin()), intensity, epsilon, profile, support_radius_factor: 1.0, peak_vorticity: None }
            })
            .collect();
        InitialDataSpec {
            domain: if disk { Domain::UnitDisk } else { Domain::FullPlane },
            patches,
            separation_b: 0.3,
            beta: 1.0,
            n3: 1.0,
            n1: 1.0,
            n2: 10.0,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discretization_respects_support_and_circulation(s in spec(), ppp in 16usize..400) {
        prop_assert!(validate(&s).is_empty());
        let f = discretize(&s, ppp).unwrap();
        for (i, p) in s.patches.iter().enumerate() {
            prop_assert!((f.label_circulation(i) - p.intensity).abs() <= 1e-12 * p.intensity.abs());
            for q in f.label_indices(i) {
                prop_assert!(f.positions[q].dist(p.center) <= p.support_radius() * (1.0 + 1e-12));
                prop_assert_eq!(f.circulations[q].signum(), p.intensity.signum());
            }
        }
    }

    #[test]
    fn deposit_conserves_each_patch(s in spec(), ppp in 16usize..200) {
        let f = discretize(&s, ppp).unwrap();
        for (i, p) in s.patches.iter().enumerate() {
            let pts: Vec<Vec2> = f.label_indices(i).iter().map(|&q| f.positions[q]).collect();
            let g = GridParams::covering(&pts, 0.5 * f.blob_radius, vortexlab_core::model::DEPOSIT_MARGIN_CELLS);
            let d = deposit(&f, i, &g).unwrap();
            prop_assert!((d.mass() - p.intensity.abs()).abs() <= 1e-10 * p.intensity.abs(), "{} vs {}", d.mass(), p.intensity);
        }
    }
}
