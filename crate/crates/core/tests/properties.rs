use proptest::prelude::*;

use radflow::flow::Kernel;
use radflow::geometry::truncated_drift;
use radflow::pathcover::sequential_cover;
use radflow::regime::{hitting_ladder, not_hitting_ladder, LadderConfig};
use radflow::stats::Proportion;
use radflow::{BrownianPath, DriftField, DriftProfile, NoiseStream, PointN, RefinePolicy};

fn drift() -> impl Strategy<Value = DriftField> {
    prop_oneof![
        (0.0..20.0f64).prop_map(|v| DriftField::constant(v).unwrap()),
        (0.01..5.0f64, 0.05..3.0f64)
            .prop_map(|(a, s)| DriftField::from_profile(DriftProfile::Saturating { amplitude: a, scale: s }).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_is_a_pure_function_of_its_coordinates(seed: u64, path in 0u64..1000, step in 0u64..1_000_000, coord in 0usize..8) {
        let a = NoiseStream::uniform(seed, path, 8, 1e-3);
        let b = NoiseStream::uniform(seed, path, 8, 1e-3);
        prop_assert_eq!(a.normal(step, coord).to_bits(), b.normal(step, coord).to_bits());
        let mut row = vec![0.0; 8];
        a.normals_into(step, &mut row);
        prop_assert_eq!(row[coord].to_bits(), a.normal(step, coord).to_bits());
    }

    #[test]
    fn radial_evolution_never_approaches(field in drift(), r in 1e-4..10.0f64, h in 1e-6..0.1f64, n in 1.0..1e4f64) {
        let kernel = Kernel::new(&field, n, None);
        let r1 = kernel.evolve_radius(r, h);
        prop_assert!(r1 >= r);
        prop_assert!(kernel.evolve_radius(r, 2.0 * h) >= r1);
        prop_assert!(kernel.evolve_radius(r * 1.5, h) >= r1);
    }

    #[test]
    fn tracer_moves_along_the_ray_from_b(field in drift(), x in prop::array::uniform3(-3.0..3.0f64), b in prop::array::uniform3(-3.0..3.0f64)) {
        let kernel = Kernel::new(&field, 100.0, None);
        let mut psi = x.to_vec();
        let (before, _) = kernel.advance_tracer(&mut psi, &b, 1e-3);
        let d0: Vec<f64> = x.iter().zip(&b).map(|(p, q)| p - q).collect();
        let d1: Vec<f64> = psi.iter().zip(&b).map(|(p, q)| p - q).collect();
        let n0 = d0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((before - n0).abs() <= 1e-12 * (1.0 + n0));
        prop_assert!(n1 >= n0 * (1.0 - 1e-12));
        let dot: f64 = d0.iter().zip(&d1).map(|(u, v)| u * v).sum();
        prop_assert!(dot >= n0 * n1 * (1.0 - 1e-9));
    }

    #[test]
    fn truncated_drift_is_capped(field in drift(), x in prop::collection::vec(-2.0..2.0f64, 1..6), n in 1.0..1e3f64) {
        prop_assume!(x.iter().any(|v| *v != 0.0));
        let p = PointN::new(x).unwrap();
        let f = truncated_drift(&p, &field, n).unwrap();
        prop_assert!(f.norm() <= field.bound() * n * (1.0 + 1e-12));
    }

    #[test]
    fn wilson_interval_brackets_estimate(trials in 1u64..100_000, frac in 0.0..=1.0f64) {
        let k = ((trials as f64) * frac).floor() as u64;
        let p = Proportion::wilson(k, trials).unwrap();
        prop_assert!(p.lower <= p.estimate && p.estimate <= p.upper);
        prop_assert!(p.lower >= 0.0 && p.upper <= 1.0);
    }

    #[test]
    fn cover_balls_chain_and_contain_the_path(seed: u64, dim in 1usize..6, r in 0.2..2.0f64) {
        let path = BrownianPath::generate(&NoiseStream::uniform(seed, 0, dim, 1e-3), 3000, None).unwrap();
        let cover = sequential_cover(&path, r).unwrap();
        prop_assert_eq!(cover.count, cover.centers.len());
        // An exit exactly at the horizon opens no new ball; that sample is uncovered.
        let covered = if cover.close_times.last() == Some(&Some(path.horizon())) {
            path.truncated(path.steps() - 1)
        } else {
            path.clone()
        };
        prop_assert!(cover.coverage_gap(&covered) < r);
        for (open, close) in cover.open_times.iter().zip(&cover.close_times) {
            if let Some(c) = close {
                prop_assert!(c > open);
            }
        }
        let closed = cover.close_times.iter().filter(|c| c.is_some()).count();
        prop_assert_eq!(cover.sigmas.len(), closed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ladder_bookkeeping_is_exact(seed: u64, f in 0.0..3.0f64, hitting: bool) {
        let cfg = LadderConfig {
            max_stages: 6,
            budget: 12,
            dt: 2e-3,
            stage_horizon: 20.0,
            refine: RefinePolicy::None,
            ..LadderConfig::new(2, DriftField::constant(f).unwrap())
        };
        let stream = NoiseStream::uniform(seed, 0, 2, cfg.dt);
        let ladder = if hitting { hitting_ladder(&cfg, &stream) } else { not_hitting_ladder(&cfg, &stream) }.unwrap();
        prop_assert!(ladder.bookkeeping_exact());
        prop_assert!(ladder.steps().iter().all(|s| *s == 1 || *s == -1));
    }

    #[test]
    fn refined_ladders_resolve_crossings(seed: u64, f in 0.5..3.0f64) {
        // Children added on a crossing step must take part in its re-simulation.
        let cfg = LadderConfig {
            max_stages: 4,
            budget: 8,
            dt: 2e-3,
            refine: RefinePolicy::Adaptive { ratio: 0.5, max_level: 6, max_tracers: 64, below: 1.0 },
            ..LadderConfig::new(2, DriftField::constant(f).unwrap())
        };
        let ladder = not_hitting_ladder(&cfg, &NoiseStream::uniform(seed, 1, 2, cfg.dt)).unwrap();
        prop_assert!(ladder.bookkeeping_exact());
    }
}
