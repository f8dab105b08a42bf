use radflow::flow::{discretize_region, refine_cloud, run_flow, run_flow_on_path, run_flow_with_cloud, scale_solution};
use radflow::geometry::DriftProfile;
use radflow::{DriftField, FlowConfig, NoiseStream, RefinePolicy, Region};

fn disc(n: usize) -> Region {
    Region::LateralDisc { level: 1.0, center_perp: vec![0.0; n - 1], radius: 4.0 }
}

fn config(n: usize, drift: DriftField, trunc: f64) -> FlowConfig {
    FlowConfig {
        truncation: trunc,
        horizon: 2.0,
        dt: 1e-3,
        budget: 24,
        refine: RefinePolicy::None,
        ..FlowConfig::new(disc(n), drift)
    }
}

#[test]
fn one_dimensional_zero_drift_hits_when_path_reaches_level() {
    let cfg = FlowConfig {
        truncation: 10.0,
        horizon: 3.0,
        dt: 1e-3,
        budget: 1,
        refine: RefinePolicy::None,
        ..FlowConfig::new(Region::HalfSpace { dim: 1, level: 1.0 }, DriftField::zero())
    };
    for path in 0..20 {
        let res = run_flow(&cfg, &NoiseStream::uniform(11, path, 1, cfg.dt)).unwrap();
        let p = res.path.as_ref().unwrap();
        let first = (0..p.len()).find(|&k| p.position(k)[0] >= 0.9);
        assert_eq!(res.hit, first.is_some());
        if let Some(k) = first {
            assert_eq!(res.tau_hat, Some(p.times()[k]));
        }
    }
}

#[test]
fn dilation_gives_bit_identical_flow() {
    for drift in [
        DriftField::constant(0.8).unwrap(),
        DriftField::from_profile(DriftProfile::Saturating { amplitude: 1.5, scale: 0.3 }).unwrap(),
    ] {
        let cfg = config(2, drift, 50.0);
        for path in 0..4 {
            let res = run_flow(&cfg, &NoiseStream::uniform(5, path, 2, cfg.dt)).unwrap();
            let scaled = scale_solution(&res, 2.0).unwrap();
            let cloud = discretize_region(&scaled.config.region, scaled.config.budget).unwrap();
            let rerun = run_flow_on_path(&scaled.config, cloud, scaled.path.as_ref().unwrap()).unwrap();
            assert_eq!(rerun.min_distance, scaled.min_distance);
            assert_eq!(rerun.tau_hat, scaled.tau_hat);
            for i in 0..rerun.cloud.len() {
                assert_eq!(rerun.cloud.current(i), scaled.cloud.current(i));
            }
        }
    }
}

#[test]
fn hitting_time_is_monotone_in_truncation() {
    let drift = DriftField::constant(0.5).unwrap();
    for path in 0..10 {
        let stream = NoiseStream::uniform(21, path, 2, 1e-3);
        let taus: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&n| run_flow(&config(2, drift.clone(), n), &stream).unwrap().tau_hat.unwrap_or(f64::INFINITY))
            .collect();
        assert!(taus[0] <= taus[1] && taus[1] <= taus[2], "{taus:?}");
        // The truncations coincide while every tracer stays outside 1/10 of B,
        // so the series agree until the fine one first comes near 0.1.
        let a = run_flow(&config(2, drift.clone(), 10.0), &stream).unwrap();
        let b = run_flow(&config(2, drift.clone(), 1000.0), &stream).unwrap();
        let safe = b.min_distance.iter().position(|&d| d < 0.2).unwrap_or(b.min_distance.len());
        assert!(safe <= a.min_distance.len());
        assert_eq!(a.min_distance[..safe], b.min_distance[..safe]);
    }
}

#[test]
fn subclouds_evolve_identically() {
    let cfg = FlowConfig { truncation: 1e6, ..config(3, DriftField::constant(1.0).unwrap(), 1e6) };
    let stream = NoiseStream::uniform(8, 3, 3, cfg.dt);
    let full = discretize_region(&cfg.region, 24).unwrap();
    let labels: Vec<u64> = full.labels().iter().copied().step_by(3).collect();
    let sub = full.subset(&labels).unwrap();
    let a = run_flow_with_cloud(&cfg, full, &stream).unwrap();
    let b = run_flow_with_cloud(&cfg, sub, &stream).unwrap();
    assert_eq!(a.cloud.steps, b.cloud.steps);
    for &l in &labels {
        let ia = a.cloud.index_of(l).unwrap();
        let ib = b.cloud.index_of(l).unwrap();
        assert_eq!(a.cloud.current(ia), b.cloud.current(ib));
    }
    for (da, db) in a.min_distance.iter().zip(&b.min_distance) {
        assert!(da <= db);
    }
}

#[test]
fn refinement_only_lowers_distances() {
    let cfg = config(2, DriftField::constant(0.3).unwrap(), 100.0);
    for path in 0..6 {
        let stream = NoiseStream::uniform(4, path, 2, cfg.dt);
        let res = run_flow(&cfg, &stream).unwrap();
        let fine = refine_cloud(&res, &stream, 4).unwrap();
        assert!(fine.cloud.len() > res.cloud.len());
        for (a, b) in fine.min_distance.iter().zip(&res.min_distance) {
            assert!(a <= b);
        }
        match (res.tau_hat, fine.tau_hat) {
            (Some(a), Some(b)) => assert!(b <= a),
            (Some(_), None) => panic!("refinement lost a hit"),
            _ => {}
        }
    }
}

#[test]
fn adaptive_run_matches_replay_of_its_final_cloud() {
    let cfg = FlowConfig {
        refine: RefinePolicy::Adaptive { ratio: 0.5, max_level: 8, max_tracers: 200, below: 1.0 },
        ..config(2, DriftField::constant(0.3).unwrap(), 100.0)
    };
    for path in 0..6 {
        let stream = NoiseStream::uniform(9, path, 2, cfg.dt);
        let res = run_flow(&cfg, &stream).unwrap();
        let frozen = FlowConfig { refine: RefinePolicy::None, ..cfg.clone() };
        let labels = res.cloud.labels().to_vec();
        let replay = run_flow_on_path(&frozen, res.cloud.subset(&labels).unwrap(), res.path.as_ref().unwrap()).unwrap();
        assert_eq!(replay.min_distance, res.min_distance);
        assert_eq!(replay.tau_hat, res.tau_hat);
    }
}

#[test]
fn distance_series_records_pre_drift_distance() {
    let cfg = config(3, DriftField::constant(0.6).unwrap(), 100.0);
    let stream = NoiseStream::uniform(2, 2, 3, cfg.dt);
    let res = run_flow(&cfg, &stream).unwrap();
    let k = res.steps();
    let before = run_flow(&FlowConfig { horizon: (k - 1) as f64 * cfg.dt, ..cfg.clone() }, &stream).unwrap();
    assert_eq!(before.steps(), k - 1);
    let p = res.path.as_ref().unwrap();
    let (d, _) = before.cloud.nearest_to(p.position(k));
    assert_eq!(d, res.min_distance[k]);
    let (after, _) = res.cloud.nearest_to(p.position(k));
    assert!(after > d);
}
