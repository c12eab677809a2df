use trainscope::checkpoint_io::{open_container, MappingConfig, NonFinitePolicy, ParameterRole};
use trainscope::fixtures::{gen_converging_run, RunSpec};
use trainscope::report::render_layer_curves;
use trainscope::run::{discover_run, scan_run};
use trainscope::trajectory::{convergence_summary, distance_series, normalized_distance, FrechetMode, Verdict};
use trainscope::weight_stats::{build_trajectory_set, Metric, TrajectorySet};

fn fixture_set(spec: &RunSpec) -> (tempfile::TempDir, TrajectorySet) {
    let dir = tempfile::tempdir().unwrap();
    gen_converging_run(spec, dir.path()).unwrap();
    let run = discover_run(dir.path()).unwrap();
    let cfg = MappingConfig::default().with_strict(true);
    let stats = scan_run(&run, &cfg, NonFinitePolicy::Strict, 1).unwrap();
    let set = build_trajectory_set(stats, Metric::Std, true).unwrap();
    (dir, set)
}

#[test]
fn round_trip_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen_converging_run(&RunSpec::default(), dir.path()).unwrap();
    let a = open_container(&out[0].container).unwrap();
    let copy = dir.path().join("copy.safetensors");
    let tensors: Vec<_> = a
        .tensors
        .iter()
        .map(|r| {
            let v = a.read_tensor_values(&r.name, NonFinitePolicy::Strict).unwrap().values;
            trainscope::checkpoint_io::TensorData::from_values(r.name.clone(), r.dtype, r.shape.clone(), &v)
        })
        .collect();
    trainscope::checkpoint_io::write_container(&copy, &tensors, &a.metadata).unwrap();
    let b = open_container(&copy).unwrap();
    assert_eq!(a.tensors, b.tensors);
    assert_eq!(std::fs::read(&out[0].container).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn converging_run_distances_decrease() {
    let spec = RunSpec::default();
    let (_dir, set) = fixture_set(&spec);
    assert_eq!(set.checkpoints.len(), 6);
    assert_eq!(set.checkpoints[0].per_layer.len(), 36);
    let series = distance_series(&set, FrechetMode::ValueOnly).unwrap();
    assert_eq!(series.len(), 9);
    for s in &series {
        assert_eq!(s.points.len(), 5);
        for w in s.points.windows(2) {
            assert!(w[1].normalized < w[0].normalized, "{}: {:?}", s.role, w);
        }
    }
}

#[test]
fn first_pair_by_hand() {
    let spec = RunSpec::default();
    let (_dir, set) = fixture_set(&spec);
    let role = ParameterRole::MlpUp;
    let got = normalized_distance(&set, role, 0, FrechetMode::ValueOnly).unwrap();
    // Both curves increase with depth and the start-to-limit gap grows with
    // depth, so the last layer is the farthest pair under every coupling and
    // bounds the distance from both sides.
    let last = spec.layers - 1;
    let want_raw = spec.target_std(0, last, role) - spec.target_std(1, last, role);
    let gap = spec.tokens_schedule_b[1] - spec.tokens_schedule_b[0];
    assert!((got.raw - want_raw).abs() <= 1e-12);
    assert!((got.normalized - want_raw / gap).abs() <= 1e-12);
    assert_eq!(got.token_gap_b, gap);
}

#[test]
fn converged_exactly_at_final_point() {
    let (_dir, set) = fixture_set(&RunSpec::default());
    let series = distance_series(&set, FrechetMode::ValueOnly).unwrap();
    for s in &series {
        let eps = s.points[3].normalized;
        let summary = convergence_summary(std::slice::from_ref(s), eps, 1);
        assert_eq!(summary[0].verdict, Verdict::Converged);
        assert_eq!(summary[0].converged_at, Some(4));
        assert_eq!(summary[0].converged_at_tokens_b, Some(600.0));
        let active = convergence_summary(std::slice::from_ref(s), eps, 2);
        assert_eq!(active[0].verdict, Verdict::Active);
    }
}

#[test]
fn layer_curve_chart() {
    let spec = RunSpec {
        tokens_schedule_b: vec![100.0, 200.0, 300.0, 400.0, 500.0],
        ..RunSpec::default()
    };
    let (_dir, set) = fixture_set(&spec);
    let svg = render_layer_curves(&set, ParameterRole::AttnQ, &[]).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 5);
    let legend: Vec<usize> = ["100 B", "200 B", "300 B", "400 B", "500 B"]
        .iter()
        .map(|l| svg.find(&format!(">{l}<")).unwrap())
        .collect();
    assert!(legend.windows(2).all(|w| w[0] < w[1]));

    let one = render_layer_curves(&set, ParameterRole::AttnQ, &["ckpt-002".to_string()]).unwrap();
    assert_eq!(one.matches("<polyline").count(), 1);
    let points = one.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split(' ').count(), 4);
    assert!(matches!(
        render_layer_curves(&set, ParameterRole::QkvFused, &[]),
        Err(trainscope::report::ReportError::RoleAbsent(_))
    ));
}

#[test]
fn rms_metric_and_planar_mode() {
    let (_dir, set) = fixture_set(&RunSpec::default());
    let rms = build_trajectory_set(set.checkpoints.clone(), Metric::Rms, true).unwrap();
    let a = &set.trajectories[0].points;
    let b = &rms.trajectories[0].points;
    // Zero-mean tensors: rms equals std.
    for (x, y) in a.iter().zip(b) {
        assert!((x.value - y.value).abs() <= 1e-15);
    }
    let planar = distance_series(&set, FrechetMode::Planar { layer_axis_scale: 1e-3 }).unwrap();
    assert_eq!(planar.len(), 9);
}
