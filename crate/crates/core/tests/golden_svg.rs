//! Renders the fixture charts and compares them byte for byte with the
//! files in `tests/golden`. Run with `UPDATE_GOLDEN=1` to rewrite them.

use std::path::PathBuf;

use trainscope::checkpoint_io::{MappingConfig, NonFinitePolicy, ParameterRole};
use trainscope::fixtures::{gen_converging_run, loss_curve, LossCurveSpec, RunSpec};
use trainscope::report::{render_layer_curves, render_line_chart, ChartSeries, ChartStyle};
use trainscope::run::{discover_run, scan_run};
use trainscope::trajectory::{distance_series, FrechetMode};
use trainscope::weight_stats::{build_trajectory_set, Metric};

fn check(name: &str, svg: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, svg).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(svg == want, "{name} differs from {}", path.display());
}

#[test]
fn fixture_run_charts() {
    let spec = RunSpec::default();
    let dir = tempfile::tempdir().unwrap();
    gen_converging_run(&spec, dir.path()).unwrap();
    let run = discover_run(dir.path()).unwrap();
    let stats = scan_run(&run, &MappingConfig::default(), NonFinitePolicy::Strict, 1).unwrap();
    let set = build_trajectory_set(stats, Metric::Std, true).unwrap();
    let series = distance_series(&set, FrechetMode::ValueOnly).unwrap();
    let chart: Vec<ChartSeries> = series.iter().map(ChartSeries::from).collect();
    let style = ChartStyle::new("normalized distance per 1B tokens", "distance / B tokens");
    check("distance.svg", &render_line_chart(&chart, &spec.stages, &style).unwrap());
    check("layers-mlp_down.svg", &render_layer_curves(&set, ParameterRole::MlpDown, &[]).unwrap());
}

#[test]
fn loss_chart() {
    let (series, _) = loss_curve(&LossCurveSpec::with_spikes()).unwrap();
    let stages = RunSpec::default().stages;
    let svg = render_line_chart(&[ChartSeries::from(&series)], &stages, &ChartStyle::new("training loss", "loss")).unwrap();
    check("loss.svg", &svg);
}
