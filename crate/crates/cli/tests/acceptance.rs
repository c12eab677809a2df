//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances and time limits are pinned below.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainscope::checkpoint_io::{decode_bf16, decode_f16, Dtype, MappingConfig, NonFinitePolicy, ParameterRole};
use trainscope::fixtures::{gen_converging_run, loss_curve, LossCurveSpec, RunSpec};
use trainscope::monitor::{detect_plateaus, detect_spikes, mask_spikes, PlateauConfig, SpikeConfig};
use trainscope::planner::{
    batch_size_at, build_training_plan, lr_at, validate_recipe, DataSource, DiagnosticCode, Domain, Inventory,
    Language, ScheduleSpec, StageRecipe, ValidationPolicy,
};
use trainscope::report::{render_layer_curves, render_line_chart, ChartSeries, ChartStyle};
use trainscope::run::{discover_run, scan_run};
use trainscope::trajectory::{discrete_frechet, distance_series, FrechetMode};
use trainscope::weight_stats::{build_trajectory_set, tensor_stats, CurvePoint, Metric};

const FRECHET_TOL: f64 = 1e-12;
const FRECHET_PAIRS: usize = 300;
const FRECHET_MAX_LEN: usize = 6;
const FRECHET_LIMIT: Duration = Duration::from_secs(5);
const METRIC_CASES: usize = 1000;
const STD_TOL: f64 = 1e-9;
const SHIFT_SCALE_TOL: f64 = 1e-10;
const STATS_ELEMS: usize = 1_000_000;
const PIPELINE_LIMIT: Duration = Duration::from_secs(10);
const COSINE_MID_TOL: f64 = 1e-12;
const SCAN_LIMIT: Duration = Duration::from_secs(5);
const BIG_CHECKPOINT_BYTES: u64 = 100_000_000;
/// `--jobs 4` may take this much longer than `--jobs 1` and still count as
/// not slower: both are the minimum of `TIMING_RUNS` wall-clock runs, and
/// a single-core host gains nothing from more threads.
const JOBS_SLACK: f64 = 1.10;
const TIMING_RUNS: usize = 7;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trainscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn curve(values: &[f64]) -> Vec<CurvePoint> {
    values.iter().enumerate().map(|(layer, &value)| CurvePoint { layer, value }).collect()
}

fn random_curve(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<CurvePoint> {
    let n = rng.gen_range(1..=max_len);
    curve(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Minimum over all monotone couplings of the largest coupled distance.
fn brute_force(p: &[CurvePoint], q: &[CurvePoint], mode: FrechetMode) -> f64 {
    fn walk(i: usize, j: usize, worst: f64, p: &[CurvePoint], q: &[CurvePoint], mode: FrechetMode, best: &mut f64) {
        let worst = worst.max(mode.point_distance(&p[i], &q[j]));
        if i + 1 == p.len() && j + 1 == q.len() {
            *best = best.min(worst);
            return;
        }
        if i + 1 < p.len() {
            walk(i + 1, j, worst, p, q, mode, best);
        }
        if j + 1 < q.len() {
            walk(i, j + 1, worst, p, q, mode, best);
        }
        if i + 1 < p.len() && j + 1 < q.len() {
            walk(i + 1, j + 1, worst, p, q, mode, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, p, q, mode, &mut best);
    best
}

fn c1_frechet_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..FRECHET_PAIRS {
        let (p, q) = (random_curve(&mut rng, FRECHET_MAX_LEN), random_curve(&mut rng, FRECHET_MAX_LEN));
        let mode = if case % 2 == 0 { FrechetMode::ValueOnly } else { FrechetMode::Planar { layer_axis_scale: 0.25 } };
        let dp = discrete_frechet(&p, &q, mode).map_err(|e| e.to_string())?;
        let err = (dp - brute_force(&p, &q, mode)).abs();
        ensure(err <= FRECHET_TOL, || format!("case {case}: |dp - brute| = {err:e}"))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < FRECHET_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{FRECHET_PAIRS} pairs, max error {worst:e}, {elapsed:.2?}"))
}

fn c2_metric_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..METRIC_CASES {
        let mode = if case % 2 == 0 { FrechetMode::ValueOnly } else { FrechetMode::Planar { layer_axis_scale: 0.1 } };
        let p = random_curve(&mut rng, 10);
        let q = random_curve(&mut rng, 10);
        let d = discrete_frechet(&p, &q, mode).map_err(|e| e.to_string())?;
        ensure(discrete_frechet(&p, &p, mode).unwrap() == 0.0, || format!("case {case}: identity"))?;
        ensure(discrete_frechet(&q, &p, mode).unwrap() == d, || format!("case {case}: symmetry"))?;
        let ends = mode
            .point_distance(&p[0], &q[0])
            .max(mode.point_distance(p.last().unwrap(), q.last().unwrap()));
        ensure(d >= ends, || format!("case {case}: endpoint bound {d} < {ends}"))?;
        let same: Vec<CurvePoint> = p.iter().map(|c| CurvePoint { layer: c.layer, value: rng.gen_range(-1.0..1.0) }).collect();
        let diag = p.iter().zip(&same).map(|(a, b)| mode.point_distance(a, b)).fold(0.0, f64::max);
        let ds = discrete_frechet(&p, &same, mode).unwrap();
        ensure(ds <= diag, || format!("case {case}: diagonal bound {ds} > {diag}"))?;
    }
    Ok(format!("{METRIC_CASES} cases"))
}

/// Float value from its bit fields, built from powers of two; `None` for
/// infinities and NaNs.
fn compose(bits: u32, exp_bits: u32, man_bits: u32) -> Option<f64> {
    let negative = bits >> (exp_bits + man_bits) & 1 == 1;
    let exp = (bits >> man_bits) & ((1 << exp_bits) - 1);
    let frac = (bits & ((1 << man_bits) - 1)) as f64 / 2f64.powi(man_bits as i32);
    let bias = (1i32 << (exp_bits - 1)) - 1;
    if exp == (1 << exp_bits) - 1 {
        return None;
    }
    let magnitude = if exp == 0 {
        frac * 2f64.powi(1 - bias)
    } else {
        (1.0 + frac) * 2f64.powi(exp as i32 - bias)
    };
    Some(if negative { -magnitude } else { magnitude })
}

fn c3_decode() -> Outcome {
    let (mut bf_bad, mut f16_bad, mut f16_finite) = (0, 0, 0);
    for bits in 0..=u16::MAX {
        let got = decode_bf16(bits);
        let ok = match compose(bits as u32, 8, 7) {
            Some(want) => got.to_bits() == want.to_bits(),
            None if bits & 0x7F == 0 => got.is_infinite() && got.is_sign_negative() == (bits >> 15 == 1),
            None => got.is_nan(),
        };
        bf_bad += usize::from(!ok);
        if let Some(want) = compose(bits as u32, 5, 10) {
            f16_finite += 1;
            f16_bad += usize::from(decode_f16(bits).to_bits() != want.to_bits());
        }
    }
    ensure(bf_bad == 0 && f16_bad == 0, || format!("{bf_bad} BF16 and {f16_bad} F16 mismatches"))?;
    ensure(f16_finite == 63488, || format!("{f16_finite} finite F16 patterns"))?;
    Ok(format!("65536 BF16, {f16_finite} finite F16, 0 mismatches"))
}

fn two_pass_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c4_stats() -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, offset, scale) in [(41u64, 0.0, 0.02), (42, 10.0, 1.0), (43, -500.0, 0.1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..STATS_ELEMS).map(|_| offset + scale * rng.gen_range(-1.0..1.0)).collect();
        let s = tensor_stats(&v).map_err(|e| e.to_string())?;
        let e = rel(s.std, two_pass_std(&v));
        ensure(e <= STD_TOL, || format!("seed {seed}: relative error {e:e}"))?;
        worst = worst.max(e);
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.5).collect();
        let e = rel(tensor_stats(&shifted).unwrap().std, s.std);
        ensure(e <= SHIFT_SCALE_TOL, || format!("seed {seed}: shift error {e:e}"))?;
        let scaled: Vec<f64> = v.iter().map(|x| x * -2.5).collect();
        let e = rel(tensor_stats(&scaled).unwrap().std, 2.5 * s.std);
        ensure(e <= SHIFT_SCALE_TOL, || format!("seed {seed}: scale error {e:e}"))?;
    }
    Ok(format!("3 x 1e6 elements, max std error {worst:e}"))
}

fn c5_converging_run() -> Outcome {
    let start = Instant::now();
    let spec = RunSpec::default();
    ensure(spec.layers == 4 && spec.checkpoints() == 6 && spec.contraction == 0.5, || "fixture defaults changed".into())?;
    let gaps: Vec<f64> = spec.tokens_schedule_b.windows(2).map(|w| w[1] - w[0]).collect();
    ensure(gaps.windows(2).all(|w| w[0] == w[1]), || format!("unequal gaps {gaps:?}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    gen_converging_run(&spec, dir.path()).map_err(|e| e.to_string())?;
    let run = discover_run(dir.path()).map_err(|e| e.to_string())?;
    let cfg = MappingConfig::default().with_strict(true);
    let stats = scan_run(&run, &cfg, NonFinitePolicy::Strict, 1).map_err(|e| e.to_string())?;
    let set = build_trajectory_set(stats, Metric::Std, true).map_err(|e| e.to_string())?;
    let series = distance_series(&set, FrechetMode::ValueOnly).map_err(|e| e.to_string())?;
    ensure(series.len() == 9, || format!("{} roles", series.len()))?;
    for s in &series {
        let d: Vec<f64> = s.points.iter().map(|p| p.normalized).collect();
        ensure(d.len() == 5 && d.windows(2).all(|w| w[1] < w[0]), || format!("{}: {d:?}", s.role))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < PIPELINE_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("9 roles x 5 strictly decreasing, {elapsed:.2?}"))
}

fn v3_proportions() -> BTreeMap<Domain, f64> {
    BTreeMap::from([
        (Domain::Web, 0.82),
        (Domain::Code, 0.045),
        (Domain::Wiki, 0.045),
        (Domain::Textbook, 0.045),
        (Domain::Paper, 0.025),
        (Domain::Knowledge, 0.02),
    ])
}

fn stage(name: &str, budget: f64) -> StageRecipe {
    StageRecipe {
        stage: name.into(),
        proportions: v3_proportions(),
        budget_tokens_b: budget,
        ops: vec![],
    }
}

fn example_inventory() -> Result<Inventory, String> {
    Inventory::from_json_file(workspace().join("data/inventory/example.json")).map_err(|e| e.to_string())
}

fn c6_boundaries() -> Outcome {
    let inv = example_inventory()?;
    for (budgets, want) in [([523.0, 1053.0, 298.0], [523.0, 1576.0, 1874.0]), ([203.0, 719.0, 347.0], [203.0, 922.0, 1269.0])] {
        let recipes: Vec<StageRecipe> = budgets.iter().enumerate().map(|(i, &b)| stage(&format!("s{i}"), b)).collect();
        let schedule = ScheduleSpec::with_total(want[2]);
        let plan = build_training_plan(&recipes, &inv, &schedule, &ValidationPolicy::default()).map_err(|e| e.to_string())?;
        ensure(plan.cumulative_boundaries_b == want, || format!("{:?} != {want:?}", plan.cumulative_boundaries_b))?;
    }
    Ok("[523, 1576, 1874] and [203, 922, 1269]".into())
}

fn src(name: &str, domain: Domain, language: Language, available: f64) -> DataSource {
    DataSource {
        name: name.into(),
        domain,
        language,
        available_tokens_b: available,
        batch: 0,
        quality_tier: 1,
    }
}

fn c7_validation() -> Outcome {
    let policy = ValidationPolicy::default();
    let v = validate_recipe(&stage("v3", 1000.0), &example_inventory()?, &policy).map_err(|e| e.to_string())?;
    ensure(v.proportion_sum == 1.0, || format!("sum {}", v.proportion_sum))?;
    ensure(v.diagnostics.is_empty(), || format!("{:?}", v.diagnostics))?;

    let mut balanced = vec![
        src("web-en", Domain::Web, Language::En, 5000.0),
        src("web-zh", Domain::Web, Language::Zh, 5000.0),
    ];
    for (i, d) in Domain::ALL[1..].iter().enumerate() {
        balanced.push(src(&format!("en-{i}"), *d, Language::En, 500.0));
        balanced.push(src(&format!("zh-{i}"), *d, Language::Zh, 500.0));
    }
    let inv = Inventory::new(balanced).map_err(|e| e.to_string())?;
    let v = validate_recipe(&stage("even", 1000.0), &inv, &policy).map_err(|e| e.to_string())?;
    ensure(v.zh_en_ratio == Some(1.0), || format!("zh:en {:?}", v.zh_en_ratio))?;
    ensure(v.diagnostics.iter().any(|d| d.code == DiagnosticCode::LanguageRatioOutOfBand), || "no band warning".into())?;

    let mut scarce = vec![src("web", Domain::Web, Language::En, 5000.0)];
    for (i, d) in Domain::ALL[1..].iter().enumerate() {
        scarce.push(src(&format!("s{i}"), *d, Language::En, 10.0));
    }
    let inv = Inventory::new(scarce).map_err(|e| e.to_string())?;
    let no_lang = ValidationPolicy {
        check_language_ratio: false,
        ..policy
    };
    let v = validate_recipe(&stage("scarce", 1000.0), &inv, &no_lang).map_err(|e| e.to_string())?;
    let wiki = v.plan.per_source["s0"].epochs;
    ensure(wiki > 3.0, || format!("wiki epochs {wiki}"))?;
    ensure(v.diagnostics.iter().any(|d| d.code == DiagnosticCode::EpochCapExceeded), || "no epoch warning".into())?;
    Ok(format!("sum 1.0 exactly, 1:1 band warning, {wiki} epochs warning"))
}

fn c8_schedule() -> Outcome {
    let s = ScheduleSpec::with_total(1874.0);
    let at = |t: f64| lr_at(t, &s).map_err(|e| e.to_string());
    ensure(at(2.0)? == 1.5e-4, || "lr at warmup end".into())?;
    ensure(at(1874.0)? == 1.5e-5, || "lr at total".into())?;
    let mid = at(s.warmup_tokens_b + (s.total_tokens_b - s.warmup_tokens_b) / 2.0)?;
    ensure((mid - 8.25e-5).abs() <= COSINE_MID_TOL, || format!("midpoint {mid:e}"))?;
    let b = |n: u64| batch_size_at(n, &s.batch_ramp).map_err(|e| e.to_string());
    ensure(b(0)? == 32, || "batch at 0".into())?;
    for n in [s.batch_ramp.ramp_samples, s.batch_ramp.ramp_samples + 1, 10 * s.batch_ramp.ramp_samples] {
        ensure(b(n)? == 1024, || format!("batch at {n}"))?;
    }
    Ok(format!("lr 1.5e-4 / 1.5e-5 exact, midpoint {mid:e}, batch 32 -> 1024"))
}

fn c9_detectors() -> Outcome {
    let spike_cfg = SpikeConfig::default();
    let plateau_cfg = PlateauConfig::default();
    let mut summary = Vec::new();
    for spec in [LossCurveSpec::smooth_decay(), LossCurveSpec::with_spikes(), LossCurveSpec::plateau_then_drop()] {
        let (series, truth) = loss_curve(&spec).map_err(|e| e.to_string())?;
        let found: Vec<usize> = detect_spikes(&series, &spike_cfg).map_err(|e| e.to_string())?.iter().map(|e| e.index).collect();
        let want: Vec<usize> = truth.spikes.iter().map(|s| s.index).collect();
        ensure(found == want, || format!("{}: spikes {found:?}, expected {want:?}", spec.name))?;
        let spikes = detect_spikes(&series, &spike_cfg).unwrap();
        let events = detect_plateaus(&mask_spikes(&series, &spikes), &plateau_cfg).map_err(|e| e.to_string())?;
        ensure(events.len() == truth.plateaus.len(), || format!("{}: plateaus {events:?}", spec.name))?;
        for (ev, want) in events.iter().zip(&truth.plateaus) {
            let off = (ev.window_start_b - want.start_b).abs().max((ev.window_end_b - want.end_b).abs());
            ensure(off <= plateau_cfg.window_b, || format!("{}: {ev:?} vs {want:?}", spec.name))?;
        }
        summary.push(format!("{} {}/{}", spec.name, found.len(), events.len()));
    }
    Ok(summary.join(", "))
}

fn golden(name: &str, svg: &str) -> Result<(), String> {
    let path = workspace().join("crates/core/tests/golden").join(name);
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(svg == want, || format!("{name} differs from golden"))
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_str().unwrap();
    let fx = format!("{root}/fx");
    ensure(bin(&["fixtures", "--out", &fx]).status.success(), || "fixtures failed".into())?;
    let run = format!("{fx}/run");
    let loss = format!("{fx}/loss/with_spikes.jsonl");
    let recipe = workspace().join("data/recipes/v3.toml").display().to_string();
    let inventory = workspace().join("data/inventory/example.json").display().to_string();
    let mut checked = 0;
    for args in [vec!["scan", &run], vec!["frechet", &run], vec!["plan", &recipe, &inventory]] {
        let (a, b) = (bin(&args), bin(&args));
        ensure(a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty(), || format!("{} differs", args[0]))?;
        checked += 1;
    }
    let trees: Vec<_> = (0..2)
        .map(|i| {
            let out = format!("{root}/report-{i}");
            let ok = bin(&["report", &run, &loss, "--out", &out]).status.success();
            (ok, read_tree(Path::new(&out)))
        })
        .collect();
    ensure(trees.iter().all(|t| t.0) && trees[0].1 == trees[1].1, || "report bundles differ".into())?;
    let svgs = trees[0].1.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "svg")).count();

    let spec = RunSpec::default();
    let run_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    gen_converging_run(&spec, run_dir.path()).map_err(|e| e.to_string())?;
    let entries = discover_run(run_dir.path()).map_err(|e| e.to_string())?;
    let stats = scan_run(&entries, &MappingConfig::default(), NonFinitePolicy::Strict, 1).map_err(|e| e.to_string())?;
    let set = build_trajectory_set(stats, Metric::Std, true).map_err(|e| e.to_string())?;
    let series = distance_series(&set, FrechetMode::ValueOnly).map_err(|e| e.to_string())?;
    let chart: Vec<ChartSeries> = series.iter().map(ChartSeries::from).collect();
    let style = ChartStyle::new("normalized distance per 1B tokens", "distance / B tokens");
    golden("distance.svg", &render_line_chart(&chart, &spec.stages, &style).map_err(|e| e.to_string())?)?;
    golden("layers-mlp_down.svg", &render_layer_curves(&set, ParameterRole::MlpDown, &[]).map_err(|e| e.to_string())?)?;
    let (loss_series, _) = loss_curve(&LossCurveSpec::with_spikes()).map_err(|e| e.to_string())?;
    let loss_svg = render_line_chart(&[ChartSeries::from(&loss_series)], &spec.stages, &ChartStyle::new("training loss", "loss"))
        .map_err(|e| e.to_string())?;
    golden("loss.svg", &loss_svg)?;
    Ok(format!("{checked} commands, report bundle with {svgs} SVGs, 3 goldens"))
}

fn timed_scan(args: &[&str]) -> Result<Duration, String> {
    let start = Instant::now();
    let out = bin(args);
    let elapsed = start.elapsed();
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    Ok(elapsed)
}

fn c11_performance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let big = dir.path().join("big");
    let spec = RunSpec {
        hidden: 920,
        dtype: Dtype::F32,
        tokens_schedule_b: vec![100.0],
        ..RunSpec::default()
    };
    let written = gen_converging_run(&spec, &big).map_err(|e| e.to_string())?;
    let bytes = std::fs::metadata(&written[0].container).map_err(|e| e.to_string())?.len();
    ensure(bytes >= BIG_CHECKPOINT_BYTES, || format!("checkpoint is only {bytes} bytes"))?;
    let big_time = timed_scan(&["scan", big.to_str().unwrap(), "--jobs", "1"])?;
    ensure(big_time < SCAN_LIMIT, || format!("scan of {bytes} bytes took {big_time:?}"))?;

    let fx = dir.path().join("fx");
    gen_converging_run(&RunSpec::default(), &fx).map_err(|e| e.to_string())?;
    let fx = fx.to_str().unwrap();
    let best = |jobs: &str| -> Result<Duration, String> {
        let mut times = Vec::new();
        for _ in 0..TIMING_RUNS {
            times.push(timed_scan(&["scan", fx, "--jobs", jobs])?);
        }
        Ok(times.into_iter().min().unwrap())
    };
    let (one, four) = (best("1")?, best("4")?);
    ensure(four.as_secs_f64() <= one.as_secs_f64() * JOBS_SLACK, || format!("--jobs 4 {four:?} vs --jobs 1 {one:?}"))?;
    Ok(format!(
        "{:.1} MB in {big_time:.2?}; fixtures --jobs 1 {one:.2?}, --jobs 4 {four:.2?}",
        bytes as f64 / 1e6
    ))
}

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("frechet DP equals brute force", c1_frechet_oracle),
        ("frechet metric properties", c2_metric_properties),
        ("exhaustive BF16/F16 decoding", c3_decode),
        ("single-pass statistics oracle", c4_stats),
        ("converging run end to end", c5_converging_run),
        ("stage boundary arithmetic", c6_boundaries),
        ("recipe validation", c7_validation),
        ("schedule anchors", c8_schedule),
        ("detector ground truth", c9_detectors),
        ("byte-identical outputs and goldens", c10_determinism),
        ("scan performance", c11_performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
