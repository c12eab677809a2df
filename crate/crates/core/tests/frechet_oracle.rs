use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainscope::trajectory::{discrete_frechet, FrechetMode};
use trainscope::weight_stats::CurvePoint;

fn curve(values: &[f64]) -> Vec<CurvePoint> {
    values.iter().enumerate().map(|(layer, &value)| CurvePoint { layer, value }).collect()
}

/// Minimum over every monotone coupling of the maximum coupled distance,
/// by enumerating all paths from (0, 0) to (n-1, m-1).
fn brute_force(p: &[CurvePoint], q: &[CurvePoint], mode: FrechetMode) -> f64 {
    fn walk(i: usize, j: usize, worst: f64, p: &[CurvePoint], q: &[CurvePoint], mode: FrechetMode, best: &mut f64) {
        let worst = worst.max(mode.point_distance(&p[i], &q[j]));
        if i == p.len() - 1 && j == q.len() - 1 {
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

fn random_curve(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<CurvePoint> {
    let n = rng.gen_range(1..=max_len);
    curve(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn dp_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..300 {
        let (p, q) = (random_curve(&mut rng, 6), random_curve(&mut rng, 6));
        let mode = if case % 3 == 0 { FrechetMode::Planar { layer_axis_scale: 0.1 } } else { FrechetMode::ValueOnly };
        let dp = discrete_frechet(&p, &q, mode).unwrap();
        let bf = brute_force(&p, &q, mode);
        assert!((dp - bf).abs() <= 1e-12, "case {case}: {dp} vs {bf}");
    }
}

#[test]
fn metric_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mode = FrechetMode::ValueOnly;
    for _ in 0..1000 {
        let p = random_curve(&mut rng, 8);
        let q = random_curve(&mut rng, 8);
        let d = discrete_frechet(&p, &q, mode).unwrap();
        assert_eq!(discrete_frechet(&p, &p, mode).unwrap(), 0.0);
        assert_eq!(d, discrete_frechet(&q, &p, mode).unwrap());
        let ends = mode
            .point_distance(&p[0], &q[0])
            .max(mode.point_distance(p.last().unwrap(), q.last().unwrap()));
        assert!(d >= ends);
        let n = p.len();
        let q_same: Vec<CurvePoint> = (0..n).map(|layer| CurvePoint { layer, value: rng.gen_range(-1.0..1.0) }).collect();
        let diag = p.iter().zip(&q_same).map(|(a, b)| mode.point_distance(a, b)).fold(0.0, f64::max);
        assert!(discrete_frechet(&p, &q_same, mode).unwrap() <= diag);
    }
}

#[test]
fn constant_offset() {
    let d = discrete_frechet(&curve(&[0.0, 0.0, 0.0]), &curve(&[1.0, 1.0, 1.0]), FrechetMode::ValueOnly).unwrap();
    assert_eq!(d, 1.0);
}
