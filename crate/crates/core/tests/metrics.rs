mod common;

use std::f64::consts::PI;

use morphik::metrics::{geodesic_error, mpjpe, pa_mpjpe, procrustes, MetricAccumulator};
use morphik::rotation::{axis_angle, random_rotation, random_unit_vector, uniform_rotation, Mat3, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{naive_mpjpe, nelder_mead, quat_angle, rotation_from_rotvec, to_m3, to_v3};

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

#[test]
fn geodesic_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let r = uniform_rotation(&mut rng);
        assert!(geodesic_error(&r, &r).unwrap().abs() < 1e-9);
    }
    for axis in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
        let half = axis_angle(&axis, PI);
        assert!((geodesic_error(&Mat3::identity(), &half).unwrap() - PI).abs() < 1e-9);
    }
}

#[test]
fn geodesic_matches_quaternion_angle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let a = uniform_rotation(&mut rng);
        // mix in near-identical and near-opposite pairs
        let b = match i % 4 {
            0 => a * random_rotation(&mut rng, 1e-4),
            1 => a * axis_angle(&random_unit_vector(&mut rng), PI - rng.random_range(0.0..1e-3)),
            _ => uniform_rotation(&mut rng),
        };
        let ge = geodesic_error(&a, &b).unwrap();
        let oracle = quat_angle(&to_m3(&a), &to_m3(&b));
        worst = worst.max((ge - oracle).abs());
    }
    assert!(worst < 1e-9, "worst {worst}");
}

#[test]
fn geodesic_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a = uniform_rotation(&mut rng);
        let b = uniform_rotation(&mut rng);
        let ab = geodesic_error(&a, &b).unwrap();
        assert!((ab - geodesic_error(&b, &a).unwrap()).abs() < 1e-12);
        assert!((0.0..=PI).contains(&ab));
    }
    assert!(geodesic_error(&Mat3::identity(), &(Mat3::identity() * 2.0)).is_err());
}

#[test]
fn uniform_offset_mpjpe_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = cloud(&mut rng, 24);
    // small integer coordinates keep the shifted values exact
    let p: Vec<Vec3> = p.iter().map(|v| v.map(|x| (x * 8.0).round())).collect();
    let q: Vec<Vec3> = p.iter().map(|v| v + Vec3::new(3.0, 0.0, 4.0)).collect();
    assert_eq!(mpjpe(&p, &q).unwrap(), 5.0);
}

#[test]
fn mpjpe_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = cloud(&mut rng, 24);
        let b = cloud(&mut rng, 24);
        let want = naive_mpjpe(
            &a.iter().map(to_v3).collect::<Vec<_>>(),
            &b.iter().map(to_v3).collect::<Vec<_>>(),
        );
        assert!((mpjpe(&a, &b).unwrap() - want).abs() < 1e-12);
    }
    assert!(mpjpe(&[], &[]).is_err());
    assert!(mpjpe(&[Vec3::zeros()], &[]).is_err());
}

#[test]
fn pa_mpjpe_removes_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let p = cloud(&mut rng, 24);
        let q = uniform_rotation(&mut rng);
        let s = rng.random_range(0.3..3.0);
        let t = Vec3::new(rng.random_range(-5.0..5.0), 1.0, -2.0);
        let moved: Vec<Vec3> = p.iter().map(|x| q * x * s + t).collect();
        let (e, degenerate) = pa_mpjpe(&[p.clone()], &[moved]).unwrap();
        assert!(e < 1e-9, "{e}");
        assert!(!degenerate);
    }
}

#[test]
fn procrustes_agrees_with_direct_minimization() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..15 {
        let x = cloud(&mut rng, 12);
        let q = uniform_rotation(&mut rng);
        let s = rng.random_range(0.5..2.0);
        let y: Vec<Vec3> = x
            .iter()
            .map(|v| q * v * s + Vec3::new(0.2, -0.4, 1.0) + Vec3::new(rng.random_range(-0.1..0.1), 0.05, 0.0))
            .collect();
        let sse = |p: &[f64]| -> f64 {
            let r = rotation_from_rotvec(&[p[1], p[2], p[3]]);
            let scale = p[0].exp();
            x.iter()
                .zip(&y)
                .map(|(a, b)| {
                    (0..3)
                        .map(|i| {
                            let v = scale * (r[i][0] * a.x + r[i][1] * a.y + r[i][2] * a.z) + p[4 + i];
                            (v - b[i]).powi(2)
                        })
                        .sum::<f64>()
                })
                .sum()
        };
        let sim = procrustes(&y, &x).unwrap();
        let closed: f64 = x.iter().zip(&y).map(|(a, b)| (sim.apply(a) - b).norm_squared()).sum();
        // start the simplex from a perturbed version of the true transform
        let w = nalgebra::Rotation3::from_matrix(&q).scaled_axis();
        let start = [s.ln() + 0.1, w.x + 0.1, w.y - 0.1, w.z, 0.0, 0.0, 0.5];
        let (_, direct) = nelder_mead(sse, &start, 0.2, 4000);
        assert!(closed <= direct + 1e-9, "closed {closed} direct {direct}");
        assert!((closed - direct).abs() < 1e-6 * (1.0 + direct), "closed {closed} direct {direct}");
    }
}

fn perturbed(rng: &mut ChaCha8Rng, p: &[Vec3]) -> Vec<Vec3> {
    let noise = rng.random_range(0.001..0.5);
    p.iter()
        .map(|v| v + Vec3::new(rng.random_range(-noise..noise), rng.random_range(-noise..noise), 0.0))
        .collect()
}

#[test]
fn pa_below_mpjpe_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let n_poses = rng.random_range(1..5);
        let truth: Vec<Vec<Vec3>> = (0..n_poses).map(|_| cloud(&mut rng, 24)).collect();
        let pred: Vec<Vec<Vec3>> = (0..n_poses).map(|_| cloud(&mut rng, 24)).collect();
        let (pa, _) = pa_mpjpe(&truth, &pred).unwrap();
        let m = mpjpe(&truth.concat(), &pred.concat()).unwrap();
        assert!(pa <= m + 1e-9, "pa {pa} > mpjpe {m}");
    }
}

#[test]
fn alignment_never_increases_squared_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let truth = cloud(&mut rng, 24);
        let pred = perturbed(&mut rng, &truth);
        let sim = procrustes(&truth, &pred).unwrap();
        let aligned: f64 = truth.iter().zip(&pred).map(|(a, b)| (a - sim.apply(b)).norm_squared()).sum();
        let raw: f64 = truth.iter().zip(&pred).map(|(a, b)| (a - b).norm_squared()).sum();
        assert!(aligned <= raw + 1e-12);
    }
}

/// The fit minimizes squared distances, so for predictions that are already
/// close the mean (unsquared) distance can go up slightly.
#[test]
fn least_squares_fit_can_raise_mean_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..2000 {
        let truth = cloud(&mut rng, 24);
        let pred = perturbed(&mut rng, &truth);
        let (pa, _) = pa_mpjpe(&[truth.clone()], &[pred.clone()]).unwrap();
        let m = mpjpe(&truth, &pred).unwrap();
        worst_rel = worst_rel.max((pa - m) / m);
    }
    assert!(worst_rel > 0.0);
    assert!(worst_rel < 0.05, "{worst_rel}");
}

#[test]
fn collinear_points_fall_back_to_translation() {
    let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    let shifted: Vec<Vec3> = line.iter().map(|v| v + Vec3::new(0.0, 1.0, 0.0)).collect();
    let sim = procrustes(&shifted, &line).unwrap();
    assert!(sim.degenerate);
    let (e, degenerate) = pa_mpjpe(&[shifted], &[line]).unwrap();
    assert!(degenerate);
    assert!(e < 1e-12);
}

#[test]
fn accumulator_reports_millimeters() {
    let mut acc = MetricAccumulator::default();
    let t: Vec<Vec3> = (0..24).map(|i| Vec3::new(i as f64, (i % 3) as f64, (i % 5) as f64)).collect();
    let p: Vec<Vec3> = t.iter().map(|v| v + Vec3::new(0.003, 0.0, 0.004)).collect();
    let rots = vec![Mat3::identity(); 24];
    acc.add(&t, &p, &rots, &rots).unwrap();
    let r = acc.report();
    assert!((r.mpjpe_mm - 5.0).abs() < 1e-9);
    assert!(r.pa_mpjpe_mm < 1e-6);
    assert_eq!(r.ge_rad, 0.0);
    assert_eq!(r.n_poses, 1);
}

proptest! {
    #[test]
    fn geodesic_triangle_inequality(a in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(a);
        let (x, y, z) = (uniform_rotation(&mut rng), uniform_rotation(&mut rng), uniform_rotation(&mut rng));
        let d = |p: &Mat3, q: &Mat3| geodesic_error(p, q).unwrap();
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }

    #[test]
    fn mpjpe_is_a_mean_of_distances(seed in any::<u64>(), k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(&mut rng, k);
        prop_assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let b = cloud(&mut rng, k);
        let m = mpjpe(&a, &b).unwrap();
        let max = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        prop_assert!(m <= max + 1e-15);
    }
}
