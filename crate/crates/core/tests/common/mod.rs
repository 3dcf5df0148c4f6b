//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's kinematics or metrics code.
#![allow(dead_code)]

use std::collections::HashMap;

use morphik::rotation::{random_rotation, uniform_rotation, Mat3, Vec3};
use morphik::skeleton::{Gender, Pose, ShapeParams, SHAPE_DIMS};
use rand::Rng;
use serde_json::Value;

pub type V3 = [f64; 3];
pub type M3 = [[f64; 3]; 3];

pub fn bundled_doc() -> Value {
    serde_json::from_str(include_str!("../../assets/default_skeleton.json")).unwrap()
}

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn mat_vec(a: &M3, v: &V3) -> V3 {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

pub fn to_m3(r: &Mat3) -> M3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
    }
    m
}

fn v3(v: &Value) -> V3 {
    let a = v.as_array().unwrap();
    [a[0].as_f64().unwrap(), a[1].as_f64().unwrap(), a[2].as_f64().unwrap()]
}

/// Shaped offset of one joint read straight from the JSON document.
fn doc_offset(doc: &Value, j: usize, shape: &ShapeParams) -> V3 {
    let joint = &doc["joints"][j];
    let name = joint["name"].as_str().unwrap();
    let gender_key = match shape.gender {
        Gender::Male => Some("male"),
        Gender::Female => Some("female"),
        Gender::Neutral => None,
    };
    let variant = gender_key.and_then(|g| doc.get("gender_variants").and_then(|v| v.get(g)));
    let mut rest = v3(&joint["offset"]);
    if let Some(o) = variant.and_then(|v| v.get("offsets")).and_then(|o| o.get(name)) {
        rest = v3(o);
    }
    let basis = variant
        .and_then(|v| v.get("shape_basis"))
        .or_else(|| doc.get("shape_basis"));
    let mut out = [0.0; 3];
    for r in 0..3 {
        let mut blend = rest[r];
        if let Some(b) = basis {
            for k in 0..SHAPE_DIMS {
                blend += b[j][r][k].as_f64().unwrap() * shape.betas[k];
            }
        }
        out[r] = blend * shape.scale;
    }
    out
}

/// Plain recursive FK over the JSON document: global transform of a joint
/// is its parent's transform composed with its own local one.
pub fn naive_fk(doc: &Value, shape: &ShapeParams, pose: &Pose) -> Vec<V3> {
    let joints = doc["joints"].as_array().unwrap();
    let index: HashMap<&str, usize> = joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j["name"].as_str().unwrap(), i))
        .collect();
    fn global(
        j: usize,
        doc: &Value,
        index: &HashMap<&str, usize>,
        shape: &ShapeParams,
        pose: &Pose,
    ) -> (M3, V3) {
        let local = to_m3(&pose.rotations[j]);
        match doc["joints"][j]["parent"].as_str() {
            None => (local, [pose.root_position.x, pose.root_position.y, pose.root_position.z]),
            Some(p) => {
                let (gp, pp) = global(index[p], doc, index, shape, pose);
                let o = mat_vec(&gp, &doc_offset(doc, j, shape));
                (mat_mul(&gp, &local), [pp[0] + o[0], pp[1] + o[1], pp[2] + o[2]])
            }
        }
    }
    (0..joints.len())
        .map(|j| global(j, doc, &index, shape, pose).1)
        .collect()
}

pub fn random_shape<R: Rng>(rng: &mut R) -> ShapeParams {
    let mut betas = [0.0; SHAPE_DIMS];
    for b in &mut betas {
        *b = rng.random_range(-3.0..3.0);
    }
    let gender = [Gender::Neutral, Gender::Male, Gender::Female][rng.random_range(0..3)];
    ShapeParams::new(betas, gender, rng.random_range(0.5..1.6))
}

pub fn random_pose<R: Rng>(rng: &mut R, n: usize) -> Pose {
    Pose {
        root_position: Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ),
        rotations: (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    uniform_rotation(rng)
                } else {
                    random_rotation(rng, 0.8)
                }
            })
            .collect(),
    }
}

/// Unit quaternion [w, x, y, z] of a rotation matrix, by the trace method.
pub fn quat_of(r: &M3) -> [f64; 4] {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        [(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Angle between two rotations from their quaternions: the relative
/// quaternion q_a* q_b has angle 2·atan2(|v|, |w|).
pub fn quat_angle(a: &M3, b: &M3) -> f64 {
    let qa = quat_of(a);
    let qb = quat_of(b);
    let (w1, x1, y1, z1) = (qa[0], -qa[1], -qa[2], -qa[3]);
    let (w2, x2, y2, z2) = (qb[0], qb[1], qb[2], qb[3]);
    let w = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2;
    let x = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2;
    let y = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2;
    let z = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2;
    2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
}

pub fn naive_mpjpe(a: &[V3], b: &[V3]) -> f64 {
    let mut total = 0.0;
    for (p, q) in a.iter().zip(b) {
        total += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    }
    total / a.len() as f64
}

pub fn to_v3(v: &Vec3) -> V3 {
    [v.x, v.y, v.z]
}

/// Rodrigues formula.
pub fn rotation_from_rotvec(w: &V3) -> M3 {
    let th = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if th < 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [w[0] / th, w[1] / th, w[2] / th];
    let (s, c) = th.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            // I + sin·K + (1 - cos)·K², with K² = kkᵀ - I
            r[i][j] = id + s * kx[i][j] + (1.0 - c) * (k[i] * k[j] - id);
        }
    }
    r
}

/// Plain Nelder–Mead simplex minimizer with restarts.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut best = x0.to_vec();
    let mut best_f = f(&best);
    for _restart in 0..4 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut x = best.clone();
            x[i] += step;
            simplex.push(x);
        }
        let mut fs: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
        for _ in 0..iters {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fs = order.iter().map(|&i| fs[i]).collect();
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < fs[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    fs[n] = fe;
                } else {
                    simplex[n] = xr;
                    fs[n] = fr;
                }
            } else if fr < fs[n - 1] {
                simplex[n] = xr;
                fs[n] = fr;
            } else {
                let xc = if fr < fs[n] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                if fc < fs[n].min(fr) {
                    simplex[n] = xc;
                    fs[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n)
                            .map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]))
                            .collect();
                        fs[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=n).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap();
        if fs[i] < best_f {
            best_f = fs[i];
            best = simplex[i].clone();
        }
    }
    (best, best_f)
}

/// Per-pose MPJPE (meters) when the solver sees ground-truth position
/// effectors on the first `k` joints of a per-pose random permutation, so
/// the effector sets are nested across `ks`. Returns one vector per `k`.
pub fn nested_position_errors(
    model: &morphik::ik::IkModel,
    t: &morphik::skeleton::SkeletonTemplate,
    examples: &[morphik::ik::TrainingExample],
    ks: &[usize],
    seed: u64,
) -> Vec<Vec<f64>> {
    use morphik::ik::{Effector, EffectorSet, IkInput};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let orders: Vec<Vec<usize>> = examples
        .iter()
        .map(|_| {
            let mut o: Vec<usize> = (0..t.len()).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let inputs: Vec<IkInput> = examples
                .iter()
                .zip(&orders)
                .map(|(ex, order)| {
                    let effs = order[..k]
                        .iter()
                        .map(|&j| Effector::position(j, ex.positions.positions[j]))
                        .collect();
                    IkInput { effectors: EffectorSet::new(effs, t.len()).unwrap(), shape: ex.input.shape }
                })
                .collect();
            let poses = model.solve_batch(t, &inputs).unwrap();
            poses
                .iter()
                .zip(examples)
                .map(|(p, ex)| {
                    let fk = morphik::skeleton::forward_kinematics(t, &ex.input.shape, p).unwrap();
                    morphik::metrics::mpjpe(&ex.positions.positions, &fk.positions).unwrap()
                })
                .collect()
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}
