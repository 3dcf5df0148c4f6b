//! Central-difference checks of every hand-written backward pass.

mod common;

use morphik::ik::{
    batch_loss, geodesic_smooth, ik_loss, make_training_example, Architecture, IkModel, LossWeights, TrainConfig,
};
use morphik::nn::{orthonormalize_6d, orthonormalize_6d_backward, Layer, LayerSpec, Tensor};
use morphik::rotation::{axis_angle, random_unit_vector, uniform_rotation, Mat3, Vec3};
use morphik::skeleton::{fk_backward, posed, shaped_offsets, SkeletonTemplate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_pose, random_shape};

const H: f64 = 1e-5;
const REL: f64 = 1e-4;

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    // gradients that are zero up to rounding compare absolutely
    scale < 1e-7 || (analytic - numeric).abs() / scale < REL
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Projects the layer output on a fixed random direction and checks input
/// and parameter gradients of that scalar.
fn check_layer(mut layer: Layer, rng: &mut ChaCha8Rng) {
    let x = random_tensor(rng, 5, layer.fan_in());
    let (y, cache) = layer.forward(&x).unwrap();
    let w = random_tensor(rng, y.rows(), y.cols());
    let mut grads: Vec<Tensor> = layer.params().iter().map(|t| t.zeros_like()).collect();
    let gx = layer.backward(&cache, &w, &mut grads);

    for i in 0..x.len() {
        let numeric = central(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                dot(&layer.forward(&xp).unwrap().0, &w)
            },
            x.data()[i],
        );
        assert!(close(gx.data()[i], numeric), "input {i}: {} vs {numeric}", gx.data()[i]);
    }
    for p in 0..grads.len() {
        for i in 0..grads[p].len() {
            let orig = layer.params()[p].data()[i];
            let numeric = central(
                |v| {
                    layer.params_mut()[p].data_mut()[i] = v;
                    dot(&layer.forward(&x).unwrap().0, &w)
                },
                orig,
            );
            layer.params_mut()[p].data_mut()[i] = orig;
            assert!(close(grads[p].data()[i], numeric), "param {p}[{i}]: {} vs {numeric}", grads[p].data()[i]);
        }
    }
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check_layer(Layer::from_spec(&LayerSpec::linear(7, 4, 3)).unwrap(), &mut rng);
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut layer = Layer::from_spec(&LayerSpec::layer_norm(6)).unwrap();
    // non-trivial gain and bias so both paths are exercised
    for t in layer.params_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    }
    check_layer(layer, &mut rng);
}

#[test]
fn relu_away_from_the_kink() {
    let layer = Layer::from_spec(&LayerSpec::relu(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = random_tensor(&mut rng, 4, 8);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let (y, cache) = layer.forward(&x).unwrap();
    let w = random_tensor(&mut rng, y.rows(), y.cols());
    let gx = layer.backward(&cache, &w, &mut []);
    for i in 0..x.len() {
        let numeric = central(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                dot(&layer.forward(&xp).unwrap().0, &w)
            },
            x.data()[i],
        );
        assert!(close(gx.data()[i], numeric));
    }
}

#[test]
fn residual_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check_layer(Layer::from_spec(&LayerSpec::residual(6, 11)).unwrap(), &mut rng);
}

#[test]
fn six_d_orthonormalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let w = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let fwd = orthonormalize_6d(&v);
        assert!(!fwd.degenerate);
        let g = orthonormalize_6d_backward(&fwd, &w);
        for k in 0..6 {
            let numeric = central(
                |x| {
                    let mut vp = v;
                    vp[k] = x;
                    orthonormalize_6d(&vp).rotation.component_mul(&w).sum()
                },
                v[k],
            );
            assert!(close(g[k], numeric), "component {k}: {} vs {numeric}", g[k]);
        }
    }
}

#[test]
fn forward_kinematics_backward() {
    let t = SkeletonTemplate::bundled();
    let parents = t.parents();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..3 {
        let shape = random_shape(&mut rng);
        let offsets = shaped_offsets(&t, &shape);
        let pose = random_pose(&mut rng, 24);
        let wp: Vec<Vec3> = (0..24).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let wg: Vec<Mat3> = (0..24).map(|_| Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let scalar = |p: &morphik::skeleton::Pose| {
            let s = posed(&parents, &offsets, p);
            (0..24)
                .map(|j| s.positions[j].dot(&wp[j]) + s.globals[j].component_mul(&wg[j]).sum())
                .sum::<f64>()
        };
        let state = posed(&parents, &offsets, &pose);
        let (g_root, g_local) = fk_backward(&parents, &offsets, &pose, &state, &wp, &wg);
        for k in 0..3 {
            let numeric = central(
                |x| {
                    let mut p = pose.clone();
                    p.root_position[k] = x;
                    scalar(&p)
                },
                pose.root_position[k],
            );
            assert!(close(g_root[k], numeric));
        }
        // local rotations are treated as free 3x3 matrices
        for j in 0..24 {
            for (r, c) in [(0, 0), (1, 2), (2, 1), (2, 2)] {
                let numeric = central(
                    |x| {
                        let mut p = pose.clone();
                        p.rotations[j][(r, c)] = x;
                        scalar(&p)
                    },
                    pose.rotations[j][(r, c)],
                );
                assert!(close(g_local[j][(r, c)], numeric), "joint {j} ({r},{c})");
            }
        }
    }
}

#[test]
fn smoothed_geodesic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let r = uniform_rotation(&mut rng);
        // acos is too curved near zero angle for a 1e-5 step
        let r_hat = r * axis_angle(&random_unit_vector(&mut rng), rng.random_range(0.3..2.5));
        let (_, g) = geodesic_smooth(&r_hat, &r);
        for a in 0..3 {
            for b in 0..3 {
                let numeric = central(
                    |x| {
                        let mut m = r_hat;
                        m[(a, b)] = x;
                        geodesic_smooth(&m, &r).0
                    },
                    r_hat[(a, b)],
                );
                assert!(close(g[(a, b)], numeric));
            }
        }
    }
}

#[test]
fn ik_loss_all_terms() {
    let t = SkeletonTemplate::bundled();
    let config = TrainConfig::default();
    let weights = LossWeights { position: 1.0, rotation: 0.5, root: 2.0, look_at: 0.7 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..4 {
        let ex = make_training_example(&t, &mut rng, &config);
        let mut pred = ex.target.clone();
        pred.root_position += Vec3::new(0.1, -0.2, 0.05);
        for r in &mut pred.rotations {
            *r *= axis_angle(&random_unit_vector(&mut rng), rng.random_range(0.3..0.6));
        }
        let offsets = shaped_offsets(&t, &ex.input.shape);
        let loss = |p: &morphik::skeleton::Pose| {
            ik_loss(p, &ex.target, &ex.positions.positions, &t, &offsets, &ex.input.effectors, &weights).0.total()
        };
        let (_, g) = ik_loss(&pred, &ex.target, &ex.positions.positions, &t, &offsets, &ex.input.effectors, &weights);
        for k in 0..3 {
            let numeric = central(
                |x| {
                    let mut p = pred.clone();
                    p.root_position[k] = x;
                    loss(&p)
                },
                pred.root_position[k],
            );
            assert!(close(g.root[k], numeric));
        }
        for j in 0..24 {
            for (a, b) in [(0, 1), (1, 1), (2, 0)] {
                let numeric = central(
                    |x| {
                        let mut p = pred.clone();
                        p.rotations[j][(a, b)] = x;
                        loss(&p)
                    },
                    pred.rotations[j][(a, b)],
                );
                assert!(close(g.rotations[j][(a, b)], numeric), "joint {j} ({a},{b}): {} vs {numeric}", g.rotations[j][(a, b)]);
            }
        }
    }
}

#[test]
fn composed_network_loss() {
    let t = SkeletonTemplate::bundled();
    let arch = Architecture { token_dim: 12, token_layers: 2, hidden_dim: 16, residual_blocks: 1, ..Architecture::default_for(&t, 21) };
    let mut model = IkModel::new(arch).unwrap();
    let config = TrainConfig::default();
    let weights = LossWeights { position: 1.0, rotation: 0.5, root: 2.0, look_at: 0.7 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch: Vec<_> = (0..3).map(|_| make_training_example(&t, &mut rng, &config)).collect();
    let (_, grads) = batch_loss(&model, &t, &batch, &weights, true).unwrap();
    let grads = grads.unwrap();
    let n_params = grads.len();
    let mut checked = 0;
    // a few entries of every parameter tensor
    for p in 0..n_params {
        let len = grads[p].len();
        for _ in 0..3 {
            let i = rng.random_range(0..len);
            let orig = model.params()[p].data()[i];
            let numeric = central(
                |x| {
                    model.params_mut()[p].data_mut()[i] = x;
                    batch_loss(&model, &t, &batch, &weights, false).unwrap().0.total()
                },
                orig,
            );
            model.params_mut()[p].data_mut()[i] = orig;
            assert!(close(grads[p].data()[i], numeric), "tensor {p}[{i}]: {} vs {numeric}", grads[p].data()[i]);
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * n_params);
}
