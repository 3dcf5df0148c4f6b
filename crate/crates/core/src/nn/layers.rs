//! Dense layers with hand-written backward passes.
//!
//! Every `forward` returns the activations its `backward` needs; parameter
//! gradients accumulate into caller-owned buffers laid out like `params()`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_a_bt, matmul_at_b_acc, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    LayerNorm,
    Relu,
    ResidualBlock,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub init_seed: u64,
}

impl LayerSpec {
    pub fn linear(fan_in: usize, fan_out: usize, init_seed: u64) -> Self {
        Self {
            kind: LayerKind::Linear,
            fan_in,
            fan_out,
            init_seed,
        }
    }

    pub fn relu(width: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            fan_in: width,
            fan_out: width,
            init_seed: 0,
        }
    }

    pub fn layer_norm(width: usize) -> Self {
        Self {
            kind: LayerKind::LayerNorm,
            fan_in: width,
            fan_out: width,
            init_seed: 0,
        }
    }

    pub fn residual(width: usize, init_seed: u64) -> Self {
        Self {
            kind: LayerKind::ResidualBlock,
            fan_in: width,
            fan_out: width,
            init_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Kaiming-uniform weights (`±√(6 / fan_in)`), zero bias.
    pub fn init(fan_in: usize, fan_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (b, i, o) = (x.rows(), self.fan_in(), self.fan_out());
        let mut y = vec![0.0; b * o];
        matmul(x.data(), self.weight.data(), b, i, o, &mut y);
        let bias = self.bias.data();
        for row in y.chunks_exact_mut(o) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        Tensor::matrix(b, o, y)
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
        let (b, i, o) = (x.rows(), self.fan_in(), self.fan_out());
        matmul_at_b_acc(x.data(), gy.data(), b, i, o, gw.data_mut());
        let gbd = gb.data_mut();
        for row in gy.data().chunks_exact(o) {
            for (g, v) in gbd.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut gx = vec![0.0; b * i];
        matmul_a_bt(gy.data(), self.weight.data(), b, o, i, &mut gx);
        Tensor::matrix(b, i, gx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn init(width: usize) -> Self {
        let mut gain = Tensor::zeros(&[width]);
        gain.fill(1.0);
        Self {
            gain,
            bias: Tensor::zeros(&[width]),
        }
    }

    fn forward(&self, x: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
        let d = x.cols();
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in xhat.data_mut().chunks_exact_mut(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * r);
            inv_std.push(r);
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gain.data(), self.bias.data());
        for row in y.data_mut().chunks_exact_mut(d) {
            for k in 0..d {
                row[k] = row[k] * g[k] + b[k];
            }
        }
        (y, xhat, inv_std)
    }

    fn backward(
        &self,
        xhat: &Tensor,
        inv_std: &[f64],
        gy: &Tensor,
        gg: &mut Tensor,
        gb: &mut Tensor,
    ) -> Tensor {
        let d = xhat.cols();
        let g = self.gain.data();
        let mut gx = Tensor::zeros(xhat.shape());
        let mut gxh = vec![0.0; d];
        for (r, ((xh, gyr), gxr)) in xhat
            .data()
            .chunks_exact(d)
            .zip(gy.data().chunks_exact(d))
            .zip(gx.data_mut().chunks_exact_mut(d))
            .enumerate()
        {
            for k in 0..d {
                gg.data_mut()[k] += gyr[k] * xh[k];
                gb.data_mut()[k] += gyr[k];
                gxh[k] = gyr[k] * g[k];
            }
            let mean_g = gxh.iter().sum::<f64>() / d as f64;
            let mean_gx = gxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for k in 0..d {
                gxr[k] = inv_std[r] * (gxh[k] - mean_g - xh[k] * mean_gx);
            }
        }
        gx
    }
}

/// Pre-norm residual block: `y = x + W₂·relu(W₁·LN(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ResidualBlock {
    pub fn init(width: usize, seed: u64) -> Self {
        Self {
            norm: LayerNorm::init(width),
            fc1: Linear::init(width, width, seed),
            fc2: Linear::init(width, width, seed.wrapping_add(0x9e37_79b9)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear(Linear),
    LayerNorm(LayerNorm),
    Relu(usize),
    Residual(ResidualBlock),
}

/// Activations saved by a forward pass.
#[derive(Clone, Debug)]
pub enum Cache {
    Linear { input: Tensor },
    LayerNorm { xhat: Tensor, inv_std: Vec<f64> },
    Relu { input: Tensor },
    Residual {
        xhat: Tensor,
        inv_std: Vec<f64>,
        normed: Tensor,
        hidden: Tensor,
        activated: Tensor,
    },
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec) -> Result<Self> {
        if spec.fan_in == 0 || spec.fan_out == 0 {
            return Err(Error::Input("layer dimensions must be positive".into()));
        }
        let square = || {
            if spec.fan_in != spec.fan_out {
                Err(Error::Input(format!(
                    "{:?} layer needs fan_in == fan_out",
                    spec.kind
                )))
            } else {
                Ok(())
            }
        };
        Ok(match spec.kind {
            LayerKind::Linear => Layer::Linear(Linear::init(spec.fan_in, spec.fan_out, spec.init_seed)),
            LayerKind::LayerNorm => {
                square()?;
                Layer::LayerNorm(LayerNorm::init(spec.fan_in))
            }
            LayerKind::Relu => {
                square()?;
                Layer::Relu(spec.fan_in)
            }
            LayerKind::ResidualBlock => {
                square()?;
                Layer::Residual(ResidualBlock::init(spec.fan_in, spec.init_seed))
            }
        })
    }

    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Linear(l) => l.fan_in(),
            Layer::LayerNorm(n) => n.gain.len(),
            Layer::Relu(w) => *w,
            Layer::Residual(r) => r.norm.gain.len(),
        }
    }

    pub fn fan_out(&self) -> usize {
        match self {
            Layer::Linear(l) => l.fan_out(),
            other => other.fan_in(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::LayerNorm(n) => vec![&n.gain, &n.bias],
            Layer::Relu(_) => vec![],
            Layer::Residual(r) => vec![
                &r.norm.gain,
                &r.norm.bias,
                &r.fc1.weight,
                &r.fc1.bias,
                &r.fc2.weight,
                &r.fc2.bias,
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::LayerNorm(n) => vec![&mut n.gain, &mut n.bias],
            Layer::Relu(_) => vec![],
            Layer::Residual(r) => vec![
                &mut r.norm.gain,
                &mut r.norm.bias,
                &mut r.fc1.weight,
                &mut r.fc1.bias,
                &mut r.fc2.weight,
                &mut r.fc2.bias,
            ],
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Linear(_) => &["weight", "bias"],
            Layer::LayerNorm(_) => &["gain", "bias"],
            Layer::Relu(_) => &[],
            Layer::Residual(_) => &[
                "norm.gain",
                "norm.bias",
                "fc1.weight",
                "fc1.bias",
                "fc2.weight",
                "fc2.bias",
            ],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        if x.shape().len() != 2 || x.cols() != self.fan_in() {
            return Err(Error::Dimension {
                context: "layer input width",
                expected: self.fan_in(),
                actual: x.cols(),
            });
        }
        Ok(match self {
            Layer::Linear(l) => (l.forward(x), Cache::Linear { input: x.clone() }),
            Layer::LayerNorm(n) => {
                let (y, xhat, inv_std) = n.forward(x);
                (y, Cache::LayerNorm { xhat, inv_std })
            }
            Layer::Relu(_) => (relu(x), Cache::Relu { input: x.clone() }),
            Layer::Residual(r) => {
                let (normed, xhat, inv_std) = r.norm.forward(x);
                let hidden = r.fc1.forward(&normed);
                let activated = relu(&hidden);
                let mut y = r.fc2.forward(&activated);
                y.add_assign(x);
                (
                    y,
                    Cache::Residual {
                        xhat,
                        inv_std,
                        normed,
                        hidden,
                        activated,
                    },
                )
            }
        })
    }

    /// Returns the input gradient; parameter gradients are added to `grads`
    /// (one buffer per entry of `params()`).
    pub fn backward(&self, cache: &Cache, gy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        match (self, cache) {
            (Layer::Linear(l), Cache::Linear { input }) => {
                let (gw, gb) = grads.split_at_mut(1);
                l.backward(input, gy, &mut gw[0], &mut gb[0])
            }
            (Layer::LayerNorm(n), Cache::LayerNorm { xhat, inv_std }) => {
                let (gg, gb) = grads.split_at_mut(1);
                n.backward(xhat, inv_std, gy, &mut gg[0], &mut gb[0])
            }
            (Layer::Relu(_), Cache::Relu { input }) => relu_backward(input, gy),
            (
                Layer::Residual(r),
                Cache::Residual {
                    xhat,
                    inv_std,
                    normed,
                    hidden,
                    activated,
                },
            ) => {
                let [gng, gnb, gw1, gb1, gw2, gb2] = grads else {
                    panic!("residual block expects 6 gradient buffers");
                };
                let g_act = r.fc2.backward(activated, gy, gw2, gb2);
                let g_hidden = relu_backward(hidden, &g_act);
                let g_normed = r.fc1.backward(normed, &g_hidden, gw1, gb1);
                let mut gx = r.norm.backward(xhat, inv_std, &g_normed, gng, gnb);
                gx.add_assign(gy);
                gx
            }
            _ => panic!("cache does not belong to this layer"),
        }
    }
}

fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// A chain of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn from_specs(specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs.iter().map(Layer::from_spec).collect::<Result<Vec<_>>>()?;
        for w in layers.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::Dimension {
                    context: "sequential layer chaining",
                    expected: w[0].fan_out(),
                    actual: w[1].fan_in(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.param_names()
                    .iter()
                    .map(move |n| format!("{prefix}.{i}.{n}"))
            })
            .collect()
    }

    /// `layer_offset` shifts the layer index reported on non-finite output.
    pub fn forward(&self, x: &Tensor, layer_offset: usize) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&cur)?;
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    layer: layer_offset + i,
                });
            }
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn backward(&self, caches: &[Cache], gy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let mut end = grads.len();
        let mut g = gy.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let start = end - layer.params().len();
            g = layer.backward(cache, &g, &mut grads[start..end]);
            end = start;
        }
        g
    }
}
