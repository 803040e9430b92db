//! Minimal trainable network engine.
//!
//! The layer vocabulary is fixed (conv / relu / maxpool / flatten / fc) and
//! differentiated by hand. Both detector families in this crate are "a few
//! convs, each followed by relu and 2x2 maxpool, then a small fc head that
//! regresses coordinates", so nothing more general is needed.

mod gradcheck;
pub mod io;
mod layers;

pub use gradcheck::grad_check;
pub use io::{load_weights, save_weights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// One layer of the fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    Fc { out_features: usize },
}

/// Full network description: input geometry, ordered layers, regressed
/// output count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Extent {
    pub fn numel(&self) -> usize {
        match *self {
            Extent::Map { c, h, w } => c * h * w,
            Extent::Flat(n) => n,
        }
    }
}

fn conv_extent(e: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = e + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl NetworkSpec {
    /// Propagates shapes through every layer. Returns the value extents at
    /// each layer boundary (`extents[0]` is the input, `extents[i + 1]` the
    /// output of layer `i`). Fails on the first layer whose geometry is
    /// inconsistent.
    pub fn extents(&self) -> Result<Vec<Extent>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Spec(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        let mut extents = Vec::with_capacity(self.layers.len() + 1);
        extents.push(Extent::Map { c, h, w });
        for (index, layer) in self.layers.iter().enumerate() {
            let cur = *extents.last().unwrap();
            let next = match (layer, cur) {
                (&LayerSpec::Conv { out_channels, kernel, stride, padding }, Extent::Map { h, w, .. }) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(shape_err(index, "conv parameters must be >= 1"));
                    }
                    let oh = conv_extent(h, kernel, stride, padding);
                    let ow = conv_extent(w, kernel, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Extent::Map { c: out_channels, h: oh, w: ow },
                        _ => return Err(shape_err(index, &format!("conv kernel {kernel} exceeds padded input {h}x{w}"))),
                    }
                }
                (&LayerSpec::MaxPool { window, stride }, Extent::Map { c, h, w }) => {
                    if window == 0 || stride == 0 {
                        return Err(shape_err(index, "maxpool parameters must be >= 1"));
                    }
                    if window > h || window > w {
                        return Err(shape_err(index, &format!("maxpool window {window} exceeds input {h}x{w}")));
                    }
                    Extent::Map { c, h: (h - window) / stride + 1, w: (w - window) / stride + 1 }
                }
                (&LayerSpec::Relu, e) => e,
                (&LayerSpec::Flatten, Extent::Map { c, h, w }) => Extent::Flat(c * h * w),
                (&LayerSpec::Fc { out_features }, Extent::Flat(_)) => {
                    if out_features == 0 {
                        return Err(shape_err(index, "fc out_features must be >= 1"));
                    }
                    Extent::Flat(out_features)
                }
                (&LayerSpec::Fc { .. }, Extent::Map { .. }) => {
                    return Err(shape_err(index, "fc requires a flattened input; insert a flatten layer"));
                }
                (&LayerSpec::Conv { .. }, Extent::Flat(_)) | (&LayerSpec::MaxPool { .. }, Extent::Flat(_)) => {
                    return Err(shape_err(index, "spatial layer after flatten"));
                }
                (&LayerSpec::Flatten, Extent::Flat(_)) => {
                    return Err(shape_err(index, "duplicate flatten"));
                }
            };
            extents.push(next);
        }
        match extents.last() {
            Some(&Extent::Flat(n)) if n == self.output_dim => {}
            other => {
                return Err(Error::Spec(format!(
                    "network must end in a fc layer with out_features == output_dim ({}), got {other:?}",
                    self.output_dim
                )))
            }
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Fc { .. })) {
            return Err(Error::Spec("final layer must be fc".into()));
        }
        Ok(extents)
    }

    /// Shapes of the parameter tensors, in serialization order: for each
    /// parameterized layer, its weight tensor then its bias tensor.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let extents = self.extents()?;
        let mut shapes = Vec::new();
        for (index, layer) in self.layers.iter().enumerate() {
            match (layer, extents[index]) {
                (&LayerSpec::Conv { out_channels, kernel, .. }, Extent::Map { c, .. }) => {
                    shapes.push(vec![out_channels, c, kernel, kernel]);
                    shapes.push(vec![out_channels]);
                }
                (&LayerSpec::Fc { out_features }, Extent::Flat(n)) => {
                    shapes.push(vec![out_features, n]);
                    shapes.push(vec![out_features]);
                }
                _ => {}
            }
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }
}

fn shape_err(layer: usize, message: &str) -> Error {
    Error::Shape { layer, message: message.to_string() }
}

/// All parameter tensors of a network, ordered to match
/// [`NetworkSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> NetworkWeights<T> {
    pub fn zeros_like(spec: &NetworkSpec) -> Result<Self> {
        Ok(Self { tensors: spec.param_shapes()?.into_iter().map(Tensor::zeros).collect() })
    }

    pub fn matches(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != self.tensors.len() {
            return Err(Error::Spec(format!(
                "weight bundle has {} tensors, spec requires {}",
                self.tensors.len(),
                shapes.len()
            )));
        }
        for (i, (t, s)) in self.tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Spec(format!(
                    "parameter tensor {i} has shape {:?}, spec requires {:?}",
                    t.shape(),
                    s
                )));
            }
        }
        Ok(())
    }

    pub fn map_to<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights { tensors: self.tensors.iter().map(Tensor::map_to).collect() }
    }
}

/// Optimizer and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return Err(Error::Config(format!("weight_init_scale must be positive, got {}", self.weight_init_scale)));
        }
        Ok(())
    }
}

/// Uniform init in `[-a, a]` with `a = scale / sqrt(fan_in)`; biases zero.
/// Deterministic from the seed.
pub fn init_weights<T: Real>(spec: &NetworkSpec, seed: u64, scale: f64) -> Result<NetworkWeights<T>> {
    let extents = spec.extents()?;
    let mut rng = Rng::substream(seed, "init");
    let mut tensors = Vec::new();
    for (index, layer) in spec.layers.iter().enumerate() {
        let fan_in = match (layer, extents[index]) {
            (&LayerSpec::Conv { kernel, .. }, Extent::Map { c, .. }) => Some(c * kernel * kernel),
            (&LayerSpec::Fc { .. }, Extent::Flat(n)) => Some(n),
            _ => None,
        };
        if let Some(fan_in) = fan_in {
            let shapes = match (layer, extents[index]) {
                (&LayerSpec::Conv { out_channels, kernel, .. }, Extent::Map { c, .. }) => {
                    (vec![out_channels, c, kernel, kernel], vec![out_channels])
                }
                (&LayerSpec::Fc { out_features }, Extent::Flat(n)) => (vec![out_features, n], vec![out_features]),
                _ => unreachable!(),
            };
            let a = scale / (fan_in as f64).sqrt();
            let n: usize = shapes.0.iter().product();
            let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.uniform_in(-a, a))).collect();
            tensors.push(Tensor::new(shapes.0, data)?);
            tensors.push(Tensor::zeros(shapes.1));
        }
    }
    Ok(NetworkWeights { tensors })
}

/// Batched forward pass: `batch` is `(N, C, H, W)`, the result `(N, output_dim)`.
pub fn forward<T: Real>(spec: &NetworkSpec, weights: &NetworkWeights<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let extents = spec.extents()?;
    weights.matches(spec)?;
    layers::check_batch(spec, batch)?;
    layers::run_forward(spec, &extents, weights, batch)
}

/// Mean over the batch of the squared Euclidean distance between prediction
/// and target vectors, plus the gradient for every parameter tensor.
pub fn loss_and_grad<T: Real>(
    spec: &NetworkSpec,
    weights: &NetworkWeights<T>,
    batch: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(f64, NetworkWeights<T>)> {
    let extents = spec.extents()?;
    weights.matches(spec)?;
    layers::check_batch(spec, batch)?;
    let n = batch.shape()[0];
    if targets.shape() != [n, spec.output_dim] {
        return Err(Error::Spec(format!(
            "targets shape {:?} does not match (batch {n}, output_dim {})",
            targets.shape(),
            spec.output_dim
        )));
    }
    let (loss, grads) = layers::run_backward(spec, &extents, weights, batch, targets)?;
    Ok((loss, grads))
}

/// Batched loss only (used by the finite-difference oracle).
pub fn loss<T: Real>(
    spec: &NetworkSpec,
    weights: &NetworkWeights<T>,
    batch: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<f64> {
    let pred = forward(spec, weights, batch)?;
    Ok(layers::mse_loss(&pred, targets))
}

/// One SGD-with-momentum step: `v <- momentum * v - lr * g; w <- w + v`.
pub fn sgd_step<T: Real>(
    weights: &mut NetworkWeights<T>,
    grads: &NetworkWeights<T>,
    velocity: &mut NetworkWeights<T>,
    config: &TrainConfig,
) {
    assert_eq!(weights.tensors.len(), grads.tensors.len(), "grads do not match weights");
    assert_eq!(weights.tensors.len(), velocity.tensors.len(), "velocity does not match weights");
    let lr = T::from_f64(config.learning_rate);
    let momentum = T::from_f64(config.momentum);
    for ((w, g), v) in weights.tensors.iter_mut().zip(&grads.tensors).zip(velocity.tensors.iter_mut()) {
        assert_eq!(w.shape(), g.shape(), "gradient shape mismatch");
        assert_eq!(w.shape(), v.shape(), "velocity shape mismatch");
        for ((wv, &gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut().iter_mut()) {
            *vv = momentum * *vv - lr * gv;
            *wv += *vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_shape: (2, 6, 6),
            layers: vec![
                LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Fc { out_features: 4 },
            ],
            output_dim: 4,
        }
    }

    #[test]
    fn shape_algebra_follows_conv_formula() {
        // output extent = floor((E + 2p - k) / s) + 1
        let spec = NetworkSpec {
            input_shape: (1, 11, 13),
            layers: vec![
                LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 2, padding: 1 },
                LayerSpec::Flatten,
                LayerSpec::Fc { out_features: 2 },
            ],
            output_dim: 2,
        };
        let extents = spec.extents().unwrap();
        assert_eq!(extents[1], Extent::Map { c: 2, h: (11 + 2 - 3) / 2 + 1, w: (13 + 2 - 3) / 2 + 1 });
    }

    #[test]
    fn invalid_specs_name_the_offending_layer() {
        let spec = NetworkSpec {
            input_shape: (1, 4, 4),
            layers: vec![
                LayerSpec::MaxPool { window: 8, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Fc { out_features: 1 },
            ],
            output_dim: 1,
        };
        match spec.extents() {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected shape error, got {other:?}"),
        }

        let spec = NetworkSpec {
            input_shape: (1, 4, 4),
            layers: vec![LayerSpec::Fc { out_features: 1 }],
            output_dim: 1,
        };
        match spec.extents() {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn output_dim_must_match_head() {
        let mut spec = tiny_spec();
        spec.output_dim = 5;
        assert!(spec.extents().is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = tiny_spec();
        let a: NetworkWeights = init_weights(&spec, 9, 1.0).unwrap();
        let b: NetworkWeights = init_weights(&spec, 9, 1.0).unwrap();
        assert_eq!(a, b);
        let c: NetworkWeights = init_weights(&spec, 10, 1.0).unwrap();
        assert_ne!(a, c);
        // conv fan_in = 2 * 3 * 3 = 18
        let bound = 1.0 / 18f64.sqrt() + 1e-9;
        assert!(a.tensors[0].data().iter().all(|v| (v.abs() as f64) <= bound));
        // biases zero
        assert!(a.tensors[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_plain_step_and_fixed_point() {
        // momentum 0, lr 0.1, w = 1, g = 2 -> w' = 0.8
        let spec = NetworkSpec {
            input_shape: (1, 1, 1),
            layers: vec![LayerSpec::Flatten, LayerSpec::Fc { out_features: 1 }],
            output_dim: 1,
        };
        let mut w: NetworkWeights = NetworkWeights::zeros_like(&spec).unwrap();
        w.tensors[0].data_mut()[0] = 1.0;
        let mut g = NetworkWeights::zeros_like(&spec).unwrap();
        g.tensors[0].data_mut()[0] = 2.0;
        let mut v = NetworkWeights::zeros_like(&spec).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            weight_init_scale: 1.0,
        };
        sgd_step(&mut w, &g, &mut v, &cfg);
        assert!((w.tensors[0].data()[0] - 0.8).abs() < 1e-7);

        // zero gradient, zero velocity -> weights unchanged
        let snapshot = w.clone();
        let zero = NetworkWeights::zeros_like(&spec).unwrap();
        let mut v0 = NetworkWeights::zeros_like(&spec).unwrap();
        sgd_step(&mut w, &zero, &mut v0, &cfg);
        assert_eq!(w, snapshot);
    }

    #[test]
    fn sgd_momentum_unrolls_as_expected() {
        // momentum 0.9, two identical grads: second step size = lr * g * 1.9
        let spec = NetworkSpec {
            input_shape: (1, 1, 1),
            layers: vec![LayerSpec::Flatten, LayerSpec::Fc { out_features: 1 }],
            output_dim: 1,
        };
        let mut w: NetworkWeights = NetworkWeights::zeros_like(&spec).unwrap();
        let mut g = NetworkWeights::zeros_like(&spec).unwrap();
        g.tensors[0].data_mut()[0] = 1.0;
        let mut v = NetworkWeights::zeros_like(&spec).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            weight_init_scale: 1.0,
        };
        sgd_step(&mut w, &g, &mut v, &cfg);
        let after_first = w.tensors[0].data()[0];
        sgd_step(&mut w, &g, &mut v, &cfg);
        let second_step = w.tensors[0].data()[0] - after_first;
        assert!((second_step as f64 + 0.1 * 1.9).abs() < 1e-6, "step {second_step}");
    }
}
