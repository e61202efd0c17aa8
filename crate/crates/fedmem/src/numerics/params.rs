//! Named parameter containers for fully connected networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Element-wise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at pre-activation `x`. The rectifier uses the
    /// right-hand derivative at the kink.
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Activation::Relu),
            0 => Ok(Activation::Identity),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("unknown activation code {other}"),
            }),
        }
    }
}

/// One fully connected layer: `act(x W^T + b)`.
///
/// `weight` has shape `[out, in]`, `bias` has shape `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub activation: Activation,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// An ordered list of layers forming a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension {
                    context: format!("layer {} feeding {}", pair[0].name, pair[1].name),
                    expected: pair[1].in_dim(),
                    actual: pair[0].out_dim(),
                });
            }
        }
        Ok(ParamSet { layers })
    }

    /// Xavier-uniform initialisation: weights drawn from
    /// `U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))`, biases zero.
    ///
    /// `dims` lists `input, hidden..., output` widths; `activations` has one
    /// entry per layer.
    pub fn init_xavier(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::config(format!(
                "network needs {} activations for {} dims",
                dims.len().saturating_sub(1),
                dims.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &act) in activations.iter().enumerate() {
            let (n_in, n_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let data: Vec<f64> = (0..n_in * n_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                name: format!("fc{i}"),
                activation: act,
                weight: Tensor::new(vec![n_out, n_in], data)?,
                bias: Tensor::zeros(vec![n_out]),
            });
        }
        ParamSet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// True when `other` has the same layer names, activations and tensor
    /// shapes, so element-wise arithmetic between the two is meaningful.
    pub fn layout_equal(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.name == b.name
                    && a.activation == b.activation
                    && a.weight.shape() == b.weight.shape()
                    && a.bias.shape() == b.bias.shape()
            })
    }

    fn require_layout(&self, other: &ParamSet, context: &str) -> Result<()> {
        if self.layout_equal(other) {
            Ok(())
        } else {
            Err(Error::Dimension {
                context: context.into(),
                expected: self.num_params(),
                actual: other.num_params(),
            })
        }
    }

    /// Element-wise `a*self + b*other`.
    pub fn affine(&self, a: f64, other: &ParamSet, b: f64) -> Result<ParamSet> {
        self.require_layout(other, "parameter affine combination")?;
        let mut out = self.clone();
        for (dst, src) in out.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weight.data_mut().iter_mut().zip(src.weight.data()) {
                *d = a * *d + b * *s;
            }
            for (d, s) in dst.bias.data_mut().iter_mut().zip(src.bias.data()) {
                *d = a * *d + b * *s;
            }
        }
        Ok(out)
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.require_layout(other, "parameter accumulation")?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weight.data_mut().iter_mut().zip(src.weight.data()) {
                *d += scale * *s;
            }
            for (d, s) in dst.bias.data_mut().iter_mut().zip(src.bias.data()) {
                *d += scale * *s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in layer.weight.data_mut() {
                *v *= factor;
            }
            for v in layer.bias.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Zero-filled copy with the same layout; used as a gradient accumulator.
    pub fn zeros_like(&self) -> ParamSet {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                activation: l.activation,
                weight: Tensor::zeros(l.weight.shape().to_vec()),
                bias: Tensor::zeros(l.bias.shape().to_vec()),
            })
            .collect();
        ParamSet { layers }
    }

    /// Squared Euclidean distance between two parameter sets.
    pub fn sq_distance(&self, other: &ParamSet) -> Result<f64> {
        self.require_layout(other, "parameter distance")?;
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                acc += (x - y) * (x - y);
            }
            for (x, y) in a.bias.data().iter().zip(b.bias.data()) {
                acc += (x - y) * (x - y);
            }
        }
        Ok(acc)
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for layer in &self.layers {
            layer.weight.check_finite(context)?;
            layer.bias.check_finite(context)?;
        }
        Ok(())
    }

    /// Visit every parameter as a flat sequence (weights then bias, per
    /// layer, in layer order).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            for v in layer.weight.data_mut() {
                f(v);
            }
            for v in layer.bias.data_mut() {
                f(v);
            }
        }
    }

    /// Flatten all parameters into one vector (layer order, weights first).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    /// Overwrite all parameters from a flat vector produced by `flatten`.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "parameter unflatten".into(),
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter();
        self.for_each_param_mut(|v| *v = *it.next().expect("length checked"));
        Ok(())
    }
}
