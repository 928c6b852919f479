use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// Leaky ReLU with slope 0.2 on the negative side.
    LeakyRelu,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::LeakyRelu => g.leaky_relu(x, 0.2),
        }
    }

    fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    0.2 * v
                }
            }
        }
    }
}

/// Dense layer computing `x * weight + bias`; `weight` is `[in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Node handles produced by a recorded forward pass.
#[derive(Clone, Debug)]
pub struct MlpNodes {
    /// Final pre-softmax activations.
    pub output: NodeId,
    /// Input to the last layer (post-activation of the last hidden layer).
    pub penultimate: NodeId,
    /// Weight and bias leaves, in `[w0, b0, w1, b1, ...]` order.
    pub params: Vec<NodeId>,
}

/// Records a multilayer perceptron on `g` and returns its pre-softmax output.
///
/// The activation follows every layer except the last.
pub fn mlp_forward(
    g: &mut Graph,
    layers: &[Layer],
    input: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    Ok(forward_layers(g, layers, input, activation, false)?.output)
}

fn check_shapes(layers: &[Layer], input_cols: usize) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::shape("mlp_forward", "network has no layers"));
    }
    let mut width = input_cols;
    for (i, l) in layers.iter().enumerate() {
        if l.fan_in() != width {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "layer {} expects {} inputs but receives {} (weight {:?})",
                    i,
                    l.fan_in(),
                    width,
                    l.weight.shape()
                ),
            ));
        }
        if l.bias.len() != l.fan_out() {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "layer {} has {} outputs but bias of length {}",
                    i,
                    l.fan_out(),
                    l.bias.len()
                ),
            ));
        }
        width = l.fan_out();
    }
    Ok(())
}

fn forward_layers(
    g: &mut Graph,
    layers: &[Layer],
    input: NodeId,
    activation: Activation,
    trainable: bool,
) -> Result<MlpNodes> {
    check_shapes(layers, g.value(input).cols())?;
    let mut h = input;
    let mut penultimate = input;
    let mut params = Vec::with_capacity(layers.len() * 2);
    for (i, l) in layers.iter().enumerate() {
        let (w, b) = if trainable {
            (g.param(l.weight.clone()), g.param(l.bias.clone()))
        } else {
            (g.constant(l.weight.clone()), g.constant(l.bias.clone()))
        };
        params.push(w);
        params.push(b);
        let z = g.matmul(h, w)?;
        let z = g.add_bias(z, b)?;
        if i + 1 < layers.len() {
            h = activation.apply(g, z);
            penultimate = h;
        } else {
            h = z;
        }
    }
    Ok(MlpNodes {
        output: h,
        penultimate,
        params,
    })
}

/// Fully connected network with a shared hidden activation and linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Mlp {
    /// Random initialization: He-scaled normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::randn(vec![w[0], w[1]], (2.0 / w[0] as f64).sqrt(), rng),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    /// Records the forward pass. With `trainable`, weights become gradient leaves.
    pub fn forward(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<MlpNodes> {
        forward_layers(g, &self.layers, x, self.activation, trainable)
    }

    fn run(&self, x: &Tensor, stop_before_last: bool) -> Result<Tensor> {
        check_shapes(&self.layers, x.cols())?;
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            if stop_before_last && i + 1 == n {
                break;
            }
            let mut z = h.matmul(&l.weight)?;
            let c = z.cols();
            for row in z.data_mut().chunks_mut(c) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                }
            }
            if i + 1 < n {
                for v in z.data_mut() {
                    *v = self.activation.eval(*v);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Output logits for a batch of row inputs, without recording a graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false)
    }

    /// Activations feeding the last layer.
    pub fn penultimate(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, true)
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.layers.len() * 2 {
            return Err(Error::shape(
                "set_params",
                format!("{} tensors for {} layers", params.len(), self.layers.len()),
            ));
        }
        let mut it = params.into_iter();
        for l in &mut self.layers {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(Error::shape(
                    "set_params",
                    format!("{:?}/{:?} into {:?}/{:?}", w.shape(), b.shape(), l.weight.shape(), l.bias.shape()),
                ));
            }
            l.weight = w;
            l.bias = b;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}
