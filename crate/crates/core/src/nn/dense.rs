use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, matvec, matvec_t_acc, outer_acc, ParamTensor, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// A multi-layer perceptron: rectifier on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl DenseStack {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(name: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {dims:?} for `{name}`")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                weight: ParamTensor::glorot(format!("{name}.{i}.weight"), w[1], w[0], rng),
                bias: ParamTensor::zeros(format!("{name}.{i}.bias"), &[w[1]]),
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("dense stack"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for l in &layers {
            check_len("dense bias", l.bias.len(), l.output_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        check_len("dense input", x.len(), self.input_dim())?;
        let mut cache = DenseCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.value.clone();
            let mut wx = vec![0.0; layer.output_dim()];
            matvec(&layer.weight.value, layer.input_dim(), &h, &mut wx);
            z.iter_mut().zip(&wx).for_each(|(a, b)| *a += b);
            let out = z.iter().map(|&v| layer.activation.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients and returns `d loss / d x`.
    pub fn backward(&mut self, cache: &DenseCache, dy: &[f64]) -> Vec<f64> {
        let mut grad = dy.to_vec();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            for (g, &p) in grad.iter_mut().zip(&cache.pre[i]) {
                *g *= layer.activation.derivative(p);
            }
            outer_acc(&mut layer.weight.grad, &grad, &cache.inputs[i]);
            layer.bias.grad.iter_mut().zip(&grad).for_each(|(b, g)| *b += g);
            let mut dx = vec![0.0; layer.input_dim()];
            matvec_t_acc(&layer.weight.value, layer.input_dim(), &grad, &mut dx);
            grad = dx;
        }
        grad
    }
}

impl Parameterized for DenseStack {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        for l in &self.layers {
            f(&l.weight);
            f(&l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        for l in &mut self.layers {
            f(&mut l.weight);
            f(&mut l.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> DenseLayer {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        DenseLayer {
            weight: ParamTensor::from_values("w", &[n, n], w).unwrap(),
            bias: ParamTensor::zeros("b", &[n]),
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_passes_input_through() {
        let stack = DenseStack::from_layers(vec![identity_layer(3)]).unwrap();
        let x = [0.5, -2.0, 3.25];
        assert_eq!(stack.predict(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_input_zero_preactivation() {
        let mut rng = rand::rng();
        let stack = DenseStack::new("m", &[4, 3], &mut rng).unwrap();
        let (y, cache) = stack.forward(&[0.0; 4]).unwrap();
        assert!(cache.pre[0].iter().all(|&v| v == 0.0));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut rng = rand::rng();
        let stack = DenseStack::new("m", &[4, 3, 2], &mut rng).unwrap();
        assert!(matches!(stack.predict(&[1.0; 3]), Err(Error::Shape(_))));
        let a = identity_layer(3);
        let b = identity_layer(2);
        assert!(DenseStack::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn hidden_layers_use_relu() {
        let mut rng = rand::rng();
        let stack = DenseStack::new("m", &[4, 8, 8, 2], &mut rng).unwrap();
        let acts: Vec<_> = stack.layers().iter().map(|l| l.activation).collect();
        assert_eq!(
            acts,
            vec![Activation::Relu, Activation::Relu, Activation::Identity]
        );
        assert_eq!(stack.num_params(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }
}
