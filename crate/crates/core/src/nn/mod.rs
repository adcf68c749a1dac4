//! Dense layers, multi-head attention pooling, a GRU encoder and embedding
//! tables with hand-written backward passes, plus a gradient checker and an
//! optimizer. Everything is `f64`.
//!
//! Every primitive follows the same pattern: `forward` returns the output
//! and a cache, `backward` consumes the cache and an upstream gradient,
//! accumulates parameter gradients in place and returns the input gradient.

mod archive;
mod attention;
mod dense;
mod embedding;
mod gradcheck;
mod gru;
mod optim;

pub use archive::{NamedTensor, TensorArchive, ARCHIVE_FORMAT_VERSION};
pub use attention::{AttentionBlock, AttentionCache};
pub use dense::{Activation, DenseCache, DenseLayer, DenseStack};
pub use embedding::EmbeddingTable;
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{GruCache, GruCell};
pub use optim::{Optimizer, OptimizerKind};

use rand::Rng;

use crate::error::{Error, Result};

/// A named parameter with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if value.len() != len {
            return Err(Error::Shape(format!(
                "tensor with shape {shape:?} needs {len} values, got {}",
                value.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            value,
        })
    }

    /// Glorot-uniform matrix, `shape = [fan_out, fan_in]`.
    pub fn glorot<R: Rng + ?Sized>(name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(name, &[rows, cols], limit, rng)
    }

    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.value {
            *v = rng.random_range(-limit..=limit);
        }
        t
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameter tensors in a fixed visiting order.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            out.push(NamedTensor {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.value.clone(),
            })
        });
        out
    }

    /// Overwrites parameter values by name. Every parameter must be present
    /// with a matching shape.
    fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match tensors.iter().find(|t| t.name == p.name()) {
                Some(t) if t.shape == p.shape() => p.value.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(Error::Shape(format!(
                        "tensor `{}` has shape {:?}, expected {:?}",
                        t.name,
                        t.shape,
                        p.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{}`", p.name()))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

impl Parameterized for ParamTensor {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(self)
    }
}

/// `out = W x` for row-major `W` of shape `[rows, cols]`.
#[inline]
pub(crate) fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `dx += W^T dy`.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

/// `grad += dy x^T`.
#[inline]
pub(crate) fn outer_acc(grad: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&g, row) in dy.iter().zip(grad.chunks_exact_mut(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}
