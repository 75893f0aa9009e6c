use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar weights.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor's values by those of `other`, matched by name.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in self.names.iter().zip(&mut self.tensors) {
            let src = other
                .index_of(name)
                .map(|i| other.tensor(i))
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name}: stored {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Fully connected layer `x·W (+ b)` with `W: in × out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// He-uniform fan-in initialization in `±√(6/in)`; bias starts at zero.
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound) as f32 as f64)
            .collect();
        let weight = params.add(format!("{name}.weight"), Tensor::matrix(in_dim, out_dim, w).expect("sized"));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(vec![1, out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(params, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with SiLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply SiLU after the last layer too.
    pub activate_last: bool,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths. Every layer has a
    /// bias unless `hidden_bias` is false, in which case only the last does.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        hidden_bias: bool,
        last_bias: bool,
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let bias = if i + 1 == n { last_bias } else { hidden_bias };
                Linear::new(params, &format!("{name}.{i}"), widths[i], widths[i + 1], bias, rng)
            })
            .collect();
        Mlp { layers, activate_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, params, x)?;
            if i + 1 < n || self.activate_last {
                x = g.silu(x);
            }
        }
        Ok(x)
    }
}
