use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One affine layer: `y = x·weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `in × out`
    pub weight: Array2<T>,
    /// `1 × out`
    pub bias: Array2<T>,
}

/// Fully connected network with ReLU between layers and a linear output.
///
/// With a shortcut at layer `k`, the network input is concatenated to the
/// activations entering layer `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub shortcut: Option<usize>,
}

/// Parameter nodes of one bound [`Mlp`].
pub type BoundMlp = Vec<(Var, Var)>;

impl<T: Real> Mlp<T> {
    /// Zero-initialized network. `hidden` lists the widths of the hidden
    /// layers, so there are `hidden.len() + 1` affine layers.
    pub fn zeros(input: usize, hidden: &[usize], output: usize, shortcut: Option<usize>) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let fan_in = dims[i] + if shortcut == Some(i) { input } else { 0 };
            layers.push(Dense {
                weight: Array2::zeros((fan_in, dims[i + 1])),
                bias: Array2::zeros((1, dims[i + 1])),
            });
        }
        let mlp = Mlp { layers, shortcut };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if let Some(k) = self.shortcut {
            if k == 0 || k >= self.layers.len() {
                return Err(Error::Config(format!(
                    "shortcut layer {k} outside 1..{}",
                    self.layers.len()
                )));
            }
        }
        let input = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.nrows() != 1 || l.bias.ncols() != l.weight.ncols() {
                return Err(Error::Config(format!("layer {i}: bias shape {:?}", l.bias.shape())));
            }
            if i > 0 {
                let expect = self.layers[i - 1].weight.ncols() + if self.shortcut == Some(i) { input } else { 0 };
                if l.weight.nrows() != expect {
                    return Err(Error::Config(format!(
                        "layer {i} expects {} inputs, previous layer gives {expect}",
                        l.weight.nrows()
                    )));
                }
            }
            if l.weight.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Uniform weights in `±√(6/fan_in)`, zero biases.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            let bound = (6.0 / l.weight.nrows().max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            l.weight.mapv_inplace(|_| T::lit(dist.sample(rng)));
            l.bias.fill(T::zero());
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Array2<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Array2<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Copy every layer onto `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundMlp {
        self.layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect()
    }

    /// Record a forward pass of `x` through the bound layers.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundMlp, x: Var) -> Result<Var> {
        let mut h = x;
        let last = bound.len() - 1;
        for (i, &(w, b)) in bound.iter().enumerate() {
            if self.shortcut == Some(i) {
                h = tape.concat(&[h, x])?;
            }
            h = tape.linear(h, w, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
