//! Dense layers and multilayer perceptrons built on the tape.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Training-time dropout: zeroes entries with probability `rate` and scales
/// survivors by `1 / (1 - rate)`.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply<'t>(&mut self, x: Var<'t>) -> Result<Var<'t>> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let [r, c] = x.shape();
        let keep = 1.0 - self.rate;
        let mask = Tensor::from_fn(r, c, |_, _| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        x.mul_const(Rc::new(mask))
    }
}

/// Glorot-uniform `fan_in x fan_out` matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

/// Fully connected network `x -> act(x W₁ + b₁) -> ... -> x W_L + b_L`.
/// The last layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
    activation: Activation,
}

impl Mlp {
    /// Glorot weights and zero biases; `zero_last` zeroes the final weight matrix.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let weight = if zero_last && l == last {
                    Tensor::zeros(w[0], w[1])
                } else {
                    glorot(w[0], w[1], rng)
                };
                let wid = store.add(format!("{name}.{l}.weight"), weight, true);
                let bid = store.add(format!("{name}.{l}.bias"), Tensor::zeros(1, w[1]), false);
                (wid, bid)
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            layers,
            activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// Dropout, when given, is applied to hidden activations only.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'t>> {
        if x.shape()[1] != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {}",
                self.in_dim(),
                x.shape()[1]
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(params.get(w))?.add(params.get(b))?;
            if l + 1 < self.layers.len() {
                h = self.activation.apply(h);
                if let Some(d) = dropout.as_deref_mut() {
                    h = d.apply(h)?;
                }
            }
        }
        Ok(h)
    }
}
