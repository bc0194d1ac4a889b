use std::rc::Rc;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Csr, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{normalized_matrix, AdjacencyScheme, Graph};
use crate::nn::{glorot, Dropout};
use crate::params::{Bound, ParamId, ParamStore};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden: 128,
            layers: 2,
            dropout: 0.5,
        }
    }
}

/// `X⁽ⁱ⁾ = σ(Â X⁽ⁱ⁻¹⁾ W⁽ⁱ⁻¹⁾ + b⁽ⁱ⁻¹⁾)` with ReLU between layers and a row
/// softmax last. Biases start at zero.
#[derive(Clone, Debug)]
pub struct GcnModel {
    config: GcnConfig,
    scheme: AdjacencyScheme,
    /// Convolution operator; unlike the flow it may be singular.
    adjacency: Arc<Csr>,
    n: usize,
    widths: Vec<usize>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

pub struct GcnOutput<'t> {
    /// `n x K` class probabilities.
    pub probs: Var<'t>,
    /// Activations entering the last layer.
    pub penultimate: Var<'t>,
}

impl GcnModel {
    pub fn new(
        store: &mut ParamStore,
        config: GcnConfig,
        graph: &Graph,
        scheme: AdjacencyScheme,
        in_dim: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.layers == 0 || in_dim == 0 || classes == 0 || config.hidden == 0 {
            return Err(Error::Config(format!("invalid GCN {config:?} for {in_dim} -> {classes}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        let adjacency = Arc::new(Csr::from_dense(&normalized_matrix(graph, scheme)?));
        let mut widths = vec![in_dim];
        widths.extend(std::iter::repeat_n(config.hidden, config.layers - 1));
        widths.push(classes);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in widths.windows(2).enumerate() {
            weights.push(store.add(format!("gcn.{l}.weight"), glorot(w[0], w[1], rng), true));
            biases.push(store.add(format!("gcn.{l}.bias"), Tensor::zeros(1, w[1]), false));
        }
        Ok(GcnModel {
            config,
            scheme,
            adjacency,
            n: graph.n(),
            widths,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn scheme(&self) -> AdjacencyScheme {
        self.scheme
    }

    /// Dropout on each layer's input when `rng` is given.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<GcnOutput<'t>> {
        if x.shape() != [self.n, self.widths[0]] {
            return Err(Error::Shape(format!(
                "GCN expects {}x{} input, got {:?}",
                self.n,
                self.widths[0],
                x.shape()
            )));
        }
        let mut dropout = rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });
        let tape = x.tape();
        let mut h = x;
        let mut penultimate = x;
        let last = self.weights.len() - 1;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            penultimate = h;
            let input = match dropout.as_mut() {
                Some(d) => d.apply(h)?,
                None => h,
            };
            let pre = tape
                .spmm(&self.adjacency, input.matmul(params.get(w))?)?
                .add(params.get(b))?;
            h = if l == last { pre.row_softmax() } else { pre.relu() };
        }
        Ok(GcnOutput {
            probs: h,
            penultimate,
        })
    }
}

/// Mean of `-log max(P[i, y_i], floor)` over the labeled nodes.
pub fn gcn_loss<'t>(probs: Var<'t>, labeled: &[usize], labels: &[usize]) -> Result<Var<'t>> {
    if labeled.is_empty() {
        return Err(Error::Config("labeled set is empty".into()));
    }
    if labeled.len() != labels.len() {
        return Err(Error::Config("one label per labeled node required".into()));
    }
    let k = probs.shape()[1];
    let mut onehot = Tensor::zeros(labeled.len(), k);
    for (r, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(Error::Index(format!("class {c} out of range for {k} classes")));
        }
        onehot.set(r, c, 1.0);
    }
    let picked = probs
        .gather_rows(Rc::new(labeled.to_vec()))?
        .mul_const(Rc::new(onehot))?
        .sum_rows();
    Ok(picked.clamp(PROB_FLOOR, 1.0).log()?.mean()?.neg())
}
