//! Input-dependent adjacency matrices for individual flows.
//!
//! Two parameterizations are provided, both restricted to the given edge set
//! (they reweight or drop edges but never add them):
//!
//! * [`AttentionAdjParam`]: attention scores on each edge, softmax-normalized
//!   over every node's neighborhood.
//! * [`LearnedAdjParam`]: hard-concrete edge gates in `[0, 1]`, stochastic
//!   during training and deterministic (`ε = 0.5`) at evaluation.
//!
//! A diagonal damping term is always added so the determinant stays finite.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Activation, Mlp};
use crate::params::{Bound, ParamStore};

pub const DEFAULT_DAMPING: f64 = 1e-3;
pub const LRELU_SLOPE: f64 = 0.2;

/// Shape of the embedding networks shared by both variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    /// Output dimension of each embedding network.
    pub embed_dim: usize,
    pub hidden: usize,
    /// Number of dense layers in each embedding network.
    pub layers: usize,
    /// Treat `(i, i)` as an edge for every node.
    pub self_loops: bool,
    pub damping: f64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            embed_dim: 8,
            hidden: 32,
            layers: 2,
            self_loops: true,
            damping: DEFAULT_DAMPING,
        }
    }
}

impl EmbeddingSpec {
    fn widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        w.push(self.embed_dim);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("invalid embedding network {self:?}")));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config("adjacency damping must be positive".into()));
        }
        Ok(())
    }
}

/// Edge list in the layout the tape ops consume.
#[derive(Clone, Debug)]
struct EdgeIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl EdgeIndex {
    fn new(graph: &Graph, self_loops: bool) -> Result<Self> {
        let pairs = graph.directed_pairs(self_loops);
        if pairs.is_empty() {
            return Err(Error::Config("parameterized adjacency needs a non-empty edge set".into()));
        }
        Ok(EdgeIndex { n: graph.n(), pairs })
    }

    fn sources(&self) -> Rc<Vec<usize>> {
        Rc::new(self.pairs.iter().map(|p| p.0).collect())
    }

    fn targets(&self) -> Rc<Vec<usize>> {
        Rc::new(self.pairs.iter().map(|p| p.1).collect())
    }

    fn positions(&self) -> Rc<Vec<(usize, usize)>> {
        Rc::new(self.pairs.clone())
    }

    fn damp<'t>(&self, a: Var<'t>, damping: f64) -> Result<Var<'t>> {
        let eye = a.tape().constant(Tensor::identity(self.n).map(|v| v * damping));
        a.add(eye)
    }
}

/// Attention-reweighted adjacency.
#[derive(Clone, Debug)]
pub struct AttentionAdjParam {
    spec: EmbeddingSpec,
    edges: EdgeIndex,
    e1: Mlp,
    e2: Mlp,
    scorer: Mlp,
}

impl AttentionAdjParam {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        graph: &Graph,
        dim: usize,
        spec: EmbeddingSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let edges = EdgeIndex::new(graph, spec.self_loops)?;
        let widths = spec.widths(dim);
        let e1 = Mlp::new(store, &format!("{name}.e1"), &widths, Activation::Tanh, false, rng)?;
        let e2 = Mlp::new(store, &format!("{name}.e2"), &widths, Activation::Tanh, false, rng)?;
        let scorer = Mlp::new(
            store,
            &format!("{name}.score"),
            &[2 * spec.embed_dim, spec.hidden, 1],
            Activation::Tanh,
            false,
            rng,
        )?;
        Ok(AttentionAdjParam {
            spec,
            edges,
            e1,
            e2,
            scorer,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn e1(&self) -> &Mlp {
        &self.e1
    }

    /// Row-stochastic edge weights before damping.
    pub fn weights<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.e1.forward(params, x, None)?.relu();
        let g = self.e2.forward(params, x, None)?.relu();
        let hi = h.gather_rows(self.edges.sources())?;
        let gk = g.gather_rows(self.edges.targets())?;
        let pair = x.tape().concat_cols(&[hi, gk])?;
        let scores = self.scorer.forward(params, pair, None)?.leaky_relu(LRELU_SLOPE);
        let weights = scores.segment_softmax(self.edges.sources())?;
        weights.scatter_dense(self.edges.positions(), self.edges.n)
    }

    /// Damped adjacency used by the flow.
    pub fn adjacency<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.weights(params, x)?;
        self.edges.damp(w, self.spec.damping)
    }
}

/// Hard-concrete stretch-and-clamp constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteSpec {
    pub tau: f64,
    pub gamma: f64,
    pub xi: f64,
}

impl Default for ConcreteSpec {
    fn default() -> Self {
        ConcreteSpec {
            tau: 0.66,
            gamma: -0.1,
            xi: 1.1,
        }
    }
}

impl ConcreteSpec {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.gamma < 0.0 && self.xi > 1.0) {
            return Err(Error::Config(format!(
                "hard-concrete needs tau > 0, gamma < 0, xi > 1; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Stretched value `ê (ξ - γ) + γ` before clamping.
    pub fn stretch(&self, e_hat: f64) -> f64 {
        e_hat * (self.xi - self.gamma) + self.gamma
    }
}

/// Noise for the concrete relaxation: the deterministic mean (`ε = 0.5`) or
/// one uniform draw per directed edge.
#[derive(Clone, Debug, PartialEq)]
pub enum EdgeNoise {
    Mean,
    Uniform(Tensor),
}

impl EdgeNoise {
    /// Logistic noise `log ε - log(1 - ε)`, or `None` for the mean.
    fn logistic(&self, m: usize) -> Result<Option<Tensor>> {
        match self {
            EdgeNoise::Mean => Ok(None),
            EdgeNoise::Uniform(eps) => {
                if eps.shape() != [m, 1] {
                    return Err(Error::Shape(format!(
                        "edge noise {:?} for {m} edges",
                        eps.shape()
                    )));
                }
                Ok(Some(eps.map(|e| e.ln() - (1.0 - e).ln())))
            }
        }
    }
}

/// Learned edge gates via the hard-concrete relaxation.
#[derive(Clone, Debug)]
pub struct LearnedAdjParam {
    spec: EmbeddingSpec,
    concrete: ConcreteSpec,
    edges: EdgeIndex,
    e1: Mlp,
    e2: Mlp,
}

impl LearnedAdjParam {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        graph: &Graph,
        dim: usize,
        spec: EmbeddingSpec,
        concrete: ConcreteSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        concrete.validate()?;
        let edges = EdgeIndex::new(graph, spec.self_loops)?;
        let widths = spec.widths(dim);
        let e1 = Mlp::new(store, &format!("{name}.e1"), &widths, Activation::Tanh, false, rng)?;
        let e2 = Mlp::new(store, &format!("{name}.e2"), &widths, Activation::Tanh, false, rng)?;
        Ok(LearnedAdjParam {
            spec,
            concrete,
            edges,
            e1,
            e2,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn concrete(&self) -> &ConcreteSpec {
        &self.concrete
    }

    pub fn num_edges(&self) -> usize {
        self.edges.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.edges.pairs
    }

    /// Uniform `(0, 1)` draws, one per directed edge.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> EdgeNoise {
        let m = self.num_edges();
        EdgeNoise::Uniform(Tensor::from_fn(m, 1, |_, _| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        }))
    }

    /// Edge logits `ω_ik = tanh(1ᵀ(a_ik - b_ik))`, an `m x 1` column.
    pub fn omega<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let t1 = self.e1.forward(params, x, None)?.tanh();
        let t2 = self.e2.forward(params, x, None)?.tanh();
        let (src, dst) = (self.edges.sources(), self.edges.targets());
        let a = t1.gather_rows(Rc::clone(&src))?.mul(t2.gather_rows(Rc::clone(&dst))?)?;
        let b = t2.gather_rows(src)?.mul(t1.gather_rows(dst)?)?;
        Ok(a.sub(b)?.sum_rows().tanh())
    }

    /// Clamped edge gates before damping, zero off the edge set.
    pub fn gates<'t>(&self, params: &Bound<'t>, x: Var<'t>, noise: &EdgeNoise) -> Result<Var<'t>> {
        let omega = self.omega(params, x)?;
        let logits = match noise.logistic(self.num_edges())? {
            Some(l) => omega.add(x.tape().constant(l))?,
            None => omega,
        };
        let e_hat = logits.scale(1.0 / self.concrete.tau).sigmoid();
        let stretched = e_hat
            .scale(self.concrete.xi - self.concrete.gamma)
            .shift(self.concrete.gamma);
        stretched
            .clamp(0.0, 1.0)
            .scatter_dense(self.edges.positions(), self.edges.n)
    }

    pub fn adjacency<'t>(&self, params: &Bound<'t>, x: Var<'t>, noise: &EdgeNoise) -> Result<Var<'t>> {
        let a = self.gates(params, x, noise)?;
        self.edges.damp(a, self.spec.damping)
    }
}

/// Differentiable `log|det Â|`; the gradient with respect to `Â` is `Â⁻ᵀ`.
pub fn perflow_logdet<'t>(adjacency: Var<'t>) -> Result<Var<'t>> {
    adjacency.log_abs_det()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use rand::SeedableRng;

    fn five_node_graph() -> Graph {
        Graph::new(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap()
    }

    fn features(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = five_node_graph();
        let mut store = ParamStore::new();
        let att = AttentionAdjParam::new(&mut store, "att", &g, 3, EmbeddingSpec::default(), &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let w = att.weights(&p, tape.constant(features(5, 3, 1))).unwrap().value();
        for i in 0..5 {
            let s: f64 = w.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in 0..5 {
                let is_edge = i == j || g.edges().contains(&(i.min(j), i.max(j)));
                if !is_edge {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
        let damped = att.adjacency(&p, tape.constant(features(5, 3, 1))).unwrap().value();
        assert!((damped.get(2, 2) - w.get(2, 2) - DEFAULT_DAMPING).abs() < 1e-15);
    }

    #[test]
    fn single_neighbor_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let spec = EmbeddingSpec {
            self_loops: false,
            ..EmbeddingSpec::default()
        };
        let mut store = ParamStore::new();
        let att = AttentionAdjParam::new(&mut store, "att", &g, 2, spec, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(features(3, 2, 5));
        let w = att.weights(&p, x).unwrap().value();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        // isolated node 2: empty row, rescued by damping
        assert_eq!(w.row(2), &[0.0, 0.0, 0.0]);
        let a = att.adjacency(&p, x).unwrap();
        assert!(a.log_abs_det().unwrap().item().unwrap().is_finite());
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = five_node_graph();
        let mut store = ParamStore::new();
        let att = AttentionAdjParam::new(&mut store, "att", &g, 2, EmbeddingSpec::default(), &mut rng).unwrap();
        for e in store.entries_mut() {
            if e.name.starts_with("att.score") {
                e.value = Tensor::zeros(e.value.rows(), e.value.cols());
            }
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let w = att.weights(&p, tape.constant(features(5, 2, 2))).unwrap().value();
        let deg = g.degrees();
        for i in 0..5 {
            for j in 0..5 {
                if w.get(i, j) != 0.0 {
                    assert!((w.get(i, j) - 1.0 / (deg[i] as f64 + 1.0)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn attention_logdet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = five_node_graph();
        let mut store = ParamStore::new();
        let att = AttentionAdjParam::new(&mut store, "att", &g, 3, EmbeddingSpec::default(), &mut rng).unwrap();
        let x = features(5, 3, 9);
        let e1_ids: Vec<usize> = store
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with("att.e1"))
            .map(|(i, _)| i)
            .collect();
        let point: Vec<Tensor> = e1_ids.iter().map(|&i| store.entries()[i].value.clone()).collect();
        let err = grad_check(
            |tape, vars| {
                let mut s = store.clone();
                for (k, &i) in e1_ids.iter().enumerate() {
                    s.entries_mut()[i].value = vars[k].value().as_ref().clone();
                }
                let mut bound_vars: Vec<Var> = s.entries().iter().map(|e| tape.constant(e.value.clone())).collect();
                for (k, &i) in e1_ids.iter().enumerate() {
                    bound_vars[i] = vars[k];
                }
                let p = crate::params::Bound::from_vars(bound_vars);
                perflow_logdet(att.adjacency(&p, tape.constant(x.clone()))?)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn hard_concrete_arithmetic() {
        let spec = ConcreteSpec::default();
        let e = spec.stretch(0.05);
        assert!((e - (-0.04)).abs() < 1e-15);
        assert_eq!(e.clamp(0.0, 1.0), 0.0);
        // saturation: tiny temperature with a strongly positive logit
        let tau = 1e-3;
        let e_hat = crate::autodiff::sigmoid(5.0 / tau);
        assert_eq!(e_hat, 1.0);
        assert_eq!(spec.stretch(e_hat).clamp(0.0, 1.0), 1.0);
        assert_eq!(
            ConcreteSpec { tau: 0.0, ..spec.clone() }.validate().unwrap_err().code(),
            "E_CONFIG"
        );
    }

    #[test]
    fn omega_is_antisymmetric_and_gates_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = five_node_graph();
        let mut store = ParamStore::new();
        let l = LearnedAdjParam::new(
            &mut store,
            "l",
            &g,
            3,
            EmbeddingSpec::default(),
            ConcreteSpec::default(),
            &mut rng,
        )
        .unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(features(5, 3, 8));
        let omega = l.omega(&p, x).unwrap().value();
        let pairs = l.pairs();
        for (e, &(i, k)) in pairs.iter().enumerate() {
            let rev = pairs.iter().position(|&q| q == (k, i)).unwrap();
            assert_eq!(omega.data()[e], -omega.data()[rev]);
        }
        let noise = l.sample_noise(&mut rng);
        let a = l.gates(&p, x, &noise).unwrap().value();
        for i in 0..5 {
            for j in 0..5 {
                let v = a.get(i, j);
                assert!((0.0..=1.0).contains(&v));
                if !pairs.contains(&(i, j)) {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(l.sample_noise(&mut r1), l.sample_noise(&mut r2));
    }

    fn logdet_and_grad(a: Tensor) -> (f64, Tensor) {
        let tape = Tape::new();
        let v = tape.var(a);
        let ld = perflow_logdet(v).unwrap();
        ld.backward().unwrap();
        (ld.item().unwrap(), v.grad())
    }

    #[test]
    fn perflow_logdet_closed_forms() {
        let (ld, g) = logdet_and_grad(Tensor::identity(3));
        assert_eq!(ld, 0.0);
        assert_eq!(g, Tensor::identity(3));
        let (ld, g) = logdet_and_grad(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap());
        assert!((ld - 6f64.ln()).abs() < 1e-15);
        assert!((g.get(0, 0) - 0.5).abs() < 1e-15 && (g.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn perflow_logdet_gradient_random() {
        let a = features(4, 4, 12).zip_map(&Tensor::identity(4), |x, i| x + 2.0 * i).unwrap();
        let err = grad_check(|_, v| perflow_logdet(v[0]), &[a], 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
