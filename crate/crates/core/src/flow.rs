//! Affine coupling flows interleaved with graph convolutions.
//!
//! A model with `T` flows maps `X⁽⁰⁾ = X` through `X⁽ʲ⁾ = F_j(Â_j X⁽ʲ⁻¹⁾)`, where
//! each `F_j` applies a [`FlowStack`] row-wise. The log-determinant of the
//! whole map splits into a graph part `D Σ_j log|det Â_j|` and a per-node
//! part from the couplings.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjparam::{
    perflow_logdet, AttentionAdjParam, ConcreteSpec, EdgeNoise, EmbeddingSpec, LearnedAdjParam,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyScheme, Graph, NormalizedAdjacency};
use crate::linalg::Lu;
use crate::nn::{Activation, Dropout, Mlp};
use crate::params::{Bound, ParamId, ParamStore};

/// Largest `nD` accepted by [`jacobian_bruteforce`].
pub const MAX_BRUTEFORCE_DIM: usize = 64;
pub const JACOBIAN_STEP: f64 = 1e-6;

/// RealNVP coupling: one half of the columns passes through and conditions an
/// elementwise affine map of the other half.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    dim: usize,
    /// Odd layers pass the trailing half through.
    odd: bool,
    s_net: Mlp,
    t_net: Mlp,
    /// Multiplies `tanh(s_net(·))`; starts at 0.
    scale: ParamId,
}

impl CouplingLayer {
    /// `hidden` lists the hidden widths of the s- and t-networks.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        odd: bool,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Shape(format!("coupling needs D >= 2, got {dim}")));
        }
        let d = dim / 2;
        let mut widths = vec![d];
        widths.extend_from_slice(hidden);
        widths.push(dim - d);
        let s_net = Mlp::new(store, &format!("{name}.s"), &widths, Activation::Tanh, false, rng)?;
        let t_net = Mlp::new(store, &format!("{name}.t"), &widths, Activation::Tanh, true, rng)?;
        let scale = store.add(format!("{name}.scale"), Tensor::scalar(0.0), false);
        Ok(CouplingLayer {
            dim,
            odd,
            s_net,
            t_net,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_odd(&self) -> bool {
        self.odd
    }

    pub fn s_net(&self) -> &Mlp {
        &self.s_net
    }

    pub fn t_net(&self) -> &Mlp {
        &self.t_net
    }

    pub fn scale_id(&self) -> ParamId {
        self.scale
    }

    /// (passthrough columns, transformed columns)
    pub fn split(&self) -> (Range<usize>, Range<usize>) {
        let d = self.dim / 2;
        if self.odd {
            (self.dim - d..self.dim, 0..self.dim - d)
        } else {
            (0..d, d..self.dim)
        }
    }

    fn check(&self, x: Var<'_>) -> Result<()> {
        if x.shape()[1] != self.dim {
            return Err(Error::Shape(format!(
                "coupling of width {} applied to {:?}",
                self.dim,
                x.shape()
            )));
        }
        Ok(())
    }

    fn conditioner<'t>(
        &self,
        params: &Bound<'t>,
        xa: Var<'t>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let s = self
            .s_net
            .forward(params, xa, dropout.as_deref_mut())?
            .tanh()
            .mul(params.get(self.scale))?;
        let t = self.t_net.forward(params, xa, dropout)?;
        Ok((s, t))
    }

    fn assemble<'t>(&self, pass: Var<'t>, trans: Var<'t>) -> Result<Var<'t>> {
        let tape = pass.tape();
        if self.odd {
            tape.concat_cols(&[trans, pass])
        } else {
            tape.concat_cols(&[pass, trans])
        }
    }

    /// Returns `y` and the `n x 1` column of per-row log-determinants.
    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.forward_with(params, x, None)
    }

    /// Dropout acts on s/t-net hidden units; the log-determinant stays exact
    /// for the sampled mask.
    pub fn forward_with<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        self.check(x)?;
        let (pa, tr) = self.split();
        let xa = x.slice_cols(pa.start, pa.end)?;
        let xb = x.slice_cols(tr.start, tr.end)?;
        let (s, t) = self.conditioner(params, xa, dropout)?;
        let yb = xb.mul(s.exp())?.add(t)?;
        Ok((self.assemble(xa, yb)?, s.sum_rows()))
    }

    pub fn inverse<'t>(&self, params: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        self.check(y)?;
        let (pa, tr) = self.split();
        let ya = y.slice_cols(pa.start, pa.end)?;
        let yb = y.slice_cols(tr.start, tr.end)?;
        let (s, t) = self.conditioner(params, ya, None)?;
        let xb = yb.sub(t)?.mul(s.neg().exp())?;
        self.assemble(ya, xb)
    }
}

/// One constituent flow: couplings with alternating parity.
#[derive(Clone, Debug)]
pub struct FlowStack {
    layers: Vec<CouplingLayer>,
}

impl FlowStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        couplings: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let layers = (0..couplings)
            .map(|l| CouplingLayer::new(store, &format!("{name}.c{l}"), dim, l % 2 == 1, hidden, rng))
            .collect::<Result<_>>()?;
        Ok(FlowStack { layers })
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.forward_with(params, x, None)
    }

    pub fn forward_with<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = x;
        let mut logdet = x.tape().constant(Tensor::zeros(x.shape()[0], 1));
        for layer in &self.layers {
            let (y, ld) = layer.forward_with(params, h, dropout.as_deref_mut())?;
            h = y;
            logdet = logdet.add(ld)?;
        }
        Ok((h, logdet))
    }

    pub fn inverse<'t>(&self, params: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let mut h = y;
        for layer in self.layers.iter().rev() {
            h = layer.inverse(params, h)?;
        }
        Ok(h)
    }
}

/// How each flow's adjacency is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdjacencySpec {
    /// One normalized matrix shared by all flows; `damping` applies only when
    /// the undamped matrix is singular.
    Fixed { scheme: AdjacencyScheme, damping: f64 },
    Attention { embedding: EmbeddingSpec },
    Learned {
        embedding: EmbeddingSpec,
        concrete: ConcreteSpec,
    },
}

impl AdjacencySpec {
    pub fn label(&self) -> &'static str {
        match self {
            AdjacencySpec::Fixed { .. } => "fixed",
            AdjacencySpec::Attention { .. } => "attention",
            AdjacencySpec::Learned { .. } => "learned",
        }
    }
}

/// Architecture of a [`GcFlowModel`]; together with the graph and the
/// parameter values it determines the model exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    /// Number of constituent flows `T`.
    pub flows: usize,
    /// Coupling layers per flow.
    pub couplings: usize,
    /// Hidden width of the s- and t-networks.
    pub hidden: usize,
    /// Dense layers in each s- and t-network.
    pub mlp_layers: usize,
    pub adjacency: AdjacencySpec,
}

impl FlowSpec {
    fn hidden_widths(&self) -> Result<Vec<usize>> {
        if self.mlp_layers == 0 || self.hidden == 0 {
            return Err(Error::Config("coupling networks need at least one layer".into()));
        }
        Ok(vec![self.hidden; self.mlp_layers - 1])
    }
}

#[derive(Clone, Debug)]
pub enum AdjacencySource {
    Fixed(NormalizedAdjacency),
    Attention(Vec<AttentionAdjParam>),
    Learned(Vec<LearnedAdjParam>),
}

/// Forward pass on a tape.
pub struct FlowOutput<'t> {
    pub z: Var<'t>,
    /// `n x 1`: summed coupling log-determinants of each node.
    pub node_logdet: Var<'t>,
    /// `D Σ_j log|det Â_j|` when the adjacency depends on parameters.
    pub graph_logdet: Option<Var<'t>>,
    /// `T D log|det Â|` for a fixed adjacency, otherwise 0.
    pub graph_logdet_const: f64,
}

impl FlowOutput<'_> {
    pub fn graph_logdet_total(&self) -> Result<f64> {
        let var = match self.graph_logdet {
            Some(v) => v.item()?,
            None => 0.0,
        };
        Ok(var + self.graph_logdet_const)
    }
}

/// Forward pass values.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowValues {
    pub z: Tensor,
    pub node_logdet: Vec<f64>,
    pub graph_logdet: f64,
}

impl FlowValues {
    /// `log|det ∂Z/∂X|` of the whole map.
    pub fn total_logdet(&self) -> f64 {
        self.graph_logdet + self.node_logdet.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct GcFlowModel {
    spec: FlowSpec,
    n: usize,
    flows: Vec<FlowStack>,
    adjacency: AdjacencySource,
}

impl GcFlowModel {
    /// Registers all parameters in `store`. An `External` fixed scheme must go
    /// through [`GcFlowModel::with_fixed_adjacency`].
    pub fn new(store: &mut ParamStore, spec: FlowSpec, graph: &Graph, rng: &mut ChaCha8Rng) -> Result<Self> {
        let adjacency = match &spec.adjacency {
            AdjacencySpec::Fixed { scheme, damping } => AdjacencySource::Fixed(
                NormalizedAdjacency::from_scheme_damped_if_singular(graph, *scheme, *damping)?,
            ),
            AdjacencySpec::Attention { embedding } => AdjacencySource::Attention(
                (0..spec.flows)
                    .map(|j| {
                        AttentionAdjParam::new(store, &format!("adj{j}"), graph, spec.dim, embedding.clone(), rng)
                    })
                    .collect::<Result<_>>()?,
            ),
            AdjacencySpec::Learned { embedding, concrete } => AdjacencySource::Learned(
                (0..spec.flows)
                    .map(|j| {
                        LearnedAdjParam::new(
                            store,
                            &format!("adj{j}"),
                            graph,
                            spec.dim,
                            embedding.clone(),
                            concrete.clone(),
                            rng,
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Self::assemble(store, spec, graph.n(), adjacency, rng)
    }

    pub fn with_fixed_adjacency(
        store: &mut ParamStore,
        mut spec: FlowSpec,
        adjacency: NormalizedAdjacency,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.adjacency = AdjacencySpec::Fixed {
            scheme: adjacency.scheme(),
            damping: adjacency.damping().unwrap_or(0.0),
        };
        let n = adjacency.n();
        Self::assemble(store, spec, n, AdjacencySource::Fixed(adjacency), rng)
    }

    fn assemble(
        store: &mut ParamStore,
        spec: FlowSpec,
        n: usize,
        adjacency: AdjacencySource,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if spec.dim < 2 && spec.flows > 0 && spec.couplings > 0 {
            return Err(Error::Shape(format!("coupling needs D >= 2, got {}", spec.dim)));
        }
        let hidden = spec.hidden_widths()?;
        let flows = (0..spec.flows)
            .map(|j| FlowStack::new(store, &format!("flow{j}"), spec.dim, spec.couplings, &hidden, rng))
            .collect::<Result<_>>()?;
        Ok(GcFlowModel {
            spec,
            n,
            flows,
            adjacency,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn flows(&self) -> &[FlowStack] {
        &self.flows
    }

    pub fn adjacency(&self) -> &AdjacencySource {
        &self.adjacency
    }

    /// `Â = I`: the model is a plain row-wise flow.
    pub fn is_flowgmm(&self) -> bool {
        matches!(&self.adjacency, AdjacencySource::Fixed(a) if a.is_identity())
    }

    /// Fresh training noise for hard-concrete adjacencies, one set per flow.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> Option<Vec<EdgeNoise>> {
        match &self.adjacency {
            AdjacencySource::Learned(ps) => Some(ps.iter().map(|p| p.sample_noise(rng)).collect()),
            _ => None,
        }
    }

    fn check_input(&self, x: Var<'_>) -> Result<()> {
        if x.shape() != [self.n, self.spec.dim] {
            return Err(Error::Shape(format!(
                "model expects {}x{} input, got {:?}",
                self.n,
                self.spec.dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// `Â_j X` for flow `j`, with `log|det Â_j|` when it is differentiable.
    fn convolve<'t>(
        &self,
        params: &Bound<'t>,
        j: usize,
        x: Var<'t>,
        noise: Option<&[EdgeNoise]>,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        match &self.adjacency {
            AdjacencySource::Fixed(a) if a.is_identity() => Ok((x, None)),
            AdjacencySource::Fixed(a) => Ok((x.tape().spmm(a.sparse(), x)?, None)),
            AdjacencySource::Attention(ps) => {
                let a = ps[j].adjacency(params, x)?;
                Ok((a.matmul(x)?, Some(perflow_logdet(a)?)))
            }
            AdjacencySource::Learned(ps) => {
                let eval = EdgeNoise::Mean;
                let n = match noise {
                    Some(ns) => ns.get(j).ok_or_else(|| {
                        Error::Config(format!("edge noise for {} flows, need {}", ns.len(), ps.len()))
                    })?,
                    None => &eval,
                };
                let a = ps[j].adjacency(params, x, n)?;
                Ok((a.matmul(x)?, Some(perflow_logdet(a)?)))
            }
        }
    }

    /// `noise` selects hard-concrete samples; `None` uses the deterministic
    /// evaluation gates.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        noise: Option<&[EdgeNoise]>,
    ) -> Result<FlowOutput<'t>> {
        self.forward_with(params, x, noise, None)
    }

    /// [`Self::forward`] with optional s/t-net dropout.
    pub fn forward_with<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        noise: Option<&[EdgeNoise]>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<FlowOutput<'t>> {
        self.check_input(x)?;
        let tape = x.tape();
        let mut h = x;
        let mut node_logdet = tape.constant(Tensor::zeros(self.n, 1));
        let mut graph_logdet: Option<Var<'t>> = None;
        for (j, flow) in self.flows.iter().enumerate() {
            let (conv, ld) = self.convolve(params, j, h, noise)?;
            if let Some(ld) = ld {
                graph_logdet = Some(match graph_logdet {
                    Some(acc) => acc.add(ld)?,
                    None => ld,
                });
            }
            let (y, flow_ld) = flow.forward_with(params, conv, dropout.as_deref_mut())?;
            h = y;
            node_logdet = node_logdet.add(flow_ld)?;
        }
        let d = self.spec.dim as f64;
        let graph_logdet_const = match &self.adjacency {
            AdjacencySource::Fixed(a) => self.flows.len() as f64 * d * a.log_abs_det(),
            _ => 0.0,
        };
        Ok(FlowOutput {
            z: h,
            node_logdet,
            graph_logdet: graph_logdet.map(|g| g.scale(d)),
            graph_logdet_const,
        })
    }

    /// Tensor-level forward pass at the evaluation gates.
    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<FlowValues> {
        let tape = Tape::new();
        let params = store.bind_frozen(&tape);
        let out = self.forward(&params, tape.constant(x.clone()), None)?;
        Ok(FlowValues {
            z: out.z.value().as_ref().clone(),
            node_logdet: out.node_logdet.value().data().to_vec(),
            graph_logdet: out.graph_logdet_total()?,
        })
    }

    /// Inverts couplings and solves `Â X' = X''` flow by flow in reverse.
    /// Only defined for a fixed adjacency.
    pub fn inverse_values(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let adj = match &self.adjacency {
            AdjacencySource::Fixed(a) => a,
            _ => {
                return Err(Error::Config(
                    "inversion requires a fixed adjacency".into(),
                ))
            }
        };
        if z.shape() != [self.n, self.spec.dim] {
            return Err(Error::Shape(format!(
                "model expects {}x{} input, got {:?}",
                self.n,
                self.spec.dim,
                z.shape()
            )));
        }
        let lu = if adj.is_identity() || self.flows.is_empty() {
            None
        } else {
            Some(Lu::factor(adj.matrix())?)
        };
        let tape = Tape::new();
        let params = store.bind_frozen(&tape);
        let mut h = z.clone();
        for flow in self.flows.iter().rev() {
            let x_tilde = flow.inverse(&params, tape.constant(h))?.value().as_ref().clone();
            h = match &lu {
                Some(lu) => lu.solve(&x_tilde)?,
                None => x_tilde,
            };
        }
        Ok(h)
    }
}

/// Free-function form of [`GcFlowModel::forward_values`].
pub fn gcflow_forward(model: &GcFlowModel, store: &ParamStore, x: &Tensor) -> Result<FlowValues> {
    model.forward_values(store, x)
}

/// Free-function form of [`GcFlowModel::inverse_values`].
pub fn gcflow_inverse(model: &GcFlowModel, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
    model.inverse_values(store, z)
}

/// Central-difference Jacobian of `map` at `x`, flattening row-major.
pub fn jacobian_matrix<F>(map: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let m = x.len();
    if m > MAX_BRUTEFORCE_DIM {
        return Err(Error::Scale(format!(
            "brute-force Jacobian limited to {MAX_BRUTEFORCE_DIM} coordinates, got {m}"
        )));
    }
    let mut jac = Tensor::zeros(m, m);
    let mut probe = x.clone();
    for c in 0..m {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + h;
        let plus = map(&probe)?;
        probe.data_mut()[c] = orig - h;
        let minus = map(&probe)?;
        probe.data_mut()[c] = orig;
        if plus.len() != m || minus.len() != m {
            return Err(Error::Shape(format!(
                "map must preserve size {m}, produced {}",
                plus.len()
            )));
        }
        for r in 0..m {
            jac.set(r, c, (plus.data()[r] - minus.data()[r]) / (2.0 * h));
        }
    }
    Ok(jac)
}

/// `log|det J|` of `map` at `x` from a finite-difference Jacobian.
pub fn jacobian_bruteforce<F>(map: F, x: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let jac = jacobian_matrix(map, x, JACOBIAN_STEP)?;
    Ok(Lu::factor(&jac)?.log_abs_det())
}
