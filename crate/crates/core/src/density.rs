//! Gaussian-mixture base density and the semi-supervised objective.
//!
//! Component `k` is `N(m_k 𝟙, σ_k² I)` with scalar mean `m_k` and
//! `σ_k = exp(logstd_k)`. Node log-densities add the flow's per-node
//! log-determinant and an equal `1/n` share of the graph log-determinant.

use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{FlowOutput, FlowValues};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: usize,
    /// Learn mixture weights through softmax logits; otherwise uniform.
    pub learn_weights: bool,
    /// Initial mean scalars are spread evenly over `[mean_lo, mean_hi]`.
    pub mean_lo: f64,
    pub mean_hi: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            components: 2,
            learn_weights: false,
            mean_lo: 0.5,
            mean_hi: 10.0,
        }
    }
}

impl MixtureSpec {
    pub fn initial_means(&self) -> Vec<f64> {
        let k = self.components;
        if k == 1 {
            return vec![self.mean_lo];
        }
        let step = (self.mean_hi - self.mean_lo) / (k - 1) as f64;
        (0..k).map(|c| self.mean_lo + c as f64 * step).collect()
    }
}

/// Mixture parameters as plain numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureValues {
    pub dim: usize,
    pub log_weights: Vec<f64>,
    pub means: Vec<f64>,
    pub logstd: Vec<f64>,
}

impl MixtureValues {
    pub fn components(&self) -> usize {
        self.means.len()
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.components() {
            return Err(Error::Index(format!(
                "component {k} out of range for {} components",
                self.components()
            )));
        }
        Ok(())
    }
}

/// `log N(z; m_k 𝟙, σ_k² I)`.
pub fn component_logpdf(head: &MixtureValues, z: &[f64], k: usize) -> Result<f64> {
    head.check_class(k)?;
    let d = z.len() as f64;
    let (m, ls) = (head.means[k], head.logstd[k]);
    let dist: f64 = z.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(-0.5 * dist * (-2.0 * ls).exp() - 0.5 * d * (2.0 * PI).ln() - d * ls)
}

/// `log Σ_k φ_k N(z; μ_k, Σ_k)`.
pub fn mixture_logpdf(head: &MixtureValues, z: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..head.components())
        .map(|k| head.log_weights[k] + component_logpdf(head, z, k).expect("k in range"))
        .collect();
    logsumexp(&terms)
}

/// Trainable mixture head.
#[derive(Clone, Debug)]
pub struct MixtureHead {
    spec: MixtureSpec,
    dim: usize,
    means: ParamId,
    logstd: ParamId,
    logits: Option<ParamId>,
}

impl MixtureHead {
    pub fn new(store: &mut ParamStore, spec: MixtureSpec, dim: usize) -> Result<Self> {
        let k = spec.components;
        if k == 0 || dim == 0 {
            return Err(Error::Config("mixture needs at least one component and dimension".into()));
        }
        let means = store.add("head.means", Tensor::row_vector(spec.initial_means()), false);
        let logstd = store.add("head.logstd", Tensor::zeros(1, k), false);
        let logits = spec
            .learn_weights
            .then(|| store.add("head.logits", Tensor::zeros(1, k), false));
        Ok(MixtureHead {
            spec,
            dim,
            means,
            logstd,
            logits,
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn components(&self) -> usize {
        self.spec.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn means_id(&self) -> ParamId {
        self.means
    }

    pub fn logstd_id(&self) -> ParamId {
        self.logstd
    }

    pub fn values(&self, store: &ParamStore) -> MixtureValues {
        let log_weights = match self.logits {
            Some(id) => {
                let l = store.get(id).data();
                let lse = logsumexp(l);
                l.iter().map(|v| v - lse).collect()
            }
            None => vec![-(self.components() as f64).ln(); self.components()],
        };
        MixtureValues {
            dim: self.dim,
            log_weights,
            means: store.get(self.means).data().to_vec(),
            logstd: store.get(self.logstd).data().to_vec(),
        }
    }

    /// Sets `m_k` to the mean coordinate of labeled rows of class `k` in `z`.
    /// Classes without labeled rows keep their value. Returns the new means.
    pub fn init_means_from_labels(
        &self,
        store: &mut ParamStore,
        z: &Tensor,
        labeled: &[usize],
        labels: &[usize],
    ) -> Result<Vec<f64>> {
        let k = self.components();
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&i, &c) in labeled.iter().zip(labels) {
            if c >= k || i >= z.rows() {
                return Err(Error::Index(format!("labeled node {i} with class {c}")));
            }
            sum[c] += z.row(i).iter().sum::<f64>();
            count[c] += z.cols();
        }
        let means = store.get_mut(self.means);
        for c in 0..k {
            if count[c] > 0 {
                means.data_mut()[c] = sum[c] / count[c] as f64;
            }
        }
        Ok(means.data().to_vec())
    }

    /// `n x K` matrix of `log φ_k + log N(z_i; μ_k, Σ_k)`.
    pub fn weighted_logpdfs<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let [_, d] = z.shape();
        if d != self.dim {
            return Err(Error::Shape(format!("head of dimension {} given {d} columns", self.dim)));
        }
        let tape = z.tape();
        let means = params.get(self.means);
        let logstd = params.get(self.logstd);
        let dists = (0..self.components())
            .map(|k| Ok(z.sub(means.slice_cols(k, k + 1)?)?.square().sum_rows()))
            .collect::<Result<Vec<_>>>()?;
        let dist = tape.concat_cols(&dists)?;
        let inv_var = logstd.scale(-2.0).exp();
        let d = d as f64;
        let logpdf = dist
            .mul(inv_var)?
            .scale(-0.5)
            .sub(logstd.scale(d))?
            .shift(-0.5 * d * (2.0 * PI).ln());
        match self.logits {
            Some(id) => {
                let l = params.get(id);
                logpdf.add(l.sub(l.logsumexp_rows())?)
            }
            None => Ok(logpdf.shift(-(self.components() as f64).ln())),
        }
    }
}

/// Node index sets and balance for the semi-supervised objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub labeled: Vec<usize>,
    /// Class of each entry of `labeled`.
    pub labels: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl LossConfig {
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if self.labeled.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        if self.labels.len() != self.labeled.len() {
            return Err(Error::Config("one label per labeled node required".into()));
        }
        let mut seen = vec![false; n];
        for &i in self.labeled.iter().chain(&self.unlabeled) {
            if i >= n {
                return Err(Error::Index(format!("node {i} out of range for {n} nodes")));
            }
            if seen[i] {
                return Err(Error::Config(format!("node {i} listed twice")));
            }
            seen[i] = true;
        }
        if let Some(&c) = self.labels.iter().find(|&&c| c >= k) {
            return Err(Error::Index(format!("class {c} out of range for {k} components")));
        }
        Ok(())
    }
}

/// Negative objective split into its differentiable part and the constant
/// contributed by a fixed adjacency.
pub struct LossTerms<'t> {
    pub loss: Var<'t>,
    pub constant: f64,
}

impl LossTerms<'_> {
    pub fn total(&self) -> Result<f64> {
        Ok(self.loss.item()? + self.constant)
    }
}

/// Per-node `graph share + flow log-determinant`, without the fixed-adjacency
/// constant.
fn node_offsets<'t>(flow: &FlowOutput<'t>) -> Result<Var<'t>> {
    let n = flow.node_logdet.shape()[0] as f64;
    match flow.graph_logdet {
        Some(g) => flow.node_logdet.add(g.scale(1.0 / n)),
        None => Ok(flow.node_logdet),
    }
}

/// `-[(1-λ)/|L| Σ_L log p(x_i, y_i) + λ/|U| Σ_U log p(x_i)]`.
pub fn semi_supervised_loss<'t>(
    head: &MixtureHead,
    params: &Bound<'t>,
    flow: &FlowOutput<'t>,
    cfg: &LossConfig,
) -> Result<LossTerms<'t>> {
    let n = flow.z.shape()[0];
    let k = head.components();
    cfg.validate(n, k)?;
    let weighted = head.weighted_logpdfs(params, flow.z)?;
    let offsets = node_offsets(flow)?;
    let share = flow.graph_logdet_const / n as f64;

    let labeled = Rc::new(cfg.labeled.clone());
    let mut onehot = Tensor::zeros(cfg.labeled.len(), k);
    for (r, &c) in cfg.labels.iter().enumerate() {
        onehot.set(r, c, 1.0);
    }
    let joint = weighted
        .gather_rows(Rc::clone(&labeled))?
        .mul_const(Rc::new(onehot))?
        .sum()
        .add(offsets.gather_rows(labeled)?.sum())?;
    let wl = (1.0 - cfg.lambda) / cfg.labeled.len() as f64;
    let mut objective = joint.scale(wl);
    let mut constant = wl * cfg.labeled.len() as f64 * share;

    if !cfg.unlabeled.is_empty() && cfg.lambda > 0.0 {
        let unlabeled = Rc::new(cfg.unlabeled.clone());
        let marginal = weighted
            .gather_rows(Rc::clone(&unlabeled))?
            .logsumexp_rows()
            .sum()
            .add(offsets.gather_rows(unlabeled)?.sum())?;
        let wu = cfg.lambda / cfg.unlabeled.len() as f64;
        objective = objective.add(marginal.scale(wu))?;
        constant += wu * cfg.unlabeled.len() as f64 * share;
    }
    Ok(LossTerms {
        loss: objective.neg(),
        constant: -constant,
    })
}

/// All node log-densities of an evaluated model.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDensities {
    /// `n x K`: `log p(x_i, y_i = k)`.
    pub joint: Tensor,
    /// `log p(x_i)`.
    pub marginal: Vec<f64>,
    /// `n x K` posteriors `p(y_i = k | x_i)`.
    pub posterior: Tensor,
}

impl NodeDensities {
    pub fn evaluate(head: &MixtureValues, flow: &FlowValues) -> Result<Self> {
        let [n, d] = flow.z.shape();
        if d != head.dim {
            return Err(Error::Shape(format!("head of dimension {} given {d} columns", head.dim)));
        }
        let k = head.components();
        let share = flow.graph_logdet / n as f64;
        let mut joint = Tensor::zeros(n, k);
        let mut posterior = Tensor::zeros(n, k);
        let mut marginal = Vec::with_capacity(n);
        for i in 0..n {
            let z = flow.z.row(i);
            let weighted: Vec<f64> = (0..k)
                .map(|c| Ok(head.log_weights[c] + component_logpdf(head, z, c)?))
                .collect::<Result<_>>()?;
            let lse = logsumexp(&weighted);
            let offset = share + flow.node_logdet[i];
            for c in 0..k {
                joint.set(i, c, weighted[c] + offset);
                posterior.set(i, c, (weighted[c] - lse).exp());
            }
            marginal.push(lse + offset);
        }
        Ok(NodeDensities {
            joint,
            marginal,
            posterior,
        })
    }

    pub fn log_marginal(&self, i: usize) -> Result<f64> {
        self.marginal
            .get(i)
            .copied()
            .ok_or_else(|| Error::Index(format!("node {i} out of range")))
    }

    pub fn log_joint_labeled(&self, i: usize, k: usize) -> Result<f64> {
        if i >= self.joint.rows() || k >= self.joint.cols() {
            return Err(Error::Index(format!("(node {i}, class {k}) out of range")));
        }
        Ok(self.joint.get(i, k))
    }

    pub fn posterior(&self, i: usize) -> Result<&[f64]> {
        if i >= self.posterior.rows() {
            return Err(Error::Index(format!("node {i} out of range")));
        }
        Ok(self.posterior.row(i))
    }

    /// `argmax_k p(y_i = k | x_i)` for every node.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.posterior.rows())
            .map(|i| argmax(self.posterior.row(i)))
            .collect()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use crate::flow::{jacobian_bruteforce, AdjacencySpec, FlowSpec, GcFlowModel};
    use crate::graph::{AdjacencyScheme, Graph};
    use crate::linalg::Lu;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head_values(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> MixtureValues {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lse = logsumexp(&raw);
        MixtureValues {
            dim,
            log_weights: raw.iter().map(|v| v - lse).collect(),
            means: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
            logstd: (0..k).map(|_| rng.random_range(-0.5..0.5)).collect(),
        }
    }

    /// Dense-covariance Gaussian log-density via explicit inverse and LU determinant.
    fn dense_gaussian_logpdf(z: &[f64], mu: &[f64], cov: &Tensor) -> f64 {
        let lu = Lu::factor(cov).unwrap();
        let inv = lu.inverse();
        let d = z.len();
        let mut quad = 0.0;
        for a in 0..d {
            for b in 0..d {
                quad += (z[a] - mu[a]) * inv.get(a, b) * (z[b] - mu[b]);
            }
        }
        -0.5 * quad - 0.5 * lu.log_abs_det() - 0.5 * d as f64 * (2.0 * PI).ln()
    }

    fn model_and_head(
        n: usize,
        dim: usize,
        flows: usize,
        adjacency: AdjacencySpec,
        k: usize,
        seed: u64,
    ) -> (ParamStore, GcFlowModel, MixtureHead, Graph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // path plus one chord; a triangle would make the row normalization singular
        let chord = (n > 3).then_some((0, 2));
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).chain(chord).collect();
        let g = Graph::new(n, edges).unwrap();
        let mut store = ParamStore::new();
        let spec = FlowSpec {
            dim,
            flows,
            couplings: 2,
            hidden: 6,
            mlp_layers: 2,
            adjacency,
        };
        let model = GcFlowModel::new(&mut store, spec, &g, &mut rng).unwrap();
        let head = MixtureHead::new(
            &mut store,
            MixtureSpec {
                components: k,
                learn_weights: true,
                ..MixtureSpec::default()
            },
            dim,
        )
        .unwrap();
        for e in store.entries_mut() {
            let (r, c) = (e.value.rows(), e.value.cols());
            e.value = Tensor::from_fn(r, c, |_, _| rng.random_range(-0.7..0.7));
        }
        (store, model, head, g)
    }

    fn fixed_row() -> AdjacencySpec {
        AdjacencySpec::Fixed {
            scheme: AdjacencyScheme::RowNormalized,
            damping: 1e-3,
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let h = MixtureValues {
            dim: 2,
            log_weights: vec![0.0],
            means: vec![0.0],
            logstd: vec![0.0],
        };
        let v = component_logpdf(&h, &[0.0, 0.0], 0).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v - (-1.8379)).abs() < 1e-4);
        assert_eq!(mixture_logpdf(&h, &[0.3, 0.1]), component_logpdf(&h, &[0.3, 0.1], 0).unwrap());
        assert_eq!(component_logpdf(&h, &[0.0, 0.0], 1).unwrap_err().code(), "E_INDEX");
    }

    #[test]
    fn doubling_sigma_at_mean() {
        let mut h = MixtureValues {
            dim: 3,
            log_weights: vec![0.0],
            means: vec![1.5],
            logstd: vec![0.2],
        };
        let z = [1.5; 3];
        let a = component_logpdf(&h, &z, 0).unwrap();
        h.logstd[0] += 2f64.ln();
        let b = component_logpdf(&h, &z, 0).unwrap();
        assert!((a - b - 3.0 * 2f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn matches_dense_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let h = head_values(3, 4, &mut rng);
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            for k in 0..3 {
                let var = (2.0 * h.logstd[k]).exp();
                let cov = Tensor::identity(4).map(|v| v * var);
                let oracle = dense_gaussian_logpdf(&z, &[h.means[k]; 4], &cov);
                assert!((component_logpdf(&h, &z, k).unwrap() - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = head_values(3, 2, &mut rng);
        let z = [0.4, -0.7];
        let direct: f64 = (0..3)
            .map(|k| h.log_weights[k].exp() * component_logpdf(&h, &z, k).unwrap().exp())
            .sum();
        let got = mixture_logpdf(&h, &z).exp();
        assert!(((got - direct) / direct).abs() < 1e-12);
        let twins = MixtureValues {
            dim: 2,
            log_weights: vec![0.5f64.ln(); 2],
            means: vec![0.3; 2],
            logstd: vec![0.1; 2],
        };
        let one = component_logpdf(&twins, &z, 0).unwrap();
        assert!((mixture_logpdf(&twins, &z) - one).abs() < 1e-14);
    }

    #[test]
    fn tape_logpdfs_match_values() {
        let (store, model, head, _) = model_and_head(5, 3, 1, fixed_row(), 3, 3);
        let x = Tensor::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let fv = model.forward_values(&store, &x).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let w = head.weighted_logpdfs(&p, tape.constant(fv.z.clone())).unwrap().value();
        let hv = head.values(&store);
        for i in 0..5 {
            for k in 0..3 {
                let want = hv.log_weights[k] + component_logpdf(&hv, fv.z.row(i), k).unwrap();
                assert!((w.get(i, k) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginalization_and_posteriors() {
        let (store, model, head, _) = model_and_head(6, 4, 2, fixed_row(), 3, 4);
        let x = Tensor::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 1.0);
        let fv = model.forward_values(&store, &x).unwrap();
        let hv = head.values(&store);
        let dens = NodeDensities::evaluate(&hv, &fv).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = (0..3).map(|k| dens.log_joint_labeled(i, k).unwrap()).collect();
            let m = dens.log_marginal(i).unwrap();
            assert!((logsumexp(&row) - m).abs() < 1e-12);
            let post = dens.posterior(i).unwrap();
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                assert!((row[k] - m - post[k].ln()).abs() < 1e-12);
            }
        }
        assert_eq!(dens.log_joint_labeled(0, 3).unwrap_err().code(), "E_INDEX");
    }

    #[test]
    fn symmetric_components_give_uniform_posterior() {
        let h = MixtureValues {
            dim: 2,
            log_weights: vec![0.5f64.ln(); 2],
            means: vec![-1.0, 1.0],
            logstd: vec![0.0; 2],
        };
        let fv = FlowValues {
            z: Tensor::zeros(1, 2),
            node_logdet: vec![0.0],
            graph_logdet: 0.0,
        };
        let d = NodeDensities::evaluate(&h, &fv).unwrap();
        assert!(d.posterior(0).unwrap().iter().all(|p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identity_model_reduces_to_mixture() {
        let (store, model, head, _) = model_and_head(4, 2, 0, fixed_row(), 2, 5);
        let x = Tensor::from_fn(4, 2, |i, j| i as f64 - j as f64);
        let dens = NodeDensities::evaluate(&head.values(&store), &model.forward_values(&store, &x).unwrap()).unwrap();
        for i in 0..4 {
            assert_eq!(dens.marginal[i], mixture_logpdf(&head.values(&store), x.row(i)));
        }
    }

    #[test]
    fn joint_density_matches_bruteforce_jacobian() {
        let (store, model, head, _) = model_and_head(3, 2, 2, fixed_row(), 2, 6);
        let x = Tensor::from_fn(3, 2, |i, j| 0.5 * i as f64 - 0.3 * j as f64);
        let fv = model.forward_values(&store, &x).unwrap();
        let hv = head.values(&store);
        let dens = NodeDensities::evaluate(&hv, &fv).unwrap();
        let total: f64 = dens.marginal.iter().sum();
        let base: f64 = (0..3).map(|i| mixture_logpdf(&hv, fv.z.row(i))).sum();
        let jac = jacobian_bruteforce(|v| Ok(model.forward_values(&store, v)?.z), &x).unwrap();
        assert!((total - base - jac).abs() < 1e-6);
    }

    #[test]
    fn scaling_adjacency_shifts_marginal_by_log_two() {
        // D = 1, T = 1 with no couplings: Z = ÂX exactly.
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = crate::graph::NormalizedAdjacency::normalize_row(&g).unwrap();
        let doubled = crate::graph::NormalizedAdjacency::external(a.matrix().map(|v| 2.0 * v)).unwrap();
        let spec = FlowSpec {
            dim: 1,
            flows: 1,
            couplings: 0,
            hidden: 4,
            mlp_layers: 1,
            adjacency: fixed_row(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s1 = ParamStore::new();
        let m1 = GcFlowModel::with_fixed_adjacency(&mut s1, spec.clone(), a, &mut rng).unwrap();
        let mut s2 = ParamStore::new();
        let m2 = GcFlowModel::with_fixed_adjacency(&mut s2, spec, doubled, &mut rng).unwrap();
        let f1 = m1.forward_values(&s1, &Tensor::zeros(4, 1)).unwrap();
        let f2 = m2.forward_values(&s2, &Tensor::zeros(4, 1)).unwrap();
        let h = MixtureValues {
            dim: 1,
            log_weights: vec![0.0],
            means: vec![0.0],
            logstd: vec![0.0],
        };
        let d1 = NodeDensities::evaluate(&h, &f1).unwrap();
        let d2 = NodeDensities::evaluate(&h, &f2).unwrap();
        for i in 0..4 {
            assert!((d2.marginal[i] - d1.marginal[i] - 2f64.ln()).abs() < 1e-12);
        }
    }

    fn loss_value(store: &ParamStore, model: &GcFlowModel, head: &MixtureHead, x: &Tensor, cfg: &LossConfig) -> f64 {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = model.forward(&p, tape.constant(x.clone()), None).unwrap();
        semi_supervised_loss(head, &p, &out, cfg).unwrap().total().unwrap()
    }

    #[test]
    fn closed_form_single_labeled_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Graph::empty(1);
        for k in [1usize, 3] {
            let mut store = ParamStore::new();
            let spec = FlowSpec {
                dim: 2,
                flows: 0,
                couplings: 0,
                hidden: 4,
                mlp_layers: 1,
                adjacency: AdjacencySpec::Fixed { scheme: AdjacencyScheme::Identity, damping: 1e-3 },
            };
            let model = GcFlowModel::new(&mut store, spec, &g, &mut rng).unwrap();
            let head = MixtureHead::new(
                &mut store,
                MixtureSpec {
                    components: k,
                    mean_lo: 0.0,
                    mean_hi: 0.0,
                    ..MixtureSpec::default()
                },
                2,
            )
            .unwrap();
            let cfg = LossConfig {
                lambda: 0.0,
                labeled: vec![0],
                labels: vec![0],
                unlabeled: vec![],
            };
            let v = loss_value(&store, &model, &head, &Tensor::zeros(1, 2), &cfg);
            assert!((v - ((2.0 * PI).ln() + (k as f64).ln())).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_is_weighted_mean_of_node_terms() {
        let (store, model, head, _) = model_and_head(6, 2, 2, fixed_row(), 2, 7);
        let x = Tensor::from_fn(6, 2, |i, j| (i as f64 * 0.37 + j as f64).sin());
        let cfg = LossConfig {
            lambda: 0.3,
            labeled: vec![0, 3],
            labels: vec![1, 0],
            unlabeled: vec![1, 2, 4, 5],
        };
        let dens = NodeDensities::evaluate(&head.values(&store), &model.forward_values(&store, &x).unwrap()).unwrap();
        let lab = (dens.joint.get(0, 1) + dens.joint.get(3, 0)) / 2.0;
        let unl = [1, 2, 4, 5].iter().map(|&i| dens.marginal[i]).sum::<f64>() / 4.0;
        let want = -(0.7 * lab + 0.3 * unl);
        assert!((loss_value(&store, &model, &head, &x, &cfg) - want).abs() < 1e-12);
        let only_labeled = LossConfig { lambda: 0.0, ..cfg.clone() };
        assert!((loss_value(&store, &model, &head, &x, &only_labeled) + lab).abs() < 1e-12);
    }

    #[test]
    fn loss_config_errors() {
        let base = LossConfig {
            lambda: 0.5,
            labeled: vec![0],
            labels: vec![0],
            unlabeled: vec![1],
        };
        assert!(base.validate(2, 2).is_ok());
        let empty = LossConfig { labeled: vec![], labels: vec![], ..base.clone() };
        assert_eq!(empty.validate(2, 2).unwrap_err().code(), "E_CONFIG");
        let overlap = LossConfig { unlabeled: vec![0], ..base.clone() };
        assert_eq!(overlap.validate(2, 2).unwrap_err().code(), "E_CONFIG");
        let bad_lambda = LossConfig { lambda: 1.0, ..base.clone() };
        assert_eq!(bad_lambda.validate(2, 2).unwrap_err().code(), "E_CONFIG");
        let bad_class = LossConfig { labels: vec![2], ..base };
        assert_eq!(bad_class.validate(2, 2).unwrap_err().code(), "E_INDEX");
    }

    /// Gradient of the loss with respect to every parameter.
    fn loss_gradcheck(adjacency: AdjacencySpec, seed: u64) -> f64 {
        let (store, model, head, _) = model_and_head(6, 4, 2, adjacency, 3, seed);
        let x = Tensor::from_fn(6, 4, |i, j| ((i * 5 + j * 3) as f64 * 0.7).cos());
        let cfg = LossConfig {
            lambda: 0.4,
            labeled: vec![1, 4],
            labels: vec![2, 0],
            unlabeled: vec![0, 2, 3, 5],
        };
        let noise = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            model.sample_noise(&mut rng)
        };
        let point: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
        grad_check(
            |tape, vars| {
                let p = Bound::from_vars(vars.to_vec());
                let out = model.forward(&p, tape.constant(x.clone()), noise.as_deref())?;
                Ok(semi_supervised_loss(&head, &p, &out, &cfg)?.loss)
            },
            &point,
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn loss_gradient_fixed_adjacency() {
        let err = loss_gradcheck(fixed_row(), 8);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn loss_gradient_attention_adjacency() {
        let err = loss_gradcheck(
            AdjacencySpec::Attention {
                embedding: crate::adjparam::EmbeddingSpec::default(),
            },
            9,
        );
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn loss_gradient_learned_adjacency() {
        let err = loss_gradcheck(
            AdjacencySpec::Learned {
                embedding: crate::adjparam::EmbeddingSpec::default(),
                concrete: crate::adjparam::ConcreteSpec::default(),
            },
            10,
        );
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn supervised_mean_init() {
        let mut store = ParamStore::new();
        let head = MixtureHead::new(&mut store, MixtureSpec { components: 3, ..MixtureSpec::default() }, 2).unwrap();
        let z = Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, 5.0], vec![0.0, 0.0]]).unwrap();
        let m = head.init_means_from_labels(&mut store, &z, &[0, 1], &[0, 0]).unwrap();
        assert_eq!(m, vec![3.5, 5.25, 10.0]);
    }

    #[test]
    fn default_means_spread() {
        let m = MixtureSpec { components: 3, ..MixtureSpec::default() }.initial_means();
        assert_eq!(m, vec![0.5, 5.25, 10.0]);
        assert_eq!(MixtureSpec { components: 1, ..MixtureSpec::default() }.initial_means(), vec![0.5]);
    }
}
