//! Numerical self-checks shared by `gcflow verify` and the acceptance tests.
//!
//! Each check builds small random instances from a seed and compares a
//! quantity computed by the library against an independent oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjparam::{ConcreteSpec, EmbeddingSpec};
use crate::autodiff::{grad_check, logsumexp, Tape, Tensor};
use crate::density::{mixture_logpdf, semi_supervised_loss, LossConfig, MixtureHead, MixtureSpec, MixtureValues, NodeDensities};
use crate::error::Result;
use crate::flow::{gcflow_forward, gcflow_inverse, jacobian_bruteforce, AdjacencySpec, FlowSpec, GcFlowModel};
use crate::graph::{AdjacencyScheme, Graph, NormalizedAdjacency};
use crate::params::{Bound, ParamStore};

/// One named comparison against a tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value < threshold`; NaN fails.
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (limit {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

/// Overwrites every parameter with uniform noise in `(-amp, amp)`.
pub fn randomize_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, amp: f64) {
    for e in store.entries_mut() {
        let (r, c) = (e.value.rows(), e.value.cols());
        e.value = Tensor::from_fn(r, c, |_, _| rng.random_range(-amp..amp));
    }
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = vec![];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("pairs are in range")
}

/// Random graph whose normalized adjacency has `log|det Â| > -2n`, so that
/// finite-difference Jacobians stay accurate.
pub fn well_conditioned_graph(n: usize, scheme: AdjacencyScheme, rng: &mut ChaCha8Rng) -> Graph {
    loop {
        let g = random_graph(n, 0.5, rng);
        if let Ok(a) = NormalizedAdjacency::from_scheme(&g, scheme) {
            if a.log_abs_det() > -2.0 * n as f64 {
                return g;
            }
        }
    }
}

/// One random fixed-adjacency model with its determinant computed both ways.
#[derive(Clone, Debug)]
pub struct DeterminantCase {
    pub n: usize,
    pub dim: usize,
    pub flows: usize,
    pub scheme: AdjacencyScheme,
    /// Graph factor plus per-node coupling terms.
    pub formula: f64,
    /// `log|det|` of the finite-difference `nD x nD` Jacobian.
    pub bruteforce: f64,
}

impl DeterminantCase {
    pub fn error(&self) -> f64 {
        (self.formula - self.bruteforce).abs()
    }
}

fn fixed_model(
    n: usize,
    dim: usize,
    flows: usize,
    scheme: AdjacencyScheme,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamStore, GcFlowModel)> {
    let g = well_conditioned_graph(n, scheme, rng);
    let spec = FlowSpec {
        dim,
        flows,
        couplings: 2,
        hidden: 8,
        mlp_layers: 2,
        adjacency: AdjacencySpec::Fixed { scheme, damping: 0.0 },
    };
    let mut store = ParamStore::new();
    let model = GcFlowModel::new(&mut store, spec, &g, rng)?;
    randomize_params(&mut store, rng, 0.8);
    Ok((store, model))
}

/// `n ∈ [2, 6]`, `D ∈ {2, 4}`, `T ∈ [1, 3]`, row or symmetric normalization.
pub fn determinant_case(seed: u64) -> Result<DeterminantCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let dim = if rng.random::<bool>() { 2 } else { 4 };
    let flows = rng.random_range(1..=3);
    let scheme = if rng.random::<bool>() {
        AdjacencyScheme::RowNormalized
    } else {
        AdjacencyScheme::Symmetric
    };
    let (store, model) = fixed_model(n, dim, flows, scheme, &mut rng)?;
    let x = random_tensor(n, dim, &mut rng);
    let formula = gcflow_forward(&model, &store, &x)?.total_logdet();
    let bruteforce = jacobian_bruteforce(|v| Ok(gcflow_forward(&model, &store, v)?.z), &x)?;
    Ok(DeterminantCase {
        n,
        dim,
        flows,
        scheme,
        formula,
        bruteforce,
    })
}

/// Max abs error of `inverse(forward(x))` on a random fixed-adjacency model.
pub fn inverse_roundtrip_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=10);
    let (store, model) = fixed_model(n, 4, 3, AdjacencyScheme::RowNormalized, &mut rng)?;
    let x = random_tensor(n, 4, &mut rng);
    let z = gcflow_forward(&model, &store, &x)?.z;
    let back = gcflow_inverse(&model, &store, &z)?;
    Ok(back.zip_map(&x, |a, b| (a - b).abs())?.max_abs())
}

/// Adjacency variants exercised by [`loss_gradient_error`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fixed,
    Attention,
    Learned,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fixed, Variant::Attention, Variant::Learned];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fixed => "fixed",
            Variant::Attention => "attention",
            Variant::Learned => "learned",
        }
    }

    /// Relative-error budget for the finite-difference comparison.
    pub fn tolerance(self) -> f64 {
        match self {
            Variant::Fixed => 1e-4,
            _ => 1e-3,
        }
    }

    fn adjacency(self) -> AdjacencySpec {
        match self {
            Variant::Fixed => AdjacencySpec::Fixed {
                scheme: AdjacencyScheme::RowNormalized,
                damping: 1e-3,
            },
            Variant::Attention => AdjacencySpec::Attention {
                embedding: EmbeddingSpec::default(),
            },
            Variant::Learned => AdjacencySpec::Learned {
                embedding: EmbeddingSpec::default(),
                concrete: ConcreteSpec::default(),
            },
        }
    }
}

/// Six nodes, `D = 4`, `T = 2`, three components with learned weights.
fn loss_fixture(variant: Variant, seed: u64) -> Result<(ParamStore, GcFlowModel, MixtureHead, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // path plus one chord keeps the row normalization nonsingular
    let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2)])?;
    let spec = FlowSpec {
        dim: 4,
        flows: 2,
        couplings: 2,
        hidden: 6,
        mlp_layers: 2,
        adjacency: variant.adjacency(),
    };
    let mut store = ParamStore::new();
    let model = GcFlowModel::new(&mut store, spec, &g, &mut rng)?;
    let head = MixtureHead::new(
        &mut store,
        MixtureSpec {
            components: 3,
            learn_weights: true,
            ..MixtureSpec::default()
        },
        4,
    )?;
    randomize_params(&mut store, &mut rng, 0.5);
    let x = random_tensor(6, 4, &mut rng);
    Ok((store, model, head, x))
}

/// Max relative error between the semi-supervised loss gradient and
/// central finite differences, over all parameters.
pub fn loss_gradient_error(variant: Variant, seed: u64) -> Result<f64> {
    let (store, model, head, x) = loss_fixture(variant, seed)?;
    let cfg = LossConfig {
        lambda: 0.4,
        labeled: vec![1, 4],
        labels: vec![2, 0],
        unlabeled: vec![0, 2, 3, 5],
    };
    let noise = model.sample_noise(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
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
}

/// Max over nodes of `|logsumexp_k log p(x, y=k) - log p(x)|` for each
/// adjacency variant.
pub fn marginalization_error(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (j, v) in Variant::ALL.into_iter().enumerate() {
        let (store, model, head, x) = loss_fixture(v, seed + j as u64)?;
        let d = NodeDensities::evaluate(&head.values(&store), &gcflow_forward(&model, &store, &x)?)?;
        for i in 0..d.marginal.len() {
            worst = worst.max((logsumexp(d.joint.row(i)) - d.marginal[i]).abs());
        }
    }
    Ok(worst)
}

/// Trapezoid-rule integral of a random two-coupling FlowGMM density in two
/// dimensions over `[-half, half]^2` with `points` nodes per axis.
pub fn density_integral(seed: u64, half: f64, points: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = FlowSpec {
        dim: 2,
        flows: 1,
        couplings: 2,
        hidden: 8,
        mlp_layers: 2,
        adjacency: AdjacencySpec::Fixed {
            scheme: AdjacencyScheme::Identity,
            damping: 0.0,
        },
    };
    let mut store = ParamStore::new();
    let model = GcFlowModel::new(&mut store, spec, &Graph::empty(1), &mut rng)?;
    randomize_params(&mut store, &mut rng, 0.5);
    let raw: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lse = logsumexp(&raw);
    let head = MixtureValues {
        dim: 2,
        log_weights: raw.iter().map(|w| w - lse).collect(),
        means: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
        logstd: (0..3).map(|_| rng.random_range(-0.3..0.3)).collect(),
    };

    let h = 2.0 * half / (points - 1) as f64;
    let coord = |k: usize| -half + k as f64 * h;
    let grid = Tensor::from_fn(points * points, 2, |r, c| coord(if c == 0 { r / points } else { r % points }));
    // identity adjacency: the flow acts row by row, so the grid is one batch
    let tape = Tape::new();
    let params = store.bind_frozen(&tape);
    let (z, logdet) = model.flows()[0].forward(&params, tape.constant(grid))?;
    let (z, logdet) = (z.value(), logdet.value());
    let weight = |k: usize| if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for r in 0..points * points {
        let density = (mixture_logpdf(&head, z.row(r)) + logdet.data()[r]).exp();
        total += weight(r / points) * weight(r % points) * density;
    }
    Ok(total * h * h)
}

/// The determinant, gradient, inverse and marginalization checks at their
/// acceptance tolerances.
pub fn standard_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        worst = worst.max(determinant_case(seed)?.error());
    }
    checks.push(Check::below("log-determinant vs brute-force Jacobian (20 models)", worst, 1e-5));
    for v in Variant::ALL {
        checks.push(Check::below(
            format!("loss gradient, {} adjacency", v.name()),
            loss_gradient_error(v, 1)?,
            v.tolerance(),
        ));
    }
    let mut inv: f64 = 0.0;
    for seed in 0..10 {
        inv = inv.max(inverse_roundtrip_error(seed)?);
    }
    checks.push(Check::below("inverse round trip (10 models)", inv, 1e-8));
    checks.push(Check::below("marginalization identity", marginalization_error(3)?, 1e-12));
    checks.push(Check::below(
        "density integrates to one",
        (density_integral(5, 10.0, 401)? - 1.0).abs(),
        1e-2,
    ));
    Ok(checks)
}
