use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adjparam::{ConcreteSpec, EmbeddingSpec, DEFAULT_DAMPING};
use crate::baselines::{EmConfig, GcnConfig};
use crate::density::MixtureSpec;
use crate::error::{Error, Result};
use crate::flow::{AdjacencySpec, FlowSpec};
use crate::graph::AdjacencyScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "flowgmm")]
    FlowGmm,
    #[serde(rename = "gcflow")]
    GcFlow,
    #[serde(rename = "gcflow-p")]
    GcFlowP,
    #[serde(rename = "gcflow-l")]
    GcFlowL,
    #[serde(rename = "gmm-x")]
    GmmX,
    #[serde(rename = "gmm-ax")]
    GmmAx,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Gcn,
        ModelKind::FlowGmm,
        ModelKind::GcFlow,
        ModelKind::GcFlowP,
        ModelKind::GcFlowL,
        ModelKind::GmmX,
        ModelKind::GmmAx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::FlowGmm => "flowgmm",
            ModelKind::GcFlow => "gcflow",
            ModelKind::GcFlowP => "gcflow-p",
            ModelKind::GcFlowL => "gcflow-l",
            ModelKind::GmmX => "gmm-x",
            ModelKind::GmmAx => "gmm-ax",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(
            self,
            ModelKind::FlowGmm | ModelKind::GcFlow | ModelKind::GcFlowP | ModelKind::GcFlowL
        )
    }

    pub fn is_gmm(self) -> bool {
        matches!(self, ModelKind::GmmX | ModelKind::GmmAx)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanInit {
    /// Means spread evenly over `[mean_lo, mean_hi]`.
    Spread,
    /// Per-class mean coordinate of labeled nodes after the identity flow.
    Supervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmInit {
    /// Labeled class means.
    Labeled,
    /// Centroids of seeded k-means++ / Lloyd.
    Kmeans,
}

/// Every field is addressable as `key=value` with the field name as key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    /// Principal components kept; 0 keeps raw features.
    pub pca: usize,
    pub scheme: AdjacencyScheme,
    pub damping: f64,

    /// Number of flows `T`.
    pub flows: usize,
    /// Coupling layers per flow.
    pub couplings: usize,
    /// Dense layers per s/t network.
    pub mlp_layers: usize,
    pub hidden: usize,
    /// Dropout inside s/t-network hidden layers.
    pub dropout: f64,
    pub lambda: f64,
    pub mean_init: MeanInit,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub learn_weights: bool,
    pub embed_dim: usize,
    pub embed_hidden: usize,
    pub embed_layers: usize,
    pub tau: f64,

    pub gcn_hidden: usize,
    pub gcn_layers: usize,
    pub gcn_dropout: f64,
    pub gcn_lr: f64,

    pub em_init: EmInit,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let gcn = GcnConfig::default();
        let em = EmConfig::default();
        let embed = EmbeddingSpec::default();
        let mix = MixtureSpec::default();
        TrainConfig {
            model: ModelKind::GcFlow,
            seed: 0,
            epochs: 400,
            patience: 50,
            lr: 1e-3,
            weight_decay: 5e-4,
            clip: 50.0,
            pca: 0,
            scheme: AdjacencyScheme::RowNormalized,
            damping: DEFAULT_DAMPING,
            flows: 2,
            couplings: 4,
            mlp_layers: 2,
            hidden: 32,
            dropout: 0.0,
            lambda: 0.5,
            mean_init: MeanInit::Spread,
            mean_lo: mix.mean_lo,
            mean_hi: mix.mean_hi,
            learn_weights: mix.learn_weights,
            embed_dim: embed.embed_dim,
            embed_hidden: embed.hidden,
            embed_layers: embed.layers,
            tau: ConcreteSpec::default().tau,
            gcn_hidden: gcn.hidden,
            gcn_layers: gcn.layers,
            gcn_dropout: gcn.dropout,
            gcn_lr: 0.01,
            em_init: EmInit::Labeled,
            em_max_iters: em.max_iters,
            em_tol: em.tol,
            em_reg: em.reg,
        }
    }
}

fn parse_as(old: &Value, key: &str, raw: &str) -> Result<Value> {
    let bad = || Error::Config(format!("bad value {raw:?} for {key}"));
    Ok(match old {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        _ if key == "scheme" => serde_json::to_value(raw.parse::<AdjacencyScheme>()?).expect("scheme serializes"),
        _ => Value::String(raw.to_string()),
    })
}

impl TrainConfig {
    /// Applies `key=value` assignments in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut obj = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let map = obj.as_object_mut().expect("config serializes to an object");
        for (key, raw) in pairs {
            let old = map
                .get(key)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            let new = parse_as(old, key, raw.trim())?;
            map.insert(key.to_string(), new);
        }
        let cfg: TrainConfig = serde_json::from_value(obj).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Sets one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply([(key, value)])
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        let mut cfg = TrainConfig::default();
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    /// `key=value` lines in key order; [`Self::parse`] reads them back.
    pub fn to_kv(&self) -> String {
        let obj = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in obj.as_object().expect("object") {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k}={text}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.model.is_flow() && !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail(format!("lambda must lie in (0, 1) for flow models, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.gcn_lr > 0.0 && self.clip > 0.0) {
            return fail("lr, gcn_lr and clip must be positive".into());
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.gcn_dropout) {
            return fail("weight decay must be nonnegative and dropout in [0, 1)".into());
        }
        if self.epochs == 0 || self.flows == 0 || self.couplings == 0 || self.mlp_layers == 0 || self.hidden == 0 {
            return fail("epochs, flows, couplings, mlp_layers and hidden must be positive".into());
        }
        if self.model == ModelKind::GcFlow && matches!(self.scheme, AdjacencyScheme::Identity | AdjacencyScheme::External) {
            return fail(format!("gcflow needs a graph scheme, got {}", self.scheme));
        }
        Ok(())
    }

    pub fn flow_spec(&self, dim: usize) -> FlowSpec {
        let embedding = EmbeddingSpec {
            embed_dim: self.embed_dim,
            hidden: self.embed_hidden,
            layers: self.embed_layers,
            damping: self.damping,
            ..EmbeddingSpec::default()
        };
        let adjacency = match self.model {
            ModelKind::FlowGmm => AdjacencySpec::Fixed {
                scheme: AdjacencyScheme::Identity,
                damping: self.damping,
            },
            ModelKind::GcFlowP => AdjacencySpec::Attention { embedding },
            ModelKind::GcFlowL => AdjacencySpec::Learned {
                embedding,
                concrete: ConcreteSpec {
                    tau: self.tau,
                    ..ConcreteSpec::default()
                },
            },
            _ => AdjacencySpec::Fixed {
                scheme: self.scheme,
                damping: self.damping,
            },
        };
        FlowSpec {
            dim,
            flows: self.flows,
            couplings: self.couplings,
            hidden: self.hidden,
            mlp_layers: self.mlp_layers,
            adjacency,
        }
    }

    pub fn mixture_spec(&self, classes: usize) -> MixtureSpec {
        MixtureSpec {
            components: classes,
            learn_weights: self.learn_weights,
            mean_lo: self.mean_lo,
            mean_hi: self.mean_hi,
        }
    }

    pub fn gcn_config(&self) -> GcnConfig {
        GcnConfig {
            hidden: self.gcn_hidden,
            layers: self.gcn_layers,
            dropout: self.gcn_dropout,
        }
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iters: self.em_max_iters,
            tol: self.em_tol,
            reg: self.em_reg,
        }
    }
}
