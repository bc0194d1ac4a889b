use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EmInit, MeanInit, ModelKind, TrainConfig};
use super::optim::{clip_gradients, Adam};
use crate::autodiff::{Tape, Tensor};
use crate::baselines::{
    component_classes, em_fit, gcn_loss, labeled_class_means, EmGmm, GcnConfig, GcnModel,
};
use crate::datasets::Dataset;
use crate::density::{argmax, semi_supervised_loss, LossConfig, MixtureHead, MixtureSpec, NodeDensities};
use crate::error::{Error, Result};
use crate::evalkit::{ari, kmeans, micro_f1, nmi, pca_apply, pca_fit, silhouette, PcaProjection, KMEANS_MAX_ITERS};
use crate::flow::{FlowSpec, GcFlowModel};
use crate::graph::{normalized_matrix, AdjacencyScheme, Graph};
use crate::nn::Dropout;
use crate::params::ParamStore;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelState {
    Flow {
        spec: FlowSpec,
        mixture: MixtureSpec,
        params: Vec<NamedTensor>,
    },
    Gcn {
        config: GcnConfig,
        scheme: AdjacencyScheme,
        params: Vec<NamedTensor>,
    },
    Gmm {
        gmm: EmGmm,
        /// Fitted on `ÂX` rather than `X`.
        convolved: bool,
        scheme: AdjacencyScheme,
        /// Component index -> class.
        class_map: Vec<usize>,
    },
}

/// Everything needed to rebuild a trained model against its dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub n: usize,
    /// Feature width before any projection.
    pub input_dim: usize,
    pub classes: usize,
    pub pca: Option<PcaProjection>,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {}", c.format)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.n() != self.n || ds.dim() != self.input_dim || ds.classes != self.classes {
            return Err(Error::Config(format!(
                "checkpoint expects {} nodes, {} features, {} classes; dataset has {}, {}, {}",
                self.n,
                self.input_dim,
                self.classes,
                ds.n(),
                ds.dim(),
                ds.classes
            )));
        }
        Ok(())
    }
}

fn named(store: &ParamStore) -> Vec<NamedTensor> {
    store
        .entries()
        .iter()
        .map(|e| NamedTensor {
            name: e.name.clone(),
            value: e.value.clone(),
        })
        .collect()
}

fn load_named(store: &mut ParamStore, params: &[NamedTensor]) -> Result<()> {
    let mut saved = ParamStore::new();
    for p in params {
        saved.add(p.name.clone(), p.value.clone(), false);
    }
    store.load_from(&saved)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub test_micro_f1: f64,
    /// Silhouette of the representation under its own k-means clustering.
    pub silhouette_kmeans: f64,
    /// Silhouette of the representation under the true labels.
    pub silhouette_truth: f64,
    pub nmi: f64,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub metrics: EvalMetrics,
    /// Largest post-clip gradient norm seen.
    pub max_grad_norm: f64,
    /// Mixture means (flows) or EM means (GMM) at initialization.
    pub initial_means: Vec<f64>,
    pub wall_seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    config: &'a TrainConfig,
    seed: u64,
    epochs_run: usize,
    test_micro_f1: f64,
    silhouette_kmeans: f64,
    silhouette_truth: f64,
    nmi: f64,
    ari: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_seconds: Option<f64>,
}

impl RunRecord {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// Wall time is omitted unless `timing`, keeping the record reproducible.
    pub fn metrics_json(&self, timing: bool) -> String {
        let m = MetricsJson {
            config: &self.config,
            seed: self.seed,
            epochs_run: self.epochs_run(),
            test_micro_f1: self.metrics.test_micro_f1,
            silhouette_kmeans: self.metrics.silhouette_kmeans,
            silhouette_truth: self.metrics.silhouette_truth,
            nmi: self.metrics.nmi,
            ari: self.metrics.ari,
            wall_seconds: timing.then_some(self.wall_seconds),
        };
        let mut s = serde_json::to_string_pretty(&m).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_f1\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.val_f1));
        }
        s
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

#[derive(Debug)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    /// `Z` for flows, penultimate activations for GCN, the fitted features for GMM.
    pub representation: Tensor,
    pub metrics: EvalMetrics,
}

/// Test F1 plus clustering quality of `repr`; k-means uses `seed`.
pub fn score(ds: &Dataset, predictions: &[usize], repr: &Tensor, seed: u64) -> Result<EvalMetrics> {
    let truth = ds.dense_labels();
    let (test, _) = ds.known(&ds.test);
    let km = kmeans(repr, ds.classes, KMEANS_MAX_ITERS, seed)?;
    let (known, known_truth) = ds.known(&(0..ds.n()).collect::<Vec<_>>());
    let km_known: Vec<usize> = known.iter().map(|&i| km.labels[i]).collect();
    Ok(EvalMetrics {
        test_micro_f1: micro_f1(predictions, &truth, &test)?,
        silhouette_kmeans: silhouette(repr, &km.labels)?,
        silhouette_truth: silhouette(&repr.select_rows(&known)?, &known_truth)?,
        nmi: nmi(&km_known, &known_truth)?,
        ari: ari(&km_known, &known_truth)?,
    })
}

fn features(ds: &Dataset, pca: Option<&PcaProjection>) -> Result<Tensor> {
    match pca {
        Some(p) => pca_apply(p, &ds.features),
        None => Ok(ds.features.clone()),
    }
}

fn convolve(graph: &Graph, scheme: AdjacencyScheme, x: &Tensor) -> Result<Tensor> {
    normalized_matrix(graph, scheme)?.matmul(x)
}

fn flow_predict(model: &GcFlowModel, head: &MixtureHead, store: &ParamStore, x: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    let fv = model.forward_values(store, x)?;
    let dens = NodeDensities::evaluate(&head.values(store), &fv)?;
    Ok((dens.predictions(), fv.z))
}

fn gcn_predict(model: &GcnModel, store: &ParamStore, x: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    let tape = Tape::new();
    let params = store.bind_frozen(&tape);
    let out = model.forward(&params, tape.constant(x.clone()), None)?;
    let probs = out.probs.value();
    let preds = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
    Ok((preds, out.penultimate.value().as_ref().clone()))
}

fn build_flow(store: &mut ParamStore, spec: &FlowSpec, mixture: &MixtureSpec, graph: &Graph, rng: &mut ChaCha8Rng) -> Result<(GcFlowModel, MixtureHead)> {
    let model = GcFlowModel::new(store, spec.clone(), graph, rng)?;
    let head = MixtureHead::new(store, mixture.clone(), spec.dim)?;
    Ok((model, head))
}

/// Predictions and representation of a checkpoint on its dataset.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset) -> Result<Evaluation> {
    ckpt.check(ds)?;
    let x = features(ds, ckpt.pca.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    let (predictions, representation) = match &ckpt.state {
        ModelState::Flow { spec, mixture, params } => {
            let mut store = ParamStore::new();
            let (model, head) = build_flow(&mut store, spec, mixture, &ds.graph, &mut rng)?;
            load_named(&mut store, params)?;
            flow_predict(&model, &head, &store, &x)?
        }
        ModelState::Gcn { config, scheme, params } => {
            let mut store = ParamStore::new();
            let model = GcnModel::new(&mut store, config.clone(), &ds.graph, *scheme, x.cols(), ds.classes, &mut rng)?;
            load_named(&mut store, params)?;
            gcn_predict(&model, &store, &x)?
        }
        ModelState::Gmm { gmm, convolved, scheme, class_map } => {
            let xr = if *convolved { convolve(&ds.graph, *scheme, &x)? } else { x };
            let comps = gmm.predict_components(&xr)?;
            (comps.iter().map(|&c| class_map[c]).collect(), xr)
        }
    };
    let metrics = score(ds, &predictions, &representation, ckpt.config.seed)?;
    Ok(Evaluation {
        predictions,
        representation,
        metrics,
    })
}

/// Per-node joint and marginal log-densities of a flow checkpoint.
pub fn flow_densities(ckpt: &Checkpoint, ds: &Dataset) -> Result<NodeDensities> {
    ckpt.check(ds)?;
    let ModelState::Flow { spec, mixture, params } = &ckpt.state else {
        return Err(Error::Config(format!("{} is not a flow model", ckpt.config.model)));
    };
    let x = features(ds, ckpt.pca.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    let mut store = ParamStore::new();
    let (model, head) = build_flow(&mut store, spec, mixture, &ds.graph, &mut rng)?;
    load_named(&mut store, params)?;
    NodeDensities::evaluate(&head.values(&store), &model.forward_values(&store, &x)?)
}

struct LoopResult {
    epochs: Vec<EpochRecord>,
    best: ParamStore,
    best_epoch: usize,
    max_grad_norm: f64,
}

/// Full-batch epochs with clipping, Adam and early stopping on validation F1.
/// `on_best` sees every new best parameter set.
fn run_epochs(
    cfg: &TrainConfig,
    lr: f64,
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&ParamStore, &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>)>,
    mut val_f1: impl FnMut(&ParamStore) -> Result<f64>,
    mut on_best: impl FnMut(&ParamStore),
) -> Result<LoopResult> {
    let mut opt = Adam::new(store, lr, cfg.weight_decay);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut max_grad_norm: f64 = 0.0;
    for epoch in 1..=cfg.epochs {
        let (loss, mut grads) = step(store, rng)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let norm = clip_gradients(&mut grads, cfg.clip);
        max_grad_norm = max_grad_norm.max(norm.min(cfg.clip));
        opt.step(store, &grads)?;
        let f1 = val_f1(store)?;
        epochs.push(EpochRecord { epoch, loss, val_f1: f1 });
        match &best {
            Some((b, _, _)) if f1 <= *b => {}
            _ => {
                on_best(store);
                best = Some((f1, epoch, store.clone()));
            }
        }
        let best_epoch = best.as_ref().expect("set on first epoch").1;
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(LoopResult {
        epochs,
        best,
        best_epoch,
        max_grad_norm,
    })
}

pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    train_into(cfg, ds, &mut None)
}

/// Like [`train`]; `last_good` holds the best checkpoint so far, so it
/// survives an `E_DIVERGED` return.
pub fn train_into(cfg: &TrainConfig, ds: &Dataset, last_good: &mut Option<Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (val, _) = ds.known(&ds.val);
    if val.is_empty() && !cfg.model.is_gmm() {
        return Err(Error::Config("validation set has no labeled nodes".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pca = if cfg.pca > 0 { Some(pca_fit(&ds.features, cfg.pca)?) } else { None };
    let x = features(ds, pca.as_ref())?;
    let truth = ds.dense_labels();
    let labels = ds.train_labels();
    let checkpoint = |state: ModelState| Checkpoint {
        format: CHECKPOINT_FORMAT,
        config: cfg.clone(),
        n: ds.n(),
        input_dim: ds.dim(),
        classes: ds.classes,
        pca: pca.clone(),
        state,
    };

    let (state, epochs, best_epoch, max_grad_norm, initial_means) = match cfg.model {
        kind if kind.is_flow() => {
            let spec = cfg.flow_spec(x.cols());
            let mixture = cfg.mixture_spec(ds.classes);
            let mut store = ParamStore::new();
            let (model, head) = build_flow(&mut store, &spec, &mixture, &ds.graph, &mut rng)?;
            if cfg.mean_init == MeanInit::Supervised {
                let z = model.forward_values(&store, &x)?.z;
                head.init_means_from_labels(&mut store, &z, &ds.train, &labels)?;
            }
            let initial_means = head.values(&store).means;
            let loss_cfg = LossConfig {
                lambda: cfg.lambda,
                labeled: ds.train.clone(),
                labels: labels.clone(),
                unlabeled: ds.unlabeled(),
            };
            let flow_state = |store: &ParamStore| ModelState::Flow {
                spec: spec.clone(),
                mixture: mixture.clone(),
                params: named(store),
            };
            let res = run_epochs(
                cfg,
                cfg.lr,
                &mut store,
                &mut rng,
                |store, rng| {
                    let tape = Tape::new();
                    let params = store.bind(&tape);
                    let noise = model.sample_noise(rng);
                    let mut dropout = (cfg.dropout > 0.0).then(|| Dropout { rate: cfg.dropout, rng });
                    let out = model.forward_with(&params, tape.constant(x.clone()), noise.as_deref(), dropout.as_mut())?;
                    let terms = semi_supervised_loss(&head, &params, &out, &loss_cfg)?;
                    let loss = terms.total()?;
                    if loss.is_finite() {
                        terms.loss.backward()?;
                    }
                    Ok((loss, params.grads()))
                },
                |store| micro_f1(&flow_predict(&model, &head, store, &x)?.0, &truth, &val),
                |store| *last_good = Some(checkpoint(flow_state(store))),
            )?;
            (flow_state(&res.best), res.epochs, Some(res.best_epoch), res.max_grad_norm, initial_means)
        }
        ModelKind::Gcn => {
            let mut store = ParamStore::new();
            let model = GcnModel::new(&mut store, cfg.gcn_config(), &ds.graph, cfg.scheme, x.cols(), ds.classes, &mut rng)?;
            let gcn_state = |store: &ParamStore| ModelState::Gcn {
                config: cfg.gcn_config(),
                scheme: cfg.scheme,
                params: named(store),
            };
            let res = run_epochs(
                cfg,
                cfg.gcn_lr,
                &mut store,
                &mut rng,
                |store, rng| {
                    let tape = Tape::new();
                    let params = store.bind(&tape);
                    let out = model.forward(&params, tape.constant(x.clone()), Some(rng))?;
                    let loss_var = gcn_loss(out.probs, &ds.train, &labels)?;
                    let loss = loss_var.item()?;
                    if loss.is_finite() {
                        loss_var.backward()?;
                    }
                    Ok((loss, params.grads()))
                },
                |store| micro_f1(&gcn_predict(&model, store, &x)?.0, &truth, &val),
                |store| *last_good = Some(checkpoint(gcn_state(store))),
            )?;
            (gcn_state(&res.best), res.epochs, Some(res.best_epoch), res.max_grad_norm, vec![])
        }
        _ => {
            let convolved = cfg.model == ModelKind::GmmAx;
            let xr = if convolved { convolve(&ds.graph, cfg.scheme, &x)? } else { x.clone() };
            let init = match cfg.em_init {
                EmInit::Labeled => labeled_class_means(&xr, &ds.train, &labels, ds.classes)?,
                EmInit::Kmeans => kmeans(&xr, ds.classes, KMEANS_MAX_ITERS, cfg.seed)?.centroids,
            };
            let gmm = em_fit(&xr, &init, &cfg.em_config())?;
            let comps = gmm.predict_components(&xr)?;
            let class_map = component_classes(&comps, gmm.components(), &ds.train, &labels, ds.classes);
            let state = ModelState::Gmm {
                gmm,
                convolved,
                scheme: cfg.scheme,
                class_map,
            };
            (state, vec![], None, 0.0, init.into_data())
        }
    };

    let checkpoint = checkpoint(state);
    let metrics = evaluate(&checkpoint, ds)?.metrics;
    *last_good = Some(checkpoint.clone());
    Ok(TrainOutcome {
        record: RunRecord {
            config: cfg.clone(),
            seed: cfg.seed,
            epochs,
            best_epoch,
            metrics,
            max_grad_norm,
            initial_means,
            wall_seconds: start.elapsed().as_secs_f64(),
            checkpoint: None,
        },
        checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_sbm, SbmConfig};

    fn sbm(blocks: usize, seed: u64) -> Dataset {
        generate_sbm(&SbmConfig {
            blocks,
            nodes_per_block: 40,
            train_per_class: 5,
            val_per_class: 10,
            seed,
            ..SbmConfig::default()
        })
        .unwrap()
    }

    fn quick(model: &str, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.apply([("model", model), ("hidden", "16"), ("couplings", "2"), ("gcn_hidden", "16")]).unwrap();
        c.epochs = epochs;
        c
    }

    #[test]
    fn loss_descends_over_first_ten_epochs() {
        let ds = sbm(2, 0);
        let mut cfg = quick("gcflow", 10);
        cfg.lambda = 0.5;
        cfg.lr = 1e-3;
        let rec = train(&cfg, &ds).unwrap().record;
        let l: Vec<f64> = rec.epochs.iter().map(|e| e.loss).collect();
        assert_eq!(l.len(), 10);
        assert!(l.windows(2).all(|w| w[1] < w[0]), "{l:?}");
    }

    #[test]
    fn every_model_kind_runs_and_reloads_exactly() {
        let ds = sbm(3, 1);
        for kind in ModelKind::ALL {
            let cfg = quick(kind.name(), 3);
            let out = train(&cfg, &ds).unwrap();
            assert_eq!(out.record.epochs_run(), if kind.is_gmm() { 0 } else { 3 }, "{kind}");
            let back = Checkpoint::from_json(&out.checkpoint.to_json().unwrap()).unwrap();
            assert_eq!(back, out.checkpoint);
            assert_eq!(evaluate(&back, &ds).unwrap().metrics, out.record.metrics, "{kind}");
        }
    }

    #[test]
    fn same_seed_same_record() {
        let ds = sbm(2, 2);
        let cfg = quick("gcflow-l", 4);
        let a = train(&cfg, &ds).unwrap().record;
        let b = train(&cfg, &ds).unwrap().record;
        assert_eq!(a.metrics_json(false), b.metrics_json(false));
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn metrics_json_omits_wall_time_by_default() {
        let ds = sbm(2, 3);
        let rec = train(&quick("gmm-x", 1), &ds).unwrap().record;
        let plain: serde_json::Value = serde_json::from_str(&rec.metrics_json(false)).unwrap();
        let timed: serde_json::Value = serde_json::from_str(&rec.metrics_json(true)).unwrap();
        assert!(plain.get("wall_seconds").is_none());
        assert!(timed["wall_seconds"].as_f64().unwrap() >= 0.0);
        for key in ["config", "seed", "epochs_run", "test_micro_f1", "silhouette_kmeans", "silhouette_truth", "nmi", "ari"] {
            assert!(plain.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn early_stopping_keeps_best_validation_epoch() {
        let ds = sbm(2, 4);
        let mut cfg = quick("gcn", 60);
        cfg.patience = 5;
        let rec = train(&cfg, &ds).unwrap().record;
        let best = rec.best_epoch.unwrap();
        let best_f1 = rec.epochs[best - 1].val_f1;
        assert!(rec.epochs.iter().all(|e| e.val_f1 <= best_f1));
        assert!(rec.epochs_run() <= best + 5);
        assert!(rec.max_grad_norm <= cfg.clip);
        let csv = rec.epochs_csv();
        assert!(csv.starts_with("epoch,loss,val_f1\n"));
        assert_eq!(csv.lines().count(), rec.epochs_run() + 1);
    }

    #[test]
    fn divergence_reports_epoch_and_keeps_best() {
        let ds = sbm(2, 5);
        let cfg = quick("gcn", 10);
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0), false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut kept = None;
        let mut calls = 0;
        let err = run_epochs(
            &cfg,
            0.1,
            &mut store,
            &mut rng,
            |_, _| {
                calls += 1;
                Ok((if calls == 3 { f64::NAN } else { 1.0 }, vec![Tensor::scalar(1.0)]))
            },
            |s| Ok(-s.entries()[0].value.data()[0]),
            |s| kept = Some(s.clone()),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::Diverged { epoch: 3, .. }));
        assert_eq!(err.code(), "E_DIVERGED");
        assert!(kept.unwrap().entries()[0].value.data()[0] < 1.0);
        drop(ds);
    }

    #[test]
    fn gcn_learns_the_block_fixture() {
        let ds = generate_sbm(&SbmConfig::default()).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.model = ModelKind::Gcn;
        cfg.epochs = 200;
        let rec = train(&cfg, &ds).unwrap().record;
        assert!(rec.metrics.test_micro_f1 > 0.9, "{:?}", rec.metrics);
    }

    #[test]
    fn checkpoint_rejects_mismatched_dataset() {
        let out = train(&quick("gmm-ax", 1), &sbm(2, 6)).unwrap();
        assert_eq!(evaluate(&out.checkpoint, &sbm(3, 6)).unwrap_err().code(), "E_CONFIG");
        let mut bad = out.checkpoint.clone();
        bad.format = 99;
        assert_eq!(Checkpoint::from_json(&bad.to_json().unwrap()).unwrap_err().code(), "E_FORMAT");
    }
}
