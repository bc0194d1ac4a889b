//! Dataset container, on-disk formats, stratified splits and a seeded
//! stochastic block model generator.
//!
//! # Manifest
//!
//! A dataset on disk is a JSON manifest whose paths are relative to the
//! manifest's directory:
//!
//! ```json
//! {
//!   "name": "cora",
//!   "n": 2708, "d": 1433, "k": 7,
//!   "features": "features.bin",
//!   "edges": "edges.tsv",
//!   "labels": "labels.csv",
//!   "train": "train.txt", "val": "val.txt", "test": "test.txt"
//! }
//! ```
//!
//! * `features`: `.bin` files use the binary layout below; anything else is
//!   read as CSV with one row of `d` comma-separated values per node.
//! * `edges`: one `u<TAB>v` pair per line (any whitespace accepted), `#`
//!   starts a comment. Undirected; duplicates and self-loops are dropped.
//! * `labels`: one integer per line for nodes `0..n`, `-1` when unknown.
//! * `train`/`val`/`test`: newline-separated node indices.
//!
//! Binary features: the 8 bytes `GCFLOW1\0`, then `n` and `d` as
//! little-endian `u64`, then `n * d` little-endian `f64` in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::evalkit::{pca_apply, pca_fit, PcaProjection};
use crate::graph::Graph;

pub const FEATURE_MAGIC: &[u8; 8] = b"GCFLOW1\0";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    /// `n x D`
    pub features: Tensor,
    pub labels: Vec<Option<usize>>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Projection already applied to `features`, if any.
    pub pca: Option<PcaProjection>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Checks every structural invariant; violations are `E_FORMAT`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.features.rows() != n {
            return Err(Error::Format(format!("{} feature rows for {n} nodes", self.features.rows())));
        }
        if self.labels.len() != n {
            return Err(Error::Format(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if let Some(c) = self.labels.iter().flatten().find(|&&c| c >= self.classes) {
            return Err(Error::Format(format!("label {c} out of range for {} classes", self.classes)));
        }
        let mut owner = vec![""; n];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::Format(format!("{name} index {i} out of range for {n} nodes")));
                }
                if !owner[i].is_empty() {
                    return Err(Error::Format(format!("node {i} is in both {} and {name}", owner[i])));
                }
                owner[i] = name;
            }
        }
        if let Some(&i) = self.train.iter().find(|&&i| self.labels[i].is_none()) {
            return Err(Error::Format(format!("train node {i} has no label")));
        }
        Ok(())
    }

    /// Training indices with their labels.
    pub fn train_labels(&self) -> Vec<usize> {
        self.train.iter().map(|&i| self.labels[i].expect("train nodes are labeled")).collect()
    }

    /// Nodes outside the training set.
    pub fn unlabeled(&self) -> Vec<usize> {
        let mut in_train = vec![false; self.n()];
        for &i in &self.train {
            in_train[i] = true;
        }
        (0..self.n()).filter(|&i| !in_train[i]).collect()
    }

    /// Indices of `set` with known labels, and those labels.
    pub fn known(&self, set: &[usize]) -> (Vec<usize>, Vec<usize>) {
        set.iter()
            .filter_map(|&i| self.labels[i].map(|y| (i, y)))
            .unzip()
    }

    /// Labels with unknown entries replaced by `usize::MAX`.
    pub fn dense_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub features: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_features_bin(path: &Path, x: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * x.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(x.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(x.cols() as u64).to_le_bytes());
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &buf)
}

pub fn read_features_bin(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{} is not a feature file", path.display())));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().expect("8 bytes"));
    let (n, d) = (word(0) as usize, word(1) as usize);
    let body = &bytes[24..];
    if n.checked_mul(d).and_then(|m| m.checked_mul(8)) != Some(body.len()) {
        return Err(Error::Format(format!(
            "{}: header says {n}x{d} but body has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(n, d, data)
}

pub fn write_features_csv(path: &Path, x: &Tensor) -> Result<()> {
    let mut out = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_features_csv(path: &Path) -> Result<Tensor> {
    let text = read_text(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(r, line)| {
            line.split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::Format(format!("{}:{}: bad value {t:?}", path.display(), r + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows).map_err(|_| Error::Format(format!("{}: ragged rows", path.display())))
}

fn read_features(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "bin") {
        read_features_bin(path)
    } else {
        read_features_csv(path)
    }
}

fn read_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim().parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(v) if v >= 0 => Ok(Some(v as usize)),
            _ => Err(Error::Format(format!("{}: bad label {l:?}", path.display()))),
        })
        .collect()
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("{}: bad index {l:?}", path.display())))
        })
        .collect()
}

fn write_lines<T: ToString>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&it.to_string());
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let m: Manifest = serde_json::from_str(&read_text(manifest_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let features = read_features(&base.join(&m.features))?;
    if features.shape() != [m.n, m.d] {
        return Err(Error::Format(format!(
            "features are {:?}, manifest declares {}x{}",
            features.shape(),
            m.n,
            m.d
        )));
    }
    let graph = Graph::read_edge_list(&base.join(&m.edges), m.n)?;
    let ds = Dataset {
        name: if m.name.is_empty() {
            manifest_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            m.name
        },
        graph,
        features,
        labels: read_labels(&base.join(&m.labels))?,
        classes: m.k,
        train: read_indices(&base.join(&m.train))?,
        val: read_indices(&base.join(&m.val))?,
        test: read_indices(&base.join(&m.test))?,
        pca: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `manifest.json` and its files into `dir`; features are binary.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = Manifest {
        name: ds.name.clone(),
        n: ds.n(),
        d: ds.dim(),
        k: ds.classes,
        features: "features.bin".into(),
        edges: "edges.tsv".into(),
        labels: "labels.csv".into(),
        train: "train.txt".into(),
        val: "val.txt".into(),
        test: "test.txt".into(),
    };
    write_features_bin(&dir.join(&m.features), &ds.features)?;
    ds.graph.write_edge_list(&dir.join(&m.edges))?;
    write_lines(
        &dir.join(&m.labels),
        ds.labels.iter().map(|l| l.map_or(-1, |v| v as i64)),
    )?;
    write_lines(&dir.join(&m.train), &ds.train)?;
    write_lines(&dir.join(&m.val), &ds.val)?;
    write_lines(&dir.join(&m.test), &ds.test)?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
    write_bytes(&path, json.as_bytes())?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    /// Intra-block edge probability.
    pub p: f64,
    /// Inter-block edge probability.
    pub q: f64,
    pub dim: usize,
    /// Distance between consecutive class means.
    pub delta: f64,
    /// Per-coordinate feature noise.
    pub sigma: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            blocks: 3,
            nodes_per_block: 100,
            p: 0.1,
            q: 0.01,
            dim: 8,
            delta: 3.0,
            sigma: 1.0,
            train_per_class: 20,
            val_per_class: 30,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.q && self.q < self.p && self.p <= 1.0) {
            return Err(Error::Config(format!("need 0 <= q < p <= 1, got p={} q={}", self.p, self.q)));
        }
        if !(self.delta > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("delta and sigma must be positive".into()));
        }
        if self.blocks == 0 || self.dim == 0 {
            return Err(Error::Config("need at least one block and one feature".into()));
        }
        if self.nodes_per_block < self.train_per_class + self.val_per_class {
            return Err(Error::Config(format!(
                "{} nodes per block cannot hold {} train + {} val",
                self.nodes_per_block, self.train_per_class, self.val_per_class
            )));
        }
        Ok(())
    }

    /// Mean of class `k`: `k Δ 𝟙 / √D`, so consecutive means are `Δ` apart.
    pub fn class_mean(&self, k: usize) -> f64 {
        k as f64 * self.delta / (self.dim as f64).sqrt()
    }
}

/// Nodes are block-major: node `i` belongs to block `i / nodes_per_block`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.blocks * cfg.nodes_per_block;
    let block = |i: usize| i / cfg.nodes_per_block;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let prob = if block(i) == block(j) { cfg.p } else { cfg.q };
            if rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let features = Tensor::from_fn(n, cfg.dim, |i, _| cfg.class_mean(block(i)) + noise.sample(&mut rng));
    let ds = Dataset {
        name: "sbm".into(),
        graph: Graph::new(n, edges)?,
        features,
        labels: (0..n).map(|i| Some(block(i))).collect(),
        classes: cfg.blocks,
        train: vec![],
        val: vec![],
        test: vec![],
        pca: None,
    };
    make_split(&ds, cfg.train_per_class, cfg.val_per_class, cfg.seed)
}

/// Stratified random split: per class, `per_train` train and `per_val` val
/// nodes; remaining labeled nodes are test.
pub fn make_split(ds: &Dataset, per_train: usize, per_val: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (vec![], vec![], vec![]);
    for c in 0..ds.classes {
        let mut members: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == Some(c)).collect();
        if members.len() < per_train + per_val {
            return Err(Error::Config(format!(
                "class {c} has {} labeled nodes, split needs {}",
                members.len(),
                per_train + per_val
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..per_train]);
        val.extend_from_slice(&members[per_train..per_train + per_val]);
        test.extend_from_slice(&members[per_train + per_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Dataset {
        train,
        val,
        test,
        ..ds.clone()
    })
}

/// Replaces features by their top-`r` principal coordinates.
pub fn apply_pca_reduction(ds: &Dataset, r: usize) -> Result<Dataset> {
    let proj = pca_fit(&ds.features, r)?;
    let features = pca_apply(&proj, &ds.features)?;
    Ok(Dataset {
        features,
        pca: Some(proj),
        ..ds.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn minimal(dir: &Path, train: &str, test: &str) -> PathBuf {
        write(dir, "x.csv", "0.5\n-1.25\n");
        write(dir, "e.tsv", "0\t1\n");
        write(dir, "y.csv", "0\n1\n");
        write(dir, "train.txt", train);
        write(dir, "val.txt", "");
        write(dir, "test.txt", test);
        let m = r#"{"name":"tiny","n":2,"d":1,"k":2,"features":"x.csv","edges":"e.tsv",
            "labels":"y.csv","train":"train.txt","val":"val.txt","test":"test.txt"}"#;
        write(dir, "manifest.json", m);
        dir.join("manifest.json")
    }

    #[test]
    fn minimal_manifest_loads() {
        let d = tempdir().unwrap();
        let ds = load_dataset(&minimal(d.path(), "0\n", "1\n")).unwrap();
        assert_eq!((ds.n(), ds.dim(), ds.classes), (2, 1, 2));
        assert_eq!(ds.features.data(), &[0.5, -1.25]);
        assert_eq!(ds.graph.edges(), &[(0, 1)]);
    }

    #[test]
    fn overlapping_masks_rejected() {
        let d = tempdir().unwrap();
        let err = load_dataset(&minimal(d.path(), "0\n", "0\n1\n")).unwrap_err();
        assert_eq!(err.code(), "E_FORMAT");
    }

    #[test]
    fn missing_file_is_io_error() {
        let d = tempdir().unwrap();
        let err = load_dataset(&d.path().join("nope.json")).unwrap_err();
        assert_eq!(err.code(), "E_IO");
        let m = minimal(d.path(), "0\n", "1\n");
        fs::remove_file(d.path().join("y.csv")).unwrap();
        assert_eq!(load_dataset(&m).unwrap_err().code(), "E_IO");
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let ds = generate_sbm(&SbmConfig {
            nodes_per_block: 60,
            ..SbmConfig::default()
        })
        .unwrap();
        let d = tempdir().unwrap();
        let path = save_dataset(&ds, d.path()).unwrap();
        let back = load_dataset(&path).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.features), bits(&ds.features));
        assert_eq!(back.graph, ds.graph);
        assert_eq!((back.train, back.val, back.test), (ds.train.clone(), ds.val.clone(), ds.test.clone()));
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn csv_features_round_trip_exactly() {
        let d = tempdir().unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 1e-300, -3.0], vec![f64::MAX, 2.0 / 3.0, 0.0]]).unwrap();
        let p = d.path().join("x.csv");
        write_features_csv(&p, &x).unwrap();
        assert_eq!(read_features_csv(&p).unwrap(), x);
    }

    #[test]
    fn binary_header_checked() {
        let d = tempdir().unwrap();
        let p = d.path().join("x.bin");
        write_features_bin(&p, &Tensor::ones(2, 3)).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"GCFLOW1\0");
        assert_eq!(bytes.len(), 24 + 48);
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert_eq!(read_features_bin(&p).unwrap_err().code(), "E_FORMAT");
    }

    #[test]
    fn clique_union_when_q_zero_p_one() {
        let ds = generate_sbm(&SbmConfig {
            blocks: 3,
            nodes_per_block: 6,
            p: 1.0,
            q: 0.0,
            train_per_class: 2,
            val_per_class: 1,
            ..SbmConfig::default()
        })
        .unwrap();
        assert_eq!(ds.graph.edges().len(), 3 * 15);
        assert!(ds.graph.edges().iter().all(|&(i, j)| i / 6 == j / 6));
    }

    #[test]
    fn sbm_is_deterministic() {
        let cfg = SbmConfig {
            nodes_per_block: 60,
            seed: 9,
            ..SbmConfig::default()
        };
        assert_eq!(generate_sbm(&cfg).unwrap(), generate_sbm(&cfg).unwrap());
        let other = SbmConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_sbm(&cfg).unwrap().features, generate_sbm(&other).unwrap().features);
    }

    #[test]
    fn intra_block_density_within_three_standard_errors() {
        let cfg = SbmConfig {
            blocks: 2,
            nodes_per_block: 200,
            p: 0.1,
            q: 0.01,
            ..SbmConfig::default()
        };
        let ds = generate_sbm(&cfg).unwrap();
        let intra = ds.graph.edges().iter().filter(|&&(i, j)| i / 200 == j / 200).count() as f64;
        let pairs = 2.0 * (200.0 * 199.0 / 2.0);
        let se = (cfg.p * (1.0 - cfg.p) / pairs).sqrt();
        assert!((intra / pairs - cfg.p).abs() < 3.0 * se);
    }

    #[test]
    fn block_fixture_is_nearest_mean_separable_after_smoothing() {
        let ds = generate_sbm(&SbmConfig::default()).unwrap();
        let ax = crate::graph::normalized_matrix(&ds.graph, crate::graph::AdjacencyScheme::RowNormalized)
            .unwrap()
            .matmul(&ds.features)
            .unwrap();
        let labels = ds.train_labels();
        let mut means = vec![vec![0.0; ds.dim()]; ds.classes];
        for (&i, &c) in ds.train.iter().zip(&labels) {
            for (m, v) in means[c].iter_mut().zip(ax.row(i)) {
                *m += v / 20.0;
            }
        }
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let correct = ds
            .test
            .iter()
            .filter(|&&i| {
                let best = (0..ds.classes)
                    .min_by(|&a, &b| sq(ax.row(i), &means[a]).total_cmp(&sq(ax.row(i), &means[b])))
                    .unwrap();
                Some(best) == ds.labels[i]
            })
            .count();
        assert!(correct as f64 / ds.test.len() as f64 > 0.9);
    }

    #[test]
    fn sbm_config_errors() {
        let bad = SbmConfig { q: 0.2, p: 0.1, ..SbmConfig::default() };
        assert_eq!(generate_sbm(&bad).unwrap_err().code(), "E_CONFIG");
        let small = SbmConfig { nodes_per_block: 40, ..SbmConfig::default() };
        assert_eq!(generate_sbm(&small).unwrap_err().code(), "E_CONFIG");
    }

    #[test]
    fn default_split_sizes() {
        let ds = generate_sbm(&SbmConfig::default()).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (60, 90, 150));
        ds.validate().unwrap();
    }

    #[test]
    fn two_labels_per_class_regime() {
        let ds = generate_sbm(&SbmConfig::default()).unwrap();
        let s = make_split(&ds, 2, 30, 4).unwrap();
        assert_eq!(s.train.len(), 2 * 3);
        for c in 0..3 {
            assert_eq!(s.train.iter().filter(|&&i| s.labels[i] == Some(c)).count(), 2);
        }
        s.validate().unwrap();
        assert_eq!(make_split(&ds, 2, 30, 4).unwrap(), s);
        assert_eq!(make_split(&ds, 80, 30, 4).unwrap_err().code(), "E_CONFIG");
    }

    #[test]
    fn pca_reduction_full_rank_preserves_distances() {
        let ds = generate_sbm(&SbmConfig { nodes_per_block: 60, ..SbmConfig::default() }).unwrap();
        let r = apply_pca_reduction(&ds, ds.dim()).unwrap();
        let d = |t: &Tensor, i: usize, j: usize| -> f64 {
            t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        for (i, j) in [(0, 1), (5, 170), (33, 99)] {
            assert!((d(&ds.features, i, j) - d(&r.features, i, j)).abs() < 1e-8);
        }
        assert!(r.pca.is_some());
    }

    #[test]
    fn pca_reduction_is_idempotent() {
        let ds = generate_sbm(&SbmConfig { nodes_per_block: 60, dim: 12, ..SbmConfig::default() }).unwrap();
        let once = apply_pca_reduction(&ds, 5).unwrap();
        let twice = apply_pca_reduction(&once, 5).unwrap();
        let err = once.features.zip_map(&twice.features, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn benchmark_shaped_reduction() {
        // 2,708 nodes with 1,433 sparse binary features reduced to 50.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn(2708, 1433, |_, _| if rng.random::<f64>() < 0.0127 { 1.0 } else { 0.0 });
        let ds = Dataset {
            name: "cora-shaped".into(),
            graph: Graph::empty(2708),
            features: x,
            labels: vec![None; 2708],
            classes: 7,
            train: vec![],
            val: vec![],
            test: vec![],
            pca: None,
        };
        let r = apply_pca_reduction(&ds, 50).unwrap();
        assert_eq!(r.features.shape(), [2708, 50]);
    }

    #[derive(Debug, Clone, Copy)]
    enum Mutation {
        Overlap,
        OutOfRange,
        UnlabeledTrain,
        FeatureRows,
        LabelRange,
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn loader_rejects_mutated_manifests(which in 0usize..5, seed in 0u64..100) {
            let mutation = [
                Mutation::Overlap,
                Mutation::OutOfRange,
                Mutation::UnlabeledTrain,
                Mutation::FeatureRows,
                Mutation::LabelRange,
            ][which];
            let ds = generate_sbm(&SbmConfig {
                nodes_per_block: 10,
                train_per_class: 2,
                val_per_class: 2,
                seed,
                ..SbmConfig::default()
            })
            .unwrap();
            let d = tempdir().unwrap();
            let path = save_dataset(&ds, d.path()).unwrap();
            let lines = |v: &[String]| v.iter().map(|s| format!("{s}\n")).collect::<String>();
            let to_s = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>();
            match mutation {
                Mutation::Overlap => {
                    let mut t = to_s(&ds.test);
                    t.push(ds.train[0].to_string());
                    fs::write(d.path().join("test.txt"), lines(&t)).unwrap();
                }
                Mutation::OutOfRange => {
                    let mut v = to_s(&ds.val);
                    v.push("30".into());
                    fs::write(d.path().join("val.txt"), lines(&v)).unwrap();
                }
                Mutation::UnlabeledTrain => {
                    let mut y: Vec<String> = ds.labels.iter().map(|l| l.unwrap().to_string()).collect();
                    y[ds.train[0]] = "-1".into();
                    fs::write(d.path().join("labels.csv"), lines(&y)).unwrap();
                }
                Mutation::FeatureRows => {
                    let x = ds.features.select_rows(&(0..29).collect::<Vec<_>>()).unwrap();
                    write_features_bin(&d.path().join("features.bin"), &x).unwrap();
                }
                Mutation::LabelRange => {
                    let mut y: Vec<String> = ds.labels.iter().map(|l| l.unwrap().to_string()).collect();
                    y[0] = "3".into();
                    fs::write(d.path().join("labels.csv"), lines(&y)).unwrap();
                }
            }
            prop_assert_eq!(load_dataset(&path).unwrap_err().code(), "E_FORMAT");
        }
    }
}
