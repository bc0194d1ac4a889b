//! Undirected graphs, adjacency normalizations and their log-determinants.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Csr, Tensor};
use crate::error::{Error, Result};
use crate::linalg;

/// Undirected simple graph on nodes `0..n`.
///
/// Edges are stored once as `(i, j)` with `i < j`; self-loops are dropped on
/// construction because normalization adds them back explicitly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Format(format!(
                    "edge ({i}, {j}) has an endpoint outside 0..{n}"
                )));
            }
            if i != j {
                set.insert((i.min(j), i.max(j)));
            }
        }
        Ok(Graph {
            n,
            edges: set.into_iter().collect(),
        })
    }

    pub fn empty(n: usize) -> Graph {
        Graph { n, edges: vec![] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Both orientations of every edge, optionally with self-loops, sorted by
    /// source then target.
    pub fn directed_pairs(&self, self_loops: bool) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        if self_loops {
            pairs.extend((0..self.n).map(|i| (i, i)));
        }
        pairs.sort_unstable();
        pairs
    }

    /// Dense `A + I`.
    fn augmented_dense(&self) -> Tensor {
        let mut a = Tensor::identity(self.n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }

    /// Parses `i<TAB>j` lines (any whitespace accepted); `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    Error::Format(format!("edge list line {}: {raw:?}", lineno + 1))
                })
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Format(format!(
                    "edge list line {}: trailing fields",
                    lineno + 1
                )));
            }
            out.push((i, j));
        }
        Ok(out)
    }

    pub fn read_edge_list(path: &Path, n: usize) -> Result<Graph> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::new(n, Graph::parse_edge_list(&text)?)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut text = String::from("# undirected edges, 0-indexed\n");
        for (i, j) in &self.edges {
            text.push_str(&format!("{i}\t{j}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyScheme {
    /// `(D + I)⁻¹ (A + I)`
    RowNormalized,
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`
    Symmetric,
    Identity,
    External,
}

impl fmt::Display for AdjacencyScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjacencyScheme::RowNormalized => "row-normalized",
            AdjacencyScheme::Symmetric => "symmetric",
            AdjacencyScheme::Identity => "identity",
            AdjacencyScheme::External => "external",
        })
    }
}

impl std::str::FromStr for AdjacencyScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-normalized" | "row" => Ok(AdjacencyScheme::RowNormalized),
            "symmetric" | "sym" => Ok(AdjacencyScheme::Symmetric),
            "identity" => Ok(AdjacencyScheme::Identity),
            "external" => Ok(AdjacencyScheme::External),
            other => Err(Error::Config(format!("unknown adjacency scheme {other:?}"))),
        }
    }
}

/// Nonsingular `n x n` convolution operator with its cached `log|det|`.
///
/// Dense and sparse views always agree entrywise.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    matrix: Tensor,
    sparse: Arc<Csr>,
    log_abs_det: f64,
    scheme: AdjacencyScheme,
    damping: Option<f64>,
}

impl NormalizedAdjacency {
    fn build(matrix: Tensor, scheme: AdjacencyScheme, damping: Option<f64>) -> Result<Self> {
        let log_abs_det = linalg::log_abs_det(&matrix)?;
        Ok(NormalizedAdjacency {
            sparse: Arc::new(Csr::from_dense(&matrix)),
            matrix,
            log_abs_det,
            scheme,
            damping,
        })
    }

    pub fn identity(n: usize) -> Self {
        let matrix = Tensor::identity(n);
        NormalizedAdjacency {
            sparse: Arc::new(Csr::from_dense(&matrix)),
            matrix,
            log_abs_det: 0.0,
            scheme: AdjacencyScheme::Identity,
            damping: None,
        }
    }

    /// Wraps a user-supplied square matrix.
    pub fn external(matrix: Tensor) -> Result<Self> {
        Self::build(matrix, AdjacencyScheme::External, None)
    }

    pub fn normalize_row(g: &Graph) -> Result<Self> {
        Self::build(normalized_matrix(g, AdjacencyScheme::RowNormalized)?, AdjacencyScheme::RowNormalized, None)
    }

    pub fn normalize_sym(g: &Graph) -> Result<Self> {
        Self::build(normalized_matrix(g, AdjacencyScheme::Symmetric)?, AdjacencyScheme::Symmetric, None)
    }

    pub fn from_scheme(g: &Graph, scheme: AdjacencyScheme) -> Result<Self> {
        match scheme {
            AdjacencyScheme::Identity => Ok(Self::identity(g.n())),
            _ => Self::build(normalized_matrix(g, scheme)?, scheme, None),
        }
    }

    /// Builds the scheme's matrix, applying `epsilon` damping only when the
    /// undamped matrix is singular.
    pub fn from_scheme_damped_if_singular(
        g: &Graph,
        scheme: AdjacencyScheme,
        epsilon: f64,
    ) -> Result<Self> {
        match Self::from_scheme(g, scheme) {
            Err(Error::Singular { .. }) => damp_matrix(normalized_matrix(g, scheme)?, scheme, epsilon),
            other => other,
        }
    }

    /// `Â + εI` with the determinant recomputed.
    pub fn damp(&self, epsilon: f64) -> Result<Self> {
        damp_matrix(self.matrix.clone(), self.scheme, epsilon)
            .map(|a| NormalizedAdjacency {
                damping: Some(self.damping.unwrap_or(0.0) + epsilon),
                ..a
            })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn sparse(&self) -> &Arc<Csr> {
        &self.sparse
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    pub fn scheme(&self) -> AdjacencyScheme {
        self.scheme
    }

    /// Total diagonal damping applied, if any.
    pub fn damping(&self) -> Option<f64> {
        self.damping
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_identity(&self) -> bool {
        self.scheme == AdjacencyScheme::Identity
    }
}

/// The scheme's dense matrix with no determinant requirement.
pub fn normalized_matrix(g: &Graph, scheme: AdjacencyScheme) -> Result<Tensor> {
    if g.n() == 0 {
        return Err(Error::Config("graph has no nodes".into()));
    }
    let a = g.augmented_dense();
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
    match scheme {
        AdjacencyScheme::RowNormalized => {
            Ok(Tensor::from_fn(g.n(), g.n(), |i, j| a.get(i, j) / deg[i]))
        }
        AdjacencyScheme::Symmetric => Ok(Tensor::from_fn(g.n(), g.n(), |i, j| {
            a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt())
        })),
        AdjacencyScheme::Identity => Ok(Tensor::identity(g.n())),
        AdjacencyScheme::External => Err(Error::Config(
            "external adjacency must be supplied as a matrix".into(),
        )),
    }
}

fn damp_matrix(mut m: Tensor, scheme: AdjacencyScheme, epsilon: f64) -> Result<NormalizedAdjacency> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("damping must be positive, got {epsilon}")));
    }
    for i in 0..m.rows() {
        let v = m.get(i, i);
        m.set(i, i, v + epsilon);
    }
    NormalizedAdjacency::build(m, scheme, Some(epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cofactor3(m: &Tensor) -> f64 {
        let g = |i, j| m.get(i, j);
        g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1)) - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
    }

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn construction_drops_loops_and_duplicates() {
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(Graph::new(2, [(0, 2)]).unwrap_err().code(), "E_FORMAT");
    }

    #[test]
    fn edgeless_graph_normalizes_to_identity() {
        let g = Graph::empty(4);
        for adj in [
            NormalizedAdjacency::normalize_row(&g).unwrap(),
            NormalizedAdjacency::normalize_sym(&g).unwrap(),
        ] {
            assert_eq!(*adj.matrix(), Tensor::identity(4));
            assert_eq!(adj.log_abs_det(), 0.0);
        }
    }

    #[test]
    fn path_graph_row_normalized() {
        let adj = NormalizedAdjacency::normalize_row(&path3()).unwrap();
        let m = adj.matrix();
        let want = [[0.5, 0.5, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.0, 0.5, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.get(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
        // cofactor oracle: det = -1/12
        assert!((cofactor3(m).abs() - 1.0 / 12.0).abs() < 1e-15);
        assert!((adj.log_abs_det() - (1.0f64 / 12.0).ln()).abs() < 1e-12);
        assert!((adj.log_abs_det() + 2.4849).abs() < 1e-4);
    }

    #[test]
    fn path_graph_symmetric() {
        let adj = NormalizedAdjacency::normalize_sym(&path3()).unwrap();
        let m = adj.matrix();
        let diag = [0.5, 1.0 / 3.0, 0.5];
        for i in 0..3 {
            assert!((m.get(i, i) - diag[i]).abs() < 1e-15);
            for j in 0..3 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
        assert!((adj.log_abs_det() - cofactor3(m).abs().ln()).abs() < 1e-12);
    }

    #[test]
    fn triangle_is_singular_until_damped() {
        let k3 = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let err = NormalizedAdjacency::normalize_row(&k3).unwrap_err();
        assert_eq!(err.code(), "E_SINGULAR");
        assert!(err.to_string().contains("damping"));
        let damped =
            NormalizedAdjacency::from_scheme_damped_if_singular(&k3, AdjacencyScheme::RowNormalized, 1e-3)
                .unwrap();
        assert_eq!(damped.damping(), Some(1e-3));
        // eigenvalues 1 + 1e-3 and 1e-3 (twice)
        let want = (1.0f64 + 1e-3).ln() + 2.0 * 1e-3f64.ln();
        assert!((damped.log_abs_det() - want).abs() < 1e-9);
        assert!(damped.log_abs_det().is_finite());
    }

    #[test]
    fn damping_identity() {
        let adj = NormalizedAdjacency::identity(5).damp(1e-3).unwrap();
        assert!((adj.log_abs_det() - 5.0 * 1.001f64.ln()).abs() < 1e-14);
        assert!((adj.matrix().get(2, 2) - 1.001).abs() < 1e-15);
        assert_eq!(
            NormalizedAdjacency::identity(2).damp(0.0).unwrap_err().code(),
            "E_CONFIG"
        );
    }

    #[test]
    fn sparse_and_dense_views_agree() {
        let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
        let adj =
            NormalizedAdjacency::from_scheme_damped_if_singular(&g, AdjacencyScheme::Symmetric, 1e-3)
                .unwrap();
        assert_eq!(adj.sparse().to_dense(), *adj.matrix());
    }

    #[test]
    fn edge_list_parsing() {
        let edges = Graph::parse_edge_list("# header\n0\t1\n1 2 # trailing\n\n").unwrap();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        assert_eq!(Graph::parse_edge_list("0\tx\n").unwrap_err().code(), "E_FORMAT");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn graphs() -> impl Strategy<Value = Graph> {
            (1usize..12).prop_flat_map(|n| {
                proptest::collection::vec((0..n, 0..n), 0..30)
                    .prop_map(move |e| Graph::new(n, e).unwrap())
            })
        }

        proptest! {
            #[test]
            fn row_normalized_rows_sum_to_one(g in graphs()) {
                let adj = NormalizedAdjacency::from_scheme_damped_if_singular(
                    &g, AdjacencyScheme::RowNormalized, 1e-3).unwrap();
                let eps = adj.damping().unwrap_or(0.0);
                for i in 0..g.n() {
                    let s: f64 = adj.matrix().row(i).iter().sum();
                    prop_assert!((s - 1.0 - eps).abs() < 1e-12);
                }
            }
        }
    }
}
