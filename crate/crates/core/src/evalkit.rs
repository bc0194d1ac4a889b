//! Classification and clustering metrics, k-means and PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 1000;

/// Micro-averaged F1 over `eval`. With one label per node this equals accuracy.
pub fn micro_f1(pred: &[usize], truth: &[usize], eval: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if eval.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for &i in eval {
        if i >= pred.len() {
            return Err(Error::Index(format!("node {i} out of range")));
        }
        correct += usize::from(pred[i] == truth[i]);
    }
    Ok(correct as f64 / eval.len() as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn relabel(assign: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let ids = assign
        .iter()
        .map(|a| {
            let next = map.len();
            *map.entry(*a).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

/// Mean silhouette coefficient with Euclidean distance. Singleton clusters
/// contribute 0. Needs at least two non-empty clusters.
pub fn silhouette(points: &Tensor, assign: &[usize]) -> Result<f64> {
    let n = points.rows();
    if assign.len() != n {
        return Err(Error::Shape(format!("{} assignments for {n} points", assign.len())));
    }
    let (ids, k) = relabel(assign);
    if k < 2 {
        return Err(Error::Config("silhouette needs at least two clusters".into()));
    }
    let mut sizes = vec![0usize; k];
    for &c in &ids {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = points.row(i);
        for j in 0..n {
            if j != i {
                sums[ids[j]] += dist(pi, points.row(j));
            }
        }
        let own = ids[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("partitions of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Config("partitions are empty".into()));
    }
    let (ia, ka) = relabel(a);
    let (ib, kb) = relabel(b);
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in ia.iter().zip(&ib) {
        table[x][y] += 1.0;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok((table, rows, cols))
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum()
}

/// `I(A;T) / sqrt(H(A) H(T))`, zero when either entropy vanishes.
pub fn nmi(assign: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, rows, cols) = contingency(assign, truth)?;
    let n = assign.len() as f64;
    let (ha, ht) = (entropy(&rows, n), entropy(&cols, n));
    if ha <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mi += c / n * (c * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    Ok((mi / (ha * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari(assign: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, rows, cols) = contingency(assign, truth)?;
    let n = assign.len() as f64;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: f64 = rows.iter().map(|&c| pairs(c)).sum();
    let sb: f64 = cols.iter().map(|&c| pairs(c)).sum();
    let expected = sa * sb / pairs(n).max(1.0);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `K x D`
    pub centroids: Tensor,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn nearest(p: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(p, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every point coincides with a center: take any unchosen index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen).expect("indices in range")
}

/// Lloyd's algorithm from k-means++ seeds; stops at an assignment fixpoint.
pub fn kmeans(points: &Tensor, k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    let [n, d] = points.shape();
    if k == 0 || n < k {
        return Err(Error::Config(format!("k-means with k = {k} on {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(points.row(i), &centroids);
            changed |= labels[i] != c;
            labels[i] = c;
            dists[i] = dd;
        }
        history.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let m = counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / m;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its current centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(labels[a]));
                        let db = sq_dist(points.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n >= k > 0");
                counts[labels[far]] -= 1;
                counts[c] = 1;
                labels[far] = c;
                centroids.row_mut(c).copy_from_slice(points.row(far));
            }
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia_history: history,
    })
}

/// Mean-centered projection onto the top principal directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `D x r`, orthonormal columns.
    pub components: Tensor,
    /// Variance along each direction, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaProjection {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.cols()
    }

    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self, y: &Tensor) -> Result<Tensor> {
        let mut x = y.matmul_t(&self.components)?;
        for i in 0..x.rows() {
            for (v, m) in x.row_mut(i).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(x)
    }
}

fn centered(x: &Tensor, mean: &[f64]) -> Tensor {
    Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - mean[j])
}

/// Each direction's largest-magnitude entry is made positive.
pub fn pca_fit(x: &Tensor, r: usize) -> Result<PcaProjection> {
    let [n, d] = x.shape();
    if r == 0 || r > n.min(d) {
        return Err(Error::Shape(format!("cannot keep {r} components of a {n}x{d} matrix")));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let xc = centered(x, &mean);
    let denom = (n.max(2) - 1) as f64;
    let cov = xc.t_matmul(&xc)?.map(|v| v / denom);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.data()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Tensor::zeros(d, r);
    let mut explained_variance = Vec::with_capacity(r);
    for (c, &idx) in order.iter().take(r).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for j in 1..d {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(j, c, sign * col[j]);
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaProjection {
        mean,
        components,
        explained_variance,
    })
}

pub fn pca_apply(proj: &PcaProjection, x: &Tensor) -> Result<Tensor> {
    if x.cols() != proj.input_dim() {
        return Err(Error::Shape(format!(
            "projection expects {} columns, got {}",
            proj.input_dim(),
            x.cols()
        )));
    }
    centered(x, &proj.mean).matmul(&proj.components)
}
