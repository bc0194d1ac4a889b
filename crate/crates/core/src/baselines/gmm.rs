use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Relative change in log-likelihood that counts as converged.
    pub tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            tol: 1e-6,
            reg: 1e-6,
        }
    }
}

/// Full-covariance Gaussian mixture fitted by EM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmGmm {
    pub weights: Vec<f64>,
    /// `K x D`
    pub means: Tensor,
    pub covariances: Vec<Tensor>,
    /// Log-likelihood of the data under the parameters entering each iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

fn factor(cov: &Tensor, k: usize) -> Result<Factor> {
    let d = cov.rows();
    let chol = Cholesky::new(DMatrix::from_row_slice(d, d, cov.data()))
        .ok_or_else(|| Error::Degenerate(format!("covariance of component {k} is not positive definite")))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Factor { chol, log_det })
}

fn gaussian_logpdf(x: &[f64], mean: &[f64], f: &Factor) -> f64 {
    let diff = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
    let y = f.chol.l().solve_lower_triangular(&diff).expect("factor is nonsingular");
    -0.5 * (y.norm_squared() + f.log_det + x.len() as f64 * (2.0 * PI).ln())
}

impl EmGmm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// `n x K` matrix of `log φ_k + log N(x_i; μ_k, Σ_k)`.
    fn weighted_logpdfs(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.means.cols() {
            return Err(Error::Shape(format!(
                "mixture of dimension {} given {} columns",
                self.means.cols(),
                x.cols()
            )));
        }
        let factors = self
            .covariances
            .iter()
            .enumerate()
            .map(|(k, c)| factor(c, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_fn(x.rows(), self.components(), |i, k| {
            self.weights[k].ln() + gaussian_logpdf(x.row(i), self.means.row(k), &factors[k])
        }))
    }

    /// Responsibilities and total log-likelihood.
    pub fn e_step(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let w = self.weighted_logpdfs(x)?;
        let mut resp = Tensor::zeros(w.rows(), w.cols());
        let mut ll = 0.0;
        for i in 0..w.rows() {
            let lse = logsumexp(w.row(i));
            ll += lse;
            for (r, v) in resp.row_mut(i).iter_mut().zip(w.row(i)) {
                *r = (v - lse).exp();
            }
        }
        Ok((resp, ll))
    }

    /// Most responsible component of each row.
    pub fn predict_components(&self, x: &Tensor) -> Result<Vec<usize>> {
        let w = self.weighted_logpdfs(x)?;
        Ok((0..w.rows()).map(|i| crate::density::argmax(w.row(i))).collect())
    }
}

/// Uniform weights, the given means and the pooled data covariance.
fn initial(x: &Tensor, init_means: &Tensor, reg: f64) -> EmGmm {
    let [n, d] = x.shape();
    let k = init_means.rows();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let xc = Tensor::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = xc
        .t_matmul(&xc)
        .expect("shapes agree")
        .zip_map(&Tensor::identity(d), |c, e| c / n as f64 + reg * e)
        .expect("shapes agree");
    EmGmm {
        weights: vec![1.0 / k as f64; k],
        means: init_means.clone(),
        covariances: vec![cov; k],
        log_likelihood: vec![],
        converged: false,
    }
}

fn m_step(x: &Tensor, resp: &Tensor, reg: f64) -> Result<(Vec<f64>, Tensor, Vec<Tensor>)> {
    let [n, d] = x.shape();
    let k = resp.cols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Tensor::zeros(k, d);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp.get(i, c)).sum();
        if nk < 1e-10 {
            return Err(Error::Degenerate(format!("component {c} lost all responsibility")));
        }
        weights.push(nk / n as f64);
        for i in 0..n {
            let r = resp.get(i, c);
            for j in 0..d {
                means.row_mut(c)[j] += r * x.get(i, j) / nk;
            }
        }
        let mut cov = Tensor::zeros(d, d);
        for i in 0..n {
            let r = resp.get(i, c);
            let diff: Vec<f64> = (0..d).map(|j| x.get(i, j) - means.get(c, j)).collect();
            for a in 0..d {
                for b in 0..d {
                    cov.row_mut(a)[b] += r * diff[a] * diff[b] / nk;
                }
            }
        }
        for a in 0..d {
            cov.row_mut(a)[a] += reg;
        }
        covs.push(cov);
    }
    Ok((weights, means, covs))
}

/// Runs EM from `init_means` (`K x D`).
pub fn em_fit(x: &Tensor, init_means: &Tensor, cfg: &EmConfig) -> Result<EmGmm> {
    let [n, d] = x.shape();
    let k = init_means.rows();
    if k == 0 || n < k {
        return Err(Error::Config(format!("EM with {k} components on {n} points")));
    }
    if init_means.cols() != d {
        return Err(Error::Shape(format!("initial means have {} columns, data {d}", init_means.cols())));
    }
    let mut gmm = initial(x, init_means, cfg.reg);
    for _ in 0..cfg.max_iters {
        let (resp, ll) = gmm.e_step(x)?;
        if !ll.is_finite() {
            return Err(Error::Degenerate(format!("log-likelihood became {ll}")));
        }
        let prev = gmm.log_likelihood.last().copied();
        gmm.log_likelihood.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.tol * p.abs().max(1.0) {
                gmm.converged = true;
                break;
            }
        }
        let (w, m, c) = m_step(x, &resp, cfg.reg)?;
        gmm.weights = w;
        gmm.means = m;
        gmm.covariances = c;
    }
    Ok(gmm)
}

/// Component index -> class by majority vote of the labeled nodes it claims.
/// Components claiming no labeled node map to the most frequent labeled class.
pub fn component_classes(components: &[usize], k: usize, labeled: &[usize], labels: &[usize], classes: usize) -> Vec<usize> {
    let mut votes = vec![vec![0usize; classes]; k];
    let mut global = vec![0usize; classes];
    for (&i, &y) in labeled.iter().zip(labels) {
        votes[components[i]][y] += 1;
        global[y] += 1;
    }
    let top = |counts: &[usize]| {
        let mut best = 0;
        for (c, &v) in counts.iter().enumerate() {
            if v > counts[best] {
                best = c;
            }
        }
        best
    };
    let fallback = top(&global);
    votes
        .iter()
        .map(|v| if v.iter().all(|&c| c == 0) { fallback } else { top(v) })
        .collect()
}

/// Class predictions through the majority-vote component mapping.
pub fn gmm_classify(
    gmm: &EmGmm,
    x: &Tensor,
    labeled: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<usize>> {
    let comps = gmm.predict_components(x)?;
    if let Some(&c) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::Index(format!("class {c} out of range for {classes} classes")));
    }
    let map = component_classes(&comps, gmm.components(), labeled, labels, classes);
    Ok(comps.iter().map(|&c| map[c]).collect())
}

/// Per-class means of the labeled rows; classes without labels get the
/// overall mean of the labeled rows.
pub fn labeled_class_means(x: &Tensor, labeled: &[usize], labels: &[usize], classes: usize) -> Result<Tensor> {
    let d = x.cols();
    let mut sums = Tensor::zeros(classes, d);
    let mut counts = vec![0usize; classes];
    for (&i, &y) in labeled.iter().zip(labels) {
        if y >= classes || i >= x.rows() {
            return Err(Error::Index(format!("labeled node {i} with class {y}")));
        }
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("labeled set is empty".into()));
    }
    let overall: Vec<f64> = (0..d)
        .map(|j| (0..classes).map(|c| sums.get(c, j)).sum::<f64>() / total as f64)
        .collect();
    Ok(Tensor::from_fn(classes, d, |c, j| {
        if counts[c] > 0 {
            sums.get(c, j) / counts[c] as f64
        } else {
            overall[j]
        }
    }))
}
