//! LU factorization with partial pivoting: log-determinants, solves and inverses.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the largest input entry mark the
/// matrix as numerically singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Packed `P·A = L·U` factors of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    /// Unit-lower `L` below the diagonal, `U` on and above it.
    lu: Vec<f64>,
    /// `perm[i]` is the original row now stored at row `i`.
    perm: Vec<usize>,
    swaps: usize,
}

impl Lu {
    pub fn factor(a: &Tensor) -> Result<Lu> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!(
                "LU of a non-square {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        let scale = a.max_abs();
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if scale == 0.0 || pmax < SINGULAR_RTOL * scale {
                return Err(Error::singular(format!(
                    "pivot {pmax:.3e} at column {k} below {SINGULAR_RTOL:e} x max entry {scale:.3e}"
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f == 0.0 {
                    continue;
                }
                for j in (k + 1)..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Lu { n, lu, perm, swaps })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|i| self.lu[i * self.n + i].abs().ln()).sum()
    }

    /// Sign of the determinant (`±1`).
    pub fn sign(&self) -> f64 {
        let neg = (0..self.n).filter(|&i| self.lu[i * self.n + i] < 0.0).count();
        if (neg + self.swaps) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Solves `A·X = B` for every column of `B`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let n = self.n;
        if b.rows() != n {
            return Err(Error::Shape(format!(
                "solve with {n}x{n} system and {} right-hand rows",
                b.rows()
            )));
        }
        let m = b.cols();
        let mut x = b.select_rows(&self.perm)?;
        let xd = x.data_mut();
        // forward substitution with unit L
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l == 0.0 {
                    continue;
                }
                for j in 0..m {
                    xd[i * m + j] -= l * xd[k * m + j];
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[i * n + k];
                if u == 0.0 {
                    continue;
                }
                for j in 0..m {
                    xd[i * m + j] -= u * xd[k * m + j];
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..m {
                xd[i * m + j] /= d;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Tensor {
        self.solve(&Tensor::identity(self.n))
            .expect("identity has matching row count")
    }
}

/// `log|det A|` via LU with partial pivoting.
pub fn log_abs_det(a: &Tensor) -> Result<f64> {
    Ok(Lu::factor(a)?.log_abs_det())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Leibniz expansion over all permutations.
    fn leibniz_det(a: &Tensor) -> f64 {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = a.rows();
        permutations(n)
            .into_iter()
            .map(|p| {
                let inversions = (0..n)
                    .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| p[i] > p[j])
                    .count();
                let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
                sign * (0..n).map(|i| a.get(i, p[i])).product::<f64>()
            })
            .sum()
    }

    fn pseudo_random(n: usize, seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(n, n, |i, j| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (s >> 11) as f64 / (1u64 << 53) as f64;
            u - 0.5 + if i == j { 2.0 } else { 0.0 }
        })
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(log_abs_det(&Tensor::identity(4)).unwrap(), 0.0);
        let d = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert!((log_abs_det(&d).unwrap() - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_leibniz_on_5x5() {
        for seed in 0..5 {
            let a = pseudo_random(5, seed);
            let lu = Lu::factor(&a).unwrap();
            let det = leibniz_det(&a);
            assert!((lu.log_abs_det() - det.abs().ln()).abs() < 1e-10);
            assert_eq!(lu.sign(), det.signum());
        }
    }

    #[test]
    fn rank_one_is_singular() {
        let a = Tensor::full(3, 3, 1.0 / 3.0);
        let err = log_abs_det(&a).unwrap_err();
        assert_eq!(err.code(), "E_SINGULAR");
    }

    #[test]
    fn non_square_rejected() {
        assert_eq!(
            log_abs_det(&Tensor::zeros(2, 3)).unwrap_err().code(),
            "E_SHAPE"
        );
    }

    #[test]
    fn solve_and_inverse() {
        let a = pseudo_random(6, 11);
        let lu = Lu::factor(&a).unwrap();
        let inv = lu.inverse();
        let eye = a.matmul(&inv).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_and_permutation_rules() {
        let a = pseudo_random(4, 3);
        let b = pseudo_random(4, 4);
        let ab = a.matmul(&b).unwrap();
        let lhs = log_abs_det(&ab).unwrap();
        let rhs = log_abs_det(&a).unwrap() + log_abs_det(&b).unwrap();
        assert!((lhs - rhs).abs() < 1e-8);
        let pa = a.select_rows(&[2, 0, 3, 1]).unwrap();
        assert!((log_abs_det(&pa).unwrap() - log_abs_det(&a).unwrap()).abs() < 1e-12);
    }
}
