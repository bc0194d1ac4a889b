use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix used as a constant left operand in `A·X` products.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Keeps every exactly-nonzero entry of a dense matrix.
    pub fn from_dense(a: &Tensor) -> Csr {
        let mut indptr = Vec::with_capacity(a.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..a.rows() {
            for (j, &v) in a.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n_rows: a.rows(),
            n_cols: a.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.n_rows
    }

    pub fn cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                t.set(i, self.indices[p], self.values[p]);
            }
        }
        t
    }

    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.n_cols {
            return Err(Error::Shape(format!(
                "sparse {}x{} times {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let m = x.cols();
        let mut out = Tensor::zeros(self.n_rows, m);
        for i in 0..self.n_rows {
            let out_row = out.row_mut(i);
            for p in self.indptr[i]..self.indptr[i + 1] {
                let a = self.values[p];
                for (o, &v) in out_row.iter_mut().zip(x.row(self.indices[p])) {
                    *o += a * v;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub fn t_matmul(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.n_rows {
            return Err(Error::Shape(format!(
                "sparse transpose {}x{} times {}x{}",
                self.n_cols,
                self.n_rows,
                g.rows(),
                g.cols()
            )));
        }
        let m = g.cols();
        let mut out = Tensor::zeros(self.n_cols, m);
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let a = self.values[p];
                let j = self.indices[p];
                for (o, &v) in out.row_mut(j).iter_mut().zip(g.row(i)) {
                    *o += a * v;
                }
            }
        }
        Ok(out)
    }
}
