use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam with decoupled weight decay on parameters flagged for decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `p ← p − lr·wd·p`, then the bias-corrected Adam update.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        for ((e, g), m) in store.entries().iter().zip(grads).zip(&self.m) {
            if e.value.shape() != g.shape() || g.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((e, g), m), v) in store.entries_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decay = if e.decay { lr * self.weight_decay } else { 0.0 };
            let p = e.value.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = b1 * *mj + (1.0 - b1) * gj;
                let vj = &mut v.data_mut()[j];
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let m_hat = m.data()[j] / c1;
                let v_hat = v.data()[j] / c2;
                p[j] -= decay * p[j];
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients by `threshold / norm` when the global L2 norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > threshold {
        let f = threshold / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}
