//! Bias-corrected Adam over the real and imaginary parts of every trainable parameter.

use ndarray::{ArrayD, Zip};

use crate::ctensor::{ComplexTensor, ParamId, ParamKind, ParamStore};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(ComplexTensor, ComplexTensor)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone.
    /// A non-finite gradient aborts the step before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, ComplexTensor)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.get(*id);
            if p.value.shape() != g.shape() {
                return Err(shape_err!("gradient for {} has shape {:?}, parameter {:?}", p.name, g.shape(), p.value.shape()));
            }
            if !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter {}", p.name)));
            }
        }
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |w: &mut ArrayD<f64>, m: &mut ArrayD<f64>, v: &mut ArrayD<f64>, g: &ArrayD<f64>| {
            Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        };
        for (id, g) in grads {
            let kind = store.get(*id).kind;
            if kind == ParamKind::Buffer {
                continue;
            }
            let slot = &mut self.moments[id.index()];
            let (m, v) = slot.get_or_insert_with(|| (ComplexTensor::zeros(g.shape()), ComplexTensor::zeros(g.shape())));
            let w = store.value_mut(*id);
            update(w.re_mut(), m.re_mut(), v.re_mut(), g.re());
            if kind == ParamKind::Complex {
                update(w.im_mut(), m.im_mut(), v.im_mut(), g.im());
            }
        }
        Ok(())
    }
}
