//! Optimizers over a [`ParamStore`]: Adam for pre-training, SGD with
//! momentum for fine-tuning. Both keep per-parameter state vectors aligned
//! with store order; Adam's state can be exported to and restored from
//! checkpoints so a resumed run continues bit-identically.

use super::param::{GradAccum, ParamStore};
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Adam with bias correction; moment coefficients (0.9, 0.999), eps 1e-8.
pub struct Adam<T> {
    pub learning_rate: T,
    beta1: T,
    beta2: T,
    eps: T,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: T) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.data.len()])
            .collect();
        Adam {
            learning_rate,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradAccum<T>) -> Result<()> {
        grads.checked_finite(store)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.data_mut(id);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment tensors under checkpoint names `opt.adam.{m,v}.<param>`.
    pub fn state_tensors(&self, store: &ParamStore<T>) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (id, p) in store.iter() {
            out.push((
                format!("opt.adam.m.{}", p.name),
                p.shape.clone(),
                self.m[id.0].clone(),
            ));
            out.push((
                format!("opt.adam.v.{}", p.name),
                p.shape.clone(),
                self.v[id.0].clone(),
            ));
        }
        out
    }

    /// Restores state exported by [`Adam::state_tensors`].
    pub fn restore(
        &mut self,
        store: &ParamStore<T>,
        step_count: u64,
        mut lookup: impl FnMut(&str) -> Option<Vec<T>>,
    ) -> Result<()> {
        self.step_count = step_count;
        for (id, p) in store.iter() {
            for (prefix, buf) in [("m", &mut self.m[id.0]), ("v", &mut self.v[id.0])] {
                let name = format!("opt.adam.{prefix}.{}", p.name);
                let data = lookup(&name).ok_or_else(|| {
                    Error::Checkpoint(format!("missing optimizer tensor {name:?}"))
                })?;
                if data.len() != buf.len() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer tensor {name:?} has {} values, expected {}",
                        data.len(),
                        buf.len()
                    )));
                }
                buf.copy_from_slice(&data);
            }
        }
        Ok(())
    }
}

/// SGD with momentum: `buf = momentum*buf + g; p -= lr*buf`.
/// The learning rate is passed per step so schedules stay outside.
pub struct SgdMomentum<T> {
    momentum: T,
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(store: &ParamStore<T>, momentum: T) -> Self {
        SgdMomentum {
            momentum,
            bufs: store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.data.len()])
                .collect(),
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &GradAccum<T>,
        learning_rate: T,
    ) -> Result<()> {
        grads.checked_finite(store)?;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let buf = &mut self.bufs[id.0];
            let p = store.data_mut(id);
            for i in 0..p.len() {
                buf[i] = self.momentum * buf[i] + g[i];
                p[i] = p[i] - learning_rate * buf[i];
            }
        }
        Ok(())
    }
}
