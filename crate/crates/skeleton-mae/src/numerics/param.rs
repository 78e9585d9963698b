//! Named learnable parameters, kept outside any tape.
//!
//! A [`ParamStore`] owns the canonical parameter values between steps. Each
//! training step binds the store onto a fresh [`Tape`] (one leaf per
//! parameter, in insertion order), runs forward/backward, drains gradients
//! into a [`GradAccum`], and lets an optimizer update the store in place.
//! Names are unique and double as checkpoint tensor names.

use super::scalar::Scalar;
use super::tape::{numel, Tape, TensorId};
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

pub struct ParamStore<T: Scalar> {
    entries: Vec<Parameter<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::Shape {
                op: "param",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("param({name})"),
            });
        }
        self.entries.push(Parameter {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, shape, vec![T::zero(); numel(shape)])
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], v: T) -> Result<ParamId> {
        self.add(name, shape, vec![v; numel(shape)])
    }

    /// Uniform on `±sqrt(6 / (fan_in + fan_out))` with fans taken from the
    /// 2-D shape `[fan_in, fan_out]`.
    pub fn xavier_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "xavier_uniform",
                lhs: shape.to_vec(),
                rhs: vec![2],
            });
        }
        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
        let data = (0..numel(shape))
            .map(|_| T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        self.add(name, shape, data)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Overwrites one parameter's values (shape must match exactly).
    pub fn set_data(&mut self, id: ParamId, data: &[T]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if data.len() != e.data.len() {
            return Err(Error::Shape {
                op: "set_data",
                lhs: e.shape.clone(),
                rhs: vec![data.len()],
            });
        }
        e.data.copy_from_slice(data);
        Ok(())
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        let mut ids = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            ids.push(tape.leaf(e.data.clone(), &e.shape, true)?);
        }
        Ok(Bound { ids })
    }
}

/// Tape handles for one binding of a store; index by [`ParamId`].
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }
}

/// Flat per-parameter gradient buffers for accumulation across samples.
pub struct GradAccum<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> GradAccum<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        GradAccum {
            bufs: store.entries.iter().map(|e| vec![T::zero(); e.data.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.fill(T::zero());
        }
    }

    /// Adds `scale * grad` for every bound parameter that received one.
    pub fn add_scaled_from_tape(
        &mut self,
        store: &ParamStore<T>,
        bound: &Bound,
        tape: &Tape<T>,
        scale: T,
    ) {
        for (id, _) in store.iter() {
            if let Some(g) = tape.grad(bound.id(id)) {
                let buf = &mut self.bufs[id.0];
                for (d, &s) in buf.iter_mut().zip(g) {
                    *d = *d + scale * s;
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, id: ParamId, values: &[T]) {
        self.bufs[id.0].copy_from_slice(values);
    }

    pub fn checked_finite(&self, store: &ParamStore<T>) -> Result<()> {
        for (i, b) in self.bufs.iter().enumerate() {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("gradient({})", store.entries[i].name),
                });
            }
        }
        Ok(())
    }
}
