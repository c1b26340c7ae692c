use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors with their gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(NnError::Contract(format!("duplicate parameter name {name}")));
        }
        self.grads.push(Tensor::zeros(&value.shape));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.grads[id.0].values.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for g in &mut self.grads {
            g.values.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.grad_norm();
        if n > max_norm && n > 0.0 {
            self.scale_grads(max_norm / n);
        }
        n
    }

    /// [`ParamStore::clip_grad_norm`] restricted to `ids`.
    pub fn clip_grad_norm_of(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let n = ids.iter().map(|id| self.grads[id.0].norm_sq()).sum::<f64>().sqrt();
        if n > max_norm && n > 0.0 {
            let c = max_norm / n;
            for id in ids {
                self.grads[id.0].values.iter_mut().for_each(|v| *v *= c);
            }
        }
        n
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

/// Glorot-uniform matrix.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor {
        shape: vec![rows, cols],
        values: (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
    }
}

/// Dense layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        let w = store.add(format!("{name}.w"), glorot(fan_in, fan_out, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Linear { w, b, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.shape(x).last() != Some(&self.fan_in) {
            return shape_err("linear", tape.shape(x), &[self.fan_in, self.fan_out]);
        }
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}
