use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Named trainable parameters plus non-trainable buffers (running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, DenseTensor>,
    buffers: BTreeMap<String, DenseTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::State(format!("parameter {name} is not initialized")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseTensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&DenseTensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::State(format!("buffer {name} is not initialized")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut DenseTensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.buffers.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(DenseTensor::len).sum()
    }

    /// Copy every parameter and buffer of `other` whose name starts with `prefix`.
    pub fn copy_prefix(&mut self, other: &ParamStore, prefix: &str) {
        for (k, v) in other.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.params.insert(k.clone(), v.clone());
        }
        for (k, v) in other.buffers.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.buffers.insert(k.clone(), v.clone());
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: BTreeMap<String, DenseTensor>) {
        self.buffers.extend(updates);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward/backward pass: a tape plus the parameters bound onto it.
#[derive(Debug)]
pub struct Session<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    buffer_updates: BTreeMap<String, DenseTensor>,
}

impl<'s> Session<'s> {
    /// `seed` drives dropout masks only.
    pub fn new(store: &'s ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer_updates: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Tape variable for a parameter, bound on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = self.tape.leaf(self.store.get(name)?.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.tape.constant(value)
    }

    pub fn buffer(&self, name: &str) -> Result<&DenseTensor> {
        self.store.buffer(name)
    }

    pub fn set_buffer(&mut self, name: &str, value: DenseTensor) {
        self.buffer_updates.insert(name.to_string(), value);
    }

    pub fn into_buffer_updates(self) -> BTreeMap<String, DenseTensor> {
        self.buffer_updates
    }

    /// The tape and the parameter bindings, detached from the store.
    pub fn into_parts(self) -> (Tape, BTreeMap<String, Var>) {
        (self.tape, self.bound)
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Argument(format!("dropout rate must be below 1, got {p}")));
        }
        let keep = 1.0 - p;
        let shape = self.tape.shape(x).to_vec();
        let mask = DenseTensor::from_fn(&shape, |_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }

    /// Gradients of a scalar with respect to every bound parameter.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, DenseTensor>> {
        let mut g = self.tape.backward(loss)?;
        Ok(self.collect(&mut g))
    }

    fn collect(&self, g: &mut Gradients) -> BTreeMap<String, DenseTensor> {
        self.bound
            .iter()
            .map(|(name, &v)| {
                let grad = g.take(v).unwrap_or_else(|| DenseTensor::zeros(self.tape.shape(v)));
                (name.clone(), grad)
            })
            .collect()
    }

    /// Gradients of a non-scalar output seeded with `grad_out`, plus the
    /// gradient reaching `input`.
    pub fn gradients_from(
        &self,
        output: Var,
        grad_out: DenseTensor,
        input: Var,
    ) -> Result<(BTreeMap<String, DenseTensor>, DenseTensor)> {
        let mut g = self.tape.backward_from(output, grad_out)?;
        let gin = g.take(input).unwrap_or_else(|| DenseTensor::zeros(self.tape.shape(input)));
        Ok((self.collect(&mut g), gin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_only_in_training() {
        let store = ParamStore::new();
        let mut s = Session::new(&store, Mode::Eval, 1);
        let x = s.constant(DenseTensor::filled(&[4, 4], 1.0));
        assert_eq!(s.dropout(x, 0.5).unwrap(), x);
        let mut s = Session::new(&store, Mode::Train, 1);
        let x = s.constant(DenseTensor::filled(&[20, 20], 1.0));
        let y = s.dropout(x, 0.5).unwrap();
        let v = s.tape.value(y);
        assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.data().iter().filter(|&&e| e > 0.0).count();
        assert!((100..300).contains(&kept));
    }

    #[test]
    fn missing_parameter_is_state_error() {
        let store = ParamStore::new();
        let mut s = Session::new(&store, Mode::Train, 0);
        assert!(matches!(s.param("w"), Err(Error::State(_))));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", DenseTensor::vector(vec![1.0, 2.0]));
        store.insert("b", DenseTensor::vector(vec![3.0]));
        let mut s = Session::new(&store, Mode::Train, 0);
        let a = s.param("a").unwrap();
        let _ = s.param("b").unwrap();
        let l = s.tape.sum_all(a);
        let g = s.gradients(l).unwrap();
        assert_eq!(g["a"].data(), &[1.0, 1.0]);
        assert_eq!(g["b"].data(), &[0.0]);
    }
}
