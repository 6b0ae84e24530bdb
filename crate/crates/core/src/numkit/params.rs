use std::collections::BTreeMap;

use rand::Rng as _;

use super::random::{self, Rng};
use super::tape::{Gradients, Tape, Var};
use super::{NumError, Tensor};

/// Named trainable tensors plus the seed that initialized them.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
    init_rng: Rng,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
            init_rng: random::rng(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a tensor under `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NumError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    /// Glorot-uniform `[fan_in, fan_out]` matrix drawn from the store's stream.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<(), NumError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let rng = &mut self.init_rng;
        let t = Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-limit..limit));
        self.insert(name, t)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), NumError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Reassembles a store from checkpointed tensors.
    pub fn from_parts(rng_seed: u64, params: BTreeMap<String, Tensor>) -> Self {
        Self {
            params,
            rng_seed,
            init_rng: random::rng(rng_seed),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.rng_seed == other.rng_seed && self.params == other.params
    }
}

/// Binds store parameters to tape leaves on first use.
pub struct Bindings<'s> {
    store: &'s ParamStore,
    vars: BTreeMap<String, Var>,
}

impl<'s> Bindings<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            vars: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var, NumError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| NumError::MissingParam(name.to_string()))?;
        let v = tape.param(value.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds `name` to an existing tape variable (e.g. a gradient-check probe).
    pub fn bind(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    /// Gradients for every bound parameter; unreached parameters get zeros.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(name).expect("bound").shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
