use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

/// Named parameter arrays in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<F>>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), trainable: Vec::new(), index: HashMap::new() }
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = Arc::new(value);
            self.trainable[i] = trainable;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
        self.trainable.push(trainable);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &*self.values[i])
    }

    pub fn value(&self, i: usize) -> &Tensor<F> {
        &self.values[i]
    }

    pub(crate) fn value_arc(&self, i: usize) -> Arc<Tensor<F>> {
        self.values[i].clone()
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn set_trainable(&mut self, i: usize, trainable: bool) {
        self.trainable[i] = trainable;
    }

    /// Mutable access; clones the array if a graph still holds it.
    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Total element count, optionally restricted to trainable arrays.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.values
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t || !trainable_only)
            .map(|(v, _)| v.numel())
            .sum()
    }

    /// Same element type conversion for every array.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            trainable: self.trainable.clone(),
            index: self.index.clone(),
        }
    }

    /// Bitwise equality of names and values.
    pub fn same_as(&self, other: &Self) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits_eq(y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(&self, o: &Self) -> bool;
}

impl<F: Scalar> BitsEq for F {
    fn to_bits_eq(&self, o: &Self) -> bool {
        // f32/f64 both round-trip exactly through f64
        self.f64().to_bits() == o.f64().to_bits()
    }
}

/// PyTorch-style default initialisation: uniform in `±1/sqrt(fan_in)` for
/// weights and biases (`kaiming_uniform(a = sqrt 5)`).
pub fn uniform_fan_in<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| F::of(rng.random_range(-bound..bound)))
}

/// He-normal initialisation (`std = sqrt(2 / fan_in)`), Box-Muller sampled.
pub fn he_normal<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        F::of(std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
    })
}
