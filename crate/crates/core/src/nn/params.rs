use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeMap;

/// Named learned parameters with optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    params: BTreeMap<String, Tensor<T>>,
    pub(crate) first_moment: BTreeMap<String, Vec<T>>,
    pub(crate) second_moment: BTreeMap<String, Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { params: BTreeMap::new(), first_moment: BTreeMap::new(), second_moment: BTreeMap::new(), step: 0 }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    /// Panicking accessor for names the model itself registered.
    pub fn data(&self, name: &str) -> &[T] {
        match self.params.get(name) {
            Some(t) => &t.data,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { grads: self.params.iter().map(|(k, v)| (k.clone(), vec![T::zero(); v.numel()])).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |m: &BTreeMap<String, Vec<T>>| {
            m.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| U::lit(x.to_f64_lossy())).collect())).collect()
        };
        ParamSet {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            first_moment: conv(&self.first_moment),
            second_moment: conv(&self.second_moment),
            step: self.step,
        }
    }
}

/// Gradient buffers keyed like the owning [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar = f32> {
    grads: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn slot(&mut self, name: &str) -> &mut [T] {
        match self.grads.get_mut(name) {
            Some(g) => g,
            None => panic!("no gradient slot for {name}"),
        }
    }

    /// Moves a slot out so several slots can be borrowed at once; pair with
    /// [`put`](Self::put).
    pub fn take(&mut self, name: &str) -> Vec<T> {
        match self.grads.get_mut(name) {
            Some(g) => std::mem::take(g),
            None => panic!("no gradient slot for {name}"),
        }
    }

    pub fn put(&mut self, name: &str, v: Vec<T>) {
        *self.slot_vec(name) = v;
    }

    fn slot_vec(&mut self, name: &str) -> &mut Vec<T> {
        match self.grads.get_mut(name) {
            Some(g) => g,
            None => panic!("no gradient slot for {name}"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<T>)> {
        self.grads.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.values_mut().flatten() {
            *g *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (k, v) in self.grads.iter_mut() {
            if let Some(o) = other.grads.get(k) {
                for (a, b) in v.iter_mut().zip(o) {
                    *a += *b;
                }
            }
        }
    }

    pub fn zero(&mut self) {
        for g in self.grads.values_mut().flatten() {
            *g = T::zero();
        }
    }

    pub fn check_finite(&self) -> crate::error::Result<()> {
        for (k, v) in &self.grads {
            if v.iter().any(|g| !g.is_finite()) {
                return Err(crate::error::Error::Numeric(format!("non-finite gradient in {k}")));
            }
        }
        Ok(())
    }
}
