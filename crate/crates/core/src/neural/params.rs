use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same values under a different shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Initialization scheme for [`param_init`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// `U(-1/√fan_in, 1/√fan_in)`.
    UniformFanIn(usize),
}

pub fn param_init(shape: &[usize], init: Init, seed: u64) -> Tensor {
    let mut tensor = Tensor::zeros(shape);
    if let Init::UniformFanIn(fan_in) = init {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in tensor.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    tensor
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name `{name}`");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `‖Θ‖²`
    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data().iter()).map(|v| v * v).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data_mut().fill(value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_scheme() {
        let t = param_init(&[3, 4], Init::Zeros, 1);
        assert!(t.data().iter().all(|v| *v == 0.0));
        assert_eq!(t.shape(), &[3, 4]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = param_init(&[5, 7], Init::UniformFanIn(7), 42);
        let b = param_init(&[5, 7], Init::UniformFanIn(7), 42);
        let c = param_init(&[5, 7], Init::UniformFanIn(7), 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_fan_in_respects_its_bound() {
        let t = param_init(&[100, 100], Init::UniformFanIn(100), 9);
        let max = t.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max <= 0.1);
        // The draws should actually spread over the interval.
        assert!(max > 0.09);
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = t.reshape(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert!(r.reshape(vec![4]).is_err());
    }

    #[test]
    fn store_counts_and_orders() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::zeros(&[3, 2]));
        let b = store.insert("b", Tensor::zeros(&[3]));
        assert_eq!(store.total_count(), 9);
        assert_eq!(store.id("b"), Some(b));
        assert_eq!(store.name(a), "a");
        let names: Vec<_> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a", "b"]);
    }
}
