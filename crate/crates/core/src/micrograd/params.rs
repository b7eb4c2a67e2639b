use indexmap::IndexMap;
use rand::Rng;

use crate::error::{arg, shape, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with matching gradient buffers.
///
/// Iteration order is insertion order, which fixes the on-disk layout and the
/// coordinate order used by gradient checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return arg(format!("duplicate parameter name {name:?}"));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    /// Glorot-uniform weights: `U(−s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-s..s)).collect();
        self.insert(name, Tensor::from_vec(shape, data)?)
    }

    /// He-uniform weights for layers feeding a ReLU: `s = sqrt(6 / fan_in)`.
    pub fn insert_he_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.insert_uniform(name, shape, fan_in, 0, rng)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let Some(p) = self.entries.get_mut(name) else {
            return arg(format!("unknown parameter {name:?}"));
        };
        if !p.grad.same_shape(grad) {
            return shape(format!(
                "gradient for {name:?} has shape {:?}, parameter has {:?}",
                grad.shape(),
                p.grad.shape()
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grad(&mut self, k: f64) {
        for p in self.entries.values_mut() {
            p.grad.scale(k);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries.values().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Adds every gradient buffer of `other` into this set's buffers.
    pub fn add_grads_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, p) in other.iter() {
            self.accumulate_grad(name, &p.grad)?;
        }
        Ok(())
    }

    /// True when both sets hold the same names, shapes, and bit-identical values.
    pub fn bit_identical(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.iter().zip(other.iter()).all(|((na, a), (nb, b))| {
                na == nb
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut p = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        p.insert_uniform("w", &[30, 20], 20, 30, &mut rng).unwrap();
        let s = (6.0f64 / 50.0).sqrt();
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() < s));
        assert_eq!(p.grad("w").unwrap().shape(), &[30, 20]);
    }

    #[test]
    fn grad_shape_checked() {
        let mut p = ParameterSet::new();
        p.insert_zeros("b", &[3]).unwrap();
        assert!(p.accumulate_grad("b", &Tensor::zeros(&[4])).is_err());
        assert!(p.accumulate_grad("nope", &Tensor::zeros(&[3])).is_err());
    }
}
