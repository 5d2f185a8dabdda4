use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters receive no gradient and are skipped by the optimizer.
    pub trainable: bool,
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            trainable: true,
        });
        Ok(id)
    }

    /// Uniform Glorot initialisation, `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::filled(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces every value from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.len()
            )));
        }
        for (name, value) in other {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}

/// Matrix of shape `rows × cols` made of horizontally stacked orthogonal
/// `rows × rows` blocks (the last block truncated when needed).
pub(crate) fn orthogonal_blocks<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let mut out = Tensor::zeros(&[rows, cols]);
    let mut start = 0;
    while start < cols {
        let width = rows.min(cols - start);
        let q = random_orthogonal(rows, rng);
        let data = out.data_mut();
        for r in 0..rows {
            for c in 0..width {
                data[r * cols + start + c] = q[r * rows + c];
            }
        }
        start += width;
    }
    out
}

/// Square orthogonal matrix by modified Gram-Schmidt on Gaussian columns.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // columns stored contiguously, transposed into row-major at the end
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for q in &cols {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= dot * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    let mut out = vec![0.0; n * n];
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            out[r * n + c] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1])).unwrap();
        assert!(store.add("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add_glorot("w", 10, 6, &mut rng).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(store.value(id).data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = orthogonal_blocks(4, 8, &mut rng);
        for block in 0..2 {
            for a in 0..4 {
                for b in 0..4 {
                    let dot: f64 = (0..4)
                        .map(|r| m.get(r, block * 4 + a) * m.get(r, block * 4 + b))
                        .sum();
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-10);
                }
            }
        }
    }
}
