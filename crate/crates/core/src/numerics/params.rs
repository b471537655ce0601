use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use crate::error::{BatError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor plus its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Vec<f64>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

/// Initializers for new parameters. Randomness is drawn from a generator
/// seeded by the store seed and the parameter name, so a parameter's initial
/// value does not depend on which other parameters exist.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

pub fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(BatError::Argument(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = vec![0.0; tensor.len()];
        self.params.push(Parameter { name: name.to_string(), tensor, grad });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> Result<ParamId> {
        let tensor = init_tensor(name, shape, init, seed);
        self.insert(name, tensor)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| BatError::Argument(format!("unknown parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.by_name.get(name).map(|id| &self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.tensor.len()).sum()
    }

    /// Appends `rows` (`[n, cols]`) to a 2-D parameter and resets its gradient.
    pub fn append_rows(&mut self, id: ParamId, rows: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.tensor.rank() != 2 || rows.rank() != 2 || rows.shape()[1] != p.tensor.shape()[1] {
            return Err(BatError::dim(format!("append {:?} to {} {:?}", rows.shape(), p.name, p.tensor.shape())));
        }
        let n = p.tensor.shape()[0] + rows.shape()[0];
        let cols = rows.shape()[1];
        let mut data = std::mem::replace(&mut p.tensor, Tensor::zeros(&[0])).into_data();
        data.extend_from_slice(rows.data());
        p.tensor = Tensor::new(vec![n, cols], data)?;
        p.grad = vec![0.0; p.tensor.len()];
        Ok(())
    }

    /// Appends rows to a 2-D parameter, initializing them like `init`.
    pub fn extend_rows(&mut self, id: ParamId, new_rows: usize, init: Init, seed: u64) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.tensor.rank() != 2 {
            return Err(BatError::dim(format!("{} is not a matrix", p.name)));
        }
        let (rows, cols) = (p.tensor.shape()[0], p.tensor.shape()[1]);
        let tag = format!("{}#{}", p.name, rows);
        let extra = init_tensor(&tag, &[new_rows, cols], init, seed);
        let mut data = std::mem::replace(&mut p.tensor, Tensor::zeros(&[0])).into_data();
        data.extend_from_slice(extra.data());
        p.tensor = Tensor::new(vec![rows + new_rows, cols], data)?;
        p.grad = vec![0.0; p.tensor.len()];
        Ok(())
    }
}

pub(crate) fn init_tensor(name: &str, shape: &[usize], init: Init, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            t
        }
        Init::Normal(std) => {
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * std
            });
            t
        }
    }
}
