//! Named tensor layouts shared by the model components, and seeded
//! initialization from a layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nncore::{uniform_tensor, Tensor};
use crate::quant::WeightStore;

/// Bound of the uniform initializer for weights and biases.
pub const INIT_BOUND: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Uniform,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    pub fn uniform(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform,
        }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Ones,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Layer-norm gain (ones) and bias (zeros) under `prefix`.
pub fn norm_specs(prefix: &str, d: usize) -> [TensorSpec; 2] {
    [TensorSpec::ones(format!("{prefix}.g"), &[d]), TensorSpec::zeros(format!("{prefix}.b"), &[d])]
}

/// Fills a store from `layout` in order, drawing uniform values from one
/// ChaCha8 stream. `stream` separates components sharing a seed.
pub fn seeded_store(layout: &[TensorSpec], seed: u64, stream: u64) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut store = WeightStore::new();
    for spec in layout {
        let t = match spec.init {
            Init::Uniform => uniform_tensor(&mut rng, &spec.shape, INIT_BOUND),
            Init::Ones => Tensor::filled(&spec.shape, 1.0),
            Init::Zeros => Tensor::zeros(&spec.shape),
        };
        store.insert_f32(spec.name.clone(), t)?;
    }
    Ok(store)
}

/// Checks that `store` holds every tensor of `layout` with the right shape.
pub fn check_layout(layout: &[TensorSpec], store: &WeightStore) -> Result<()> {
    for spec in layout {
        store.tensor(&spec.name, &spec.shape)?;
    }
    Ok(())
}
