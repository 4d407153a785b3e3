//! Dense tensors and the primitive neural operations the encoder, decoder
//! and vocoder are built from. Every stateful primitive has a batch form and
//! a streaming form that threads an explicit state object.

mod attention;
mod conv;
mod linear;
mod lstm;
mod norm;
mod probe;
mod tensor;

pub use attention::{local_mhsa, AttentionWindow, MhsaParams};
pub use conv::{
    causal_conv1d, causal_conv1d_dilated, conv1d_same, depthwise_causal_conv1d, ConvState,
};
pub use linear::{linear, Linear};
pub use lstm::{lstm_step, LstmParams, LstmState};
pub use norm::{layer_norm, LayerNorm, LN_EPSILON};
pub use probe::{observe_tensor, site_key, ActivationProbe, NoProbe, SitePoint};
pub use tensor::Tensor;

pub(crate) use attention::attend_row;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish(x: f32) -> f32 {
    x * sigmoid(x)
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

pub fn leaky_relu(x: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Uniform values in `[-bound, bound]` from a ChaCha8 stream seeded with `seed`.
pub fn seeded_tensor(shape: &[usize], seed: u64, bound: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_tensor(&mut rng, shape, bound)
}

pub fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape product matches generated length")
}
