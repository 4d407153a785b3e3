use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::layout::Init;
use crate::nncore::Tensor;
use crate::quant::StoreEntry;

/// Seeded encoder with every bias set to zero, for look-ahead measurement.
///
/// Without biases a zero input keeps every activation at exactly zero, so
/// an impulse shows up wherever it reaches no matter how much it has been
/// attenuated. On a biased encoder the response to a frame several
/// attention layers away falls below f32 resolution and the far end of the
/// receptive field is missed.
pub fn probe_encoder(config: EncoderConfig, seed: u64) -> Result<Encoder> {
    let mut store = Encoder::seeded_store(&config, seed)?;
    for spec in config.layout() {
        if spec.shape.len() == 1 && spec.init == Init::Uniform {
            store.replace(&spec.name, StoreEntry::F32(Tensor::zeros(&spec.shape)))?;
        }
    }
    Encoder::from_store(config, &store)
}

/// Empirical look-ahead of `encoder`, in input frames.
///
/// For every input frame `t` of an all-zero `[frames, input_dim]` input,
/// sets channel 0 of that frame to `eps` and finds the first output frame
/// `u` that moves by more than `tol`. The result is `max(t − s·u)` over all
/// `t`, where `s` is the subsampling factor: how far past an output frame's
/// own input position its receptive field reaches. Use [`probe_encoder`]
/// weights so that the zero input is a true rest state.
pub fn measure_lookahead(encoder: &Encoder, frames: usize, eps: f32, tol: f32) -> Result<usize> {
    if frames == 0 {
        return Err(Error::Domain("look-ahead measurement needs at least one frame".into()));
    }
    let input_dim = encoder.config().input_dim;
    let x = Tensor::zeros(&[frames, input_dim]);
    let base = encoder.encode_full(&x)?;
    let s = encoder.subsample_factor() as isize;
    let mut lookahead = 0isize;
    for t in 0..frames {
        let mut xp = x.clone();
        xp.row_mut(t)[0] = eps;
        let y = encoder.encode_full(&xp)?;
        let first = (0..base.rows()).find(|&u| {
            base.row(u)
                .iter()
                .zip(y.row(u))
                .any(|(a, b)| (a - b).abs() > tol)
        });
        // an input no output reads (e.g. a trailing odd frame) says nothing
        if let Some(u) = first {
            lookahead = lookahead.max(t as isize - s * u as isize);
        }
    }
    Ok(lookahead as usize)
}

/// Delay a listener perceives when an encoder with `delay_ms` of algorithmic
/// delay runs `rtf` times faster than real time.
pub fn perceived_delay(delay_ms: f64, rtf: f64) -> Result<f64> {
    if !(rtf > 0.0) || !rtf.is_finite() {
        return Err(Error::Domain(format!("real-time factor must be positive, got {rtf}")));
    }
    Ok(delay_ms / rtf)
}
