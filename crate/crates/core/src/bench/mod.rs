//! Latency and real-time-factor measurement of streaming calls, and the
//! CSV/SVG reports built from them.

mod reference;
mod report;

pub use reference::{lookup, reference_wer, Metric, ReferenceEntry, REFERENCE};
pub use report::{delay_rows, write_csv, write_report, write_svg, DelayRow, ReportFormat, CSV_HEADER};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::decoder::FRAMES_PER_STEP;
use crate::error::{Error, Result};
use crate::nncore::{seeded_tensor, NoProbe, Tensor};
use crate::quant::WeightStore;
use crate::runtime::Pipeline;

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_ITERS: usize = 50;
pub const ENCODER_CHUNK_MS: f64 = 80.0;

/// Input frames the encoder is fed from one stream before it is restarted,
/// so attention caches stay at a realistic size.
const ENCODER_RESTART_FRAMES: usize = 1000;
/// Calls before a vocoder stream is restarted.
const VOCODER_RESTART_CALLS: usize = 400;
/// Length of the seeded utterance the decoder attends over.
const DECODER_MEMORY_FRAMES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Encoder,
    Decoder,
    Vocoder,
    /// Decoder step, causal PostNet and vocoder: one unit of generation.
    Pipeline,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Encoder, Component::Decoder, Component::Vocoder, Component::Pipeline];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::Vocoder => "vocoder",
            Component::Pipeline => "pipeline",
        }
    }

    /// Weight-name prefixes that make up the component.
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            Component::Encoder => &["enc."],
            Component::Decoder => &["dec."],
            Component::Vocoder => &["voc."],
            Component::Pipeline => &["dec.", "voc."],
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown component {s:?} (expected encoder, decoder, vocoder or pipeline)"
                ))
            })
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub component: Component,
    /// Audio duration one call covers.
    pub chunk_ms: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// `chunk_ms / mean_ms`.
    pub rtf: f64,
    pub model_size_bytes: usize,
    pub iterations: usize,
    pub warmup: usize,
}

impl BenchReport {
    /// Statistics over timed calls; warmup calls are not part of `samples_ms`.
    pub fn from_samples(
        name: impl Into<String>,
        component: Component,
        chunk_ms: f64,
        samples_ms: &[f64],
        warmup: usize,
        model_size_bytes: usize,
    ) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Domain("a benchmark needs at least one timed call".into()));
        }
        if !(chunk_ms > 0.0) || samples_ms.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Numeric("chunk length and latencies must be positive and finite".into()));
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_ms = sorted.iter().sum::<f64>() / n as f64;
        if mean_ms <= 0.0 {
            return Err(Error::Numeric("mean latency is zero; the clock is too coarse".into()));
        }
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        // nearest rank
        let p95_ms = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(Self {
            name: name.into(),
            component,
            chunk_ms,
            mean_ms,
            median_ms,
            p95_ms,
            rtf: chunk_ms / mean_ms,
            model_size_bytes,
            iterations: n,
            warmup,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Audio per call; `None` picks 80 ms for the encoder and one decoder
    /// step (two frames, 25 ms) otherwise. Rounded to whole frames or steps.
    pub chunk_ms: Option<f64>,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            chunk_ms: None,
            iters: DEFAULT_ITERS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

/// Runs `call` `warmup + iters` times and returns the timed latencies in
/// milliseconds. `reset` runs untimed before a call when it asks for it.
fn measure<S>(
    iters: usize,
    warmup: usize,
    state: &mut S,
    mut reset: impl FnMut(&mut S) -> Result<()>,
    mut needs_reset: impl FnMut(&S) -> bool,
    mut call: impl FnMut(&mut S) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut samples = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        if needs_reset(state) {
            reset(state)?;
        }
        let start = Instant::now();
        call(state)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            samples.push(elapsed);
        }
    }
    Ok(samples)
}

fn units_per_call(chunk_ms: f64, unit_ms: f64) -> Result<usize> {
    if !(chunk_ms > 0.0) || !chunk_ms.is_finite() {
        return Err(Error::Config(format!("chunk must be a positive duration, got {chunk_ms} ms")));
    }
    Ok(((chunk_ms / unit_ms).round() as usize).max(1))
}

/// Times single-threaded streaming calls of one component of `pipeline`.
/// Model size is the serialized size of the component's tensors in `store`.
pub fn bench_component(
    pipeline: &Pipeline,
    store: &WeightStore,
    component: Component,
    options: &BenchOptions,
) -> Result<BenchReport> {
    if options.iters == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let config = pipeline.config();
    let step_ms = FRAMES_PER_STEP as f64 * config.stft.hop_ms();
    let (iters, warmup) = (options.iters, options.warmup);

    let (chunk_ms, samples) = match component {
        Component::Encoder => {
            let hop_ms = config.encoder.hop_ms;
            let frames = units_per_call(options.chunk_ms.unwrap_or(ENCODER_CHUNK_MS), hop_ms)?;
            let encoder = pipeline.encoder();
            let chunk = seeded_tensor(&[frames, config.encoder.input_dim], options.seed, 1.0);
            let mut st = (encoder.stream_state(), 0usize);
            let samples = measure(
                iters,
                warmup,
                &mut st,
                |s| {
                    *s = (encoder.stream_state(), 0);
                    Ok(())
                },
                |s| s.1 + frames > ENCODER_RESTART_FRAMES,
                |s| {
                    encoder.encode_stream(&mut s.0, &chunk, false)?;
                    s.1 += frames;
                    Ok(())
                },
            )?;
            (frames as f64 * hop_ms, samples)
        }
        Component::Decoder | Component::Pipeline => {
            let steps = units_per_call(options.chunk_ms.unwrap_or(step_ms), step_ms)?;
            let feats = seeded_tensor(&[DECODER_MEMORY_FRAMES, config.encoder.input_dim], options.seed, 1.0);
            let memory = pipeline.encoder().encode_full(&feats)?;
            let decoder = pipeline.decoder();
            let vocoder = pipeline.vocoder();
            let with_vocoder = component == Component::Pipeline;
            let max_steps = decoder.config().max_frames.div_ceil(FRAMES_PER_STEP);
            let fresh = || -> Result<_> { Ok((decoder.init_state(&memory)?, vocoder.stream())) };
            let mut st = fresh()?;
            let samples = measure(
                iters,
                warmup,
                &mut st,
                |s| {
                    *s = fresh()?;
                    Ok(())
                },
                |s| s.0.stopped || s.0.steps + steps > max_steps,
                |s| {
                    for _ in 0..steps {
                        if s.0.stopped {
                            break;
                        }
                        let out = decoder.decode_step(&memory, &mut s.0, &mut NoProbe)?;
                        let frames = decoder.postnet_step(&mut s.0, &out.frames, &mut NoProbe)?;
                        if with_vocoder {
                            vocoder.push_frames(&mut s.1, &frames)?;
                        }
                    }
                    Ok(())
                },
            )?;
            (steps as f64 * step_ms, samples)
        }
        Component::Vocoder => {
            let steps = units_per_call(options.chunk_ms.unwrap_or(step_ms), step_ms)?;
            let vocoder = pipeline.vocoder();
            let frames: Tensor = seeded_tensor(&[steps * FRAMES_PER_STEP, config.stft.bins()], options.seed, 1.0).map(f32::abs);
            let mut st = (vocoder.stream(), 0usize);
            let samples = measure(
                iters,
                warmup,
                &mut st,
                |s| {
                    *s = (vocoder.stream(), 0);
                    Ok(())
                },
                |s| s.1 >= VOCODER_RESTART_CALLS,
                |s| {
                    vocoder.push_frames(&mut s.0, &frames)?;
                    s.1 += 1;
                    Ok(())
                },
            )?;
            (steps as f64 * step_ms, samples)
        }
    };

    let mut weights = WeightStore::new();
    for prefix in component.prefixes() {
        weights.merge(store.subset(prefix))?;
    }
    let arch = config.encoder.arch.name.clone().unwrap_or_else(|| "custom".into());
    let name = match component {
        Component::Encoder => arch,
        _ => format!("{arch}/{}", config.vocoder),
    };
    BenchReport::from_samples(name, component, chunk_ms, &samples, warmup, weights.serialized_size())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archdsl::named_config;
    use crate::decoder::DecoderConfig;
    use crate::runtime::PipelineConfig;
    use crate::vocoder::VocoderKind;

    fn toy(vocoder: VocoderKind) -> (Pipeline, WeightStore) {
        let mut c = PipelineConfig::new(named_config("lsa_ls2").unwrap(), vocoder);
        c.encoder.d_model = 16;
        c.encoder.n_heads = 2;
        c.encoder.conv_kernel = 5;
        c.encoder.ffn_expansion = 2;
        c.decoder = DecoderConfig {
            prenet_units: 16,
            lstm_units: 16,
            postnet_channels: 8,
            att_filters: 4,
            att_dim: 8,
            max_frames: 20,
            ..DecoderConfig::new(16)
        };
        let store = Pipeline::seeded_store(&c, 1).unwrap();
        (Pipeline::from_store(c, &store).unwrap(), store)
    }

    #[test]
    fn single_sample_statistics() {
        let r = BenchReport::from_samples("x", Component::Encoder, 80.0, &[12.5], 0, 0).unwrap();
        assert_eq!((r.mean_ms, r.median_ms, r.p95_ms, r.iterations), (12.5, 12.5, 12.5, 1));
        assert!(BenchReport::from_samples("x", Component::Encoder, 80.0, &[], 0, 0).is_err());
    }

    #[test]
    fn rtf_is_chunk_over_mean() {
        let r = BenchReport::from_samples("x", Component::Decoder, 25.0, &[8.0, 12.0, 10.0], 2, 0).unwrap();
        assert_eq!(r.mean_ms, 10.0);
        assert_eq!(r.rtf, 2.5);
        assert_eq!(r.median_ms, 10.0);
        assert_eq!(r.p95_ms, 12.0);
        assert_eq!(r.warmup, 2);
    }

    #[test]
    fn nearest_rank_p95() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = BenchReport::from_samples("x", Component::Vocoder, 25.0, &s, 0, 0).unwrap();
        assert_eq!(r.p95_ms, 19.0);
        assert_eq!(r.median_ms, 10.5);
    }

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.as_str().parse::<Component>().unwrap(), c);
        }
        assert!("postnet".parse::<Component>().is_err());
    }

    #[test]
    fn every_component_measures() {
        let (p, store) = toy(VocoderKind::Mg);
        let opts = BenchOptions {
            iters: 3,
            warmup: 1,
            ..BenchOptions::default()
        };
        for c in Component::ALL {
            let r = bench_component(&p, &store, c, &opts).unwrap();
            assert_eq!(r.iterations, 3);
            assert!(r.rtf > 0.0 && r.rtf.is_finite(), "{c}");
            assert!(r.model_size_bytes > 16, "{c}");
            let expected = if c == Component::Encoder { 80.0 } else { 25.0 };
            assert_eq!(r.chunk_ms, expected);
        }
    }

    #[test]
    fn decoder_restarts_past_the_frame_cap() {
        let (p, store) = toy(VocoderKind::Gl);
        let opts = BenchOptions {
            iters: 30,
            warmup: 0,
            ..BenchOptions::default()
        };
        // 30 steps of two frames exceed the 20-frame cap several times over
        assert_eq!(bench_component(&p, &store, Component::Pipeline, &opts).unwrap().iterations, 30);
    }

    #[test]
    fn chunk_is_rounded_to_whole_frames() {
        let (p, store) = toy(VocoderKind::Gl);
        let opts = BenchOptions {
            chunk_ms: Some(44.0),
            iters: 1,
            warmup: 0,
            seed: 0,
        };
        assert_eq!(bench_component(&p, &store, Component::Encoder, &opts).unwrap().chunk_ms, 40.0);
        assert_eq!(bench_component(&p, &store, Component::Vocoder, &opts).unwrap().chunk_ms, 50.0);
        let zero = BenchOptions { iters: 0, ..opts };
        assert!(bench_component(&p, &store, Component::Vocoder, &zero).is_err());
    }
}
