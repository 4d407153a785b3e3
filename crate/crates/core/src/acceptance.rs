//! End-to-end checks of the engine's structural and numerical contracts,
//! shared by the `acceptance` integration test and `sts selftest`.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archdsl::{all_named_configs, analyze_delay, parse_arch, render_arch, ArchSpec};
use crate::bench::{bench_component, delay_rows, reference_wer, write_csv, write_svg, BenchOptions, Component};
use crate::decoder::{CollectFrames, DecodeMode, DecodeOptions, Decoder, DecoderConfig, NullFrameSink, FRAMES_PER_STEP};
use crate::encoder::{Encoder, EncoderConfig};
use crate::nncore::{seeded_tensor, NoProbe, Tensor};
use crate::quant::{quantize_per_channel, quantize_weights, QuantBits, Scope, StoreEntry, WeightStore};
use crate::runtime::{measure_lookahead, perceived_delay, probe_encoder, MemorySink, Pipeline, PipelineConfig};
use crate::vocoder::{gl_offline, spectral_snr, GlState, MelGan, Stft, StftConfig, Vocoder, VocoderKind, OFFLINE_ITERS};

/// Look-ahead in input frames of the named layouts, in registry order.
pub const EXPECTED_LOOKAHEAD: [(&str, usize); 7] = [
    ("Causal", 0),
    ("LSA1", 20),
    ("LSA2", 80),
    ("LS1", 11),
    ("LS2", 37),
    ("LSA_LS1", 41),
    ("LSA_LS2", 99),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} {}: {} ({}; {:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub const CRITERIA: [(u8, &str, fn() -> Check); 9] = [
    (1, "streaming encoder equals batch", streaming_encoder),
    (2, "measured look-ahead equals the delay analysis", delay_calculus),
    (3, "named layouts parse, round-trip and hold 17 conformer blocks", config_structure),
    (4, "streaming decoder equals batch, two frames per step", streaming_decoder),
    (5, "vocoder delay, reconstruction quality and MelGAN streaming", vocoder_contracts),
    (6, "pipeline output is independent of audio chunking", pipeline_chunking),
    (7, "quantization error bound, weight file identity and size ratios", quantization),
    (8, "perceived delay arithmetic", perceived_delay_arithmetic),
    (9, "benchmark reports", bench_reports),
];

pub fn run_criterion(id: u8) -> Option<Outcome> {
    let (id, title, check) = CRITERIA.iter().find(|(i, _, _)| *i == id)?;
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Some(Outcome {
        id: *id,
        title,
        passed,
        detail,
        elapsed,
    })
}

pub fn run_all() -> Vec<Outcome> {
    CRITERIA.iter().filter_map(|(id, _, _)| run_criterion(*id)).collect()
}

fn toy_encoder(arch: ArchSpec, d_model: usize, input_dim: usize) -> EncoderConfig {
    EncoderConfig {
        d_model,
        n_heads: 2,
        conv_kernel: if d_model >= 16 { 5 } else { 3 },
        ffn_expansion: if d_model >= 16 { 2 } else { 1 },
        input_dim,
        ..EncoderConfig::new(arch)
    }
}

fn run_chunked(enc: &Encoder, x: &Tensor, sizes: &[usize]) -> crate::Result<Tensor> {
    let mut state = enc.stream_state();
    let mut out = Tensor::zeros(&[0, enc.output_dim()]);
    let mut start = 0;
    for &n in sizes {
        let end = (start + n).min(x.rows());
        out = out.concat_rows(&enc.encode_stream(&mut state, &x.slice_rows(start, end), false)?)?;
        start = end;
    }
    let tail = enc.encode_stream(&mut state, &x.slice_rows(start, x.rows()), true)?;
    out.concat_rows(&tail)
}

fn streaming_encoder() -> Check {
    const FRAMES: usize = 160;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f32;
    for (i, spec) in all_named_configs().into_iter().enumerate() {
        let name = spec.name.clone().unwrap_or_default();
        let enc = ok(Encoder::seeded(toy_encoder(spec, 16, 80), 1))?;
        let x = seeded_tensor(&[FRAMES, 80], 100 + i as u64, 1.0);
        let batch = ok(enc.encode_full(&x))?;
        let mut chunkings = vec![vec![8; FRAMES / 8]];
        for _ in 0..2 {
            chunkings.push((0..40).map(|_| rng.gen_range(0..=12)).collect());
        }
        for sizes in &chunkings {
            let streamed = ok(run_chunked(&enc, &x, sizes))?;
            ensure(streamed.shape() == batch.shape(), || {
                format!("{name}: streamed {:?} vs batch {:?}", streamed.shape(), batch.shape())
            })?;
            let diff = streamed.max_abs_diff(&batch);
            ensure(diff <= 1e-4, || format!("{name}: max-abs difference {diff:e}"))?;
            worst = worst.max(diff);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("7 layouts x 3 chunkings, T = {FRAMES}, worst max-abs {worst:.1e}"))
}

fn delay_calculus() -> Check {
    let mut found = Vec::new();
    for (spec, (label, expected)) in all_named_configs().into_iter().zip(EXPECTED_LOOKAHEAD) {
        let name = spec.name.clone().unwrap_or_default();
        ensure(name == label, || format!("registry order: {name} vs {label}"))?;
        let predicted = ok(analyze_delay(&spec, 10.0))?.lookahead_frames;
        let enc = ok(probe_encoder(toy_encoder(spec, 8, 4), 1))?;
        let frames = (4 * predicted).max(64);
        let measured = ok(measure_lookahead(&enc, frames, 1.0, 0.0))?;
        ensure(measured == predicted && predicted == expected, || {
            format!("{name}: measured {measured}, analyzed {predicted}, expected {expected}")
        })?;
        found.push((label, measured));
    }
    let get = |l: &str| found.iter().find(|(n, _)| *n == l).map(|(_, f)| *f).unwrap_or(0);
    ensure(get("LS1") < get("LSA1") && get("LS2") < get("LSA2"), || {
        "stacker look-ahead should be cheaper than attention look-ahead".to_string()
    })?;
    Ok(found.iter().map(|(n, f)| format!("{n} {f}")).collect::<Vec<_>>().join(", "))
}

fn config_structure() -> Check {
    let specs = all_named_configs();
    ensure(specs.len() == 7, || format!("{} named layouts", specs.len()))?;
    for spec in &specs {
        let name = spec.name.clone().unwrap_or_default();
        let text = render_arch(spec);
        let mut again = ok(parse_arch(&text))?;
        again.name = spec.name.clone();
        ensure(&again == spec, || format!("{name}: {text:?} does not round-trip"))?;
        ensure(spec.cb_count() == 17, || format!("{name}: {} conformer blocks", spec.cb_count()))?;
    }
    Ok("7 layouts".into())
}

fn streaming_decoder() -> Check {
    let config = DecoderConfig {
        prenet_units: 32,
        lstm_units: 24,
        postnet_channels: 16,
        att_filters: 8,
        att_dim: 16,
        max_frames: 48,
        ..DecoderConfig::new(16)
    };
    let dec = ok(Decoder::seeded(config, 9))?;
    let memory = seeded_tensor(&[30, 16], 10, 1.0);
    let opts = DecodeOptions {
        forced_steps: Some(24),
        ..dec.options(DecodeMode::Stream)
    };
    let mut sink = CollectFrames::default();
    let stream = ok(dec.decode_with(&memory, &opts, &mut sink, &mut NoProbe))?;
    let batch_opts = DecodeOptions {
        mode: DecodeMode::Batch,
        ..opts
    };
    let batch = ok(dec.decode_with(&memory, &batch_opts, &mut NullFrameSink, &mut NoProbe))?;
    let frames = stream.spectrogram.rows();
    ensure(frames >= 40, || format!("only {frames} frames"))?;
    ensure(sink.blocks.len() == 24 && sink.blocks.iter().all(|b| b.rows() == FRAMES_PER_STEP), || {
        "a step did not emit exactly two frames".into()
    })?;
    let frame_ms = dec.config().frame_ms;
    ensure(frame_ms == StftConfig::default().hop_ms(), || format!("frame length {frame_ms} ms"))?;
    let diff = stream.spectrogram.max_abs_diff(&batch.spectrogram);
    ensure(diff <= 1e-5, || format!("max-abs difference {diff:e}"))?;
    Ok(format!("{frames} frames of {frame_ms} ms, max-abs {diff:.1e}"))
}

fn sine(freq: f64, n: usize) -> Vec<f32> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / 16_000.0).sin() as f32 * 0.5).collect()
}

fn vocoder_contracts() -> Check {
    let config = StftConfig::default();
    let stft = ok(Stft::new(config))?;
    let trim = config.win_length / config.hop;

    // delay: content starts at frame 5; count pushes until it is heard
    let (content, _) = stft.stft(&sine(500.0, 2400));
    let mut mags = Tensor::zeros(&[12, config.bins()]);
    for f in 5..12 {
        mags.row_mut(f).copy_from_slice(content.row(f));
    }
    let mut st = GlState::new(stft.clone());
    let mut heard = None;
    for f in 0..mags.rows() {
        let block = ok(st.push(mags.row(f)))?;
        if heard.is_none() && block.iter().any(|v| v.abs() > 1e-4) {
            heard = Some(f);
        }
    }
    let delay = heard.ok_or("streaming GL never produced the onset")? as isize - 5;
    ensure(delay == 1, || format!("onset delay {delay} frames"))?;

    let n = 16_000;
    let mags = stft.stft(&sine(440.0, n)).0;
    let gl = ok(Vocoder::seeded(VocoderKind::Gl, config, 0))?;
    let streamed = ok(gl.vocode(&mags))?;
    let offline = ok(gl_offline(&stft, &mags, OFFLINE_ITERS))?;
    let s = ok(spectral_snr(&stft, &mags, &streamed, trim))?;
    let o = ok(spectral_snr(&stft, &mags, &offline, trim))?;
    ensure(s >= 10.0 && o >= 20.0, || format!("SNR streaming {s:.1} dB, offline {o:.1} dB"))?;

    let store = ok(Vocoder::seeded_store(VocoderKind::Mg, &config, 4))?;
    let mg = ok(MelGan::from_store(&store, config.bins()))?;
    let spec = seeded_tensor(&[21, config.bins()], 1, 1.0).map(f32::abs);
    let batch = ok(mg.generate(&spec))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f32;
    for _ in 0..4 {
        let mut state = mg.stream_state();
        let mut out = Vec::new();
        let mut f = 0;
        while f < spec.rows() {
            let end = (f + 2 * rng.gen_range(1..=3)).min(spec.rows());
            out.extend(ok(mg.push(&mut state, &spec.slice_rows(f, end)))?);
            f = end;
        }
        out.extend(ok(mg.flush(&mut state))?);
        ensure(out.len() == batch.len(), || format!("MG stream {} vs batch {} samples", out.len(), batch.len()))?;
        let diff = out.iter().zip(&batch).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-5, || format!("MG stream vs batch max-abs {worst:e}"))?;
    Ok(format!(
        "GL delay {delay} hop ({} ms), SNR streaming {s:.1} dB / offline {o:.1} dB, MG max-abs {worst:.1e}",
        config.hop_ms()
    ))
}

fn pipeline_chunking() -> Check {
    let mut config = PipelineConfig::new(crate::archdsl::named_config("lsa_ls2").ok_or("registry")?, VocoderKind::Gl);
    config.encoder = toy_encoder(config.encoder.arch.clone(), 16, 80);
    config.decoder = DecoderConfig {
        prenet_units: 32,
        lstm_units: 24,
        postnet_channels: 16,
        att_filters: 8,
        att_dim: 16,
        max_frames: 40,
        ..DecoderConfig::new(16)
    };
    // stop token disabled so generation runs to the frame cap
    let mut store = ok(Pipeline::seeded_store(&config, 3))?;
    for name in ["dec.stop.w", "dec.stop.b"] {
        let shape = store.get(name).ok_or("missing stop weights")?.shape().to_vec();
        ok(store.replace(name, StoreEntry::F32(Tensor::zeros(&shape))))?;
    }
    let pipeline = ok(Pipeline::from_store(config, &store))?;
    let audio = seeded_tensor(&[16_000], 77, 0.3).into_data();

    let run = |sizes: &mut dyn Iterator<Item = usize>| -> std::result::Result<Vec<f32>, String> {
        let mut session = pipeline.session(MemorySink::new());
        let mut at = 0;
        while at < audio.len() {
            let end = (at + sizes.next().unwrap_or(audio.len())).min(audio.len());
            ok(session.feed_audio(&audio[at..end]))?;
            at = end;
        }
        ok(session.end_of_speech())?;
        ok(session.generate())?;
        Ok(session.into_sink().samples)
    };
    let a = run(&mut std::iter::repeat(1280))?;
    let b = run(&mut [37usize, 1000, 333, 4096, 5].into_iter().cycle())?;
    ensure(!a.is_empty() && a.len() == b.len(), || format!("{} vs {} samples", a.len(), b.len()))?;
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    ensure(diff <= 1e-3, || format!("max-abs difference {diff:e}"))?;
    Ok(format!("{} samples, max-abs {diff:.1e}", a.len()))
}

fn quantization() -> Check {
    let t = seeded_tensor(&[64, 64], 2024, 1.0);
    for bits in [QuantBits::Int8, QuantBits::Int4] {
        let q = quantize_per_channel(&t, bits);
        let d = q.dequantize();
        let channels = q.params.scales.len();
        for (i, (a, b)) in t.data().iter().zip(d.data()).enumerate() {
            let half = q.params.scales[i % channels] / 2.0;
            ensure((a - b).abs() <= half * (1.0 + 1e-6), || format!("{bits:?} element {i} off by {}", (a - b).abs()))?;
        }
    }

    let enc = EncoderConfig::new(crate::archdsl::named_config("lsa_ls2").ok_or("registry")?);
    let store = ok(Encoder::seeded_store(&enc, 1))?;
    let q8 = ok(quantize_weights(&store, QuantBits::Int8, Scope::Encoder))?;
    let q4 = ok(quantize_weights(&store, QuantBits::Int4, Scope::Encoder))?;
    for s in [&store, &q8, &q4] {
        let bytes = s.to_bytes();
        let back = ok(WeightStore::from_bytes(&bytes))?;
        ensure(&back == s && back.to_bytes() == bytes, || "save/load is not bit-identical".into())?;
    }
    let f = store.serialized_size() as f64;
    let r8 = q8.serialized_size() as f64 / f;
    let r4 = q4.serialized_size() as f64 / f;
    ensure((0.25..=0.30).contains(&r8), || format!("int8/f32 size ratio {r8:.4}"))?;
    ensure((0.125..=0.20).contains(&r4), || format!("int4/f32 size ratio {r4:.4}"))?;
    Ok(format!("size ratios int8 {r8:.3}, int4 {r4:.3}"))
}

fn perceived_delay_arithmetic() -> Check {
    let a = ok(perceived_delay(800.0, 2.5))?;
    let b = ok(perceived_delay(800.0, 2.0))?;
    ensure(a == 320.0 && b == 400.0, || format!("got {a} and {b}"))?;
    Ok(format!("800 ms at 2.5x = {a} ms, at 2x = {b} ms"))
}

fn bench_reports() -> Check {
    let mut config = PipelineConfig::new(crate::archdsl::named_config("lsa_ls2").ok_or("registry")?, VocoderKind::Mg);
    config.encoder = toy_encoder(config.encoder.arch.clone(), 16, 80);
    config.decoder = DecoderConfig {
        prenet_units: 32,
        lstm_units: 24,
        postnet_channels: 16,
        att_filters: 8,
        att_dim: 16,
        max_frames: 40,
        ..DecoderConfig::new(16)
    };
    let store = ok(Pipeline::seeded_store(&config, 1))?;
    let pipeline = ok(Pipeline::from_store(config, &store))?;
    let opts = BenchOptions {
        iters: 5,
        warmup: 1,
        ..BenchOptions::default()
    };
    let mut reports = Vec::new();
    for c in Component::ALL {
        let r = ok(bench_component(&pipeline, &store, c, &opts))?;
        ensure(r.rtf > 0.0 && r.rtf.is_finite(), || format!("{c}: rtf {}", r.rtf))?;
        let product = r.rtf * r.mean_ms;
        ensure((product - r.chunk_ms).abs() <= 1e-9 * r.chunk_ms, || {
            format!("{c}: rtf x mean = {product}, chunk {}", r.chunk_ms)
        })?;
        reports.push(r);
    }
    let encoder_rtf = reports[0].rtf;
    let delays = ok(delay_rows(pipeline.config().encoder.hop_ms, Some(encoder_rtf)))?;
    let emit = || -> std::result::Result<(Vec<u8>, Vec<u8>), String> {
        let (mut csv, mut svg) = (Vec::new(), Vec::new());
        ok(write_csv(&mut csv, &reports, &delays))?;
        ok(write_svg(&mut svg, &delays))?;
        Ok((csv, svg))
    };
    let first = emit()?;
    ensure(first == emit()?, || "report emission is not deterministic".into())?;
    let svg = String::from_utf8(first.1).map_err(|e| e.to_string())?;
    for label in ["Causal", "LSA1", "LSA2", "LSA_LS2", "Base"] {
        let wer = reference_wer(label).ok_or_else(|| format!("no WER for {label}"))?;
        ensure(svg.contains(&format!("{label} {wer}</text>")), || format!("SVG lacks {label} {wer}"))?;
    }
    let markers = svg.matches("<circle").count();
    ensure(markers == 5, || format!("{markers} markers"))?;
    Ok(reports
        .iter()
        .map(|r| format!("{} rtf {:.1}", r.component, r.rtf))
        .collect::<Vec<_>>()
        .join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_criteria_pass() {
        for id in [3, 4, 8] {
            let o = run_criterion(id).unwrap();
            assert!(o.passed, "{o}");
        }
        assert!(run_criterion(10).is_none());
    }

    #[test]
    fn outcome_line_format() {
        let o = Outcome {
            id: 8,
            title: "t",
            passed: false,
            detail: "d".into(),
            elapsed: Duration::from_millis(1500),
        };
        assert_eq!(o.to_string(), "criterion 8 FAIL: t (d; 1.5 s)");
    }
}
