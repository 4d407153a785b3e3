//! `sts`: command-line front end for the streaming speech-to-speech engine.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use config::Settings;
use sts_core::acceptance;
use sts_core::archdsl::{analyze_delay, render_arch, resolve_arch, validate, ArchSpec, Severity};
use sts_core::bench::{bench_component, delay_rows, write_report, BenchOptions, BenchReport, Component, ReportFormat};
use sts_core::quant::{quantize_weights, QuantBits, Scope, WeightStore};
use sts_core::runtime::{Pipeline, PipelineConfig, WavSink};
use sts_core::vocoder::{read_wav, VocoderKind};

const AFTER_HELP: &str = "Named architectures: causal, lsa1, lsa2, ls1, ls2, lsa_ls1, lsa_ls2. \
Anything else given to --arch is parsed as a layer list such as \"2xCB SL_R3 CB_R2\".\n\
Exit status: 0 on success, 1 for usage or configuration errors, 2 when a run fails.";

#[derive(Debug, Parser)]
#[command(name = "sts", version, about = "Streaming speech-to-speech conversion", after_help = AFTER_HELP)]
struct Cli {
    /// Settings file of `key = value` lines (`#` starts a comment). Keys are
    /// the long flag names of the subcommand; flags override the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the look-ahead and algorithmic delay of an encoder layout.
    Analyze {
        /// Named architecture or layer list.
        #[arg(long)]
        arch: Option<String>,
        /// Encoder frame hop in milliseconds [default: 10].
        #[arg(long)]
        hop_ms: Option<f64>,
    },
    /// Convert a 16 kHz mono WAV file through the streaming pipeline.
    Convert {
        /// Input WAV file.
        #[arg(long = "in", value_name = "WAV")]
        input: Option<PathBuf>,
        /// Output WAV file.
        #[arg(long = "out", value_name = "WAV")]
        output: Option<PathBuf>,
        /// Named architecture or layer list.
        #[arg(long)]
        arch: Option<String>,
        /// Weight file; seeded random weights when absent.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Seed for random weights [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// gl (streaming Griffin-Lim), ngl (offline Griffin-Lim) or mg (MelGAN) [default: gl].
        #[arg(long)]
        vocoder: Option<String>,
        /// Cap on generated 12.5 ms frames [default: 1000].
        #[arg(long)]
        max_frames: Option<usize>,
        /// Audio fed to the encoder per call, in milliseconds [default: 80].
        #[arg(long)]
        chunk_ms: Option<f64>,
    },
    /// Write seeded random weights for an architecture to a weight file.
    Init {
        /// Named architecture or layer list.
        #[arg(long)]
        arch: Option<String>,
        /// gl, ngl or mg; MelGAN weights are only written for mg [default: gl].
        #[arg(long)]
        vocoder: Option<String>,
        /// Seed for the weights [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Output weight file.
        #[arg(long = "out", value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Quantize a weight file to int8 or int4.
    Quantize {
        /// Float weight file.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Output weight file.
        #[arg(long = "out", value_name = "FILE")]
        output: Option<PathBuf>,
        /// 8, or 4 (int4 for encoder matrices, int8 elsewhere) [default: 8].
        #[arg(long)]
        bits: Option<u32>,
        /// enc, dec or all [default: all].
        #[arg(long)]
        scope: Option<String>,
    },
    /// Time streaming calls and write CSV/SVG reports.
    Bench {
        /// encoder, decoder, vocoder, pipeline or all [default: all].
        #[arg(long)]
        part: Option<String>,
        /// Named architecture or layer list [default: lsa_ls2].
        #[arg(long)]
        arch: Option<String>,
        /// Weight file; seeded random weights when absent.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Seed for random weights and inputs [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// gl, ngl or mg [default: gl].
        #[arg(long)]
        vocoder: Option<String>,
        /// Timed calls per part [default: 50].
        #[arg(long)]
        iters: Option<usize>,
        /// Untimed calls before measuring [default: 5].
        #[arg(long)]
        warmup: Option<usize>,
        /// Audio per call in milliseconds [default: 80 for the encoder, 25 otherwise].
        #[arg(long)]
        chunk_ms: Option<f64>,
        /// CSV report path.
        #[arg(long, value_name = "CSV")]
        report: Option<PathBuf>,
        /// SVG plot of delay against reference WER.
        #[arg(long, value_name = "SVG")]
        svg: Option<PathBuf>,
    },
    /// Run the built-in acceptance checks.
    Selftest,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<sts_core::Error> for Failure {
    fn from(e: sts_core::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn pick<T>(r: Result<T, String>) -> Outcome<T> {
    r.map_err(usage)
}

fn required<T>(v: Option<T>, flag: &str) -> Outcome<T> {
    v.ok_or_else(|| usage(format!("--{flag} is required")))
}

fn arch(text: Option<String>, default: Option<&str>) -> Outcome<ArchSpec> {
    let text = match (text, default) {
        (Some(t), _) => t,
        (None, Some(d)) => d.to_string(),
        (None, None) => return Err(usage("--arch is required")),
    };
    resolve_arch(&text).map_err(|e| usage(format!("--arch {text:?}: {e}")))
}

fn parsed<T: std::str::FromStr<Err = sts_core::Error>>(v: Option<String>, flag: &str, default: &str) -> Outcome<T> {
    let v = v.unwrap_or_else(|| default.to_string());
    v.parse().map_err(|e| usage(format!("--{flag}: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The context chain, without causes whose text the previous link
/// already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn run(cli: Cli) -> Outcome<()> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path).map_err(usage)?,
        None => Settings::default(),
    };
    let s = &settings;
    match cli.command {
        Command::Analyze { arch: a, hop_ms } => {
            s.check_keys(&["arch", "hop-ms"]).map_err(usage)?;
            let spec = arch(pick(s.pick(a, "arch"))?, None)?;
            let hop_ms = pick(s.pick(hop_ms, "hop-ms"))?.unwrap_or(10.0);
            analyze(&spec, hop_ms)
        }
        Command::Convert {
            input,
            output,
            arch: a,
            weights,
            seed,
            vocoder,
            max_frames,
            chunk_ms,
        } => {
            s.check_keys(&["in", "out", "arch", "weights", "seed", "vocoder", "max-frames", "chunk-ms"])
                .map_err(usage)?;
            let input = required(pick(s.pick(input, "in"))?, "in")?;
            let output = required(pick(s.pick(output, "out"))?, "out")?;
            let spec = arch(pick(s.pick(a, "arch"))?, None)?;
            let weights = pick(s.pick(weights, "weights"))?;
            let seed = pick(s.pick(seed, "seed"))?.unwrap_or(0);
            let kind: VocoderKind = parsed(pick(s.pick(vocoder, "vocoder"))?, "vocoder", "gl")?;
            let max_frames = pick(s.pick(max_frames, "max-frames"))?;
            let chunk_ms = pick(s.pick(chunk_ms, "chunk-ms"))?.unwrap_or(80.0);
            if !(chunk_ms > 0.0) {
                return Err(usage("--chunk-ms must be positive"));
            }
            if max_frames == Some(0) {
                return Err(usage("--max-frames must be at least 1"));
            }
            let mut config = PipelineConfig::new(spec, kind);
            if let Some(m) = max_frames {
                config.decoder.max_frames = m;
            }
            convert(config, weights.as_deref(), seed, &input, &output, chunk_ms)
        }
        Command::Init {
            arch: a,
            vocoder,
            seed,
            output,
        } => {
            s.check_keys(&["arch", "vocoder", "seed", "out"]).map_err(usage)?;
            let spec = arch(pick(s.pick(a, "arch"))?, None)?;
            let kind: VocoderKind = parsed(pick(s.pick(vocoder, "vocoder"))?, "vocoder", "gl")?;
            let seed = pick(s.pick(seed, "seed"))?.unwrap_or(0);
            let output = required(pick(s.pick(output, "out"))?, "out")?;
            let store = Pipeline::seeded_store(&PipelineConfig::new(spec, kind), seed)?;
            store.save(&output).with_context(|| format!("writing {}", output.display()))?;
            println!("{} tensors, {} bytes", store.len(), store.serialized_size());
            Ok(())
        }
        Command::Quantize {
            weights,
            output,
            bits,
            scope,
        } => {
            s.check_keys(&["weights", "out", "bits", "scope"]).map_err(usage)?;
            let weights = required(pick(s.pick(weights, "weights"))?, "weights")?;
            let output = required(pick(s.pick(output, "out"))?, "out")?;
            let bits = pick(s.pick(bits, "bits"))?.unwrap_or(8);
            let bits = QuantBits::from_bits(bits).map_err(|e| usage(format!("--bits: {e}")))?;
            let scope: Scope = parsed(pick(s.pick(scope, "scope"))?, "scope", "all")?;
            quantize(&weights, &output, bits, scope)
        }
        Command::Bench {
            part,
            arch: a,
            weights,
            seed,
            vocoder,
            iters,
            warmup,
            chunk_ms,
            report,
            svg,
        } => {
            s.check_keys(&[
                "part", "arch", "weights", "seed", "vocoder", "iters", "warmup", "chunk-ms", "report", "svg",
            ])
            .map_err(usage)?;
            let part = pick(s.pick(part, "part"))?.unwrap_or_else(|| "all".into());
            let parts = if part.eq_ignore_ascii_case("all") {
                Component::ALL.to_vec()
            } else {
                vec![part.parse().map_err(|e| usage(format!("--part: {e}")))?]
            };
            let spec = arch(pick(s.pick(a, "arch"))?, Some("lsa_ls2"))?;
            let kind: VocoderKind = parsed(pick(s.pick(vocoder, "vocoder"))?, "vocoder", "gl")?;
            let defaults = BenchOptions::default();
            let options = BenchOptions {
                chunk_ms: pick(s.pick(chunk_ms, "chunk-ms"))?,
                iters: pick(s.pick(iters, "iters"))?.unwrap_or(defaults.iters),
                warmup: pick(s.pick(warmup, "warmup"))?.unwrap_or(defaults.warmup),
                seed: pick(s.pick(seed, "seed"))?.unwrap_or(0),
            };
            if options.iters == 0 {
                return Err(usage("--iters must be at least 1"));
            }
            let weights = pick(s.pick(weights, "weights"))?;
            let report = pick(s.pick(report, "report"))?;
            let svg = pick(s.pick(svg, "svg"))?;
            bench(
                PipelineConfig::new(spec, kind),
                weights.as_deref(),
                &parts,
                &options,
                report.as_deref(),
                svg.as_deref(),
            )
        }
        Command::Selftest => {
            s.check_keys(&[]).map_err(usage)?;
            selftest()
        }
    }
}

fn analyze(spec: &ArchSpec, hop_ms: f64) -> Outcome<()> {
    let report = analyze_delay(spec, hop_ms).map_err(|e| usage(format!("--hop-ms: {e}")))?;
    if let Some(name) = &spec.name {
        println!("name {name}");
    }
    println!("arch {}", render_arch(spec));
    println!("lookahead_frames {}", report.lookahead_frames);
    println!("delay_ms {}", report.delay_ms);
    println!("subsample {}", report.subsample_factor);
    println!("cb_count {}", report.cb_count);
    for (layer, frames) in &report.per_layer {
        if *frames > 0 {
            println!("layer {layer} lookahead {frames}");
        }
    }
    let findings = validate(spec);
    for f in &findings {
        eprintln!("{f}");
    }
    if findings.iter().any(|f| f.severity == Severity::Error) {
        return Err(Failure::Run(anyhow!("layout fails validation")));
    }
    Ok(())
}

fn pipeline(config: PipelineConfig, weights: Option<&Path>, seed: u64) -> anyhow::Result<(Pipeline, WeightStore)> {
    let store = match weights {
        Some(path) => WeightStore::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Pipeline::seeded_store(&config, seed)?,
    };
    let p = Pipeline::from_store(config, &store).context("weights do not fit the configuration")?;
    Ok((p, store))
}

fn convert(
    config: PipelineConfig,
    weights: Option<&Path>,
    seed: u64,
    input: &Path,
    output: &Path,
    chunk_ms: f64,
) -> Outcome<()> {
    let sample_rate = config.frontend.sample_rate;
    let (pipeline, _) = pipeline(config, weights, seed)?;
    let (audio, sr) = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    if sr != sample_rate {
        return Err(Failure::Run(anyhow!(
            "{} is sampled at {sr} Hz; expected {sample_rate} Hz",
            input.display()
        )));
    }
    let chunk = ((chunk_ms * sample_rate as f64 / 1000.0).round() as usize).max(1);
    let sink = WavSink::create(output, sample_rate).with_context(|| format!("creating {}", output.display()))?;
    let mut session = pipeline.session(sink);
    let mut memory = 0;
    for piece in audio.chunks(chunk) {
        memory += session.feed_audio(piece)?;
    }
    session.end_of_speech()?;
    session.generate()?;
    println!(
        "input {:.3} s, memory frames {}, decoder steps {}, output {:.3} s",
        audio.len() as f64 / sample_rate as f64,
        session.memory().rows().max(memory),
        session.decoder_steps(),
        session.samples_out() as f64 / sample_rate as f64
    );
    Ok(())
}

fn quantize(input: &Path, output: &Path, bits: QuantBits, scope: Scope) -> Outcome<()> {
    let store = WeightStore::load(input).with_context(|| format!("loading {}", input.display()))?;
    let q = quantize_weights(&store, bits, scope)?;
    q.save(output).with_context(|| format!("writing {}", output.display()))?;
    let (before, after) = (store.serialized_size(), q.serialized_size());
    println!(
        "{} tensors, {before} -> {after} bytes (ratio {:.3})",
        q.len(),
        after as f64 / before as f64
    );
    Ok(())
}

fn bench(
    config: PipelineConfig,
    weights: Option<&Path>,
    parts: &[Component],
    options: &BenchOptions,
    report: Option<&Path>,
    svg: Option<&Path>,
) -> Outcome<()> {
    let hop_ms = config.encoder.hop_ms;
    let (pipeline, store) = pipeline(config, weights, options.seed)?;
    let mut reports: Vec<BenchReport> = Vec::new();
    println!("{:<22} {:>9} {:>9} {:>9} {:>9} {:>8} {:>12}", "name", "part", "chunk_ms", "mean_ms", "p95_ms", "rtf", "size_bytes");
    for &part in parts {
        let r = bench_component(&pipeline, &store, part, options)?;
        println!(
            "{:<22} {:>9} {:>9.1} {:>9.3} {:>9.3} {:>8.2} {:>12}",
            r.name, r.component, r.chunk_ms, r.mean_ms, r.p95_ms, r.rtf, r.model_size_bytes
        );
        reports.push(r);
    }
    let encoder_rtf = reports.iter().find(|r| r.component == Component::Encoder).map(|r| r.rtf);
    let delays = delay_rows(hop_ms, encoder_rtf)?;
    if let Some(path) = report {
        write_report(path, ReportFormat::Csv, &reports, &delays).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = svg {
        write_report(path, ReportFormat::Svg, &reports, &delays).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn selftest() -> Outcome<()> {
    let mut failed = 0;
    for (id, _, _) in acceptance::CRITERIA {
        let o = acceptance::run_criterion(id).expect("listed criterion");
        println!("{o}");
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(Failure::Run(anyhow!("{failed} of {} criteria failed", acceptance::CRITERIA.len())));
    }
    Ok(())
}
