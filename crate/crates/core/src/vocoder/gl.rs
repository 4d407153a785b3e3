use realfft::num_complex::Complex32;

use super::stft::Stft;
use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub const OFFLINE_ITERS: usize = 60;
pub const STREAM_WINDOW: usize = 3;
pub const STREAM_ITERS: usize = 3;
/// Index inside the streaming window of the frame whose samples are emitted.
pub const STREAM_EMIT_INDEX: usize = 1;

pub(crate) fn clamp_unit(v: f32) -> f32 {
    v.clamp(-1.0, 1.0)
}

fn with_phase(mags: &[f32], phases: &[Complex32]) -> Vec<Complex32> {
    mags.iter()
        .zip(phases)
        .map(|(&m, &p)| {
            let n = p.norm();
            if n > 0.0 {
                p * (m / n)
            } else {
                Complex32::new(m, 0.0)
            }
        })
        .collect()
}

fn zero_phase(mags: &[f32]) -> Vec<Complex32> {
    mags.iter().map(|&m| Complex32::new(m, 0.0)).collect()
}

/// `‖ |S| − M ‖ / ‖M‖` over the full two-sided spectrum.
fn spectral_convergence(mags: &Tensor, spectra: &[Vec<Complex32>]) -> f64 {
    let (mut err, mut total) = (0.0f64, 0.0f64);
    for (f, s) in spectra.iter().enumerate() {
        let n = s.len();
        for (k, (c, &m)) in s.iter().zip(mags.row(f)).enumerate() {
            let weight = if k == 0 || k == n - 1 { 1.0 } else { 2.0 };
            err += weight * (c.norm() as f64 - m as f64).powi(2);
            total += weight * (m as f64).powi(2);
        }
    }
    if total == 0.0 {
        0.0
    } else {
        (err / total).sqrt()
    }
}

/// Magnitude-domain reconstruction SNR in dB: `−20·log10` of the spectral
/// convergence between `reference` and the STFT of `wave`, skipping `trim`
/// frames at each end. Insensitive to the phase Griffin-Lim cannot recover.
pub fn spectral_snr(stft: &Stft, reference: &Tensor, wave: &[f32], trim: usize) -> Result<f64> {
    check_width(stft, reference.row_width())?;
    let estimate = stft.spectra(wave);
    let frames = reference.rows();
    if estimate.len() != frames {
        return Err(Error::dim(
            "spectral_snr",
            format!("wave has {} frames, reference {}", estimate.len(), frames),
        ));
    }
    if 2 * trim >= frames {
        return Err(Error::Domain(format!("cannot trim {trim} frames from each end of {frames}")));
    }
    let kept = reference.slice_rows(trim, frames - trim);
    Ok(-20.0 * spectral_convergence(&kept, &estimate[trim..frames - trim]).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlOutput {
    pub wave: Vec<f32>,
    /// Spectral convergence after each iteration.
    pub convergence: Vec<f64>,
}

fn check_width(stft: &Stft, width: usize) -> Result<()> {
    let bins = stft.config().bins();
    if width != bins {
        return Err(Error::dim("griffin_lim", format!("frame has {width} bins, expected {bins}")));
    }
    Ok(())
}

/// Offline Griffin-Lim from zero phase.
pub fn gl_offline(stft: &Stft, magnitudes: &Tensor, n_iters: usize) -> Result<Vec<f32>> {
    Ok(gl_offline_traced(stft, magnitudes, n_iters)?.wave)
}

pub fn gl_offline_traced(stft: &Stft, magnitudes: &Tensor, n_iters: usize) -> Result<GlOutput> {
    if magnitudes.rows() == 0 {
        return Ok(GlOutput {
            wave: Vec::new(),
            convergence: Vec::new(),
        });
    }
    check_width(stft, magnitudes.row_width())?;
    let frames = magnitudes.rows();
    let mut spectra: Vec<Vec<Complex32>> = (0..frames).map(|f| zero_phase(magnitudes.row(f))).collect();
    let mut convergence = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let wave = stft.istft_spectra(&spectra);
        let estimate = stft.spectra(&wave);
        convergence.push(spectral_convergence(magnitudes, &estimate));
        for (f, s) in spectra.iter_mut().enumerate() {
            *s = with_phase(magnitudes.row(f), &estimate[f]);
        }
    }
    let wave = stft.istft_spectra(&spectra).into_iter().map(clamp_unit).collect();
    Ok(GlOutput { wave, convergence })
}

/// Streaming Griffin-Lim over a sliding window of three frames.
///
/// Each push appends a zero-phase frame and runs a few iterations on the
/// window against the frozen contribution of older, committed frames. The
/// hop owned by the middle frame is then final and is emitted, and the
/// oldest frame is committed with its current phase.
#[derive(Debug, Clone)]
pub struct GlState {
    stft: Stft,
    n_iters: usize,
    /// Window frames, oldest first: magnitudes and current spectra.
    window: Vec<(Vec<f32>, Vec<Complex32>)>,
    /// Committed overlap-add, starting at the oldest window frame.
    num: Vec<f32>,
    norm: Vec<f32>,
    frames_seen: usize,
    finished: bool,
}

impl GlState {
    pub fn new(stft: Stft) -> Self {
        Self::with_iters(stft, STREAM_ITERS)
    }

    pub fn with_iters(stft: Stft, n_iters: usize) -> Self {
        let win = stft.config().win_length;
        Self {
            stft,
            n_iters,
            window: Vec::with_capacity(STREAM_WINDOW),
            num: vec![0.0; win],
            norm: vec![0.0; win],
            frames_seen: 0,
            finished: false,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Frames a pushed frame waits before its samples are emitted.
    pub fn delay_frames(&self) -> usize {
        STREAM_WINDOW - 1 - STREAM_EMIT_INDEX
    }

    /// Least-squares signal of committed plus window frames, from the
    /// oldest window frame onwards.
    fn local_signal(&self) -> Vec<f32> {
        let hop = self.stft.config().hop;
        let len = self.stft.config().win_length + (self.window.len().max(1) - 1) * hop;
        let mut num = self.num.clone();
        let mut norm = self.norm.clone();
        num.resize(len, 0.0);
        norm.resize(len, 0.0);
        for (i, (_, spec)) in self.window.iter().enumerate() {
            let frame = self.stft.synthesize(spec);
            for (j, (v, w)) in frame.iter().zip(self.stft.window()).enumerate() {
                num[i * hop + j] += v;
                norm[i * hop + j] += w * w;
            }
        }
        num.iter()
            .zip(&norm)
            .map(|(n, d)| if *d > 1e-10 { n / d } else { 0.0 })
            .collect()
    }

    fn iterate(&mut self) {
        let hop = self.stft.config().hop;
        for _ in 0..self.n_iters {
            let local = self.local_signal();
            for (i, (mags, spec)) in self.window.iter_mut().enumerate() {
                let estimate = self.stft.analyze(&local[i * hop..]);
                *spec = with_phase(mags, &estimate);
            }
        }
    }

    /// Samples `[i·hop, (i+1)·hop)` of the local signal, clamped.
    fn block(&self, i: usize) -> Vec<f32> {
        let hop = self.stft.config().hop;
        self.local_signal()[i * hop..(i + 1) * hop]
            .iter()
            .map(|&v| clamp_unit(v))
            .collect()
    }

    fn commit_oldest(&mut self) {
        let hop = self.stft.config().hop;
        let (_, spec) = self.window.remove(0);
        let frame = self.stft.synthesize(&spec);
        for (j, (v, w)) in frame.iter().zip(self.stft.window()).enumerate() {
            self.num[j] += v;
            self.norm[j] += w * w;
        }
        let win = self.stft.config().win_length;
        self.num.drain(..hop);
        self.norm.drain(..hop);
        self.num.resize(win, 0.0);
        self.norm.resize(win, 0.0);
    }

    /// Adds one magnitude frame; returns `hop` samples once warm, nothing on
    /// the first push.
    pub fn push(&mut self, magnitudes: &[f32]) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::State("griffin-lim stream already flushed".into()));
        }
        check_width(&self.stft, magnitudes.len())?;
        self.window.push((magnitudes.to_vec(), zero_phase(magnitudes)));
        self.frames_seen += 1;
        self.iterate();
        let n = self.window.len();
        if n < STREAM_WINDOW - STREAM_EMIT_INDEX {
            return Ok(Vec::new());
        }
        // the newest frame starts after the emitted hop, so it is final
        let out = self.block(n - 1 - self.delay_frames());
        if n == STREAM_WINDOW {
            self.commit_oldest();
        }
        Ok(out)
    }

    /// Emits the hop of the newest frame, which has no successor.
    pub fn flush(&mut self) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::State("griffin-lim stream already flushed".into()));
        }
        self.finished = true;
        if self.window.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.block(self.window.len() - 1))
    }
}
