use std::f32::consts::PI;
use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::nncore::Tensor;

/// Below this window-energy sum a sample is left at zero by the inverse.
const NORM_FLOOR: f32 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub win_length: usize,
    pub n_fft: usize,
}

impl Default for StftConfig {
    /// 16 kHz, 12.5 ms hop, 50 ms Hann window, 1024-point FFT.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            hop: 200,
            win_length: 800,
            n_fft: 1024,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.n_fft || self.n_fft % 2 != 0 {
            return Err(Error::Config(format!(
                "need 0 < hop ({}) <= win_length ({}) <= n_fft ({}) with even n_fft",
                self.hop, self.win_length, self.n_fft
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Number of frames covering `samples` samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f32 / n as f32).cos())
        .collect()
}

/// Short-time Fourier transform with cached FFT plans.
///
/// Frame `f` analyzes samples `[f*hop, f*hop + win)` (zeros past the end),
/// windowed and zero-padded to `n_fft`; there is no centering.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f32>,
    forward: Arc<dyn RealToComplex<f32>>,
    inverse: Arc<dyn ComplexToReal<f32>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f32>::new();
        Ok(Self {
            config,
            window: hann(config.win_length),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    /// Spectrum of one frame; `samples` shorter than the window are zero-padded.
    pub fn analyze(&self, samples: &[f32]) -> Vec<Complex32> {
        let mut buf = vec![0.0f32; self.config.n_fft];
        for (i, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
            *b = samples.get(i).copied().unwrap_or(0.0) * w;
        }
        let mut out = self.forward.make_output_vec();
        self.forward
            .process(&mut buf, &mut out)
            .expect("buffer sizes come from the plan");
        out
    }

    /// Windowed inverse of one frame: `win_length` samples of `w · ifft(spec)`.
    pub fn synthesize(&self, spec: &[Complex32]) -> Vec<f32> {
        let mut input = spec.to_vec();
        input[0].im = 0.0;
        let last = input.len() - 1;
        input[last].im = 0.0;
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut input, &mut out)
            .expect("buffer sizes come from the plan");
        let scale = 1.0 / self.config.n_fft as f32;
        out.iter()
            .zip(&self.window)
            .map(|(v, w)| v * scale * w)
            .collect()
    }

    pub fn spectra(&self, wave: &[f32]) -> Vec<Vec<Complex32>> {
        let hop = self.config.hop;
        (0..self.config.frames_for(wave.len()))
            .map(|f| self.analyze(&wave[f * hop..]))
            .collect()
    }

    /// Magnitudes and phases, each `[frames, bins]`.
    pub fn stft(&self, wave: &[f32]) -> (Tensor, Tensor) {
        split_polar(&self.spectra(wave), self.config.bins())
    }

    /// Least-squares inverse: `Σ w·y_f / Σ w²` over the frames covering each
    /// sample. Output length is `frames * hop`.
    pub fn istft_spectra(&self, spectra: &[Vec<Complex32>]) -> Vec<f32> {
        let mut ola = OverlapAdd::new(self.clone());
        let mut out = Vec::with_capacity(spectra.len() * self.config.hop);
        for s in spectra {
            out.extend(ola.push(s));
        }
        out
    }

    pub fn istft(&self, magnitudes: &Tensor, phases: &Tensor) -> Result<Vec<f32>> {
        Ok(self.istft_spectra(&join_polar(magnitudes, phases)?))
    }
}

pub fn split_polar(spectra: &[Vec<Complex32>], bins: usize) -> (Tensor, Tensor) {
    let mut mags = Tensor::zeros(&[spectra.len(), bins]);
    let mut phases = Tensor::zeros(&[spectra.len(), bins]);
    for (f, s) in spectra.iter().enumerate() {
        for (k, c) in s.iter().enumerate() {
            mags.row_mut(f)[k] = c.norm();
            phases.row_mut(f)[k] = c.arg();
        }
    }
    (mags, phases)
}

pub fn join_polar(magnitudes: &Tensor, phases: &Tensor) -> Result<Vec<Vec<Complex32>>> {
    if magnitudes.shape() != phases.shape() || magnitudes.rank() != 2 {
        return Err(Error::dim(
            "istft",
            format!("magnitudes {:?} vs phases {:?}", magnitudes.shape(), phases.shape()),
        ));
    }
    Ok((0..magnitudes.rows())
        .map(|f| {
            magnitudes
                .row(f)
                .iter()
                .zip(phases.row(f))
                .map(|(&m, &p)| Complex32::from_polar(m, p))
                .collect()
        })
        .collect())
}

/// Streaming least-squares overlap-add. After frame `f` is pushed, samples
/// `[f*hop, (f+1)*hop)` receive no further contributions and are emitted.
#[derive(Debug, Clone)]
pub struct OverlapAdd {
    stft: Stft,
    num: Vec<f32>,
    norm: Vec<f32>,
}

impl OverlapAdd {
    pub fn new(stft: Stft) -> Self {
        let win = stft.config.win_length;
        Self {
            num: vec![0.0; win],
            norm: vec![0.0; win],
            stft,
        }
    }

    /// Adds a frame given as windowed time samples.
    pub fn push_frame(&mut self, frame: &[f32]) -> Vec<f32> {
        let hop = self.stft.config.hop;
        for (i, (v, w)) in frame.iter().zip(&self.stft.window).enumerate() {
            self.num[i] += v;
            self.norm[i] += w * w;
        }
        let out = self.num[..hop]
            .iter()
            .zip(&self.norm[..hop])
            .map(|(n, d)| if *d > NORM_FLOOR { n / d } else { 0.0 })
            .collect();
        self.num.drain(..hop);
        self.norm.drain(..hop);
        self.num.resize(self.stft.config.win_length, 0.0);
        self.norm.resize(self.stft.config.win_length, 0.0);
        out
    }

    pub fn push(&mut self, spec: &[Complex32]) -> Vec<f32> {
        let frame = self.stft.synthesize(spec);
        self.push_frame(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sine(freq: f32, n: usize, sr: f32) -> Vec<f32> {
        (0..n).map(|i| (2.0 * PI * freq * i as f32 / sr).sin()).collect()
    }

    #[test]
    fn zero_wave_has_zero_magnitudes() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let (m, _) = s.stft(&[0.0; 1600]);
        assert_eq!(m.shape(), &[8, 513]);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_round_trip_snr() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let x = sine(440.0, 16_000, 16_000.0);
        let (m, p) = s.stft(&x);
        let y = s.istft(&m, &p).unwrap();
        assert_eq!(y.len(), x.len());
        let (lo, hi) = (800, x.len() - 800);
        let sig: f64 = x[lo..hi].iter().map(|v| (*v as f64).powi(2)).sum();
        let err: f64 = x[lo..hi].iter().zip(&y[lo..hi]).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let snr = 10.0 * (sig / err).log10();
        assert!(snr >= 40.0, "snr {snr}");
        let rel = x[lo..hi].iter().zip(&y[lo..hi]).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(rel <= 1e-3, "max error {rel}");
    }

    #[test]
    fn parseval_per_frame() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let x: Vec<f32> = sine(440.0, 4000, 16_000.0)
            .iter()
            .zip(sine(1234.5, 4000, 16_000.0))
            .map(|(a, b)| a + 0.3 * b)
            .collect();
        for f in [3usize, 7, 11] {
            let seg = &x[f * 200..f * 200 + 800];
            let time: f64 = seg.iter().zip(s.window()).map(|(v, w)| ((v * w) as f64).powi(2)).sum();
            let spec = s.analyze(seg);
            let n = spec.len();
            let freq: f64 = spec
                .iter()
                .enumerate()
                .map(|(k, c)| c.norm_sqr() as f64 * if k == 0 || k == n - 1 { 1.0 } else { 2.0 })
                .sum::<f64>()
                / 1024.0;
            assert!((time - freq).abs() / time <= 1e-3, "frame {f}: {time} vs {freq}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = StftConfig {
            hop: 900,
            ..StftConfig::default()
        };
        assert!(Stft::new(bad).is_err());
    }

    #[test]
    fn streaming_overlap_add_matches_batch() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let x = sine(300.0, 3000, 16_000.0);
        let spectra = s.spectra(&x);
        let batch = s.istft_spectra(&spectra);
        let mut ola = OverlapAdd::new(s.clone());
        let mut streamed = Vec::new();
        for sp in &spectra {
            let block = ola.push(sp);
            assert_eq!(block.len(), 200);
            streamed.extend(block);
        }
        assert_eq!(streamed, batch);
    }
}
