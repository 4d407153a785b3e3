use std::fmt;
use std::sync::Arc;

use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::nncore::{linear, Tensor};
use crate::vocoder::hann;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    /// 25 ms.
    pub win_length: usize,
    /// 10 ms.
    pub hop: usize,
    pub n_fft: usize,
    pub f_min: f32,
    pub f_max: f32,
    pub log_floor: f32,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 80,
            win_length: 400,
            hop: 160,
            n_fft: 512,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-5,
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.n_fft {
            return Err(Error::Config(format!(
                "front-end needs 0 < hop ({}) <= win_length ({}) <= n_fft ({})",
                self.hop, self.win_length, self.n_fft
            )));
        }
        if self.n_mels == 0 || !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(Error::Config("front-end needs mel bands over a non-empty frequency range".into()));
        }
        if self.f_max > self.sample_rate as f32 / 2.0 {
            return Err(Error::Config(format!(
                "f_max {} exceeds Nyquist for {} Hz",
                self.f_max, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Frames available after `samples` samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop
    }
}

fn hz_to_mel(f: f32) -> f32 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f32) -> f32 {
    700.0 * (10f32.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, `[n_fft/2 + 1, n_mels]`.
pub fn mel_filterbank(config: &FrontEndConfig) -> Tensor {
    let bins = config.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
    let edges: Vec<f32> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f32 / (config.n_mels + 1) as f32))
        .collect();
    let mut fb = Tensor::zeros(&[bins, config.n_mels]);
    for k in 0..bins {
        let f = k as f32 * config.sample_rate as f32 / config.n_fft as f32;
        for m in 0..config.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb.row_mut(k)[m] = w;
        }
    }
    fb
}

/// Log-mel features with causal framing: frame `i` ends at sample
/// `(i + 1)·hop` and reaches `win_length` samples back, zero-filled before
/// the start. A frame is available as soon as its last sample is.
#[derive(Clone)]
pub struct FrontEnd {
    config: FrontEndConfig,
    window: Vec<f32>,
    filterbank: Tensor,
    fft: Arc<dyn RealToComplex<f32>>,
}

impl fmt::Debug for FrontEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrontEnd").field("config", &self.config).finish()
    }
}

impl FrontEnd {
    pub fn new(config: FrontEndConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: hann(config.win_length),
            filterbank: mel_filterbank(&config),
            fft: RealFftPlanner::<f32>::new().plan_fft_forward(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> &FrontEndConfig {
        &self.config
    }

    /// `windows` holds consecutive `win_length` sample windows.
    fn frames(&self, windows: &[&[f32]]) -> Result<Tensor> {
        let bins = self.config.n_fft / 2 + 1;
        let mut power = Vec::with_capacity(windows.len() * bins);
        let mut buf = self.fft.make_input_vec();
        let mut spec = self.fft.make_output_vec();
        for w in windows {
            buf.fill(0.0);
            for ((b, x), h) in buf.iter_mut().zip(w.iter()).zip(&self.window) {
                *b = x * h;
            }
            self.fft
                .process(&mut buf, &mut spec)
                .expect("buffer sizes come from the plan");
            power.extend(spec.iter().map(|c| c.norm_sqr()));
        }
        let power = Tensor::new(&[windows.len(), bins], power)?;
        let mel = linear(&power, &self.filterbank, &Tensor::zeros(&[self.config.n_mels]))?;
        let floor = self.config.log_floor;
        Ok(mel.map(|v| v.max(floor).ln()))
    }

    /// Features of a whole utterance, `[floor(N / hop), n_mels]`.
    pub fn features(&self, audio: &[f32]) -> Result<Tensor> {
        let mut stream = self.stream();
        self.push(&mut stream, audio)
    }

    pub fn stream(&self) -> FrontEndStream {
        FrontEndStream {
            history: vec![0.0; self.config.win_length - self.config.hop],
            pending: Vec::with_capacity(self.config.hop),
        }
    }

    /// Appends samples and returns every frame that became complete.
    pub fn push(&self, state: &mut FrontEndStream, samples: &[f32]) -> Result<Tensor> {
        let (hop, win) = (self.config.hop, self.config.win_length);
        let mut buf = std::mem::take(&mut state.history);
        buf.extend_from_slice(&state.pending);
        buf.extend_from_slice(samples);
        let count = (buf.len() - (win - hop)) / hop;
        let windows: Vec<&[f32]> = (0..count).map(|i| &buf[i * hop..i * hop + win]).collect();
        let out = if count == 0 {
            Tensor::zeros(&[0, self.config.n_mels])
        } else {
            self.frames(&windows)?
        };
        let used = count * hop;
        state.history = buf[used..used + win - hop].to_vec();
        state.pending = buf[used + win - hop..].to_vec();
        Ok(out)
    }
}

/// Samples carried between [`FrontEnd::push`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndStream {
    history: Vec<f32>,
    pending: Vec<f32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fe() -> FrontEnd {
        FrontEnd::new(FrontEndConfig::default()).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        crate::nncore::seeded_tensor(&[n], seed, 0.5).into_data()
    }

    #[test]
    fn frame_count_is_causal() {
        let f = fe();
        assert_eq!(f.features(&noise(159, 1)).unwrap().shape(), &[0, 80]);
        assert_eq!(f.features(&noise(1280, 1)).unwrap().shape(), &[8, 80]);
        assert_eq!(f.features(&noise(1439, 1)).unwrap().rows(), 8);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let y = fe().features(&[0.0; 800]).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1e-5f32.ln()).abs() < 1e-6));
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let fb = mel_filterbank(&FrontEndConfig::default());
        assert_eq!(fb.shape(), &[257, 80]);
        assert!(fb.data().iter().all(|&w| (0.0..=1.0).contains(&w)));
        for m in 0..80 {
            let peak = (0..257).map(|k| fb.row(k)[m]).fold(0.0f32, f32::max);
            assert!(peak > 0.0, "band {m} is empty");
        }
        // DC and Nyquist sit on the outer edges
        assert!(fb.row(0).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn matches_direct_frame_computation() {
        let f = fe();
        let x = noise(800, 3);
        let y = f.features(&x).unwrap();
        // frame 2 covers samples [480 - 400, 480)
        let frame = &x[80..480];
        let mut re = vec![0.0f64; 257];
        let mut im = vec![0.0f64; 257];
        let w = hann(400);
        for (k, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            for (n, (&s, &h)) in frame.iter().zip(&w).enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * n) as f64 / 512.0;
                *r += (s * h) as f64 * ph.cos();
                *i += (s * h) as f64 * ph.sin();
            }
        }
        let fb = mel_filterbank(&FrontEndConfig::default());
        for m in [0usize, 17, 79] {
            let e: f64 = (0..257).map(|k| (re[k] * re[k] + im[k] * im[k]) * fb.row(k)[m] as f64).sum();
            let want = e.max(1e-5).ln() as f32;
            assert!((y.row(2)[m] - want).abs() <= 1e-3, "band {m}: {} vs {want}", y.row(2)[m]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn chunking_is_invisible(cuts in prop::collection::vec(0usize..700, 0..6)) {
            let f = fe();
            let x = noise(1700, 4);
            let whole = f.features(&x).unwrap();
            let mut cuts = cuts;
            cuts.push(0);
            cuts.push(x.len());
            cuts.sort();
            let mut st = f.stream();
            let mut parts = Tensor::zeros(&[0, 80]);
            for w in cuts.windows(2) {
                parts = parts.concat_rows(&f.push(&mut st, &x[w[0]..w[1]]).unwrap()).unwrap();
            }
            prop_assert_eq!(parts, whole);
        }
    }
}
