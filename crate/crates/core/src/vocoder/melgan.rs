use crate::error::{Error, Result};
use crate::layout::TensorSpec;
use crate::nncore::{causal_conv1d, causal_conv1d_dilated, leaky_relu, linear, ConvState, Tensor};
use crate::quant::WeightStore;

pub const UPSAMPLE_FACTORS: [usize; 4] = [5, 5, 4, 2];
pub const CHANNELS: [usize; 5] = [64, 32, 16, 8, 8];
pub const DILATIONS: [usize; 3] = [1, 3, 9];
pub const RES_KERNEL: usize = 3;
pub const OUT_KERNEL: usize = 7;

/// Samples produced per input frame.
pub fn upsample_total() -> usize {
    UPSAMPLE_FACTORS.iter().product()
}

fn lrelu(t: &Tensor) -> Tensor {
    t.clone().map(leaky_relu)
}

/// Causal transposed convolution with kernel `2r` and stride `r`:
/// `y[i·r + p] = x[i]·K[p] + x[i−1]·K[p + r] + b`.
///
/// Stored as a `[2r, Cin, Cout]` kernel and run as one matmul over the
/// concatenation `[x[i], x[i−1]]`.
#[derive(Debug, Clone, PartialEq)]
struct Upsample {
    factor: usize,
    cout: usize,
    /// `[2·Cin, r·Cout]`.
    w: Tensor,
    /// Bias tiled `r` times.
    b: Tensor,
}

impl Upsample {
    fn new(kernel: &Tensor, bias: &Tensor, factor: usize) -> Result<Self> {
        let (cin, cout) = (kernel.shape()[1], kernel.shape()[2]);
        let mut w = vec![0.0f32; 2 * cin * factor * cout];
        for half in 0..2 {
            for c in 0..cin {
                let dst = &mut w[(half * cin + c) * factor * cout..][..factor * cout];
                for p in 0..factor {
                    let tap = p + half * factor;
                    dst[p * cout..][..cout].copy_from_slice(&kernel.data()[(tap * cin + c) * cout..][..cout]);
                }
            }
        }
        Ok(Self {
            factor,
            cout,
            w: Tensor::new(&[2 * cin, factor * cout], w)?,
            b: Tensor::vector(bias.data().repeat(factor)),
        })
    }

    fn forward(&self, x: &Tensor, prev: &mut [f32]) -> Result<Tensor> {
        let (t, cin) = (x.rows(), x.row_width());
        let mut pairs = Vec::with_capacity(t * 2 * cin);
        for i in 0..t {
            pairs.extend_from_slice(x.row(i));
            pairs.extend_from_slice(prev);
            prev.copy_from_slice(x.row(i));
        }
        let y = linear(&Tensor::new(&[t, 2 * cin], pairs)?, &self.w, &self.b)?;
        y.reshape(&[t * self.factor, self.cout])
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResUnit {
    dilation: usize,
    conv_w: Tensor,
    conv_b: Tensor,
    pw_w: Tensor,
    pw_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    up: Upsample,
    res: Vec<ResUnit>,
}

/// Causal MelGAN-style generator: pointwise input projection, four
/// upsampling stages each followed by a dilated residual stack, and a
/// tanh-bounded output convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MelGan {
    in_w: Tensor,
    in_b: Tensor,
    stages: Vec<Stage>,
    out_w: Tensor,
    out_b: Tensor,
}

/// Streaming state: previous input frame of every upsampler, conv tails of
/// every causal convolution, and the one-frame look-ahead queue.
#[derive(Debug, Clone, PartialEq)]
pub struct MgState {
    prev: Vec<Vec<f32>>,
    res: Vec<Vec<ConvState>>,
    out: ConvState,
    queued: Option<Vec<f32>>,
    finished: bool,
}

impl MelGan {
    pub fn layout(bins: usize) -> Vec<TensorSpec> {
        let mut specs = vec![
            TensorSpec::uniform("voc.mg.in.w", &[bins, CHANNELS[0]]),
            TensorSpec::uniform("voc.mg.in.b", &[CHANNELS[0]]),
        ];
        for (s, &r) in UPSAMPLE_FACTORS.iter().enumerate() {
            let (cin, cout) = (CHANNELS[s], CHANNELS[s + 1]);
            specs.push(TensorSpec::uniform(format!("voc.mg.up{s}.w"), &[2 * r, cin, cout]));
            specs.push(TensorSpec::uniform(format!("voc.mg.up{s}.b"), &[cout]));
            for j in 0..DILATIONS.len() {
                let p = format!("voc.mg.up{s}.res{j}");
                specs.push(TensorSpec::uniform(format!("{p}.conv.w"), &[RES_KERNEL, cout, cout]));
                specs.push(TensorSpec::uniform(format!("{p}.conv.b"), &[cout]));
                specs.push(TensorSpec::uniform(format!("{p}.pw.w"), &[cout, cout]));
                specs.push(TensorSpec::uniform(format!("{p}.pw.b"), &[cout]));
            }
        }
        specs.push(TensorSpec::uniform("voc.mg.out.w", &[OUT_KERNEL, CHANNELS[4], 1]));
        specs.push(TensorSpec::uniform("voc.mg.out.b", &[1]));
        specs
    }

    pub fn from_store(store: &WeightStore, bins: usize) -> Result<Self> {
        let mut stages = Vec::with_capacity(UPSAMPLE_FACTORS.len());
        for (s, &r) in UPSAMPLE_FACTORS.iter().enumerate() {
            let (cin, cout) = (CHANNELS[s], CHANNELS[s + 1]);
            let up = Upsample::new(
                &store.tensor(&format!("voc.mg.up{s}.w"), &[2 * r, cin, cout])?,
                &store.tensor(&format!("voc.mg.up{s}.b"), &[cout])?,
                r,
            )?;
            let res = DILATIONS
                .iter()
                .enumerate()
                .map(|(j, &dilation)| {
                    let p = format!("voc.mg.up{s}.res{j}");
                    Ok(ResUnit {
                        dilation,
                        conv_w: store.tensor(&format!("{p}.conv.w"), &[RES_KERNEL, cout, cout])?,
                        conv_b: store.tensor(&format!("{p}.conv.b"), &[cout])?,
                        pw_w: store.tensor(&format!("{p}.pw.w"), &[cout, cout])?,
                        pw_b: store.tensor(&format!("{p}.pw.b"), &[cout])?,
                    })
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { up, res });
        }
        Ok(Self {
            in_w: store.tensor("voc.mg.in.w", &[bins, CHANNELS[0]])?,
            in_b: store.tensor("voc.mg.in.b", &[CHANNELS[0]])?,
            stages,
            out_w: store.tensor("voc.mg.out.w", &[OUT_KERNEL, CHANNELS[4], 1])?,
            out_b: store.tensor("voc.mg.out.b", &[1])?,
        })
    }

    pub fn bins(&self) -> usize {
        self.in_w.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        let stage: usize = self
            .stages
            .iter()
            .map(|s| {
                s.up.w.len()
                    + s.up.cout
                    + s.res
                        .iter()
                        .map(|r| r.conv_w.len() + r.conv_b.len() + r.pw_w.len() + r.pw_b.len())
                        .sum::<usize>()
            })
            .sum();
        self.in_w.len() + self.in_b.len() + stage + self.out_w.len() + self.out_b.len()
    }

    pub fn stream_state(&self) -> MgState {
        MgState {
            prev: self.stages.iter().map(|s| vec![0.0; s.up.w.shape()[0] / 2]).collect(),
            res: self
                .stages
                .iter()
                .map(|s| {
                    s.res
                        .iter()
                        .map(|r| ConvState::dilated(RES_KERNEL, r.dilation, s.up.cout))
                        .collect()
                })
                .collect(),
            out: ConvState::new(OUT_KERNEL, CHANNELS[4]),
            queued: None,
            finished: false,
        }
    }

    /// Runs the generator on `frames: [T, bins]`, threading `state`'s conv
    /// tails but not its queue.
    fn run(&self, frames: &Tensor, state: &mut MgState) -> Result<Vec<f32>> {
        if frames.rows() == 0 {
            return Ok(Vec::new());
        }
        let mut x = linear(frames, &self.in_w, &self.in_b)?;
        for (s, stage) in self.stages.iter().enumerate() {
            x = stage.up.forward(&lrelu(&x), &mut state.prev[s])?;
            for (unit, conv_state) in stage.res.iter().zip(&mut state.res[s]) {
                let h = causal_conv1d_dilated(&lrelu(&x), &unit.conv_w, Some(&unit.conv_b), unit.dilation, conv_state)?;
                let h = linear(&lrelu(&h), &unit.pw_w, &unit.pw_b)?;
                x = x.add(&h)?;
            }
        }
        let y = causal_conv1d(&lrelu(&x), &self.out_w, Some(&self.out_b), &mut state.out)?;
        Ok(y.into_data().into_iter().map(f32::tanh).collect())
    }

    /// Whole-utterance generation.
    pub fn generate(&self, frames: &Tensor) -> Result<Vec<f32>> {
        self.check(frames)?;
        self.run(frames, &mut self.stream_state())
    }

    fn check(&self, frames: &Tensor) -> Result<()> {
        if frames.rank() != 2 || frames.row_width() != self.bins() {
            return Err(Error::dim(
                "melgan",
                format!("frames {:?}, generator expects [T, {}]", frames.shape(), self.bins()),
            ));
        }
        Ok(())
    }

    /// Streams `frames` (normally a pair). The newest frame is held back, so
    /// a warm call on two frames returns `2 × 200` samples and the first call
    /// returns 200.
    pub fn push(&self, state: &mut MgState, frames: &Tensor) -> Result<Vec<f32>> {
        if state.finished {
            return Err(Error::State("melgan stream already flushed".into()));
        }
        self.check(frames)?;
        if frames.rows() == 0 {
            return Ok(Vec::new());
        }
        let mut ready = Tensor::zeros(&[0, self.bins()]);
        if let Some(q) = state.queued.take() {
            ready.push_row(&q)?;
        }
        let last = frames.rows() - 1;
        ready = ready.concat_rows(&frames.slice_rows(0, last))?;
        state.queued = Some(frames.row(last).to_vec());
        self.run(&ready, state)
    }

    /// Releases the queued frame.
    pub fn flush(&self, state: &mut MgState) -> Result<Vec<f32>> {
        if state.finished {
            return Err(Error::State("melgan stream already flushed".into()));
        }
        state.finished = true;
        match state.queued.take() {
            Some(q) => self.run(&Tensor::new(&[1, q.len()], q)?, state),
            None => Ok(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::seeded_store;
    use crate::nncore::seeded_tensor;
    use crate::quant::StoreEntry;
    use proptest::prelude::*;

    const BINS: usize = 513;

    fn melgan() -> MelGan {
        MelGan::from_store(&seeded_store(&MelGan::layout(BINS), 9, 3).unwrap(), BINS).unwrap()
    }

    fn streamed(mg: &MelGan, frames: &Tensor, sizes: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut st = mg.stream_state();
        let (mut out, mut lens, mut at) = (Vec::new(), Vec::new(), 0);
        for &n in sizes {
            let chunk = mg.push(&mut st, &frames.slice_rows(at, at + n)).unwrap();
            lens.push(chunk.len());
            out.extend(chunk);
            at += n;
        }
        let tail = mg.flush(&mut st).unwrap();
        lens.push(tail.len());
        out.extend(tail);
        (out, lens)
    }

    #[test]
    fn total_upsampling_is_one_hop() {
        assert_eq!(upsample_total(), 200);
    }

    #[test]
    fn zero_weights_give_zero_samples() {
        let mut store = seeded_store(&MelGan::layout(BINS), 1, 3).unwrap();
        for spec in MelGan::layout(BINS) {
            store.replace(&spec.name, StoreEntry::F32(Tensor::zeros(&spec.shape))).unwrap();
        }
        let mg = MelGan::from_store(&store, BINS).unwrap();
        let y = mg.generate(&seeded_tensor(&[3, BINS], 2, 1.0)).unwrap();
        assert_eq!(y.len(), 600);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_conv_matches_scatter_definition() {
        let (cin, cout, r, t) = (3, 2, 4, 5);
        let k = seeded_tensor(&[2 * r, cin, cout], 3, 1.0);
        let b = seeded_tensor(&[cout], 4, 1.0);
        let x = seeded_tensor(&[t, cin], 5, 1.0);
        let up = Upsample::new(&k, &b, r).unwrap();
        let y = up.forward(&x, &mut [0.0; 3]).unwrap();
        // scatter each input frame across 2r outputs, truncated to t·r
        let mut want = vec![0.0f32; (t + 1) * r * cout];
        for i in 0..t {
            for tap in 0..2 * r {
                for o in 0..cout {
                    want[(i * r + tap) * cout + o] +=
                        (0..cin).map(|c| x.row(i)[c] * k.data()[(tap * cin + c) * cout + o]).sum::<f32>();
                }
            }
        }
        for n in 0..t * r {
            for o in 0..cout {
                let w = want[n * cout + o] + b.data()[o];
                assert!((y.row(n)[o] - w).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn pair_calls_emit_two_hops_when_warm() {
        let mg = melgan();
        let frames = seeded_tensor(&[12, BINS], 7, 1.0);
        let (out, lens) = streamed(&mg, &frames, &[2; 6]);
        assert_eq!(lens, vec![200, 400, 400, 400, 400, 400, 200]);
        let batch = mg.generate(&frames).unwrap();
        assert_eq!(out.len(), batch.len());
        let diff = out.iter().zip(&batch).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5, "max diff {diff}");
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn state_reuse_after_flush_is_rejected() {
        let mg = melgan();
        let mut st = mg.stream_state();
        mg.flush(&mut st).unwrap();
        assert!(mg.push(&mut st, &Tensor::zeros(&[2, BINS])).is_err());
        assert!(mg.generate(&Tensor::zeros(&[2, 10])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn any_chunking_matches_batch(sizes in prop::collection::vec(0usize..4, 1..6), seed in 0u64..100) {
            let mg = melgan();
            let total: usize = sizes.iter().sum();
            let frames = seeded_tensor(&[total, BINS], seed, 1.0);
            let (out, _) = streamed(&mg, &frames, &sizes);
            let batch = mg.generate(&frames).unwrap();
            prop_assert_eq!(out.len(), batch.len());
            for (a, b) in out.iter().zip(&batch) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }
    }
}
