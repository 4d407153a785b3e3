use super::linear::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// The last `(kernel_size - 1) * dilation` input frames of a causal
/// convolution. All zeros at stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvState {
    pub tail: Tensor,
}

impl ConvState {
    pub fn new(kernel_size: usize, channels: usize) -> Self {
        Self::dilated(kernel_size, 1, channels)
    }

    pub fn dilated(kernel_size: usize, dilation: usize, channels: usize) -> Self {
        let len = kernel_size.saturating_sub(1) * dilation;
        Self {
            tail: Tensor::zeros(&[len, channels]),
        }
    }

    pub fn history_len(&self) -> usize {
        self.tail.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.tail.shape()[1]
    }

    fn check(&self, history: usize, channels: usize) -> Result<()> {
        if self.history_len() != history || self.channels() != channels {
            return Err(Error::State(format!(
                "conv state holds {}x{} frames, kernel needs {}x{}",
                self.history_len(),
                self.channels(),
                history,
                channels
            )));
        }
        Ok(())
    }

    /// Prepends the tail to `x` and keeps the newest frames as the next tail.
    fn extend(&mut self, x: &Tensor) -> Result<Tensor> {
        let ext = self.tail.concat_rows(x)?;
        let keep = self.history_len();
        let total = ext.shape()[0];
        self.tail = ext.slice_rows(total - keep, total);
        Ok(ext)
    }
}

fn kernel_dims(op: &'static str, kernel: &Tensor) -> Result<(usize, usize, usize)> {
    match kernel.shape() {
        &[k, din, dout] if k > 0 => Ok((k, din, dout)),
        s => Err(Error::dim(op, format!("kernel must be [K, Din, Dout], got {s:?}"))),
    }
}

fn add_bias(y: &mut [f32], bias: Option<&Tensor>, width: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [width] {
            return Err(Error::dim("conv bias", format!("{:?} vs width {width}", b.shape())));
        }
        for row in y.chunks_exact_mut(width) {
            row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
        }
    }
    Ok(())
}

/// Gathers `taps` rows at `stride` apart from `ext` into one im2col row per
/// output frame, then multiplies by the flattened kernel.
fn im2col_conv(
    ext: &Tensor,
    out_frames: usize,
    taps: usize,
    stride: usize,
    kernel: &Tensor,
    dout: usize,
) -> Vec<f32> {
    let din = ext.row_width();
    let mut cols = vec![0.0f32; out_frames * taps * din];
    for t in 0..out_frames {
        for k in 0..taps {
            let dst = &mut cols[(t * taps + k) * din..(t * taps + k + 1) * din];
            dst.copy_from_slice(ext.row(t + k * stride));
        }
    }
    let mut y = vec![0.0f32; out_frames * dout];
    gemm(out_frames, taps * din, dout, &cols, kernel.data(), &mut y);
    y
}

/// Causal 1-D convolution, `y[t] = b + Σ_k x[t - (K-1-k)] · kernel[k]`.
///
/// Frames before the stream start come from `state` (zeros initially), and
/// the state is advanced so chunked calls reproduce a single call exactly.
pub fn causal_conv1d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    state: &mut ConvState,
) -> Result<Tensor> {
    causal_conv1d_dilated(x, kernel, bias, 1, state)
}

pub fn causal_conv1d_dilated(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    dilation: usize,
    state: &mut ConvState,
) -> Result<Tensor> {
    let (k, din, dout) = kernel_dims("causal_conv1d", kernel)?;
    if x.rank() != 2 || x.shape()[1] != din {
        return Err(Error::dim(
            "causal_conv1d",
            format!("input {:?} vs kernel {:?}", x.shape(), kernel.shape()),
        ));
    }
    state.check((k - 1) * dilation, din)?;
    let t = x.shape()[0];
    let ext = state.extend(x)?;
    let mut y = im2col_conv(&ext, t, k, dilation, kernel, dout);
    add_bias(&mut y, bias, dout)?;
    Tensor::new(&[t, dout], y)
}

/// Per-channel causal convolution with `kernel: [K, D]`.
pub fn depthwise_causal_conv1d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    state: &mut ConvState,
) -> Result<Tensor> {
    let (k, d) = match kernel.shape() {
        &[k, d] if k > 0 => (k, d),
        s => return Err(Error::dim("depthwise_causal_conv1d", format!("kernel must be [K, D], got {s:?}"))),
    };
    if x.rank() != 2 || x.shape()[1] != d {
        return Err(Error::dim(
            "depthwise_causal_conv1d",
            format!("input {:?} vs kernel {:?}", x.shape(), kernel.shape()),
        ));
    }
    state.check(k - 1, d)?;
    let t = x.shape()[0];
    let ext = state.extend(x)?;
    let mut y = vec![0.0f32; t * d];
    for (i, out) in y.chunks_exact_mut(d).enumerate() {
        for tap in 0..k {
            let src = ext.row(i + tap);
            let w = kernel.row(tap);
            for c in 0..d {
                out[c] += w[c] * src[c];
            }
        }
    }
    add_bias(&mut y, bias, d)?;
    Tensor::new(&[t, d], y)
}

/// Non-causal convolution with symmetric zero padding `(K-1)/2`; `K` must be odd.
pub fn conv1d_same(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (k, din, dout) = kernel_dims("conv1d_same", kernel)?;
    if k % 2 == 0 {
        return Err(Error::dim("conv1d_same", format!("kernel size {k} must be odd")));
    }
    if x.rank() != 2 || x.shape()[1] != din {
        return Err(Error::dim(
            "conv1d_same",
            format!("input {:?} vs kernel {:?}", x.shape(), kernel.shape()),
        ));
    }
    let pad = (k - 1) / 2;
    let t = x.shape()[0];
    let zeros = Tensor::zeros(&[pad, din]);
    let ext = zeros.concat_rows(x)?.concat_rows(&zeros)?;
    let mut y = im2col_conv(&ext, t, k, 1, kernel, dout);
    add_bias(&mut y, bias, dout)?;
    Tensor::new(&[t, dout], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::seeded_tensor;

    #[test]
    fn delta_kernel_is_identity() {
        let d = 3;
        let mut kernel = Tensor::zeros(&[3, d, d]);
        // tap K-1 multiplies the current frame
        for c in 0..d {
            kernel.data_mut()[(2 * d + c) * d + c] = 1.0;
        }
        let x = seeded_tensor(&[10, d], 3, 1.0);
        let y = causal_conv1d(&x, &kernel, None, &mut ConvState::new(3, d)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn impulse_response_is_causal() {
        let mut x = Tensor::zeros(&[12, 2]);
        x.row_mut(5)[0] = 1.0;
        let kernel = seeded_tensor(&[4, 2, 3], 9, 1.0);
        let y = causal_conv1d(&x, &kernel, None, &mut ConvState::new(4, 2)).unwrap();
        for t in 0..5 {
            assert!(y.row(t).iter().all(|&v| v == 0.0));
        }
        assert!(y.row(5).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn chunked_equals_single_call() {
        let x = seeded_tensor(&[20, 4], 21, 1.0);
        let kernel = seeded_tensor(&[5, 4, 6], 22, 0.5);
        let bias = seeded_tensor(&[6], 23, 0.5);
        let full = causal_conv1d(&x, &kernel, Some(&bias), &mut ConvState::new(5, 4)).unwrap();
        let mut state = ConvState::new(5, 4);
        let a = causal_conv1d(&x.slice_rows(0, 7), &kernel, Some(&bias), &mut state).unwrap();
        let b = causal_conv1d(&x.slice_rows(7, 20), &kernel, Some(&bias), &mut state).unwrap();
        assert_eq!(a.concat_rows(&b).unwrap(), full);
    }

    #[test]
    fn dilated_chunks_equal_single_call() {
        let x = seeded_tensor(&[30, 3], 1, 1.0);
        let kernel = seeded_tensor(&[3, 3, 3], 2, 0.5);
        let full = causal_conv1d_dilated(&x, &kernel, None, 9, &mut ConvState::dilated(3, 9, 3)).unwrap();
        let mut state = ConvState::dilated(3, 9, 3);
        let mut parts = Tensor::zeros(&[0, 3]);
        for (s, e) in [(0, 1), (1, 2), (2, 17), (17, 30)] {
            let y = causal_conv1d_dilated(&x.slice_rows(s, e), &kernel, None, 9, &mut state).unwrap();
            parts = parts.concat_rows(&y).unwrap();
        }
        assert_eq!(parts, full);
    }

    #[test]
    fn channel_mismatch_is_state_error() {
        let kernel = seeded_tensor(&[3, 4, 2], 1, 1.0);
        let mut state = ConvState::new(3, 5);
        let err = causal_conv1d(&Tensor::zeros(&[2, 4]), &kernel, None, &mut state).unwrap_err();
        assert!(matches!(err, Error::State(_)), "{err}");
    }

    #[test]
    fn depthwise_chunking_is_exact() {
        let x = seeded_tensor(&[25, 8], 4, 1.0);
        let kernel = seeded_tensor(&[15, 8], 5, 0.3);
        let full = depthwise_causal_conv1d(&x, &kernel, None, &mut ConvState::new(15, 8)).unwrap();
        let mut state = ConvState::new(15, 8);
        let a = depthwise_causal_conv1d(&x.slice_rows(0, 3), &kernel, None, &mut state).unwrap();
        let b = depthwise_causal_conv1d(&x.slice_rows(3, 25), &kernel, None, &mut state).unwrap();
        assert_eq!(a.concat_rows(&b).unwrap(), full);
    }

    #[test]
    fn same_padding_is_symmetric_around_impulse() {
        let mut x = Tensor::zeros(&[11, 1]);
        x.row_mut(5)[0] = 1.0;
        let kernel = Tensor::filled(&[5, 1, 1], 1.0);
        let y = conv1d_same(&x, &kernel, None).unwrap();
        let support: Vec<usize> = (0..11).filter(|&t| y.row(t)[0] != 0.0).collect();
        assert_eq!(support, vec![3, 4, 5, 6, 7]);
    }
}
