use super::probe::{ActivationProbe, SitePoint};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c[m×n] = a[m×k] · b[k×n]`, row-major and contiguous.
///
/// Each output row is computed with the same k-blocking regardless of `m`,
/// so a row's value never depends on how many other rows share the call.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the asserts above pin every buffer to its declared extent and
    // all three are contiguous row-major; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y[t] = x[t]·w + b` for `x: [T, Din]` (or a bare `[Din]` vector),
/// `w: [Din, Dout]`, `b: [Dout]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::dim("linear", format!("weight must be rank 2, got {:?}", w.shape())));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if b.shape() != [dout] {
        return Err(Error::dim(
            "linear",
            format!("bias {:?} does not match weight {:?}", b.shape(), w.shape()),
        ));
    }
    let (rows, vector) = match x.rank() {
        1 => (1, true),
        2 => (x.shape()[0], false),
        _ => return Err(Error::dim("linear", format!("input must be rank 1 or 2, got {:?}", x.shape()))),
    };
    let width = if vector { x.len() } else { x.shape()[1] };
    if width != din {
        return Err(Error::dim(
            "linear",
            format!("input {:?} vs weight {:?}", x.shape(), w.shape()),
        ));
    }
    let mut out = vec![0.0f32; rows * dout];
    gemm(rows, din, dout, x.data(), w.data(), &mut out);
    let bias = b.data();
    for row in out.chunks_exact_mut(dout.max(1)) {
        row.iter_mut().zip(bias).for_each(|(y, &bb)| *y += bb);
    }
    if vector {
        Ok(Tensor::vector(out))
    } else {
        Tensor::new(&[rows, dout], out)
    }
}

/// A named dense layer. The name doubles as the activation-site key used by
/// calibration and fake quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(name: impl Into<String>, w: Tensor, b: Tensor) -> Result<Self> {
        let name = name.into();
        if w.rank() != 2 || b.shape() != [w.shape()[1]] {
            return Err(Error::Build(format!(
                "{name}: weight {:?} / bias {:?} are inconsistent",
                w.shape(),
                b.shape()
            )));
        }
        Ok(Self { name, w, b })
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        if !probe.active() {
            return linear(x, &self.w, &self.b);
        }
        let mut input = x.clone();
        probe.observe(&self.name, SitePoint::Input, input.data_mut())?;
        let mut y = linear(&input, &self.w, &self.b)?;
        probe.observe(&self.name, SitePoint::Output, y.data_mut())?;
        Ok(y)
    }
}
