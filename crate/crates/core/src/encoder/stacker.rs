use super::block::load_linear;
use crate::error::Result;
use crate::layout::TensorSpec;
use crate::nncore::{ActivationProbe, Linear, Tensor};
use crate::quant::WeightStore;

/// Frame stacking with 2x subsampling.
///
/// With `right = 0` output `u` projects `[x[2u-1], x[2u]]` (zero before the
/// start); with `right = k > 0` it projects `x[2u..=2u+k]` (zero past the end).
#[derive(Debug, Clone, PartialEq)]
pub struct Stacker {
    pub proj: Linear,
    pub right: usize,
}

impl Stacker {
    pub fn stack_width(right: usize) -> usize {
        if right == 0 {
            2
        } else {
            right + 1
        }
    }

    pub fn layout(prefix: &str, d: usize, right: usize) -> Vec<TensorSpec> {
        vec![
            TensorSpec::uniform(format!("{prefix}.proj.w"), &[Self::stack_width(right) * d, d]),
            TensorSpec::uniform(format!("{prefix}.proj.b"), &[d]),
        ]
    }

    pub fn from_store(store: &WeightStore, prefix: &str, d: usize, right: usize) -> Result<Self> {
        let proj = load_linear(
            store,
            &format!("{prefix}.proj.w"),
            &format!("{prefix}.proj.b"),
            Self::stack_width(right) * d,
            d,
        )?;
        Ok(Self { proj, right })
    }

    pub fn width(&self) -> usize {
        self.proj.out_dim()
    }

    /// First input index stacked into output `u` (may be -1).
    pub fn first_input(&self, u: usize) -> isize {
        if self.right == 0 {
            2 * u as isize - 1
        } else {
            2 * u as isize
        }
    }

    /// Highest input index output `u` needs.
    pub fn last_input(&self, u: usize) -> usize {
        2 * u + self.right
    }

    /// Stacks outputs `us` using `row(i)`, which yields `None` outside the data.
    pub(crate) fn gather<'a>(
        &self,
        us: std::ops::Range<usize>,
        row: impl Fn(isize) -> Option<&'a [f32]>,
    ) -> Tensor {
        let d = self.width();
        let w = Self::stack_width(self.right);
        let mut out = Tensor::zeros(&[us.len(), w * d]);
        for (n, u) in us.enumerate() {
            let first = self.first_input(u);
            let dst = out.row_mut(n);
            for j in 0..w {
                if let Some(src) = row(first + j as isize) {
                    dst[j * d..(j + 1) * d].copy_from_slice(src);
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        let t = x.rows();
        let stacked = self.gather(0..t.div_ceil(2), |i| {
            (i >= 0 && (i as usize) < t).then(|| x.row(i as usize))
        });
        self.proj.forward(&stacked, probe)
    }
}
