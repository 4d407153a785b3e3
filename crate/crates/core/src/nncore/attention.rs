use super::linear::Linear;
use super::probe::{ActivationProbe, NoProbe};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Visible context of self-attention around a position. `None` means
/// unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionWindow {
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl AttentionWindow {
    pub const UNBOUNDED: Option<usize> = None;

    pub fn new(left: Option<usize>, right: Option<usize>) -> Self {
        Self { left, right }
    }

    pub fn bounded(left: usize, right: usize) -> Self {
        Self {
            left: Some(left),
            right: Some(right),
        }
    }

    pub fn full() -> Self {
        Self {
            left: None,
            right: None,
        }
    }

    /// Inclusive range of positions `t` may attend to in a sequence of `len`.
    pub fn visible(&self, t: usize, len: usize) -> (usize, usize) {
        debug_assert!(t < len);
        let lo = self.left.map_or(0, |l| t.saturating_sub(l));
        let hi = self.right.map_or(len - 1, |r| (t + r).min(len - 1));
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MhsaParams {
    pub fn forward(
        &self,
        x: &Tensor,
        window: AttentionWindow,
        n_heads: usize,
        probe: &mut dyn ActivationProbe,
    ) -> Result<Tensor> {
        let d = self.wq.out_dim();
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::dim("local_mhsa", format!("width {d} not divisible by {n_heads} heads")));
        }
        let len = x.rows();
        let q = self.wq.forward(x, probe)?;
        let k = self.wk.forward(x, probe)?;
        let v = self.wv.forward(x, probe)?;
        let mut ctx = Tensor::zeros(&[len, d]);
        let mut scores = Vec::new();
        for t in 0..len {
            let (lo, hi) = window.visible(t, len);
            let keys = &k.data()[lo * d..(hi + 1) * d];
            let values = &v.data()[lo * d..(hi + 1) * d];
            attend_row(q.row(t), keys, values, n_heads, &mut scores, ctx.row_mut(t));
        }
        self.wo.forward(&ctx, probe)
    }
}

/// Windowed multi-head self-attention over `x: [T, D]`.
///
/// Position `t` sees `[t - left, t + right]` clipped to the sequence; scores
/// are scaled by `1/sqrt(head_dim)` before the softmax.
pub fn local_mhsa(x: &Tensor, window: AttentionWindow, n_heads: usize, params: &MhsaParams) -> Result<Tensor> {
    params.forward(x, window, n_heads, &mut NoProbe)
}

/// Attention of a single query over contiguous key/value rows.
///
/// The streaming encoder calls this with exactly the rows the batch path
/// uses, so both produce identical values.
pub(crate) fn attend_row(
    q: &[f32],
    keys: &[f32],
    values: &[f32],
    n_heads: usize,
    scores: &mut Vec<f32>,
    out: &mut [f32],
) {
    let d = q.len();
    let n = keys.len() / d;
    assert!(n > 0, "attention window must contain the query position");
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    out.fill(0.0);
    for h in 0..n_heads {
        let span = h * dh..(h + 1) * dh;
        let qh = &q[span.clone()];
        scores.clear();
        let mut max = f32::NEG_INFINITY;
        for j in 0..n {
            let kh = &keys[j * d + span.start..j * d + span.end];
            let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
            max = max.max(s);
            scores.push(s);
        }
        let mut total = 0.0f32;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let oh = &mut out[span.clone()];
        for (j, &p) in scores.iter().enumerate() {
            let w = p / total;
            let vh = &values[j * d + span.start..j * d + span.end];
            oh.iter_mut().zip(vh).for_each(|(o, v)| *o += w * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{linear, seeded_tensor};

    fn params(d: usize, seed: u64) -> MhsaParams {
        let mk = |name: &str, s: u64| {
            Linear::new(name, seeded_tensor(&[d, d], s, 0.3), seeded_tensor(&[d], s + 50, 0.1)).unwrap()
        };
        MhsaParams {
            wq: mk("q", seed),
            wk: mk("k", seed + 1),
            wv: mk("v", seed + 2),
            wo: mk("o", seed + 3),
        }
    }

    /// Full T×T attention with an additive -1e9 mask outside the window.
    fn dense_masked(x: &Tensor, window: AttentionWindow, heads: usize, p: &MhsaParams) -> Tensor {
        let (t_len, d) = (x.shape()[0], x.shape()[1]);
        let q = linear(x, &p.wq.w, &p.wq.b).unwrap();
        let k = linear(x, &p.wk.w, &p.wk.b).unwrap();
        let v = linear(x, &p.wv.w, &p.wv.b).unwrap();
        let dh = d / heads;
        let mut ctx = Tensor::zeros(&[t_len, d]);
        for h in 0..heads {
            for t in 0..t_len {
                let mut s = vec![0.0f32; t_len];
                for (j, sj) in s.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        dot += q.row(t)[c] * k.row(j)[c];
                    }
                    let visible = window.left.map_or(true, |l| j + l >= t) && window.right.map_or(true, |r| j <= t + r);
                    *sj = dot / (dh as f32).sqrt() + if visible { 0.0 } else { -1e9 };
                }
                let m = s.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let e: Vec<f32> = s.iter().map(|v| (v - m).exp()).collect();
                let z: f32 = e.iter().sum();
                for c in h * dh..(h + 1) * dh {
                    ctx.row_mut(t)[c] = (0..t_len).map(|j| e[j] / z * v.row(j)[c]).sum();
                }
            }
        }
        linear(&ctx, &p.wo.w, &p.wo.b).unwrap()
    }

    #[test]
    fn single_position_passes_value_through_output_projection() {
        let p = params(8, 1);
        let x = seeded_tensor(&[1, 8], 2, 1.0);
        let y = local_mhsa(&x, AttentionWindow::bounded(65, 5), 2, &p).unwrap();
        let v = linear(&x, &p.wv.w, &p.wv.b).unwrap();
        let e = linear(&v, &p.wo.w, &p.wo.b).unwrap();
        assert!(y.max_abs_diff(&e) <= 1e-6);
    }

    #[test]
    fn degenerate_window_is_position_local() {
        let p = params(8, 3);
        let x = seeded_tensor(&[6, 8], 4, 1.0);
        let w = AttentionWindow::bounded(0, 0);
        let base = local_mhsa(&x, w, 2, &p).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(3)[1] += 1.0;
        let moved = local_mhsa(&x2, w, 2, &p).unwrap();
        for t in 0..6 {
            let same = base.row(t) == moved.row(t);
            assert_eq!(same, t != 3, "position {t}");
        }
    }

    #[test]
    fn causal_window_ignores_future() {
        let p = params(8, 5);
        let x = seeded_tensor(&[12, 8], 6, 1.0);
        let w = AttentionWindow::bounded(4, 0);
        let base = local_mhsa(&x, w, 4, &p).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(7)[0] -= 2.0;
        let moved = local_mhsa(&x2, w, 4, &p).unwrap();
        for t in 0..7 {
            assert_eq!(base.row(t), moved.row(t));
        }
    }

    #[test]
    fn banded_matches_dense_masked_oracle() {
        let p = params(16, 7);
        let x = seeded_tensor(&[200, 16], 8, 1.0);
        for w in [AttentionWindow::bounded(65, 5), AttentionWindow::bounded(3, 0), AttentionWindow::full()] {
            let y = local_mhsa(&x, w, 4, &p).unwrap();
            let e = dense_masked(&x, w, 4, &p);
            assert!(y.max_abs_diff(&e) <= 1e-5, "{w:?}: {}", y.max_abs_diff(&e));
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let p = params(6, 1);
        assert!(local_mhsa(&Tensor::zeros(&[2, 6]), AttentionWindow::full(), 4, &p).is_err());
    }
}
