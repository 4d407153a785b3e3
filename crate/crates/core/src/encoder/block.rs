use crate::error::Result;
use crate::layout::{norm_specs, TensorSpec};
use crate::nncore::{
    attend_row, depthwise_causal_conv1d, observe_tensor, sigmoid, swish, ActivationProbe, AttentionWindow,
    ConvState, LayerNorm, Linear, SitePoint, Tensor,
};
use crate::quant::WeightStore;

pub(crate) fn load_norm(store: &WeightStore, prefix: &str, d: usize) -> Result<LayerNorm> {
    Ok(LayerNorm {
        gain: store.tensor(&format!("{prefix}.g"), &[d])?,
        bias: store.tensor(&format!("{prefix}.b"), &[d])?,
    })
}

/// Dense layer from tensors `w` and `b`; the site takes the weight's name.
pub(crate) fn load_linear(store: &WeightStore, w: &str, b: &str, din: usize, dout: usize) -> Result<Linear> {
    Linear::new(w, store.tensor(w, &[din, dout])?, store.tensor(b, &[dout])?)
}

/// Pre-norm feed-forward: LN, expand, swish, project back.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn forward(&self, x: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        let h = self.w1.forward(&self.norm.forward(x)?, probe)?.map(swish);
        self.w2.forward(&h, probe)
    }
}

/// Pointwise GLU, causal depthwise conv, LN, swish, pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModule {
    pub name: String,
    pub norm: LayerNorm,
    pub pw1: Linear,
    pub dw: Tensor,
    pub dw_b: Tensor,
    pub inner_norm: LayerNorm,
    pub pw2: Linear,
}

impl ConvModule {
    pub fn kernel_size(&self) -> usize {
        self.dw.shape()[0]
    }

    pub fn fresh_state(&self) -> ConvState {
        ConvState::new(self.kernel_size(), self.dw.shape()[1])
    }

    pub fn forward(&self, x: &Tensor, state: &mut ConvState, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        let d = x.row_width();
        let h = self.pw1.forward(&self.norm.forward(x)?, probe)?;
        let mut gated = Tensor::zeros(&[x.rows(), d]);
        for t in 0..x.rows() {
            let (lin, gate) = h.row(t).split_at(d);
            for (o, (a, g)) in gated.row_mut(t).iter_mut().zip(lin.iter().zip(gate)) {
                *o = a * sigmoid(*g);
            }
        }
        let site = format!("{}.dw", self.name);
        observe_tensor(probe, &site, SitePoint::Input, &mut gated)?;
        let mut conv = depthwise_causal_conv1d(&gated, &self.dw, Some(&self.dw_b), state)?;
        observe_tensor(probe, &site, SitePoint::Output, &mut conv)?;
        let act = self.inner_norm.forward(&conv)?.map(swish);
        self.pw2.forward(&act, probe)
    }
}

/// One conformer block with windowed self-attention.
///
/// `a = x + FFN1(x)/2`, `c = a + MHSA(LN(a))`, `z = c + Conv(c)`,
/// `y = LN(z + FFN2(z)/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub att_norm: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub out_norm: LayerNorm,
    pub window: AttentionWindow,
    pub n_heads: usize,
}

/// Per-position results up to the attention inputs.
pub(crate) struct PreAttention {
    pub a: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

impl ConformerBlock {
    pub fn layout(prefix: &str, d: usize, ffn_expansion: usize, conv_kernel: usize) -> Vec<TensorSpec> {
        let f = d * ffn_expansion;
        let mut out = Vec::new();
        for ffn in ["ffn1", "ffn2"] {
            out.extend(norm_specs(&format!("{prefix}.ln_{ffn}"), d));
            out.push(TensorSpec::uniform(format!("{prefix}.{ffn}.w1"), &[d, f]));
            out.push(TensorSpec::uniform(format!("{prefix}.{ffn}.b1"), &[f]));
            out.push(TensorSpec::uniform(format!("{prefix}.{ffn}.w2"), &[f, d]));
            out.push(TensorSpec::uniform(format!("{prefix}.{ffn}.b2"), &[d]));
            if ffn == "ffn1" {
                out.extend(norm_specs(&format!("{prefix}.ln_att"), d));
                for p in ["q", "k", "v", "o"] {
                    out.push(TensorSpec::uniform(format!("{prefix}.att.w{p}"), &[d, d]));
                    out.push(TensorSpec::uniform(format!("{prefix}.att.b{p}"), &[d]));
                }
                out.extend(norm_specs(&format!("{prefix}.ln_conv"), d));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.pw1"), &[d, 2 * d]));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.pw1_b"), &[2 * d]));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.dw"), &[conv_kernel, d]));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.dw_b"), &[d]));
                out.extend(norm_specs(&format!("{prefix}.conv.ln"), d));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.pw2"), &[d, d]));
                out.push(TensorSpec::uniform(format!("{prefix}.conv.pw2_b"), &[d]));
            }
        }
        out.extend(norm_specs(&format!("{prefix}.ln_out"), d));
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_store(
        store: &WeightStore,
        prefix: &str,
        d: usize,
        ffn_expansion: usize,
        conv_kernel: usize,
        window: AttentionWindow,
        n_heads: usize,
    ) -> Result<Self> {
        let f = d * ffn_expansion;
        let ffn = |name: &str| -> Result<FeedForward> {
            let base = format!("{prefix}.{name}");
            Ok(FeedForward {
                norm: load_norm(store, &format!("{prefix}.ln_{name}"), d)?,
                w1: load_linear(store, &format!("{base}.w1"), &format!("{base}.b1"), d, f)?,
                w2: load_linear(store, &format!("{base}.w2"), &format!("{base}.b2"), f, d)?,
            })
        };
        let att = |p: &str| -> Result<Linear> {
            load_linear(store, &format!("{prefix}.att.w{p}"), &format!("{prefix}.att.b{p}"), d, d)
        };
        let conv_prefix = format!("{prefix}.conv");
        let conv = ConvModule {
            norm: load_norm(store, &format!("{prefix}.ln_conv"), d)?,
            pw1: load_linear(store, &format!("{conv_prefix}.pw1"), &format!("{conv_prefix}.pw1_b"), d, 2 * d)?,
            dw: store.tensor(&format!("{conv_prefix}.dw"), &[conv_kernel, d])?,
            dw_b: store.tensor(&format!("{conv_prefix}.dw_b"), &[d])?,
            inner_norm: load_norm(store, &format!("{conv_prefix}.ln"), d)?,
            pw2: load_linear(store, &format!("{conv_prefix}.pw2"), &format!("{conv_prefix}.pw2_b"), d, d)?,
            name: conv_prefix,
        };
        Ok(Self {
            ffn1: ffn("ffn1")?,
            att_norm: load_norm(store, &format!("{prefix}.ln_att"), d)?,
            wq: att("q")?,
            wk: att("k")?,
            wv: att("v")?,
            wo: att("o")?,
            conv,
            ffn2: ffn("ffn2")?,
            out_norm: load_norm(store, &format!("{prefix}.ln_out"), d)?,
            window,
            n_heads,
        })
    }

    pub fn width(&self) -> usize {
        self.wq.out_dim()
    }

    pub(crate) fn pre_attention(&self, x: &Tensor, probe: &mut dyn ActivationProbe) -> Result<PreAttention> {
        let a = x.add_scaled(&self.ffn1.forward(x, probe)?, 0.5)?;
        let n = self.att_norm.forward(&a)?;
        Ok(PreAttention {
            q: self.wq.forward(&n, probe)?,
            k: self.wk.forward(&n, probe)?,
            v: self.wv.forward(&n, probe)?,
            a,
        })
    }

    /// Context rows for queries `q` at positions `first..`, with keys/values
    /// holding positions `base..base + rows` and `len` the sequence length
    /// known so far.
    pub(crate) fn attend(&self, q: &Tensor, first: usize, keys: &Tensor, values: &Tensor, base: usize, len: usize) -> Tensor {
        let d = self.width();
        let mut ctx = Tensor::zeros(&[q.rows(), d]);
        let mut scores = Vec::new();
        for i in 0..q.rows() {
            let (lo, hi) = self.window.visible(first + i, len);
            let rows = (lo - base) * d..(hi + 1 - base) * d;
            attend_row(
                q.row(i),
                &keys.data()[rows.clone()],
                &values.data()[rows],
                self.n_heads,
                &mut scores,
                ctx.row_mut(i),
            );
        }
        ctx
    }

    pub(crate) fn post_attention(
        &self,
        a: &Tensor,
        ctx: &Tensor,
        conv_state: &mut ConvState,
        probe: &mut dyn ActivationProbe,
    ) -> Result<Tensor> {
        let c = a.add(&self.wo.forward(ctx, probe)?)?;
        let z = c.add(&self.conv.forward(&c, conv_state, probe)?)?;
        let y = z.add_scaled(&self.ffn2.forward(&z, probe)?, 0.5)?;
        let y = self.out_norm.forward(&y)?;
        y.ensure_finite("conformer block")?;
        Ok(y)
    }

    /// Whole-sequence forward pass.
    pub fn forward(&self, x: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        let pre = self.pre_attention(x, probe)?;
        let ctx = self.attend(&pre.q, 0, &pre.k, &pre.v, 0, x.rows());
        self.post_attention(&pre.a, &ctx, &mut self.conv.fresh_state(), probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::seeded_store;
    use crate::nncore::NoProbe;

    fn block(window: AttentionWindow, kernel: usize, seed: u64) -> ConformerBlock {
        let layout = ConformerBlock::layout("b", 16, 4, kernel);
        let store = seeded_store(&layout, seed, 0).unwrap();
        ConformerBlock::from_store(&store, "b", 16, 4, kernel, window, 4).unwrap()
    }

    /// Indices of output rows that differ from `base` after perturbing row `s`.
    fn influenced(b: &ConformerBlock, x: &Tensor, s: usize) -> Vec<usize> {
        let base = b.forward(x, &mut NoProbe).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(s)[0] += 1.0;
        let moved = b.forward(&x2, &mut NoProbe).unwrap();
        (0..x.rows()).filter(|&t| base.row(t) != moved.row(t)).collect()
    }

    #[test]
    fn degenerate_window_and_unit_kernel_are_position_local() {
        let b = block(AttentionWindow::bounded(0, 0), 1, 3);
        let x = crate::nncore::seeded_tensor(&[9, 16], 4, 1.0);
        assert_eq!(influenced(&b, &x, 4), vec![4]);
    }

    #[test]
    fn zero_look_ahead_is_causal() {
        let b = block(AttentionWindow::bounded(65, 0), 15, 5);
        let mut x = Tensor::zeros(&[12, 16]);
        x.row_mut(5)[2] = 1.0;
        let y = b.forward(&x, &mut NoProbe).unwrap();
        let y0 = b.forward(&Tensor::zeros(&[12, 16]), &mut NoProbe).unwrap();
        assert_eq!(y.slice_rows(0, 5), y0.slice_rows(0, 5));
        assert_ne!(y.row(5), y0.row(5));
    }

    #[test]
    fn receptive_field_matches_window_plus_conv_history() {
        let (left, right, k) = (65usize, 5usize, 15usize);
        let b = block(AttentionWindow::bounded(left, right), k, 7);
        let x = crate::nncore::seeded_tensor(&[200, 16], 8, 1.0);
        let t = 120;
        // y[t] depends on x[s] iff s lies in [t - left - (k-1), t + right]
        let depends: Vec<usize> = (0..200).filter(|&s| influenced(&b, &x, s).contains(&t)).collect();
        let expected: Vec<usize> = (t - left - (k - 1)..=t + right).collect();
        assert_eq!(depends, expected);
    }

    #[test]
    fn zero_input_output_is_normalized() {
        let b = block(AttentionWindow::bounded(65, 0), 15, 9);
        let y = b.forward(&Tensor::zeros(&[6, 16]), &mut NoProbe).unwrap();
        for t in 0..6 {
            let m = y.row(t).iter().sum::<f32>() / 16.0;
            assert!(m.abs() < 1e-5);
            assert!(y.row(t).iter().all(|v| v.abs() <= 4.0 + 1e-4), "{:?}", y.row(t));
        }
    }
}
