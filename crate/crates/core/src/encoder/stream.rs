use super::{ConformerBlock, Encoder, EncoderLayer, Stacker};
use crate::error::{Error, Result};
use crate::nncore::{ActivationProbe, ConvState, Tensor};

/// Streaming state of one conformer block.
///
/// Positions `next_out..received` have been seen but not emitted; keys and
/// values are cached for positions `base..received`.
#[derive(Debug, Clone, PartialEq)]
struct BlockStream {
    received: usize,
    next_out: usize,
    base: usize,
    keys: Tensor,
    values: Tensor,
    pending_a: Tensor,
    pending_q: Tensor,
    conv: ConvState,
}

impl BlockStream {
    fn new(block: &ConformerBlock) -> Self {
        let d = block.width();
        Self {
            received: 0,
            next_out: 0,
            base: 0,
            keys: Tensor::zeros(&[0, d]),
            values: Tensor::zeros(&[0, d]),
            pending_a: Tensor::zeros(&[0, d]),
            pending_q: Tensor::zeros(&[0, d]),
            conv: block.conv.fresh_state(),
        }
    }

    fn push(&mut self, block: &ConformerBlock, x: &Tensor, last: bool, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        if x.rows() > 0 {
            let pre = block.pre_attention(x, probe)?;
            self.keys = self.keys.concat_rows(&pre.k)?;
            self.values = self.values.concat_rows(&pre.v)?;
            self.pending_a = self.pending_a.concat_rows(&pre.a)?;
            self.pending_q = self.pending_q.concat_rows(&pre.q)?;
            self.received += x.rows();
        }
        let ready = match (last, block.window.right) {
            (true, _) => self.received,
            (false, Some(r)) => self.received.saturating_sub(r),
            (false, None) => self.next_out,
        }
        .max(self.next_out);
        let n = ready - self.next_out;
        if n == 0 {
            return Ok(Tensor::zeros(&[0, block.width()]));
        }
        let q = self.pending_q.slice_rows(0, n);
        let a = self.pending_a.slice_rows(0, n);
        let ctx = block.attend(&q, self.next_out, &self.keys, &self.values, self.base, self.received);
        let y = block.post_attention(&a, &ctx, &mut self.conv, probe)?;

        let pending = self.pending_q.rows();
        self.pending_q = self.pending_q.slice_rows(n, pending);
        self.pending_a = self.pending_a.slice_rows(n, pending);
        self.next_out = ready;
        if let Some(left) = block.window.left {
            let keep_from = self.next_out.saturating_sub(left).max(self.base);
            let (drop, cached) = (keep_from - self.base, self.keys.rows());
            self.keys = self.keys.slice_rows(drop, cached);
            self.values = self.values.slice_rows(drop, cached);
            self.base = keep_from;
        }
        Ok(y)
    }
}

/// Streaming state of one stacker: inputs `base..received` are buffered.
#[derive(Debug, Clone, PartialEq)]
struct StackerStream {
    received: usize,
    next_out: usize,
    base: usize,
    buf: Tensor,
}

impl StackerStream {
    fn new(s: &Stacker) -> Self {
        Self {
            received: 0,
            next_out: 0,
            base: 0,
            buf: Tensor::zeros(&[0, s.width()]),
        }
    }

    fn push(&mut self, s: &Stacker, x: &Tensor, last: bool, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        if x.rows() > 0 {
            self.buf = self.buf.concat_rows(x)?;
            self.received += x.rows();
        }
        let ready = if last {
            self.received.div_ceil(2)
        } else {
            // outputs u with 2u + right < received
            self.received.saturating_sub(s.right).div_ceil(2)
        }
        .max(self.next_out);
        if ready == self.next_out {
            return Ok(Tensor::zeros(&[0, s.width()]));
        }
        let (base, received, buf) = (self.base, self.received, &self.buf);
        let stacked = s.gather(self.next_out..ready, |i| {
            (i >= base as isize && (i as usize) < received).then(|| buf.row(i as usize - base))
        });
        let y = s.proj.forward(&stacked, probe)?;
        self.next_out = ready;
        let keep_from = s.first_input(ready).max(0) as usize;
        let keep_from = keep_from.clamp(self.base, self.received);
        self.buf = self.buf.slice_rows(keep_from - self.base, self.buf.rows());
        self.base = keep_from;
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerStream {
    Block(BlockStream),
    Stacker(StackerStream),
}

/// Per-utterance streaming state of an [`Encoder`]: attention caches and
/// conv tails of every block, stacker buffers, and frame counters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStreamState {
    layers: Vec<LayerStream>,
    frames_in: usize,
    frames_out: usize,
    finished: bool,
}

impl EncoderStreamState {
    pub fn new(encoder: &Encoder) -> Self {
        let layers = encoder
            .layers()
            .iter()
            .map(|l| match l {
                EncoderLayer::Conformer(b) => LayerStream::Block(BlockStream::new(b)),
                EncoderLayer::Stacker(s) => LayerStream::Stacker(StackerStream::new(s)),
            })
            .collect();
        Self {
            layers,
            frames_in: 0,
            frames_out: 0,
            finished: false,
        }
    }

    pub fn frames_in(&self) -> usize {
        self.frames_in
    }

    pub fn frames_out(&self) -> usize {
        self.frames_out
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub(super) fn push(
        &mut self,
        encoder: &Encoder,
        chunk: &Tensor,
        last: bool,
        probe: &mut dyn ActivationProbe,
    ) -> Result<Tensor> {
        if self.finished {
            return Err(Error::State("encoder stream already finalized".into()));
        }
        if self.layers.len() != encoder.layers().len() {
            return Err(Error::State("stream state belongs to a different encoder".into()));
        }
        let d = encoder.output_dim();
        if chunk.rows() == 0 && !last {
            return Ok(Tensor::zeros(&[0, d]));
        }
        let mut x = encoder.in_proj.forward(chunk, probe)?;
        for (layer, state) in encoder.layers().iter().zip(self.layers.iter_mut()) {
            x = match (layer, state) {
                (EncoderLayer::Conformer(b), LayerStream::Block(s)) => s.push(b, &x, last, probe)?,
                (EncoderLayer::Stacker(sl), LayerStream::Stacker(s)) => s.push(sl, &x, last, probe)?,
                _ => return Err(Error::State("stream state belongs to a different encoder".into())),
            };
        }
        x.ensure_finite("streaming encoder output")?;
        self.frames_in += chunk.rows();
        self.frames_out += x.rows();
        self.finished = last;
        Ok(x)
    }
}
