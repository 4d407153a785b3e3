use crate::error::{Error, Result};
use crate::layout::TensorSpec;
use crate::nncore::{conv1d_same, observe_tensor, ActivationProbe, Linear, SitePoint, Tensor};
use crate::quant::WeightStore;

/// Location-sensitive attention.
///
/// `e[m] = v · tanh(Wq q + Wm mem[m] + Wf F[m] + b)`, where `F` convolves the
/// stacked previous and cumulative alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationAttention {
    pub wq: Linear,
    pub wm: Linear,
    pub wf: Linear,
    pub v: Tensor,
    pub b: Tensor,
    /// `[kernel, 2, filters]`, no bias.
    pub conv: Tensor,
}

/// Bias vectors of the three projections are folded into `b`, so the
/// linears carry zero biases.
fn unbiased(store: &WeightStore, name: &str, din: usize, dout: usize) -> Result<Linear> {
    Linear::new(name, store.tensor(name, &[din, dout])?, Tensor::zeros(&[dout]))
}

impl LocationAttention {
    pub fn layout(query_dim: usize, memory_dim: usize, att_dim: usize, filters: usize, kernel: usize) -> Vec<TensorSpec> {
        vec![
            TensorSpec::uniform("dec.att.wq", &[query_dim, att_dim]),
            TensorSpec::uniform("dec.att.wm", &[memory_dim, att_dim]),
            TensorSpec::uniform("dec.att.wf", &[filters, att_dim]),
            TensorSpec::uniform("dec.att.v", &[att_dim]),
            TensorSpec::uniform("dec.att.b", &[att_dim]),
            TensorSpec::uniform("dec.att.conv", &[kernel, 2, filters]),
        ]
    }

    pub fn from_store(
        store: &WeightStore,
        query_dim: usize,
        memory_dim: usize,
        att_dim: usize,
        filters: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("attention conv kernel {kernel} must be odd")));
        }
        Ok(Self {
            wq: unbiased(store, "dec.att.wq", query_dim, att_dim)?,
            wm: unbiased(store, "dec.att.wm", memory_dim, att_dim)?,
            wf: unbiased(store, "dec.att.wf", filters, att_dim)?,
            v: store.tensor("dec.att.v", &[att_dim])?,
            b: store.tensor("dec.att.b", &[att_dim])?,
            conv: store.tensor("dec.att.conv", &[kernel, 2, filters])?,
        })
    }

    /// `Wm · memory`, computed once per utterance.
    pub fn process_memory(&self, memory: &Tensor, probe: &mut dyn ActivationProbe) -> Result<Tensor> {
        self.wm.forward(memory, probe)
    }

    /// Returns the context vector and the new alignment.
    pub fn attend(
        &self,
        query: &Tensor,
        memory: &Tensor,
        processed: &Tensor,
        prev: &Tensor,
        cumulative: &Tensor,
        probe: &mut dyn ActivationProbe,
    ) -> Result<(Tensor, Tensor)> {
        let m = memory.rows();
        assert!(m > 0, "attention over an empty memory");
        let mut loc_in = Tensor::zeros(&[m, 2]);
        for i in 0..m {
            loc_in.row_mut(i).copy_from_slice(&[prev.data()[i], cumulative.data()[i]]);
        }
        observe_tensor(probe, "dec.att.conv", SitePoint::Input, &mut loc_in)?;
        let mut feats = conv1d_same(&loc_in, &self.conv, None)?;
        observe_tensor(probe, "dec.att.conv", SitePoint::Output, &mut feats)?;
        let loc = self.wf.forward(&feats, probe)?;
        let q = self.wq.forward(query, probe)?;

        let att_dim = self.v.len();
        let mut energies = vec![0.0f32; m];
        for (i, e) in energies.iter_mut().enumerate() {
            let (pm, lf) = (processed.row(i), loc.row(i));
            *e = (0..att_dim)
                .map(|j| self.v.data()[j] * (q.data()[j] + pm[j] + lf[j] + self.b.data()[j]).tanh())
                .sum();
        }
        let max = energies.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut weights: Vec<f32> = energies.iter().map(|e| (e - max).exp()).collect();
        let total: f32 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let d = memory.row_width();
        let mut ctx = vec![0.0f32; d];
        for (i, &w) in weights.iter().enumerate() {
            ctx.iter_mut().zip(memory.row(i)).for_each(|(c, v)| *c += w * v);
        }
        Ok((Tensor::vector(ctx), Tensor::vector(weights)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::seeded_store;
    use crate::nncore::{seeded_tensor, NoProbe};

    fn att(h: usize, d: usize) -> LocationAttention {
        let store = seeded_store(&LocationAttention::layout(h, d, 16, 4, 31), 5, 0).unwrap();
        LocationAttention::from_store(&store, h, d, 16, 4, 31).unwrap()
    }

    fn run(a: &LocationAttention, q: &Tensor, mem: &Tensor, prev: &Tensor, cum: &Tensor) -> (Tensor, Tensor) {
        let pm = a.process_memory(mem, &mut NoProbe).unwrap();
        a.attend(q, mem, &pm, prev, cum, &mut NoProbe).unwrap()
    }

    #[test]
    fn single_entry_memory() {
        let a = att(6, 3);
        let mem = seeded_tensor(&[1, 3], 1, 1.0);
        let (ctx, w) = run(&a, &seeded_tensor(&[6], 2, 1.0), &mem, &Tensor::zeros(&[1]), &Tensor::zeros(&[1]));
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(ctx.data(), mem.row(0));
    }

    #[test]
    fn identical_rows_give_that_row() {
        let a = att(6, 3);
        let row = [0.25f32, -1.5, 2.0];
        let mem = Tensor::new(&[5, 3], row.repeat(5)).unwrap();
        let prev = seeded_tensor(&[5], 3, 1.0).map(f32::abs);
        let (ctx, w) = run(&a, &seeded_tensor(&[6], 4, 1.0), &mem, &prev, &prev);
        assert!((w.data().iter().sum::<f32>() - 1.0).abs() <= 1e-5);
        for (c, r) in ctx.data().iter().zip(row) {
            assert!((c - r).abs() <= 1e-5);
        }
    }

    #[test]
    fn matches_dense_energy_loop() {
        let (h, d, m) = (6, 3, 7);
        let a = att(h, d);
        let q = seeded_tensor(&[h], 10, 1.0);
        let mem = seeded_tensor(&[m, d], 11, 1.0);
        let prev = seeded_tensor(&[m], 12, 0.5).map(f32::abs);
        let cum = seeded_tensor(&[m], 13, 2.0).map(f32::abs);
        let (ctx, w) = run(&a, &q, &mem, &prev, &cum);

        let (k, filters, att_dim) = (31usize, 4usize, 16usize);
        let pad = (k - 1) / 2;
        let mut e = vec![0.0f32; m];
        for i in 0..m {
            let mut f = vec![0.0f32; filters];
            for tap in 0..k {
                let src = i as isize + tap as isize - pad as isize;
                if src < 0 || src >= m as isize {
                    continue;
                }
                let s = src as usize;
                for (c, input) in [prev.data()[s], cum.data()[s]].into_iter().enumerate() {
                    for (o, fo) in f.iter_mut().enumerate() {
                        *fo += input * a.conv.data()[(tap * 2 + c) * filters + o];
                    }
                }
            }
            for j in 0..att_dim {
                let mut pre = a.b.data()[j];
                for x in 0..h {
                    pre += q.data()[x] * a.wq.w.data()[x * att_dim + j];
                }
                for x in 0..d {
                    pre += mem.row(i)[x] * a.wm.w.data()[x * att_dim + j];
                }
                for (x, fx) in f.iter().enumerate() {
                    pre += fx * a.wf.w.data()[x * att_dim + j];
                }
                e[i] += a.v.data()[j] * pre.tanh();
            }
        }
        let z: f32 = e.iter().map(|v| v.exp()).sum();
        for i in 0..m {
            assert!((w.data()[i] - e[i].exp() / z).abs() <= 1e-5);
        }
        for x in 0..d {
            let c: f32 = (0..m).map(|i| e[i].exp() / z * mem.row(i)[x]).sum();
            assert!((ctx.data()[x] - c).abs() <= 1e-5);
        }
    }
}
