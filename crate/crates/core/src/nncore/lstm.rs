use super::linear::gemm;
use super::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weights of one LSTM layer. Gate blocks are ordered input, forget,
/// candidate, output along the `4H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub name: String,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn new(name: impl Into<String>, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Result<Self> {
        let name = name.into();
        let ok = w_ih.rank() == 2
            && w_hh.rank() == 2
            && w_hh.shape()[1] == 4 * w_hh.shape()[0]
            && w_ih.shape()[1] == w_hh.shape()[1]
            && b.shape() == [w_hh.shape()[1]];
        if !ok {
            return Err(Error::Build(format!(
                "{name}: inconsistent LSTM shapes w_ih {:?} w_hh {:?} b {:?}",
                w_ih.shape(),
                w_hh.shape(),
                b.shape()
            )));
        }
        Ok(Self { name, w_ih, w_hh, b })
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// One LSTM cell update; returns the new hidden vector and state.
pub fn lstm_step(x: &[f32], state: &LstmState, params: &LstmParams) -> Result<(Tensor, LstmState)> {
    let hidden = params.hidden();
    if x.len() != params.input_dim() {
        return Err(Error::dim(
            "lstm_step",
            format!("input of {} vs w_ih {:?}", x.len(), params.w_ih.shape()),
        ));
    }
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::dim(
            "lstm_step",
            format!("state h {:?} c {:?} vs hidden {hidden}", state.h.shape(), state.c.shape()),
        ));
    }
    if !state.h.is_finite() || !state.c.is_finite() {
        return Err(Error::Numeric(format!("{}: non-finite LSTM state", params.name)));
    }

    let g4 = 4 * hidden;
    let mut gates = vec![0.0f32; g4];
    let mut rec = vec![0.0f32; g4];
    gemm(1, x.len(), g4, x, params.w_ih.data(), &mut gates);
    gemm(1, hidden, g4, state.h.data(), params.w_hh.data(), &mut rec);

    let mut h = vec![0.0f32; hidden];
    let mut c = vec![0.0f32; hidden];
    let b = params.b.data();
    for j in 0..hidden {
        let pre = |blk: usize| gates[blk * hidden + j] + rec[blk * hidden + j] + b[blk * hidden + j];
        let i = sigmoid(pre(0));
        let f = sigmoid(pre(1));
        let g = pre(2).tanh();
        let o = sigmoid(pre(3));
        c[j] = f * state.c.data()[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    let next = LstmState {
        h: Tensor::vector(h),
        c: Tensor::vector(c),
    };
    if !next.c.is_finite() || !next.h.is_finite() {
        return Err(Error::Numeric(format!("{}: LSTM update produced non-finite values", params.name)));
    }
    Ok((next.h.clone(), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::seeded_tensor;

    fn params(d: usize, h: usize, seed: u64, bound: f32) -> LstmParams {
        LstmParams::new(
            "lstm",
            seeded_tensor(&[d, 4 * h], seed, bound),
            seeded_tensor(&[h, 4 * h], seed + 1, bound),
            seeded_tensor(&[4 * h], seed + 2, bound),
        )
        .unwrap()
    }

    /// Scalar reference: every gate pre-activation summed element by element.
    fn reference_step(x: &[f32], h: &[f32], c: &[f32], p: &LstmParams) -> (Vec<f32>, Vec<f32>) {
        let hid = h.len();
        let mut hn = vec![0.0; hid];
        let mut cn = vec![0.0; hid];
        let col = |blk: usize, j: usize| blk * hid + j;
        for j in 0..hid {
            let mut pre = [0.0f32; 4];
            for (blk, p_blk) in pre.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (k, xv) in x.iter().enumerate() {
                    acc += xv * p.w_ih.data()[k * 4 * hid + col(blk, j)];
                }
                for (k, hv) in h.iter().enumerate() {
                    acc += hv * p.w_hh.data()[k * 4 * hid + col(blk, j)];
                }
                *p_blk = acc + p.b.data()[col(blk, j)];
            }
            let sig = |v: f32| 1.0 / (1.0 + (-v).exp());
            cn[j] = sig(pre[1]) * c[j] + sig(pre[0]) * pre[2].tanh();
            hn[j] = sig(pre[3]) * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn zero_network_stays_zero() {
        let p = LstmParams::new("z", Tensor::zeros(&[3, 8]), Tensor::zeros(&[2, 8]), Tensor::zeros(&[8])).unwrap();
        let (h, s) = lstm_step(&[1.0, -2.0, 3.0], &LstmState::zeros(2), &p).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_reference_over_five_steps() {
        let p = params(6, 5, 40, 0.5);
        let mut state = LstmState::zeros(5);
        let (mut rh, mut rc) = (vec![0.0; 5], vec![0.0; 5]);
        for step in 0..5 {
            let x = seeded_tensor(&[6], 100 + step, 1.0);
            let (h, next) = lstm_step(x.data(), &state, &p).unwrap();
            let (eh, ec) = reference_step(x.data(), &rh, &rc, &p);
            let dh = h.data().iter().zip(&eh).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            let dc = next.c.data().iter().zip(&ec).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            assert!(dh <= 1e-6 && dc <= 1e-6, "step {step}: dh {dh} dc {dc}");
            state = next;
            rh = eh;
            rc = ec;
        }
    }

    #[test]
    fn cell_growth_is_bounded() {
        let p = params(4, 6, 7, 3.0);
        let mut state = LstmState::zeros(6);
        for step in 0..50 {
            let x = seeded_tensor(&[4], step, 10.0);
            let (_, next) = lstm_step(x.data(), &state, &p).unwrap();
            for (new, old) in next.c.data().iter().zip(state.c.data()) {
                assert!(new.abs() <= old.abs() + 1.0 + 1e-6);
            }
            state = next;
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = params(2, 2, 1, 0.1);
        let mut state = LstmState::zeros(2);
        state.c.data_mut()[0] = f32::NAN;
        assert!(matches!(lstm_step(&[0.0, 0.0], &state, &p), Err(Error::Numeric(_))));
    }
}
