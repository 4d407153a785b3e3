use crate::error::{Error, Result};
use crate::layout::TensorSpec;
use crate::nncore::{causal_conv1d, conv1d_same, observe_tensor, ActivationProbe, ConvState, SitePoint, Tensor};
use crate::quant::WeightStore;

pub const POSTNET_LAYERS: usize = 5;

/// Residual stack of 1-D convolutions, tanh after all but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct PostNet {
    /// `(name, kernel [K, Cin, Cout], bias [Cout])`, layers 1..=5.
    pub convs: Vec<(String, Tensor, Tensor)>,
    pub causal: bool,
}

fn channels(out_dim: usize, hidden: usize) -> [(usize, usize); POSTNET_LAYERS] {
    [
        (out_dim, hidden),
        (hidden, hidden),
        (hidden, hidden),
        (hidden, hidden),
        (hidden, out_dim),
    ]
}

impl PostNet {
    pub fn layout(out_dim: usize, hidden: usize, kernel: usize) -> Vec<TensorSpec> {
        channels(out_dim, hidden)
            .iter()
            .enumerate()
            .flat_map(|(i, &(cin, cout))| {
                [
                    TensorSpec::uniform(format!("dec.postnet.{}.w", i + 1), &[kernel, cin, cout]),
                    TensorSpec::uniform(format!("dec.postnet.{}.b", i + 1), &[cout]),
                ]
            })
            .collect()
    }

    pub fn from_store(store: &WeightStore, out_dim: usize, hidden: usize, kernel: usize, causal: bool) -> Result<Self> {
        if !causal && kernel % 2 == 0 {
            return Err(Error::Config(format!("non-causal postnet needs an odd kernel, got {kernel}")));
        }
        let convs = channels(out_dim, hidden)
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let name = format!("dec.postnet.{}", i + 1);
                let w = store.tensor(&format!("{name}.w"), &[kernel, cin, cout])?;
                let b = store.tensor(&format!("{name}.b"), &[cout])?;
                Ok((name, w, b))
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs, causal })
    }

    pub fn stream_states(&self) -> Vec<ConvState> {
        self.convs
            .iter()
            .map(|(_, w, _)| ConvState::new(w.shape()[0], w.shape()[1]))
            .collect()
    }

    /// `x + postnet(x)`. Causal mode threads `states` (fresh ones when
    /// `None`); supplying states to a non-causal postnet is an error.
    pub fn forward(
        &self,
        x: &Tensor,
        states: Option<&mut Vec<ConvState>>,
        probe: &mut dyn ActivationProbe,
    ) -> Result<Tensor> {
        let mut fresh;
        let states = match (self.causal, states) {
            (false, Some(_)) => {
                return Err(Error::State("a non-causal postnet cannot run on streaming states".into()))
            }
            (true, Some(s)) => Some(s),
            (true, None) => {
                fresh = self.stream_states();
                Some(&mut fresh)
            }
            (false, None) => None,
        };
        let mut h = x.clone();
        let mut states = states;
        for (i, (name, w, b)) in self.convs.iter().enumerate() {
            observe_tensor(probe, name, SitePoint::Input, &mut h)?;
            h = match states.as_deref_mut() {
                Some(s) => causal_conv1d(&h, w, Some(b), &mut s[i])?,
                None => conv1d_same(&h, w, Some(b))?,
            };
            observe_tensor(probe, name, SitePoint::Output, &mut h)?;
            if i + 1 < self.convs.len() {
                h = h.map(f32::tanh);
            }
        }
        x.add(&h)
    }
}
