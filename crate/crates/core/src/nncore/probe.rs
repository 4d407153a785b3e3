use super::tensor::Tensor;
use crate::error::Result;

/// Which side of a layer an activation site sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SitePoint {
    Input,
    Output,
}

impl SitePoint {
    pub fn suffix(self) -> &'static str {
        match self {
            SitePoint::Input => "in",
            SitePoint::Output => "out",
        }
    }
}

/// Canonical key of an activation site, e.g. `enc.block0.ffn1.w1:in`.
pub fn site_key(layer: &str, point: SitePoint) -> String {
    format!("{layer}:{}", point.suffix())
}

/// Hook invoked at every linear/conv/LSTM input and output.
///
/// Calibration records ranges through it; fake quantization rewrites the
/// values in place. The float path uses [`NoProbe`], which reports itself
/// inactive so layers skip the extra copy.
pub trait ActivationProbe {
    fn active(&self) -> bool {
        true
    }

    fn observe(&mut self, layer: &str, point: SitePoint, values: &mut [f32]) -> Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl ActivationProbe for NoProbe {
    fn active(&self) -> bool {
        false
    }

    fn observe(&mut self, _layer: &str, _point: SitePoint, _values: &mut [f32]) -> Result<()> {
        Ok(())
    }
}

/// Runs `probe` over a whole tensor, skipping the call when it is inactive.
pub fn observe_tensor(probe: &mut dyn ActivationProbe, layer: &str, point: SitePoint, t: &mut Tensor) -> Result<()> {
    if probe.active() {
        probe.observe(layer, point, t.data_mut())?;
    }
    Ok(())
}
