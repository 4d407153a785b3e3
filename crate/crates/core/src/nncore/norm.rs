use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LN_EPSILON: f32 = 1e-6;

/// Per-row normalization over the last axis followed by `gain`/`bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::dim(
            "layer_norm",
            format!("input {:?} gain {:?} bias {:?}", x.shape(), gain.shape(), bias.shape()),
        ));
    }
    let mut out = x.clone();
    if d == 0 {
        return Ok(out);
    }
    let (g, b) = (gain.data(), bias.data());
    for row in out.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPSILON).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * g[j] + b[j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gain, &self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::seeded_tensor;

    #[test]
    fn constant_row_maps_to_bias() {
        let x = Tensor::filled(&[2, 5], 3.25);
        let y = layer_norm(&x, &Tensor::filled(&[5], 2.0), &Tensor::zeros(&[5])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_gain_row_mean_is_bias_mean() {
        let x = seeded_tensor(&[3, 16], 8, 4.0);
        let bias = seeded_tensor(&[16], 9, 1.0);
        let y = layer_norm(&x, &Tensor::filled(&[16], 1.0), &bias).unwrap();
        let bias_mean = bias.data().iter().sum::<f32>() / 16.0;
        for t in 0..3 {
            let m = y.row(t).iter().sum::<f32>() / 16.0;
            assert!((m - bias_mean).abs() < 1e-5);
        }
    }

    #[test]
    fn matches_two_pass_scalar_oracle() {
        let x = seeded_tensor(&[1, 64], 77, 3.0);
        let g = seeded_tensor(&[64], 78, 1.0);
        let b = seeded_tensor(&[64], 79, 1.0);
        let y = layer_norm(&x, &g, &b).unwrap();
        let row = x.row(0);
        let mut mean = 0.0f32;
        for v in row {
            mean += v;
        }
        mean /= 64.0;
        let mut var = 0.0f32;
        for v in row {
            var += (v - mean).powi(2);
        }
        var /= 64.0;
        for j in 0..64 {
            let e = (row[j] - mean) / (var + 1e-6).sqrt() * g.data()[j] + b.data()[j];
            assert!((y.data()[j] - e).abs() <= 1e-6);
        }
    }
}
