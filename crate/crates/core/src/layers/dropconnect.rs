use rand::Rng;

use super::{ConvParams, Mode};
use crate::{Error, Result, Tensor};

/// Drop-connect configuration for one weight tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropConnectState {
    /// Probability of zeroing a weight, in `[0, 1)`.
    pub rate: f64,
    pub mode: Mode,
    pub rng_seed: u64,
}

impl DropConnectState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!("drop-connect rate must be in [0, 1), got {}", self.rate)));
        }
        Ok(())
    }

    /// Multiplicative mask over `len` weights: `0` for dropped weights,
    /// `1 / (1 - rate)` for survivors. `None` when the layer is a no-op
    /// (inference or zero rate).
    pub fn mask(&self, len: usize) -> Result<Option<Vec<f64>>> {
        self.validate()?;
        if self.mode == Mode::Infer || self.rate == 0.0 {
            return Ok(None);
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mut rng = crate::rng::stream(self.rng_seed, &[len as u64]);
        Ok(Some((0..len).map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { scale }).collect()))
    }
}

/// Apply drop-connect to the convolution weights. Biases are left untouched.
pub fn drop_connect(p: &ConvParams, s: &DropConnectState) -> Result<ConvParams> {
    let Some(mask) = s.mask(p.weight.numel())? else {
        return Ok(p.clone());
    };
    let data = p.weight.data().iter().zip(&mask).map(|(w, m)| w * m).collect();
    Ok(ConvParams { weight: Tensor::new(p.weight.shape(), data)?, ..p.clone() })
}
