use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};

/// Continuous-time sinusoidal encoding: `dim` components at scale `max_time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncodingConfig {
    pub dim: usize,
    pub max_time: f64,
}

impl TemporalEncodingConfig {
    pub fn new(dim: usize, max_time: f64) -> Result<Self> {
        let cfg = TemporalEncodingConfig { dim, max_time };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(BatError::Argument(format!("temporal encoding width {} must be even and positive", self.dim)));
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(BatError::Argument(format!("temporal scale {} must be positive", self.max_time)));
        }
        Ok(())
    }
}

/// Component `k` is `sin(t / T^(k/τ))` for even `k` and `cos(t / T^((k-1)/τ))`
/// for odd `k`, with `τ = cfg.dim` and `T = cfg.max_time`.
pub fn temporal_encoding(t: f64, cfg: &TemporalEncodingConfig) -> Vec<f64> {
    let tau = cfg.dim as f64;
    (0..cfg.dim)
        .map(|k| {
            let even = k - k % 2;
            let arg = t / cfg.max_time.powf(even as f64 / tau);
            if k % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect()
}

/// Integer-position encoding with the conventional scale 10000.
pub fn classic_positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    temporal_encoding(pos as f64, &TemporalEncodingConfig { dim, max_time: 10000.0 })
}
