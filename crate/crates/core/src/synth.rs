//! Synthetic weight/activation pairs for desk-scale experiments.

use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::blc::CalibrationBatch;
use crate::error::{FlrqError, Result};
use crate::linalg::Matrix;
use crate::rng::SketchRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Heavy-tailed weights, `nu > 2`.
    StudentT { nu: f64 },
    /// Gaussian weights and activations with `count` input channels scaled
    /// by `boost` on both sides.
    OutlierChannels { count: usize, boost: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub family: Family,
    pub seed: u64,
    /// Calibration tokens (columns of `X`).
    pub tokens: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.tokens == 0 {
            return Err(FlrqError::param("dims", "m, n and tokens must be >= 1"));
        }
        match self.family {
            Family::Gaussian => Ok(()),
            Family::StudentT { nu } if nu > 2.0 && nu.is_finite() => Ok(()),
            Family::StudentT { nu } => Err(FlrqError::param("nu", format!("must be > 2, got {nu}"))),
            Family::OutlierChannels { boost, .. } if !(boost > 1.0) || !boost.is_finite() => {
                Err(FlrqError::param("boost", format!("must be > 1, got {boost}")))
            }
            Family::OutlierChannels { count, .. } if count > self.n => Err(FlrqError::param(
                "count",
                format!("cannot boost {count} of {} channels", self.n),
            )),
            Family::OutlierChannels { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthLayer {
    /// m × n weights.
    pub weight: Matrix,
    /// n × tokens activations.
    pub calibration: CalibrationBatch,
    /// Boosted input channels, ascending (empty unless outlier family).
    pub outlier_channels: Vec<usize>,
}

/// Deterministic in `spec.seed`: weights are drawn first (row-major), then
/// activations, then the outlier channel choice.
pub fn gen_layer(spec: &SynthSpec) -> Result<SynthLayer> {
    spec.validate()?;
    let mut rng = SketchRng::new(spec.seed);
    let (m, n, tokens) = (spec.m, spec.n, spec.tokens);
    let mut w = match spec.family {
        Family::StudentT { nu } => {
            let dist = StudentT::new(nu).map_err(|e| FlrqError::param("nu", e.to_string()))?;
            let raw = rng.raw();
            (0..m * n).map(|_| dist.sample(raw)).collect()
        }
        _ => rng.gaussian_vec(m * n),
    };
    let mut x = rng.gaussian_vec(n * tokens);

    let mut outliers = Vec::new();
    if let Family::OutlierChannels { count, boost } = spec.family {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = rng.raw().random_range(i..n);
            idx.swap(i, j);
        }
        outliers = idx[..count].to_vec();
        outliers.sort_unstable();
        for &c in &outliers {
            for i in 0..m {
                w[i * n + c] *= boost;
            }
            for t in 0..tokens {
                x[c * tokens + t] *= boost;
            }
        }
    }

    Ok(SynthLayer {
        weight: Matrix::new(m, n, w)?,
        calibration: CalibrationBatch::new(Matrix::new(n, tokens, x)?)?,
        outlier_channels: outliers,
    })
}
