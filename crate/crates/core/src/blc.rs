//! Activation-aware scaling and the alternating low-rank / clipping loop.
//!
//! The loop minimizes `‖W X − (W_r + W_q) X‖_F` over the low-rank part `W_r`
//! and the clip threshold. Each epoch scores the current pair, keeps the best
//! one seen so far, then refits `W_r` to `W − W_q` and re-searches the clip
//! threshold for `W − W_r`.
//!
//! The per-channel scale `α` has one entry per input channel (column of `W`,
//! row of `X`). Rank selection runs on `W · diag(α)` and the right factor is
//! divided by `α` afterwards, so `W_L W_R` approximates `W` itself.

use serde::{Deserialize, Serialize};

use crate::error::{FlrqError, Result};
use crate::linalg::{amax, fro_norm, svd_oracle, Matrix, SVD_ORACLE_LIMIT};
use crate::quantize::{
    dequantize, search_clip_with, ClipMode, QuantMode, QuantSpec, QuantizedTensor, DEFAULT_CLIP_GRID,
    DEFAULT_GROUP_SIZE,
};
use crate::rankselect::{select_rank_with_rng, RankSelectionConfig, RankTrace, StopReason};
use crate::rng::SketchRng;
use crate::sketch::{deflate_with_rng, LowRankFactors, SketchConfig};

/// Floor applied to per-channel activation means.
pub const CHANNEL_MEAN_FLOOR: f64 = 1e-8;

/// Calibration activations, `n` channels × `tokens` columns.
#[derive(Debug, Clone)]
pub struct CalibrationBatch {
    pub x: Matrix,
    pub channel_mean: Vec<f64>,
    /// Channels whose mean was raised to [`CHANNEL_MEAN_FLOOR`].
    pub floored_channels: Vec<usize>,
}

impl CalibrationBatch {
    pub fn new(x: Matrix) -> Result<Self> {
        let raw = channel_mean_raw(&x)?;
        let floored_channels = raw
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < CHANNEL_MEAN_FLOOR)
            .map(|(j, _)| j)
            .collect();
        let channel_mean = raw.into_iter().map(|v| v.max(CHANNEL_MEAN_FLOOR)).collect();
        Ok(Self {
            x,
            channel_mean,
            floored_channels,
        })
    }
}

/// Per-channel mean of `|X|` after normalizing every token (column) to unit
/// L2 norm. All-zero tokens are skipped; entries are floored at 1e-8.
pub fn channel_mean(x: &Matrix) -> Result<Vec<f64>> {
    Ok(channel_mean_raw(x)?
        .into_iter()
        .map(|v| v.max(CHANNEL_MEAN_FLOOR))
        .collect())
}

fn channel_mean_raw(x: &Matrix) -> Result<Vec<f64>> {
    let (n, tokens) = x.shape();
    if n == 0 || tokens == 0 {
        return Err(FlrqError::Empty("calibration batch"));
    }
    let mut norms = vec![0.0f64; tokens];
    for i in 0..n {
        for (acc, v) in norms.iter_mut().zip(x.row(i)) {
            *acc += v * v;
        }
    }
    norms.iter_mut().for_each(|v| *v = v.sqrt());
    let used = norms.iter().filter(|v| **v > 0.0).count();
    if used == 0 {
        return Err(FlrqError::param("calibration batch", "every token column is zero"));
    }
    Ok((0..n)
        .map(|i| {
            x.row(i)
                .iter()
                .zip(&norms)
                .filter(|(_, nrm)| **nrm > 0.0)
                .map(|(v, nrm)| v.abs() / nrm)
                .sum::<f64>()
                / used as f64
        })
        .collect())
}

/// `α_j = x̄_j^e / sqrt(max(x̄) · min(x̄))`.
pub fn alpha(mean: &[f64], exponent: f64) -> Result<Vec<f64>> {
    if mean.is_empty() {
        return Err(FlrqError::Empty("channel mean"));
    }
    if let Some(bad) = mean.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(FlrqError::param("channel mean", format!("entries must be positive, got {bad}")));
    }
    let hi = mean.iter().copied().fold(f64::MIN, f64::max);
    let lo = mean.iter().copied().fold(f64::MAX, f64::min);
    let denom = (hi * lo).sqrt();
    Ok(mean.iter().map(|v| v.powf(exponent) / denom).collect())
}

/// Rank selection on `W · diag(α)`, unscaled back to the original space.
pub fn scaled_flr(
    w: &Matrix,
    alpha: &[f64],
    cfg: &RankSelectionConfig,
) -> Result<(LowRankFactors, RankTrace)> {
    scaled_flr_with_rng(w, alpha, cfg, &mut SketchRng::new(cfg.seed))
}

pub fn scaled_flr_with_rng(
    w: &Matrix,
    alpha: &[f64],
    cfg: &RankSelectionConfig,
    rng: &mut SketchRng,
) -> Result<(LowRankFactors, RankTrace)> {
    check_alpha(alpha, w.cols())?;
    let scaled = w.scale_columns(alpha)?;
    let (mut factors, trace) = select_rank_with_rng(&scaled, cfg, rng)?;
    factors.unscale_right(alpha)?;
    Ok((factors, trace))
}

fn check_alpha(alpha: &[f64], n: usize) -> Result<()> {
    if alpha.len() != n {
        return Err(FlrqError::shape(format!("alpha of length {n}"), format!("length {}", alpha.len())));
    }
    if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(FlrqError::param("alpha", "entries must be positive and finite"));
    }
    Ok(())
}

/// Output-space error of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    /// `‖W X − (W_q + W_L W_R) X‖_F`.
    pub abs: f64,
    /// `abs / ‖W X‖_F`.
    pub rel: f64,
}

pub fn layer_error(
    w: &Matrix,
    q: &QuantizedTensor,
    factors: &LowRankFactors,
    x: &Matrix,
) -> Result<LayerError> {
    let reference = fro_norm(&w.matmul(x)?);
    layer_error_with_reference(w, q, factors, x, reference)
}

fn layer_error_with_reference(
    w: &Matrix,
    q: &QuantizedTensor,
    factors: &LowRankFactors,
    x: &Matrix,
    reference: f64,
) -> Result<LayerError> {
    if q.shape() != w.shape() || factors.shape() != w.shape() {
        return Err(FlrqError::shape(
            format!("{}x{} components", w.rows(), w.cols()),
            format!("quantized {:?}, factors {:?}", q.shape(), factors.shape()),
        ));
    }
    if x.rows() != w.cols() {
        return Err(FlrqError::shape(
            format!("calibration with {} rows", w.cols()),
            format!("{} rows", x.rows()),
        ));
    }
    let mut approx = dequantize(q);
    if factors.rank() > 0 {
        approx = approx.add(&factors.reconstruct())?;
    }
    let abs = fro_norm(&w.sub(&approx)?.matmul(x)?);
    let rel = if reference > 0.0 {
        abs / reference
    } else if abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(LayerError { abs, rel })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlcConfig {
    pub epochs: usize,
    pub alpha_exponent: f64,
    /// When false, `α` is all ones.
    pub activation_scaling: bool,
    pub rank: RankSelectionConfig,
    pub clip_grid: Vec<f64>,
    pub clip_mode: ClipMode,
    pub mode: QuantMode,
    pub group_size: usize,
    /// Replace the initial sketch factors with a truncated exact SVD of the
    /// same rank (layers up to 1024 on the short side).
    pub use_svd_init: bool,
    /// Skip rank selection and always extract this many components.
    #[serde(default)]
    pub fixed_rank: Option<usize>,
}

impl BlcConfig {
    /// Defaults for a bit width: 20 epochs at 2 bits, a single pass otherwise.
    pub fn for_bits(d: u8) -> Self {
        Self {
            epochs: if d == 2 { 20 } else { 1 },
            alpha_exponent: 2.5,
            activation_scaling: true,
            rank: RankSelectionConfig {
                d,
                ..Default::default()
            },
            clip_grid: DEFAULT_CLIP_GRID.to_vec(),
            clip_mode: ClipMode::Saturate,
            mode: QuantMode::Asymmetric,
            group_size: DEFAULT_GROUP_SIZE,
            use_svd_init: false,
            fixed_rank: None,
        }
    }

    pub fn quant_spec(&self) -> Result<QuantSpec> {
        QuantSpec::new(self.rank.d, self.group_size, self.mode)
    }
}

impl Default for BlcConfig {
    fn default() -> Self {
        Self::for_bits(4)
    }
}

/// One scored epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlcRecord {
    pub epoch: usize,
    pub abs_error: f64,
    pub rel_error: f64,
    pub p_clp: f64,
    pub rank: usize,
    /// Best `abs_error` up to and including this epoch.
    pub best_abs_error: f64,
}

/// Quantized integer part, low-rank factors and scaling for one layer.
#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    pub quantized: QuantizedTensor,
    pub factors: LowRankFactors,
    pub alpha: Vec<f64>,
    pub p_clp: f64,
    pub error: LayerError,
    pub rank_trace: RankTrace,
    pub blc_trace: Vec<BlcRecord>,
    /// 1-based epoch the stored components come from.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

impl QuantizedLayer {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    /// Dense `dequant(W_q) + W_L W_R`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        dequantize(&self.quantized).add(&self.factors.reconstruct())
    }
}

struct Snapshot {
    quantized: QuantizedTensor,
    factors: LowRankFactors,
    p_clp: f64,
    error: LayerError,
    trace: RankTrace,
    epoch: usize,
}

/// Full pipeline for one layer.
pub fn flrq_layer(w: &Matrix, batch: &CalibrationBatch, cfg: &BlcConfig) -> Result<QuantizedLayer> {
    if cfg.epochs == 0 {
        return Err(FlrqError::param("epochs", "must be >= 1"));
    }
    cfg.rank.validate()?;
    let spec = cfg.quant_spec()?;
    let (m, n) = w.shape();
    let x = &batch.x;
    if x.rows() != n {
        return Err(FlrqError::shape(format!("calibration with {n} rows"), format!("{} rows", x.rows())));
    }

    let mut warnings = Vec::new();
    if !batch.floored_channels.is_empty() {
        warnings.push(format!(
            "{} zero-activation channel(s) floored to {CHANNEL_MEAN_FLOOR:e}",
            batch.floored_channels.len()
        ));
    }
    let alpha = if cfg.activation_scaling {
        alpha(&batch.channel_mean, cfg.alpha_exponent)?
    } else {
        vec![1.0; n]
    };
    let reference = fro_norm(&w.matmul(x)?);

    let mut rng = SketchRng::with_stream(cfg.rank.seed, 0);
    let (mut factors, mut trace) = fit_low_rank(w, &alpha, cfg, &mut rng)?;
    if cfg.use_svd_init && trace.selected_rank > 0 {
        if m.min(n) <= SVD_ORACLE_LIMIT {
            factors = svd_factors(w, &alpha, trace.selected_rank)?;
        } else {
            warnings.push("layer too large for SVD init; kept sketch factors".to_string());
        }
    }
    let (mut clip, mut quantized) =
        search_clip_with(&w.sub(&factors.reconstruct())?, x, spec, &cfg.clip_grid, cfg.clip_mode)?;
    let mut p_clp = clip.p_clp;

    let mut best: Option<Snapshot> = None;
    let mut blc_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let error = layer_error_with_reference(w, &quantized, &factors, x, reference)?;
        if best.as_ref().is_none_or(|b| error.abs < b.error.abs) {
            best = Some(Snapshot {
                quantized: quantized.clone(),
                factors: factors.clone(),
                p_clp,
                error,
                trace: trace.clone(),
                epoch,
            });
        }
        blc_trace.push(BlcRecord {
            epoch,
            abs_error: error.abs,
            rel_error: error.rel,
            p_clp,
            rank: factors.rank(),
            best_abs_error: best.as_ref().expect("set above").error.abs,
        });
        if epoch == cfg.epochs {
            break;
        }

        let residual = w.sub(&dequantize(&quantized))?;
        let mut rng = SketchRng::with_stream(cfg.rank.seed, epoch as u64);
        (factors, trace) = fit_low_rank(&residual, &alpha, cfg, &mut rng)?;
        (clip, quantized) =
            search_clip_with(&w.sub(&factors.reconstruct())?, x, spec, &cfg.clip_grid, cfg.clip_mode)?;
        p_clp = clip.p_clp;
    }

    let best = best.expect("at least one epoch");
    Ok(QuantizedLayer {
        quantized: best.quantized,
        factors: best.factors,
        alpha,
        p_clp: best.p_clp,
        error: best.error,
        rank_trace: best.trace,
        blc_trace,
        best_epoch: best.epoch,
        warnings,
    })
}

fn fit_low_rank(
    w: &Matrix,
    alpha: &[f64],
    cfg: &BlcConfig,
    rng: &mut SketchRng,
) -> Result<(LowRankFactors, RankTrace)> {
    let (m, n) = w.shape();
    if fro_norm(w) == 0.0 {
        return Ok((LowRankFactors::empty(m, n), empty_trace()));
    }
    let Some(r) = cfg.fixed_rank else {
        return scaled_flr_with_rng(w, alpha, &cfg.rank, rng);
    };
    check_alpha(alpha, w.cols())?;
    let r = r.min(m.min(n));
    let scaled = w.scale_columns(alpha)?;
    let mut factors = if r == 0 {
        LowRankFactors::empty(m, n)
    } else {
        let sketch = SketchConfig {
            it: cfg.rank.it,
            seed: cfg.rank.seed,
            reorthogonalize: false,
        };
        deflate_with_rng(&scaled, r, &sketch, rng)?.factors
    };
    factors.unscale_right(alpha)?;
    let trace = RankTrace {
        amax0: amax(&scaled)?,
        records: Vec::new(),
        stop_reason: StopReason::FixedRank,
        selected_rank: factors.rank(),
    };
    Ok((factors, trace))
}

fn empty_trace() -> RankTrace {
    RankTrace {
        amax0: 0.0,
        records: Vec::new(),
        stop_reason: StopReason::MaxRank,
        selected_rank: 0,
    }
}

/// Truncated SVD of `W · diag(α)` at rank `r`, unscaled.
fn svd_factors(w: &Matrix, alpha: &[f64], r: usize) -> Result<LowRankFactors> {
    let svd = svd_oracle(&w.scale_columns(alpha)?)?;
    let (m, n) = w.shape();
    let left = Matrix::from_fn(m, r, |i, t| svd.u.get(i, t) * svd.singular_values[t]);
    let right = Matrix::from_fn(r, n, |t, j| svd.v.get(j, t));
    let mut factors = LowRankFactors::from_matrices(&left, &right)?;
    factors.unscale_right(alpha)?;
    Ok(factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::quantize_with;
    use crate::rankselect::select_rank;

    #[test]
    fn channel_mean_examples() {
        let got = channel_mean(&Matrix::identity(3)).unwrap();
        for v in got {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let single = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let got = channel_mean(&single).unwrap();
        assert!((got[0] - 0.6).abs() < 1e-15 && (got[1] - 0.8).abs() < 1e-15);

        let dup = Matrix::new(2, 3, vec![1.0, 1.0, 1.0, -2.0, -2.0, -2.0]).unwrap();
        let got = channel_mean(&dup).unwrap();
        let nrm = 5f64.sqrt();
        assert!((got[0] - 1.0 / nrm).abs() < 1e-15 && (got[1] - 2.0 / nrm).abs() < 1e-15);
    }

    #[test]
    fn channel_mean_skips_zero_tokens_and_floors() {
        let x = Matrix::new(2, 2, vec![0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(channel_mean(&x).unwrap(), vec![1.0, CHANNEL_MEAN_FLOOR]);
        let batch = CalibrationBatch::new(x).unwrap();
        assert_eq!(batch.floored_channels, vec![1]);
        assert!(channel_mean(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(&[1.0, 4.0], 2.5).unwrap(), vec![0.5, 16.0]);
        let c = 0.3f64;
        for v in alpha(&[c; 4], 2.5).unwrap() {
            assert!((v - c.powf(1.5)).abs() < 1e-15);
        }
        let uni = alpha(&[0.5, 2.0, 1.0], 0.0).unwrap();
        assert!(uni.iter().all(|v| (*v - 1.0).abs() < 1e-15));
        assert!(alpha(&[1.0, 0.0], 2.5).is_err());
    }

    fn gaussian(m: usize, n: usize, seed: u64) -> Matrix {
        Matrix::new(m, n, SketchRng::new(seed).gaussian_vec(m * n)).unwrap()
    }

    #[test]
    fn unit_alpha_matches_plain_selection() {
        let w = gaussian(24, 24, 3);
        let cfg = RankSelectionConfig { x: 2.0, seed: 9, ..Default::default() };
        let (a, ta) = scaled_flr(&w, &[1.0; 24], &cfg).unwrap();
        let (b, tb) = select_rank(&w, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn scaled_rank1_is_exact_after_unscale() {
        let u: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let v: Vec<f64> = (0..10).map(|j| (j as f64 * 0.3).cos()).collect();
        let w = Matrix::outer(&u, &v);
        let alpha: Vec<f64> = (0..10).map(|j| 0.5 + j as f64).collect();
        let cfg = RankSelectionConfig { x: 5.0, ..Default::default() };
        let (f, _) = scaled_flr(&w, &alpha, &cfg).unwrap();
        let res = fro_norm(&w.sub(&f.reconstruct()).unwrap());
        assert!(res <= 1e-6 * fro_norm(&w), "residual {res}");
    }

    #[test]
    fn layer_error_cases() {
        let w = gaussian(8, 8, 5);
        let x = gaussian(8, 6, 6);
        let spec = QuantSpec::new(3, 4, QuantMode::Asymmetric).unwrap();
        let q = quantize_with(&w, spec).unwrap();
        let none = LowRankFactors::empty(8, 8);
        let e = layer_error(&w, &q, &none, &x).unwrap();
        // naive dense evaluation
        let deq = dequantize(&q);
        let mut acc = 0.0;
        let mut refn = 0.0;
        for i in 0..8 {
            for t in 0..6 {
                let mut a = 0.0;
                let mut b = 0.0;
                for j in 0..8 {
                    a += (w.get(i, j) - deq.get(i, j)) * x.get(j, t);
                    b += w.get(i, j) * x.get(j, t);
                }
                acc += a * a;
                refn += b * b;
            }
        }
        assert!((e.abs - acc.sqrt()).abs() < 1e-12);
        assert!((e.rel - acc.sqrt() / refn.sqrt()).abs() < 1e-12);

        // exact decomposition: lattice part plus rank-1 part
        let lattice = Matrix::from_fn(2, 4, |i, j| [3.0, -1.0, 2.0, 0.0][j] * (i as f64 + 1.0));
        let ql = quantize_with(&lattice, QuantSpec::new(3, 4, QuantMode::Symmetric).unwrap()).unwrap();
        let lr = Matrix::outer(&[1.0, 2.0], &[0.5, 0.0, -1.0, 1.0]);
        let total = lattice.add(&lr).unwrap();
        let factors = LowRankFactors::from_matrices(
            &Matrix::new(2, 1, vec![1.0, 2.0]).unwrap(),
            &Matrix::new(1, 4, vec![0.5, 0.0, -1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let xs = gaussian(4, 3, 8);
        let e = layer_error(&total, &ql, &factors, &xs).unwrap();
        assert!(e.abs < 1e-12);
        assert!(layer_error(&w, &q, &none, &gaussian(7, 2, 1)).is_err());
    }

    #[test]
    fn single_epoch_is_one_pass() {
        let w = gaussian(16, 32, 1);
        let batch = CalibrationBatch::new(gaussian(32, 20, 2)).unwrap();
        let cfg = BlcConfig {
            group_size: 16,
            ..BlcConfig::for_bits(4)
        };
        let layer = flrq_layer(&w, &batch, &cfg).unwrap();
        assert_eq!(layer.blc_trace.len(), 1);
        assert_eq!(layer.best_epoch, 1);
        assert!(flrq_layer(&w, &batch, &BlcConfig { epochs: 0, ..cfg }).is_err());
    }

    #[test]
    fn best_so_far_is_monotone_and_snapshot_matches() {
        let w = gaussian(32, 32, 11);
        let batch = CalibrationBatch::new(gaussian(32, 16, 12)).unwrap();
        let cfg = BlcConfig {
            epochs: 6,
            group_size: 16,
            rank: RankSelectionConfig { d: 2, x: 0.5, ..Default::default() },
            ..BlcConfig::for_bits(2)
        };
        let layer = flrq_layer(&w, &batch, &cfg).unwrap();
        assert_eq!(layer.blc_trace.len(), 6);
        for pair in layer.blc_trace.windows(2) {
            assert!(pair[1].best_abs_error <= pair[0].best_abs_error);
        }
        let best = &layer.blc_trace[layer.best_epoch - 1];
        assert_eq!(best.abs_error, layer.error.abs);
        let again = layer_error(&w, &layer.quantized, &layer.factors, &batch.x).unwrap();
        assert_eq!(again.abs, layer.error.abs);
    }

    #[test]
    fn zero_layer_quantizes_to_zero() {
        let batch = CalibrationBatch::new(gaussian(8, 4, 1)).unwrap();
        let cfg = BlcConfig { group_size: 8, epochs: 3, ..BlcConfig::for_bits(2) };
        let layer = flrq_layer(&Matrix::zeros(4, 8), &batch, &cfg).unwrap();
        assert_eq!(layer.rank(), 0);
        assert_eq!(layer.error.abs, 0.0);
        assert_eq!(layer.reconstruct().unwrap(), Matrix::zeros(4, 8));
    }

    #[test]
    fn fixed_rank_bypasses_selection() {
        let w = gaussian(24, 24, 2);
        let batch = CalibrationBatch::new(gaussian(24, 8, 3)).unwrap();
        let cfg = BlcConfig {
            group_size: 8,
            fixed_rank: Some(5),
            rank: RankSelectionConfig { x: 0.0, ..Default::default() },
            ..BlcConfig::for_bits(4)
        };
        let layer = flrq_layer(&w, &batch, &cfg).unwrap();
        assert_eq!(layer.rank(), 5);
        assert_eq!(layer.rank_trace.stop_reason, StopReason::FixedRank);
        let clamped = flrq_layer(&w, &batch, &BlcConfig { fixed_rank: Some(99), ..cfg }).unwrap();
        assert_eq!(clamped.rank(), 24);
    }

    #[test]
    fn svd_init_runs() {
        let w = gaussian(64, 64, 4)
            .add(&Matrix::outer(&[10.0; 64], &[1.0; 64]))
            .unwrap();
        let batch = CalibrationBatch::new(gaussian(64, 8, 5)).unwrap();
        let cfg = BlcConfig {
            use_svd_init: true,
            group_size: 8,
            rank: RankSelectionConfig { x: 1.0, ..Default::default() },
            ..BlcConfig::for_bits(4)
        };
        let layer = flrq_layer(&w, &batch, &cfg).unwrap();
        assert!(layer.rank() >= 1);
    }
}
