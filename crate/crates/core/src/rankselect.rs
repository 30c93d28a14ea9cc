//! Flexible per-layer rank selection.
//!
//! Rank-1 components are peeled off one at a time. After each extraction the
//! residual `amax` is compared with the original: shrinking it from `w0` to
//! `wr` is worth `d' = log2(w0 / wr)` extra bits, i.e. an effective bit gain
//! `q = (d + d') / d`, while storing `r` factor pairs at `d_fp` bits grows the
//! layer by `k = 1 + d_fp·r·(m + n) / (d·m·n)`. Extraction continues while
//! `q > k`, `k <= 1 + x` and the normalized amax slope stays above `t`; the
//! pair that trips a stop is discarded.

use serde::{Deserialize, Serialize};

use crate::error::{FlrqError, Result};
use crate::linalg::{amax, fro_norm, rank1_subtract_in_place, Matrix};
use crate::rng::SketchRng;
use crate::sketch::{r1_step_op, LowRankFactors};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSelectionConfig {
    /// Target integer bit width.
    pub d: u8,
    /// Storage bits per factor entry (16 or 32).
    pub d_fp: u32,
    /// Largest allowed fractional size increase.
    pub x: f64,
    /// Slope threshold.
    pub t: f64,
    /// Slope window.
    pub window: usize,
    /// Sketch power iterations.
    pub it: usize,
    pub seed: u64,
}

impl Default for RankSelectionConfig {
    fn default() -> Self {
        Self {
            d: 4,
            d_fp: 16,
            x: 0.2,
            t: 1e-3,
            window: 4,
            it: 2,
            seed: 0,
        }
    }
}

impl RankSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.d) {
            return Err(FlrqError::param("d", format!("must be 2, 3 or 4, got {}", self.d)));
        }
        if self.d_fp != 16 && self.d_fp != 32 {
            return Err(FlrqError::param("d_fp", format!("must be 16 or 32, got {}", self.d_fp)));
        }
        // x = 0 is allowed: it forbids every factor.
        if !(self.x >= 0.0) || !self.x.is_finite() {
            return Err(FlrqError::param("x", format!("must be finite and >= 0, got {}", self.x)));
        }
        if !(self.t >= 0.0) {
            return Err(FlrqError::param("t", format!("must be >= 0, got {}", self.t)));
        }
        if self.window == 0 {
            return Err(FlrqError::param("window", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `q <= k`: the bit gain no longer pays for the storage.
    BudgetQk,
    /// `k > 1 + x`.
    MemoryCap,
    /// The amax curve flattened.
    Slope,
    /// Every available rank was extracted (or the residual vanished).
    MaxRank,
    /// Selection was bypassed in favour of a fixed rank.
    FixedRank,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::BudgetQk => "budget_qk",
            StopReason::MemoryCap => "memory_cap",
            StopReason::Slope => "slope",
            StopReason::MaxRank => "max_rank",
            StopReason::FixedRank => "fixed_rank",
        }
    }
}

/// One candidate extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub r: usize,
    /// Residual amax after extracting `r` pairs.
    pub amax: f64,
    /// Running minimum of `amax`.
    pub amax_envelope: f64,
    pub q: f64,
    pub k: f64,
    /// `None` until the window fills.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrace {
    pub amax0: f64,
    pub records: Vec<RankRecord>,
    pub stop_reason: StopReason,
    pub selected_rank: usize,
}

/// Effective bit gain `q` and storage growth `k`. `wr <= 0` means the residual
/// was captured exactly and yields `q = +∞`.
#[allow(clippy::too_many_arguments)]
pub fn qk(d: u8, d_fp: u32, m: usize, n: usize, r: usize, w0: f64, wr: f64) -> Result<(f64, f64)> {
    if !(w0 > 0.0) {
        return Err(FlrqError::param("w0", format!("must be > 0, got {w0}")));
    }
    let d = d as f64;
    let k = 1.0 + (d_fp as f64 * r as f64 * (m + n) as f64) / (d * m as f64 * n as f64);
    if !(wr > 0.0) {
        return Ok((f64::INFINITY, k));
    }
    let d_extra = (w0 / wr).log2();
    Ok(((d + d_extra) / d, k))
}

/// Normalized windowed amax drop `(a[r−w] − a[r]) / (w · a[0])`; `+∞` until
/// the history holds `w + 1` entries.
pub fn slope(history: &[f64], window: usize) -> Result<f64> {
    let a0 = *history.first().ok_or(FlrqError::Empty("amax history"))?;
    if window == 0 {
        return Err(FlrqError::param("window", "must be >= 1"));
    }
    if a0 == 0.0 {
        return Err(FlrqError::ZeroMatrix);
    }
    if history.len() < window + 1 {
        return Ok(f64::INFINITY);
    }
    let last = history.len() - 1;
    Ok((history[last - window] - history[last]) / (window as f64 * a0))
}

pub fn select_rank(w: &Matrix, cfg: &RankSelectionConfig) -> Result<(LowRankFactors, RankTrace)> {
    let mut rng = SketchRng::new(cfg.seed);
    select_rank_with_rng(w, cfg, &mut rng)
}

pub fn select_rank_with_rng(
    w: &Matrix,
    cfg: &RankSelectionConfig,
    rng: &mut SketchRng,
) -> Result<(LowRankFactors, RankTrace)> {
    cfg.validate()?;
    if w.is_empty() || fro_norm(w) == 0.0 {
        return Err(FlrqError::ZeroMatrix);
    }
    let (m, n) = w.shape();
    let max_rank = m.min(n);
    let amax0 = amax(w)?;
    let mut residual = w.clone();
    let mut factors = LowRankFactors::empty(m, n);
    let mut envelope = vec![amax0];
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxRank;

    for r in 1..=max_rank {
        if fro_norm(&residual) == 0.0 {
            break;
        }
        let pair = match r1_step_op(&residual, cfg.it, rng) {
            Ok(p) => p,
            Err(FlrqError::DegenerateProjection { .. }) => break,
            Err(e) => return Err(e),
        };
        let mut candidate = residual.clone();
        rank1_subtract_in_place(&mut candidate, &pair.left, &pair.right)?;
        let a_r = amax(&candidate)?;
        let env = a_r.min(*envelope.last().expect("seeded"));
        envelope.push(env);

        let (q, k) = qk(cfg.d, cfg.d_fp, m, n, r, amax0, env)?;
        let s = slope(&envelope, cfg.window)?;
        records.push(RankRecord {
            r,
            amax: a_r,
            amax_envelope: env,
            q,
            k,
            slope: s.is_finite().then_some(s),
        });

        let stop = if k >= q {
            Some(StopReason::BudgetQk)
        } else if k > 1.0 + cfg.x {
            Some(StopReason::MemoryCap)
        } else if s < cfg.t {
            Some(StopReason::Slope)
        } else {
            None
        };
        if let Some(reason) = stop {
            stop_reason = reason;
            break;
        }
        factors.push(pair);
        residual = candidate;
    }

    let selected_rank = factors.rank();
    Ok((
        factors,
        RankTrace {
            amax0,
            records,
            stop_reason,
            selected_rank,
        },
    ))
}
