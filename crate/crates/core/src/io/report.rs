//! JSON run reports.
//!
//! Keys are emitted in declaration order and numbers in serde_json's
//! shortest round-trip form, so equal inputs give byte-identical text.
//! Non-finite numbers appear as `null`.

use serde::{Deserialize, Serialize};

use crate::blc::{BlcRecord, QuantizedLayer};
use crate::quantize::QuantMode;

pub const REPORT_SCHEMA: &str = "flrq-report/1";

/// Factor storage in bits per weight: `d_fp·r·(m+n) / (m·n)`.
pub fn extra_bits(d_fp: u32, r: usize, m: usize, n: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    d_fp as f64 * r as f64 * (m + n) as f64 / (m as f64 * n as f64)
}

/// [`extra_bits`] plus per-group scale (and zero point) storage.
pub fn extra_bits_with_meta(d_fp: u32, r: usize, m: usize, n: usize, group_size: usize, mode: QuantMode) -> f64 {
    let per_group = match mode {
        QuantMode::Symmetric => 1.0,
        QuantMode::Asymmetric => 2.0,
    };
    extra_bits(d_fp, r, m, n) + d_fp as f64 * per_group / group_size as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub extra_bits: f64,
    pub extra_bits_with_meta: f64,
    pub rel_error: f64,
    pub abs_error: f64,
    /// Plain clip-free group quantization error, when computed.
    pub rtn_rel_error: Option<f64>,
    pub stop_reason: String,
    pub blc_best_epoch: usize,
    pub p_clp: f64,
    pub blc_trace: Vec<BlcRecord>,
    pub warnings: Vec<String>,
}

impl LayerSummary {
    pub fn from_layer(name: impl Into<String>, layer: &QuantizedLayer, d_fp: u32, rtn_rel_error: Option<f64>) -> Self {
        let q = &layer.quantized;
        let (m, n) = q.shape();
        let r = layer.rank();
        Self {
            name: name.into(),
            m,
            n,
            rank: r,
            extra_bits: extra_bits(d_fp, r, m, n),
            extra_bits_with_meta: extra_bits_with_meta(d_fp, r, m, n, q.group_size(), q.mode()),
            rel_error: layer.error.rel,
            abs_error: layer.error.abs,
            rtn_rel_error,
            stop_reason: layer.rank_trace.stop_reason.as_str().to_string(),
            blc_best_epoch: layer.best_epoch,
            p_clp: layer.p_clp,
            blc_trace: layer.blc_trace.clone(),
            warnings: layer.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub layer_count: usize,
    pub avg_rank: Option<f64>,
    pub avg_extra_bits: Option<f64>,
    pub avg_rel_error: Option<f64>,
    /// Wall time in seconds; omitted (null) unless requested, since it is
    /// the only nondeterministic quantity.
    pub total_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config: serde_json::Value,
    pub layers: Vec<LayerSummary>,
    pub aggregate: Aggregate,
}

impl Report {
    pub fn new(layers: Vec<LayerSummary>, config: serde_json::Value, total_time: Option<f64>) -> Self {
        let count = layers.len();
        let mean = |f: &dyn Fn(&LayerSummary) -> f64| {
            (count > 0).then(|| layers.iter().map(f).sum::<f64>() / count as f64)
        };
        let aggregate = Aggregate {
            layer_count: count,
            avg_rank: mean(&|l| l.rank as f64),
            avg_extra_bits: mean(&|l| l.extra_bits),
            avg_rel_error: mean(&|l| l.rel_error),
            total_time,
        };
        Self {
            schema: REPORT_SCHEMA.to_string(),
            config,
            layers,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }
}

pub fn emit_report(layers: Vec<LayerSummary>, config: serde_json::Value, total_time: Option<f64>) -> String {
    Report::new(layers, config, total_time).to_json()
}
