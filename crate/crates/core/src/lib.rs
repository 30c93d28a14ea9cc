//! Weight quantization to 2/3/4-bit integers plus a flexible-rank
//! full-precision residual.
//!
//! A layer `W` is split as `W ≈ dequant(W_q) + W_L W_R`. The low-rank part is
//! extracted one rank-1 component at a time with a GEMV-only sketch
//! ([`sketch`]), its rank is chosen per layer by trading bit gain against
//! storage ([`rankselect`]), and the two parts are refined alternately
//! against calibration activations ([`blc`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blc;
pub mod error;
pub mod io;
pub mod linalg;
pub mod quantize;
pub mod rankselect;
pub mod rng;
pub mod sketch;
pub mod synth;

pub use blc::{flrq_layer, layer_error, BlcConfig, BlcRecord, CalibrationBatch, LayerError, QuantizedLayer};
pub use error::{FlrqError, Result};
pub use linalg::{svd_oracle, Matrix, SvdResult};
pub use quantize::{dequantize, quantize_matrix, search_clip, ClipMode, QuantMode, QuantSpec, QuantizedTensor};
pub use rankselect::{select_rank, RankSelectionConfig, RankTrace, StopReason};
pub use rng::{layer_seed, SketchRng};
pub use sketch::{deflate, r1_step, Deflation, LowRankFactors, Rank1Pair, SketchConfig};
pub use synth::{gen_layer, Family, SynthLayer, SynthSpec};
