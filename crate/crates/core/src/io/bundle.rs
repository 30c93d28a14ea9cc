//! Directory layout for one quantized layer.
//!
//! | file          | dtype  | dims          |
//! |---------------|--------|---------------|
//! | `codes.flrt`  | packed | `[m, n]`      |
//! | `scales.flrt` | f64    | `[groups]`    |
//! | `zeros.flrt`  | f64    | `[groups]` (asymmetric only) |
//! | `left.flrt`   | f64    | `[m, r]`      |
//! | `right.flrt`  | f64    | `[r, n]`      |
//! | `alpha.flrt`  | f64    | `[n]`         |
//! | `meta.json`   | text   |               |
//!
//! Symmetric codes are stored offset-binary (`code + 2^(d−1) − 1`),
//! asymmetric codes as-is.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_container_file, write_container_file, TensorContainer, TensorData};
use super::pack::{pack_codes, unpack_codes};
use super::{IoError, IoResult};
use crate::blc::QuantizedLayer;
use crate::linalg::Matrix;
use crate::quantize::{dequantize, symmetric_max, QuantMode, QuantizedTensor};
use crate::sketch::LowRankFactors;

pub const BUNDLE_FILES: [&str; 7] = [
    "codes.flrt",
    "scales.flrt",
    "zeros.flrt",
    "left.flrt",
    "right.flrt",
    "alpha.flrt",
    "meta.json",
];

const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format: u32,
    pub bits: u8,
    pub group_size: usize,
    pub mode: QuantMode,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub groups: usize,
    pub p_clp: f64,
    pub seed: u64,
    /// Resolved configuration that produced the layer.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBundle {
    pub meta: BundleMeta,
    pub quantized: QuantizedTensor,
    pub factors: LowRankFactors,
    pub alpha: Vec<f64>,
}

impl LayerBundle {
    pub fn from_layer(layer: &QuantizedLayer, seed: u64, config: serde_json::Value) -> Self {
        let q = &layer.quantized;
        let (rows, cols) = q.shape();
        Self {
            meta: BundleMeta {
                format: BUNDLE_FORMAT,
                bits: q.bits(),
                group_size: q.group_size(),
                mode: q.mode(),
                rows,
                cols,
                rank: layer.rank(),
                groups: q.num_groups(),
                p_clp: layer.p_clp,
                seed,
                config,
            },
            quantized: q.clone(),
            factors: layer.factors.clone(),
            alpha: layer.alpha.clone(),
        }
    }

    /// Dense `dequant(W_q) + W_L W_R`.
    pub fn reconstruct(&self) -> IoResult<Matrix> {
        Ok(dequantize(&self.quantized).add(&self.factors.reconstruct())?)
    }
}

fn code_offset(mode: QuantMode, bits: u8) -> i32 {
    match mode {
        QuantMode::Symmetric => symmetric_max(bits),
        QuantMode::Asymmetric => 0,
    }
}

pub fn write_bundle(dir: impl AsRef<Path>, bundle: &LayerBundle) -> IoResult<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let q = &bundle.quantized;
    let (m, n) = q.shape();
    let offset = code_offset(q.mode(), q.bits());
    let stored: Vec<u8> = q.codes().iter().map(|&c| (c as i32 + offset) as u8).collect();
    let codes = TensorContainer::new(
        vec![m as u64, n as u64],
        TensorData::Packed {
            bits: q.bits(),
            bytes: pack_codes(&stored, q.bits())?,
        },
    )?;
    write_container_file(dir.join("codes.flrt"), &codes)?;
    write_container_file(dir.join("scales.flrt"), &TensorContainer::from_vector(q.scales()))?;
    let zeros_path = dir.join("zeros.flrt");
    if q.mode() == QuantMode::Asymmetric {
        write_container_file(&zeros_path, &TensorContainer::from_vector(q.zeros()))?;
    } else if zeros_path.exists() {
        fs::remove_file(&zeros_path)?;
    }
    write_container_file(dir.join("left.flrt"), &TensorContainer::from_matrix(&bundle.factors.left()))?;
    write_container_file(dir.join("right.flrt"), &TensorContainer::from_matrix(&bundle.factors.right()))?;
    write_container_file(dir.join("alpha.flrt"), &TensorContainer::from_vector(&bundle.alpha))?;
    let mut meta = serde_json::to_string_pretty(&bundle.meta)?;
    meta.push('\n');
    fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

fn expect_dims(what: &str, got: &[u64], want: &[usize]) -> IoResult<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(&g, &w)| g != w as u64) {
        return Err(IoError::Format(format!("{what}: dims {got:?}, expected {want:?}")));
    }
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> IoResult<LayerBundle> {
    let dir = dir.as_ref();
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.format != BUNDLE_FORMAT {
        return Err(IoError::Format(format!("unsupported bundle format {}", meta.format)));
    }
    let (m, n, r) = (meta.rows, meta.cols, meta.rank);

    let codes = read_container_file(dir.join("codes.flrt"))?;
    expect_dims("codes", codes.dims(), &[m, n])?;
    let TensorData::Packed { bits, bytes } = codes.data() else {
        return Err(IoError::Format("codes: expected packed dtype".into()));
    };
    if *bits != meta.bits {
        return Err(IoError::Format(format!("codes: {bits}-bit payload, meta says {}", meta.bits)));
    }
    let offset = code_offset(meta.mode, meta.bits);
    let codes: Vec<i8> = unpack_codes(bytes, *bits, m * n)?
        .into_iter()
        .map(|c| (c as i32 - offset) as i8)
        .collect();

    let scales = read_container_file(dir.join("scales.flrt"))?;
    expect_dims("scales", scales.dims(), &[meta.groups])?;
    let zeros = match meta.mode {
        QuantMode::Asymmetric => {
            let z = read_container_file(dir.join("zeros.flrt"))?;
            expect_dims("zeros", z.dims(), &[meta.groups])?;
            z.to_vector()?
        }
        QuantMode::Symmetric => Vec::new(),
    };
    let quantized = QuantizedTensor::from_parts(
        m,
        n,
        meta.bits,
        meta.group_size,
        meta.mode,
        codes,
        scales.to_vector()?,
        zeros,
    )?;
    if quantized.num_groups() != meta.groups {
        return Err(IoError::Format(format!(
            "meta lists {} groups, layout implies {}",
            meta.groups,
            quantized.num_groups()
        )));
    }

    let left = read_container_file(dir.join("left.flrt"))?;
    expect_dims("left", left.dims(), &[m, r])?;
    let right = read_container_file(dir.join("right.flrt"))?;
    expect_dims("right", right.dims(), &[r, n])?;
    let factors = LowRankFactors::from_matrices(&left.to_matrix()?, &right.to_matrix()?)?;

    let alpha = read_container_file(dir.join("alpha.flrt"))?;
    expect_dims("alpha", alpha.dims(), &[n])?;
    let alpha = alpha.to_vector()?;

    Ok(LayerBundle {
        meta,
        quantized,
        factors,
        alpha,
    })
}
