//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use flrq::io::{self as fio, IoError, LayerBundle, TensorContainer};
use flrq::quantize::{dequantize, quantize_matrix};
use flrq::rankselect::qk as qk_core;
use flrq::{
    BlcConfig, CalibrationBatch, Family, FlrqError, Matrix, QuantMode, QuantizedLayer, RankSelectionConfig,
    SketchConfig, SketchRng, SynthSpec,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn value_err(e: FlrqError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: IoError) -> PyErr {
    match e {
        IoError::Io(inner) => PyIOError::new_err(inner.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Rows) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(value_err)
}

fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn parse_mode(mode: &str) -> PyResult<QuantMode> {
    match mode {
        "symmetric" | "sym" => Ok(QuantMode::Symmetric),
        "asymmetric" | "asym" => Ok(QuantMode::Asymmetric),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
}

/// Synthetic layer as `(weight, calibration)`.
#[pyfunction]
#[pyo3(signature = (m, n, family = "outlier_channels", seed = 0, tokens = 128, nu = 3.0, count = 4, boost = 10.0))]
#[allow(clippy::too_many_arguments)]
fn gen_layer(
    m: usize,
    n: usize,
    family: &str,
    seed: u64,
    tokens: usize,
    nu: f64,
    count: usize,
    boost: f64,
) -> PyResult<(Rows, Rows)> {
    let family = match family {
        "gaussian" => Family::Gaussian,
        "student_t" => Family::StudentT { nu },
        "outlier_channels" => Family::OutlierChannels { count, boost },
        other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    };
    let layer = flrq::gen_layer(&SynthSpec { m, n, family, seed, tokens }).map_err(value_err)?;
    Ok((to_rows(&layer.weight), to_rows(&layer.calibration.x)))
}

/// One sketch step; returns `(left, right)` with `right` unit-norm.
#[pyfunction]
#[pyo3(signature = (a, it = 2, seed = 0))]
fn r1_step(a: Rows, it: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let a = to_matrix(a)?;
    let cfg = SketchConfig { it, seed, reorthogonalize: false };
    let p = flrq::r1_step(&a, &cfg, &mut SketchRng::new(seed)).map_err(value_err)?;
    Ok((p.left, p.right))
}

/// Greedy rank-`r` deflation; returns `(left, right, residual_norms)`.
#[pyfunction]
#[pyo3(signature = (a, r, it = 2, seed = 0))]
fn deflate(a: Rows, r: usize, it: usize, seed: u64) -> PyResult<(Rows, Rows, Vec<f64>)> {
    let a = to_matrix(a)?;
    let d = flrq::deflate(&a, r, &SketchConfig { it, seed, reorthogonalize: false }).map_err(value_err)?;
    Ok((to_rows(&d.factors.left()), to_rows(&d.factors.right()), d.residual_norms))
}

#[pyfunction]
fn singular_values(a: Rows) -> PyResult<Vec<f64>> {
    Ok(flrq::svd_oracle(&to_matrix(a)?).map_err(value_err)?.singular_values)
}

#[pyfunction]
#[pyo3(signature = (d, d_fp, m, n, r, w0, wr))]
fn qk(d: u8, d_fp: u32, m: usize, n: usize, r: usize, w0: f64, wr: f64) -> PyResult<(f64, f64)> {
    qk_core(d, d_fp, m, n, r, w0, wr).map_err(value_err)
}

/// Flexible rank selection; returns `(rank, stop_reason, left, right)`.
#[pyfunction]
#[pyo3(signature = (w, d = 4, x = 0.2, t = 1e-3, it = 2, seed = 0, d_fp = 16, window = 4))]
#[allow(clippy::too_many_arguments)]
fn select_rank(
    w: Rows,
    d: u8,
    x: f64,
    t: f64,
    it: usize,
    seed: u64,
    d_fp: u32,
    window: usize,
) -> PyResult<(usize, String, Rows, Rows)> {
    let cfg = RankSelectionConfig { d, d_fp, x, t, window, it, seed };
    cfg.validate().map_err(value_err)?;
    let (f, trace) = flrq::select_rank(&to_matrix(w)?, &cfg).map_err(value_err)?;
    Ok((f.rank(), trace.stop_reason.as_str().to_string(), to_rows(&f.left()), to_rows(&f.right())))
}

/// Group quantization followed by dequantization.
#[pyfunction]
#[pyo3(signature = (r, bits = 4, group_size = 128, mode = "asymmetric"))]
fn quantize_dequantize(r: Rows, bits: u8, group_size: usize, mode: &str) -> PyResult<Rows> {
    let q = quantize_matrix(&to_matrix(r)?, bits, group_size, parse_mode(mode)?).map_err(value_err)?;
    Ok(to_rows(&dequantize(&q)))
}

#[pyfunction]
fn pack_codes(codes: Vec<u8>, bits: u8) -> PyResult<Vec<u8>> {
    fio::pack_codes(&codes, bits).map_err(io_err)
}

#[pyfunction]
fn unpack_codes(data: Vec<u8>, bits: u8, count: usize) -> PyResult<Vec<u32>> {
    let codes = fio::unpack_codes(&data, bits, count).map_err(io_err)?;
    Ok(codes.into_iter().map(u32::from).collect())
}

#[pyfunction]
fn write_matrix(path: PathBuf, rows: Rows) -> PyResult<()> {
    fio::write_container_file(path, &TensorContainer::from_matrix(&to_matrix(rows)?)).map_err(io_err)
}

#[pyfunction]
fn read_matrix(path: PathBuf) -> PyResult<Rows> {
    let c = fio::read_container_file(path).map_err(io_err)?;
    Ok(to_rows(&c.to_matrix().map_err(io_err)?))
}

/// A quantized layer: integer codes plus low-rank factors.
#[pyclass(name = "QuantizedLayer", frozen)]
struct PyQuantizedLayer {
    inner: QuantizedLayer,
    config: BlcConfig,
}

#[pymethods]
impl PyQuantizedLayer {
    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn rel_error(&self) -> f64 {
        self.inner.error.rel
    }

    #[getter]
    fn abs_error(&self) -> f64 {
        self.inner.error.abs
    }

    #[getter]
    fn p_clp(&self) -> f64 {
        self.inner.p_clp
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.best_epoch
    }

    #[getter]
    fn stop_reason(&self) -> &'static str {
        self.inner.rank_trace.stop_reason.as_str()
    }

    /// Per-epoch `(epoch, rel_error, rank)` records.
    #[getter]
    fn trace(&self) -> Vec<(usize, f64, usize)> {
        self.inner.blc_trace.iter().map(|r| (r.epoch, r.rel_error, r.rank)).collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn reconstruct(&self) -> PyResult<Rows> {
        Ok(to_rows(&self.inner.reconstruct().map_err(value_err)?))
    }

    fn extra_bits(&self) -> f64 {
        let (m, n) = self.inner.quantized.shape();
        fio::extra_bits(self.config.rank.d_fp, self.inner.rank(), m, n)
    }

    /// Writes the layer as a bundle directory.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        let config = serde_json::to_value(&self.config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        fio::write_bundle(dir, &LayerBundle::from_layer(&self.inner, self.config.rank.seed, config)).map_err(io_err)
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.quantized.shape();
        format!(
            "QuantizedLayer({m}x{n}, d={}, rank={}, rel_error={:.6})",
            self.config.rank.d,
            self.inner.rank(),
            self.inner.error.rel
        )
    }
}

/// Quantizes one layer with flexible low-rank correction.
#[pyfunction]
#[pyo3(signature = (
    weight, calibration, d = 4, group_size = 128, x = 0.2, epochs = None, mode = "asymmetric",
    seed = 0, it = 2, fixed_rank = None, activation_scaling = true,
))]
#[allow(clippy::too_many_arguments)]
fn quantize_layer(
    weight: Rows,
    calibration: Rows,
    d: u8,
    group_size: usize,
    x: f64,
    epochs: Option<usize>,
    mode: &str,
    seed: u64,
    it: usize,
    fixed_rank: Option<usize>,
    activation_scaling: bool,
) -> PyResult<PyQuantizedLayer> {
    let base = BlcConfig::for_bits(d);
    let config = BlcConfig {
        epochs: epochs.unwrap_or(base.epochs),
        rank: RankSelectionConfig { d, x, it, seed, ..base.rank },
        mode: parse_mode(mode)?,
        group_size,
        fixed_rank,
        activation_scaling,
        ..base
    };
    config.rank.validate().map_err(value_err)?;
    let w = to_matrix(weight)?;
    let batch = CalibrationBatch::new(to_matrix(calibration)?).map_err(value_err)?;
    let inner = flrq::flrq_layer(&w, &batch, &config).map_err(value_err)?;
    Ok(PyQuantizedLayer { inner, config })
}

#[pymodule]
#[pyo3(name = "flrq")]
fn flrq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuantizedLayer>()?;
    m.add_function(wrap_pyfunction!(gen_layer, m)?)?;
    m.add_function(wrap_pyfunction!(r1_step, m)?)?;
    m.add_function(wrap_pyfunction!(deflate, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(qk, m)?)?;
    m.add_function(wrap_pyfunction!(select_rank, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_layer, m)?)?;
    m.add_function(wrap_pyfunction!(pack_codes, m)?)?;
    m.add_function(wrap_pyfunction!(unpack_codes, m)?)?;
    m.add_function(wrap_pyfunction!(write_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(read_matrix, m)?)?;
    Ok(())
}
