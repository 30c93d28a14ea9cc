//! Group-wise integer quantization along the input dimension, clipping, and
//! the clip-threshold grid search.
//!
//! Each row of an m×n matrix is split into `ceil(n / group_size)` contiguous
//! groups; group `g` of row `i` has index `i * groups_per_row + g`.
//!
//! * symmetric: `step = amax / (2^{d−1} − 1)`, `code = clamp(round(w / step))`
//!   in `[−(2^{d−1} − 1), 2^{d−1} − 1]`, `w ≈ code · step`.
//! * asymmetric: the range `[min(g, 0), max(g, 0)]` is split into `2^d − 1`
//!   steps, `zero = round(−min / step)`, `code = clamp(round(w / step) + zero)`
//!   in `[0, 2^d − 1]`, `w ≈ (code − zero) · step`.
//!
//! Rounding is half-to-even throughout.

use serde::{Deserialize, Serialize};

use crate::error::{FlrqError, Result};
use crate::linalg::{amax_slice, fro_norm, Matrix};

pub const DEFAULT_GROUP_SIZE: usize = 128;

/// Default clip ratios, as fractions of `amax`.
pub const DEFAULT_CLIP_GRID: [f64; 8] = [1.0, 0.98, 0.95, 0.92, 0.90, 0.85, 0.80, 0.70];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Symmetric,
    #[default]
    Asymmetric,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Symmetric => "symmetric",
            QuantMode::Asymmetric => "asymmetric",
        }
    }
}

impl std::str::FromStr for QuantMode {
    type Err = FlrqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(QuantMode::Symmetric),
            "asymmetric" | "asym" => Ok(QuantMode::Asymmetric),
            other => Err(FlrqError::param("mode", format!("unknown mode {other:?}"))),
        }
    }
}

/// How [`clip`] treats entries beyond the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Clamp to `±p_clp`.
    #[default]
    Saturate,
    /// Replace with zero. Experimental.
    Zero,
}

/// Bit width, group size and mode in one place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub group_size: usize,
    pub mode: QuantMode,
}

impl QuantSpec {
    pub fn new(bits: u8, group_size: usize, mode: QuantMode) -> Result<Self> {
        check_bits(bits)?;
        if group_size == 0 {
            return Err(FlrqError::param("group_size", "must be >= 1"));
        }
        Ok(Self {
            bits,
            group_size,
            mode,
        })
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(2..=4).contains(&bits) {
        return Err(FlrqError::param("bits", format!("must be 2, 3 or 4, got {bits}")));
    }
    Ok(())
}

/// Largest symmetric code magnitude, `2^{d−1} − 1`.
pub fn symmetric_max(bits: u8) -> i32 {
    (1 << (bits - 1)) - 1
}

/// Largest asymmetric code, `2^d − 1`.
pub fn asymmetric_max(bits: u8) -> i32 {
    (1 << bits) - 1
}

/// Integer codes plus per-group scale (step) and zero point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    bits: u8,
    group_size: usize,
    mode: QuantMode,
    codes: Vec<i8>,
    scales: Vec<f64>,
    zeros: Vec<f64>,
}

impl QuantizedTensor {
    /// Reassembles a tensor from stored parts, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: usize,
        cols: usize,
        bits: u8,
        group_size: usize,
        mode: QuantMode,
        codes: Vec<i8>,
        scales: Vec<f64>,
        zeros: Vec<f64>,
    ) -> Result<Self> {
        let spec = QuantSpec::new(bits, group_size, mode)?;
        let groups = rows * cols.div_ceil(group_size);
        if codes.len() != rows * cols {
            return Err(FlrqError::shape(format!("{} codes", rows * cols), format!("{}", codes.len())));
        }
        if scales.len() != groups {
            return Err(FlrqError::shape(format!("{groups} scales"), format!("{}", scales.len())));
        }
        let (lo, hi) = code_range(spec);
        if let Some(index) = codes.iter().position(|&c| (c as i32) < lo || (c as i32) > hi) {
            return Err(FlrqError::param("codes", format!("code at {index} out of range [{lo}, {hi}]")));
        }
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(FlrqError::param("scales", "must be finite and non-negative"));
        }
        match mode {
            QuantMode::Symmetric if !zeros.is_empty() => {
                return Err(FlrqError::param("zeros", "symmetric tensors carry no zero points"));
            }
            QuantMode::Asymmetric if zeros.len() != groups => {
                return Err(FlrqError::shape(format!("{groups} zeros"), format!("{}", zeros.len())));
            }
            _ => {}
        }
        if zeros.iter().any(|z| !z.is_finite()) {
            return Err(FlrqError::param("zeros", "must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            bits,
            group_size,
            mode,
            codes,
            scales,
            zeros,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn spec(&self) -> QuantSpec {
        QuantSpec {
            bits: self.bits,
            group_size: self.group_size,
            mode: self.mode,
        }
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    /// Per-group step sizes.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Per-group zero points; empty in symmetric mode.
    pub fn zeros(&self) -> &[f64] {
        &self.zeros
    }

    pub fn groups_per_row(&self) -> usize {
        self.cols.div_ceil(self.group_size)
    }

    pub fn num_groups(&self) -> usize {
        self.rows * self.groups_per_row()
    }

    /// Group index of element `(i, j)`.
    pub fn group_of(&self, i: usize, j: usize) -> usize {
        i * self.groups_per_row() + j / self.group_size
    }
}

/// Inclusive code range for a spec.
pub fn code_range(spec: QuantSpec) -> (i32, i32) {
    match spec.mode {
        QuantMode::Symmetric => {
            let q = symmetric_max(spec.bits);
            (-q, q)
        }
        QuantMode::Asymmetric => (0, asymmetric_max(spec.bits)),
    }
}

pub fn quantize_matrix(r: &Matrix, bits: u8, group_size: usize, mode: QuantMode) -> Result<QuantizedTensor> {
    quantize_with(r, QuantSpec::new(bits, group_size, mode)?)
}

pub fn quantize_with(r: &Matrix, spec: QuantSpec) -> Result<QuantizedTensor> {
    let (rows, cols) = r.shape();
    if let Some(index) = r.data().iter().position(|v| !v.is_finite()) {
        return Err(FlrqError::NonFinite { index });
    }
    let gpr = cols.div_ceil(spec.group_size);
    let mut codes = Vec::with_capacity(rows * cols);
    let mut scales = Vec::with_capacity(rows * gpr);
    let mut zeros = Vec::new();
    for i in 0..rows {
        for chunk in r.row(i).chunks(spec.group_size) {
            match spec.mode {
                QuantMode::Symmetric => {
                    let qmax = symmetric_max(spec.bits) as f64;
                    let amax = amax_slice(chunk);
                    let step = amax / qmax;
                    scales.push(step);
                    if step == 0.0 {
                        codes.extend(std::iter::repeat_n(0i8, chunk.len()));
                    } else {
                        codes.extend(
                            chunk
                                .iter()
                                .map(|w| (w / step).round_ties_even().clamp(-qmax, qmax) as i8),
                        );
                    }
                }
                QuantMode::Asymmetric => {
                    let qmax = asymmetric_max(spec.bits) as f64;
                    let lo = chunk.iter().fold(0.0f64, |a, &b| a.min(b));
                    let hi = chunk.iter().fold(0.0f64, |a, &b| a.max(b));
                    let step = (hi - lo) / qmax;
                    scales.push(step);
                    if step == 0.0 {
                        zeros.push(0.0);
                        codes.extend(std::iter::repeat_n(0i8, chunk.len()));
                    } else {
                        let zero = (-lo / step).round_ties_even().clamp(0.0, qmax);
                        zeros.push(zero);
                        codes.extend(
                            chunk
                                .iter()
                                .map(|w| ((w / step).round_ties_even() + zero).clamp(0.0, qmax) as i8),
                        );
                    }
                }
            }
        }
    }
    Ok(QuantizedTensor {
        rows,
        cols,
        bits: spec.bits,
        group_size: spec.group_size,
        mode: spec.mode,
        codes,
        scales,
        zeros,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    let gpr = q.groups_per_row();
    let mut data = Vec::with_capacity(q.rows * q.cols);
    for i in 0..q.rows {
        let row = &q.codes[i * q.cols..(i + 1) * q.cols];
        for (g, chunk) in row.chunks(q.group_size).enumerate() {
            let gi = i * gpr + g;
            let step = q.scales[gi];
            let zero = if q.mode == QuantMode::Asymmetric { q.zeros[gi] } else { 0.0 };
            data.extend(chunk.iter().map(|&c| (c as f64 - zero) * step));
        }
    }
    Matrix::from_raw(q.rows, q.cols, data)
}

/// Worst-case rounding error, `max_g step_g / 2`.
pub fn max_quant_error(q: &QuantizedTensor) -> f64 {
    q.scales.iter().fold(0.0f64, |m, s| m.max(s / 2.0))
}

/// Saturates every entry to `[−p_clp, p_clp]`.
pub fn clip(w: &Matrix, p_clp: f64) -> Result<Matrix> {
    clip_with_mode(w, p_clp, ClipMode::Saturate)
}

pub fn clip_with_mode(w: &Matrix, p_clp: f64, mode: ClipMode) -> Result<Matrix> {
    if !(p_clp > 0.0) || !p_clp.is_finite() {
        return Err(FlrqError::param("p_clp", format!("must be positive and finite, got {p_clp}")));
    }
    let data = w
        .data()
        .iter()
        .map(|&x| match mode {
            ClipMode::Saturate => x.clamp(-p_clp, p_clp),
            ClipMode::Zero if x.abs() > p_clp => 0.0,
            ClipMode::Zero => x,
        })
        .collect();
    Ok(Matrix::from_raw(w.rows(), w.cols(), data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSearchResult {
    /// Winning threshold.
    pub p_clp: f64,
    /// `(candidate threshold, ‖W X − deq X‖_F)` for every grid ratio, in grid order.
    pub grid_errors: Vec<(f64, f64)>,
}

/// Grid search over `p = ρ · amax(W)`, scoring `‖W X − dequant(quant(clip(W, p))) X‖_F`.
/// Ties go to the larger threshold.
pub fn search_clip(w: &Matrix, x: &Matrix, spec: QuantSpec, grid: &[f64]) -> Result<ClipSearchResult> {
    search_clip_with(w, x, spec, grid, ClipMode::Saturate).map(|(res, _)| res)
}

/// [`search_clip`] that also hands back the winning quantized tensor.
pub fn search_clip_with(
    w: &Matrix,
    x: &Matrix,
    spec: QuantSpec,
    grid: &[f64],
    mode: ClipMode,
) -> Result<(ClipSearchResult, QuantizedTensor)> {
    if grid.is_empty() {
        return Err(FlrqError::Empty("clip grid"));
    }
    if let Some(bad) = grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(FlrqError::param("clip grid", format!("ratio {bad} outside (0, 1]")));
    }
    if x.rows() != w.cols() {
        return Err(FlrqError::shape(
            format!("calibration with {} rows", w.cols()),
            format!("{} rows", x.rows()),
        ));
    }
    let top = amax_slice(w.data());
    let mut grid_errors = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, QuantizedTensor)> = None;
    for &ratio in grid {
        let p = ratio * top;
        let q = if p >= top || p == 0.0 {
            quantize_with(w, spec)?
        } else {
            quantize_with(&clip_with_mode(w, p, mode)?, spec)?
        };
        let err = output_error(w, &dequantize(&q), x)?;
        grid_errors.push((p, err));
        let better = match &best {
            None => true,
            Some((bp, be, _)) => err < *be || (err == *be && p > *bp),
        };
        if better {
            best = Some((p, err, q));
        }
    }
    let (p_clp, _, q) = best.expect("grid is non-empty");
    Ok((ClipSearchResult { p_clp, grid_errors }, q))
}

/// `‖(A − B) X‖_F`.
pub(crate) fn output_error(a: &Matrix, b: &Matrix, x: &Matrix) -> Result<f64> {
    Ok(fro_norm(&a.sub(b)?.matmul(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SketchRng;

    fn row(v: &[f64]) -> Matrix {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_worked_example() {
        let q = quantize_matrix(&row(&[-3.0, 1.0, 2.9]), 4, 128, QuantMode::Symmetric).unwrap();
        assert_eq!(q.codes(), &[-7, 2, 7]);
        assert!((q.scales()[0] - 3.0 / 7.0).abs() < 1e-15);
        let d = dequantize(&q);
        assert!((d.get(0, 0) + 3.0).abs() < 1e-12);
        assert!((d.get(0, 1) - 6.0 / 7.0).abs() < 1e-12);
        assert!((d.get(0, 2) - 3.0).abs() < 1e-12);
        assert!((max_quant_error(&q) - 3.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn zero_groups() {
        for mode in [QuantMode::Symmetric, QuantMode::Asymmetric] {
            let q = quantize_matrix(&Matrix::zeros(2, 5), 3, 2, mode).unwrap();
            assert!(q.codes().iter().all(|&c| c == 0));
            assert!(q.scales().iter().all(|&s| s == 0.0));
            assert_eq!(q.num_groups(), 2 * 3);
            assert_eq!(dequantize(&q), Matrix::zeros(2, 5));
            assert_eq!(max_quant_error(&q), 0.0);
        }
    }

    #[test]
    fn lattice_points_round_trip() {
        let step = 0.375;
        let vals: Vec<f64> = [-7, -3, 0, 1, 5, 7].iter().map(|&k| k as f64 * step).collect();
        let q = quantize_matrix(&row(&vals), 4, 128, QuantMode::Symmetric).unwrap();
        assert_eq!(dequantize(&q).data(), vals.as_slice());
        // asymmetric lattice: range [−6s, 9s] with 15 steps
        let vals: Vec<f64> = [-6, -2, 0, 3, 9].iter().map(|&k| k as f64 * step).collect();
        let q = quantize_matrix(&row(&vals), 4, 128, QuantMode::Asymmetric).unwrap();
        assert_eq!(dequantize(&q).data(), vals.as_slice());
    }

    #[test]
    fn error_bound_formula() {
        let q = quantize_matrix(&row(&[1.0, -0.5]), 2, 128, QuantMode::Symmetric).unwrap();
        assert_eq!(max_quant_error(&q), 0.5);
    }

    #[test]
    fn extremes_reproduce_amax() {
        let q = quantize_matrix(&row(&[-2.5, 0.1, 2.5]), 3, 128, QuantMode::Symmetric).unwrap();
        let d = dequantize(&q);
        assert_eq!(q.codes()[0], -3);
        assert_eq!(q.codes()[2], 3);
        assert!((d.get(0, 0) + 2.5).abs() < 1e-15 && (d.get(0, 2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        let w = row(&[1.0]);
        assert!(quantize_matrix(&w, 5, 128, QuantMode::Symmetric).is_err());
        assert!(quantize_matrix(&w, 1, 128, QuantMode::Symmetric).is_err());
        assert!(quantize_matrix(&w, 4, 0, QuantMode::Symmetric).is_err());
    }

    #[test]
    fn clip_examples() {
        let w = row(&[-5.0, 2.0, 5.0]);
        assert_eq!(clip(&w, 3.0).unwrap(), row(&[-3.0, 2.0, 3.0]));
        assert_eq!(clip(&w, 5.0).unwrap(), w);
        assert_eq!(clip(&w, 7.5).unwrap(), w);
        let tiny = clip(&w, 1e-300).unwrap();
        assert_eq!(tiny, row(&[-1e-300, 1e-300, 1e-300]));
        assert!(clip(&w, 0.0).is_err());
        assert!(clip(&w, -1.0).is_err());
        assert_eq!(
            clip_with_mode(&w, 3.0, ClipMode::Zero).unwrap(),
            row(&[0.0, 2.0, 0.0])
        );
    }

    #[test]
    fn group_layout() {
        let w = Matrix::from_fn(3, 10, |i, j| (i * 10 + j) as f64);
        let q = quantize_matrix(&w, 4, 4, QuantMode::Asymmetric).unwrap();
        assert_eq!(q.groups_per_row(), 3);
        assert_eq!(q.num_groups(), 9);
        assert_eq!(q.group_of(1, 9), 5);
        assert_eq!(q.scales().len(), 9);
        assert_eq!(q.zeros().len(), 9);
    }

    #[test]
    fn search_clip_singleton_and_lattice() {
        let mut rng = SketchRng::new(3);
        let x = Matrix::new(4, 6, rng.gaussian_vec(24)).unwrap();
        let spec = QuantSpec::new(4, 4, QuantMode::Symmetric).unwrap();
        let w = Matrix::new(2, 4, rng.gaussian_vec(8)).unwrap();
        let res = search_clip(&w, &x, spec, &[1.0]).unwrap();
        assert_eq!(res.p_clp, amax_slice(w.data()));

        // every row shares amax 7 so a single step serves both groups exactly
        let lattice = Matrix::from_rows(&[
            vec![7.0, -2.0, 3.0, 0.0],
            vec![1.0, -7.0, 4.0, 5.0],
        ])
        .unwrap();
        let res = search_clip(&lattice, &x, spec, &DEFAULT_CLIP_GRID).unwrap();
        assert_eq!(res.p_clp, 7.0);
        assert!(res.grid_errors[0].1 < 1e-12);

        assert!(matches!(search_clip(&w, &x, spec, &[]), Err(FlrqError::Empty(_))));
        assert!(search_clip(&w, &x, spec, &[1.2]).is_err());
    }

    #[test]
    fn search_clip_prefers_clipping_an_outlier() {
        let mut rng = SketchRng::new(17);
        let (m, n) = (8, 64);
        let mut vals = rng.gaussian_vec(m * n);
        vals.iter_mut().for_each(|v| *v *= 0.1);
        vals[5] = 3.0;
        let w = Matrix::new(m, n, vals).unwrap();
        let x = Matrix::new(n, 32, rng.gaussian_vec(n * 32)).unwrap();
        let spec = QuantSpec::new(2, 64, QuantMode::Asymmetric).unwrap();
        let grid = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];
        let res = search_clip(&w, &x, spec, &grid).unwrap();
        // brute force over the grid
        let base = res.grid_errors[0].1;
        let (bp, be) = res
            .grid_errors
            .iter()
            .copied()
            .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        assert_eq!(res.p_clp, bp);
        assert!(res.p_clp < 3.0);
        assert!(be < base);
    }
}
