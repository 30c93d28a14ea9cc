//! Rank-1 randomized sketching and greedy deflation.
//!
//! A single step draws a Gaussian probe `S ∈ R^{n×1}`, forms
//! `P = (A Aᵀ)^it A S` and `K = Aᵀ P`, and returns
//! `left = (‖K‖ / ‖P‖²) P`, `right = K / ‖K‖`. Only matrix-vector products
//! are involved: `2·it + 2` of them per step.

use crate::error::{FlrqError, Result};
use crate::linalg::{self, fro_norm, norm2, rank1_add_in_place, rank1_subtract_in_place, Matrix};
use crate::rng::SketchRng;

/// Redraws allowed when the Gaussian probe lands in the null space.
const MAX_REDRAWS: usize = 3;

/// Relative Frobenius norm under which a residual counts as exhausted.
const EXHAUSTED_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchConfig {
    /// Power iterations.
    pub it: usize,
    pub seed: u64,
    /// Gram–Schmidt each new right vector against earlier ones.
    pub reorthogonalize: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            it: 2,
            seed: 0,
            reorthogonalize: false,
        }
    }
}

/// One extracted rank-1 component `left · rightᵀ`. `right` is unit-norm and
/// the magnitude lives on `left`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Pair {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Anything that can apply `A` and `Aᵀ` to a vector.
pub trait MatVec {
    fn shape(&self) -> (usize, usize);
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_t(&self, x: &[f64]) -> Vec<f64>;
}

impl MatVec for Matrix {
    fn shape(&self) -> (usize, usize) {
        Matrix::shape(self)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        linalg::gemv(self, x).expect("probe length matches columns")
    }

    fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        linalg::gemv_t(self, x).expect("probe length matches rows")
    }
}

/// Number of matrix-vector products one sketch step performs.
pub const fn matvecs_per_step(it: usize) -> usize {
    2 * it + 2
}

/// Extracts an approximation of the dominant singular pair of `a`.
pub fn r1_step(a: &Matrix, cfg: &SketchConfig, rng: &mut SketchRng) -> Result<Rank1Pair> {
    if a.is_empty() || fro_norm(a) == 0.0 {
        return Err(FlrqError::ZeroMatrix);
    }
    r1_step_op(a, cfg.it, rng)
}

/// Operator form of [`r1_step`]; the caller is responsible for the
/// zero-operator check.
pub fn r1_step_op<A: MatVec + ?Sized>(a: &A, it: usize, rng: &mut SketchRng) -> Result<Rank1Pair> {
    let (_, n) = a.shape();
    let mut probe = vec![0.0; n];
    for _ in 0..=MAX_REDRAWS {
        rng.fill_gaussian(&mut probe);
        if let Some(pair) = sketch_from_probe(a, it, &probe) {
            return Ok(pair);
        }
    }
    Err(FlrqError::DegenerateProjection {
        attempts: MAX_REDRAWS + 1,
    })
}

fn sketch_from_probe<A: MatVec + ?Sized>(a: &A, it: usize, probe: &[f64]) -> Option<Rank1Pair> {
    let mut p = a.apply(probe);
    for _ in 0..it {
        // Rescaling P leaves left/right unchanged and keeps (AAᵀ)^it from
        // overflowing.
        let pn = norm2(&p);
        if pn == 0.0 {
            return None;
        }
        p.iter_mut().for_each(|x| *x /= pn);
        let z = a.apply_t(&p);
        p = a.apply(&z);
    }
    let p_norm = norm2(&p);
    if p_norm == 0.0 || !p_norm.is_finite() {
        return None;
    }
    let k = a.apply_t(&p);
    let k_norm = norm2(&k);
    if k_norm == 0.0 || !k_norm.is_finite() {
        return None;
    }
    let gain = k_norm / (p_norm * p_norm);
    Some(Rank1Pair {
        left: p.iter().map(|x| x * gain).collect(),
        right: k.iter().map(|x| x / k_norm).collect(),
    })
}

/// Stacked factors `W_L (m×r) · W_R (r×n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    rows: usize,
    cols: usize,
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
}

impl LowRankFactors {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    /// Builds factors from `left` (m×r) and `right` (r×n).
    pub fn from_matrices(left: &Matrix, right: &Matrix) -> Result<Self> {
        if left.cols() != right.rows() {
            return Err(FlrqError::shape(
                format!("right factor with {} rows", left.cols()),
                format!("{} rows", right.rows()),
            ));
        }
        let r = left.cols();
        Ok(Self {
            rows: left.rows(),
            cols: right.cols(),
            left: (0..r).map(|t| left.column(t)).collect(),
            right: (0..r).map(|t| right.row(t).to_vec()).collect(),
        })
    }

    pub fn push(&mut self, pair: Rank1Pair) {
        debug_assert_eq!(pair.left.len(), self.rows);
        debug_assert_eq!(pair.right.len(), self.cols);
        self.left.push(pair.left);
        self.right.push(pair.right);
    }

    pub fn rank(&self) -> usize {
        self.left.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn left_vectors(&self) -> &[Vec<f64>] {
        &self.left
    }

    pub fn right_vectors(&self) -> &[Vec<f64>] {
        &self.right
    }

    /// `W_L` as an m×r matrix.
    pub fn left(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.rank(), |i, t| self.left[t][i])
    }

    /// `W_R` as an r×n matrix.
    pub fn right(&self) -> Matrix {
        Matrix::from_fn(self.rank(), self.cols, |t, j| self.right[t][j])
    }

    /// Dense `W_L W_R`.
    pub fn reconstruct(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (u, v) in self.left.iter().zip(&self.right) {
            rank1_add_in_place(&mut out, u, v).expect("factor shapes");
        }
        out
    }

    /// Divides column `j` of the right factor by `scale[j]`.
    pub fn unscale_right(&mut self, scale: &[f64]) -> Result<()> {
        if scale.len() != self.cols {
            return Err(FlrqError::shape(
                format!("scale of length {}", self.cols),
                format!("length {}", scale.len()),
            ));
        }
        for v in &mut self.right {
            for (x, s) in v.iter_mut().zip(scale) {
                *x /= s;
            }
        }
        Ok(())
    }
}

/// Output of [`deflate`].
#[derive(Debug, Clone)]
pub struct Deflation {
    pub factors: LowRankFactors,
    /// The residual vanished before the requested rank was reached.
    pub truncated: bool,
    /// `‖A − A_t‖_F` for t = 0..=rank.
    pub residual_norms: Vec<f64>,
}

/// Greedy rank-`r` approximation by repeated [`r1_step`] + subtraction.
pub fn deflate(a: &Matrix, r: usize, cfg: &SketchConfig) -> Result<Deflation> {
    let mut rng = SketchRng::new(cfg.seed);
    deflate_with_rng(a, r, cfg, &mut rng)
}

pub fn deflate_with_rng(
    a: &Matrix,
    r: usize,
    cfg: &SketchConfig,
    rng: &mut SketchRng,
) -> Result<Deflation> {
    let (m, n) = a.shape();
    if r == 0 || r > m.min(n) {
        return Err(FlrqError::param(
            "r",
            format!("must satisfy 1 <= r <= min(m, n) = {}, got {r}", m.min(n)),
        ));
    }
    let mut residual = a.clone();
    let mut factors = LowRankFactors::empty(m, n);
    let base = fro_norm(a);
    let mut residual_norms = vec![base];
    let mut truncated = false;

    for _ in 0..r {
        let current = *residual_norms.last().expect("seeded");
        if current == 0.0 || current <= EXHAUSTED_RTOL * base {
            truncated = true;
            break;
        }
        let mut pair = match r1_step_op(&residual, cfg.it, rng) {
            Ok(p) => p,
            Err(FlrqError::DegenerateProjection { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if cfg.reorthogonalize {
            match orthogonalize(&pair.right, factors.right_vectors()) {
                Some(v) => {
                    pair.left = linalg::gemv(&residual, &v)?;
                    pair.right = v;
                }
                None => {
                    truncated = true;
                    break;
                }
            }
        }
        rank1_subtract_in_place(&mut residual, &pair.left, &pair.right)?;
        residual_norms.push(fro_norm(&residual));
        factors.push(pair);
    }
    Ok(Deflation {
        factors,
        truncated,
        residual_norms,
    })
}

/// Two passes of classical Gram–Schmidt, then normalization.
fn orthogonalize(v: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut out = v.to_vec();
    for _ in 0..2 {
        for b in basis {
            let proj = linalg::dot(&out, b);
            out.iter_mut().zip(b).for_each(|(x, bi)| *x -= proj * bi);
        }
    }
    let nrm = norm2(&out);
    if nrm < 1e-12 {
        return None;
    }
    out.iter_mut().for_each(|x| *x /= nrm);
    Some(out)
}

/// `‖A − W_L W_R‖_F`.
pub fn sketch_residual_report(a: &Matrix, factors: &LowRankFactors) -> Result<f64> {
    if a.shape() != factors.shape() {
        return Err(FlrqError::shape(
            format!("{}x{}", factors.shape().0, factors.shape().1),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(fro_norm(&a.sub(&factors.reconstruct())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd_oracle;
    use std::cell::Cell;

    struct Counting<'a> {
        inner: &'a Matrix,
        calls: Cell<usize>,
    }

    impl MatVec for Counting<'_> {
        fn shape(&self) -> (usize, usize) {
            self.inner.shape()
        }
        fn apply(&self, x: &[f64]) -> Vec<f64> {
            self.calls.set(self.calls.get() + 1);
            self.inner.apply(x)
        }
        fn apply_t(&self, x: &[f64]) -> Vec<f64> {
            self.calls.set(self.calls.get() + 1);
            self.inner.apply_t(x)
        }
    }

    fn gaussian(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = SketchRng::with_stream(seed, 99);
        Matrix::new(m, n, rng.gaussian_vec(m * n)).unwrap()
    }

    #[test]
    fn matvec_budget_per_step() {
        let a = gaussian(12, 9, 1);
        for it in [0, 1, 2, 5] {
            let op = Counting {
                inner: &a,
                calls: Cell::new(0),
            };
            r1_step_op(&op, it, &mut SketchRng::new(3)).unwrap();
            assert_eq!(op.calls.get(), matvecs_per_step(it));
        }
        assert_eq!(matvecs_per_step(2), 6);
    }

    #[test]
    fn rank1_input_is_exact() {
        let u: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let v: Vec<f64> = (0..5).map(|j| 1.0 / (j as f64 + 1.0)).collect();
        let a = Matrix::outer(&u, &v);
        for it in [0, 1, 3] {
            let cfg = SketchConfig { it, ..Default::default() };
            let pair = r1_step(&a, &cfg, &mut SketchRng::new(11)).unwrap();
            assert!((norm2(&pair.right) - 1.0).abs() < 1e-10);
            let res = fro_norm(&rank1_subtract(&a, &pair));
            assert!(res <= 1e-6 * fro_norm(&a), "it={it} residual {res}");
        }
    }

    fn rank1_subtract(a: &Matrix, p: &Rank1Pair) -> Matrix {
        linalg::rank1_subtract(a, &p.left, &p.right).unwrap()
    }

    #[test]
    fn converges_to_top_singular_value() {
        let a = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = SketchConfig { it: 8, ..Default::default() };
        let pair = r1_step(&a, &cfg, &mut SketchRng::new(5)).unwrap();
        let sigma = svd_oracle(&a).unwrap().singular_values[0];
        assert!((norm2(&pair.left) - sigma).abs() <= 1e-3 * sigma);
    }

    #[test]
    fn zero_matrix_errors() {
        let cfg = SketchConfig::default();
        assert_eq!(
            r1_step(&Matrix::zeros(3, 3), &cfg, &mut SketchRng::new(0)),
            Err(FlrqError::ZeroMatrix)
        );
        let d = deflate(&Matrix::zeros(3, 4), 2, &cfg).unwrap();
        assert!(d.truncated);
        assert_eq!(d.factors.rank(), 0);
    }

    #[test]
    fn deflate_rank2_orthogonal_pairs() {
        let m = 10;
        let n = 8;
        let u1: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let u2: Vec<f64> = (0..m).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let v1: Vec<f64> = (0..n).map(|j| if j < 4 { 0.5 } else { 0.0 }).collect();
        let v2: Vec<f64> = (0..n).map(|j| if j >= 4 { 0.5 } else { 0.0 }).collect();
        let a = Matrix::outer(&u1, &v1)
            .add(&Matrix::outer(&u2.iter().map(|x| 0.1 * x).collect::<Vec<_>>(), &v2))
            .unwrap();
        let cfg = SketchConfig { it: 4, ..Default::default() };
        let d = deflate(&a, 2, &cfg).unwrap();
        let res = sketch_residual_report(&a, &d.factors).unwrap();
        assert!(res <= 1e-5 * fro_norm(&a), "residual {res}");
    }

    #[test]
    fn full_rank_deflation_recovers_matrix() {
        for reorth in [false, true] {
            let a = gaussian(6, 5, 4);
            let cfg = SketchConfig {
                it: 8,
                seed: 2,
                reorthogonalize: reorth,
            };
            let d = deflate(&a, 5, &cfg).unwrap();
            let res = sketch_residual_report(&a, &d.factors).unwrap();
            assert!(res <= 1e-4 * fro_norm(&a), "reorth={reorth} residual {res}");
        }
    }

    #[test]
    fn deflation_norms_never_increase() {
        let a = gaussian(20, 30, 8);
        let d = deflate(&a, 15, &SketchConfig { it: 1, seed: 4, reorthogonalize: false }).unwrap();
        for w in d.residual_norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn deflate_rank_bounds() {
        let a = gaussian(4, 3, 1);
        assert!(deflate(&a, 0, &SketchConfig::default()).is_err());
        assert!(deflate(&a, 4, &SketchConfig::default()).is_err());
    }

    #[test]
    fn residual_report_cases() {
        let a = gaussian(16, 16, 21);
        assert_eq!(
            sketch_residual_report(&a, &LowRankFactors::empty(16, 16)).unwrap(),
            fro_norm(&a)
        );
        let d = deflate(&a, 3, &SketchConfig::default()).unwrap();
        // naive reconstruction
        let mut naive = vec![0.0; 256];
        for t in 0..3 {
            for i in 0..16 {
                for j in 0..16 {
                    naive[i * 16 + j] += d.factors.left_vectors()[t][i] * d.factors.right_vectors()[t][j];
                }
            }
        }
        let naive_res: f64 = a
            .data()
            .iter()
            .zip(&naive)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let got = sketch_residual_report(&a, &d.factors).unwrap();
        assert!((got - naive_res).abs() <= 1e-12 * naive_res);
        assert!(sketch_residual_report(&a, &LowRankFactors::empty(3, 16)).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = gaussian(9, 13, 6);
        let cfg = SketchConfig::default();
        let p1 = r1_step(&a, &cfg, &mut SketchRng::new(77)).unwrap();
        let p2 = r1_step(&a, &cfg, &mut SketchRng::new(77)).unwrap();
        assert_eq!(p1, p2);
    }
}
