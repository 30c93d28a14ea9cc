//! Dense kernels used by the sketch and quantization paths.
//!
//! Everything here works on row-major `f64` storage. The hot paths of the
//! sketch are [`gemv`] and [`gemv_t`]; [`svd_oracle`] is a one-sided Jacobi
//! SVD kept for verification and baselines only.

use crate::error::{FlrqError, Result};

/// Largest `min(m, n)` accepted by [`svd_oracle`].
pub const SVD_ORACLE_LIMIT: usize = 1024;

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FlrqError::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlrqError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Skips the finiteness scan. Callers guarantee `data.len() == rows * cols`.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(FlrqError::shape(
                    format!("row {i} of length {c}"),
                    format!("length {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Multiplies column `j` by `scale[j]`.
    pub fn scale_columns(&self, scale: &[f64]) -> Result<Matrix> {
        check_len("column scale", self.cols, scale.len())?;
        let mut out = self.clone();
        for i in 0..self.rows {
            for (w, s) in out.row_mut(i).iter_mut().zip(scale) {
                *w *= s;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(FlrqError::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Dense product `self · rhs` in a fixed i-k-j order.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(FlrqError::shape(
                format!("rhs with {} rows", self.cols),
                format!("{} rows", rhs.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let c_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, rhs.row(k), c_row);
            }
        }
        Ok(out)
    }
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FlrqError::shape(
            format!("{what} of length {expected}"),
            format!("length {actual}"),
        ));
    }
    Ok(())
}

/// Dot product with four fixed accumulators; the summation order depends only
/// on the length, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y = A x`.
pub fn gemv(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_len("gemv input", a.cols, x.len())?;
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// `y = Aᵀ x`, accumulated row by row.
pub fn gemv_t(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    check_len("gemv_t input", a.rows, x.len())?;
    let mut y = vec![0.0; a.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, a.row(i), &mut y);
        }
    }
    Ok(y)
}

/// `A − u vᵀ`.
pub fn rank1_subtract(a: &Matrix, u: &[f64], v: &[f64]) -> Result<Matrix> {
    let mut out = a.clone();
    rank1_subtract_in_place(&mut out, u, v)?;
    Ok(out)
}

pub(crate) fn rank1_subtract_in_place(a: &mut Matrix, u: &[f64], v: &[f64]) -> Result<()> {
    rank1_update(a, -1.0, u, v)
}

pub(crate) fn rank1_add_in_place(a: &mut Matrix, u: &[f64], v: &[f64]) -> Result<()> {
    rank1_update(a, 1.0, u, v)
}

fn rank1_update(a: &mut Matrix, sign: f64, u: &[f64], v: &[f64]) -> Result<()> {
    check_len("left vector", a.rows, u.len())?;
    check_len("right vector", a.cols, v.len())?;
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            axpy(sign * ui, v, a.row_mut(i));
        }
    }
    Ok(())
}

/// Largest absolute entry.
pub fn amax(a: &Matrix) -> Result<f64> {
    if a.is_empty() {
        return Err(FlrqError::Empty("amax of an empty matrix"));
    }
    Ok(amax_slice(&a.data))
}

pub(crate) fn amax_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn fro_norm(a: &Matrix) -> f64 {
    norm2(&a.data)
}

/// Thin SVD `A = U diag(σ) Vᵀ` with `k = min(m, n)` triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// m × k, orthonormal columns.
    pub u: Matrix,
    /// n × k, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// Best rank-`r` reconstruction `U_r Σ_r V_rᵀ`.
    pub fn truncated(&self, r: usize) -> Matrix {
        let r = r.min(self.singular_values.len());
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for t in 0..r {
            let s = self.singular_values[t];
            let vt = self.v.column(t);
            for i in 0..m {
                axpy(s * self.u.get(i, t), &vt, out.row_mut(i));
            }
        }
        out
    }

    /// `sqrt(Σ_{i>r} σ_i²)`, the optimal rank-`r` Frobenius residual.
    pub fn tail_norm(&self, r: usize) -> f64 {
        self.singular_values
            .iter()
            .skip(r)
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact SVD via one-sided (Hestenes) Jacobi rotations.
///
/// Verification oracle only: cost is O(sweeps · k² · max(m, n)).
pub fn svd_oracle(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k > SVD_ORACLE_LIMIT {
        return Err(FlrqError::OracleTooLarge {
            limit: SVD_ORACLE_LIMIT,
            actual: k,
        });
    }
    if k == 0 {
        return Err(FlrqError::Empty("svd of an empty matrix"));
    }
    // Orthogonalize the columns of the tall orientation.
    let tall = if m >= n { a.clone() } else { a.transpose() };
    let (rows, cols) = tall.shape();
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| tall.column(j)).collect();
    let mut right: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut right, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut triplets: Vec<(f64, usize)> = work.iter().map(|c| norm2(c)).zip(0..).collect();
    triplets.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let scale = triplets.first().map_or(0.0, |t| t.0);
    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut sigmas = Vec::with_capacity(cols);
    let mut right_cols = Vec::with_capacity(cols);
    for &(sigma, j) in &triplets {
        let negligible = sigma <= scale * 1e-14 || sigma == 0.0;
        let col = if negligible {
            None
        } else {
            Some(work[j].iter().map(|x| x / sigma).collect::<Vec<f64>>())
        };
        left_cols.push(col.unwrap_or_default());
        sigmas.push(if negligible { sigma.max(0.0) } else { sigma });
        right_cols.push(right[j].clone());
    }
    complete_orthonormal(&mut left_cols, rows);

    let left = Matrix::from_fn(rows, cols, |i, j| left_cols[j][i]);
    let rightm = Matrix::from_fn(cols, cols, |i, j| right_cols[j][i]);
    let (u, v) = if m >= n { (left, rightm) } else { (rightm, left) };
    Ok(SvdResult {
        singular_values: sigmas,
        u,
        v,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Fills empty columns (null singular directions) with unit vectors
/// orthogonal to every other column, via Gram–Schmidt on the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], len: usize) {
    let mut candidate = 0usize;
    for j in 0..cols.len() {
        if !cols[j].is_empty() {
            continue;
        }
        loop {
            assert!(candidate < len, "ran out of basis vectors");
            let mut e = vec![0.0; len];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&e, other);
                    axpy(-proj, other, &mut e);
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                e.iter_mut().for_each(|x| *x /= nrm);
                cols[j] = e;
                break;
            }
        }
    }
}
