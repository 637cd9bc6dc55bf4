//! Dense row-major `f64` matrices and the eager numerical kernels shared
//! with the gradient tape.

use super::DiffError;

/// Dense 2-D array of finite `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting shape/value violations.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        if rows * cols != data.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "{rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Identity-patterned matrix scaled by `diag`.
    pub fn eye(n: usize, diag: f64) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { diag } else { 0.0 })
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single entry of a 1x1 matrix.
    pub fn scalar(&self) -> Option<f64> {
        if self.rows == 1 && self.cols == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Vertical concatenation; all inputs must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Self, DiffError> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(DiffError::ShapeMismatch(format!(
                    "vstack column mismatch: {} vs {}",
                    cols, m.cols
                )));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Rows selected by index, in order.
    pub fn take_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A * B for (m x k) * (k x n).
pub(crate) fn matmul_kernel(a: &Matrix, b: &Matrix) -> Result<Matrix, DiffError> {
    if a.cols != b.rows {
        return Err(DiffError::ShapeMismatch(format!(
            "matmul {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// A * B^T for (m x k) * (n x k).
pub(crate) fn matmul_nt_kernel(a: &Matrix, b: &Matrix) -> Result<Matrix, DiffError> {
    if a.cols != b.cols {
        return Err(DiffError::ShapeMismatch(format!(
            "matmul_nt {}x{} * ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.set(i, j, dot(arow, b.row(j)));
        }
    }
    Ok(out)
}

/// A^T * B for (m x k) * (m x n) -> (k x n); used by matmul backward.
pub(crate) fn matmul_tn_kernel(a: &Matrix, b: &Matrix) -> Result<Matrix, DiffError> {
    if a.rows != b.rows {
        return Err(DiffError::ShapeMismatch(format!(
            "matmul_tn ({}x{})^T * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for (k, &ark) in arow.iter().enumerate() {
            if ark == 0.0 {
                continue;
            }
            let orow = out.row_mut(k);
            for (o, &brj) in orow.iter_mut().zip(brow) {
                *o += ark * brj;
            }
        }
    }
    Ok(out)
}

pub(crate) const ZERO_ROW_NORM_FLOOR: f64 = 1e-12;

pub(crate) fn row_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), m.row(r)).sqrt()).collect()
}

pub(crate) fn l2_normalize_rows_kernel(m: &Matrix) -> Result<Matrix, DiffError> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let norm = dot(m.row(r), m.row(r)).sqrt();
        if norm <= ZERO_ROW_NORM_FLOOR {
            return Err(DiffError::ZeroRow { row: r, norm });
        }
        for v in out.row_mut(r) {
            *v /= norm;
        }
    }
    Ok(out)
}

pub(crate) fn softmax_rows_kernel(m: &Matrix, temperature: f64) -> Result<Matrix, DiffError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(DiffError::InvalidTemperature(temperature));
    }
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Smooth-ramp nonlinearity (tanh-form GELU) and its derivative.
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Row-wise L2 normalization; every output row has unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix, DiffError> {
    l2_normalize_rows_kernel(m)
}

/// Pairwise cosine similarities between rows: symmetric, unit diagonal,
/// entries clamped to [-1, 1].
pub fn cosine_similarity_matrix(m: &Matrix) -> Result<Matrix, DiffError> {
    let unit = l2_normalize_rows_kernel(m)?;
    let mut out = Matrix::zeros(m.rows(), m.rows());
    for i in 0..m.rows() {
        out.set(i, i, 1.0);
        for j in (i + 1)..m.rows() {
            let s = dot(unit.row(i), unit.row(j)).clamp(-1.0, 1.0);
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

/// Temperature softmax applied per row with max-subtraction.
pub fn softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix, DiffError> {
    softmax_rows_kernel(m, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four_five() {
        let m = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let n = l2_normalize_rows(&m).unwrap();
        assert_eq!(n.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_unit_row_unchanged() {
        let m = Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(l2_normalize_rows(&m).unwrap(), m);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        match l2_normalize_rows(&m) {
            Err(DiffError::ZeroRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ZeroRow, got {other:?}"),
        }
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let m = crate::rng::unit_test_matrix(8, 16, 0xfeed);
        let n = l2_normalize_rows(&m).unwrap();
        for r in 0..n.rows() {
            let norm = dot(n.row(r), n.row(r)).sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "row {r} norm {norm}");
        }
    }

    #[test]
    fn cosine_identical_and_orthogonal_rows() {
        let m = Matrix::from_vec(2, 2, vec![2.0, 1.0, 2.0, 1.0]).unwrap();
        let s = cosine_similarity_matrix(&m).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-12);

        let m = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = cosine_similarity_matrix(&m).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn cosine_matches_scalar_oracle() {
        let m = Matrix::from_vec(
            4,
            3,
            vec![
                0.3, -1.2, 0.7, //
                2.0, 0.1, -0.4, //
                -0.9, 0.8, 1.5, //
                0.2, 0.2, 0.2,
            ],
        )
        .unwrap();
        let s = cosine_similarity_matrix(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let ni = dot(m.row(i), m.row(i)).sqrt();
                let nj = dot(m.row(j), m.row(j)).sqrt();
                let expect = (dot(m.row(i), m.row(j)) / (ni * nj)).clamp(-1.0, 1.0);
                let expect = if i == j { 1.0 } else { expect };
                assert!(
                    (s.get(i, j) - expect).abs() < 1e-12,
                    "entry ({i},{j}): {} vs {expect}",
                    s.get(i, j)
                );
                assert_eq!(s.get(i, j), s.get(j, i));
                assert!(s.get(i, j) >= -1.0 && s.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn softmax_single_column_is_one() {
        let m = Matrix::from_vec(3, 1, vec![5.0, -2.0, 0.0]).unwrap();
        let p = softmax_rows(&m, 0.5).unwrap();
        for r in 0..3 {
            assert_eq!(p.get(r, 0), 1.0);
        }
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let m = Matrix::from_vec(1, 4, vec![2.5; 4]).unwrap();
        for tau in [0.07, 1.0, 3.0] {
            let p = softmax_rows(&m, tau).unwrap();
            for c in 0..4 {
                assert!((p.get(0, c) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_matches_scalar_oracle() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let p = softmax_rows(&m, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.get(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            softmax_rows(&m, 0.0),
            Err(DiffError::InvalidTemperature(_))
        ));
        assert!(matches!(
            softmax_rows(&m, -1.0),
            Err(DiffError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn from_vec_validates() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![0.0; 3]),
            Err(DiffError::ShapeMismatch(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![0.0, f64::NAN]),
            Err(DiffError::NonFinite { .. })
        ));
    }
}
