//! Dense row-major f64 matrices with bit-deterministic reductions.
//!
//! Every reduction (matrix products, column means) accumulates in a fixed,
//! documented order — ascending inner index — so results are bit-identical
//! across runs and platforms. No internal parallelism.

use crate::{Error, Result};

/// Dense 2-D array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from row-major data, checking length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite entry {v} in matrix data")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds element-wise from a function of (row, col). Trusted input: no
    /// finiteness check.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Standard product. For each output cell, contributions are accumulated
    /// in ascending k order (k = shared dimension index), so the result is
    /// bit-deterministic.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} . {}x{}: inner dimensions differ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    /// `self . otherᵀ`; cell (i, j) is the dot product of row i of self with
    /// row j of other, accumulated in ascending column order.
    pub fn matmul_bt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_bt {}x{} . ({}x{})ᵀ: column counts differ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// `selfᵀ . other`; accumulates over the shared row index in ascending
    /// order.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul ({}x{})ᵀ . {}x{}: row counts differ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (k, &a_rk) in a_row.iter().enumerate() {
                let out_row = out.row_mut(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_rk * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64, op: &str) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op} {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Frobenius inner product Σ aᵢⱼ bᵢⱼ, accumulated in row-major order.
    pub fn frob_dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "frob_dot {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut acc = 0.0;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            acc += a * b;
        }
        Ok(acc)
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_dot(self).expect("same shape").sqrt()
    }

    /// Per-column means, each accumulated in ascending row order.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(r).iter()) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }

    /// Returns a copy with every column shifted to mean zero.
    pub fn center_columns(&self) -> Matrix {
        let means = self.col_means();
        Matrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)] - means[c])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0).unwrap())
    }

    /// Independent oracle: naive triple loop in i, j, k order with a local
    /// accumulator.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity() {
        let i2 = Matrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_orthogonal_supports() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = Rng::new(7);
        let a = random_matrix(&mut rng, 5, 3);
        let b = random_matrix(&mut rng, 3, 4);
        let got = a.matmul(&b).unwrap();
        assert!(max_abs_diff(&got, &naive_matmul(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn transpose_variants_match_plain_matmul() {
        let mut rng = Rng::new(11);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 5, 6);
        let c = random_matrix(&mut rng, 4, 3);
        assert!(max_abs_diff(&a.matmul_bt(&b).unwrap(), &a.matmul(&b.transpose()).unwrap()) <= 1e-12);
        assert!(max_abs_diff(&a.t_matmul(&c).unwrap(), &a.transpose().matmul(&c).unwrap()) <= 1e-12);
    }

    #[test]
    fn center_columns_examples() {
        let x = Matrix::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(x.center_columns(), Matrix::from_vec(2, 1, vec![-1.0, 1.0]).unwrap());

        let centered = Matrix::from_vec(2, 2, vec![-0.5, 2.0, 0.5, -2.0]).unwrap();
        assert!(max_abs_diff(&centered.center_columns(), &centered) <= 1e-12);

        let mut rng = Rng::new(3);
        let x = random_matrix(&mut rng, 6, 4);
        for m in x.center_columns().col_means() {
            assert!(m.abs() <= 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(Matrix::from_vec(2, 2, vec![1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Argument(_))
        ));
    }

    proptest! {
        #[test]
        fn transpose_is_involutive(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x = random_matrix(&mut rng, rows, cols);
            prop_assert_eq!(x.transpose().transpose(), x);
        }

        #[test]
        fn matmul_associative_vs_oracle(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let a = random_matrix(&mut rng, 4, 3);
            let b = random_matrix(&mut rng, 3, 5);
            let c = random_matrix(&mut rng, 5, 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&left, &right) <= 1e-9);
            prop_assert!(max_abs_diff(&left, &naive_matmul(&naive_matmul(&a, &b), &c)) <= 1e-9);
        }

        #[test]
        fn matmul_is_bit_deterministic(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            prop_assert_eq!(a.matmul(&b).unwrap(), a.matmul(&b).unwrap());
        }
    }
}
