//! Dense matrix arithmetic and gradient plumbing for the fixed MLP
//! architectures, plus finite-difference gradient verification.
//!
//! Matrices are immutable values once constructed; operations allocate
//! their outputs, so concurrent readers are safe.

use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> DenseMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "DenseMatrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Row vector (1 x n) from a slice.
    pub fn row_vector(values: &[F]) -> Self {
        DenseMatrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn shape_err(&self, op: &'static str, rhs: &Self) -> Error {
        Error::ShapeMismatch {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: rhs.rows,
            right_cols: rhs.cols,
        }
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(self.shape_err("matmul", rhs));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = DenseMatrix::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                // Inputs and post-ReLU activations are mostly zero; skipping
                // keeps the inner loop off them without changing the result.
                if a == F::zero() {
                    continue;
                }
                let b_row = &rhs.data[kk * m..(kk + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(self.shape_err("matmul_tn", rhs));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = DenseMatrix::zeros(k, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &rhs.data[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let out_row = &mut out.data[kk * m..(kk + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(self.shape_err("matmul_nt", rhs));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.rows);
        let mut out = DenseMatrix::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// Column sums as a 1 x cols matrix.
    pub fn column_sums(&self) -> Self {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: F, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("scaled_add", other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("zip_map", other));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .map(|&v| v * v)
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// `x W + b` with the bias row broadcast over the rows of `x`.
pub fn affine_forward<F: Real>(
    x: &DenseMatrix<F>,
    w: &DenseMatrix<F>,
    b: &DenseMatrix<F>,
) -> Result<DenseMatrix<F>> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "affine_forward bias",
            left_rows: w.rows(),
            left_cols: w.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (o, &bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<F: Real>(x: &DenseMatrix<F>) -> DenseMatrix<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Upstream gradient gated by the activation indicator; subgradient 0 at x = 0.
pub fn relu_backward<F: Real>(
    pre: &DenseMatrix<F>,
    upstream: &DenseMatrix<F>,
) -> Result<DenseMatrix<F>> {
    pre.zip_map(upstream, |p, u| if p > F::zero() { u } else { F::zero() })
}

/// Options for [`grad_check`].
pub struct GradCheckOpts {
    /// Central-difference step, must lie in (0, 1e-2].
    pub eps: f64,
    /// Upper bound on the number of coordinates probed; coordinates are
    /// subsampled deterministically when the parameter vector is larger.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            eps: 1e-5,
            max_coords: 200,
            seed: 0,
        }
    }
}

/// Compares an analytic gradient against central finite differences of `loss`.
///
/// Returns the maximum over probed coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F: Real>(
    mut loss: impl FnMut(&[F]) -> Result<F>,
    params: &[F],
    analytic: &[F],
    opts: &GradCheckOpts,
) -> Result<F> {
    if !(opts.eps > 0.0 && opts.eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps must be in (0, 1e-2], got {}",
            opts.eps
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::DimMismatch {
            context: "grad_check",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let coords: Vec<usize> = if params.len() <= opts.max_coords {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
        let mut picked: Vec<usize> = (0..opts.max_coords)
            .map(|_| rng.random_range(0..params.len()))
            .collect();
        picked.sort_unstable();
        picked.dedup();
        picked
    };

    let eps = F::cast(opts.eps);
    let mut buf = params.to_vec();
    let mut worst = F::zero();
    for &i in &coords {
        let orig = buf[i];
        buf[i] = orig + eps;
        let up = loss(&buf)?;
        buf[i] = orig - eps;
        let down = loss(&buf)?;
        buf[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite loss at coordinate {i}"
            )));
        }
        let numeric = (up - down) / (F::cast(2.0) * eps);
        let denom = F::one().max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
