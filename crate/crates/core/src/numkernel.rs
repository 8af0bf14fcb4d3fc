//! Dense numeric kernel: row-major matrices, products, row softmax, layer
//! normalization, GELU and the summary statistics used by the analyses.
//!
//! Model tensors are stored as `f32`; every statistic accumulates in `f64`.

use crate::error::{Error, Result};

/// Element types the kernel can multiply.
pub trait Scalar: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    /// `c = a · b` with arbitrary strides (see `matrixmultiply`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                debug_assert_eq!(c.len(), m * n);
                // SAFETY: callers pass slices covering the strided extents of
                // an m×k and a k×n operand and a contiguous m×n output.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Matrix::from_rows", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact panics on zero; an empty-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copy of columns `[start, start + len)`.
    pub fn column_block(&self, start: usize, len: usize) -> Self {
        Self::from_fn(self.rows, len, |r, c| self.get(r, start + c))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    T::gemm(
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        b.cols as isize,
        1,
        &mut out.data,
    );
    Ok(out)
}

/// `a · bᵀ`; the natural product for weights stored output-major.
pub fn matmul_transposed<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transposed",
            format!("{}x{} · ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    T::gemm(
        a.rows,
        a.cols,
        b.rows,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        1,
        b.cols as isize,
        &mut out.data,
    );
    Ok(out)
}

/// Adds `bias` to every row in place.
pub fn add_row_bias(m: &mut Matrix<f32>, bias: &[f32]) -> Result<()> {
    if bias.len() != m.cols {
        return Err(Error::shape(
            "add_row_bias",
            format!("bias of {} for {} columns", bias.len(), m.cols),
        ));
    }
    for row in m.data.chunks_exact_mut(m.cols.max(1)) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
    Ok(())
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !max.is_finite() {
        // all entries masked
        let n = row.len() as f32;
        row.iter_mut().for_each(|v| *v = 1.0 / n);
        return;
    }
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    row.iter_mut().for_each(|v| *v *= inv);
}

pub fn softmax_rows(m: &Matrix<f32>) -> Matrix<f32> {
    let mut out = m.clone();
    let cols = out.cols.max(1);
    for row in out.data.chunks_exact_mut(cols) {
        softmax_in_place(row);
    }
    out
}

/// Softmax in `f64` for a single logit row.
pub fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Log-softmax in `f64` for a single logit row.
pub fn log_softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// `((x − mean) / sqrt(var + eps)) ⊙ gamma + beta` with population variance.
pub fn layer_norm(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32) -> Result<Vec<f32>> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gamma, beta, eps, &mut out)?;
    Ok(out)
}

pub fn layer_norm_into(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    out: &mut [f32],
) -> Result<()> {
    if gamma.len() != x.len() || beta.len() != x.len() || out.len() != x.len() {
        return Err(Error::shape(
            "layer_norm",
            format!("x {} gamma {} beta {}", x.len(), gamma.len(), beta.len()),
        ));
    }
    if x.is_empty() {
        return Ok(());
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps as f64).sqrt();
    for i in 0..x.len() {
        out[i] = (((x[i] as f64 - mean) * inv) as f32) * gamma[i] + beta[i];
    }
    Ok(())
}

/// Row-wise layer norm of a `T × d` matrix.
pub fn layer_norm_rows(m: &Matrix<f32>, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Matrix<f32>> {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let (src, dst) = (m.row(r), &mut out.data[r * m.cols..(r + 1) * m.cols]);
        layer_norm_into(src, gamma, beta, eps, dst)?;
    }
    Ok(out)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximation GELU.
pub fn gelu_scalar(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())) as f32
}

pub fn gelu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| gelu_scalar(v)).collect()
}

pub fn gelu_in_place(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = gelu_scalar(*v));
}

/// Population moments of a sample.
///
/// `skew` and `excess_kurtosis` are `None` when the variance is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skew: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

pub fn moments<T: Scalar>(v: &[T]) -> Result<Moments> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "moments need at least 2 values, got {}",
            v.len()
        )));
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|x| x.to_f64()).sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in v {
        let d = x.to_f64() - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // relative to the mean's magnitude, anything this small is rounding noise
    let degenerate = m2 <= f64::EPSILON * f64::EPSILON * mean.abs().max(1.0).powi(2);
    if degenerate {
        return Ok(Moments {
            mean,
            variance: 0.0,
            skew: None,
            excess_kurtosis: None,
        });
    }
    Ok(Moments {
        mean,
        variance: m2,
        skew: Some(m3 / m2.powf(1.5)),
        excess_kurtosis: Some(m4 / (m2 * m2) - 3.0),
    })
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<Option<f64>> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a.to_f64(), b.to_f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(None);
    }
    Ok(Some((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)))
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
