//! Dense complex linear algebra primitives.
//!
//! Conventions fixed here and relied upon by every other module:
//!
//! * Matrices are stored row-major as [`num_complex::Complex64`] entries.
//! * `vec` is **column-stacking**: `vec(I₂) = (1, 0, 0, 1)ᵀ`.
//! * Subsystem dimension lists (`dims`) order factors leftmost = slowest
//!   index, matching the `|i⟩ ⊗ |j⟩` tensor ordering.

use num_complex::Complex64;
use thiserror::Error;

use crate::tol::{HERM_TOL, PSD_TOL};

/// Shorthand for the complex scalar type used throughout the crate.
pub type C64 = Complex64;

/// Errors raised by the linear-algebra layer.
#[derive(Debug, Error)]
pub enum LinalgError {
    /// Operand shapes do not conform.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// An operation requiring a Hermitian matrix received a non-Hermitian one.
    #[error("matrix is not Hermitian (max |M - M†| entry = {max_dev:.3e}, tolerance {tol:.3e})")]
    NotHermitian { max_dev: f64, tol: f64 },
    /// An operation requiring a PSD matrix received one with a significantly
    /// negative eigenvalue.
    #[error("matrix is not positive semidefinite (min eigenvalue = {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
}

/// Dense complex matrix with explicit dimensions, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Build from nested rows of complex entries; panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged row lengths");
        let data = rows.iter().flatten().copied().collect();
        CMatrix { rows: r, cols: c, data }
    }

    /// Build from nested rows of real entries.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let converted: Vec<Vec<C64>> = rows
            .iter()
            .map(|row| row.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        CMatrix::from_rows(&converted)
    }

    /// Diagonal matrix from real entries.
    pub fn diag(entries: &[f64]) -> Self {
        let mut m = CMatrix::zeros(entries.len(), entries.len());
        for (i, &x) in entries.iter().enumerate() {
            m.set(i, i, C64::new(x, 0.0));
        }
        m
    }

    /// Take ownership of raw row-major storage.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "storage length mismatch");
        CMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Raw row-major entries.
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        let data = self.data.iter().map(|a| a * s).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale_c(&self, s: C64) -> CMatrix {
        let data = self.data.iter().map(|a| a * s).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    /// Matrix product.
    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(
            self.cols, other.rows,
            "inner dimensions must match: {}x{} · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i).conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn conj(&self) -> CMatrix {
        let data = self.data.iter().map(|a| a.conj()).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self.at(i, i)).sum()
    }

    pub fn fnorm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise absolute value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation from Hermiticity, max |M_ij - conj(M_ji)|.
    pub fn herm_deviation(&self) -> f64 {
        assert!(self.is_square(), "Hermiticity of a non-square matrix");
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self.at(i, j) - self.at(j, i).conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.herm_deviation() <= tol
    }

    /// Hermitian part (M + M†)/2.
    pub fn hermitize(&self) -> CMatrix {
        self.add(&self.adjoint()).scale(0.5)
    }

    /// Real Frobenius inner product Re tr(A† B) (equals tr(A† B) when both
    /// operands are Hermitian).
    pub fn inner_re(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

fn check_hermitian(m: &CMatrix, tol: f64) -> Result<(), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::DimMismatch(format!(
            "expected square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let dev = m.herm_deviation();
    if dev > tol {
        return Err(LinalgError::NotHermitian { max_dev: dev, tol });
    }
    Ok(())
}

/// Kronecker product; factor `a` is the slower (leftmost) index.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a.at(i, j);
            if aij.norm_sqr() == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out.set(i * br + k, j * bc + l, aij * b.at(k, l));
                }
            }
        }
    }
    out
}

/// Kronecker product of several factors, left to right.
pub fn tensor_all(factors: &[&CMatrix]) -> CMatrix {
    let mut iter = factors.iter();
    let first = iter.next().expect("tensor_all needs at least one factor");
    iter.fold((*first).clone(), |acc, f| tensor(&acc, f))
}

/// Partial trace over the factors *not* listed in `keep`.
///
/// `dims` lists the subsystem dimensions (leftmost = slowest index) and must
/// multiply to the matrix dimension; `keep` holds the factor indices to
/// retain, in increasing order.
pub fn partial_trace(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix, LinalgError> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.rows() != total {
        return Err(LinalgError::DimMismatch(format!(
            "matrix is {}x{} but dims {:?} multiply to {}",
            m.rows(),
            m.cols(),
            dims,
            total
        )));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
        return Err(LinalgError::DimMismatch(format!(
            "keep set {:?} invalid for {} factors",
            keep,
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let keep_dim: usize = keep.iter().map(|&i| dims[i]).product();
    let trace_dim: usize = traced.iter().map(|&i| dims[i]).product();

    // Strides of each factor inside a flattened global index.
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    // Global index from a flattened index over an ordered factor subset.
    let expand = |subset: &[usize], mut flat: usize| -> usize {
        let mut global = 0;
        for &f in subset.iter().rev() {
            global += (flat % dims[f]) * strides[f];
            flat /= dims[f];
        }
        global
    };

    let mut out = CMatrix::zeros(keep_dim, keep_dim);
    for ki in 0..keep_dim {
        let gi = expand(keep, ki);
        for kj in 0..keep_dim {
            let gj = expand(keep, kj);
            let mut sum = C64::new(0.0, 0.0);
            for t in 0..trace_dim {
                let gt = expand(&traced, t);
                sum += m.at(gi + gt, gj + gt);
            }
            out.set(ki, kj, sum);
        }
    }
    Ok(out)
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// Returns eigenvalues sorted descending and a unitary matrix whose columns
/// are the matching eigenvectors, so `m = V diag(λ) V†`.
pub fn herm_eig(m: &CMatrix) -> Result<(Vec<f64>, CMatrix), LinalgError> {
    check_hermitian(m, HERM_TOL.max(1e-9 * (1.0 + m.max_abs())))?;
    let n = m.rows();
    let mut a = m.hermitize();
    let mut v = CMatrix::identity(n);
    if n > 1 {
        let scale = 1.0 + a.fnorm();
        let stop = 1e-14 * scale;
        for _sweep in 0..100 {
            let mut off: f64 = 0.0;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    off = off.max(a.at(p, q).norm());
                }
            }
            if off <= stop {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let gamma = a.at(p, q);
                    let g = gamma.norm();
                    if g <= 1e-300 {
                        continue;
                    }
                    // Unitary phase removing arg(γ), then a real rotation.
                    let phase = gamma / g; // e^{iφ}
                    let alpha = a.at(p, p).re;
                    let beta = a.at(q, q).re;
                    let theta = 0.5 * (2.0 * g).atan2(alpha - beta);
                    let (s, c) = theta.sin_cos();
                    let sp = phase.conj() * s; // s·e^{-iφ}
                    let cp = phase.conj() * c; // c·e^{-iφ}

                    // A ← U† A U with U columns (c, s·e^{-iφ}) and (−s, c·e^{-iφ}).
                    for k in 0..n {
                        if k == p || k == q {
                            continue;
                        }
                        let akp = a.at(k, p);
                        let akq = a.at(k, q);
                        let new_kp = akp * c + akq * sp;
                        let new_kq = -akp * s + akq * cp;
                        a.set(k, p, new_kp);
                        a.set(k, q, new_kq);
                        a.set(p, k, new_kp.conj());
                        a.set(q, k, new_kq.conj());
                    }
                    let app = alpha * c * c + 2.0 * g * c * s + beta * s * s;
                    let aqq = alpha * s * s - 2.0 * g * c * s + beta * c * c;
                    a.set(p, p, C64::new(app, 0.0));
                    a.set(q, q, C64::new(aqq, 0.0));
                    a.set(p, q, C64::new(0.0, 0.0));
                    a.set(q, p, C64::new(0.0, 0.0));

                    for k in 0..n {
                        let vkp = v.at(k, p);
                        let vkq = v.at(k, q);
                        v.set(k, p, vkp * c + vkq * sp);
                        v.set(k, q, -vkp * s + vkq * cp);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| a.at(i, i).re).collect();
    order.sort_by(|&i, &j| evals[j].partial_cmp(&evals[i]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let sorted_vecs = CMatrix::from_fn(n, n, |i, j| v.at(i, order[j]));
    Ok((sorted_vals, sorted_vecs))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig(m: &CMatrix) -> Result<f64, LinalgError> {
    let (vals, _) = herm_eig(m)?;
    Ok(*vals.last().expect("non-empty spectrum"))
}

fn rebuild(vals: &[f64], vecs: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vecs.rows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in vals.iter().enumerate() {
        let fl = f(lambda);
        if fl == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs.at(i, k);
            if vik.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                out.add_at(i, j, vik * vecs.at(j, k).conj() * fl);
            }
        }
    }
    out
}

/// Nearest (Frobenius) PSD matrix: eigenvalues clipped at zero.
pub fn psd_project(m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let (vals, vecs) = herm_eig(m)?;
    Ok(rebuild(&vals, &vecs, |l| l.max(0.0)))
}

/// PSD square root; eigenvalues in [-PSD_TOL, 0) are clipped to zero, more
/// negative ones are an error.
pub fn sqrt_psd(m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let (vals, vecs) = herm_eig(m)?;
    let smallest = *vals.last().unwrap_or(&0.0);
    if smallest < -PSD_TOL {
        return Err(LinalgError::NotPsd { min_eig: smallest });
    }
    Ok(rebuild(&vals, &vecs, |l| l.max(0.0).sqrt()))
}

/// Column-stacking vectorization: `vec(m)[j·rows + i] = m[i, j]`.
pub fn vec_col(m: &CMatrix) -> CMatrix {
    let (r, c) = (m.rows(), m.cols());
    CMatrix::from_fn(r * c, 1, |k, _| m.at(k % r, k / r))
}

/// Inverse of [`vec_col`].
pub fn unvec(v: &CMatrix, rows: usize, cols: usize) -> Result<CMatrix, LinalgError> {
    if v.cols() != 1 || v.rows() != rows * cols {
        return Err(LinalgError::DimMismatch(format!(
            "cannot unvec a {}x{} into {}x{}",
            v.rows(),
            v.cols(),
            rows,
            cols
        )));
    }
    Ok(CMatrix::from_fn(rows, cols, |i, j| v.at(j * rows + i, 0)))
}

/// Link product of Choi matrices: `a` represents a map H → K (Choi on
/// H ⊗ K with dims `[dh, dk]`), `b` a map K → V; the result is the Choi
/// matrix of the composition on H ⊗ V.
pub fn link_product(
    a: &CMatrix,
    b: &CMatrix,
    dh: usize,
    dk: usize,
    dv: usize,
) -> Result<CMatrix, LinalgError> {
    if a.rows() != dh * dk || !a.is_square() {
        return Err(LinalgError::DimMismatch(format!(
            "first Choi is {}x{}, expected {0}x{0} with {0} = {dh}·{dk}",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != dk * dv || !b.is_square() {
        return Err(LinalgError::DimMismatch(format!(
            "second Choi is {}x{}, expected dimension {dk}·{dv}",
            b.rows(),
            b.cols()
        )));
    }
    let mut out = CMatrix::zeros(dh * dv, dh * dv);
    for h in 0..dh {
        for v in 0..dv {
            for h2 in 0..dh {
                for v2 in 0..dv {
                    let mut sum = C64::new(0.0, 0.0);
                    for k in 0..dk {
                        for k2 in 0..dk {
                            sum += a.at(h * dk + k2, h2 * dk + k)
                                * b.at(k2 * dv + v, k * dv + v2);
                        }
                    }
                    out.set(h * dv + v, h2 * dv + v2, sum);
                }
            }
        }
    }
    Ok(out)
}
