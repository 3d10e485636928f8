//! Small dense complex matrices.
//!
//! Everything spectral goes through one routine, a one-sided (Hestenes)
//! Jacobi SVD. It is slow for big matrices but deterministic and accurate
//! in the sizes used here (rank of a bundle, squared at most), and it has no
//! pivot-order choices that could differ between platforms.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tol::Tolerances;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("matrix is singular: smallest singular value {sigma_min:e} <= {tol:e}")]
    SingularInput { sigma_min: f64, tol: f64 },
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("gram matrix condition number {condition:e} exceeds limit")]
    IllConditioned { condition: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Builds from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec: wrong data length");
        CMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "from_rows: ragged rows");
            data.extend_from_slice(row);
        }
        CMatrix { rows: r, cols: c, data }
    }

    pub fn from_real(rows: usize, cols: usize, vals: &[f64]) -> Self {
        assert_eq!(vals.len(), rows * cols);
        CMatrix { rows, cols, data: vals.iter().map(|&x| C64::new(x, 0.0)).collect() }
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &z) in d.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Outer product `x y*`.
    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        Self::from_fn(x.len(), y.len(), |i, j| x[i] * y[j].conj())
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

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius inner product `tr(self* other)`, conjugate-linear in `self`.
    pub fn frob_inner(&self, other: &CMatrix) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        for (i, &z) in v.iter().enumerate() {
            self[(i, j)] = z;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum()).collect()
    }

    /// Kronecker product; `kron(A, B) vec(H) = vec(A H B^T)` for row-major `vec`.
    pub fn kron(&self, other: &CMatrix) -> Self {
        let (p, q) = (other.rows, other.cols);
        Self::from_fn(self.rows * p, self.cols * q, |i, j| self[(i / p, j / q)] * other[(i % p, j % q)])
    }

    /// Row-major flattening into a column vector.
    pub fn vectorize(&self) -> Vec<C64> {
        self.data.clone()
    }

    pub fn powi(&self, k: u32) -> Self {
        assert!(self.is_square());
        let mut result = Self::identity(self.rows);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Hermitian part `(M + M*)/2`.
    pub fn hermitian_part(&self) -> Self {
        (self + &self.adjoint()).scale_re(0.5)
    }

    /// Skew-Hermitian part `(M - M*)/2`.
    pub fn skew_part(&self) -> Self {
        (self - &self.adjoint()).scale_re(0.5)
    }

    /// Frobenius-norm bound on `||M*M - I||_op`; cheap enough for hot loops.
    pub fn unitarity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let g = &self.adjoint() * self;
        (&g - &Self::identity(self.rows)).frob_norm()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![ZERO; n * p];
        for i in 0..n {
            let row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == ZERO {
                    continue;
                }
                let brow = &rhs.data[k * p..(k + 1) * p];
                for (o, b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        CMatrix { rows: n, cols: p, data: out }
    }
}

impl Mul for CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: CMatrix) -> CMatrix {
        &self * &rhs
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Add for CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: CMatrix) -> CMatrix {
        &self + &rhs
    }
}

impl Sub for CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: CMatrix) -> CMatrix {
        &self - &rhs
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_re(-1.0)
    }
}

/// Thin singular value decomposition `A = U diag(s) V*`, `s` descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd(a: &CMatrix) -> Svd {
    if a.rows < a.cols {
        let t = jacobi_tall(&a.adjoint());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    jacobi_tall(a)
}

/// One-sided Jacobi on the columns of a matrix with `rows >= cols`.
fn jacobi_tall(a: &CMatrix) -> Svd {
    let (m, n) = (a.rows, a.cols);
    // Work column-major: cols[j] is column j.
    let mut w: Vec<Vec<C64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![ZERO; n];
            e[j] = ONE;
            e
        })
        .collect();
    let eps = 4.0 * f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha: f64 = w[i].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = w[j].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = w[i].iter().zip(&w[j]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let pc = phase.conj();
                for k in 0..m {
                    let x = w[i][k];
                    let y = w[j][k] * pc;
                    w[i][k] = x * c - y * s;
                    w[j][k] = x * s + y * c;
                }
                for k in 0..n {
                    let x = v[i][k];
                    let y = v[j][k] * pc;
                    v[i][k] = x * c - y * s;
                    v[j][k] = x * s + y * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.iter().map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| norms[q].partial_cmp(&norms[p]).unwrap_or(std::cmp::Ordering::Equal).then(p.cmp(&q)));
    let smax = order.first().map_or(0.0, |&k| norms[k]);
    let mut u = CMatrix::zeros(m, n);
    let mut vv = CMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut filled: Vec<Vec<C64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (pos, &k) in order.iter().enumerate() {
        let sk = norms[k];
        s.push(sk);
        vv.set_column(pos, &v[k]);
        if sk > 0.0 && sk > smax * 1e-15 {
            let col: Vec<C64> = w[k].iter().map(|z| z / sk).collect();
            u.set_column(pos, &col);
            filled.push(col);
        } else {
            missing.push(pos);
        }
    }
    // Complete U for (numerically) zero singular values with unit vectors
    // orthogonal to the columns already present.
    for pos in missing {
        let col = orthogonal_complement_vector(&filled, m);
        u.set_column(pos, &col);
        filled.push(col);
    }
    Svd { u, s, v: vv }
}

fn orthogonal_complement_vector(basis: &[Vec<C64>], m: usize) -> Vec<C64> {
    let mut best = vec![ZERO; m];
    let mut best_norm = -1.0;
    for e in 0..m {
        let mut x = vec![ZERO; m];
        x[e] = ONE;
        for _ in 0..2 {
            for b in basis {
                let proj: C64 = b.iter().zip(&x).map(|(p, q)| p.conj() * q).sum();
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= proj * bi;
                }
            }
        }
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > best_norm {
            best_norm = nrm;
            best = x;
        }
        if nrm > 0.5 {
            break;
        }
    }
    best.iter().map(|z| z / best_norm).collect()
}

/// Unitary matrix with its measured defect `||U*U - I||` (Frobenius bound).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitaryMatrix {
    m: CMatrix,
    defect: f64,
}

impl UnitaryMatrix {
    pub fn identity(n: usize) -> Self {
        UnitaryMatrix { m: CMatrix::identity(n), defect: 0.0 }
    }

    /// Accepts `m` if it is unitary within the construction tolerance,
    /// otherwise re-projects it with [`polar_unitary`].
    pub fn new(m: CMatrix) -> Result<Self, MatError> {
        Self::with_tol(m, &Tolerances::DEFAULT)
    }

    pub fn with_tol(m: CMatrix, tol: &Tolerances) -> Result<Self, MatError> {
        if !m.is_square() {
            return Err(MatError::DimensionMismatch { expected: "square".into(), found: format!("{}x{}", m.rows, m.cols) });
        }
        if !m.is_finite() {
            return Err(MatError::NonFinite);
        }
        let defect = m.unitarity_defect();
        if defect <= tol.construction {
            return Ok(UnitaryMatrix { m, defect });
        }
        polar_unitary(&m, 1e-6)
    }

    /// Wraps without checking. Callers promise the input came out of a
    /// unitary-preserving computation.
    pub(crate) fn trusted(m: CMatrix) -> Self {
        let defect = m.unitarity_defect();
        UnitaryMatrix { m, defect }
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        UnitaryMatrix { m: self.m.adjoint(), defect: self.defect }
    }

    pub fn mul(&self, other: &UnitaryMatrix) -> Self {
        let m = &self.m * &other.m;
        Self::trusted(m)
    }

    /// Re-projects when the accumulated defect has drifted past tolerance.
    pub fn refreshed(self) -> Self {
        if self.defect <= Tolerances::DEFAULT.construction * 0.01 {
            return self;
        }
        polar_unitary(&self.m, 1e-6).unwrap_or(self)
    }
}

impl AsRef<CMatrix> for UnitaryMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.m
    }
}

/// Ordered product `A_{k-1} ... A_1 A_0` of unitaries, re-projected every
/// `reproject_every` factors so rounding drift cannot accumulate.
#[derive(Clone, Debug)]
pub struct ChainProduct {
    acc: CMatrix,
    since_projection: usize,
    every: usize,
}

impl ChainProduct {
    pub fn new(n: usize) -> Self {
        ChainProduct { acc: CMatrix::identity(n), since_projection: 0, every: Tolerances::DEFAULT.reproject_every }
    }

    pub fn starting_at(m: CMatrix) -> Self {
        ChainProduct { acc: m, since_projection: 0, every: Tolerances::DEFAULT.reproject_every }
    }

    /// Multiplies the next factor on the left.
    pub fn push(&mut self, factor: &CMatrix) {
        self.acc = factor * &self.acc;
        self.since_projection += 1;
        if self.since_projection >= self.every {
            self.project();
        }
    }

    /// Multiplies the next factor on the right.
    pub fn push_right(&mut self, factor: &CMatrix) {
        self.acc = &self.acc * factor;
        self.since_projection += 1;
        if self.since_projection >= self.every {
            self.project();
        }
    }

    fn project(&mut self) {
        if let Ok(u) = polar_unitary(&self.acc, 1e-6) {
            self.acc = u.m;
        }
        self.since_projection = 0;
    }

    pub fn current(&self) -> &CMatrix {
        &self.acc
    }

    pub fn finish(self) -> UnitaryMatrix {
        UnitaryMatrix::trusted(self.acc)
    }
}

/// Unitary factor of the polar decomposition, `Q (Q*Q)^{-1/2} = U V*`.
pub fn polar_unitary(q: &CMatrix, tol: f64) -> Result<UnitaryMatrix, MatError> {
    if !q.is_square() {
        return Err(MatError::DimensionMismatch { expected: "square".into(), found: format!("{}x{}", q.rows, q.cols) });
    }
    if !q.is_finite() {
        return Err(MatError::NonFinite);
    }
    let n = q.rows;
    if n == 0 {
        return Ok(UnitaryMatrix::identity(0));
    }
    let d = svd(q);
    let sigma_min = d.s[n - 1];
    if sigma_min <= tol {
        return Err(MatError::SingularInput { sigma_min, tol });
    }
    let mut w = &d.u * &d.v.adjoint();
    // One Newton-Schulz step W(3I - W*W)/2 squares whatever defect is left.
    let g = &w.adjoint() * &w;
    let corr = (&CMatrix::identity(n).scale_re(3.0) - &g).scale_re(0.5);
    w = &w * &corr;
    Ok(UnitaryMatrix::trusted(w))
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    if m.rows == 0 || m.cols == 0 {
        return 0.0;
    }
    svd(m).s[0]
}

/// Unit vector `z` with `||Mz|| = sigma_max(M)`.
pub fn top_singular_vector(m: &CMatrix) -> Result<(Vec<C64>, f64), MatError> {
    if m.rows == 0 || m.cols == 0 || m.max_abs() == 0.0 {
        return Err(MatError::ZeroMatrix);
    }
    let d = svd(m);
    Ok((d.v.column(0), d.s[0]))
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: &CMatrix) -> f64 {
    let d = svd(m);
    let (hi, lo) = (d.s[0], *d.s.last().unwrap_or(&0.0));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Frobenius Gram matrix `G_ij = <B_i, B_j>`.
pub fn gram_matrix(basis: &[CMatrix]) -> CMatrix {
    let k = basis.len();
    let mut g = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let z = basis[i].frob_inner(&basis[j]);
            g[(i, j)] = z;
            g[(j, i)] = z.conj();
        }
    }
    g
}

/// Least-squares coefficients of `target` in the span of `basis`, via the
/// Hermitian Gram system under the Frobenius inner product.
pub fn gram_solve(basis: &[CMatrix], target: &CMatrix) -> Result<Vec<C64>, MatError> {
    gram_solve_with(basis, target, &Tolerances::DEFAULT)
}

pub fn gram_solve_with(basis: &[CMatrix], target: &CMatrix, tol: &Tolerances) -> Result<Vec<C64>, MatError> {
    if basis.is_empty() {
        return Err(MatError::IllConditioned { condition: f64::INFINITY });
    }
    for b in basis {
        if (b.rows, b.cols) != (target.rows, target.cols) {
            return Err(MatError::DimensionMismatch { expected: format!("{}x{}", target.rows, target.cols), found: format!("{}x{}", b.rows, b.cols) });
        }
    }
    let g = gram_matrix(basis);
    let rhs: Vec<C64> = basis.iter().map(|b| b.frob_inner(target)).collect();
    let d = svd(&g);
    let hi = d.s[0];
    let lo = *d.s.last().unwrap();
    let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    if condition.is_nan() || condition >= tol.gram_condition {
        return Err(MatError::IllConditioned { condition });
    }
    // c = V diag(1/s) U* rhs
    let uh_rhs = d.u.adjoint().matvec(&rhs);
    let scaled: Vec<C64> = uh_rhs.iter().zip(&d.s).map(|(z, s)| z / s).collect();
    Ok(d.v.matvec(&scaled))
}

/// `sum_i c_i B_i`.
pub fn synthesize(basis: &[CMatrix], coeffs: &[C64]) -> CMatrix {
    assert_eq!(basis.len(), coeffs.len());
    let mut out = CMatrix::zeros(basis[0].rows, basis[0].cols);
    for (b, c) in basis.iter().zip(coeffs) {
        for (o, x) in out.data.iter_mut().zip(&b.data) {
            *o += c * x;
        }
    }
    out
}

/// Dimension of the nullspace of `m` at relative singular-value cutoff `rank_tol`.
pub fn nullity(m: &CMatrix, rank_tol: f64) -> usize {
    let d = svd(m);
    let scale = d.s.first().copied().unwrap_or(0.0).max(1.0);
    let small = d.s.iter().filter(|&&s| s <= rank_tol * scale).count();
    small + m.cols.saturating_sub(m.rows)
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor core.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert!(a.is_square());
    let n = a.rows;
    let norm = a.frob_norm();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a.scale_re(1.0 / f64::from(1u32 << squarings.min(30)));
    let mut term = CMatrix::identity(n);
    let mut sum = CMatrix::identity(n);
    for k in 1..=18u32 {
        term = (&term * &scaled).scale_re(1.0 / f64::from(k));
        sum = &sum + &term;
        if term.max_abs() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings.min(30) {
        sum = &sum * &sum;
    }
    sum
}

/// Frechet derivative of `expm` at `a` in direction `e`, from the upper
/// right block of `exp([[a, e], [0, a]])`.
pub fn expm_frechet(a: &CMatrix, e: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.rows;
    let block = CMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => e[(i, j - n)],
        (false, false) => a[(i - n, j - n)],
        (false, true) => ZERO,
    });
    let big = expm(&block);
    let ea = CMatrix::from_fn(n, n, |i, j| big[(i, j)]);
    let de = CMatrix::from_fn(n, n, |i, j| big[(i, j + n)]);
    (ea, de)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &CMatrix, b: &[C64]) -> Result<Vec<C64>, MatError> {
    assert!(a.is_square());
    let n = a.rows;
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| m[(p, col)].norm().partial_cmp(&m[(q, col)].norm()).unwrap()).unwrap();
        let pv = m[(piv, col)];
        if pv.norm() == 0.0 {
            return Err(MatError::SingularInput { sigma_min: 0.0, tol: 0.0 });
        }
        if piv != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / pv;
            if f == ZERO {
                continue;
            }
            for j in col..n {
                let t = m[(col, j)];
                m[(r, j)] -= f * t;
            }
            let t = x[col];
            x[r] -= f * t;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

/// Distance of the radial factor `(Q*Q)^{1/2}` from the identity, in
/// operator norm: `max_i |sigma_i - 1|`.
pub fn radial_distance(q: &CMatrix) -> f64 {
    svd(q).s.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// Serde adapter writing a matrix as a list of rows of `[re, im]` pairs.
pub mod rows_serde {
    use super::{CMatrix, C64};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..m.rows).map(|i| (0..m.cols).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        let data = rows.iter().flatten().map(|z| C64::new(z[0], z[1])).collect();
        Ok(CMatrix::from_vec(rows.len(), n, data))
    }
}
