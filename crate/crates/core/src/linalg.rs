//! Small dense linear algebra: vector helpers over slices, a row-major
//! matrix, a cyclic Jacobi symmetric eigensolver and a 3x3 general
//! eigenvalue routine. Sizes in this crate stay in the hundreds, so nothing
//! here is blocked or vectorized.

use num_complex::Complex;

use crate::scalar::Scalar;

/// Per-agent blocks of a stacked vector `col(v_1, ..., v_N)`.
pub type Blocks<T> = Vec<Vec<T>>;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

#[inline]
pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

#[inline]
pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

#[inline]
pub fn scale<T: Scalar>(a: &[T], k: T) -> Vec<T> {
    a.iter().map(|&x| x * k).collect()
}

/// `y += k * x`
#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], k: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + k * xi;
    }
}

pub fn blocks_norm_sq<T: Scalar>(b: &[Vec<T>]) -> T {
    b.iter().map(|v| norm_sq(v)).sum()
}

pub fn blocks_norm<T: Scalar>(b: &[Vec<T>]) -> T {
    blocks_norm_sq(b).sqrt()
}

pub fn blocks_dist<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> T {
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            u.iter()
                .zip(v)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
        })
        .sum::<T>()
        .sqrt()
}

/// Mean of equally sized blocks.
pub fn blocks_mean<T: Scalar>(b: &[Vec<T>]) -> Vec<T> {
    let dim = b.first().map_or(0, Vec::len);
    let mut m = vec![T::zero(); dim];
    for v in b {
        axpy(&mut m, T::one(), v);
    }
    let n = T::from_count(b.len().max(1));
    m.iter_mut().for_each(|x| *x = *x / n);
    m
}

/// `‖v − 1 v̄‖` for a stack of equally sized blocks.
pub fn consensus_error<T: Scalar>(b: &[Vec<T>]) -> T {
    let mean = blocks_mean(b);
    b.iter()
        .map(|v| {
            v.iter()
                .zip(&mean)
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<T>()
        })
        .sum::<T>()
        .sqrt()
}

pub fn flatten<T: Scalar>(b: &[Vec<T>]) -> Vec<T> {
    b.iter().flatten().copied().collect()
}

pub fn unflatten<T: Scalar>(flat: &[T], dims: &[usize]) -> Blocks<T> {
    let mut out = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &d in dims {
        out.push(flat[offset..offset + d].to_vec());
        offset += d;
    }
    out
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scaled_identity(n: usize, k: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = k;
        }
        m
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return None;
        }
        Some(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(&mut out, vi, self.row(i));
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * k).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        assert_eq!(self.rows, self.cols, "square matrix required");
        let n = self.rows;
        let mut a = self.clone();
        let tol = T::epsilon() * T::lit(0.5);
        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut diag = T::zero();
            for i in 0..n {
                diag = diag + a[(i, i)] * a[(i, i)];
                for j in 0..n {
                    if i != j {
                        off = off + a[(i, j)] * a[(i, j)];
                    }
                }
            }
            if off <= tol * tol * (diag + off) || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        eig
    }

    /// Largest singular value, via the smaller Gram matrix.
    pub fn spectral_norm(&self) -> T {
        let gram = if self.rows <= self.cols {
            self.matmul(&self.transpose())
        } else {
            self.transpose().matmul(self)
        };
        gram.symmetric_eigenvalues()
            .last()
            .copied()
            .unwrap_or_else(T::zero)
            .max(T::zero())
            .sqrt()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub type Mat3<T> = [[T; 3]; 3];

/// Eigenvalues of a general 3x3 matrix.
///
/// Roots of the characteristic polynomial by the closed-form cubic formula,
/// Newton-polished; if the polished roots do not satisfy the polynomial to
/// working accuracy, falls back to simultaneous (Durand-Kerner) iteration.
pub fn eigenvalues3<T: Scalar>(m: &Mat3<T>) -> [Complex<T>; 3] {
    let (a, b, c) = char_poly3(m);
    let scale = m
        .iter()
        .flatten()
        .fold(T::one(), |acc, x| acc.max(x.abs()));
    let roots = cubic_roots(a, b, c);
    let polished = roots.map(|r| newton_polish(a, b, c, r));
    let tol = T::epsilon().sqrt() * scale * scale * scale;
    let roots = if polished.iter().all(|&r| cubic_eval(a, b, c, r).norm() <= tol) {
        polished
    } else {
        durand_kerner(a, b, c, polished)
    };
    roots.map(|r| {
        if r.im == T::zero() {
            Complex::new(refine_real_root(m, r.re), T::zero())
        } else {
            r
        }
    })
}

/// `det(M − λI)` and its derivative, evaluated from the matrix entries so
/// that exact structural roots (e.g. of triangular matrices) stay exact.
fn shifted_det3<T: Scalar>(m: &Mat3<T>, lambda: T) -> (T, T) {
    let a = |i: usize, j: usize| if i == j { m[i][j] - lambda } else { m[i][j] };
    let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
        + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    let minors = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
        + (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0))
        + (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0));
    (det, -minors)
}

fn refine_real_root<T: Scalar>(m: &Mat3<T>, mut x: T) -> T {
    for _ in 0..3 {
        let (f, df) = shifted_det3(m, x);
        if f == T::zero() || df == T::zero() {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() || shifted_det3(m, next).0.abs() >= f.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Spectral radius of a 3x3 matrix.
pub fn spectral_radius3<T: Scalar>(m: &Mat3<T>) -> T {
    eigenvalues3(m)
        .iter()
        .map(|z| z.norm())
        .fold(T::zero(), |acc, x| acc.max(x))
}

/// Coefficients `(a, b, c)` of `λ³ + aλ² + bλ + c`.
fn char_poly3<T: Scalar>(m: &Mat3<T>) -> (T, T, T) {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
        + m[1][1] * m[2][2]
        - m[1][2] * m[2][1];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    (-tr, minors, -det)
}

fn cubic_eval<T: Scalar>(a: T, b: T, c: T, z: Complex<T>) -> Complex<T> {
    ((z + a) * z + b) * z + c
}

fn cubic_deriv<T: Scalar>(a: T, b: T, z: Complex<T>) -> Complex<T> {
    (z * T::lit(3.0) + a * T::lit(2.0)) * z + b
}

fn cubic_roots<T: Scalar>(a: T, b: T, c: T) -> [Complex<T>; 3] {
    let three = T::lit(3.0);
    let d0 = a * a - three * b;
    let d1 = T::lit(2.0) * a * a * a - T::lit(9.0) * a * b + T::lit(27.0) * c;
    let disc = Complex::new(d1 * d1 - T::lit(4.0) * d0 * d0 * d0, T::zero()).sqrt();
    let d1c = Complex::new(d1, T::zero());
    // pick the branch that avoids cancellation
    let plus = (d1c + disc) * T::lit(0.5);
    let minus = (d1c - disc) * T::lit(0.5);
    let inner = if plus.norm() >= minus.norm() { plus } else { minus };
    if inner.norm() == T::zero() {
        let r = Complex::new(-a / three, T::zero());
        return [r, r, r];
    }
    let cc = inner.cbrt();
    let xi = Complex::new(T::lit(-0.5), T::lit(3.0).sqrt() * T::lit(0.5));
    let mut out = [Complex::new(T::zero(), T::zero()); 3];
    let mut rot = Complex::new(T::one(), T::zero());
    for slot in out.iter_mut() {
        let ck = cc * rot;
        *slot = -(Complex::new(a, T::zero()) + ck + Complex::new(d0, T::zero()) / ck) / three;
        rot = rot * xi;
    }
    out
}

fn newton_polish<T: Scalar>(a: T, b: T, c: T, mut z: Complex<T>) -> Complex<T> {
    for _ in 0..4 {
        let d = cubic_deriv(a, b, z);
        if d.norm() == T::zero() {
            break;
        }
        let step = cubic_eval(a, b, c, z) / d;
        if !step.re.is_finite() || !step.im.is_finite() {
            break;
        }
        let next = z - step;
        if cubic_eval(a, b, c, next).norm() > cubic_eval(a, b, c, z).norm() {
            break;
        }
        z = next;
    }
    z
}

fn durand_kerner<T: Scalar>(a: T, b: T, c: T, start: [Complex<T>; 3]) -> [Complex<T>; 3] {
    let mut z = start;
    // perturb coincident seeds so the Weierstrass denominators stay nonzero
    let seed = Complex::new(T::lit(0.4), T::lit(0.9));
    for (k, zk) in z.iter_mut().enumerate() {
        *zk = *zk + seed.powu(k as u32 + 1) * T::lit(1e-3);
    }
    for _ in 0..500 {
        let mut moved = T::zero();
        for i in 0..3 {
            let mut denom = Complex::new(T::one(), T::zero());
            for j in 0..3 {
                if i != j {
                    denom = denom * (z[i] - z[j]);
                }
            }
            if denom.norm() == T::zero() {
                continue;
            }
            let delta = cubic_eval(a, b, c, z[i]) / denom;
            z[i] = z[i] - delta;
            moved = moved.max(delta.norm());
        }
        if moved <= T::epsilon() {
            break;
        }
    }
    z
}
