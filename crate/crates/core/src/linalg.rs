//! Small dense and banded linear algebra used by the grid solvers.
//!
//! The banded LU follows the LAPACK `gbtf2` layout idea (room for `kl` extra
//! super-diagonals of fill-in, multipliers left in place, pivots applied
//! sequentially during the solve) but stores each row contiguously.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            w,
            data: vec![T::zero(); n * w],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.w + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Row `i` as `(column, value)` pairs inside the band.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        (lo..=hi).map(move |j| (j, self.data[self.idx(i, j)]))
    }

    /// Replaces column `k` by `-e_k`. Used to border the ergodic system.
    pub fn replace_column_with_neg_unit(&mut self, k: usize) {
        let lo = k.saturating_sub(self.ku);
        let hi = (k + self.kl).min(self.n - 1);
        for i in lo..=hi {
            let id = self.idx(i, k);
            self.data[id] = if i == k { -T::one() } else { T::zero() };
        }
    }

    /// LU factorization with partial pivoting; consumes the matrix.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::SingularMatrix);
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] = self.data[ij] - l * kj;
                }
            }
        }
        Ok(BandLu { a: self, piv })
    }
}

/// Factorized banded matrix.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    a: BandMatrix<T>,
    piv: Vec<usize>,
}

impl<T: Real> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let a = &self.a;
        let n = a.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != T::zero() {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    x[i] = x[i] - a.data[a.idx(i, k)] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + a.kl + a.ku).min(n - 1) {
                s = s - a.data[a.idx(i, j)] * x[j];
            }
            x[i] = s / a.data[a.idx(i, i)];
        }
        x
    }

    /// Solves `(B + u e_kᵀ) x = rhs` where `B` is the factorized matrix,
    /// by Sherman–Morrison.
    pub fn solve_rank_one(&self, u: &[T], k: usize, rhs: &[T]) -> Result<Vec<T>> {
        let y = self.solve(rhs);
        let z = self.solve(u);
        let denom = T::one() + z[k];
        if denom.abs() < T::epsilon() * lit_hundred::<T>() {
            return Err(Error::SingularMatrix);
        }
        let f = y[k] / denom;
        Ok(y.iter().zip(&z).map(|(&yi, &zi)| yi - f * zi).collect())
    }
}

fn lit_hundred<T: Real>() -> T {
    T::lit(100.0)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`.
pub fn dense_solve<T: Real>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    let n = b.len();
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| {
                m[i * n + k]
                    .abs()
                    .partial_cmp(&m[j * n + k].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(k);
        if m[p * n + k].abs() <= T::epsilon() {
            return Err(Error::SingularMatrix);
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let l = m[i * n + k] / m[k * n + k];
            for j in k..n {
                m[i * n + j] = m[i * n + j] - l * m[k * n + j];
            }
            x[i] = x[i] - l * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s = s - m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Inverse of a small dense matrix.
pub fn dense_inverse<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut inv = vec![T::zero(); n * n];
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        let col = dense_solve(a, &e)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

/// Eigenvalues of a small symmetric matrix (cyclic Jacobi), ascending.
pub fn sym_eigenvalues<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let mut m = a.to_vec();
    let tol = T::epsilon() * T::lit(10.0);
    for _sweep in 0..64 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: T = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= tol * tol * (diag + off) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Spectral norm of a small row-major `n x n` matrix.
pub fn spectral_norm<T: Real>(a: &[T], n: usize) -> T {
    let mut ata = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            ata[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
        }
    }
    sym_eigenvalues(&ata, n)
        .last()
        .copied()
        .unwrap_or_else(T::zero)
        .max(T::zero())
        .sqrt()
}

/// Frobenius norm.
pub fn frobenius<T: Real>(a: &[T]) -> T {
    a.iter().map(|&v| v * v).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_of(b: &BandMatrix<f64>) -> Vec<f64> {
        let n = b.dim();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = b.get(i, j);
            }
        }
        d
    }

    #[test]
    fn band_lu_matches_dense_solve_with_pivoting() {
        let n = 9;
        let mut b = BandMatrix::zeros(n, 2, 1);
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 1).min(n - 1) {
                // small diagonal forces pivoting
                let v = if i == j { 0.01 * rnd() } else { rnd() };
                b.set(i, j, v);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let want = dense_solve(&dense_of(&b), &rhs).unwrap();
        let got = b.clone().factor().unwrap().solve(&rhs);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        let back = b.mul_vec(&got);
        for (r, w) in back.iter().zip(&rhs) {
            assert!((r - w).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_one_update_solves_bordered_system() {
        let n = 6;
        let mut b = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            b.set(i, i, 3.0);
            if i > 0 {
                b.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.set(i, i + 1, -1.2);
            }
        }
        let u: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
        let k = 2;
        let rhs = vec![1.0, -2.0, 0.5, 0.0, 4.0, 1.0];
        let mut dense = dense_of(&b);
        for i in 0..n {
            dense[i * n + k] += u[i];
        }
        let want = dense_solve(&dense, &rhs).unwrap();
        let got = b.factor().unwrap().solve_rank_one(&u, k, &rhs).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_band_is_reported() {
        let b = BandMatrix::<f64>::zeros(3, 1, 1);
        assert_eq!(b.factor().unwrap_err(), Error::SingularMatrix);
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = [2.0f64, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0];
        let ev = sym_eigenvalues(&a, 3);
        assert!((ev[0] + 1.0).abs() < 1e-12);
        assert!((ev[1] - 1.0).abs() < 1e-12);
        assert!((ev[2] - 3.0).abs() < 1e-12);
        assert!((spectral_norm(&[0.0f64, 2.0, 0.0, 0.0], 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dense_inverse_roundtrip() {
        let a = [4.0f64, 1.0, 2.0, 3.0];
        let inv = dense_inverse(&a, 2).unwrap();
        let id = [
            a[0] * inv[0] + a[1] * inv[2],
            a[0] * inv[1] + a[1] * inv[3],
            a[2] * inv[0] + a[3] * inv[2],
            a[2] * inv[1] + a[3] * inv[3],
        ];
        for (v, e) in id.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}
