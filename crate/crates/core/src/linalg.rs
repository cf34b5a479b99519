//! Small dense and tridiagonal helpers.
//!
//! The dimer Hamiltonian is a real symmetric tridiagonal matrix, so the
//! eigensolver here is an implicit QL iteration with Wilkinson shifts acting
//! directly on the diagonal and off-diagonal bands.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{DimerError, Result};

/// Real symmetric tridiagonal matrix stored by bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    /// `off[i]` couples rows `i` and `i + 1`.
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert!(!diag.is_empty(), "empty tridiagonal matrix");
        assert_eq!(off.len() + 1, diag.len(), "band length mismatch");
        Self { diag, off }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off_diag(&self) -> &[f64] {
        &self.off
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// Largest absolute row sum; an upper bound on the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.off[i - 1].abs();
                }
                if i + 1 < self.dim() {
                    s += self.off[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        for i in 0..n {
            let mut acc = x[i] * self.diag[i];
            if i > 0 {
                acc += x[i - 1] * self.off[i - 1];
            }
            if i + 1 < n {
                acc += x[i + 1] * self.off[i];
            }
            y[i] = acc;
        }
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = x[i] * self.diag[i];
                if i > 0 {
                    acc += x[i - 1] * self.off[i - 1];
                }
                if i + 1 < n {
                    acc += x[i + 1] * self.off[i];
                }
                acc
            })
            .collect()
    }

    /// Eigenvalues in descending order with the matching orthonormal
    /// eigenvectors (`vectors[k]` pairs with `values[k]`).
    pub fn eigen(&self) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.dim();
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        // z[row * n + col]; column k is the k-th eigenvector
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
        tql_implicit(&mut d, &mut e, &mut z, n)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        let values = order.iter().map(|&k| d[k]).collect();
        let vectors = order
            .iter()
            .map(|&k| (0..n).map(|row| z[row * n + k]).collect())
            .collect();
        Ok((values, vectors))
    }
}

const MAX_QL_ITERATIONS: usize = 64;

/// Implicit QL with Wilkinson shifts (tqli). `e[i]` couples `i` and `i + 1`,
/// `e[n - 1]` must be zero on entry. Rotations are accumulated into the
/// columns of `z`.
fn tql_implicit(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<()> {
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERATIONS {
                return Err(DimerError::NoConvergence(MAX_QL_ITERATIONS));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zi = z[k * n + i];
                    let zi1 = z[k * n + i + 1];
                    z[k * n + i + 1] = s * zi + c * zi1;
                    z[k * n + i] = c * zi - s * zi1;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

/// `<a|b>` with `a` conjugated.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn real_inner(v: &[f64], x: &[Complex64]) -> Complex64 {
    v.iter().zip(x).map(|(a, b)| b * a).sum()
}

pub fn matvec(m: &DMatrix<Complex64>, x: &[Complex64], y: &mut [Complex64]) {
    let (rows, cols) = m.shape();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, y.len());
    y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    // column-major storage: accumulate column by column
    for (j, xj) in x.iter().enumerate() {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        let col = m.column(j);
        for (yi, mij) in y.iter_mut().zip(col.iter()) {
            *yi += mij * xj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn random_tridiagonal(n: usize, seed: u64) -> SymTridiagonal {
        // xorshift keeps this test free of RNG plumbing
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let diag = (0..n).map(|_| next() * 10.0).collect();
        let off = (0..n - 1).map(|_| next()).collect();
        SymTridiagonal::new(diag, off)
    }

    #[test]
    fn ql_matches_dense_symmetric_eigen() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (17, 4), (41, 5)] {
            let t = random_tridiagonal(n, seed);
            let (vals, vecs) = t.eigen().unwrap();
            let mut oracle: Vec<f64> = SymmetricEigen::new(t.to_dense())
                .eigenvalues
                .iter()
                .copied()
                .collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in vals.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
            for (k, v) in vecs.iter().enumerate() {
                let hv = t.apply_real(v);
                let res: f64 = hv
                    .iter()
                    .zip(v)
                    .map(|(h, x)| (h - vals[k] * x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(res < 1e-10 * t.norm_inf().max(1.0));
            }
        }
    }

    #[test]
    fn ql_eigenvectors_orthonormal() {
        let t = random_tridiagonal(30, 9);
        let (_, vecs) = t.eigen().unwrap();
        for i in 0..vecs.len() {
            for j in 0..vecs.len() {
                let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_input_is_returned_sorted() {
        let t = SymTridiagonal::new(vec![1.0, 3.0, 2.0], vec![0.0, 0.0]);
        let (vals, vecs) = t.eigen().unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert_eq!(vecs[0], vec![0.0, 1.0, 0.0]);
    }
}
