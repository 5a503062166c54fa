//! Small dense symmetric solves for the path-weight fit.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major `k x k` symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SymMatrix {
    pub k: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(k: usize) -> Self {
        SymMatrix {
            k,
            data: vec![0.0; k * k],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.k + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn quad_form(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                s += w[i] * self.get(i, j) * w[j];
            }
        }
        s
    }

    /// Cholesky factor `L` (row-major, lower triangle), or `None` when a
    /// pivot is not strictly positive.
    pub fn cholesky(&self) -> Option<Vec<f64>> {
        let k = self.k;
        let mut l = vec![0.0; k * k];
        for j in 0..k {
            let mut d = self.get(j, j);
            for p in 0..j {
                d -= l[j * k + p] * l[j * k + p];
            }
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let d = libm::sqrt(d);
            l[j * k + j] = d;
            for i in j + 1..k {
                let mut s = self.get(i, j);
                for p in 0..j {
                    s -= l[i * k + p] * l[j * k + p];
                }
                l[i * k + j] = s / d;
            }
        }
        Some(l)
    }
}

/// Solve `L Lᵀ x = b` given the Cholesky factor.
pub(crate) fn cholesky_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    x
}

/// Weighted empirical covariance of the columns of a row-major
/// `rows x k` matrix, with reliability-weight bias correction.
pub(crate) fn covariance(data: &[f64], k: usize, weights: Option<&[f64]>) -> SymMatrix {
    let rows = data.len() / k;
    let w = |r: usize| weights.map_or(1.0, |w| w[r]);
    let v1: f64 = (0..rows).map(w).sum();
    let v2: f64 = (0..rows).map(|r| w(r) * w(r)).sum();
    let mut means = vec![0.0; k];
    for r in 0..rows {
        for (c, m) in means.iter_mut().enumerate() {
            *m += w(r) * data[r * k + c];
        }
    }
    means.iter_mut().for_each(|m| *m /= v1);
    let mut cov = SymMatrix::zeros(k);
    for r in 0..rows {
        let wr = w(r);
        let row = &data[r * k..(r + 1) * k];
        for i in 0..k {
            let di = row[i] - means[i];
            for j in 0..=i {
                let v = cov.get(i, j) + wr * di * (row[j] - means[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = v1 - v2 / v1;
    for i in 0..k {
        for j in 0..=i {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_two_by_two() {
        let mut m = SymMatrix::zeros(2);
        m.data = vec![4.0, 1.0, 1.0, 2.0];
        let l = m.cholesky().unwrap();
        let x = cholesky_solve(&l, 2, &[1.0, 1.0]);
        // [[4,1],[1,2]]^-1 [1,1] = [1, 3] / 7
        assert!((x[0] - 1.0 / 7.0).abs() < 1e-15);
        assert!((x[1] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn singular_has_no_factor() {
        let mut m = SymMatrix::zeros(2);
        m.data = vec![1.0, 1.0, 1.0, 1.0];
        assert!(m.cholesky().is_none());
    }

    #[test]
    fn covariance_of_known_columns() {
        // Columns x and 2x: cov = [[v, 2v], [2v, 4v]] with v = var(x).
        let x = [1.0, 2.0, 4.0, 7.0];
        let data: Vec<f64> = x.iter().flat_map(|&v| [v, 2.0 * v]).collect();
        let c = covariance(&data, 2, None);
        let v = crate::stats::variance(&x);
        assert!((c.get(0, 0) - v).abs() < 1e-12);
        assert!((c.get(0, 1) - 2.0 * v).abs() < 1e-12);
        assert!((c.get(1, 1) - 4.0 * v).abs() < 1e-12);
    }
}
