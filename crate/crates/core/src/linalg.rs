//! Small dense symmetric matrices for proposal and target covariances.

use crate::math;

/// Lower Cholesky factor `L` with `L Lᵀ = a`, or `None` if `a` is not
/// numerically positive definite.
pub fn cholesky<const D: usize>(a: &[[f64; D]; D]) -> Option<[[f64; D]; D]> {
    let mut l = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i][i] = math::sqrt(sum);
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// `L z` for a lower-triangular `L`.
pub fn lower_mul<const D: usize>(l: &[[f64; D]; D], z: &[f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for i in 0..D {
        for k in 0..=i {
            out[i] += l[i][k] * z[k];
        }
    }
    out
}

/// Solves `L y = b` by forward substitution.
pub fn lower_solve<const D: usize>(l: &[[f64; D]; D], b: &[f64; D]) -> [f64; D] {
    let mut y = [0.0; D];
    for i in 0..D {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    y
}

/// `ln det(L Lᵀ)`.
pub fn log_det_from_cholesky<const D: usize>(l: &[[f64; D]; D]) -> f64 {
    (0..D).map(|i| 2.0 * math::ln(l[i][i])).sum()
}

pub fn identity<const D: usize>() -> [[f64; D]; D] {
    let mut m = [[0.0; D]; D];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn diagonal<const D: usize>(d: &[f64; D]) -> [[f64; D]; D] {
    let mut m = [[0.0; D]; D];
    for i in 0..D {
        m[i][i] = d[i];
    }
    m
}

/// Running mean and scatter matrix of a stream of vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welford<const D: usize> {
    pub count: u64,
    pub mean: [f64; D],
    pub scatter: [[f64; D]; D],
}

impl<const D: usize> Default for Welford<D> {
    fn default() -> Self {
        Self { count: 0, mean: [0.0; D], scatter: [[0.0; D]; D] }
    }
}

impl<const D: usize> Welford<D> {
    pub fn push(&mut self, x: &[f64; D]) {
        self.count += 1;
        let n = self.count as f64;
        let mut delta = [0.0; D];
        for i in 0..D {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..D {
            for j in 0..D {
                self.scatter[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    /// Unbiased sample covariance; zero for fewer than two vectors.
    pub fn covariance(&self) -> [[f64; D]; D] {
        let mut c = [[0.0; D]; D];
        if self.count < 2 {
            return c;
        }
        let n = (self.count - 1) as f64;
        for i in 0..D {
            for j in 0..D {
                // symmetrise away rounding differences
                c[i][j] = 0.5 * (self.scatter[i][j] + self.scatter[j][i]) / n;
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    #[test]
    fn cholesky_matches_nalgebra() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let l = cholesky(&a).unwrap();
        let m = Matrix3::from_fn(|i, j| a[i][j]);
        let oracle = m.cholesky().unwrap().l();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(l[i][j], oracle[(i, j)], epsilon = 1e-14);
            }
        }
        assert_abs_diff_eq!(log_det_from_cholesky(&l), m.determinant().ln(), epsilon = 1e-12);
        let b = [1.0, -2.0, 0.5];
        let y = lower_solve(&l, &b);
        let oracle = oracle.solve_lower_triangular(&Vector3::from(b)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(y[i], oracle[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        assert!(cholesky(&[[1.0, 2.0], [2.0, 1.0]]).is_none());
        assert!(cholesky(&[[0.0, 0.0], [0.0, 1.0]]).is_none());
        assert!(cholesky(&[[f64::NAN, 0.0], [0.0, 1.0]]).is_none());
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [[1.0, 2.0], [3.0, 1.0], [-1.0, 0.5], [2.0, 2.5], [0.0, -1.0]];
        let mut w = Welford::<2>::default();
        xs.iter().for_each(|x| w.push(x));
        let n = xs.len() as f64;
        let mean = [xs.iter().map(|x| x[0]).sum::<f64>() / n, xs.iter().map(|x| x[1]).sum::<f64>() / n];
        let c = w.covariance();
        for i in 0..2 {
            assert_abs_diff_eq!(w.mean[i], mean[i], epsilon = 1e-14);
            for j in 0..2 {
                let oracle = xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1.0);
                assert_abs_diff_eq!(c[i][j], oracle, epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn factor_reproduces_matrix(v in proptest::collection::vec(-2.0..2.0f64, 9), shift in 0.1..3.0f64) {
            // B Bᵀ + shift·I is positive definite
            let mut a = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = (0..3).map(|k| v[3 * i + k] * v[3 * j + k]).sum::<f64>();
                }
                a[i][i] += shift;
            }
            let l = cholesky(&a).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let back: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                    prop_assert!((back - a[i][j]).abs() < 1e-10);
                }
            }
        }
    }
}
