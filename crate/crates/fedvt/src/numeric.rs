//! Small numeric helpers shared across modules: compensated summation,
//! two-pass mean/standard-error, log-sum-exp, and dense symmetric matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Neumaier-compensated sum. Deterministic for a fixed input order.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean, by two compensated passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    assert!(n > 0, "mean_se needs at least one sample");
    let mean = compensated_sum(xs) / n as f64;
    if n == 1 {
        return MeanSe { mean, se: 0.0, n };
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = compensated_sum(&sq) / (n as f64 - 1.0);
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// log(sum_i exp(x_i)), tolerating -inf entries. Returns -inf for all -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Squared Euclidean norm.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Euclidean inner product; panics on length mismatch.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalue NaN"));
    Ok(ev)
}

/// Standard normal log-density.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Gaussian log-density with mean `mu` and standard deviation `sd`.
pub fn normal_log_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    std_normal_log_pdf((x - mu) / sd) - sd.ln()
}

/// Least-squares slope of y against x; used for log-log rate fits.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = compensated_sum(x) / n;
    let my = compensated_sum(y) / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        // 1 followed by 1e16 copies is too much; use the classic small case.
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(&xs), 2.0);
    }

    #[test]
    fn mean_se_matches_hand_value() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m.mean, 2.5);
        // sample var = 5/3, se = sqrt(5/12)
        assert_relative_eq!(m.se, (5.0f64 / 12.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_relative_eq!(
            log_sum_exp(&[0.0, f64::NEG_INFINITY]),
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn slope_of_exact_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 6.0];
        assert_relative_eq!(ls_slope(&x, &y), 2.0, epsilon = 1e-12);
    }
}
