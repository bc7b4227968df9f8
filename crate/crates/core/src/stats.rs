//! Small statistical helpers shared by the experiments.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean and standard error of the mean of `values`.
    pub fn from_terms(values: impl Iterator<Item = f64>) -> Self {
        let mut count = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            count += 1;
            let delta = v - mean;
            mean += delta / count as f64;
            m2 += delta * (v - mean);
        }
        if count < 2 {
            return Self { value: mean, se: f64::NAN };
        }
        Self {
            value: mean,
            se: libm::sqrt(m2 / (count - 1) as f64 / count as f64),
        }
    }

    /// `|value - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            what: "regression response",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData("a line fit needs at least two points".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("regressor has no spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        libm::sqrt(rss / (n - 2) as f64 / sxx)
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Wilson score interval for `k` successes in `n` trials at `z` standard deviations.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let den = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / den;
    let half = z * libm::sqrt(p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)) / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Sample covariance of row-major `rows` (width `m`) with entrywise standard errors.
///
/// The standard error of entry `(i, j)` is the standard error of the mean of
/// `(x_i - x̄_i)(x_j - x̄_j)`.
pub fn covariance_with_se(rows: &[f64], m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m == 0 || rows.len() % m != 0 {
        return Err(Error::Dimension {
            what: "sample row width",
            expected: m,
            got: rows.len(),
        });
    }
    let n = rows.len() / m;
    if n < 2 {
        return Err(Error::InsufficientData("covariance needs at least two samples".into()));
    }
    let mean = column_means(rows, m);
    let mut cov = DMatrix::zeros(m, m);
    let mut se = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let e = Estimate::from_terms(rows.chunks_exact(m).map(|r| (r[i] - mean[i]) * (r[j] - mean[j])));
            let c = e.value * n as f64 / (n - 1) as f64;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
            se[(i, j)] = e.se;
            se[(j, i)] = e.se;
        }
    }
    Ok((cov, se))
}

pub fn column_means(rows: &[f64], m: usize) -> Vec<f64> {
    let mut mean = alloc::vec![0.0; m];
    let n = rows.len() / m;
    for r in rows.chunks_exact(m) {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.5).abs() < 1e-14);
        assert!(f.slope_se < 1e-14);
    }

    #[test]
    fn wilson_brackets_the_proportion() {
        let (lo, hi) = wilson(30, 100, 2.0);
        assert!(lo < 0.3 && hi > 0.3);
        let (lo, hi) = wilson(0, 100, 3.0);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn mean_se_of_constant_is_zero() {
        let e = Estimate::from_terms([2.0; 10].into_iter());
        assert_eq!(e.value, 2.0);
        assert_eq!(e.se, 0.0);
    }
}
