//! Short-time Gaussian limit: the matrices `A`, `Q`, the constant `q_n` and the
//! limit density with its gradient and Hessian.

mod hormander;

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{check_h1, h1_blocks, ChainedSystem};

pub use hormander::{hormander_matrix, HormanderReport};

/// Block-diagonal `A` with `j`-th block `J_{x_{j-1}} B_j ··· J_{x_1} B_2 σ(0, ξ)`.
pub fn build_a(sys: &ChainedSystem) -> Result<DMatrix<f64>> {
    let h1 = check_h1(sys)?;
    if !h1.holds() {
        return Err(Error::Degenerate { lambda: h1.lambda });
    }
    let d = sys.d();
    let blocks = h1_blocks(sys)?;
    let mut a = DMatrix::zeros(sys.dim(), sys.dim());
    for (j, b) in blocks.iter().enumerate() {
        a.view_mut((j * d, j * d), (d, d)).copy_from(b);
    }
    Ok(a)
}

/// `Q` with block `(l, j)` equal to `Id_d / ((l + j - 1)(l - 1)!(j - 1)!)`.
pub fn build_q(n: usize, d: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n * d, n * d);
    for l in 1..=n {
        for j in 1..=n {
            let v = 1.0 / ((l + j - 1) as f64 * factorial(l - 1) * factorial(j - 1));
            for k in 0..d {
                q[((l - 1) * d + k, (j - 1) * d + k)] = v;
            }
        }
    }
    q
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `q_n = (2π)^{n/2} (det Q)^{1/(2d)}`, with `det Q` from a Cholesky factor of
/// the full `nd x nd` matrix.
pub fn q_n(n: usize, d: usize) -> Result<f64> {
    let chol = Cholesky::new(build_q(n, d)).ok_or(Error::NotPositiveDefinite("Q"))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * libm::log(*v)).sum();
    Ok(libm::exp(0.5 * n as f64 * libm::log(2.0 * core::f64::consts::PI) + log_det / (2.0 * d as f64)))
}

/// `q_n = (2π)^{n/2} ∏_{j<n} j! / sqrt(∏_{j<2n} j!)`.
pub fn q_n_factorial(n: usize) -> f64 {
    let log_num: f64 = (1..n).map(|j| libm::lgamma(j as f64 + 1.0)).sum();
    let log_den: f64 = (1..2 * n).map(|j| libm::lgamma(j as f64 + 1.0)).sum();
    libm::exp(0.5 * n as f64 * libm::log(2.0 * core::f64::consts::PI) + log_num - 0.5 * log_den)
}

/// Limit objects of the short-time asymptotics for one model.
#[derive(Debug, Clone)]
pub struct LimitModel {
    n: usize,
    d: usize,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    qn: f64,
    det_a_abs: f64,
}

impl LimitModel {
    pub fn from_system(sys: &ChainedSystem) -> Result<Self> {
        Self::from_a(build_a(sys)?, sys.n(), sys.d())
    }

    pub fn from_a(a: DMatrix<f64>, n: usize, d: usize) -> Result<Self> {
        if a.nrows() != n * d || a.ncols() != n * d {
            return Err(Error::Dimension {
                what: "matrix A",
                expected: n * d,
                got: a.nrows(),
            });
        }
        let q = build_q(n, d);
        let covariance = &a * &q * a.transpose();
        let chol = Cholesky::new(covariance.clone()).ok_or(Error::NotPositiveDefinite("AQA^T"))?;
        let det_a_abs = a.determinant().abs();
        Ok(Self {
            n,
            d,
            qn: q_n(n, d)?,
            a,
            q,
            covariance,
            chol,
            det_a_abs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `AQAᵀ`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn qn(&self) -> f64 {
        self.qn
    }

    pub fn det_a_abs(&self) -> f64 {
        self.det_a_abs
    }

    /// `q_n^d |det A|`.
    pub fn normalization(&self) -> f64 {
        libm::pow(self.qn, self.d as f64) * self.det_a_abs
    }

    fn check(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.n * self.d {
            return Err(Error::Dimension {
                what: "limit evaluation point",
                expected: self.n * self.d,
                got: y.len(),
            });
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "limit evaluation point",
                coordinate: k,
            });
        }
        Ok(DVector::from_column_slice(y))
    }

    /// `(AQAᵀ)^{-1} ȳ` via the Cholesky factor.
    pub fn precision_times(&self, y: &[f64]) -> Result<DVector<f64>> {
        Ok(self.chol.solve(&self.check(y)?))
    }

    /// `exp(-⟨(AQAᵀ)^{-1}ȳ, ȳ⟩ / 2) / (q_n^d |det A|)`.
    pub fn density(&self, y: &[f64]) -> Result<f64> {
        let v = self.check(y)?;
        let s = self.chol.solve(&v);
        Ok(libm::exp(-0.5 * v.dot(&s)) / self.normalization())
    }

    /// Gradient of [`Self::density`]: `-density · (AQAᵀ)^{-1} ȳ`.
    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = self.check(y)?;
        let s = self.chol.solve(&v);
        let p = libm::exp(-0.5 * v.dot(&s)) / self.normalization();
        Ok(s.iter().map(|c| -p * c).collect())
    }

    /// Hessian of [`Self::density`]:
    /// `density · ((AQAᵀ)^{-1} ȳ ȳᵀ (AQAᵀ)^{-1} - (AQAᵀ)^{-1})`.
    pub fn hessian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.check(y)?;
        let s = self.chol.solve(&v);
        let p = libm::exp(-0.5 * v.dot(&s)) / self.normalization();
        let precision = self.chol.inverse();
        Ok((&s * s.transpose() - precision) * p)
    }

    /// `(AQAᵀ)^{-1}`, formed from the Cholesky factor.
    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}
