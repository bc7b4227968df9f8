use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::flow::ScalingMatrix;
use crate::model::ChainedSystem;

/// Gauss–Legendre nodes used for the covariance integral.
pub const QUADRATURE_NODES: usize = 32;

/// Exact law of a linear chain `dX = M X dt + σ̄ dW` at time `t`, held in the
/// rescaled coordinates `χ = T_t^{-1}(X - mean)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianLaw {
    n: usize,
    d: usize,
    t: f64,
    mean: Vec<f64>,
    chi_covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl LinearGaussianLaw {
    pub fn new(sys: &ChainedSystem, t: f64) -> Result<Self> {
        let lin = sys
            .meta()
            .linear
            .as_ref()
            .ok_or_else(|| Error::Unsupported(alloc::format!("model '{}' is not linear", sys.key())))?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid("time must be positive"));
        }
        let (n, d, dim) = (sys.n(), sys.d(), sys.dim());
        let m = &lin.matrix;
        let mean = expm(&(m * t)) * DVector::from_column_slice(sys.xi());
        let mut sigma_bar = DMatrix::zeros(dim, d);
        sigma_bar.view_mut((0, 0), (d, d)).copy_from(&lin.sigma);
        let scaling = ScalingMatrix::new(t, n, d)?;
        let inv_t = DMatrix::from_diagonal(&DVector::from_iterator(dim, scaling.diagonal().iter().map(|v| 1.0 / v)));
        let (nodes, weights) = gauss_legendre(QUADRATURE_NODES);
        let mut cov = DMatrix::zeros(dim, dim);
        for (x, w) in nodes.iter().zip(&weights) {
            let s = 0.5 * t * (x + 1.0);
            let g = &inv_t * expm(&(m * s)) * &sigma_bar;
            cov += &g * g.transpose() * (0.5 * t * w);
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite("linear-flow covariance"))?;
        Ok(Self {
            n,
            d,
            t,
            mean: mean.as_slice().to_vec(),
            chi_covariance: cov,
            chol,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Covariance of `T_t^{-1} X_t`.
    pub fn chi_covariance(&self) -> &DMatrix<f64> {
        &self.chi_covariance
    }

    /// `T_t (Cov χ) T_t`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let diag = ScalingMatrix::new(self.t, self.n, self.d).map(|s| s.diagonal()).unwrap_or_default();
        DMatrix::from_fn(self.mean.len(), self.mean.len(), |r, c| {
            self.chi_covariance[(r, c)] * diag[r] * diag[c]
        })
    }

    /// `log p_t(ξ, y)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.mean.len() {
            return Err(Error::Dimension {
                what: "evaluation point",
                expected: self.mean.len(),
                got: y.len(),
            });
        }
        let scaling = ScalingMatrix::new(self.t, self.n, self.d)?;
        let mut z = vec![0.0; y.len()];
        scaling.rescale_point(&self.mean, y, &mut z);
        let z = DVector::from_column_slice(&z);
        let quad = z.dot(&self.chol.solve(&z));
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|v| 2.0 * libm::log(*v)).sum();
        let m = y.len() as f64;
        Ok(-0.5 * quad - 0.5 * (m * libm::log(2.0 * core::f64::consts::PI) + log_det) - scaling.log_det())
    }
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 { libm::ceil(libm::log2(norm / 0.5)) as i32 } else { 0 };
    let scaled = a / libm::pow(2.0, squarings as f64);
    let dim = a.nrows();
    let mut term = DMatrix::identity(dim, dim);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; count];
    let mut weights = vec![0.0; count];
    let nf = count as f64;
    for i in 0..count.div_ceil(2) {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=count {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if count == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[count - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[count - 1 - i] = w;
    }
    (nodes, weights)
}

/// One row of the decay table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    pub log_density: f64,
    /// `t^{2j*-3} log p_t(ξ, ξ)`.
    pub scaled: f64,
}

/// Short-time behaviour of `p_t(ξ, ξ)` for a linear chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTable {
    /// Smallest block `j ≥ 2` (1-based) with `B_j(0, ξ) ≠ 0`; `None` when the
    /// drift vanishes at `ξ` beyond the first block.
    pub j_star: Option<usize>,
    pub rows: Vec<DecayRow>,
}

impl DecayTable {
    pub fn applicable(&self) -> bool {
        self.j_star.is_some()
    }

    /// Largest tabulated `t^{2j*-3} log p_t(ξ, ξ)`.
    pub fn sup_scaled(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.scaled).reduce(f64::max)
    }

    /// Whether every tabulated value is below zero.
    pub fn bounded_negative(&self) -> bool {
        self.applicable() && self.sup_scaled().is_some_and(|v| v < 0.0)
    }
}

/// Tabulates `t^{2j*-3} log p_t(ξ, ξ)` from the exact Gaussian law.
pub fn diagonal_decay(sys: &ChainedSystem, t_grid: &[f64]) -> Result<DecayTable> {
    if sys.meta().linear.is_none() {
        return Err(Error::Unsupported(alloc::format!("model '{}' is not linear", sys.key())));
    }
    let d = sys.d();
    let b = sys.drift_vec(0.0, sys.xi());
    let j_star = (1..sys.n())
        .find(|&j| b[j * d..(j + 1) * d].iter().any(|v| *v != 0.0))
        .map(|j| j + 1);
    let Some(j) = j_star else {
        return Ok(DecayTable { j_star, rows: Vec::new() });
    };
    let rows = t_grid
        .iter()
        .map(|&t| {
            let law = LinearGaussianLaw::new(sys, t)?;
            let log_density = law.log_density(sys.xi())?;
            Ok(DecayRow {
                t,
                log_density,
                scaled: libm::pow(t, (2 * j) as f64 - 3.0) * log_density,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayTable { j_star, rows })
}
