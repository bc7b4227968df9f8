//! Evaluable coefficient fields `(t, x) -> R^d` or `(t, x) -> R^{d x d}`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

type EvalFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type JacobianFn = dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync;

/// Output shape of a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldShape {
    /// A vector in `R^d`.
    Vector(usize),
    /// A `d x d` matrix, stored row-major.
    Matrix(usize),
}

impl FieldShape {
    pub fn block_dim(self) -> usize {
        match self {
            FieldShape::Vector(d) | FieldShape::Matrix(d) => d,
        }
    }

    pub fn len(self) -> usize {
        match self {
            FieldShape::Vector(d) => d,
            FieldShape::Matrix(d) => d * d,
        }
    }
}

/// A drift block `B_j` or the diffusion matrix `σ`.
///
/// The evaluation closure receives the time, the full state in `R^{nd}` and an
/// output slice of length [`FieldShape::len`]. An optional analytic Jacobian
/// closure receives a block index `l` (0-based) and writes the
/// `len x d` Jacobian with respect to `x_l`, row-major.
///
/// Fields are immutable once built and are shared between simulation workers.
#[derive(Clone)]
pub struct CoefficientField {
    shape: FieldShape,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
    constant: bool,
}

impl core::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("shape", &self.shape)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("constant", &self.constant)
            .finish()
    }
}

impl CoefficientField {
    pub fn vector<F>(d: usize, eval: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            shape: FieldShape::Vector(d),
            eval: Arc::new(eval),
            jacobian: None,
            constant: false,
        }
    }

    pub fn matrix<F>(d: usize, eval: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            shape: FieldShape::Matrix(d),
            eval: Arc::new(eval),
            jacobian: None,
            constant: false,
        }
    }

    /// A field that ignores `(t, x)`. Its Jacobian is identically zero.
    pub fn constant_vector(value: Vec<f64>) -> Self {
        let d = value.len();
        let mut f = Self::vector(d, move |_, _, out| out.copy_from_slice(&value));
        f.constant = true;
        f
    }

    /// Constant `d x d` matrix field.
    pub fn constant_matrix(value: &DMatrix<f64>) -> Self {
        let d = value.nrows();
        let flat = row_major(value);
        let mut f = Self::matrix(d, move |_, _, out| out.copy_from_slice(&flat));
        f.constant = true;
        f
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.constant || self.jacobian.is_some()
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    pub fn eval_vec(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval(t, x, &mut out);
        out
    }

    /// Evaluates a matrix field into a `d x d` matrix.
    pub fn eval_matrix(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let d = self.shape.block_dim();
        let flat = self.eval_vec(t, x);
        match self.shape {
            FieldShape::Matrix(_) => DMatrix::from_row_slice(d, d, &flat),
            FieldShape::Vector(_) => DMatrix::from_column_slice(d, 1, &flat),
        }
    }

    /// Writes the analytic Jacobian block if one is available.
    pub fn analytic_jacobian(&self, t: f64, x: &[f64], block: usize, out: &mut [f64]) -> bool {
        if self.constant {
            out.iter_mut().for_each(|v| *v = 0.0);
            return true;
        }
        match &self.jacobian {
            Some(j) => {
                j(t, x, block, out);
                true
            }
            None => false,
        }
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Central finite-difference step for a coordinate of magnitude `|x|`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    let h = 1e-6 * libm::fabs(x);
    if h > 1e-6 {
        h
    } else {
        1e-6
    }
}

/// Jacobian of `field` with respect to the `block`-th (0-based) `d`-dimensional
/// sub-vector of `x`, as a `len x d` matrix.
///
/// Uses the analytic Jacobian when the field carries one, otherwise central
/// differences with step `max(1e-6, 1e-6 |x_k|)`.
pub fn jacobian_block(field: &CoefficientField, block: usize, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = field.shape.block_dim();
    if d == 0 || x.len() % d != 0 {
        return Err(Error::Dimension {
            what: "state length vs block dimension",
            expected: d,
            got: x.len(),
        });
    }
    let n = x.len() / d;
    if block >= n {
        return Err(Error::Dimension {
            what: "block index",
            expected: n,
            got: block,
        });
    }
    let rows = field.len();
    let mut buf = vec![0.0; rows * d];
    if field.analytic_jacobian(t, x, block, &mut buf) {
        if let Some(k) = buf.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "analytic jacobian",
                coordinate: block * d + k % d,
            });
        }
        return Ok(DMatrix::from_row_slice(rows, d, &buf));
    }
    finite_difference_block(field, block, t, x)
}

/// Central-difference Jacobian block, ignoring any analytic Jacobian.
pub fn finite_difference_block(field: &CoefficientField, block: usize, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = field.shape.block_dim();
    let rows = field.len();
    let mut jac = DMatrix::zeros(rows, d);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for k in 0..d {
        let idx = block * d + k;
        let h = fd_step(x[idx]);
        xp[idx] = x[idx] + h;
        field.eval(t, &xp, &mut fp);
        xp[idx] = x[idx] - h;
        field.eval(t, &xp, &mut fm);
        xp[idx] = x[idx];
        for r in 0..rows {
            if !fp[r].is_finite() || !fm[r].is_finite() {
                return Err(Error::NonFinite {
                    context: "finite-difference jacobian",
                    coordinate: idx,
                });
            }
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Jacobian of the `column`-th column `σ^i` of a matrix field with respect to
/// the given block, as a `d x d` matrix.
pub fn column_jacobian(field: &CoefficientField, column: usize, block: usize, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = field.shape.block_dim();
    let full = jacobian_block(field, block, t, x)?;
    Ok(match field.shape {
        FieldShape::Vector(_) => full,
        FieldShape::Matrix(_) => DMatrix::from_fn(d, d, |r, k| full[(r * d + column, k)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_field_has_unit_jacobian() {
        let f = CoefficientField::vector(1, |_, x, out| out[0] = x[0]);
        let j = jacobian_block(&f, 0, 0.3, &[2.5, 7.0]).unwrap();
        assert!((j[(0, 0)] - 1.0).abs() < 1e-9);
        let j2 = jacobian_block(&f, 1, 0.3, &[2.5, 7.0]).unwrap();
        assert_eq!(j2[(0, 0)], 0.0);
    }

    #[test]
    fn square_field_derivative() {
        let f = CoefficientField::vector(1, |_, x, out| out[0] = x[0] * x[0]);
        let j = jacobian_block(&f, 0, 0.0, &[3.0, 0.0]).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn scaled_identity_diffusion_jacobian() {
        let sigma = CoefficientField::matrix(1, |_, x, out| out[0] = 0.2 * x[0]);
        let j = column_jacobian(&sigma, 0, 0, 0.0, &[100.0, 0.0]).unwrap();
        assert!((j[(0, 0)] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn out_of_range_block_is_an_error() {
        let f = CoefficientField::vector(2, |_, x, out| out.copy_from_slice(&x[..2]));
        assert!(matches!(
            jacobian_block(&f, 2, 0.0, &[0.0; 4]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_evaluation_reports_coordinate() {
        let f = CoefficientField::vector(1, |_, x, out| out[0] = libm::log(x[1]));
        let err = jacobian_block(&f, 1, 0.0, &[1.0, 0.0]).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                context: "finite-difference jacobian",
                coordinate: 1
            }
        );
    }
}
