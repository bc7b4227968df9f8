//! Chained systems, their structural checks and the built-in model families.

mod builtin;
mod validate;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::field::{jacobian_block, CoefficientField, FieldShape};

pub use builtin::{bs_asian, kolmogorov, kolmogorov_linear, quadratic_asian};
pub use validate::{check_h1, h1_blocks, probe_points, validate_structure, H1Check, ValidationReport, H1_THRESHOLD};

/// Which regularity family a model belongs to.
///
/// Recorded per built-in; never inferred automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    /// Bounded derivatives only.
    Bounded,
    /// Bounded derivatives and bounded diffusion coefficient.
    BoundedDiffusion,
    /// First-block coefficients of the form `diag(y_1) * bounded`.
    Lognormal,
}

/// `B(x) = M x` with a constant diffusion block; enables the exact Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDrift {
    pub matrix: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Descriptive metadata attached to a model.
#[derive(Debug, Clone)]
pub struct ModelMeta {
    pub key: String,
    pub regularity: Regularity,
    /// Half-width of the box around `ξ` used for structural probes.
    pub probe_radius: f64,
    pub linear: Option<LinearDrift>,
}

/// An SDE in `R^{nd}` forced by a `d`-dimensional Brownian motion in its first
/// block only, in Stratonovich form:
///
/// ```text
/// dX^1 = B_1(t, X) dt + σ(t, X) ∘ dW
/// dX^j = B_j(t, X^{j-1}, ..., X^n) dt,   j = 2..n
/// ```
#[derive(Debug, Clone)]
pub struct ChainedSystem {
    n: usize,
    d: usize,
    xi: Vec<f64>,
    drift: Vec<CoefficientField>,
    sigma: CoefficientField,
    horizon: f64,
    meta: ModelMeta,
}

impl ChainedSystem {
    pub fn new(
        n: usize,
        d: usize,
        xi: Vec<f64>,
        drift: Vec<CoefficientField>,
        sigma: CoefficientField,
        horizon: f64,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("n and d must be at least 1"));
        }
        if xi.len() != n * d {
            return Err(Error::Dimension {
                what: "initial point",
                expected: n * d,
                got: xi.len(),
            });
        }
        if drift.len() != n {
            return Err(Error::Dimension {
                what: "number of drift blocks",
                expected: n,
                got: drift.len(),
            });
        }
        for b in &drift {
            if b.shape() != FieldShape::Vector(d) {
                return Err(Error::Dimension {
                    what: "drift block output",
                    expected: d,
                    got: b.len(),
                });
            }
        }
        if sigma.shape() != FieldShape::Matrix(d) {
            return Err(Error::Dimension {
                what: "diffusion matrix output",
                expected: d * d,
                got: sigma.len(),
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("time horizon must be positive and finite"));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial point must be finite"));
        }
        Ok(Self {
            n,
            d,
            xi,
            drift,
            sigma,
            horizon,
            meta: ModelMeta {
                key: String::from("custom"),
                regularity: Regularity::Bounded,
                probe_radius: 1.0,
                linear: None,
            },
        })
    }

    pub fn with_meta(mut self, meta: ModelMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("time horizon must be positive and finite"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total dimension `nd`.
    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn key(&self) -> &str {
        &self.meta.key
    }

    /// Drift block `B_j`, 0-based.
    pub fn drift_block(&self, j: usize) -> &CoefficientField {
        &self.drift[j]
    }

    pub fn sigma_field(&self) -> &CoefficientField {
        &self.sigma
    }

    /// Stratonovich drift `B(t, x)` in `R^{nd}`.
    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for (j, b) in self.drift.iter().enumerate() {
            b.eval(t, x, &mut out[j * d..(j + 1) * d]);
        }
    }

    pub fn drift_vec(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift(t, x, &mut out);
        out
    }

    /// `σ(t, x)` as a `d x d` matrix.
    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        self.sigma.eval_matrix(t, x)
    }

    /// Itô form of the drift: `B` plus `½ Σ_i (J_{x_1} σ^i) σ^i` on the first block.
    pub fn ito_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.drift_vec(t, x);
        let corr = ito_correction(&self.sigma, t, x)?;
        for (o, c) in out.iter_mut().zip(corr) {
            *o += c;
        }
        Ok(out)
    }
}

/// `½ Σ_i (J_{x_1} σ^i) σ^i` for a matrix field, in `R^d`.
pub fn ito_correction(sigma: &CoefficientField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = sigma.shape().block_dim();
    let mut corr = vec![0.0; d];
    if sigma.is_constant() {
        return Ok(corr);
    }
    let s = sigma.eval_vec(t, x);
    let jac = jacobian_block(sigma, 0, t, x)?;
    accumulate_correction(d, &s, jac.as_slice(), &mut corr);
    Ok(corr)
}

/// Reusable buffers for the Itô correction in hot loops.
#[derive(Debug, Clone)]
pub struct CorrectionWorkspace {
    sigma: Vec<f64>,
    jac: Vec<f64>,
    jac_col_major: Vec<f64>,
    xp: Vec<f64>,
    fp: Vec<f64>,
    fm: Vec<f64>,
}

impl CorrectionWorkspace {
    pub fn new(d: usize, dim: usize) -> Self {
        Self {
            sigma: vec![0.0; d * d],
            jac: vec![0.0; d * d * d],
            jac_col_major: vec![0.0; d * d * d],
            xp: vec![0.0; dim],
            fp: vec![0.0; d * d],
            fm: vec![0.0; d * d],
        }
    }

    /// Adds the Itô correction to `out` (length `d`). Returns `σ(t, x)` row-major
    /// through the workspace buffer for the caller's diffusion step.
    pub fn add_correction(&mut self, sigma: &CoefficientField, t: f64, x: &[f64], out: &mut [f64]) -> &[f64] {
        let d = sigma.shape().block_dim();
        sigma.eval(t, x, &mut self.sigma);
        if sigma.is_constant() {
            return &self.sigma;
        }
        let rows = d * d;
        if !sigma.analytic_jacobian(t, x, 0, &mut self.jac) {
            self.xp.copy_from_slice(x);
            for k in 0..d {
                let h = crate::field::fd_step(x[k]);
                self.xp[k] = x[k] + h;
                sigma.eval(t, &self.xp, &mut self.fp);
                self.xp[k] = x[k] - h;
                sigma.eval(t, &self.xp, &mut self.fm);
                self.xp[k] = x[k];
                for r in 0..rows {
                    self.jac[r * d + k] = (self.fp[r] - self.fm[r]) / (2.0 * h);
                }
            }
        }
        // row-major (rows x d) -> column-major
        for r in 0..rows {
            for k in 0..d {
                self.jac_col_major[k * rows + r] = self.jac[r * d + k];
            }
        }
        accumulate_correction(d, &self.sigma, &self.jac_col_major, out);
        &self.sigma
    }
}

// jac is the (d*d) x d Jacobian of row-major σ, stored column-major.
fn accumulate_correction(d: usize, sigma: &[f64], jac: &[f64], out: &mut [f64]) {
    let rows = d * d;
    for r in 0..d {
        let mut acc = 0.0;
        for i in 0..d {
            for k in 0..d {
                acc += jac[k * rows + r * d + i] * sigma[k * d + i];
            }
        }
        out[r] += 0.5 * acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_diffusion_has_no_correction() {
        let sys = kolmogorov(2);
        let x = [0.3, -1.2];
        assert_eq!(sys.ito_drift(0.0, &x).unwrap(), sys.drift_vec(0.0, &x));
    }

    #[test]
    fn black_scholes_correction_value() {
        // ½ (Jσ) σ = ½ · 0.2 · (0.2 · 100) = 2
        let sys = bs_asian(100.0, 0.0, 0.2);
        let corr = ito_correction(sys.sigma_field(), 0.0, &[100.0, 0.0]).unwrap();
        assert!((corr[0] - 2.0).abs() < 1e-9);
        // the Itô drift of the stock block is r·y = 0
        let ito = sys.ito_drift(0.0, &[100.0, 0.0]).unwrap();
        assert!(ito[0].abs() < 1e-9);
        assert!((ito[1] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_local_vol_correction_per_component() {
        let vols = [0.3, 0.1];
        let sigma = CoefficientField::matrix(2, move |_, x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = vols[0] * x[0];
            out[3] = vols[1] * x[1];
        });
        let x = [50.0, 80.0, 0.0, 0.0];
        let corr = ito_correction(&sigma, 0.0, &x).unwrap();
        for i in 0..2 {
            let expect = 0.5 * vols[i] * vols[i] * x[i];
            assert!((corr[i] - expect).abs() < 1e-7 * expect, "{i}: {} vs {expect}", corr[i]);
        }
        let mut ws = CorrectionWorkspace::new(2, 4);
        let mut out = [0.0; 2];
        ws.add_correction(&sigma, 0.0, &x, &mut out);
        assert!((out[0] - corr[0]).abs() < 1e-12 && (out[1] - corr[1]).abs() < 1e-12);
    }

    #[test]
    fn constructor_rejects_mismatched_dimensions() {
        let b = CoefficientField::constant_vector(vec![0.0]);
        let s = CoefficientField::constant_matrix(&DMatrix::identity(1, 1));
        let err = ChainedSystem::new(2, 1, vec![0.0, 0.0], vec![b.clone()], s.clone(), 1.0).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        let wide = CoefficientField::constant_vector(vec![0.0, 0.0]);
        let err = ChainedSystem::new(2, 1, vec![0.0, 0.0], vec![b, wide], s, 1.0).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
