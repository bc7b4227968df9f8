use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::jacobian_block;
use crate::model::{h1_blocks, ChainedSystem};

/// First-level directional-derivative step; each further nesting level uses a
/// step ten times larger.
const BRACKET_STEP: f64 = 1e-4;
/// Relative tolerance for "zero" blocks and diagonal agreement.
const BLOCK_TOLERANCE: f64 = 1e-6;

/// The matrix of iterated brackets
/// `(σ̄, [B, σ̄^i], [B, [B, σ̄^i]], ...)` at `(0, ξ)` and its structure checks.
#[derive(Debug, Clone)]
pub struct HormanderReport {
    pub matrix: DMatrix<f64>,
    /// Frobenius norm of the blocks strictly below the block diagonal.
    pub below_diagonal_mass: f64,
    pub total_mass: f64,
    pub lower_ok: bool,
    /// `|M_jj - (-1)^{j-1} A_j|_F` per diagonal block.
    pub diagonal_errors: Vec<f64>,
    pub diagonal_ok: bool,
}

impl HormanderReport {
    pub fn ok(&self) -> bool {
        self.lower_ok && self.diagonal_ok
    }
}

struct Brackets<'a> {
    sys: &'a ChainedSystem,
    scale: f64,
}

impl Brackets<'_> {
    fn sigma_column(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let d = self.sys.d();
        let s = self.sys.sigma_field().eval_vec(0.0, x);
        let mut out = vec![0.0; self.sys.dim()];
        for r in 0..d {
            out[r] = s[r * d + i];
        }
        out
    }

    fn full_drift_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (n, d) = (self.sys.n(), self.sys.d());
        let mut jac = DMatrix::zeros(n * d, n * d);
        for j in 0..n {
            for l in 0..n {
                let block = jacobian_block(self.sys.drift_block(j), l, 0.0, x)?;
                jac.view_mut((j * d, l * d), (d, d)).copy_from(&block);
            }
        }
        Ok(jac)
    }

    /// `[B, φ]^{(level)}` applied to `φ = σ̄^i`, with `[B, φ] = (Jφ) B - (JB) φ`.
    fn bracket(&self, level: usize, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        if level == 0 {
            return Ok(self.sigma_column(i, x));
        }
        let phi = self.bracket(level - 1, i, x)?;
        let b = self.sys.drift_vec(0.0, x);
        let along_b = self.directional(level, i, x, &b)?;
        let jb = self.full_drift_jacobian(x)?;
        let jb_phi = &jb * nalgebra::DVector::from_column_slice(&phi);
        let out: Vec<f64> = along_b.iter().zip(jb_phi.iter()).map(|(a, c)| a - c).collect();
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "iterated bracket",
                coordinate: k,
            });
        }
        Ok(out)
    }

    /// `(J [B,σ̄^i]^{(level-1)}) v` by Richardson-extrapolated central differences.
    fn directional(&self, level: usize, i: usize, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let norm = libm::sqrt(v.iter().map(|c| c * c).sum::<f64>());
        if norm == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let eps = BRACKET_STEP * libm::pow(10.0, (level - 1) as f64) * self.scale;
        let central = |h: f64| -> Result<Vec<f64>> {
            let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b / norm).collect();
            let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b / norm).collect();
            let fp = self.bracket(level - 1, i, &xp)?;
            let fm = self.bracket(level - 1, i, &xm)?;
            Ok(fp.iter().zip(&fm).map(|(p, m)| norm * (p - m) / (2.0 * h)).collect())
        };
        let coarse = central(eps)?;
        let fine = central(0.5 * eps)?;
        Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
    }
}

/// Assembles the bracket matrix at `(0, ξ)`.
///
/// Column block `l` (0-based) holds `[B, σ̄^i]^{(l)}` for `i = 1..d`. The matrix
/// is block upper triangular with diagonal blocks `(-1)^l A_{l+1}`.
pub fn hormander_matrix(sys: &ChainedSystem) -> Result<HormanderReport> {
    let (n, d) = (sys.n(), sys.d());
    let xi = sys.xi();
    let scale = xi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let ctx = Brackets { sys, scale };
    let mut matrix = DMatrix::zeros(n * d, n * d);
    for level in 0..n {
        for i in 0..d {
            let col = ctx.bracket(level, i, xi)?;
            for (r, v) in col.iter().enumerate() {
                matrix[(r, level * d + i)] = *v;
            }
        }
    }
    let total_mass = matrix.norm();
    let mut below = 0.0;
    for jr in 0..n {
        for lc in 0..jr {
            below += matrix.view((jr * d, lc * d), (d, d)).norm_squared();
        }
    }
    let below_diagonal_mass = libm::sqrt(below);
    let blocks = h1_blocks(sys)?;
    let diagonal_errors: Vec<f64> = blocks
        .iter()
        .enumerate()
        .map(|(l, a)| {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            (matrix.view((l * d, l * d), (d, d)) - a * sign).norm()
        })
        .collect();
    let tol = BLOCK_TOLERANCE * total_mass;
    Ok(HormanderReport {
        lower_ok: below_diagonal_mass <= tol,
        diagonal_ok: diagonal_errors.iter().all(|e| *e <= tol),
        matrix,
        below_diagonal_mass,
        total_mass,
        diagonal_errors,
    })
}
