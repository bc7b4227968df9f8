use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{ChainedSystem, Regularity};
use crate::error::{invalid, Error, Result};
use crate::field::{finite_difference_block, jacobian_block};

/// Smallest singular value below which the Hörmander product counts as degenerate.
pub const H1_THRESHOLD: f64 = 1e-12;

/// Tolerance on forbidden partial derivatives of the drift blocks.
pub const STRUCTURE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub structure_ok: bool,
    /// Smallest singular value of the Hörmander product at `(0, ξ)`.
    pub h1_lambda: f64,
    /// Supremum over the probes of `|∂B|` and `Σ_i |∂σ^i|` (Frobenius norms).
    pub h2_box_bound: f64,
    /// Forbidden dependencies found, as 1-based `(j, l)`: `B_j` reads `x_l`.
    pub violations: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct H1Check {
    pub lambda: f64,
    pub product: DMatrix<f64>,
}

impl H1Check {
    pub fn holds(&self) -> bool {
        self.lambda >= H1_THRESHOLD
    }
}

/// Uniform probe points in the box `ξ ± radius`.
pub fn probe_points(sys: &ChainedSystem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = sys.meta().probe_radius;
    (0..count)
        .map(|_| {
            sys.xi()
                .iter()
                .map(|c| {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    c + radius * (2.0 * u - 1.0)
                })
                .collect()
        })
        .collect()
}

/// Checks the chain dependence structure at the probes and samples first
/// derivatives to bound the coefficients locally.
pub fn validate_structure(sys: &ChainedSystem, probes: &[Vec<f64>]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(invalid("at least one probe point is required"));
    }
    let (n, dim) = (sys.n(), sys.dim());
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let mut deriv_sup: f64 = 0.0;
    let mut sigma_sup: f64 = 0.0;
    for p in probes {
        if p.len() != dim {
            return Err(Error::Dimension {
                what: "probe point",
                expected: dim,
                got: p.len(),
            });
        }
        // (j, l) 0-based: B_j may read x_{j-1}..x_{n-1} only.
        for j in 2..n {
            for l in 0..j - 1 {
                let jac = finite_difference_block(sys.drift_block(j), l, 0.0, p)?;
                if jac.iter().any(|v| v.abs() > STRUCTURE_TOLERANCE) && !violations.contains(&(j + 1, l + 1)) {
                    violations.push((j + 1, l + 1));
                }
            }
        }
        let mut db = 0.0;
        for j in 0..n {
            for l in 0..n {
                let jac = jacobian_block(sys.drift_block(j), l, 0.0, p)?;
                db += jac.norm_squared();
            }
        }
        let mut ds = 0.0;
        for l in 0..n {
            ds += jacobian_block(sys.sigma_field(), l, 0.0, p)?.norm_squared();
        }
        deriv_sup = deriv_sup.max(libm::sqrt(db)).max(libm::sqrt(ds));
        sigma_sup = sigma_sup.max(sys.sigma(0.0, p).norm());
    }
    for (j, l) in &violations {
        warnings.push(format!("B_{j} depends on x_{l}, which the chain structure forbids"));
    }

    // Growth probe: compare sup |σ| on the box with the box dilated tenfold.
    let wide: Vec<Vec<f64>> = probes
        .iter()
        .map(|p| p.iter().zip(sys.xi()).map(|(v, c)| c + 10.0 * (v - c)).collect())
        .collect();
    let wide_sup = wide.iter().map(|p| sys.sigma(0.0, p).norm()).fold(0.0, f64::max);
    if sigma_sup > 0.0 && wide_sup > 1.5 * sigma_sup {
        warnings.push(format!(
            "diffusion coefficient grows with |x| (sup {sigma_sup:.4e} on the box, {wide_sup:.4e} on the dilated box): unbounded, only the lognormal-type bounds can apply"
        ));
    }
    match sys.meta().regularity {
        Regularity::Lognormal => warnings.push(String::from(
            "declared regularity: first-block coefficients are diag(y_1) times bounded fields",
        )),
        Regularity::Bounded | Regularity::BoundedDiffusion => {}
    }
    warnings.push(format!(
        "derivative bounds are sampled on the box of radius {} around the initial point, not certified globally",
        sys.meta().probe_radius
    ));

    let h1 = check_h1(sys)?;
    if !h1.holds() {
        warnings.push(format!("weak Hörmander condition fails at the initial point: lambda = {:.3e}", h1.lambda));
    }
    Ok(ValidationReport {
        structure_ok: violations.is_empty(),
        h1_lambda: h1.lambda,
        h2_box_bound: deriv_sup,
        violations,
        warnings,
    })
}

/// Diagonal blocks `J_{x_{j-1}} B_j ··· J_{x_1} B_2 σ(0, ξ)`, `j = 1..n`.
pub fn h1_blocks(sys: &ChainedSystem) -> Result<Vec<DMatrix<f64>>> {
    let xi = sys.xi();
    let mut acc = sys.sigma(0.0, xi);
    if let Some(k) = acc.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "diffusion at the initial point",
            coordinate: k,
        });
    }
    let mut blocks = Vec::with_capacity(sys.n());
    blocks.push(acc.clone());
    for j in 1..sys.n() {
        let jac = jacobian_block(sys.drift_block(j), j - 1, 0.0, xi)?;
        acc = jac * acc;
        blocks.push(acc.clone());
    }
    Ok(blocks)
}

/// Smallest singular value of the Hörmander product at `(0, ξ)`.
pub fn check_h1(sys: &ChainedSystem) -> Result<H1Check> {
    let product = h1_blocks(sys)?.pop().expect("n >= 1");
    let lambda = smallest_singular_value(&product);
    Ok(H1Check { lambda, product })
}

pub(crate) fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
}
