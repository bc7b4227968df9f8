use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{ChainedSystem, LinearDrift, ModelMeta, Regularity};
use crate::error::{invalid, Result};
use crate::field::{row_major, CoefficientField};

/// Linear Kolmogorov chain: `B_1 = 0`, `B_j(x) = C_j x_{j-1}`, constant `σ`.
///
/// `couplings[j - 2]` is `C_j` for `j = 2..n`.
pub fn kolmogorov_linear(
    n: usize,
    d: usize,
    sigma: DMatrix<f64>,
    couplings: Vec<DMatrix<f64>>,
    xi: Vec<f64>,
) -> Result<ChainedSystem> {
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(invalid("sigma must be d x d"));
    }
    if couplings.len() + 1 != n {
        return Err(invalid("need n - 1 coupling matrices"));
    }
    if couplings.iter().any(|c| c.nrows() != d || c.ncols() != d) {
        return Err(invalid("couplings must be d x d"));
    }
    let mut drift = Vec::with_capacity(n);
    drift.push(CoefficientField::constant_vector(vec![0.0; d]));
    let mut matrix = DMatrix::zeros(n * d, n * d);
    for (k, c) in couplings.iter().enumerate() {
        let j = k + 1;
        let src = j - 1;
        matrix.view_mut((j * d, src * d), (d, d)).copy_from(c);
        let flat = row_major(c);
        let flat_j = flat.clone();
        let field = CoefficientField::vector(d, move |_, x, out| {
            let xs = &x[src * d..(src + 1) * d];
            for (r, o) in out.iter_mut().enumerate() {
                *o = (0..d).map(|k| flat[r * d + k] * xs[k]).sum();
            }
        })
        .with_jacobian(move |_, _, block, out| {
            if block == src {
                out.copy_from_slice(&flat_j);
            } else {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        drift.push(field);
    }
    let sigma_field = CoefficientField::constant_matrix(&sigma);
    let sys = ChainedSystem::new(n, d, xi, drift, sigma_field, 1.0)?;
    Ok(sys.with_meta(ModelMeta {
        key: String::from("kolmogorov"),
        regularity: Regularity::BoundedDiffusion,
        probe_radius: 1.0,
        linear: Some(LinearDrift { matrix, sigma }),
    }))
}

/// Scalar Kolmogorov chain of length `n` started at the origin, `σ = 1`,
/// unit couplings.
pub fn kolmogorov(n: usize) -> ChainedSystem {
    kolmogorov_linear(
        n,
        1,
        DMatrix::identity(1, 1),
        vec![DMatrix::identity(1, 1); n.saturating_sub(1)],
        vec![0.0; n],
    )
    .expect("scalar Kolmogorov chain is well formed")
}

/// Arithmetic Asian option under Black-Scholes, `dS = rS dt + vol S dW`,
/// `dA = S dt`, started at `(s0, 0)`.
///
/// The SDE above is the Itô form; the stored first-block drift is the
/// Stratonovich one, `(r - vol²/2) y_1`.
pub fn bs_asian(s0: f64, r: f64, vol: f64) -> ChainedSystem {
    let strat = r - 0.5 * vol * vol;
    let b1 = CoefficientField::vector(1, move |_, x, out| out[0] = strat * x[0])
        .with_jacobian(move |_, _, block, out| out[0] = if block == 0 { strat } else { 0.0 });
    let b2 = CoefficientField::vector(1, |_, x, out| out[0] = x[0])
        .with_jacobian(|_, _, block, out| out[0] = if block == 0 { 1.0 } else { 0.0 });
    let sigma = CoefficientField::matrix(1, move |_, x, out| out[0] = vol * x[0])
        .with_jacobian(move |_, _, block, out| out[0] = if block == 0 { vol } else { 0.0 });
    ChainedSystem::new(2, 1, vec![s0, 0.0], vec![b1, b2], sigma, 1.0)
        .expect("Black-Scholes Asian model is well formed")
        .with_meta(ModelMeta {
            key: String::from("bs_asian"),
            regularity: Regularity::Lognormal,
            probe_radius: 0.5 * libm::fabs(s0),
            linear: None,
        })
}

/// `X^1 = ξ_1 + W`, `X^2 = ∫ (X^1)^2 ds`, started at `(ξ_1, 0)`.
pub fn quadratic_asian(xi1: f64) -> ChainedSystem {
    let b1 = CoefficientField::constant_vector(vec![0.0]);
    let b2 = CoefficientField::vector(1, |_, x, out| out[0] = x[0] * x[0])
        .with_jacobian(|_, x, block, out| out[0] = if block == 0 { 2.0 * x[0] } else { 0.0 });
    let sigma = CoefficientField::constant_matrix(&DMatrix::identity(1, 1));
    ChainedSystem::new(2, 1, vec![xi1, 0.0], vec![b1, b2], sigma, 1.0)
        .expect("quadratic model is well formed")
        .with_meta(ModelMeta {
            key: String::from("quadratic_asian"),
            regularity: Regularity::Bounded,
            probe_radius: 1.0,
            linear: None,
        })
}
