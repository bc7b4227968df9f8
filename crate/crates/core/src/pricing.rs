//! Correlated local-volatility baskets as two-level chains, and at-the-money
//! Asian basket prices.
//!
//! The basket `dS^i = r_i S^i dt + S^i Σ_i(t, S) (L dW)^i` becomes
//! `X = (S, w̄ ∫S ds)` where `w̄` has `wᵀ` as its first row, so the first
//! coordinate of the second block is `α_t = ∫ wᵀ S ds`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{invalid, Error, Result};
use crate::field::{row_major, CoefficientField};
use crate::limit::LimitModel;
use crate::mc::SampleBatch;
use crate::model::{ito_correction, ChainedSystem, ModelMeta, Regularity};
use crate::stats::Estimate;

/// Local volatility `Σ(t, s)`, one entry per asset.
#[derive(Debug, Clone)]
pub enum LocalVol {
    Constant(Vec<f64>),
    /// A vector field evaluated at `(t, s)` with `s ∈ R^d`.
    Field(CoefficientField),
}

impl LocalVol {
    fn eval(&self, t: f64, s: &[f64], out: &mut [f64]) {
        match self {
            LocalVol::Constant(v) => out.copy_from_slice(v),
            LocalVol::Field(f) => f.eval(t, s, out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasketSpec {
    pub s0: Vec<f64>,
    pub r: Vec<f64>,
    pub rho: DMatrix<f64>,
    pub w: Vec<f64>,
    pub vol: LocalVol,
    pub maturity: f64,
}

/// Validated basket with the Cholesky factor of its correlation.
#[derive(Debug, Clone)]
pub struct Basket {
    spec: BasketSpec,
    chol: DMatrix<f64>,
    vol0: Vec<f64>,
}

const CORRELATION_TOLERANCE: f64 = 1e-12;

impl Basket {
    pub fn new(spec: BasketSpec) -> Result<Self> {
        let d = spec.s0.len();
        if d == 0 {
            return Err(invalid("a basket needs at least one asset"));
        }
        for (what, len) in [("rates", spec.r.len()), ("weights", spec.w.len())] {
            if len != d {
                return Err(Error::Dimension { what, expected: d, got: len });
            }
        }
        if spec.rho.nrows() != d || spec.rho.ncols() != d {
            return Err(Error::Dimension {
                what: "correlation matrix",
                expected: d,
                got: spec.rho.nrows(),
            });
        }
        if let LocalVol::Constant(v) = &spec.vol {
            if v.len() != d {
                return Err(Error::Dimension {
                    what: "volatilities",
                    expected: d,
                    got: v.len(),
                });
            }
        }
        if spec.s0.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("initial prices must be positive"));
        }
        if spec.w.iter().all(|w| *w == 0.0) || spec.w.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights must be finite and not all zero"));
        }
        if !(spec.maturity > 0.0) || !spec.maturity.is_finite() {
            return Err(invalid("maturity must be positive"));
        }
        let rho = &spec.rho;
        for i in 0..d {
            if (rho[(i, i)] - 1.0).abs() > CORRELATION_TOLERANCE {
                return Err(Error::InvalidCorrelation(alloc::format!("diagonal entry {} is {}", i + 1, rho[(i, i)])));
            }
            for j in 0..i {
                if (rho[(i, j)] - rho[(j, i)]).abs() > CORRELATION_TOLERANCE {
                    return Err(Error::InvalidCorrelation(alloc::format!(
                        "entries ({}, {}) and ({}, {}) differ",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        let chol = Cholesky::new(rho.clone())
            .ok_or_else(|| Error::InvalidCorrelation("correlation matrix is not positive definite".into()))?
            .l();
        if chol.diagonal().iter().any(|v| *v <= 1e-10) {
            return Err(Error::InvalidCorrelation("correlation matrix is numerically singular".into()));
        }
        let mut vol0 = vec![0.0; d];
        spec.vol.eval(0.0, &spec.s0, &mut vol0);
        if let Some(asset) = vol0.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NotHypoelliptic { asset: asset + 1 });
        }
        Ok(Self { spec, chol, vol0 })
    }

    pub fn spec(&self) -> &BasketSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.s0.len()
    }

    /// Lower Cholesky factor `L` of the correlation.
    pub fn correlation_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `σ(0, s_0) = diag(s_0) diag(Σ(0, s_0)) L`.
    pub fn sigma0(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, d, |i, k| self.spec.s0[i] * self.vol0[i] * self.chol[(i, k)])
    }

    /// `wᵀ s_0`, the at-the-money strike.
    pub fn atm_strike(&self) -> f64 {
        self.spec.w.iter().zip(&self.spec.s0).map(|(w, s)| w * s).sum()
    }

    /// `wᵀ σσᵀ(0, s_0) w`.
    fn w_sigma_sq(&self) -> f64 {
        let s = self.sigma0();
        let w = nalgebra::DVector::from_column_slice(&self.spec.w);
        (s.transpose() * w).norm_squared()
    }
}

/// Completion of `wᵀ` to a nonsingular `d x d` matrix: `wᵀ` on top, then the
/// standard basis vectors except the one at the largest `|w_k|`.
pub fn weight_completion(w: &[f64]) -> DMatrix<f64> {
    let d = w.len();
    let pivot = (0..d).fold(0, |best, k| if w[k].abs() > w[best].abs() { k } else { best });
    let mut wbar = DMatrix::zeros(d, d);
    for (k, v) in w.iter().enumerate() {
        wbar[(0, k)] = *v;
    }
    let mut row = 1;
    for k in (0..d).filter(|&k| k != pivot) {
        wbar[(row, k)] = 1.0;
        row += 1;
    }
    wbar
}

/// Maps the basket to an `n = 2` chain with the default weight completion.
pub fn to_chained_system(basket: &Basket) -> Result<ChainedSystem> {
    to_chained_system_with(basket, weight_completion(&basket.spec.w))
}

/// Maps the basket to an `n = 2` chain using the completion `wbar`, whose first
/// row must be `wᵀ`.
pub fn to_chained_system_with(basket: &Basket, wbar: DMatrix<f64>) -> Result<ChainedSystem> {
    let d = basket.d();
    let spec = &basket.spec;
    if wbar.nrows() != d || wbar.ncols() != d {
        return Err(Error::Dimension {
            what: "weight completion",
            expected: d,
            got: wbar.nrows(),
        });
    }
    if (0..d).any(|k| wbar[(0, k)] != spec.w[k]) {
        return Err(invalid("first row of the weight completion must equal w"));
    }
    if wbar.determinant().abs() < 1e-12 {
        return Err(invalid("weight completion is singular"));
    }

    let chol = row_major(&basket.chol);
    let sigma = match &spec.vol {
        LocalVol::Constant(v) => {
            let v = v.clone();
            let (c_eval, c_jac) = (chol.clone(), chol.clone());
            let v_jac = v.clone();
            CoefficientField::matrix(d, move |_, x, out| {
                for i in 0..d {
                    for k in 0..d {
                        out[i * d + k] = x[i] * v[i] * c_eval[i * d + k];
                    }
                }
            })
            .with_jacobian(move |_, _, block, out| {
                out.fill(0.0);
                if block == 0 {
                    for i in 0..d {
                        for k in 0..d {
                            out[(i * d + k) * d + i] = v_jac[i] * c_jac[i * d + k];
                        }
                    }
                }
            })
        }
        LocalVol::Field(field) => {
            let field = field.clone();
            CoefficientField::matrix(d, move |t, x, out| {
                let mut vol = vec![0.0; d];
                field.eval(t, &x[..d], &mut vol);
                for i in 0..d {
                    for k in 0..d {
                        out[i * d + k] = x[i] * vol[i] * chol[i * d + k];
                    }
                }
            })
        }
    };

    let rates = spec.r.clone();
    let b1 = match &spec.vol {
        LocalVol::Constant(v) => {
            let strat: Vec<f64> = rates.iter().zip(v).map(|(r, v)| r - 0.5 * v * v).collect();
            let strat_jac = strat.clone();
            CoefficientField::vector(d, move |_, x, out| {
                for i in 0..d {
                    out[i] = strat[i] * x[i];
                }
            })
            .with_jacobian(move |_, _, block, out| {
                out.fill(0.0);
                if block == 0 {
                    for i in 0..d {
                        out[i * d + i] = strat_jac[i];
                    }
                }
            })
        }
        LocalVol::Field(_) => {
            let sigma = sigma.clone();
            CoefficientField::vector(d, move |t, x, out| match ito_correction(&sigma, t, x) {
                Ok(c) => {
                    for i in 0..d {
                        out[i] = rates[i] * x[i] - c[i];
                    }
                }
                Err(_) => out.fill(f64::NAN),
            })
        }
    };

    let w_flat = row_major(&wbar);
    let w_jac = w_flat.clone();
    let b2 = CoefficientField::vector(d, move |_, x, out| {
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|k| w_flat[r * d + k] * x[k]).sum();
        }
    })
    .with_jacobian(move |_, _, block, out| {
        if block == 0 {
            out.copy_from_slice(&w_jac);
        } else {
            out.fill(0.0);
        }
    });

    let mut xi = spec.s0.clone();
    xi.extend(core::iter::repeat_n(0.0, d));
    let probe = 0.5 * spec.s0.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ChainedSystem::new(2, d, xi, vec![b1, b2], sigma, spec.maturity)?.with_meta(ModelMeta {
        key: String::from("basket"),
        regularity: Regularity::Lognormal,
        probe_radius: probe,
        linear: None,
    }))
}

/// Registry constructor for a validated basket specification.
pub fn local_vol_basket(spec: BasketSpec) -> Result<ChainedSystem> {
    to_chained_system(&Basket::new(spec)?)
}

/// Short-maturity at-the-money price `√(t wᵀσσᵀ(0, s_0)w / (6π))`, the same
/// for calls and puts.
pub fn atm_asymptotic_price(basket: &Basket, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("maturity must be positive"));
    }
    Ok(libm::sqrt(t * basket.w_sigma_sq() / (6.0 * core::f64::consts::PI)))
}

/// Variance of the limit law of `β_t = t^{-1/2}(α_t / t - wᵀ s_0)` and the
/// limit covariance `AQAᵀ` evaluated by two routes.
#[derive(Debug, Clone)]
pub struct LimitVariance {
    /// `wᵀσσᵀw / 3`.
    pub variance: f64,
    /// `[[σσᵀ, σσᵀw̄ᵀ/2], [w̄σσᵀ/2, w̄σσᵀw̄ᵀ/3]]`.
    pub block_formula: DMatrix<f64>,
    /// `A Q Aᵀ` from the chained system.
    pub generic: DMatrix<f64>,
}

impl LimitVariance {
    pub fn max_abs_difference(&self) -> f64 {
        (&self.block_formula - &self.generic).abs().max()
    }
}

pub fn limit_variance(basket: &Basket) -> Result<LimitVariance> {
    let wbar = weight_completion(&basket.spec.w);
    limit_variance_with(basket, wbar)
}

pub fn limit_variance_with(basket: &Basket, wbar: DMatrix<f64>) -> Result<LimitVariance> {
    let d = basket.d();
    let s = basket.sigma0();
    let ss = &s * s.transpose();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&ss);
    block.view_mut((0, d), (d, d)).copy_from(&(&ss * wbar.transpose() * 0.5));
    block.view_mut((d, 0), (d, d)).copy_from(&(&wbar * &ss * 0.5));
    block
        .view_mut((d, d), (d, d))
        .copy_from(&(&wbar * &ss * wbar.transpose() / 3.0));
    let sys = to_chained_system_with(basket, wbar)?;
    let generic = LimitModel::from_system(&sys)?.covariance().clone();
    Ok(LimitVariance {
        variance: basket.w_sigma_sq() / 3.0,
        block_formula: block,
        generic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

/// `E[(α_t / t - K)^+]` or the put analogue from a batch simulated on the
/// mapped system, optionally discounted at `discount_rate`.
pub fn price_from_batch(
    batch: &SampleBatch,
    strike: f64,
    kind: OptionKind,
    discount_rate: Option<f64>,
) -> Result<Estimate> {
    if batch.n() != 2 {
        return Err(invalid("basket prices need a two-level chain"));
    }
    if batch.len() < 2 {
        return Err(Error::InsufficientData("at least two paths are needed for a price".into()));
    }
    let t = batch.config().t;
    let d = batch.d();
    let discount = discount_rate.map_or(1.0, |r| libm::exp(-r * t));
    let payoff = batch.terminal().chunks_exact(2 * d).map(|row| {
        let avg = row[d] / t;
        discount
            * match kind {
                OptionKind::Call => (avg - strike).max(0.0),
                OptionKind::Put => (strike - avg).max(0.0),
            }
    });
    Ok(Estimate::from_terms(payoff))
}

/// `β_t = t^{-1/2}(α_t / t - wᵀ s_0)` for every path.
pub fn beta_samples(batch: &SampleBatch, basket: &Basket) -> Vec<f64> {
    let t = batch.config().t;
    let d = batch.d();
    let k = basket.atm_strike();
    batch
        .terminal()
        .chunks_exact(2 * d)
        .map(|row| (row[d] / t - k) / libm::sqrt(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(vol: f64, r: f64) -> Basket {
        Basket::new(BasketSpec {
            s0: vec![100.0],
            r: vec![r],
            rho: DMatrix::identity(1, 1),
            w: vec![1.0],
            vol: LocalVol::Constant(vec![vol]),
            maturity: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn single_asset_price() {
        let p = atm_asymptotic_price(&single(0.2, 0.0), 0.25).unwrap();
        assert!((p - 20.0 * libm::sqrt(0.25 / (6.0 * core::f64::consts::PI))).abs() < 1e-12);
        assert!((p - 2.3033).abs() < 1e-4);
    }

    #[test]
    fn completion_is_nonsingular() {
        let wbar = weight_completion(&[0.0, 2.0, -1.0]);
        assert!(wbar.determinant().abs() > 0.0);
        assert_eq!(wbar.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 2.0, -1.0]);
    }

    #[test]
    fn rejects_bad_correlation() {
        let mut spec = single(0.2, 0.0).spec.clone();
        spec.rho = DMatrix::from_element(1, 1, 0.5);
        assert!(matches!(Basket::new(spec), Err(Error::InvalidCorrelation(_))));
    }

    #[test]
    fn rejects_zero_volatility() {
        let mut spec = single(0.2, 0.0).spec.clone();
        spec.vol = LocalVol::Constant(vec![0.0]);
        assert!(matches!(Basket::new(spec), Err(Error::NotHypoelliptic { asset: 1 })));
    }
}
