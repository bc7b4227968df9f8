//! Builds models from their configuration entries.

use hypochain_core::model::{bs_asian, kolmogorov_linear, quadratic_asian};
use hypochain_core::pricing::{to_chained_system, Basket, BasketSpec, LocalVol};
use hypochain_core::ChainedSystem;
use nalgebra::DMatrix;

use crate::config::{MatrixParam, ModelConfig};
use crate::error::AppError;

/// A configured model; baskets keep their pricing data.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub system: ChainedSystem,
    pub basket: Option<Basket>,
}

fn matrix(param: &MatrixParam, d: usize, field: &str) -> Result<DMatrix<f64>, AppError> {
    match param {
        MatrixParam::Scalar(c) => Ok(DMatrix::identity(d, d) * *c),
        MatrixParam::Rows(rows) => rows_to_matrix(rows, d, field),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], d: usize, field: &str) -> Result<DMatrix<f64>, AppError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(AppError::Config(format!("model.{field}: expected a {d} x {d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn build(model: &ModelConfig) -> Result<BuiltModel, AppError> {
    match model {
        ModelConfig::Kolmogorov {
            n,
            d,
            sigma,
            couplings,
            xi,
        } => {
            let (n, d) = (*n, *d);
            if n == 0 || d == 0 {
                return Err(AppError::Config("model.n and model.d must be positive".into()));
            }
            let sigma = match sigma {
                Some(s) => matrix(s, d, "sigma")?,
                None => DMatrix::identity(d, d),
            };
            let couplings = match couplings {
                Some(cs) => {
                    if cs.len() + 1 != n {
                        return Err(AppError::Config(format!(
                            "model.couplings: expected {} matrices, got {}",
                            n - 1,
                            cs.len()
                        )));
                    }
                    cs.iter()
                        .enumerate()
                        .map(|(k, c)| matrix(c, d, &format!("couplings[{k}]")))
                        .collect::<Result<Vec<_>, _>>()?
                }
                None => vec![DMatrix::identity(d, d); n - 1],
            };
            let xi = xi.clone().unwrap_or_else(|| vec![0.0; n * d]);
            if xi.len() != n * d {
                return Err(AppError::Config(format!("model.xi: expected {} entries, got {}", n * d, xi.len())));
            }
            Ok(BuiltModel {
                system: kolmogorov_linear(n, d, sigma, couplings, xi)?,
                basket: None,
            })
        }
        ModelConfig::BsAsian { s0, r, vol } => {
            let basket = Basket::new(BasketSpec {
                s0: vec![*s0],
                r: vec![*r],
                rho: DMatrix::identity(1, 1),
                w: vec![1.0],
                vol: LocalVol::Constant(vec![*vol]),
                maturity: 1.0,
            })?;
            Ok(BuiltModel {
                system: bs_asian(*s0, *r, *vol),
                basket: Some(basket),
            })
        }
        ModelConfig::QuadraticAsian { xi1 } => Ok(BuiltModel {
            system: quadratic_asian(*xi1),
            basket: None,
        }),
        ModelConfig::Basket {
            s0,
            r,
            rho,
            w,
            vol,
            maturity,
        } => {
            let d = s0.len();
            let basket = Basket::new(BasketSpec {
                s0: s0.clone(),
                r: r.clone(),
                rho: rows_to_matrix(rho, d, "rho")?,
                w: w.clone(),
                vol: LocalVol::Constant(vol.clone()),
                maturity: *maturity,
            })?;
            Ok(BuiltModel {
                system: to_chained_system(&basket)?,
                basket: Some(basket),
            })
        }
    }
}
