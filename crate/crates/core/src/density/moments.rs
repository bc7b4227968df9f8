use crate::error::{Error, Result};
use crate::mc::SampleBatch;
use crate::stats::{linear_fit, LinearFit};

/// `E[|X^{(j)}_t - θ^{(j)}_t|^p]^{1/p}` where `X^{(j)}` stacks blocks `j..n`
/// (`j` 0-based).
pub fn moment_norm(batch: &SampleBatch, theta_t: &[f64], j: usize, p: f64) -> Result<f64> {
    let (n, d, dim) = (batch.n(), batch.d(), batch.dim());
    if j >= n {
        return Err(Error::Dimension {
            what: "chain block",
            expected: n,
            got: j + 1,
        });
    }
    if theta_t.len() != dim {
        return Err(Error::Dimension {
            what: "theta",
            expected: dim,
            got: theta_t.len(),
        });
    }
    if !(p > 0.0) {
        return Err(crate::error::invalid("moment order must be positive"));
    }
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let sum: f64 = batch
        .terminal()
        .chunks_exact(dim)
        .map(|x| {
            let sq: f64 = (j * d..dim).map(|i| (x[i] - theta_t[i]).powi(2)).sum();
            libm::pow(libm::sqrt(sq), p)
        })
        .sum();
    Ok(libm::pow(sum / batch.len() as f64, 1.0 / p))
}

/// Log-log slope of moment norms against time.
pub fn moment_slope(times: &[f64], norms: &[f64]) -> Result<LinearFit> {
    if times.iter().chain(norms).any(|v| !(*v > 0.0)) {
        return Err(crate::error::invalid("times and norms must be positive for a log-log fit"));
    }
    let lt: alloc::vec::Vec<f64> = times.iter().map(|t| libm::log(*t)).collect();
    let ln: alloc::vec::Vec<f64> = norms.iter().map(|v| libm::log(*v)).collect();
    linear_fit(&lt, &ln)
}
