use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::flow::rescale;
use crate::mc::SampleBatch;
use crate::stats::wilson;

/// Default width of the confidence bands, in standard deviations.
pub const BAND_Z: f64 = 3.0;

/// Empirical survival function `P(r ≥ a)` on a grid of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub levels: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TailCurve {
    /// Builds the curve from radii, which need not be sorted.
    pub fn new(radii: &[f64], levels: &[f64], z: f64) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InsufficientData("no samples for a tail curve".into()));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) || levels.iter().any(|a| !(*a >= 0.0)) {
            return Err(invalid("tail levels must be nonnegative and increasing"));
        }
        let sorted = sorted_radii(radii);
        let total = sorted.len();
        let counts: Vec<usize> = levels.iter().map(|a| count_at_least(&sorted, *a)).collect();
        let (lower, upper) = counts.iter().map(|k| wilson(*k, total, z)).unzip();
        Ok(Self {
            levels: levels.to_vec(),
            counts,
            total,
            lower,
            upper,
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|k| *k as f64 / self.total as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn sorted_radii(radii: &[f64]) -> Vec<f64> {
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

fn count_at_least(sorted: &[f64], a: f64) -> usize {
    sorted.len() - sorted.partition_point(|r| *r < a)
}

/// `|χ_t|` for every path of the batch.
pub fn chi_radii(batch: &SampleBatch, theta_t: &[f64]) -> Result<Vec<f64>> {
    let chi = rescale(batch.config().t, batch.n(), batch.d(), theta_t, batch.terminal())?;
    Ok(chi
        .chunks_exact(batch.dim())
        .map(|r| libm::sqrt(r.iter().map(|v| v * v).sum()))
        .collect())
}

/// `sup_s |X^{(j)}_s - θ^{(j)}_s| / t^{j-1/2}` for block `j` (0-based) of a
/// batch recorded with running sups.
pub fn sup_radii(batch: &SampleBatch, j: usize) -> Result<Vec<f64>> {
    let sup = batch
        .sup()
        .ok_or_else(|| invalid("sup tails need a batch recorded with running sups"))?;
    let n = batch.n();
    if j >= n {
        return Err(Error::Dimension {
            what: "chain block",
            expected: n,
            got: j + 1,
        });
    }
    let scale = libm::pow(batch.config().t, j as f64 + 0.5);
    Ok(sup.chunks_exact(n).map(|r| r[j] / scale).collect())
}

/// Levels at empirical quantiles whose exceedance probabilities are
/// log-spaced from `p_max` down to `min_count / N`.
pub fn quantile_levels(radii: &[f64], count: usize, p_max: f64, min_count: usize) -> Result<Vec<f64>> {
    let total = radii.len();
    let p_min = min_count as f64 / total as f64;
    if count < 2 || !(p_max > p_min) || p_max > 1.0 {
        return Err(Error::InsufficientData(alloc::format!(
            "{total} samples cannot resolve exceedance probabilities between {p_max} and {min_count}/N"
        )));
    }
    let sorted = sorted_radii(radii);
    let (lo, hi) = (libm::log(p_min), libm::log(p_max));
    let mut levels: Vec<f64> = (0..count)
        .map(|i| {
            let p = libm::exp(hi + (lo - hi) * i as f64 / (count - 1) as f64);
            let k = (libm::round(p * total as f64) as usize).clamp(1, total);
            sorted[total - k]
        })
        .collect();
    levels.dedup();
    Ok(levels)
}
