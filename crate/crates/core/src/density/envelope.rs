use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::tails::TailCurve;
use crate::error::{Error, Result};

/// Largest exceedance probability counted as tail.
pub const TAIL_P_MAX: f64 = 1e-2;
/// Smallest exceedance count a tail level must carry.
pub const MIN_TAIL_COUNT: usize = 50;
/// Minimum number of tail levels for a fit.
pub const MIN_TAIL_LEVELS: usize = 8;

const EXPONENT_RANGE: (f64, f64) = (0.1, 80.0);

/// Shape of the tail bound being fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `C / (1 + a^p)`.
    Polynomial,
    /// `A exp(-a² / c)`.
    Gaussian,
    /// `A exp(-log²(a √t) / (c t))`.
    Lognormal,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Polynomial => "polynomial",
            Regime::Gaussian => "gaussian",
            Regime::Lognormal => "lognormal",
        }
    }
}

/// A tail envelope fitted on the lower half of the tail and checked on all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFit {
    pub regime: Regime,
    pub t: f64,
    /// Prefactor of the envelope after lifting it over the calibration levels.
    pub amplitude: f64,
    /// Decay scale `c` (Gaussian, lognormal) or the fitted exponent `p` (polynomial).
    pub rate: f64,
    /// Single constant usable in `C exp(-f(a) / C)` form: `max(amplitude, rate)`.
    /// Equal to `amplitude` in the polynomial regime.
    pub constant: f64,
    pub levels: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub lower: Vec<f64>,
    pub envelope: Vec<f64>,
    pub calibration_levels: usize,
    /// Smallest level at which the envelope dominates the empirical tail.
    pub knee: Option<f64>,
    pub passed: bool,
}

impl EnvelopeFit {
    pub fn envelope_at(&self, a: f64) -> f64 {
        match self.regime {
            Regime::Polynomial => self.amplitude / (1.0 + libm::pow(a, self.rate)),
            _ => self.amplitude * libm::exp(-feature(self.regime, a, self.t) / self.rate),
        }
    }
}

fn feature(regime: Regime, a: f64, t: f64) -> f64 {
    match regime {
        Regime::Lognormal => {
            let l = libm::log(a * libm::sqrt(t));
            l * l / t
        }
        _ => a * a,
    }
}

/// Fits an envelope of the given shape to the tail part of `curve`.
///
/// Tail levels have exceedance probability at most [`TAIL_P_MAX`] and at least
/// [`MIN_TAIL_COUNT`] exceedances; the lognormal shape further needs `a √t > 1`.
/// The first half of them calibrates the fit, whose prefactor is then raised
/// until it dominates every calibration point. The fit passes when, from the
/// knee on, the lower confidence band never exceeds the envelope.
pub fn fit_envelope(curve: &TailCurve, regime: Regime, t: f64) -> Result<EnvelopeFit> {
    if curve.counts.iter().all(|k| *k == 0) {
        return Err(Error::InsufficientData("all tail counts are zero".into()));
    }
    let probs = curve.probabilities();
    let tail: Vec<usize> = (0..curve.len())
        .filter(|&i| {
            probs[i] <= TAIL_P_MAX
                && curve.counts[i] >= MIN_TAIL_COUNT
                && (regime != Regime::Lognormal || curve.levels[i] * libm::sqrt(t) > 1.0)
        })
        .collect();
    if tail.len() < MIN_TAIL_LEVELS {
        return Err(Error::InsufficientData(alloc::format!(
            "{} tail levels available, {MIN_TAIL_LEVELS} needed",
            tail.len()
        )));
    }
    let levels: Vec<f64> = tail.iter().map(|&i| curve.levels[i]).collect();
    let log_p: Vec<f64> = tail.iter().map(|&i| libm::log(probs[i])).collect();
    let calibration = tail.len() / 2;
    let (cal_a, cal_p) = (&levels[..calibration], &log_p[..calibration]);

    let (amplitude, rate) = match regime {
        Regime::Polynomial => {
            let p = best_exponent(cal_a, cal_p);
            let lift = cal_a
                .iter()
                .zip(cal_p)
                .map(|(a, lp)| lp + libm::log1p(libm::pow(*a, p)))
                .fold(f64::NEG_INFINITY, f64::max);
            (libm::exp(lift), p)
        }
        _ => {
            let f: Vec<f64> = cal_a.iter().map(|a| feature(regime, *a, t)).collect();
            let (b0, b1) = least_squares_line(&f, cal_p)?;
            let lift = f
                .iter()
                .zip(cal_p)
                .map(|(fi, lp)| lp - (b0 - b1 * fi))
                .fold(f64::NEG_INFINITY, f64::max);
            (libm::exp(b0 + lift), 1.0 / b1)
        }
    };
    let mut fit = EnvelopeFit {
        regime,
        t,
        amplitude,
        rate,
        constant: match regime {
            Regime::Polynomial => amplitude,
            _ => amplitude.max(rate),
        },
        probabilities: tail.iter().map(|&i| probs[i]).collect(),
        lower: tail.iter().map(|&i| curve.lower[i]).collect(),
        envelope: Vec::new(),
        levels,
        calibration_levels: calibration,
        knee: None,
        passed: false,
    };
    fit.envelope = fit.levels.iter().map(|a| fit.envelope_at(*a)).collect();
    let knee = (0..fit.levels.len()).find(|&i| fit.envelope[i] >= fit.probabilities[i]);
    fit.knee = knee.map(|i| fit.levels[i]);
    fit.passed = rate > 0.0 && knee.is_some_and(|k| (k..fit.levels.len()).all(|i| fit.lower[i] <= fit.envelope[i]));
    Ok(fit)
}

// log P = b0 - b1 f
fn least_squares_line(f: &[f64], log_p: &[f64]) -> Result<(f64, f64)> {
    let x = DMatrix::from_fn(f.len(), 2, |r, c| if c == 0 { 1.0 } else { -f[r] });
    let y = DVector::from_column_slice(log_p);
    let normal = x.transpose() * &x;
    let rhs = x.transpose() * y;
    let sol = normal
        .cholesky()
        .ok_or_else(|| Error::InsufficientData("tail levels do not determine a slope".into()))?
        .solve(&rhs);
    Ok((sol[0], sol[1]))
}

fn exponent_rss(a: &[f64], log_p: &[f64], p: f64) -> f64 {
    let r: Vec<f64> = a.iter().zip(log_p).map(|(a, lp)| lp + libm::log1p(libm::pow(*a, p))).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|v| (v - mean) * (v - mean)).sum()
}

// Grid scan followed by golden-section refinement.
fn best_exponent(a: &[f64], log_p: &[f64]) -> f64 {
    let (lo, hi) = EXPONENT_RANGE;
    let grid = 400;
    let at = |k: usize| lo * libm::pow(hi / lo, k as f64 / grid as f64);
    let best = (0..=grid)
        .min_by(|&i, &j| exponent_rss(a, log_p, at(i)).total_cmp(&exponent_rss(a, log_p, at(j))))
        .unwrap_or(0);
    let (mut x0, mut x1) = (at(best.saturating_sub(1)), at((best + 1).min(grid)));
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    for _ in 0..80 {
        let c = x1 - g * (x1 - x0);
        let d = x0 + g * (x1 - x0);
        if exponent_rss(a, log_p, c) < exponent_rss(a, log_p, d) {
            x1 = d;
        } else {
            x0 = c;
        }
    }
    0.5 * (x0 + x1)
}
