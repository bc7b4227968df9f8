//! Kernel density estimates of the rescaled law, tail envelopes and the exact
//! linear-model heat kernel.

mod decay;
mod envelope;
mod kde;
mod moments;
mod tails;

pub use decay::{diagonal_decay, expm, gauss_legendre, DecayRow, DecayTable, LinearGaussianLaw};
pub use envelope::{fit_envelope, EnvelopeFit, Regime, MIN_TAIL_COUNT, MIN_TAIL_LEVELS, TAIL_P_MAX};
pub use kde::{estimate_density, BandwidthRule, DensityEstimate, KdeDerivatives, MIN_RELIABLE_SAMPLES};
pub use moments::{moment_norm, moment_slope};
pub use tails::{chi_radii, quantile_levels, sup_radii, TailCurve, BAND_Z};
