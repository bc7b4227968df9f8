use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::flow::{rescale, ScalingMatrix};
use crate::mc::SampleBatch;
use crate::stats::{column_means, covariance_with_se, Estimate};

/// Below this many samples an estimate carries a high-variance warning.
pub const MIN_RELIABLE_SAMPLES: usize = 10_000;

// Kernel terms with |u|^2 above this are below 1e-17 of the peak and skipped.
const KERNEL_CUTOFF: f64 = 80.0;

/// Bandwidth selection for the Gaussian product kernel.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BandwidthRule {
    /// `h_i = σ_i (4 / ((m + 2) N))^{1/(m+4)}` per coordinate.
    #[default]
    Silverman,
    /// Same factor applied to the Cholesky factor of the sample covariance.
    SilvermanSphered,
    /// Normal-reference rule for the derivative of order `r`, sphered:
    /// `h = (4 / ((m + 2r + 2) N))^{1/(m+2r+4)}`.
    NormalReference { derivative_order: u32 },
    /// Per-coordinate bandwidths.
    Fixed(Vec<f64>),
}

/// Gaussian-kernel density estimate of the rescaled variable `χ_t`.
///
/// Samples are stored as `u_i = W χ_i` with `W` the inverse bandwidth matrix, so
/// `p̂(z) = |det W| / N Σ φ(W z - u_i)`.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    m: usize,
    n: usize,
    d: usize,
    t: f64,
    theta: Vec<f64>,
    u: Vec<f64>,
    w: DMatrix<f64>,
    gram: DMatrix<f64>,
    det_w: f64,
    rule: BandwidthRule,
    bandwidth: DMatrix<f64>,
    warnings: Vec<String>,
}

/// KDE value, gradient and Hessian at one point with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDerivatives {
    pub density: Estimate,
    pub gradient: Vec<Estimate>,
    pub hessian: DMatrix<f64>,
    pub hessian_se: DMatrix<f64>,
}

impl DensityEstimate {
    /// Builds an estimate from row-major samples of `χ_t` for a chain with
    /// `n` blocks of size `d`, observed at time `t` around `θ_t`.
    pub fn from_chi(chi: &[f64], n: usize, d: usize, t: f64, theta: &[f64], rule: BandwidthRule) -> Result<Self> {
        let m = n * d;
        if theta.len() != m {
            return Err(Error::Dimension {
                what: "theta",
                expected: m,
                got: theta.len(),
            });
        }
        if chi.len() % m != 0 || chi.is_empty() {
            return Err(Error::InsufficientData(format!("{} values do not form rows of width {m}", chi.len())));
        }
        let count = chi.len() / m;
        if count < 2 {
            return Err(Error::InsufficientData("a density estimate needs at least two samples".into()));
        }
        let mut warnings = Vec::new();
        if count < MIN_RELIABLE_SAMPLES {
            warnings.push(format!(
                "only {count} samples; kernel estimates below {MIN_RELIABLE_SAMPLES} have high variance"
            ));
        }
        let bandwidth = bandwidth_matrix(chi, m, &rule)?;
        let w = bandwidth
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("bandwidth matrix is singular"))?;
        let det_w = w.determinant().abs();
        let mut u = vec![0.0; chi.len()];
        for (src, dst) in chi.chunks_exact(m).zip(u.chunks_exact_mut(m)) {
            mat_vec(&w, src, dst);
        }
        let gram = w.transpose() * &w;
        Ok(Self {
            m,
            n,
            d,
            t,
            theta: theta.to_vec(),
            u,
            w,
            gram,
            det_w,
            rule,
            bandwidth,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn rule(&self) -> &BandwidthRule {
        &self.rule
    }

    /// Bandwidth matrix `H^{1/2}` (lower triangular).
    pub fn bandwidth(&self) -> &DMatrix<f64> {
        &self.bandwidth
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.m {
            return Err(Error::Dimension {
                what: "evaluation point",
                expected: self.m,
                got: z.len(),
            });
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "evaluation point",
                coordinate: k,
            });
        }
        Ok(())
    }

    fn norm_const(&self) -> f64 {
        self.det_w / libm::pow(2.0 * core::f64::consts::PI, 0.5 * self.m as f64)
    }

    /// `p̂_χ(z)`.
    pub fn density_chi(&self, z: &[f64]) -> Result<Estimate> {
        self.check_point(z)?;
        let m = self.m;
        let mut u0 = vec![0.0; m];
        mat_vec(&self.w, z, &mut u0);
        let c = self.norm_const();
        let (mut s, mut s2) = (0.0, 0.0);
        for ui in self.u.chunks_exact(m) {
            let q: f64 = u0.iter().zip(ui).map(|(a, b)| (a - b) * (a - b)).sum();
            if q > KERNEL_CUTOFF {
                continue;
            }
            let f = c * libm::exp(-0.5 * q);
            s += f;
            s2 += f * f;
        }
        Ok(mean_and_se(s, s2, self.len()))
    }

    /// `p̂_χ`, `∇p̂_χ` and `∇²p̂_χ` at `z` from analytic kernel derivatives.
    pub fn derivatives_chi(&self, z: &[f64]) -> Result<KdeDerivatives> {
        self.check_point(z)?;
        let m = self.m;
        let mut u0 = vec![0.0; m];
        mat_vec(&self.w, z, &mut u0);
        let c = self.norm_const();
        let wt = self.w.transpose();
        let mut diff = vec![0.0; m];
        let mut v = vec![0.0; m];
        let (mut s, mut s2) = (0.0, 0.0);
        let mut g = vec![0.0; m];
        let mut g2 = vec![0.0; m];
        let mut h = vec![0.0; m * m];
        let mut h2 = vec![0.0; m * m];
        for ui in self.u.chunks_exact(m) {
            let mut q = 0.0;
            for k in 0..m {
                diff[k] = u0[k] - ui[k];
                q += diff[k] * diff[k];
            }
            if q > KERNEL_CUTOFF {
                continue;
            }
            let f = c * libm::exp(-0.5 * q);
            s += f;
            s2 += f * f;
            mat_vec(&wt, &diff, &mut v);
            for a in 0..m {
                let ga = -f * v[a];
                g[a] += ga;
                g2[a] += ga * ga;
                for b in 0..m {
                    let hab = f * (v[a] * v[b] - self.gram[(a, b)]);
                    h[a * m + b] += hab;
                    h2[a * m + b] += hab * hab;
                }
            }
        }
        let n = self.len();
        let density = mean_and_se(s, s2, n);
        let gradient = g.iter().zip(&g2).map(|(a, b)| mean_and_se(*a, *b, n)).collect();
        let mut hessian = DMatrix::zeros(m, m);
        let mut hessian_se = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                let e = mean_and_se(h[a * m + b], h2[a * m + b], n);
                hessian[(a, b)] = e.value;
                hessian_se[(a, b)] = e.se;
            }
        }
        Ok(KdeDerivatives {
            density,
            gradient,
            hessian,
            hessian_se,
        })
    }

    /// `p̂_t(ξ, y) = t^{-n²d/2} p̂_χ(T_t^{-1}(y - θ_t))`.
    pub fn heat_kernel(&self, y: &[f64]) -> Result<Estimate> {
        let (z, scale) = self.to_chi(y)?;
        let e = self.density_chi(&z)?;
        Ok(Estimate {
            value: e.value * scale,
            se: e.se * scale,
        })
    }

    /// `T_t^{-1}(y - θ_t)` and the Jacobian factor `1 / det T_t`.
    pub fn to_chi(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_point(y)?;
        let scaling = ScalingMatrix::new(self.t, self.n, self.d)?;
        let mut z = vec![0.0; self.m];
        scaling.rescale_point(&self.theta, y, &mut z);
        Ok((z, libm::exp(-scaling.log_det())))
    }

    /// Importance-sampling estimate of `∫ p̂_χ` with a widened Gaussian proposal.
    pub fn integral(&self, points: usize, seed: u64) -> Result<Estimate> {
        if points < 2 {
            return Err(invalid("integration needs at least two points"));
        }
        let m = self.m;
        // Proposal: N(mean, 2 Cov) built from the (bandwidth-scaled) samples.
        let mut chi = vec![0.0; self.u.len()];
        for (src, dst) in self.u.chunks_exact(m).zip(chi.chunks_exact_mut(m)) {
            mat_vec(&self.bandwidth, src, dst);
        }
        let mean = column_means(&chi, m);
        let (cov, _) = covariance_with_se(&chi, m)?;
        let prop = &cov * 2.0 + &self.bandwidth * self.bandwidth.transpose();
        let chol = Cholesky::new(prop).ok_or(Error::NotPositiveDefinite("integration proposal"))?;
        let l = chol.l();
        let log_norm = 0.5 * m as f64 * libm::log(2.0 * core::f64::consts::PI)
            + l.diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut terms = Vec::with_capacity(points);
        for _ in 0..points {
            for v in e.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            mat_vec(&l, &e, &mut z);
            let q: f64 = e.iter().map(|v| v * v).sum();
            for (zk, mk) in z.iter_mut().zip(&mean) {
                *zk += mk;
            }
            let dens = self.density_chi(&z)?.value;
            terms.push(dens * libm::exp(0.5 * q + log_norm));
        }
        Ok(Estimate::from_terms(terms.into_iter()))
    }
}

/// Kernel estimate of `χ_t = T_t^{-1}(X_t - θ_t)` from a simulated batch.
pub fn estimate_density(batch: &SampleBatch, theta_t: &[f64], rule: BandwidthRule) -> Result<DensityEstimate> {
    let t = batch.config().t;
    let chi = rescale(t, batch.n(), batch.d(), theta_t, batch.terminal())?;
    DensityEstimate::from_chi(&chi, batch.n(), batch.d(), t, theta_t, rule)
}

fn bandwidth_matrix(chi: &[f64], m: usize, rule: &BandwidthRule) -> Result<DMatrix<f64>> {
    let count = (chi.len() / m) as f64;
    let mf = m as f64;
    let sphered = |factor: f64| -> Result<DMatrix<f64>> {
        let (cov, _) = covariance_with_se(chi, m)?;
        let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite("sample covariance"))?;
        Ok(chol.l() * factor)
    };
    match rule {
        BandwidthRule::Silverman => {
            let (cov, _) = covariance_with_se(chi, m)?;
            let factor = libm::pow(4.0 / ((mf + 2.0) * count), 1.0 / (mf + 4.0));
            let h: Vec<f64> = (0..m).map(|i| libm::sqrt(cov[(i, i)]) * factor).collect();
            diagonal_bandwidth(&h)
        }
        BandwidthRule::SilvermanSphered => sphered(libm::pow(4.0 / ((mf + 2.0) * count), 1.0 / (mf + 4.0))),
        BandwidthRule::NormalReference { derivative_order } => {
            let r = *derivative_order as f64;
            sphered(libm::pow(4.0 / ((mf + 2.0 * r + 2.0) * count), 1.0 / (mf + 2.0 * r + 4.0)))
        }
        BandwidthRule::Fixed(h) => {
            if h.len() != m {
                return Err(Error::Dimension {
                    what: "fixed bandwidth",
                    expected: m,
                    got: h.len(),
                });
            }
            diagonal_bandwidth(h)
        }
    }
}

fn diagonal_bandwidth(h: &[f64]) -> Result<DMatrix<f64>> {
    if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("bandwidths must be positive and finite"));
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(h)))
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..x.len()).map(|c| a[(r, c)] * x[c]).sum();
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Estimate {
        value: mean,
        se: libm::sqrt(var / nf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_samples(count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2 * count).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn single_sample_fixed_bandwidth_is_a_gaussian_bump() {
        let kde = DensityEstimate::from_chi(&[0.0, 0.0, 0.0, 0.0], 2, 1, 1.0, &[0.0; 2], BandwidthRule::Fixed(vec![1.0, 2.0]))
            .unwrap();
        let p = kde.density_chi(&[1.0, 2.0]).unwrap().value;
        let expect = libm::exp(-1.0) / (2.0 * core::f64::consts::PI * 2.0);
        assert!((p - expect).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let chi = gaussian_samples(500, 4);
        let kde = DensityEstimate::from_chi(&chi, 2, 1, 1.0, &[0.0; 2], BandwidthRule::SilvermanSphered).unwrap();
        let z = [0.3, -0.4];
        let der = kde.derivatives_chi(&z).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (kde.density_chi(&zp).unwrap().value - kde.density_chi(&zm).unwrap().value) / (2.0 * h);
            assert!((fd - der.gradient[k].value).abs() < 1e-7);
            let gp = kde.derivatives_chi(&zp).unwrap().gradient;
            let gm = kde.derivatives_chi(&zm).unwrap().gradient;
            for j in 0..2 {
                let fd2 = (gp[j].value - gm[j].value) / (2.0 * h);
                assert!((fd2 - der.hessian[(j, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn heat_kernel_is_rescaled_chi_density() {
        let chi = gaussian_samples(300, 5);
        let theta = [1.0, 2.0];
        let t = 0.1;
        let kde = DensityEstimate::from_chi(&chi, 2, 1, t, &theta, BandwidthRule::Silverman).unwrap();
        let y = [1.0 + 0.5 * libm::sqrt(t), 2.0 - 0.2 * libm::pow(t, 1.5)];
        let pc = kde.density_chi(&[0.5, -0.2]).unwrap().value;
        let py = kde.heat_kernel(&y).unwrap().value;
        assert!((py - pc / (t * t)).abs() <= 1e-12 * py);
        assert!(!kde.warnings().is_empty());
    }

    #[test]
    fn estimate_integrates_to_one() {
        let chi = gaussian_samples(2000, 6);
        let kde = DensityEstimate::from_chi(&chi, 2, 1, 1.0, &[0.0; 2], BandwidthRule::Silverman).unwrap();
        let e = kde.integral(4000, 1).unwrap();
        assert!((e.value - 1.0).abs() < 0.01, "{e:?}");
    }
}
