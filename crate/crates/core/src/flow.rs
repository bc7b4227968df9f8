//! Deterministic skeleton `θ`, the multi-scale matrix `T_t` and the rescaling
//! `χ_t = T_t^{-1}(X_t - θ_t)`.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::model::ChainedSystem;

/// Degree `g_h = 2⌊(h-1)/d⌋ + 1` of the 1-based coordinate `h ≤ nd`.
pub fn degree(h: usize, d: usize, nd: usize) -> Result<u32> {
    if d == 0 || h == 0 || h > nd {
        return Err(invalid(alloc::format!("coordinate {h} outside 1..={nd}")));
    }
    Ok(2 * ((h - 1) / d) as u32 + 1)
}

/// Degree of a multi-index: the sum of the degrees of its entries.
pub fn degree_multi(alpha: &[usize], d: usize, nd: usize) -> Result<u32> {
    alpha.iter().try_fold(0, |acc, &h| Ok(acc + degree(h, d, nd)?))
}

/// Diagonal matrix with `(T_t)_{hh} = t^{g_h/2}`; block `j` scales as `t^{j-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMatrix {
    t: f64,
    n: usize,
    d: usize,
}

impl ScalingMatrix {
    pub fn new(t: f64, n: usize, d: usize) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid("scaling time must be positive"));
        }
        Ok(Self { t, n, d })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Diagonal entry for the 0-based coordinate `h`.
    pub fn entry(&self, h: usize) -> f64 {
        let block = h / self.d;
        libm::pow(self.t, block as f64 + 0.5)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n * self.d).map(|h| self.entry(h)).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.diagonal()))
    }

    /// `log det T_t = (n² d / 2) log t`.
    pub fn log_det(&self) -> f64 {
        0.5 * (self.n * self.n * self.d) as f64 * libm::log(self.t)
    }

    pub fn det(&self) -> f64 {
        libm::exp(self.log_det())
    }

    /// `χ = T^{-1}(x - θ)`.
    pub fn rescale_point(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        for h in 0..out.len() {
            out[h] = (x[h] - theta[h]) / self.entry(h);
        }
    }

    /// `x = T z + θ`.
    pub fn unrescale_point(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        for h in 0..out.len() {
            out[h] = self.entry(h) * z[h] + theta[h];
        }
    }
}

/// Rescales a row-major batch of states: `χ = T_t^{-1}(X_t - θ_t)` row by row.
pub fn rescale(t: f64, n: usize, d: usize, theta: &[f64], samples: &[f64]) -> Result<Vec<f64>> {
    let scale = ScalingMatrix::new(t, n, d)?;
    let dim = n * d;
    if theta.len() != dim || samples.len() % dim != 0 {
        return Err(Error::Dimension {
            what: "rescaled batch",
            expected: dim,
            got: theta.len(),
        });
    }
    let inv: Vec<f64> = scale.diagonal().iter().map(|s| 1.0 / s).collect();
    let mut out = vec![0.0; samples.len()];
    for (row, dst) in samples.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        for h in 0..dim {
            dst[h] = (row[h] - theta[h]) * inv[h];
        }
    }
    Ok(out)
}

/// Inverse of [`rescale`]: `X = T_t χ + θ_t`.
pub fn unrescale(t: f64, n: usize, d: usize, theta: &[f64], chi: &[f64]) -> Result<Vec<f64>> {
    let scale = ScalingMatrix::new(t, n, d)?;
    let dim = n * d;
    if theta.len() != dim || chi.len() % dim != 0 {
        return Err(Error::Dimension {
            what: "rescaled batch",
            expected: dim,
            got: theta.len(),
        });
    }
    let diag = scale.diagonal();
    let mut out = vec![0.0; chi.len()];
    for (row, dst) in chi.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        for h in 0..dim {
            dst[h] = diag[h] * row[h] + theta[h];
        }
    }
    Ok(out)
}

/// Solution of `dθ = B(t, θ) dt`, `θ_0 = ξ` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ThetaPath {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn order(&self) -> u32 {
        4
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn at_index(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.at_index(self.steps())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Default RK4 step count: 1024 per unit time, at least 8.
pub fn default_theta_steps(t: f64) -> usize {
    let s = libm::ceil(1024.0 * t) as usize;
    s.max(8)
}

/// Classical fixed-step RK4 on the drift-only equation.
pub fn solve_theta(sys: &ChainedSystem, t: f64, steps: usize) -> Result<ThetaPath> {
    if !(t > 0.0) || t > sys.horizon() * (1.0 + 1e-12) {
        return Err(invalid(alloc::format!("theta time {t} outside (0, {}]", sys.horizon())));
    }
    if steps < 8 {
        return Err(invalid("at least 8 RK4 steps are required"));
    }
    let dim = sys.dim();
    let h = t / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity((steps + 1) * dim);
    let mut y = sys.xi().to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    times.push(0.0);
    values.extend_from_slice(&y);
    for s in 0..steps {
        let t0 = s as f64 * h;
        sys.drift(t0, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.drift(t0 + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.drift(t0 + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.drift(t0 + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t1 = (s + 1) as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t1 });
        }
        times.push(t1);
        values.extend_from_slice(&y);
    }
    Ok(ThetaPath { dim, times, values })
}

/// θ paths for one model, keyed by `(t, steps)`.
#[derive(Debug, Default)]
pub struct ThetaCache {
    paths: BTreeMap<(u64, usize), Arc<ThetaPath>>,
}

impl ThetaCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_solve(&mut self, sys: &ChainedSystem, t: f64, steps: usize) -> Result<Arc<ThetaPath>> {
        let key = (t.to_bits(), steps);
        if let Some(p) = self.paths.get(&key) {
            return Ok(p.clone());
        }
        let path = Arc::new(solve_theta(sys, t, steps)?);
        self.paths.insert(key, path.clone());
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}
