//! Path simulation of the chained system in Itô form, optionally joint with the
//! iterated Wiener integrals `N^j_t = ∫ (t-s)^{j-1}/(j-1)! dW_s`.
//!
//! Every path draws from its own ChaCha8 stream `(seed, path_index)`, so a batch
//! is a pure function of the model and the configuration, whatever order the
//! paths are produced in.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::flow::{solve_theta, ThetaPath};
use crate::model::{ChainedSystem, CorrectionWorkspace};

/// Minimum number of time steps per path.
pub const MIN_STEPS: usize = 16;

/// Largest tolerated fraction of non-finite paths.
pub const FLAGGED_LIMIT: f64 = 1e-3;

/// Time discretization of the deterministic blocks and of the iterated integrals.
///
/// The noisy first block is always Euler–Maruyama. Blocks `j ≥ 2` and the
/// integrals `N^j` share one quadrature rule so that `X - θ - A N` vanishes
/// identically on linear chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Left-point rule.
    Euler,
    /// Trapezoidal predictor-corrector, applied block by block in chain order.
    #[default]
    EulerTrapezoid,
}

/// What each path contributes to the batch beyond its terminal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Record {
    #[default]
    Terminal,
    /// Running `sup_s |X^{(j..n)}_s - θ^{(j..n)}_s|` for each `j`.
    SupNorm,
    /// Terminal `N_t`, driven by the same increments as `X`.
    JointN,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub record: Record,
}

impl SimConfig {
    pub fn new(t: f64, steps: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            t,
            steps,
            n_paths,
            seed,
            scheme: Scheme::default(),
            record: Record::default(),
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(invalid(alloc::format!("simulation time must be positive, got {}", self.t)));
        }
        if self.steps < MIN_STEPS {
            return Err(invalid(alloc::format!("at least {MIN_STEPS} steps are required, got {}", self.steps)));
        }
        if self.n_paths == 0 {
            return Err(invalid("at least one path is required"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.t / self.steps as f64
    }
}

/// Paths produced for a contiguous range of path indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkOutput {
    /// Row-major rows of width [`PathSimulator::row_width`] for finite paths.
    pub rows: Vec<f64>,
    /// Indices of paths that went non-finite.
    pub flagged: Vec<u64>,
}

impl ChunkOutput {
    pub fn append(&mut self, mut other: ChunkOutput) {
        self.rows.append(&mut other.rows);
        self.flagged.append(&mut other.flagged);
    }
}

/// Per-worker buffers for [`PathSimulator::run_path`].
#[derive(Debug, Clone)]
pub struct PathScratch {
    x: Vec<f64>,
    x_new: Vec<f64>,
    b_old: Vec<f64>,
    b_tmp: Vec<f64>,
    sigma: Vec<f64>,
    dw: Vec<f64>,
    m: Vec<f64>,
    m_new: Vec<f64>,
    block_sq: Vec<f64>,
    correction: CorrectionWorkspace,
}

/// Simulates single paths of one model under one configuration.
#[derive(Debug, Clone)]
pub struct PathSimulator<'a> {
    sys: &'a ChainedSystem,
    cfg: SimConfig,
    h: f64,
    theta: Option<Arc<ThetaPath>>,
}

impl<'a> PathSimulator<'a> {
    pub fn new(sys: &'a ChainedSystem, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let theta = match cfg.record {
            Record::SupNorm => Some(Arc::new(solve_theta(sys, cfg.t, cfg.steps)?)),
            _ => None,
        };
        Ok(Self {
            sys,
            cfg,
            h: cfg.step_size(),
            theta,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn system(&self) -> &ChainedSystem {
        self.sys
    }

    /// Values per path: `X_t`, then `N_t` or the `n` running sups if recorded.
    pub fn row_width(&self) -> usize {
        let dim = self.sys.dim();
        match self.cfg.record {
            Record::Terminal => dim,
            Record::JointN => 2 * dim,
            Record::SupNorm => dim + self.sys.n(),
        }
    }

    pub fn scratch(&self) -> PathScratch {
        let (n, d, dim) = (self.sys.n(), self.sys.d(), self.sys.dim());
        PathScratch {
            x: vec![0.0; dim],
            x_new: vec![0.0; dim],
            b_old: vec![0.0; dim],
            b_tmp: vec![0.0; d],
            sigma: vec![0.0; d * d],
            dw: vec![0.0; d],
            m: vec![0.0; dim],
            m_new: vec![0.0; dim],
            block_sq: vec![0.0; n],
            correction: CorrectionWorkspace::new(d, dim),
        }
    }

    /// Simulates path `index` into `row`. Returns `false` if the path went non-finite.
    pub fn run_path(&self, index: u64, s: &mut PathScratch, row: &mut [f64]) -> bool {
        let (n, d, dim) = (self.sys.n(), self.sys.d(), self.sys.dim());
        let h = self.h;
        let sqrt_h = libm::sqrt(h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        let joint = self.cfg.record == Record::JointN;
        let sup_offset = dim;
        if let Record::SupNorm = self.cfg.record {
            row[sup_offset..sup_offset + n].fill(0.0);
        }
        s.x.copy_from_slice(self.sys.xi());
        s.m.fill(0.0);

        for k in 0..self.cfg.steps {
            let t0 = k as f64 * h;
            self.sys.drift(t0, &s.x, &mut s.b_old);
            let sig = s
                .correction
                .add_correction(self.sys.sigma_field(), t0, &s.x, &mut s.b_old[..d]);
            s.sigma.copy_from_slice(sig);
            for v in s.dw.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sqrt_h * z;
            }

            for r in 0..d {
                let mut noise = 0.0;
                for c in 0..d {
                    noise += s.sigma[r * d + c] * s.dw[c];
                }
                s.x_new[r] = s.x[r] + h * s.b_old[r] + noise;
            }
            for i in d..dim {
                s.x_new[i] = s.x[i] + h * s.b_old[i];
            }
            if self.cfg.scheme == Scheme::EulerTrapezoid {
                for j in 1..n {
                    self.sys.drift_block(j).eval(t0 + h, &s.x_new, &mut s.b_tmp);
                    for r in 0..d {
                        let i = j * d + r;
                        s.x_new[i] = s.x[i] + 0.5 * h * (s.b_old[i] + s.b_tmp[r]);
                    }
                }
            }
            if s.x_new.iter().any(|v| !v.is_finite()) {
                return false;
            }
            core::mem::swap(&mut s.x, &mut s.x_new);

            if joint {
                for r in 0..d {
                    s.m_new[r] = s.m[r] + s.dw[r];
                }
                for i in d..dim {
                    s.m_new[i] = match self.cfg.scheme {
                        Scheme::Euler => s.m[i] + h * s.m[i - d],
                        Scheme::EulerTrapezoid => s.m[i] + 0.5 * h * (s.m[i - d] + s.m_new[i - d]),
                    };
                }
                core::mem::swap(&mut s.m, &mut s.m_new);
            }

            if let Some(theta) = &self.theta {
                let th = theta.at_index(k + 1);
                for j in 0..n {
                    s.block_sq[j] = (0..d).map(|r| (s.x[j * d + r] - th[j * d + r]).powi(2)).sum();
                }
                let mut tail = 0.0;
                for j in (0..n).rev() {
                    tail += s.block_sq[j];
                    let norm = libm::sqrt(tail);
                    let slot = &mut row[sup_offset + j];
                    if norm > *slot {
                        *slot = norm;
                    }
                }
            }
        }
        row[..dim].copy_from_slice(&s.x);
        if joint {
            row[dim..2 * dim].copy_from_slice(&s.m);
        }
        true
    }

    /// Runs the paths with indices in `range`, in index order.
    pub fn run_range(&self, range: Range<u64>) -> ChunkOutput {
        let width = self.row_width();
        let mut scratch = self.scratch();
        let mut out = ChunkOutput {
            rows: Vec::with_capacity(width * (range.end - range.start) as usize),
            flagged: Vec::new(),
        };
        let mut row = vec![0.0; width];
        for index in range {
            if self.run_path(index, &mut scratch, &mut row) {
                out.rows.extend_from_slice(&row);
            } else {
                out.flagged.push(index);
            }
        }
        out
    }

    /// Assembles a batch from the concatenated output of all path indices,
    /// enforcing the flagged-path limit.
    pub fn finish(&self, out: ChunkOutput) -> Result<SampleBatch> {
        let total = self.cfg.n_paths;
        if out.flagged.len() as f64 > FLAGGED_LIMIT * total as f64 {
            return Err(Error::TooManyFlagged {
                flagged: out.flagged.len(),
                total,
            });
        }
        let width = self.row_width();
        let dim = self.sys.dim();
        let rows = out.rows.len() / width;
        let mut x = Vec::with_capacity(rows * dim);
        let mut extra = match self.cfg.record {
            Record::Terminal => None,
            _ => Some(Vec::with_capacity(rows * (width - dim))),
        };
        for r in out.rows.chunks_exact(width) {
            x.extend_from_slice(&r[..dim]);
            if let Some(e) = extra.as_mut() {
                e.extend_from_slice(&r[dim..]);
            }
        }
        let (joint_n, sup) = match self.cfg.record {
            Record::Terminal => (None, None),
            Record::JointN => (extra, None),
            Record::SupNorm => (None, extra),
        };
        Ok(SampleBatch {
            n: self.sys.n(),
            d: self.sys.d(),
            config: self.cfg,
            rows,
            x,
            joint_n,
            sup,
            flagged: out.flagged,
        })
    }
}

/// Serial simulation of all paths of `cfg`.
pub fn simulate(sys: &ChainedSystem, cfg: SimConfig) -> Result<SampleBatch> {
    let sim = PathSimulator::new(sys, cfg)?;
    let out = sim.run_range(0..cfg.n_paths as u64);
    sim.finish(out)
}

/// Terminal samples of one simulation, with optional `N_t` or running sups.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    d: usize,
    config: SimConfig,
    rows: usize,
    x: Vec<f64>,
    joint_n: Option<Vec<f64>>,
    sup: Option<Vec<f64>>,
    flagged: Vec<u64>,
}

impl SampleBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Number of finite paths.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn flagged(&self) -> &[u64] {
        &self.flagged
    }

    /// Row-major `len() x dim()` terminal states.
    pub fn terminal(&self) -> &[f64] {
        &self.x
    }

    pub fn terminal_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim()..(i + 1) * self.dim()]
    }

    /// Row-major `len() x dim()` iterated integrals, block `j` holding `N^j_t`.
    pub fn joint_n(&self) -> Option<&[f64]> {
        self.joint_n.as_deref()
    }

    /// Row-major `len() x n` running sups.
    pub fn sup(&self) -> Option<&[f64]> {
        self.sup.as_deref()
    }
}

/// `R_t = X_t - θ_t - A N_t` for each path.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Residuals {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.n * self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Euclidean norm of block `j` (0-based) of every path.
    pub fn block_norms(&self, j: usize) -> Vec<f64> {
        let (d, dim) = (self.d, self.n * self.d);
        self.values
            .chunks_exact(dim)
            .map(|r| libm::sqrt(r[j * d..(j + 1) * d].iter().map(|v| v * v).sum()))
            .collect()
    }

    /// `E[|R^j_t|^2]^{1/2}` for block `j` (0-based).
    pub fn block_l2(&self, j: usize) -> f64 {
        let norms = self.block_norms(j);
        if norms.is_empty() {
            return 0.0;
        }
        libm::sqrt(norms.iter().map(|v| v * v).sum::<f64>() / norms.len() as f64)
    }
}

/// Residuals of the first-order stochastic Taylor expansion around `θ_t`.
pub fn residuals(batch: &SampleBatch, theta_t: &[f64], a: &DMatrix<f64>) -> Result<Residuals> {
    let dim = batch.dim();
    let n_samples = batch
        .joint_n()
        .ok_or_else(|| invalid("residuals need a batch recorded with joint N"))?;
    if theta_t.len() != dim {
        return Err(Error::Dimension {
            what: "theta",
            expected: dim,
            got: theta_t.len(),
        });
    }
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::Dimension {
            what: "matrix A",
            expected: dim,
            got: a.nrows(),
        });
    }
    let mut values = Vec::with_capacity(batch.terminal().len());
    for (x, nn) in batch.terminal().chunks_exact(dim).zip(n_samples.chunks_exact(dim)) {
        for r in 0..dim {
            let mut an = 0.0;
            for c in 0..dim {
                an += a[(r, c)] * nn[c];
            }
            values.push(x[r] - theta_t[r] - an);
        }
    }
    Ok(Residuals {
        n: batch.n(),
        d: batch.d(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::build_a;
    use crate::model::{bs_asian, kolmogorov, kolmogorov_linear};

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1.0, 15, 10, 0).validate().is_err());
        assert!(SimConfig::new(1.0, 16, 0, 0).validate().is_err());
        assert!(SimConfig::new(0.0, 16, 1, 0).validate().is_err());
        assert!(SimConfig::new(1.0, 16, 1, 0).validate().is_ok());
    }

    #[test]
    fn paths_do_not_depend_on_range_split() {
        let sys = bs_asian(100.0, 0.05, 0.2);
        let cfg = SimConfig::new(0.5, 32, 40, 7).with_record(Record::JointN);
        let sim = PathSimulator::new(&sys, cfg).unwrap();
        let whole = sim.run_range(0..40);
        let mut parts = sim.run_range(0..13);
        parts.append(sim.run_range(13..40));
        assert_eq!(whole, parts);
    }

    #[test]
    fn zero_noise_follows_theta() {
        let sigma = DMatrix::from_element(1, 1, 0.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        let sys = kolmogorov_linear(2, 1, sigma, vec![c], vec![1.0, 0.0]).unwrap();
        let batch = simulate(&sys, SimConfig::new(1.0, 64, 3, 1)).unwrap();
        for i in 0..3 {
            let row = batch.terminal_row(i);
            assert!((row[0] - 1.0).abs() < 1e-15);
            assert!((row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_residual_vanishes() {
        let sys = kolmogorov(3);
        let cfg = SimConfig::new(0.5, 50, 200, 3).with_record(Record::JointN);
        let batch = simulate(&sys, cfg).unwrap();
        let a = build_a(&sys).unwrap();
        let r = residuals(&batch, &[0.0; 3], &a).unwrap();
        for j in 0..3 {
            assert!(r.block_l2(j) < 1e-13, "block {j}: {}", r.block_l2(j));
        }
    }

    #[test]
    fn sup_dominates_terminal_deviation() {
        let sys = kolmogorov(2);
        let cfg = SimConfig::new(1.0, 32, 50, 9).with_record(Record::SupNorm);
        let batch = simulate(&sys, cfg).unwrap();
        let sup = batch.sup().unwrap();
        for i in 0..batch.len() {
            let x = batch.terminal_row(i);
            let s = &sup[2 * i..2 * i + 2];
            assert!(s[0] >= libm::sqrt(x[0] * x[0] + x[1] * x[1]) - 1e-15);
            assert!(s[1] >= x[1].abs() - 1e-15);
            assert!(s[0] >= s[1]);
        }
    }

    #[test]
    fn exploding_paths_abort_the_batch() {
        use crate::field::CoefficientField;
        use crate::model::ChainedSystem;
        let drift = CoefficientField::vector(1, |_, x, out| out[0] = x[0] * x[0] * 1e3);
        let sigma = CoefficientField::constant_matrix(&DMatrix::from_element(1, 1, 1.0));
        let sys = ChainedSystem::new(1, 1, vec![1.0], vec![drift], sigma, 1.0).unwrap();
        let err = simulate(&sys, SimConfig::new(1.0, 16, 20, 0)).unwrap_err();
        assert!(matches!(err, Error::TooManyFlagged { .. }));
    }
}
