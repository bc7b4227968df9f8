//! Parallel path generation.
//!
//! Paths are cut into fixed-size chunks by index and the chunk outputs are
//! concatenated in index order, so the batch does not depend on the number of
//! workers.

use hypochain_core::mc::{ChunkOutput, PathSimulator, SampleBatch, SimConfig};
use hypochain_core::ChainedSystem;
use rayon::prelude::*;

use crate::error::AppError;

/// Paths per work item.
pub const CHUNK: u64 = 4096;

/// A rayon pool with a fixed worker count.
#[derive(Debug)]
pub struct Engine {
    pool: rayon::ThreadPool,
}

impl Engine {
    /// `workers == 0` uses every available core.
    pub fn new(workers: usize) -> Result<Self, AppError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn simulate(&self, sys: &ChainedSystem, cfg: SimConfig) -> Result<SampleBatch, AppError> {
        let sim = PathSimulator::new(sys, cfg)?;
        let total = cfg.n_paths as u64;
        let chunks: Vec<ChunkOutput> = self.pool.install(|| {
            (0..total.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| sim.run_range(c * CHUNK..((c + 1) * CHUNK).min(total)))
                .collect()
        });
        let mut all = ChunkOutput::default();
        for c in chunks {
            all.append(c);
        }
        Ok(sim.finish(all)?)
    }

    /// Runs `f` inside the pool, for parallel iterators elsewhere.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}
