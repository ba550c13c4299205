//! Thread-parallel drivers for the core jobs. Work is cut into fixed chunks
//! independent of the thread count, and every merge is either an integer sum
//! or done in chunk order, so results do not depend on `SKOEIG_WORKERS`.

use rayon::prelude::*;
use skoeig_core::density::{BackwardJob, DensityMatrix, ForwardJob, StationaryEstimate, StationaryJob};
use skoeig_core::model::SdeModel;
use skoeig_core::pinn::Executor;
use skoeig_core::Result;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "SKOEIG_WORKERS";

/// Forward trajectories per chunk.
pub const FORWARD_CHUNK: u64 = 1000;
/// Start boxes per backward chunk.
pub const BACKWARD_CHUNK: usize = 4;
/// Stationary trajectories per chunk.
pub const STATIONARY_CHUNK: u64 = 4;

/// Worker count from `SKOEIG_WORKERS`, or the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool")
}

/// Executor running loss chunks on the current rayon pool; results come
/// back in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

pub fn forward<M: SdeModel + Sync + ?Sized>(job: &ForwardJob<'_, M>, k: u64) -> Result<DensityMatrix> {
    job.validate()?;
    let chunks = k.div_ceil(FORWARD_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| job.run(c * FORWARD_CHUNK..((c + 1) * FORWARD_CHUNK).min(k)))
        .reduce_with(|mut a, b| {
            a.merge(&b);
            a
        })
        .expect("at least one chunk");
    job.finish(parts, k)
}

pub fn backward<M: SdeModel + Sync + ?Sized>(job: &BackwardJob<'_, M>) -> Result<DensityMatrix> {
    job.validate()?;
    let n = job.ids.len();
    let chunks = n.div_ceil(BACKWARD_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| job.run(c * BACKWARD_CHUNK..((c + 1) * BACKWARD_CHUNK).min(n)))
        .reduce_with(|mut a, b| {
            a.merge(&b);
            a
        })
        .expect("at least one chunk");
    job.finish(parts)
}

pub fn stationary<M: SdeModel + Sync + ?Sized>(job: &StationaryJob<'_, M>, k: u64) -> Result<StationaryEstimate> {
    job.validate()?;
    let chunks = k.div_ceil(STATIONARY_CHUNK);
    let est = (0..chunks)
        .into_par_iter()
        .map(|c| job.run(c * STATIONARY_CHUNK..((c + 1) * STATIONARY_CHUNK).min(k)))
        .reduce_with(|mut a, b| {
            a.merge(&b);
            a
        })
        .expect("at least one chunk");
    job.finish(est)
}
