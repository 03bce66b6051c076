use super::{dense_offsets, self_similarity_with_offsets, sparse_offsets, FeatureMap};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::{Duration, Instant};

/// One row of the sparse-vs-dense self-similarity cost table.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub sparse_elements: usize,
    pub dense_elements: usize,
    /// Median wall time in seconds.
    pub sparse_time: f64,
    pub dense_time: f64,
}

fn median(mut v: Vec<Duration>) -> f64 {
    v.sort();
    v[v.len() / 2].as_secs_f64()
}

fn time_it(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed()
            })
            .collect(),
    )
}

/// Times the sparse ray pattern against the full window on a random `h×w×d_z` map.
///
/// Both patterns run through the same kernel so only the sampling pattern differs.
/// At least 10 repetitions are taken; the median is reported.
pub fn bench_sce(
    h: usize,
    w: usize,
    d_z: usize,
    ks: &[usize],
    reps: usize,
) -> Result<Vec<BenchRow>> {
    let reps = reps.max(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CE);
    let f = FeatureMap::new(
        d_z,
        h,
        w,
        16,
        (0..d_z * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    ks.iter()
        .map(|&k| {
            let sparse = sparse_offsets(k)?;
            let dense = dense_offsets(k)?;
            let sparse_time = time_it(reps, || {
                std::hint::black_box(self_similarity_with_offsets(&f, &sparse, k));
            });
            let dense_time = time_it(reps, || {
                std::hint::black_box(self_similarity_with_offsets(&f, &dense, k));
            });
            Ok(BenchRow {
                k,
                sparse_elements: sparse.len() * h * w,
                dense_elements: dense.len() * h * w,
                sparse_time,
                dense_time,
            })
        })
        .collect()
}
