//! Counter-based random streams.
//!
//! Every replicate draws from its own ChaCha stream keyed on the master seed
//! and the replicate index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream for replicate `index` of the experiment component `tag`.
pub fn stream(seed: u64, tag: u32, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(tag)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Run `f` on replicates `0..n` in parallel and return the results in index order.
pub fn par_replicates<T, F>(n: usize, seed: u64, tag: u32, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut Rng) -> T + Sync,
{
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Run `f` inside a rayon pool with `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
