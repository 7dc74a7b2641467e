//! Dataset synthesis and storage, training, evaluation sweeps and the BER
//! link simulation.

mod ber;
mod dataset;
mod eval;
mod train;

pub use ber::{ber_link_sim, q_function, BerLink, BerPoint, BerSpec, MIN_BITS};
pub use dataset::{
    file_size, from_bytes, generate_dataset, generate_realization, read_dataset, sidecar_path, sidecar_text,
    split_dataset, to_bytes, write_dataset, Dataset, GenConfig, SampleMeta, SamplePair, Split, SplitSpec,
    HEADER_BYTES, MAGIC, VERSION, WINDOW_SLOTS,
};
pub use eval::{
    db_or_floor, evaluate, export_heatmap, format_db, ratio_of_expectations, EstimatorSummary, EvalOptions, EvalReport,
    DB_FLOOR,
};
pub use train::{train, EpochStats, TrainConfig, TrainResult};

use crate::error::Result;

/// Worker count: `CSIFORGE_THREADS` if set and positive, else the number of
/// available cores.
pub fn thread_budget() -> usize {
    std::env::var("CSIFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `0..n` on up to `threads` scoped workers. Results come back in
/// index order whatever the scheduling, so output is independent of `threads`.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let a = parallel_map(37, 1, |i| Ok(i * i)).unwrap();
        let b = parallel_map(37, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(a, b);
        assert!(parallel_map(5, 3, |i| if i == 3 { Err(crate::Error::ZeroReference) } else { Ok(i) }).is_err());
    }
}
