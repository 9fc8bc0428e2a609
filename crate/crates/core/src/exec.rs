//! Chunked batch execution.
//!
//! Work over a batch is split into fixed-size index ranges. Each range is
//! processed independently and the partial results are reduced in range
//! order, so the parallel and sequential paths produce bit-identical
//! results: float accumulation order never depends on thread scheduling.
//!
//! With the `parallel` feature (default) chunks run on the rayon pool;
//! without it [`map_chunks`] degrades to the sequential implementation.

use std::ops::Range;

/// Samples handled per work unit. Fixed so that chunk boundaries (and hence
/// accumulation order) are identical no matter how work is scheduled.
pub const CHUNK: usize = 32;

/// Split `0..n` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    assert!(chunk > 0, "chunk size must be positive");
    let mut out = Vec::with_capacity(n.div_ceil(chunk));
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        out.push(start..end);
        start = end;
    }
    out
}

/// Apply `f` to every chunk range of `0..n`, results in range order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    use rayon::prelude::*;
    chunk_ranges(n, CHUNK).into_par_iter().map(f).collect()
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    map_chunks_seq(n, f)
}

/// Sequential chunked map with the same chunking and reduction order as
/// [`map_chunks`]. Kept public so benchmarks and determinism tests can
/// compare both paths in a single build.
pub fn map_chunks_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(n, CHUNK).into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly() {
        let ranges = chunk_ranges(100, 32);
        assert_eq!(ranges.len(), 4);
        assert_eq!(ranges[0], 0..32);
        assert_eq!(ranges[3], 96..100);
        let total: usize = ranges.iter().map(|r| r.len()).sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn empty_input_no_chunks() {
        assert!(chunk_ranges(0, 32).is_empty());
    }

    #[test]
    fn parallel_matches_sequential() {
        let sums_par = map_chunks(1000, |r| r.map(|i| (i as f64).sqrt()).sum::<f64>());
        let sums_seq = map_chunks_seq(1000, |r| r.map(|i| (i as f64).sqrt()).sum::<f64>());
        assert_eq!(sums_par.len(), sums_seq.len());
        for (a, b) in sums_par.iter().zip(&sums_seq) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
