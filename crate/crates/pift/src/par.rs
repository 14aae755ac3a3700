//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) these fan work out over rayon;
//! without it they degrade to plain loops with identical results. Reductions
//! are *deterministic by construction*: work is split into fixed-size chunks,
//! chunk partials are computed independently (possibly out of order), and the
//! partials are folded in chunk order. The floating-point result is therefore
//! independent of thread count and scheduling — a requirement for bit-exact
//! chain reproduction.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic reductions. Large enough to amortize task
/// overhead, small enough to keep all cores busy on a 16k-node quadrature.
pub const CHUNK: usize = 1024;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in order.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

/// Map `f` over a slice, collecting results in order.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, R>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Sum `f(i)` over `0..n` with chunked, order-fixed accumulation.
pub fn sum_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let partials = chunk_partials(n, |range| range.map(&f).sum::<f64>());
    partials.into_iter().sum()
}

/// Accumulate a `dim`-vector: `out = Σ_{i<n} g(i)` where `g(i)` writes its
/// contribution into a scratch slice. Chunk partials are folded in order.
pub fn sum_indexed_vec(n: usize, dim: usize, g: impl Fn(usize, &mut [f64]) + Sync + Send) -> Vec<f64> {
    let partials = chunk_partials(n, |range| {
        let mut acc = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        for i in range {
            scratch.iter_mut().for_each(|v| *v = 0.0);
            g(i, &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += *s;
            }
        }
        acc
    });
    let mut out = vec![0.0; dim];
    for p in partials {
        for (o, v) in out.iter_mut().zip(&p) {
            *o += v;
        }
    }
    out
}

/// The "explicitly sequential" twin of [`sum_indexed`], kept available in all
/// feature configurations so benchmarks can compare the two code paths inside
/// a single binary. Uses the same chunked summation order, so the result is
/// bitwise identical to the parallel version.
pub fn sum_indexed_seq(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        total += (start..end).map(&f).sum::<f64>();
        start = end;
    }
    total
}

/// Sequential twin of [`map_slice`], for benchmarks.
pub fn map_slice_seq<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn chunk_partials<R: Send>(
    n: usize,
    body: impl Fn(std::ops::Range<usize>) -> R + Sync + Send,
) -> Vec<R> {
    let ranges: Vec<_> = chunk_ranges(n);
    ranges.into_par_iter().map(body).collect()
}

#[cfg(not(feature = "parallel"))]
fn chunk_partials<R>(n: usize, body: impl Fn(std::ops::Range<usize>) -> R + Sync + Send) -> Vec<R> {
    chunk_ranges(n).into_iter().map(body).collect()
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::with_capacity(n / CHUNK + 1);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        ranges.push(start..end);
        start = end;
    }
    ranges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_twin_bitwise() {
        // Awkward magnitudes so that summation order matters; the chunked
        // parallel reduction must still agree bit-for-bit with its twin.
        let f = |i: usize| ((i as f64) * 1.618_033).sin() * 1e8 / (i as f64 + 1.0);
        let a = sum_indexed(10_000, f);
        let b = sum_indexed_seq(10_000, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn vector_accumulation_sums_every_index_once() {
        let out = sum_indexed_vec(5000, 3, |i, s| {
            s[0] += 1.0;
            s[1] += i as f64;
            s[2] += (i % 2) as f64;
        });
        assert_eq!(out[0], 5000.0);
        assert_eq!(out[1], (0..5000).sum::<usize>() as f64);
        assert_eq!(out[2], 2500.0);
    }

    #[test]
    fn map_preserves_index_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 2));
    }
}
