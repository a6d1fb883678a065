//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the adaptive entry points fan work
//! out over rayon; without it they run sequentially. The `_seq` variants are
//! always sequential and exist so benchmarks can compare both paths in one
//! build. Callers must keep per-item work independent and deterministic;
//! every helper preserves item order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, Ff>(n: usize, f: Ff) -> Vec<T>
where
    T: Send,
    Ff: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, Ff>(n: usize, f: Ff) -> Vec<T>
where
    T: Send,
    Ff: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential fallback, kept unconditionally for benchmark comparison.
pub fn map_indexed_seq<T, Ff>(n: usize, f: Ff) -> Vec<T>
where
    Ff: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f(chunk_index, chunk)` over disjoint `chunk_len`-sized pieces of
/// `data`, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, Ff>(data: &mut [T], chunk_len: usize, f: Ff)
where
    T: Send,
    Ff: Fn(usize, &mut [T]) + Sync + Send,
{
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, Ff>(data: &mut [T], chunk_len: usize, f: Ff)
where
    T: Send,
    Ff: Fn(usize, &mut [T]) + Sync + Send,
{
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let out = map_indexed(100, |i| i * i);
        let seq = map_indexed_seq(100, |i| i * i);
        assert_eq!(out, seq);
    }

    #[test]
    fn chunk_indices_line_up() {
        let mut data = vec![0usize; 12];
        for_each_chunk_mut(&mut data, 3, |i, c| c.iter_mut().for_each(|v| *v = i));
        assert_eq!(data, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }
}
