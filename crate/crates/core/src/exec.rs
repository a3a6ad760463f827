//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) the [`ExecMode::Parallel`] path uses
//! rayon; without it every call runs sequentially. Results are always
//! collected in input order, so both modes produce identical outputs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Parallel when compiled with the `parallel` feature, sequential otherwise.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Apply `f` to consecutive mutable chunks of `data` of length `chunk`.
pub fn for_each_chunk_mut<T, F>(mode: ExecMode, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => data
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
        _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map_slice(ExecMode::Sequential, &xs, |x| x * x + 1);
        let b = map_slice(ExecMode::Parallel, &xs, |x| x * x + 1);
        assert_eq!(a, b);
        let c = map_range(ExecMode::Parallel, 17, |i| i * 3);
        assert_eq!(c, (0..17).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn chunked_writes() {
        let mut v = vec![0usize; 12];
        for_each_chunk_mut(ExecMode::Parallel, &mut v, 4, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }
}
