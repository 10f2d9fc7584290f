//! Execution strategy for the data-parallel loops.
//!
//! With the `parallel` feature the loops run on the rayon pool; without it,
//! [`Exec::Parallel`] silently degrades to the sequential path. Results are
//! collected in index order either way, so output never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` on consecutive `chunk_len`-sized chunks.
pub fn for_each_chunk_mut<T, F>(exec: Exec, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let a = map_indexed(Exec::Sequential, 1000, |i| (i as f64).sqrt());
        let b = map_indexed(Exec::Parallel, 1000, |i| (i as f64).sqrt());
        assert_eq!(a, b);

        let mut x = vec![0usize; 1003];
        let mut y = x.clone();
        for_each_chunk_mut(Exec::Sequential, &mut x, 10, |k, c| {
            c.iter_mut().enumerate().for_each(|(j, v)| *v = k * 10 + j)
        });
        for_each_chunk_mut(Exec::Parallel, &mut y, 10, |k, c| {
            c.iter_mut().enumerate().for_each(|(j, v)| *v = k * 10 + j)
        });
        assert_eq!(x, y);
        assert_eq!(x[1002], 1002);
    }
}
