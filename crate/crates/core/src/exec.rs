//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (on by default) [`Exec::Parallel`] runs on the
//! rayon global pool; without it every mode runs sequentially. Results are
//! identical either way: work is split into fixed index ranges and gathered
//! in order.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over an index range, preserving order.
    pub fn map_range<R, F>(self, range: Range<usize>, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return range.into_par_iter().map(f).collect();
        }
        range.map(f).collect()
    }

    /// Maps `f` over `chunk`-sized pieces of `data`; `f` gets the chunk index.
    pub fn map_chunks<T, R, F>(self, data: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return data.par_chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect();
        }
        data.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }

    /// Runs `f` on `chunk`-sized mutable pieces of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Element count per work item for elementwise kernels.
pub const CHUNK: usize = 1 << 16;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let data: Vec<u64> = (0..200_000).collect();
        let seq = Exec::Sequential.map_chunks(&data, 1000, |i, c| (i, c.iter().sum::<u64>()));
        let par = Exec::Parallel.map_chunks(&data, 1000, |i, c| (i, c.iter().sum::<u64>()));
        assert_eq!(seq, par);
        assert_eq!(Exec::Parallel.map_range(0..10, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());

        let mut a = vec![0u32; 5000];
        let mut b = a.clone();
        Exec::Sequential.for_each_chunk_mut(&mut a, 7, |i, c| c.iter_mut().for_each(|x| *x = i as u32));
        Exec::Parallel.for_each_chunk_mut(&mut b, 7, |i, c| c.iter_mut().for_each(|x| *x = i as u32));
        assert_eq!(a, b);
    }
}
