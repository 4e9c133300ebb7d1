//! Seed fan-out.
//!
//! With the `parallel` feature (default) independent runs are spread over the
//! rayon pool; without it, or with [`Exec::Sequential`], they run in order on
//! the calling thread. Results always come back in seed order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` only when the crate was built with rayon.
    pub fn effective(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }

    /// Map `f` over `0..count`, preserving index order in the output.
    pub fn map<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self.effective() {
            Exec::Sequential => (0..count).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..count).into_par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            Exec::Parallel => unreachable!(),
        }
    }

    /// Fallible variant of [`Exec::map`]; the first error in index order wins.
    pub fn try_map<T, E, F>(self, count: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(count, f).into_iter().collect()
    }
}
