//! Data-parallel map over task indices.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool; without it every call runs sequentially. Results always come back
//! in index order, so output never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            Execution::Parallel => (0..n).map(f).collect(),
        }
    }

    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_in_order() {
        let f = |i: usize| (i * i) as u64;
        let a = Execution::Sequential.map(100, f);
        let b = Execution::Parallel.map(100, f);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }

    #[test]
    fn try_map_surfaces_first_error() {
        let r = Execution::Parallel.try_map(10, |i| {
            if i == 3 {
                Err(crate::Error::InvalidArgument("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }
}
