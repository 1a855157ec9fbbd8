//! Sequential / data-parallel execution switch.
//!
//! Every parallel map in the crate goes through [`ExecPolicy::map`], which
//! preserves input order. Reductions are always performed sequentially on
//! the collected results, so both policies produce bitwise identical output.

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled; otherwise
    /// identical to `Sequential`.
    #[default]
    Parallel,
}

impl ExecPolicy {
    /// True when work is actually dispatched to a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }

    /// Order-preserving map over `0..n`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self == ExecPolicy::Parallel && n > 1 {
                use rayon::prelude::*;
                return (0..n).into_par_iter().map(f).collect();
            }
        }
        (0..n).map(f).collect()
    }

    /// Order-preserving map over mutable work items.
    pub fn map_mut<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self == ExecPolicy::Parallel && items.len() > 1 {
                use rayon::prelude::*;
                return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
            }
        }
        items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}
