//! Optional data parallelism; sequential unless the `parallel` feature is on.

use alloc::vec::Vec;

/// (0..n).map(f).collect(), in parallel when enabled. Output order is
/// always the index order.
#[cfg(feature = "parallel")]
pub fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
