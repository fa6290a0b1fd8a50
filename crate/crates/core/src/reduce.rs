//! Deterministic reductions.
//!
//! Every sum that feeds a loss, a statistic or a metric goes through
//! [`pairwise_sum`]: fixed blocks of [`BLOCK`] values are accumulated left to
//! right, then block partials are combined as a balanced binary tree. The
//! result depends only on the input order, never on scheduling.

use crate::scalar::Scalar;

pub const BLOCK: usize = 128;

pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    if values.len() <= BLOCK {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    // split on a block boundary so the tree shape is a pure function of len
    let blocks = values.len().div_ceil(BLOCK);
    let mid = (blocks / 2) * BLOCK;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n` without materializing more than one
/// block at a time.
pub fn pairwise_sum_by<T: Scalar, F: Fn(usize) -> T>(n: usize, f: F) -> T {
    fn go<T: Scalar, F: Fn(usize) -> T>(lo: usize, hi: usize, f: &F) -> T {
        let len = hi - lo;
        if len <= BLOCK {
            let mut acc = T::zero();
            for i in lo..hi {
                acc += f(i);
            }
            return acc;
        }
        let blocks = len.div_ceil(BLOCK);
        let mid = lo + (blocks / 2) * BLOCK;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, &f)
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    pairwise_sum(values) / T::of_usize(values.len())
}
