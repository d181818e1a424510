//! Compensated sums and fixed-order parallel reductions.
//!
//! Every O(n²) loop in the crate is split into row blocks whose boundaries
//! depend only on `n`. Blocks may run on any thread, but their partial
//! results are combined sequentially in block order, so the output is
//! bit-identical for every thread count.

use rayon::prelude::*;

/// Rows per reduction block.
pub const BLOCK_ROWS: usize = 32;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// Maps each block `[start, end)` of `0..n` in parallel and returns the
/// per-block results in block order.
pub fn map_blocks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    let blocks = n.div_ceil(BLOCK_ROWS);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_ROWS;
            f(start, (start + BLOCK_ROWS).min(n))
        })
        .collect()
}
