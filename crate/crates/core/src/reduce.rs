//! Summation with a fixed reduction tree.
//!
//! Chunks are summed in parallel and combined in index order, so the result
//! depends only on the input, never on the number of worker threads.

use rayon::prelude::*;

const CHUNK: usize = 1024;

/// Pairwise sum of `values` with fan-in 2 below `CHUNK` and ordered
/// combination of chunk partials above it.
pub fn tree_sum(values: &[f64]) -> f64 {
    if values.len() <= CHUNK {
        return pairwise(values);
    }
    let partials: Vec<f64> = values.par_chunks(CHUNK).map(pairwise).collect();
    pairwise(&partials)
}

/// `tree_sum` of `f(i)` for `i in 0..n`.
pub fn tree_sum_by(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let vals: Vec<f64> = (lo..hi).map(&f).collect();
            pairwise(&vals)
        })
        .collect();
    pairwise(&partials)
}

fn pairwise(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise(&values[..mid]) + pairwise(&values[mid..])
        }
    }
}
