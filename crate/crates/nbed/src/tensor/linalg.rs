//! Deterministic parallel matrix multiply. Work is split into fixed-size
//! column chunks so results are identical for any worker-thread count.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

const COL_CHUNK: usize = 1024;

/// `a (m,k) . b (k,n)`.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let m = a.nrows();
    let n = b.ncols();
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimension mismatch");
    if n <= COL_CHUNK {
        return a.dot(&b);
    }
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(COL_CHUNK)
        .map(|c0| (c0, (c0 + COL_CHUNK).min(n)))
        .collect();
    let parts: Vec<Array2<f64>> = chunks
        .par_iter()
        .map(|&(c0, c1)| a.dot(&b.slice(s![.., c0..c1])))
        .collect();
    let mut out = Array2::zeros((m, n));
    for (&(c0, c1), part) in chunks.iter().zip(parts.iter()) {
        out.slice_mut(s![.., c0..c1]).assign(part);
    }
    out
}
