//! Non-maximum suppression along the local gradient direction.
//!
//! Orientation comes from finite differences of a Gaussian-smoothed copy
//! (sigma = 1 pixel) of the map; a pixel is suppressed when it is strictly
//! smaller than either bilinearly interpolated neighbor one pixel away
//! along the gradient. Zero-gradient pixels are kept.

use ndarray::Array2;

/// Gradient magnitudes below this count as "no orientation".
const FLAT_EPS: f64 = 1e-12;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn smooth(map: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = map.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * (n - 1).max(1);
        let mut i = i.rem_euclid(period);
        if i >= n {
            i = period - i;
        }
        i as usize
    };
    // separable: rows then columns
    let mut tmp = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * map[(i, reflect(j as isize + t as isize - radius, w))];
            }
            tmp[(i, j)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(reflect(i as isize + t as isize - radius, h), j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Bilinear read with zero outside the map.
fn sample(map: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = map.dim();
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let (yi, xi) = (y0 + dy, x0 + dx);
            if yi >= 0 && xi >= 0 && yi < h as isize && xi < w as isize {
                acc += wy * wx * map[(yi as usize, xi as usize)];
            }
        }
    }
    acc
}

/// Thin an edge probability map; surviving values are unchanged.
pub fn nms_thin(map: &Array2<f64>) -> Array2<f64> {
    let (h, w) = map.dim();
    let smoothed = smooth(map, 1.0);
    let mut out = map.clone();
    for i in 0..h {
        for j in 0..w {
            let gy = if i == 0 {
                smoothed[(1.min(h - 1), j)] - smoothed[(0, j)]
            } else if i == h - 1 {
                smoothed[(i, j)] - smoothed[(i - 1, j)]
            } else {
                0.5 * (smoothed[(i + 1, j)] - smoothed[(i - 1, j)])
            };
            let gx = if j == 0 {
                smoothed[(i, 1.min(w - 1))] - smoothed[(i, 0)]
            } else if j == w - 1 {
                smoothed[(i, j)] - smoothed[(i, j - 1)]
            } else {
                0.5 * (smoothed[(i, j + 1)] - smoothed[(i, j - 1)])
            };
            let norm = (gy * gy + gx * gx).sqrt();
            if norm < FLAT_EPS {
                continue; // no orientation: keep
            }
            let (dy, dx) = (gy / norm, gx / norm);
            let v = map[(i, j)];
            let a = sample(map, i as f64 + dy, j as f64 + dx);
            let b = sample(map, i as f64 - dy, j as f64 - dx);
            if v < a || v < b {
                out[(i, j)] = 0.0;
            }
        }
    }
    out
}
