//! Multi-scale inference: run the detector at rescaled inputs, resize each
//! probability map back, and average. Averaging happens before any NMS.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::model::{Nbed, SIZE_MULTIPLE};
use crate::tensor::bilinear_resize;

pub const DEFAULT_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

fn resize_image(image: &Array3<f64>, ho: usize, wo: usize) -> Array3<f64> {
    let (c, _, _) = image.dim();
    let mut out = Array3::<f64>::zeros((c, ho, wo));
    for ch in 0..c {
        out.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&bilinear_resize(image.index_axis(ndarray::Axis(0), ch), ho, wo));
    }
    out
}

/// Multi-scale inference through an arbitrary single-scale forward.
pub fn multi_scale_with<F>(forward: F, image: &Array3<f64>, scales: &[f64]) -> Result<Array2<f64>>
where
    F: Fn(&Array3<f64>) -> Result<Array2<f64>>,
{
    if scales.is_empty() {
        return Err(Error::Config("multi-scale inference needs at least one scale".into()));
    }
    let (_, h, w) = image.dim();
    let mut acc = Array2::<f64>::zeros((h, w));
    for &s in scales {
        if !(s > 0.0) {
            return Err(Error::Config(format!("scale must be > 0, got {s}")));
        }
        let hs = (h as f64 * s).round() as usize;
        let ws = (w as f64 * s).round() as usize;
        if hs < SIZE_MULTIPLE || ws < SIZE_MULTIPLE {
            return Err(Error::Shape(format!(
                "scale {s} shrinks {h}x{w} to {hs}x{ws}, below the minimum {SIZE_MULTIPLE}"
            )));
        }
        let scaled = if (hs, ws) == (h, w) { image.clone() } else { resize_image(image, hs, ws) };
        let map = forward(&scaled)?;
        let back = if (hs, ws) == (h, w) { map } else { bilinear_resize(map.view(), h, w) };
        acc += &back;
    }
    acc.mapv_inplace(|v| v / scales.len() as f64);
    Ok(acc)
}

/// Table-3-style "MS" inference for a trained model.
pub fn multi_scale_infer(model: &Nbed, image: &Array3<f64>, scales: &[f64]) -> Result<Array2<f64>> {
    multi_scale_with(|img| model.forward(img), image, scales)
}
