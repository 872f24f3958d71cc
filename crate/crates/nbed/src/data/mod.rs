//! Dataset plumbing: list-file ingestion, multi-annotator consensus,
//! augmentation policies, and a synthetic scene generator.
//!
//! List-file format: UTF-8 text, one sample per line, `#` starts a comment,
//! paths are relative to the directory containing the list file. Each line
//! names one RGB image followed by one or more single-channel ground-truth
//! maps (0 = non-edge, 255 = edge).

mod augment;
mod synth;

pub use augment::{augment, AugmentationPlan, SizePolicy};
pub use synth::synth_sample;

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// One training/evaluation sample. The image is kept as loaded (H,W,3
/// 8-bit); annotator maps are binary; the consensus is their mean.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Array3<u8>,
    pub consensus_gt: Array2<f64>,
    pub annotator_gts: Vec<Array2<u8>>,
    pub id: String,
}

impl Sample {
    pub fn new(image: Array3<u8>, annotator_gts: Vec<Array2<u8>>, id: String) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::Data(format!("sample {id}: image must be RGB, got {c} channels")));
        }
        if annotator_gts.is_empty() {
            return Err(Error::Data(format!("sample {id}: needs at least one annotator map")));
        }
        for (k, gt) in annotator_gts.iter().enumerate() {
            if gt.dim() != (h, w) {
                return Err(Error::Data(format!(
                    "sample {id}: annotator {k} is {:?}, image is {h}x{w}",
                    gt.dim()
                )));
            }
        }
        let consensus_gt = consensus_groundtruth(&annotator_gts)?;
        Ok(Self { image, consensus_gt, annotator_gts, id })
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    /// Model input: (3,H,W) in [0,1].
    pub fn to_input(&self) -> Array3<f64> {
        let (h, w, _) = self.image.dim();
        Array3::from_shape_fn((3, h, w), |(c, i, j)| self.image[(i, j, c)] as f64 / 255.0)
    }
}

/// Pixelwise arithmetic mean of binary annotator maps.
pub fn consensus_groundtruth(annotations: &[Array2<u8>]) -> Result<Array2<f64>> {
    let first = annotations
        .first()
        .ok_or_else(|| Error::Data("consensus of an empty annotation list".into()))?;
    let dim = first.dim();
    for (k, a) in annotations.iter().enumerate() {
        if a.dim() != dim {
            return Err(Error::Data(format!(
                "annotation {k} is {:?}, expected {:?}",
                a.dim(),
                dim
            )));
        }
    }
    let n = annotations.len() as f64;
    let mut out = Array2::<f64>::zeros(dim);
    for a in annotations {
        out.zip_mut_with(a, |o, &v| *o += (v != 0) as u8 as f64);
    }
    out.mapv_inplace(|v| v / n);
    Ok(out)
}

fn load_rgb(path: &Path) -> Result<Array3<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read image {}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (h as usize, w as usize, 3),
        |(i, j, c)| img.get_pixel(j as u32, i as u32)[c],
    ))
}

fn load_binary_map(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read ground truth {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        (img.get_pixel(j as u32, i as u32)[0] >= 128) as u8
    }))
}

/// Load an RGB image as model input: (3,H,W) in [0,1].
pub fn load_image_input(path: &Path) -> Result<Array3<f64>> {
    let img = load_rgb(path)?;
    let (h, w, _) = img.dim();
    Ok(Array3::from_shape_fn((3, h, w), |(c, i, j)| img[(i, j, c)] as f64 / 255.0))
}

/// Write a probability map as an 8-bit grayscale PNG (value/255 = p).
pub fn save_probability_png(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((i, j), &v) in map.indexed_iter() {
        buf.put_pixel(j as u32, i as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
    }
    buf.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Read a probability map from an 8-bit grayscale PNG.
pub fn load_probability_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read prediction {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
    }))
}

/// Write a binary edge map as 0/255 grayscale PNG.
pub fn save_binary_png(path: &Path, map: &Array2<u8>) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((i, j), &v) in map.indexed_iter() {
        buf.put_pixel(j as u32, i as u32, image::Luma([if v != 0 { 255 } else { 0 }]));
    }
    buf.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Write a sample's image as an RGB PNG.
pub fn save_rgb_png(path: &Path, img: &Array3<u8>) -> Result<()> {
    let (h, w, _) = img.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([img[(i, j, 0)], img[(i, j, 1)], img[(i, j, 2)]]),
            );
        }
    }
    buf.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Load every sample named by a list file, preserving file order.
pub fn load_listfile(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read list file {}: {e}", path.display())))?;
    let base: PathBuf = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let img_rel = fields.next().unwrap();
        let gt_rels: Vec<&str> = fields.collect();
        let located = |msg: String| {
            Error::Data(format!("{}:{}: {msg}", path.display(), lineno + 1))
        };
        if gt_rels.is_empty() {
            return Err(located(format!(
                "line names image `{img_rel}` but no ground-truth maps"
            )));
        }
        let image = load_rgb(&base.join(img_rel)).map_err(|e| located(e.to_string()))?;
        let (h, w, _) = image.dim();
        let mut gts = Vec::with_capacity(gt_rels.len());
        for rel in &gt_rels {
            let gt = load_binary_map(&base.join(rel)).map_err(|e| located(e.to_string()))?;
            if gt.dim() != (h, w) {
                return Err(located(format!(
                    "ground truth `{rel}` is {}x{}, image `{img_rel}` is {h}x{w}",
                    gt.dim().0,
                    gt.dim().1
                )));
            }
            gts.push(gt);
        }
        let id = Path::new(img_rel)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("line{}", lineno + 1));
        out.push(Sample::new(image, gts, id).map_err(|e| located(e.to_string()))?);
    }
    Ok(out)
}
