//! Offline augmentation: the Cartesian product of flip variants, evenly
//! spaced rotations, scale factors, and gamma corrections, with an optional
//! final resize or seeded random crop.
//!
//! Geometry is applied identically to the image and every annotator map;
//! images are interpolated bilinearly, annotator maps with nearest-neighbor
//! so the consensus stays on the k/n lattice after re-averaging.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Sample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizePolicy {
    /// Resize every output to exactly this (height, width).
    Resize(usize, usize),
    /// Crop a (height, width) window at a seeded random position.
    RandomCrop(usize, usize),
}

#[derive(Clone, Debug)]
pub struct AugmentationPlan {
    /// 1..=4 of: identity, horizontal flip, vertical flip, both.
    pub flip_variants: usize,
    pub scale_factors: Vec<f64>,
    /// Rotations at angles 360k/n degrees, k = 0..n.
    pub rotation_count: usize,
    pub gamma_values: Vec<f64>,
    pub size_policy: Option<SizePolicy>,
}

impl AugmentationPlan {
    pub fn identity() -> Self {
        Self {
            flip_variants: 1,
            scale_factors: vec![1.0],
            rotation_count: 1,
            gamma_values: vec![1.0],
            size_policy: None,
        }
    }

    /// 4 flips x 25 rotations, resized to 481x321 (landscape).
    pub fn bsds() -> Self {
        Self {
            flip_variants: 4,
            scale_factors: vec![1.0],
            rotation_count: 25,
            gamma_values: vec![1.0],
            size_policy: Some(SizePolicy::Resize(321, 481)),
        }
    }

    /// 2 flips x 3 scales x 4 rotations, randomly cropped to 400x400.
    pub fn nyud() -> Self {
        Self {
            flip_variants: 2,
            scale_factors: vec![0.5, 1.0, 1.5],
            rotation_count: 4,
            gamma_values: vec![1.0],
            size_policy: Some(SizePolicy::RandomCrop(400, 400)),
        }
    }

    /// 2 flips x 3 scales x 16 rotations x 3 gammas.
    pub fn biped() -> Self {
        Self {
            flip_variants: 2,
            scale_factors: vec![0.5, 1.0, 1.5],
            rotation_count: 16,
            gamma_values: vec![0.8, 1.0, 1.2],
            size_policy: None,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.flip_variants * self.scale_factors.len() * self.rotation_count * self.gamma_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.flip_variants) {
            return Err(Error::Config(format!(
                "augment.flip_variants must be 1..=4, got {}",
                self.flip_variants
            )));
        }
        if self.rotation_count == 0 || self.scale_factors.is_empty() || self.gamma_values.is_empty()
        {
            return Err(Error::Config(
                "augment: every factor count must be at least 1".into(),
            ));
        }
        if self.scale_factors.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("augment.scale_factors must be > 0".into()));
        }
        if self.gamma_values.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Config("augment.gamma_values must be > 0".into()));
        }
        Ok(())
    }
}

/// Mirror an index into [0, n) without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1).max(1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn flip_u8_3(img: &Array3<u8>, horizontal: bool, vertical: bool) -> Array3<u8> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let si = if vertical { h - 1 - i } else { i };
        let sj = if horizontal { w - 1 - j } else { j };
        img[(si, sj, k)]
    })
}

fn flip_u8_2(map: &Array2<u8>, horizontal: bool, vertical: bool) -> Array2<u8> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let si = if vertical { h - 1 - i } else { i };
        let sj = if horizontal { w - 1 - j } else { j };
        map[(si, sj)]
    })
}

fn bilinear_at(img: &Array3<u8>, c: usize, y: f64, x: f64) -> f64 {
    let (h, w, _) = img.dim();
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let v = img[(reflect(y0 + dy, h), reflect(x0 + dx, w), c)] as f64;
            acc += wy * wx * v;
        }
    }
    acc
}

fn nearest_at(map: &Array2<u8>, y: f64, x: f64) -> u8 {
    let (h, w) = map.dim();
    map[(reflect(y.round() as isize, h), reflect(x.round() as isize, w))]
}

/// Largest axis-aligned rectangle inscribed in a w x h rectangle rotated by
/// `angle` radians.
fn largest_inscribed(w: usize, h: usize, angle: f64) -> (usize, usize) {
    let (wf, hf) = (w as f64, h as f64);
    let sin_a = angle.sin().abs();
    let cos_a = angle.cos().abs();
    if sin_a < 1e-12 || cos_a < 1e-12 {
        return (w, h);
    }
    let (long, short) = if wf >= hf { (wf, hf) } else { (hf, wf) };
    let (wr, hr) = if short <= 2.0 * sin_a * cos_a * long {
        let x = 0.5 * short;
        if wf >= hf {
            (x / sin_a, x / cos_a)
        } else {
            (x / cos_a, x / sin_a)
        }
    } else {
        let cos2a = cos_a * cos_a - sin_a * sin_a;
        ((wf * cos_a - hf * sin_a) / cos2a, (hf * cos_a - wf * sin_a) / cos2a)
    };
    // the valid region can exceed the fixed canvas near 90 degrees; clamp
    // to the canvas (a centered sub-rectangle stays valid)
    (
        wr.min(wf).floor().max(1.0) as usize,
        hr.min(hf).floor().max(1.0) as usize,
    )
}

struct Geometry {
    image: Array3<u8>,
    gts: Vec<Array2<u8>>,
}

impl Geometry {
    fn rotate(&self, angle: f64) -> Geometry {
        let (h, w, c) = self.image.dim();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin_a, cos_a) = angle.sin_cos();
        let src = |i: usize, j: usize| {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            // inverse rotation of the output grid
            (cy + dx * sin_a + dy * cos_a, cx + dx * cos_a - dy * sin_a)
        };
        let rotated_img = Array3::from_shape_fn((h, w, c), |(i, j, k)| {
            let (y, x) = src(i, j);
            bilinear_at(&self.image, k, y, x).round().clamp(0.0, 255.0) as u8
        });
        let rotated_gts: Vec<Array2<u8>> = self
            .gts
            .iter()
            .map(|g| {
                Array2::from_shape_fn((h, w), |(i, j)| {
                    let (y, x) = src(i, j);
                    nearest_at(g, y, x)
                })
            })
            .collect();
        // keep only the region with no reflected content, then restore the
        // original size
        let (wr, hr) = largest_inscribed(w, h, angle);
        let top = (h - hr) / 2;
        let left = (w - wr) / 2;
        let cropped = Geometry {
            image: rotated_img
                .slice(ndarray::s![top..top + hr, left..left + wr, ..])
                .to_owned(),
            gts: rotated_gts
                .iter()
                .map(|g| g.slice(ndarray::s![top..top + hr, left..left + wr]).to_owned())
                .collect(),
        };
        cropped.resize(h, w)
    }

    fn resize(&self, ho: usize, wo: usize) -> Geometry {
        let (h, w, c) = self.image.dim();
        if (ho, wo) == (h, w) {
            return Geometry { image: self.image.clone(), gts: self.gts.clone() };
        }
        let sy = h as f64 / ho as f64;
        let sx = w as f64 / wo as f64;
        // half-pixel alignment
        let map_y = |i: usize| (i as f64 + 0.5) * sy - 0.5;
        let map_x = |j: usize| (j as f64 + 0.5) * sx - 0.5;
        let image = Array3::from_shape_fn((ho, wo, c), |(i, j, k)| {
            bilinear_at(&self.image, k, map_y(i), map_x(j))
                .round()
                .clamp(0.0, 255.0) as u8
        });
        let gts = self
            .gts
            .iter()
            .map(|g| Array2::from_shape_fn((ho, wo), |(i, j)| nearest_at(g, map_y(i), map_x(j))))
            .collect();
        Geometry { image, gts }
    }

    fn crop(&self, top: usize, left: usize, ho: usize, wo: usize) -> Geometry {
        Geometry {
            image: self
                .image
                .slice(ndarray::s![top..top + ho, left..left + wo, ..])
                .to_owned(),
            gts: self
                .gts
                .iter()
                .map(|g| g.slice(ndarray::s![top..top + ho, left..left + wo]).to_owned())
                .collect(),
        }
    }

    fn gamma(&self, gamma: f64) -> Geometry {
        let image = self
            .image
            .mapv(|v| ((v as f64 / 255.0).powf(gamma) * 255.0).round().clamp(0.0, 255.0) as u8);
        Geometry { image, gts: self.gts.clone() }
    }
}

/// Expand one sample into `plan.cardinality()` augmented samples.
/// Deterministic: the only randomness (crop positions) comes from `seed`.
pub fn augment(sample: &Sample, plan: &AugmentationPlan, seed: u64) -> Result<Vec<Sample>> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];
    let mut out = Vec::with_capacity(plan.cardinality());
    for fi in 0..plan.flip_variants {
        let (fh, fv) = flips[fi];
        let flipped = Geometry {
            image: flip_u8_3(&sample.image, fh, fv),
            gts: sample.annotator_gts.iter().map(|g| flip_u8_2(g, fh, fv)).collect(),
        };
        for (ri, angle) in (0..plan.rotation_count)
            .map(|k| (k, 2.0 * std::f64::consts::PI * k as f64 / plan.rotation_count as f64))
        {
            let rotated = if angle == 0.0 { Geometry { image: flipped.image.clone(), gts: flipped.gts.clone() } } else { flipped.rotate(angle) };
            for (si, &s) in plan.scale_factors.iter().enumerate() {
                let (h, w, _) = rotated.image.dim();
                let (hs, ws) = (
                    ((h as f64 * s).round() as usize).max(1),
                    ((w as f64 * s).round() as usize).max(1),
                );
                let scaled = rotated.resize(hs, ws);
                for (gi, &g) in plan.gamma_values.iter().enumerate() {
                    let toned = if g == 1.0 {
                        Geometry { image: scaled.image.clone(), gts: scaled.gts.clone() }
                    } else {
                        scaled.gamma(g)
                    };
                    let sized = match plan.size_policy {
                        None => toned,
                        Some(SizePolicy::Resize(ho, wo)) => toned.resize(ho, wo),
                        Some(SizePolicy::RandomCrop(ho, wo)) => {
                            let (h, w, _) = toned.image.dim();
                            if ho > h || wo > w {
                                return Err(Error::Data(format!(
                                    "crop {ho}x{wo} larger than augmented image {h}x{w} \
                                     (sample {}, scale {s})",
                                    sample.id
                                )));
                            }
                            let top = rng.gen_range(0..=h - ho);
                            let left = rng.gen_range(0..=w - wo);
                            toned.crop(top, left, ho, wo)
                        }
                    };
                    out.push(Sample::new(
                        sized.image,
                        sized.gts,
                        format!("{}-f{fi}r{ri}s{si}g{gi}", sample.id),
                    )?);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> Sample {
        let image = Array3::from_shape_fn((h, w, 3), |(i, j, c)| ((i * 31 + j * 7 + c * 50) % 256) as u8);
        let mut gt = Array2::<u8>::zeros((h, w));
        gt[(h / 2, w / 2)] = 1;
        gt[(h / 3, w / 4)] = 1;
        Sample::new(image, vec![gt], "t".into()).unwrap()
    }

    #[test]
    fn identity_plan_is_pixel_exact() {
        let s = sample(20, 24);
        let out = augment(&s, &AugmentationPlan::identity(), 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].image, s.image);
        assert_eq!(out[0].annotator_gts, s.annotator_gts);
        assert_eq!(out[0].consensus_gt, s.consensus_gt);
    }

    #[test]
    fn bsds_plan_yields_one_hundred() {
        let plan = AugmentationPlan {
            size_policy: Some(SizePolicy::Resize(21, 31)),
            ..AugmentationPlan::bsds()
        };
        let out = augment(&sample(24, 32), &plan, 1).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|s| s.height() == 21 && s.width() == 31));
        // ids are unique
        let mut ids: Vec<_> = out.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn cardinality_matches_factor_product() {
        let plan = AugmentationPlan {
            flip_variants: 2,
            scale_factors: vec![0.75, 1.0],
            rotation_count: 3,
            gamma_values: vec![0.9, 1.0, 1.1],
            size_policy: None,
        };
        assert_eq!(plan.cardinality(), 36);
        let out = augment(&sample(18, 18), &plan, 9).unwrap();
        assert_eq!(out.len(), 36);
    }

    #[test]
    fn flips_move_gt_with_the_image() {
        let plan = AugmentationPlan { flip_variants: 4, ..AugmentationPlan::identity() };
        let s = sample(16, 20);
        let out = augment(&s, &plan, 0).unwrap();
        // horizontal flip variant
        let hf = &out[1];
        let (h, w) = s.consensus_gt.dim();
        for i in 0..h {
            for j in 0..w {
                assert_eq!(hf.consensus_gt[(i, j)], s.consensus_gt[(i, w - 1 - j)]);
                assert_eq!(hf.image[(i, j, 1)], s.image[(i, w - 1 - j, 1)]);
            }
        }
        // flipping twice (variant 3 = both) preserves the edge count
        let total: f64 = s.consensus_gt.sum();
        assert_eq!(out[3].consensus_gt.sum(), total);
    }

    #[test]
    fn same_seed_reproduces_crops_different_seed_moves_them() {
        let plan = AugmentationPlan {
            size_policy: Some(SizePolicy::RandomCrop(10, 10)),
            ..AugmentationPlan::identity()
        };
        let s = sample(32, 32);
        let a = augment(&s, &plan, 7).unwrap();
        let b = augment(&s, &plan, 7).unwrap();
        assert_eq!(a[0].image, b[0].image);
        let mut moved = false;
        for seed in 0..20 {
            let c = augment(&s, &plan, seed).unwrap();
            if c[0].image != a[0].image {
                moved = true;
                break;
            }
        }
        assert!(moved, "crops never moved across 20 seeds");
    }

    #[test]
    fn oversized_crop_is_an_error() {
        let plan = AugmentationPlan {
            size_policy: Some(SizePolicy::RandomCrop(64, 64)),
            ..AugmentationPlan::identity()
        };
        assert!(augment(&sample(32, 32), &plan, 0).is_err());
    }

    #[test]
    fn rotation_keeps_size_and_gt_lattice() {
        let plan = AugmentationPlan { rotation_count: 8, ..AugmentationPlan::identity() };
        let s = sample(33, 47);
        let out = augment(&s, &plan, 0).unwrap();
        assert_eq!(out.len(), 8);
        for o in &out {
            assert_eq!((o.height(), o.width()), (33, 47));
            assert!(o.consensus_gt.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn scaling_scales_both_image_and_gt() {
        let plan = AugmentationPlan {
            scale_factors: vec![0.5],
            ..AugmentationPlan::identity()
        };
        let s = sample(40, 40);
        let out = augment(&s, &plan, 0).unwrap();
        assert_eq!((out[0].height(), out[0].width()), (20, 20));
        assert_eq!(out[0].consensus_gt.dim(), (20, 20));
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let mut plan = AugmentationPlan::identity();
        plan.flip_variants = 5;
        assert!(plan.validate().is_err());
        let mut plan = AugmentationPlan::identity();
        plan.scale_factors.clear();
        assert!(plan.validate().is_err());
        let mut plan = AugmentationPlan::identity();
        plan.gamma_values = vec![0.0];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn reflect_never_repeats_the_edge() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(0, 5), 0);
        assert_eq!(reflect(4, 5), 4);
        assert_eq!(reflect(-3, 5), 3);
    }
}
