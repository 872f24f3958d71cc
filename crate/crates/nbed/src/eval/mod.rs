//! Evaluation protocol: NMS thinning, tolerance-based boundary matching,
//! threshold sweeps with the multi-annotator convention (union precision,
//! per-annotator recall), ODS/OIS F-measures, and multi-scale inference.

mod matching;
mod multiscale;
mod nms;
pub mod report;

pub use matching::{match_boundaries, match_pixels, positive_pixels};
pub use multiscale::{multi_scale_infer, multi_scale_with, DEFAULT_SCALES};
pub use nms::nms_thin;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    /// Match tolerance as a fraction of the image diagonal.
    pub tolerance_fraction: f64,
    /// Number of thresholds; t_k = k / (count + 1).
    pub threshold_count: usize,
    pub use_nms: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tolerance_fraction: 0.0075, threshold_count: 99, use_nms: true }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_fraction > 0.0 && self.tolerance_fraction < 0.1) {
            return Err(Error::Config(format!(
                "eval.tolerance_fraction must be in (0, 0.1), got {}",
                self.tolerance_fraction
            )));
        }
        if self.threshold_count == 0 {
            return Err(Error::Config("eval.threshold_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.threshold_count;
        (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
    }
}

/// Counts for one image at one threshold. Precision uses the matched
/// prediction pixels against the annotator union; recall sums matched and
/// missed ground-truth pixels over every annotator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TallyEntry {
    pub tp_pred: u64,
    pub fp: u64,
    pub tp_gt: u64,
    pub fn_: u64,
}

impl TallyEntry {
    fn add(&mut self, o: &TallyEntry) {
        self.tp_pred += o.tp_pred;
        self.fp += o.fp;
        self.tp_gt += o.tp_gt;
        self.fn_ += o.fn_;
    }

    pub fn precision(&self) -> f64 {
        let denom = self.tp_pred + self.fp;
        if denom == 0 {
            0.0
        } else {
            self.tp_pred as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.tp_gt + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp_gt as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct ThresholdTally {
    pub thresholds: Vec<f64>,
    /// `per_image[i][k]` scores image `i` at threshold `k`.
    pub per_image: Vec<Vec<TallyEntry>>,
}

impl ThresholdTally {
    pub fn dataset_sum(&self, k: usize) -> TallyEntry {
        let mut total = TallyEntry::default();
        for img in &self.per_image {
            total.add(&img[k]);
        }
        total
    }
}

fn tally_one(pred: &Array2<f64>, sample: &Sample, cfg: &EvalConfig) -> Result<Vec<TallyEntry>> {
    let (h, w) = sample.consensus_gt.dim();
    if pred.dim() != (h, w) {
        return Err(Error::Data(format!(
            "prediction for sample {} is {:?}, image is {h}x{w}",
            sample.id,
            pred.dim()
        )));
    }
    let d_max = cfg.tolerance_fraction * ((h * h + w * w) as f64).sqrt();
    let thinned;
    let map = if cfg.use_nms {
        thinned = nms_thin(pred);
        &thinned
    } else {
        pred
    };
    let union: Vec<matching::Pixel> = {
        let mut u = Array2::<u8>::zeros((h, w));
        for gt in &sample.annotator_gts {
            u.zip_mut_with(gt, |a, &b| *a |= (b != 0) as u8);
        }
        u.indexed_iter().filter(|(_, &v)| v != 0).map(|(p, _)| p).collect()
    };
    let annotators: Vec<Vec<matching::Pixel>> = sample
        .annotator_gts
        .iter()
        .map(|gt| {
            gt.indexed_iter()
                .filter(|(_, &v)| v != 0)
                .map(|(p, _)| p)
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(cfg.threshold_count);
    for t in cfg.thresholds() {
        let pred_pixels = positive_pixels(map, t);
        let tp_pred = match_pixels(&pred_pixels, &union, d_max) as u64;
        let mut entry = TallyEntry {
            tp_pred,
            fp: pred_pixels.len() as u64 - tp_pred,
            tp_gt: 0,
            fn_: 0,
        };
        for ann in &annotators {
            let tp = match_pixels(&pred_pixels, ann, d_max) as u64;
            entry.tp_gt += tp;
            entry.fn_ += ann.len() as u64 - tp;
        }
        out.push(entry);
    }
    Ok(out)
}

/// Score one prediction map per sample across the threshold grid.
pub fn accumulate_tallies(
    preds: &[Array2<f64>],
    samples: &[Sample],
    cfg: &EvalConfig,
) -> Result<ThresholdTally> {
    cfg.validate()?;
    if preds.len() != samples.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let per_image: Vec<Vec<TallyEntry>> = preds
        .par_iter()
        .zip(samples.par_iter())
        .map(|(p, s)| tally_one(p, s, cfg))
        .collect::<Result<_>>()?;
    Ok(ThresholdTally { thresholds: cfg.thresholds(), per_image })
}

/// Harmonic mean of precision and recall; 0 when both vanish.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Dataset-level summary: best shared threshold (ODS), mean of per-image
/// best thresholds (OIS), and the PR curve from dataset sums.
pub fn ods_ois(tally: &ThresholdTally) -> Result<(f64, f64, Vec<PrPoint>)> {
    if tally.per_image.is_empty() {
        return Err(Error::Data("cannot summarize an empty tally".into()));
    }
    let points: Vec<PrPoint> = tally
        .thresholds
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let sum = tally.dataset_sum(k);
            let (p, r) = (sum.precision(), sum.recall());
            PrPoint { threshold: t, precision: p, recall: r, f: f_measure(p, r) }
        })
        .collect();
    let ods = points.iter().map(|p| p.f).fold(0.0, f64::max);
    let ois = tally
        .per_image
        .iter()
        .map(|entries| {
            entries
                .iter()
                .map(|e| f_measure(e.precision(), e.recall()))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / tally.per_image.len() as f64;
    Ok((ods, ois, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn sample_with(pixels_per_annotator: &[&[(usize, usize)]], h: usize, w: usize) -> Sample {
        let image = Array3::from_elem((h, w, 3), 128u8);
        let gts = pixels_per_annotator
            .iter()
            .map(|pixels| {
                let mut m = Array2::<u8>::zeros((h, w));
                for &(i, j) in *pixels {
                    m[(i, j)] = 1;
                }
                m
            })
            .collect();
        Sample::new(image, gts, "fixture".into()).unwrap()
    }

    fn cfg_exactish() -> EvalConfig {
        // d_max = 0.05 * diag(16,16) = 1.13: matches within one pixel
        EvalConfig { tolerance_fraction: 0.05, threshold_count: 99, use_nms: false }
    }

    #[test]
    fn thresholds_are_the_percent_grid() {
        let t = EvalConfig::default().thresholds();
        assert_eq!(t.len(), 99);
        assert!((t[0] - 0.01).abs() < 1e-12);
        assert!((t[98] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let s = sample_with(&[&[(3, 3), (8, 12), (12, 2)]], 16, 16);
        let pred = s.consensus_gt.clone();
        let tally = accumulate_tallies(&[pred], &[s], &cfg_exactish()).unwrap();
        for (k, t) in tally.thresholds.iter().enumerate() {
            if *t <= 1.0 {
                let e = tally.per_image[0][k];
                assert_eq!((e.tp_pred, e.fp, e.fn_), (3, 0, 0), "threshold {t}");
            }
        }
        let (ods, ois, _) = ods_ois(&tally).unwrap();
        assert_eq!((ods, ois), (1.0, 1.0));
    }

    #[test]
    fn empty_prediction_counts_every_gt_as_missed() {
        let s = sample_with(&[&[(3, 3)], &[(3, 3), (9, 9)]], 16, 16);
        let pred = Array2::<f64>::zeros((16, 16));
        let tally = accumulate_tallies(&[pred], &[s], &cfg_exactish()).unwrap();
        for e in &tally.per_image[0] {
            assert_eq!((e.tp_pred, e.fp, e.tp_gt, e.fn_), (0, 0, 0, 3));
        }
    }

    #[test]
    fn two_annotator_fixture_matches_hand_enumeration() {
        // annotator 1 marks (4,4); annotator 2 marks (4,5) and (10,10).
        // prediction: 0.8 at (4,4), 0.4 at (10,10).
        let s = sample_with(&[&[(4, 4)], &[(4, 5), (10, 10)]], 16, 16);
        let mut pred = Array2::<f64>::zeros((16, 16));
        pred[(4, 4)] = 0.8;
        pred[(10, 10)] = 0.4;
        let tally = accumulate_tallies(&[pred], &[s], &cfg_exactish()).unwrap();
        for (k, &t) in tally.thresholds.iter().enumerate() {
            let e = tally.per_image[0][k];
            let want = if t <= 0.4 {
                // both pixels live; (4,4) also matches annotator 2's (4,5)
                TallyEntry { tp_pred: 2, fp: 0, tp_gt: 3, fn_: 0 }
            } else if t <= 0.8 {
                TallyEntry { tp_pred: 1, fp: 0, tp_gt: 2, fn_: 1 }
            } else {
                TallyEntry { tp_pred: 0, fp: 0, tp_gt: 0, fn_: 3 }
            };
            assert_eq!(e, want, "threshold {t}");
        }
        let (ods, ois, points) = ods_ois(&tally).unwrap();
        assert!((ods - 1.0).abs() < 1e-12);
        assert!((ois - 1.0).abs() < 1e-12);
        // mid-band point: P = 1, R = 2/3
        let mid = points.iter().find(|p| (p.threshold - 0.5).abs() < 1e-9).unwrap();
        assert!((mid.precision - 1.0).abs() < 1e-12);
        assert!((mid.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((mid.f - 0.8).abs() < 1e-12);
    }

    #[test]
    fn recall_is_non_increasing_in_threshold() {
        let s = sample_with(&[&[(2, 2), (5, 9), (12, 12), (14, 3)]], 16, 16);
        let pred = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 16 + j) % 100) as f64 / 100.0);
        let tally = accumulate_tallies(&[pred], &[s], &cfg_exactish()).unwrap();
        let (_, _, points) = ods_ois(&tally).unwrap();
        for pair in points.windows(2) {
            assert!(pair[1].recall <= pair[0].recall + 1e-12);
        }
    }

    #[test]
    fn ois_dominates_ods_and_two_image_fixture_is_exact() {
        // image 1: true edge at (2,2) predicted weakly (0.3) plus a strong
        // false positive; image 2: clean confident prediction
        let s1 = sample_with(&[&[(2, 2)]], 16, 16);
        let mut p1 = Array2::<f64>::zeros((16, 16));
        p1[(2, 2)] = 0.3;
        p1[(8, 8)] = 0.9;
        let s2 = sample_with(&[&[(2, 2)]], 16, 16);
        let mut p2 = Array2::<f64>::zeros((16, 16));
        p2[(2, 2)] = 0.9;
        let tally = accumulate_tallies(&[p1, p2], &[s1, s2], &cfg_exactish()).unwrap();
        let (ods, ois, _) = ods_ois(&tally).unwrap();
        // hand enumeration: shared threshold <= 0.3 gives P = 2/3, R = 1,
        // F = 0.8; per-image optima are 2/3 and 1
        assert!((ods - 0.8).abs() < 1e-12, "ods {ods}");
        assert!((ois - 5.0 / 6.0).abs() < 1e-12, "ois {ois}");
        assert!(ods <= ois);
    }

    #[test]
    fn shape_mismatch_names_the_sample() {
        let s = sample_with(&[&[(1, 1)]], 16, 16);
        let pred = Array2::<f64>::zeros((8, 8));
        let err = accumulate_tallies(&[pred], &[s], &cfg_exactish())
            .unwrap_err()
            .to_string();
        assert!(err.contains("fixture"), "{err}");
    }

    #[test]
    fn f_measure_cases() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
        assert!((f_measure(0.6, 0.9) - 0.72).abs() < 1e-12);
    }

    #[test]
    fn tp_bounded_by_both_sides() {
        let s = sample_with(&[&[(4, 4), (4, 5)]], 16, 16);
        let mut pred = Array2::<f64>::zeros((16, 16));
        pred[(4, 4)] = 1.0;
        let tally = accumulate_tallies(&[pred], &[s.clone()], &cfg_exactish()).unwrap();
        for e in &tally.per_image[0] {
            assert!(e.tp_pred <= 1);
            assert!(e.tp_gt + e.fn_ == 2);
        }
    }
}
