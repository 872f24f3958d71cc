//! Annotator-robust weighted cross-entropy.
//!
//! Per image: pixels with consensus ground truth above the annotation
//! threshold `eta` are positives, pixels with ground truth exactly 0 are
//! negatives, everything in between is ignored. Positives are weighted by
//! `alpha = |Y+|/|Y|`, negatives by `beta = lambda * |Y-|/|Y|`, with
//! `|Y| = |Y+| + |Y-|` counted per image.

use ndarray::{Array2, ArrayD, ArrayViewD, Ix2, Ix4};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Predictions are clamped to `[EPS, 1-EPS]` before the logarithms.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    MeanOverPixels,
}

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Weight of negative samples relative to positives.
    pub lambda: f64,
    /// Annotation-confidence threshold; ground truth in (0, eta] is ignored.
    pub eta: f64,
    pub reduction: Reduction,
    /// Swap the weighting so positives get `|Y-|/|Y|` and negatives
    /// `lambda * |Y+|/|Y|` (the convention of the original RCF code).
    pub rcf_convention: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.1,
            eta: 0.3,
            reduction: Reduction::Sum,
            rcf_convention: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("loss.lambda must be > 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Config(format!("loss.eta must be in [0,1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// Per-image loss sum and gradient w.r.t. the (unclamped) predictions.
pub fn wce_image(pred: &Array2<f64>, gt: &Array2<f64>, cfg: &LossConfig) -> (f64, Array2<f64>) {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &y in gt.iter() {
        if y > cfg.eta {
            pos += 1;
        } else if y == 0.0 {
            neg += 1;
        }
    }
    let total = pos + neg;
    let mut grad = Array2::<f64>::zeros(pred.raw_dim());
    if total == 0 {
        // every pixel sits in the dead zone
        return (0.0, grad);
    }
    let (alpha, beta) = if cfg.rcf_convention {
        (neg as f64 / total as f64, cfg.lambda * pos as f64 / total as f64)
    } else {
        (pos as f64 / total as f64, cfg.lambda * neg as f64 / total as f64)
    };
    let mut loss = 0.0;
    for ((l, &p), &y) in grad.iter_mut().zip(pred.iter()).zip(gt.iter()) {
        let pc = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
        let inside = (CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&p);
        if y > cfg.eta {
            loss += -alpha * pc.ln();
            if inside {
                *l = -alpha / pc;
            }
        } else if y == 0.0 {
            loss += -beta * (1.0 - pc).ln();
            if inside {
                *l = beta / (1.0 - pc);
            }
        }
    }
    (loss, grad)
}

fn as_images(a: &ArrayViewD<f64>) -> Result<Vec<Array2<f64>>> {
    match a.ndim() {
        2 => Ok(vec![a.view().into_dimensionality::<Ix2>().unwrap().to_owned()]),
        4 => {
            let a4 = a.view().into_dimensionality::<Ix4>().unwrap();
            if a4.dim().1 != 1 {
                return Err(Error::Shape(format!(
                    "loss expects single-channel maps, got {} channels",
                    a4.dim().1
                )));
            }
            Ok((0..a4.dim().0)
                .map(|b| {
                    a4.index_axis(ndarray::Axis(0), b)
                        .index_axis(ndarray::Axis(0), 0)
                        .to_owned()
                })
                .collect())
        }
        n => Err(Error::Shape(format!("loss expects 2-d or 4-d input, got {n}-d"))),
    }
}

/// Loss over a single map or a `(B,1,H,W)` batch; `alpha`/`beta` are
/// computed per image, the reduction is applied last.
pub fn wce_loss(pred: &ArrayD<f64>, gt: &ArrayD<f64>, cfg: &LossConfig) -> Result<f64> {
    Ok(wce_loss_with_grad(pred, gt, cfg)?.0)
}

pub fn wce_loss_with_grad(
    pred: &ArrayD<f64>,
    gt: &ArrayD<f64>,
    cfg: &LossConfig,
) -> Result<(f64, ArrayD<f64>)> {
    cfg.validate()?;
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "loss: prediction shape {:?} != ground truth shape {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let preds = as_images(&pred.view())?;
    let gts = as_images(&gt.view())?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    let mut pixels = 0usize;
    for (p, y) in preds.iter().zip(gts.iter()) {
        let (l, g) = wce_image(p, y, cfg);
        total += l;
        pixels += p.len();
        grads.push(g);
    }
    let scale = match cfg.reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanOverPixels => 1.0 / pixels as f64,
    };
    let mut grad = ArrayD::<f64>::zeros(pred.raw_dim());
    if pred.ndim() == 2 {
        grad.assign(&grads[0]);
    } else {
        let mut g4 = grad.view_mut().into_dimensionality::<Ix4>().unwrap();
        for (b, gi) in grads.iter().enumerate() {
            g4.index_axis_mut(ndarray::Axis(0), b)
                .index_axis_mut(ndarray::Axis(0), 0)
                .assign(gi);
        }
    }
    grad.mapv_inplace(|v| v * scale);
    Ok((total * scale, grad))
}

impl Tape {
    /// Loss as a tape node: `pred` is a recorded variable, `gt` a plain array.
    pub fn wce(&self, pred: Var, gt: &ArrayD<f64>, cfg: &LossConfig) -> Result<Var> {
        let pv = self.value(pred);
        let (loss, grad) = wce_loss_with_grad(&pv, gt, cfg)?;
        Ok(self.push(
            ndarray::arr0(loss).into_dyn(),
            Some(Box::new(move |g| {
                let gs = *g.iter().next().unwrap();
                vec![(pred.0, grad.mapv(|v| v * gs))]
            })),
        ))
    }
}
