//! Adam with bias correction and decoupled weight decay, supporting a
//! per-parameter learning rate (pretrained arrays train slower).

use ndarray::ArrayD;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: impl Iterator<Item = Vec<usize>>) -> Self {
        let zeros: Vec<ArrayD<f64>> = shapes
            .map(|s| ArrayD::zeros(ndarray::IxDyn(&s)))
            .collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One optimizer step over all parameters. `lrs[i]` is the learning rate
/// for parameter `i`; weight decay is applied outside the moments as an
/// additional `-lr * wd * param` term.
pub fn adam_step(
    params: &mut [ArrayD<f64>],
    grads: &[ArrayD<f64>],
    state: &mut AdamState,
    lrs: &[f64],
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != lrs.len() {
        return Err(Error::Config(format!(
            "adam_step: {} params, {} grads, {} state slots, {} lrs",
            params.len(),
            grads.len(),
            state.m.len(),
            lrs.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, g), (m, v)), &lr) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .zip(lrs)
    {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "adam_step: parameter shape {:?} != gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
        m.zip_mut_with(g, |mi, &gi| *mi = BETA1 * *mi + (1.0 - BETA1) * gi);
        v.zip_mut_with(g, |vi, &gi| *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi);
        ndarray::Zip::from(&mut *p)
            .and(&*m)
            .and(&*v)
            .for_each(|pi, &mi, &vi| {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= lr * (mhat / (vhat.sqrt() + EPS) + weight_decay * *pi);
            });
    }
    Ok(())
}
