//! Per-position channel normalization: at every (batch, y, x) location the
//! channel vector is standardized and then scaled/shifted per channel.

use std::rc::Rc;

use ndarray::{Array1, Array4, Ix4};

use super::{Tape, Var};

impl Tape {
    /// `x (B,C,H,W)`, `gamma (C)`, `beta (C)`.
    pub fn layer_norm_channels(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let (bn, c, h, w) = x4.dim();
        assert_eq!(gv.len(), c, "layer_norm: gamma length");
        assert_eq!(bv.len(), c, "layer_norm: beta length");

        let mut y = Array4::<f64>::zeros((bn, c, h, w));
        // save the normalized values and inverse std for backward
        let mut xhat = Array4::<f64>::zeros((bn, c, h, w));
        let mut istd = ndarray::Array3::<f64>::zeros((bn, h, w));
        for bi in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    let mut mean = 0.0;
                    for ci in 0..c {
                        mean += x4[(bi, ci, i, j)];
                    }
                    mean /= c as f64;
                    let mut var = 0.0;
                    for ci in 0..c {
                        let d = x4[(bi, ci, i, j)] - mean;
                        var += d * d;
                    }
                    var /= c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    istd[(bi, i, j)] = inv;
                    for ci in 0..c {
                        let xh = (x4[(bi, ci, i, j)] - mean) * inv;
                        xhat[(bi, ci, i, j)] = xh;
                        y[(bi, ci, i, j)] = gv[[ci]] * xh + bv[[ci]];
                    }
                }
            }
        }

        let gvc = Rc::clone(&gv);
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((bn, c, h, w));
                let mut dgamma = Array1::<f64>::zeros(c);
                let mut dbeta = Array1::<f64>::zeros(c);
                for bi in 0..bn {
                    for i in 0..h {
                        for j in 0..w {
                            let inv = istd[(bi, i, j)];
                            let mut sum_dxh = 0.0;
                            let mut sum_dxh_xh = 0.0;
                            for ci in 0..c {
                                let go = g4[(bi, ci, i, j)];
                                let xh = xhat[(bi, ci, i, j)];
                                dgamma[ci] += go * xh;
                                dbeta[ci] += go;
                                let dxh = go * gvc[[ci]];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * xh;
                            }
                            let n = c as f64;
                            for ci in 0..c {
                                let dxh = g4[(bi, ci, i, j)] * gvc[[ci]];
                                let xh = xhat[(bi, ci, i, j)];
                                dx[(bi, ci, i, j)] =
                                    inv * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                            }
                        }
                    }
                }
                vec![
                    (x.0, dx.into_dyn()),
                    (gamma.0, dgamma.into_dyn()),
                    (beta.0, dbeta.into_dyn()),
                ]
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn normalizes_each_position() {
        let x = randn(&[1, 8, 3, 3], 40);
        let t = Tape::new();
        let xv = t.constant(x);
        let g = t.constant(ArrayD::ones(IxDyn(&[8])));
        let b = t.constant(ArrayD::zeros(IxDyn(&[8])));
        let y = t.layer_norm_channels(xv, g, b, 1e-6);
        let yv = t.value(y);
        let y4 = yv.view().into_dimensionality::<Ix4>().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let col: Vec<f64> = (0..8).map(|c| y4[(0, c, i, j)]).collect();
                let mean: f64 = col.iter().sum::<f64>() / 8.0;
                let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let x0 = randn(&[2, 5, 2, 3], 41);
        let g0 = randn(&[5], 42);
        let b0 = randn(&[5], 43);
        let run = |x: &ArrayD<f64>, g: &ArrayD<f64>, b: &ArrayD<f64>| {
            let t = Tape::new();
            let xv = t.constant(x.clone());
            let gv = t.constant(g.clone());
            let bv = t.constant(b.clone());
            let y = t.layer_norm_channels(xv, gv, bv, 1e-6);
            let y2 = t.sigmoid(y);
            let loss = t.sum_all(y2);
            let l = t.scalar(loss);
            let grads = t.backward(loss);
            (
                l,
                grads[xv.0].clone().unwrap(),
                grads[gv.0].clone().unwrap(),
                grads[bv.0].clone().unwrap(),
            )
        };
        let (_, gx, gg, gb) = run(&x0, &g0, &b0);
        gradcheck::check(&x0, &gx, |x| run(x, &g0, &b0).0, 1e-4);
        gradcheck::check(&g0, &gg, |g| run(&x0, g, &b0).0, 1e-5);
        gradcheck::check(&b0, &gb, |b| run(&x0, &g0, b).0, 1e-5);
    }
}
