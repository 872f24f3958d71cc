//! Bilinear upsampling. The tape op doubles the spatial size (the only
//! factor the decoders need); `bilinear_resize` is a free function for
//! arbitrary target sizes used by inference-time rescaling.

use ndarray::{Array2, Array4, ArrayView2, Ix4};

use super::{Tape, Var};

/// Source coordinate for an output index under half-pixel alignment.
fn src_coord(o: usize, scale: f64) -> f64 {
    (o as f64 + 0.5) * scale - 0.5
}

fn taps(o: usize, scale: f64, n: usize) -> (usize, usize, f64) {
    let s = src_coord(o, scale).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

impl Tape {
    /// `x (B,C,H,W)` -> `(B,C,2H,2W)`.
    pub fn upsample2x(&self, x: Var) -> Var {
        let xv = self.value(x);
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let (bn, c, h, w) = x4.dim();
        let (ho, wo) = (2 * h, 2 * w);
        let vtaps: Vec<(usize, usize, f64)> = (0..ho).map(|o| taps(o, 0.5, h)).collect();
        let htaps: Vec<(usize, usize, f64)> = (0..wo).map(|o| taps(o, 0.5, w)).collect();
        let mut y = Array4::<f64>::zeros((bn, c, ho, wo));
        for bi in 0..bn {
            for ci in 0..c {
                for i in 0..ho {
                    let (i0, i1, ti) = vtaps[i];
                    for j in 0..wo {
                        let (j0, j1, tj) = htaps[j];
                        y[(bi, ci, i, j)] = (1.0 - ti)
                            * ((1.0 - tj) * x4[(bi, ci, i0, j0)] + tj * x4[(bi, ci, i0, j1)])
                            + ti * ((1.0 - tj) * x4[(bi, ci, i1, j0)]
                                + tj * x4[(bi, ci, i1, j1)]);
                    }
                }
            }
        }
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((bn, c, h, w));
                for bi in 0..bn {
                    for ci in 0..c {
                        for i in 0..ho {
                            let (i0, i1, ti) = vtaps[i];
                            for j in 0..wo {
                                let (j0, j1, tj) = htaps[j];
                                let go = g4[(bi, ci, i, j)];
                                dx[(bi, ci, i0, j0)] += go * (1.0 - ti) * (1.0 - tj);
                                dx[(bi, ci, i0, j1)] += go * (1.0 - ti) * tj;
                                dx[(bi, ci, i1, j0)] += go * ti * (1.0 - tj);
                                dx[(bi, ci, i1, j1)] += go * ti * tj;
                            }
                        }
                    }
                }
                vec![(x.0, dx.into_dyn())]
            })),
        )
    }
}

/// Bilinear resize of a 2-d map to `(ho, wo)`, half-pixel alignment.
pub fn bilinear_resize(x: ArrayView2<f64>, ho: usize, wo: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let sy = h as f64 / ho as f64;
    let sx = w as f64 / wo as f64;
    let mut y = Array2::<f64>::zeros((ho, wo));
    for i in 0..ho {
        let (i0, i1, ti) = taps(i, sy, h);
        for j in 0..wo {
            let (j0, j1, tj) = taps(j, sx, w);
            y[(i, j)] = (1.0 - ti) * ((1.0 - tj) * x[(i0, j0)] + tj * x[(i0, j1)])
                + ti * ((1.0 - tj) * x[(i1, j0)] + tj * x[(i1, j1)]);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_map_is_preserved() {
        let t = Tape::new();
        let x = t.constant(ArrayD::from_elem(IxDyn(&[1, 2, 3, 5]), 0.7));
        let y = t.upsample2x(x);
        assert!(t.value(y).iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let r = bilinear_resize(Array2::from_elem((4, 6), 0.3).view(), 9, 5);
        assert!(r.iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x0 = ArrayD::from_shape_simple_fn(IxDyn(&[1, 2, 3, 4]), || rng.gen::<f64>());
        let run = |x: &ArrayD<f64>| {
            let t = Tape::new();
            let xv = t.constant(x.clone());
            let y = t.upsample2x(xv);
            let y2 = t.sigmoid(y);
            let loss = t.sum_all(y2);
            let l = t.scalar(loss);
            let grads = t.backward(loss);
            (l, grads[xv.0].clone().unwrap())
        };
        let (_, gx) = run(&x0);
        gradcheck::check(&x0, &gx, |x| run(x).0, 1e-5);
    }

    #[test]
    fn resize_roundtrip_identity() {
        let x = Array2::from_shape_fn((6, 7), |(i, j)| (i * 7 + j) as f64 * 0.01);
        let same = bilinear_resize(x.view(), 6, 7);
        assert!(x.iter().zip(same.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
