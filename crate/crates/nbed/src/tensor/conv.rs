//! 2-d convolution (zero padding) and depthwise convolution, with exact
//! reverse-mode gradients. Dense convolutions go through im2col + matmul;
//! the column matrix is rebuilt in the backward closure instead of being
//! kept alive, which keeps inference memory flat.

use std::rc::Rc;

use ndarray::{Array2, Array4, ArrayD, ArrayView3, ArrayView4, Ix4};

use super::linalg::matmul;
use super::{Tape, Var};

fn im2col(x: ArrayView3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::<f64>::zeros((ci * k * k, ho * wo));
    for c in 0..ci {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let mut out_idx = 0;
                for i in 0..ho {
                    let src_i = (i * stride + ki) as isize - pad as isize;
                    if src_i < 0 || src_i >= h as isize {
                        out_idx += wo;
                        continue;
                    }
                    for j in 0..wo {
                        let src_j = (j * stride + kj) as isize - pad as isize;
                        if src_j >= 0 && src_j < w as isize {
                            col[(row, out_idx)] = x[(c, src_i as usize, src_j as usize)];
                        }
                        out_idx += 1;
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    dcol: &Array2<f64>,
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut dx = ndarray::Array3::<f64>::zeros((ci, h, w));
    for c in 0..ci {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let mut out_idx = 0;
                for i in 0..ho {
                    let src_i = (i * stride + ki) as isize - pad as isize;
                    if src_i < 0 || src_i >= h as isize {
                        out_idx += wo;
                        continue;
                    }
                    for j in 0..wo {
                        let src_j = (j * stride + kj) as isize - pad as isize;
                        if src_j >= 0 && src_j < w as isize {
                            dx[(c, src_i as usize, src_j as usize)] += dcol[(row, out_idx)];
                        }
                        out_idx += 1;
                    }
                }
            }
        }
    }
    dx
}

impl Tape {
    /// Convolution of `x (B,Ci,H,W)` with `w (Co,Ci,k,k)` and bias `b (Co)`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let x4 = xv.view().into_dimensionality::<Ix4>().expect("conv2d: x rank");
        let w4 = wv.view().into_dimensionality::<Ix4>().expect("conv2d: w rank");
        let (bn, ci, h, wid) = x4.dim();
        let (co, wci, k, k2) = w4.dim();
        assert_eq!(k, k2);
        assert_eq!(
            ci, wci,
            "conv2d: input has {ci} channels, kernel expects {wci}"
        );
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wid + 2 * pad - k) / stride + 1;
        let w2 = w4.to_shape((co, ci * k * k)).unwrap().to_owned();
        let bias = b.map(|bv| self.value(bv));

        let mut y = Array4::<f64>::zeros((bn, co, ho, wo));
        for bi in 0..bn {
            let col = if k == 1 && stride == 1 && pad == 0 {
                x4.index_axis(ndarray::Axis(0), bi)
                    .to_shape((ci, ho * wo))
                    .unwrap()
                    .to_owned()
            } else {
                im2col(x4.index_axis(ndarray::Axis(0), bi), k, stride, pad)
            };
            let mut yb = matmul(w2.view(), col.view());
            if let Some(bias) = &bias {
                for c in 0..co {
                    let bc = bias[[c]];
                    yb.row_mut(c).mapv_inplace(|v| v + bc);
                }
            }
            y.index_axis_mut(ndarray::Axis(0), bi)
                .assign(&yb.to_shape((co, ho, wo)).unwrap());
        }

        let xc = Rc::clone(&xv);
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let x4 = xc.view().into_dimensionality::<Ix4>().unwrap();
                let mut dw2 = Array2::<f64>::zeros((co, ci * k * k));
                let mut dx = Array4::<f64>::zeros((bn, ci, h, wid));
                for bi in 0..bn {
                    let gb = g4
                        .index_axis(ndarray::Axis(0), bi)
                        .to_shape((co, ho * wo))
                        .unwrap()
                        .to_owned();
                    let col = if k == 1 && stride == 1 && pad == 0 {
                        x4.index_axis(ndarray::Axis(0), bi)
                            .to_shape((ci, ho * wo))
                            .unwrap()
                            .to_owned()
                    } else {
                        im2col(x4.index_axis(ndarray::Axis(0), bi), k, stride, pad)
                    };
                    dw2 += &matmul(gb.view(), col.t());
                    let dcol = matmul(w2.t(), gb.view());
                    if k == 1 && stride == 1 && pad == 0 {
                        dx.index_axis_mut(ndarray::Axis(0), bi)
                            .assign(&dcol.to_shape((ci, h, wid)).unwrap());
                    } else {
                        dx.index_axis_mut(ndarray::Axis(0), bi)
                            .assign(&col2im(&dcol, ci, h, wid, k, stride, pad));
                    }
                }
                let mut out = vec![
                    (x.0, dx.into_dyn()),
                    (
                        w.0,
                        dw2.to_shape((co, ci, k, k)).unwrap().to_owned().into_dyn(),
                    ),
                ];
                if let Some(bv) = b {
                    let mut db = ndarray::Array1::<f64>::zeros(co);
                    for c in 0..co {
                        db[c] = g4.index_axis(ndarray::Axis(1), c).sum();
                    }
                    out.push((bv.0, db.into_dyn()));
                }
                out
            })),
        )
    }

    /// Depthwise convolution: `x (B,C,H,W)` with `w (C,1,k,k)`, stride 1,
    /// zero padding `k/2` (shape preserving).
    pub fn depthwise_conv(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let w4 = wv.view().into_dimensionality::<Ix4>().unwrap();
        let (bn, c, h, wid) = x4.dim();
        let (wc, one, k, _) = w4.dim();
        assert_eq!(one, 1);
        assert_eq!(c, wc, "depthwise_conv: channel mismatch");
        let pad = k / 2;
        let bias = b.map(|bv| self.value(bv));

        let mut y = Array4::<f64>::zeros((bn, c, h, wid));
        dw_forward(&x4, &w4, bias.as_deref(), &mut y, pad);

        let xc = Rc::clone(&xv);
        let wcl = Rc::clone(&wv);
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let x4 = xc.view().into_dimensionality::<Ix4>().unwrap();
                let w4 = wcl.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((bn, c, h, wid));
                let mut dw = Array4::<f64>::zeros((c, 1, k, k));
                for bi in 0..bn {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..wid {
                                let go = g4[(bi, ci, i, j)];
                                if go == 0.0 {
                                    continue;
                                }
                                for ki in 0..k {
                                    let si = i as isize + ki as isize - pad as isize;
                                    if si < 0 || si >= h as isize {
                                        continue;
                                    }
                                    for kj in 0..k {
                                        let sj = j as isize + kj as isize - pad as isize;
                                        if sj < 0 || sj >= wid as isize {
                                            continue;
                                        }
                                        dx[(bi, ci, si as usize, sj as usize)] +=
                                            go * w4[(ci, 0, ki, kj)];
                                        dw[(ci, 0, ki, kj)] +=
                                            go * x4[(bi, ci, si as usize, sj as usize)];
                                    }
                                }
                            }
                        }
                    }
                }
                let mut out = vec![(x.0, dx.into_dyn()), (w.0, dw.into_dyn())];
                if let Some(bv) = b {
                    let mut db = ndarray::Array1::<f64>::zeros(c);
                    for ci in 0..c {
                        db[ci] = g4.index_axis(ndarray::Axis(1), ci).sum();
                    }
                    out.push((bv.0, db.into_dyn()));
                }
                out
            })),
        )
    }
}

fn dw_forward(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    bias: Option<&ArrayD<f64>>,
    y: &mut Array4<f64>,
    pad: usize,
) {
    let (bn, c, h, wid) = x.dim();
    let k = w.dim().2;
    for bi in 0..bn {
        for ci in 0..c {
            let b0 = bias.map_or(0.0, |b| b[[ci]]);
            for i in 0..h {
                for j in 0..wid {
                    let mut acc = b0;
                    for ki in 0..k {
                        let si = i as isize + ki as isize - pad as isize;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let sj = j as isize + kj as isize - pad as isize;
                            if sj < 0 || sj >= wid as isize {
                                continue;
                            }
                            acc += w[(ci, 0, ki, kj)] * x[(bi, ci, si as usize, sj as usize)];
                        }
                    }
                    y[(bi, ci, i, j)] = acc;
                }
            }
        }
    }
}

/// Direct nested-loop convolution; the independent oracle the im2col path
/// is tested against. Test-only.
#[cfg(test)]
pub(crate) fn naive_conv(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    b: Option<&ArrayD<f64>>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let x = x.view().into_dimensionality::<Ix4>().unwrap();
    let w = w.view().into_dimensionality::<Ix4>().unwrap();
    let (bn, ci, h, wid) = x.dim();
    let (co, _, k, _) = w.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wid + 2 * pad - k) / stride + 1;
    let mut y = Array4::<f64>::zeros((bn, co, ho, wo));
    for bi in 0..bn {
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[[o]]);
                    for c in 0..ci {
                        for ki in 0..k {
                            for kj in 0..k {
                                let si = (i * stride + ki) as isize - pad as isize;
                                let sj = (j * stride + kj) as isize - pad as isize;
                                if si >= 0 && si < h as isize && sj >= 0 && sj < wid as isize {
                                    acc += w[(o, c, ki, kj)]
                                        * x[(bi, c, si as usize, sj as usize)];
                                }
                            }
                        }
                    }
                    y[(bi, o, i, j)] = acc;
                }
            }
        }
    }
    y
}
