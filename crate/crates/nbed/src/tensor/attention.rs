//! Fused multi-head self-attention over the flattened spatial grid.
//! Tokens are the (H x W) positions, features are the channels. No
//! positional embedding; the convolutional stages ahead of it supply
//! position. The backward closure recomputes the attention weights
//! instead of caching them, keeping inference memory flat.

use std::rc::Rc;

use ndarray::{s, Array1, Array2, Array4, Ix4};

use super::linalg::matmul;
use super::{Tape, Var};

struct AttnDims {
    c: usize,
    h: usize,
    w: usize,
    n: usize,
    heads: usize,
    d: usize,
}

/// Tokens (N, C) for one batch element.
fn to_tokens(x: &ndarray::ArrayViewD<f64>, bi: usize, dims: &AttnDims) -> Array2<f64> {
    let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
    let mut t = Array2::<f64>::zeros((dims.n, dims.c));
    for ci in 0..dims.c {
        for i in 0..dims.h {
            for j in 0..dims.w {
                t[(i * dims.w + j, ci)] = x4[(bi, ci, i, j)];
            }
        }
    }
    t
}

fn qkv_of(tokens: &Array2<f64>, wqkv: &Array2<f64>, bqkv: &Array1<f64>) -> Array2<f64> {
    let mut qkv = matmul(tokens.view(), wqkv.t());
    for mut row in qkv.rows_mut() {
        row += bqkv;
    }
    qkv
}

/// Row-wise softmax of Q K^T / sqrt(d) for one head.
fn attn_weights(q: &ndarray::ArrayView2<f64>, k: &ndarray::ArrayView2<f64>, d: usize) -> Array2<f64> {
    let mut scores = matmul(q.view(), k.t());
    let scale = 1.0 / (d as f64).sqrt();
    scores.mapv_inplace(|v| v * scale);
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

impl Tape {
    /// `x (B,C,H,W)`, `wqkv (3C,C)`, `bqkv (3C)`, `wproj (C,C)`, `bproj (C)`.
    /// `head_dim` must divide C.
    pub fn self_attention(
        &self,
        x: Var,
        wqkv: Var,
        bqkv: Var,
        wproj: Var,
        bproj: Var,
        head_dim: usize,
    ) -> Var {
        let xv = self.value(x);
        let s4 = xv.shape().to_vec();
        let (bn, c, h, w) = (s4[0], s4[1], s4[2], s4[3]);
        assert!(c % head_dim == 0, "self_attention: head_dim must divide C");
        let dims = AttnDims {
            c,
            h,
            w,
            n: h * w,
            heads: c / head_dim,
            d: head_dim,
        };
        let wqkv_v = self.value(wqkv);
        let bqkv_v = self.value(bqkv);
        let wproj_v = self.value(wproj);
        let bproj_v = self.value(bproj);
        let wqkv_m = wqkv_v.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let bqkv_a = bqkv_v.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let wproj_m = wproj_v.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let bproj_a = bproj_v.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();

        let mut y = Array4::<f64>::zeros((bn, c, h, w));
        for bi in 0..bn {
            let tokens = to_tokens(&xv.view(), bi, &dims);
            let qkv = qkv_of(&tokens, &wqkv_m, &bqkv_a);
            let mut out = Array2::<f64>::zeros((dims.n, c));
            for hd in 0..dims.heads {
                let (q0, k0, v0) = (hd * dims.d, c + hd * dims.d, 2 * c + hd * dims.d);
                let q = qkv.slice(s![.., q0..q0 + dims.d]);
                let k = qkv.slice(s![.., k0..k0 + dims.d]);
                let v = qkv.slice(s![.., v0..v0 + dims.d]);
                let a = attn_weights(&q, &k, dims.d);
                let o = matmul(a.view(), v.view());
                out.slice_mut(s![.., hd * dims.d..(hd + 1) * dims.d]).assign(&o);
            }
            let mut proj = matmul(out.view(), wproj_m.t());
            for mut row in proj.rows_mut() {
                row += &bproj_a;
            }
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        y[(bi, ci, i, j)] = proj[(i * dims.w + j, ci)];
                    }
                }
            }
        }

        let xc = Rc::clone(&xv);
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((bn, c, h, w));
                let mut dwqkv = Array2::<f64>::zeros((3 * c, c));
                let mut dbqkv = Array1::<f64>::zeros(3 * c);
                let mut dwproj = Array2::<f64>::zeros((c, c));
                let mut dbproj = Array1::<f64>::zeros(c);
                for bi in 0..bn {
                    // recompute forward intermediates
                    let tokens = to_tokens(&xc.view(), bi, &dims);
                    let qkv = qkv_of(&tokens, &wqkv_m, &bqkv_a);
                    let mut out = Array2::<f64>::zeros((dims.n, c));
                    let mut attns = Vec::with_capacity(dims.heads);
                    for hd in 0..dims.heads {
                        let (q0, k0, v0) = (hd * dims.d, c + hd * dims.d, 2 * c + hd * dims.d);
                        let q = qkv.slice(s![.., q0..q0 + dims.d]);
                        let k = qkv.slice(s![.., k0..k0 + dims.d]);
                        let v = qkv.slice(s![.., v0..v0 + dims.d]);
                        let a = attn_weights(&q, &k, dims.d);
                        let o = matmul(a.view(), v.view());
                        out.slice_mut(s![.., hd * dims.d..(hd + 1) * dims.d]).assign(&o);
                        attns.push(a);
                    }
                    // grad of output tokens
                    let mut dy_tok = Array2::<f64>::zeros((dims.n, c));
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dy_tok[(i * dims.w + j, ci)] = g4[(bi, ci, i, j)];
                            }
                        }
                    }
                    dwproj += &matmul(dy_tok.t(), out.view());
                    for row in dy_tok.rows() {
                        dbproj += &row;
                    }
                    let dout = matmul(dy_tok.view(), wproj_m.view());
                    let mut dqkv = Array2::<f64>::zeros((dims.n, 3 * c));
                    let scale = 1.0 / (dims.d as f64).sqrt();
                    for hd in 0..dims.heads {
                        let (q0, k0, v0) = (hd * dims.d, c + hd * dims.d, 2 * c + hd * dims.d);
                        let q = qkv.slice(s![.., q0..q0 + dims.d]).to_owned();
                        let k = qkv.slice(s![.., k0..k0 + dims.d]).to_owned();
                        let v = qkv.slice(s![.., v0..v0 + dims.d]).to_owned();
                        let a = &attns[hd];
                        let do_h = dout.slice(s![.., hd * dims.d..(hd + 1) * dims.d]);
                        let dv = matmul(a.t(), do_h.view());
                        let da = matmul(do_h.view(), v.t());
                        // softmax Jacobian per row
                        let mut ds = Array2::<f64>::zeros((dims.n, dims.n));
                        for r in 0..dims.n {
                            let arow = a.row(r);
                            let darow = da.row(r);
                            let dot: f64 = arow.iter().zip(darow.iter()).map(|(a, d)| a * d).sum();
                            for cix in 0..dims.n {
                                ds[(r, cix)] = arow[cix] * (darow[cix] - dot);
                            }
                        }
                        ds.mapv_inplace(|v| v * scale);
                        let dq = matmul(ds.view(), k.view());
                        let dk = matmul(ds.t(), q.view());
                        dqkv.slice_mut(s![.., q0..q0 + dims.d]).assign(&dq);
                        dqkv.slice_mut(s![.., k0..k0 + dims.d]).assign(&dk);
                        dqkv.slice_mut(s![.., v0..v0 + dims.d]).assign(&dv);
                    }
                    dwqkv += &matmul(dqkv.t(), tokens.view());
                    for row in dqkv.rows() {
                        dbqkv += &row;
                    }
                    let dtok = matmul(dqkv.view(), wqkv_m.view());
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx[(bi, ci, i, j)] = dtok[(i * dims.w + j, ci)];
                            }
                        }
                    }
                }
                vec![
                    (x.0, dx.into_dyn()),
                    (wqkv.0, dwqkv.into_dyn()),
                    (bqkv.0, dbqkv.into_dyn()),
                    (wproj.0, dwproj.into_dyn()),
                    (bproj.0, dbproj.into_dyn()),
                ]
            })),
        )
    }
}
