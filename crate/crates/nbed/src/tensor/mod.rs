//! A minimal reverse-mode autodiff tape over `ndarray` double-precision
//! arrays. The tape records one node per operation; `backward` replays the
//! recorded closures in reverse order and accumulates gradients for every
//! variable, including leaves.
//!
//! All operations are deterministic: internal parallelism splits work into
//! fixed-size chunks whose boundaries do not depend on the thread count.

mod attention;
pub(crate) mod conv;
pub mod linalg;
mod norm;
mod resize;

pub use resize::bilinear_resize;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn, Slice};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn FnOnce(&ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&self, value: ArrayD<f64>, back: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            back,
        });
        Var(nodes.len() - 1)
    }

    /// Record a leaf variable. Gradients accumulate for leaves and can be
    /// read back from the vector returned by [`Tape::backward`].
    pub fn leaf(&self, value: Rc<ArrayD<f64>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back: None });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.leaf(Rc::new(value))
    }

    pub fn value(&self, v: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Scalar value of a 0-d (or single-element) variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        *val.iter().next().unwrap()
    }

    /// Reverse sweep from `root` (must be scalar-like; seeded with ones).
    /// Returns per-variable gradients indexed by `Var` id. Consumes the
    /// recorded backward closures, so it can only be called once per tape.
    pub fn backward(&self, root: Var) -> Vec<Option<ArrayD<f64>>> {
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            if let Some(back) = nodes[i].back.take() {
                let g = grads[i].clone().unwrap();
                for (parent, contrib) in back(&g) {
                    match &mut grads[parent] {
                        Some(acc) => *acc += &contrib,
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
        }
        grads
    }

    // ----- elementwise ops -----

    pub fn relu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let y = xv.mapv(|v| v.max(0.0));
        let xc = Rc::clone(&xv);
        self.push(
            y,
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                dx.zip_mut_with(&xc, |d, &v| {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                });
                vec![(x.0, dx)]
            })),
        )
    }

    /// Smooth GELU (tanh form).
    pub fn gelu(&self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let xv = self.value(x);
        let y = xv.mapv(|v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()));
        let xc = Rc::clone(&xv);
        self.push(
            y,
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                dx.zip_mut_with(&xc, |d, &v| {
                    let u = C * (v + A * v * v * v);
                    let t = u.tanh();
                    let du = C * (1.0 + 3.0 * A * v * v);
                    *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                });
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let xv = self.value(x);
        let y = xv.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let yc = y.clone();
        self.push(
            y,
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                dx.zip_mut_with(&yc, |d, &s| *d *= s * (1.0 - s));
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let y = &*av + &*bv;
        self.push(
            y,
            Some(Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.clone())])),
        )
    }

    pub fn mul_elem(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul_elem: shape mismatch");
        let y = &*av * &*bv;
        self.push(
            y,
            Some(Box::new(move |g| {
                vec![(a.0, g * &*bv), (b.0, g * &*av)]
            })),
        )
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.sum();
        let shape = xv.shape().to_vec();
        self.push(
            ndarray::arr0(s).into_dyn(),
            Some(Box::new(move |g| {
                let gs = *g.iter().next().unwrap();
                vec![(x.0, ArrayD::from_elem(IxDyn(&shape), gs))]
            })),
        )
    }

    pub fn scale(&self, x: Var, k: f64) -> Var {
        let y = self.value(x).mapv(|v| v * k);
        self.push(y, Some(Box::new(move |g| vec![(x.0, g.mapv(|v| v * k))])))
    }

    /// Concatenate along the channel axis (axis 1 of a 4-d tensor).
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<ArrayD<f64>>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_channels");
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let chans: Vec<usize> = vals.iter().map(|v| v.shape()[1]).collect();
        self.push(
            y,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut c0 = 0;
                for (id, c) in ids.iter().zip(&chans) {
                    let part = g
                        .slice_axis(Axis(1), Slice::from(c0..c0 + c))
                        .to_owned();
                    out.push((*id, part));
                    c0 += c;
                }
                out
            })),
        )
    }

    /// Crop a (B, C, H, W) tensor to `h x w` starting at the top-left corner.
    pub fn crop2d(&self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        let full = xv.shape().to_vec();
        assert!(h <= full[2] && w <= full[3], "crop2d: target too large");
        let y = xv
            .slice_axis(Axis(2), Slice::from(0..h))
            .slice_axis(Axis(3), Slice::from(0..w))
            .to_owned();
        self.push(
            y,
            Some(Box::new(move |g| {
                let mut dx = ArrayD::zeros(IxDyn(&full));
                dx.slice_axis_mut(Axis(2), Slice::from(0..h))
                    .slice_axis_mut(Axis(3), Slice::from(0..w))
                    .assign(g);
                vec![(x.0, dx)]
            })),
        )
    }

    /// 2x2 max pooling, stride 2. Requires even spatial dimensions.
    pub fn maxpool2x2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2x2: odd spatial size");
        let (ho, wo) = (h / 2, w / 2);
        let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut y = ndarray::Array4::<f64>::zeros((b, c, ho, wo));
        let mut arg: Vec<u32> = vec![0; b * c * ho * wo];
        {
            let mut idx = 0;
            for bi in 0..b {
                for ci in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut best = f64::NEG_INFINITY;
                            let mut besta = 0u32;
                            for (a, (di, dj)) in
                                [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                            {
                                let v = x4[(bi, ci, 2 * i + di, 2 * j + dj)];
                                if v > best {
                                    best = v;
                                    besta = a as u32;
                                }
                            }
                            y[(bi, ci, i, j)] = best;
                            arg[idx] = besta;
                            idx += 1;
                        }
                    }
                }
            }
        }
        let shape_in = s.to_vec();
        self.push(
            y.into_dyn(),
            Some(Box::new(move |g| {
                let mut dx = ArrayD::<f64>::zeros(IxDyn(&shape_in));
                let mut dx4 = dx.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let mut idx = 0;
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let a = arg[idx] as usize;
                                idx += 1;
                                let (di, dj) = [(0, 0), (0, 1), (1, 0), (1, 1)][a];
                                dx4[(bi, ci, 2 * i + di, 2 * j + dj)] += g4[(bi, ci, i, j)];
                            }
                        }
                    }
                }
                vec![(x.0, dx)]
            })),
        )
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    
    use ndarray::{ArrayD, Dimension};

    /// Central finite differences of `f` at `x0`, compared against `analytic`.
    /// `f` maps the perturbed leaf value to a scalar loss.
    pub fn check<F>(x0: &ArrayD<f64>, analytic: &ArrayD<f64>, mut f: F, tol: f64)
    where
        F: FnMut(&ArrayD<f64>) -> f64,
    {
        let eps = 1e-5;
        for idx in ndarray::indices(x0.raw_dim()) {
            let mut xp = x0.clone();
            xp[&idx] += eps;
            let lp = f(&xp);
            let mut xm = x0.clone();
            xm[&idx] -= eps;
            let lm = f(&xm);
            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic[&idx];
            let denom = an.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((an - fd) / denom).abs() < tol,
                "gradcheck failed at {:?}: analytic {an}, fd {fd}",
                idx.slice()
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, Dimension, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn sum_loss(t: &Tape, v: Var) -> Var {
        // weighted sum so gradients are not all ones
        let val = t.value(v);
        let w: ArrayD<f64> =
            ArrayD::from_shape_fn(val.raw_dim(), |ix| (ix.slice().iter().sum::<usize>() % 5) as f64 * 0.3 + 0.1);
        let wv = t.constant(w);
        let prod = t.mul_elem(v, wv);
        t.sum_all(prod)
    }

    fn scalar_of<F>(x0: &ArrayD<f64>, build: F) -> (f64, ArrayD<f64>)
    where
        F: Fn(&Tape, Var) -> Var,
    {
        let t = Tape::new();
        let x = t.constant(x0.clone());
        let loss = build(&t, x);
        let l = t.scalar(loss);
        let grads = t.backward(loss);
        (l, grads[x.0].clone().unwrap())
    }

    fn check_op<F>(shape: &[usize], seed: u64, build: F)
    where
        F: Fn(&Tape, Var) -> Var + Copy,
    {
        let x0 = randn(shape, seed);
        let (_, g) = scalar_of(&x0, build);
        gradcheck::check(&x0, &g, |x| scalar_of(x, build).0, 1e-5);
    }

    #[test]
    fn elementwise_grads() {
        check_op(&[2, 3, 4, 4], 1, |t, x| {
            let y = t.gelu(x);
            sum_loss(t, y)
        });
        check_op(&[2, 3, 4, 4], 2, |t, x| {
            let y = t.sigmoid(x);
            sum_loss(t, y)
        });
        check_op(&[1, 2, 4, 4], 3, |t, x| {
            let y = t.scale(x, 1.7);
            let z = t.add(y, x);
            sum_loss(t, z)
        });
    }

    #[test]
    fn relu_grad_away_from_kink() {
        // shift values away from zero so finite differences are valid
        let mut x0 = randn(&[2, 2, 3, 3], 4);
        x0.mapv_inplace(|v| if v.abs() < 0.2 { v + 0.5 } else { v });
        let build = |t: &Tape, x: Var| {
            let y = t.relu(x);
            sum_loss(t, y)
        };
        let (_, g) = scalar_of(&x0, build);
        gradcheck::check(&x0, &g, |x| scalar_of(x, build).0, 1e-5);
    }

    #[test]
    fn concat_crop_pool_grads() {
        check_op(&[1, 3, 4, 6], 5, |t, x| {
            let y = t.concat_channels(&[x, x]);
            let z = t.crop2d(y, 3, 5);
            sum_loss(t, z)
        });
        // maxpool: margins between candidates keep FD off the ties
        let x0 = randn(&[1, 2, 4, 4], 6).mapv(|v| v * 3.0);
        let build = |t: &Tape, x: Var| {
            let y = t.maxpool2x2(x);
            sum_loss(t, y)
        };
        let (_, g) = scalar_of(&x0, build);
        gradcheck::check(&x0, &g, |x| scalar_of(x, build).0, 1e-4);
    }

    #[test]
    fn grad_accumulates_over_fanout() {
        let t = Tape::new();
        let x = t.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 1.5));
        let y = t.add(x, x);
        let loss = t.sum_all(y);
        let grads = t.backward(loss);
        let gx = grads[x.0].as_ref().unwrap();
        assert!(gx.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }
}
