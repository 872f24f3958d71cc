//! Tape-graph builders for the network. Everything here operates on
//! [`Var`] handles so the same code serves inference and training.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::config::{DecoderKind, ModelConfig, OperatorKind};
use super::params::ParamStore;

/// Parameters bound to a tape as leaf variables, in registry order.
pub(crate) struct Binding {
    ordered: Vec<(String, Var)>,
    by_name: HashMap<String, Var>,
}

impl Binding {
    pub fn new(tape: &Tape, store: &ParamStore) -> Self {
        let mut ordered = Vec::with_capacity(store.len());
        let mut by_name = HashMap::with_capacity(store.len());
        for (spec, value) in store.iter() {
            let v = tape.leaf(std::rc::Rc::clone(value));
            ordered.push((spec.name.clone(), v));
            by_name.insert(spec.name.clone(), v);
        }
        Self { ordered, by_name }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Collect per-parameter gradients (zeros where a parameter did not
    /// participate in the graph).
    pub fn gradients(
        &self,
        store: &ParamStore,
        grads: &[Option<ArrayD<f64>>],
    ) -> Vec<ArrayD<f64>> {
        self.ordered
            .iter()
            .zip(store.specs())
            .map(|((_, v), spec)| match &grads[v.0] {
                Some(g) => g.clone(),
                None => ArrayD::zeros(ndarray::IxDyn(&spec.shape)),
            })
            .collect()
    }
}

fn conv(t: &Tape, b: &Binding, name: &str, x: Var, stride: usize, pad: usize) -> Var {
    t.conv2d(
        x,
        b.var(&format!("{name}.w")),
        Some(b.var(&format!("{name}.b"))),
        stride,
        pad,
    )
}

/// Location branch: full-resolution conv block, pool, half-resolution block.
pub(crate) fn location_forward(t: &Tape, b: &Binding, x: Var) -> (Var, Var) {
    let l1 = t.relu(conv(t, b, "location.conv1", x, 1, 1));
    let pooled = t.maxpool2x2(l1);
    let l2 = t.relu(conv(t, b, "location.conv2", pooled, 1, 1));
    (l1, l2)
}

/// Downsampling layer in front of semantic stage `stage` (1-based).
pub(crate) fn stem_forward(t: &Tape, b: &Binding, stage: usize, x: Var) -> Var {
    match stage {
        1 => conv(t, b, "semantic.stem1", x, 4, 3),
        2 => conv(t, b, "semantic.down2", x, 2, 1),
        3 => conv(t, b, "semantic.down3", x, 2, 1),
        _ => unreachable!("semantic stage out of range"),
    }
}

/// One meta block: residual operator sub-block, then residual channel MLP.
pub(crate) fn meta_block_forward(
    t: &Tape,
    b: &Binding,
    cfg: &ModelConfig,
    stage: usize,
    block: usize,
    x: Var,
) -> Var {
    let p = format!("semantic.stage{stage}.block{block}");
    let op = cfg.semantic_stage_operator[stage - 1];
    let eps = cfg.norm_epsilon;
    let n1 = t.layer_norm_channels(
        x,
        b.var(&format!("{p}.norm1.gamma")),
        b.var(&format!("{p}.norm1.beta")),
        eps,
    );
    let branch = match op {
        OperatorKind::SeparableConv => {
            let e = t.gelu(conv(t, b, &format!("{p}.pw1"), n1, 1, 0));
            let d = t.depthwise_conv(
                e,
                b.var(&format!("{p}.dw.w")),
                Some(b.var(&format!("{p}.dw.b"))),
            );
            conv(t, b, &format!("{p}.pw2"), d, 1, 0)
        }
        OperatorKind::SelfAttention => t.self_attention(
            n1,
            b.var(&format!("{p}.qkv.w")),
            b.var(&format!("{p}.qkv.b")),
            b.var(&format!("{p}.proj.w")),
            b.var(&format!("{p}.proj.b")),
            cfg.attention_head_dim,
        ),
    };
    let y = t.add(x, branch);
    let n2 = t.layer_norm_channels(
        y,
        b.var(&format!("{p}.norm2.gamma")),
        b.var(&format!("{p}.norm2.beta")),
        eps,
    );
    let h = t.gelu(conv(t, b, &format!("{p}.mlp.fc1"), n2, 1, 0));
    let m = conv(t, b, &format!("{p}.mlp.fc2"), h, 1, 0);
    t.add(y, m)
}

/// Semantic branch: three stages of (downsample, meta blocks).
pub(crate) fn semantic_forward(t: &Tape, b: &Binding, cfg: &ModelConfig, x: Var) -> [Var; 3] {
    let mut cur = x;
    let mut outs = [x; 3];
    for stage in 1..=3 {
        cur = stem_forward(t, b, stage, cur);
        for block in 0..cfg.semantic_stage_blocks[stage - 1] {
            cur = meta_block_forward(t, b, cfg, stage, block, cur);
        }
        outs[stage - 1] = cur;
    }
    outs
}

/// Cascaded fusion over the 5-level pyramid. Returns the refined
/// full-resolution feature and the number of fusion steps performed.
pub(crate) fn cascaded_decoder(t: &Tape, b: &Binding, levels: &[Var; 5]) -> (Var, usize) {
    let mut state: Vec<Var> = levels.to_vec();
    let mut fusions = 0;
    for _j in 1..=4usize {
        let width = state.len() - 1;
        let mut next = Vec::with_capacity(width);
        for i in 1..=width {
            let up = t.upsample2x(state[i]);
            let phi = conv(t, b, &format!("decoder.f{i}_{}.phi", _j), up, 1, 0);
            let cat = t.concat_channels(&[state[i - 1], phi]);
            let fused = t.relu(conv(t, b, &format!("decoder.f{i}_{}.fuse", _j), cat, 1, 1));
            next.push(fused);
            fusions += 1;
        }
        state = next;
    }
    (state[0], fusions)
}

/// 1x1 compression of the refined features followed by a logistic sigmoid.
pub(crate) fn edge_head(t: &Tape, b: &Binding, refined: Var) -> Var {
    t.sigmoid(conv(t, b, "head", refined, 1, 0))
}

/// Side outputs, upsampled to full resolution and fused with one 1x1 conv.
pub(crate) fn hed_decoder(t: &Tape, b: &Binding, levels: &[Var; 5]) -> Var {
    let mut sides = Vec::with_capacity(5);
    for (l, &x) in levels.iter().enumerate() {
        let mut side = conv(t, b, &format!("hed.side{}", l + 1), x, 1, 0);
        for _ in 0..l {
            side = t.upsample2x(side);
        }
        sides.push(side);
    }
    let cat = t.concat_channels(&sides);
    t.sigmoid(conv(t, b, "hed.fuse", cat, 1, 0))
}

/// Single top-down pass: upsample, concatenate the next shallower level,
/// 3x3 conv. Four fusion steps, then a 1x1 head.
pub(crate) fn unet_decoder(t: &Tape, b: &Binding, levels: &[Var; 5]) -> Var {
    let mut carry = levels[4];
    for i in (1..=4usize).rev() {
        let up = t.upsample2x(carry);
        let cat = t.concat_channels(&[up, levels[i - 1]]);
        carry = t.relu(conv(t, b, &format!("unet.up{i}"), cat, 1, 1));
    }
    t.sigmoid(conv(t, b, "unet.head", carry, 1, 0))
}

/// Intermediate handles of a full forward pass.
pub(crate) struct Trace {
    pub levels: [Var; 5],
    pub refined: Option<Var>,
    /// Edge probability map (B,1,H,W) cropped to the original size.
    pub prob: Var,
}

/// Full forward on an already padded input (spatial size divisible by 16);
/// crops the output back to `(orig_h, orig_w)`.
pub(crate) fn forward_padded(
    t: &Tape,
    b: &Binding,
    cfg: &ModelConfig,
    x: Var,
    orig_h: usize,
    orig_w: usize,
) -> Trace {
    let (l1, l2) = location_forward(t, b, x);
    let [e3, e4, e5] = semantic_forward(t, b, cfg, x);
    let levels = [l1, l2, e3, e4, e5];
    let (refined, prob) = match cfg.decoder_kind {
        DecoderKind::Cascaded => {
            let (refined, _) = cascaded_decoder(t, b, &levels);
            (Some(refined), edge_head(t, b, refined))
        }
        DecoderKind::HedStyle => (None, hed_decoder(t, b, &levels)),
        DecoderKind::UnetStyle => (None, unet_decoder(t, b, &levels)),
    };
    let prob = t.crop2d(prob, orig_h, orig_w);
    Trace { levels, refined, prob }
}

/// Reflection-pad (no edge repeat) a (B,C,H,W) array on the bottom/right so
/// both spatial sizes become multiples of `multiple`.
pub(crate) fn reflect_pad_to_multiple(
    x: &ndarray::Array4<f64>,
    multiple: usize,
) -> Result<ndarray::Array4<f64>> {
    let (b, c, h, w) = x.dim();
    let ho = h.div_ceil(multiple) * multiple;
    let wo = w.div_ceil(multiple) * multiple;
    if ho - h >= h || wo - w >= w {
        return Err(Error::Shape(format!(
            "input {h}x{w} too small to reflection-pad to {ho}x{wo}"
        )));
    }
    if (ho, wo) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = ndarray::Array4::<f64>::zeros((b, c, ho, wo));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..ho {
                let si = if i < h { i } else { 2 * h - 2 - i };
                for j in 0..wo {
                    let sj = if j < w { j } else { 2 * w - 2 - j };
                    out[(bi, ci, i, j)] = x[(bi, ci, si, sj)];
                }
            }
        }
    }
    Ok(out)
}
