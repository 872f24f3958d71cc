//! Parameter registry and storage. The registry is the single source of
//! truth for parameter names, shapes, initialization, and learning-rate
//! grouping; the store holds the actual arrays. Initialization draws each
//! parameter from its own RNG stream (seeded by the model seed and the
//! parameter name), so a given named parameter is identical across models
//! that share a seed regardless of which decoder variant is attached.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::config::{DecoderKind, ModelConfig, OperatorKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)].
    FanIn(usize),
    Zero,
    One,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Arrays in the semantic encoder; they take the "pretrained" learning
    /// rate when an external overlay supplies them.
    pub pretrained: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

fn conv(name: &str, co: usize, ci: usize, k: usize, pretrained: bool) -> Vec<ParamSpec> {
    // degenerate zero-channel convolutions (possible in profiling-only
    // configs) contribute no parameters at all, bias included
    if co == 0 || ci == 0 {
        return Vec::new();
    }
    vec![
        ParamSpec {
            name: format!("{name}.w"),
            shape: vec![co, ci, k, k],
            init: Init::FanIn(ci * k * k),
            pretrained,
        },
        ParamSpec {
            name: format!("{name}.b"),
            shape: vec![co],
            init: Init::Zero,
            pretrained,
        },
    ]
}

fn linear(name: &str, out: usize, inp: usize, pretrained: bool) -> Vec<ParamSpec> {
    if out == 0 || inp == 0 {
        return Vec::new();
    }
    vec![
        ParamSpec {
            name: format!("{name}.w"),
            shape: vec![out, inp],
            init: Init::FanIn(inp),
            pretrained,
        },
        ParamSpec {
            name: format!("{name}.b"),
            shape: vec![out],
            init: Init::Zero,
            pretrained,
        },
    ]
}

fn norm(name: &str, c: usize, pretrained: bool) -> Vec<ParamSpec> {
    vec![
        ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![c],
            init: Init::One,
            pretrained,
        },
        ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![c],
            init: Init::Zero,
            pretrained,
        },
    ]
}

fn meta_block_specs(prefix: &str, c: usize, op: OperatorKind, cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    out.extend(norm(&format!("{prefix}.norm1"), c, true));
    match op {
        OperatorKind::SeparableConv => {
            // pointwise expand (2x), depthwise 3x3, pointwise back
            out.extend(conv(&format!("{prefix}.pw1"), 2 * c, c, 1, true));
            out.extend(conv(&format!("{prefix}.dw"), 2 * c, 1, 3, true));
            out.extend(conv(&format!("{prefix}.pw2"), c, 2 * c, 1, true));
        }
        OperatorKind::SelfAttention => {
            out.extend(linear(&format!("{prefix}.qkv"), 3 * c, c, true));
            out.extend(linear(&format!("{prefix}.proj"), c, c, true));
        }
    }
    out.extend(norm(&format!("{prefix}.norm2"), c, true));
    let hidden = c * cfg.mlp_expansion_ratio;
    out.extend(conv(&format!("{prefix}.mlp.fc1"), hidden, c, 1, true));
    out.extend(conv(&format!("{prefix}.mlp.fc2"), c, hidden, 1, true));
    out
}

/// Channels of the decoder state F_i^j (1-based level, j fusions applied).
pub fn fusion_state_channels(cfg: &ModelConfig, level: usize, j: usize) -> usize {
    if j == 0 {
        cfg.pyramid_channels()[level - 1]
    } else {
        cfg.decoder_channels()[level - 1]
    }
}

/// Ordered parameter specifications for the full model.
pub fn registry(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let (lc1, lc2) = cfg.location_channels;
    out.extend(conv("location.conv1", lc1, cfg.input_channels, 3, false));
    out.extend(conv("location.conv2", lc2, lc1, 3, false));

    let ch = cfg.semantic_stage_channels;
    out.extend(conv("semantic.stem1", ch[0], cfg.input_channels, 7, true));
    out.extend(conv("semantic.down2", ch[1], ch[0], 3, true));
    out.extend(conv("semantic.down3", ch[2], ch[1], 3, true));
    for s in 0..3 {
        for b in 0..cfg.semantic_stage_blocks[s] {
            out.extend(meta_block_specs(
                &format!("semantic.stage{}.block{}", s + 1, b),
                ch[s],
                cfg.semantic_stage_operator[s],
                cfg,
            ));
        }
    }

    let pyr = cfg.pyramid_channels();
    let dch = cfg.decoder_channels();
    match cfg.decoder_kind {
        DecoderKind::Cascaded => {
            for j in 1..=4usize {
                for i in 1..=(5 - j) {
                    let d = dch[i - 1];
                    let src = fusion_state_channels(cfg, i + 1, j - 1);
                    let cur = fusion_state_channels(cfg, i, j - 1);
                    out.extend(conv(&format!("decoder.f{i}_{j}.phi"), d, src, 1, false));
                    out.extend(conv(&format!("decoder.f{i}_{j}.fuse"), d, cur + d, 3, false));
                }
            }
            // channel adjustment used by the degenerate single-level case
            out.extend(conv("decoder.adjust", dch[0], pyr[0], 1, false));
            out.extend(conv("head", 1, dch[0], 1, false));
        }
        DecoderKind::HedStyle => {
            for (l, &c) in pyr.iter().enumerate() {
                out.extend(conv(&format!("hed.side{}", l + 1), 1, c, 1, false));
            }
            out.extend(conv("hed.fuse", 1, 5, 1, false));
        }
        DecoderKind::UnetStyle => {
            let mut carry = pyr[4];
            for i in (1..=4).rev() {
                out.extend(conv(&format!("unet.up{i}"), pyr[i - 1], carry + pyr[i - 1], 3, false));
                carry = pyr[i - 1];
            }
            out.extend(conv("unet.head", 1, carry, 1, false));
        }
    }
    out
}

fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    name.hash(&mut h);
    ChaCha8Rng::seed_from_u64(seed ^ h.finish())
}

fn init_array(spec: &ParamSpec, seed: u64) -> ArrayD<f64> {
    match spec.init {
        Init::Zero => ArrayD::zeros(IxDyn(&spec.shape)),
        Init::One => ArrayD::ones(IxDyn(&spec.shape)),
        Init::FanIn(fan_in) => {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            let mut rng = param_rng(seed, &spec.name);
            ArrayD::from_shape_simple_fn(IxDyn(&spec.shape), || {
                rng.gen::<f64>() * 2.0 * bound - bound
            })
        }
    }
}

/// Named parameter arrays in registry order.
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    values: Vec<Rc<ArrayD<f64>>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn init(cfg: &ModelConfig) -> Self {
        let specs = registry(cfg);
        let values = specs.iter().map(|s| Rc::new(init_array(s, cfg.seed))).collect();
        let index = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Self { specs, values, index }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn value(&self, i: usize) -> &Rc<ArrayD<f64>> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        Rc::make_mut(&mut self.values[i])
    }

    pub fn get(&self, name: &str) -> Option<&Rc<ArrayD<f64>>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if value.shape() != self.specs[i].shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter `{name}`: expected shape {:?}, got {:?}",
                self.specs[i].shape,
                value.shape()
            )));
        }
        self.values[i] = Rc::new(value);
        Ok(())
    }

    pub fn total_scalars(&self) -> usize {
        self.specs.iter().map(|s| s.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamSpec, &Rc<ArrayD<f64>>)> {
        self.specs.iter().zip(self.values.iter())
    }

    /// Overlay externally supplied arrays (e.g. semantic-encoder weights).
    /// Every entry must match an existing parameter by name and shape;
    /// unmatched names are reported together in one error.
    pub fn apply_overlay<'a, I>(&mut self, arrays: I) -> Result<usize>
    where
        I: IntoIterator<Item = (&'a str, ArrayD<f64>)>,
    {
        let mut staged = Vec::new();
        let mut unknown = Vec::new();
        for (name, value) in arrays {
            match self.index.get(name) {
                Some(&i) => {
                    if value.shape() != self.specs[i].shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "overlay `{name}`: expected shape {:?}, got {:?}",
                            self.specs[i].shape,
                            value.shape()
                        )));
                    }
                    staged.push((i, value));
                }
                None => unknown.push(name.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "overlay contains unknown parameter names: {}",
                unknown.join(", ")
            )));
        }
        let n = staged.len();
        for (i, value) in staged {
            self.values[i] = Rc::new(value);
        }
        Ok(n)
    }
}
