//! Iteration-based training loop: seeded shuffled batches, weighted
//! cross-entropy on the final edge map, Adam with parameter-group learning
//! rates, checkpointing with exact resume.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};

use ndarray::{Array4, ArrayD};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::net::{forward_padded, reflect_pad_to_multiple, Binding};
use crate::model::{ModelConfig, Nbed, SIZE_MULTIPLE};
use crate::tensor::Tape;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Learning rate for arrays flagged pretrained (the semantic encoder).
    pub lr_pretrained: f64,
    pub lr_rest: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub seed: u64,
    pub loss: LossConfig,
    pub log_every: u64,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_pretrained: 1e-5,
            lr_rest: 1e-4,
            weight_decay: 5e-4,
            batch_size: 4,
            max_iterations: 1000,
            seed: 0,
            loss: LossConfig::default(),
            log_every: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_pretrained > 0.0) || !(self.lr_rest > 0.0) {
            return Err(Error::Config("train: learning rates must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("train.grad_clip must be > 0".into()));
            }
        }
        self.loss.validate()
    }

    /// Per-key overrides, mirroring the `model.*` scheme.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{v}` for {key}")))
        }
        match key {
            "train.lr_pretrained" => self.lr_pretrained = parse(key, value)?,
            "train.lr_rest" => self.lr_rest = parse(key, value)?,
            "train.weight_decay" => self.weight_decay = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.max_iterations" => self.max_iterations = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.log_every" => self.log_every = parse(key, value)?,
            "train.grad_clip" => {
                self.grad_clip = if value.trim() == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "loss.lambda" => self.loss.lambda = parse(key, value)?,
            "loss.eta" => self.loss.eta = parse(key, value)?,
            "loss.rcf_convention" => self.loss.rcf_convention = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown train key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("train.lr_pretrained".into(), self.lr_pretrained.to_string()),
            ("train.lr_rest".into(), self.lr_rest.to_string()),
            ("train.weight_decay".into(), self.weight_decay.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.max_iterations".into(), self.max_iterations.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.log_every".into(), self.log_every.to_string()),
            (
                "train.grad_clip".into(),
                self.grad_clip.map_or("none".into(), |c| c.to_string()),
            ),
            ("loss.lambda".into(), self.loss.lambda.to_string()),
            ("loss.eta".into(), self.loss.eta.to_string()),
            ("loss.rcf_convention".into(), self.loss.rcf_convention.to_string()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: u64,
    pub loss: f64,
}

pub fn log_to_csv(log: &[LogEntry]) -> String {
    let mut out = String::from("iteration,loss\n");
    for e in log {
        out.push_str(&format!("{},{}\n", e.iteration, e.loss));
    }
    out
}

fn epoch_permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17)));
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Sample indices consumed by iteration `iteration`. A pure function of
/// (seed, iteration), so a resumed run sees exactly the batches an
/// uninterrupted run would.
pub fn batch_indices(seed: u64, data_len: usize, iteration: u64, batch_size: usize) -> Vec<usize> {
    (0..batch_size as u64)
        .map(|k| {
            let pos = iteration * batch_size as u64 + k;
            let epoch = pos / data_len as u64;
            let offset = (pos % data_len as u64) as usize;
            epoch_permutation(seed, epoch, data_len)[offset]
        })
        .collect()
}

fn assemble_batch(data: &[Sample], indices: &[usize]) -> Result<(Array4<f64>, ArrayD<f64>)> {
    let (h, w) = (data[indices[0]].height(), data[indices[0]].width());
    let mut images = Array4::<f64>::zeros((indices.len(), 3, h, w));
    let mut gts = Array4::<f64>::zeros((indices.len(), 1, h, w));
    for (b, &i) in indices.iter().enumerate() {
        let s = &data[i];
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Data(format!(
                "batch mixes sizes: sample {} is {}x{}, expected {h}x{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
        images
            .index_axis_mut(ndarray::Axis(0), b)
            .assign(&s.to_input());
        gts.index_axis_mut(ndarray::Axis(0), b)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&s.consensus_gt);
    }
    Ok((images, gts.into_dyn()))
}

/// Loss and per-parameter gradients (registry order) for one batch.
/// The building block of the training step, exposed on its own so
/// gradients can be checked against finite differences.
pub fn loss_gradients(
    model: &Nbed,
    images: &Array4<f64>,
    gt: &ArrayD<f64>,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let (_, _, h, w) = images.dim();
    let padded = reflect_pad_to_multiple(images, SIZE_MULTIPLE)?;
    let tape = Tape::new();
    let binding = Binding::new(&tape, model.params());
    let x = tape.constant(padded.into_dyn());
    let trace = forward_padded(&tape, &binding, model.config(), x, h, w);
    let loss_var = tape.wce(trace.prob, gt, loss_cfg)?;
    let loss = tape.scalar(loss_var);
    let grads_by_var = tape.backward(loss_var);
    Ok((loss, binding.gradients(model.params(), &grads_by_var)))
}

fn state_to_named(state: &AdamState, model: &Nbed) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::with_capacity(2 * state.m.len() + 1);
    for (prefix, moments) in [("m", &state.m), ("v", &state.v)] {
        for (spec, arr) in model.params().specs().iter().zip(moments.iter()) {
            out.push((format!("opt.{prefix}.{}", spec.name), arr.clone()));
        }
    }
    out.push((
        "opt.t".into(),
        ArrayD::from_elem(ndarray::IxDyn(&[1]), state.t as f64),
    ));
    out
}

fn state_from_named(named: &[(String, ArrayD<f64>)], model: &Nbed) -> Result<AdamState> {
    let mut state = AdamState::new(model.params().specs().iter().map(|s| s.shape.clone()));
    let lookup: std::collections::HashMap<&str, &ArrayD<f64>> =
        named.iter().map(|(n, a)| (n.as_str(), a)).collect();
    for (i, spec) in model.params().specs().iter().enumerate() {
        for (prefix, slot) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
            let key = format!("opt.{prefix}.{}", spec.name);
            let arr = lookup
                .get(key.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state missing `{key}`")))?;
            if arr.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!("optimizer state `{key}` has wrong shape")));
            }
            *slot = (*arr).clone();
        }
    }
    let t = lookup
        .get("opt.t")
        .ok_or_else(|| Error::Checkpoint("optimizer state missing `opt.t`".into()))?;
    state.t = t[[0]] as u64;
    Ok(state)
}

fn make_checkpoint(model: &Nbed, state: &AdamState, iteration: u64) -> Checkpoint {
    Checkpoint {
        model_config: model.config().clone(),
        iteration,
        named_arrays: model
            .params()
            .iter()
            .map(|(s, v)| (s.name.clone(), (**v).clone()))
            .collect(),
        optimizer_state: state_to_named(state, model),
    }
}

fn run(
    model: &mut Nbed,
    state: &mut AdamState,
    start_iteration: u64,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<LogEntry>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training data is empty".into()));
    }
    for s in data {
        if s.height() < SIZE_MULTIPLE || s.width() < SIZE_MULTIPLE {
            return Err(Error::Data(format!(
                "sample {} is {}x{}, smaller than the minimum {SIZE_MULTIPLE}",
                s.id,
                s.height(),
                s.width()
            )));
        }
    }
    let pretrained: Vec<bool> = model.params().specs().iter().map(|s| s.pretrained).collect();
    let mut log = Vec::new();
    for iteration in start_iteration..cfg.max_iterations {
        let indices = batch_indices(cfg.seed, data.len(), iteration, cfg.batch_size);
        let (images, gts) = assemble_batch(data, &indices)?;
        let (loss, mut grads) = loss_gradients(model, &images, &gts, &cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss ({loss}) at iteration {iteration}; aborting"
            )));
        }

        if let Some(max_norm) = cfg.grad_clip {
            let norm: f64 = grads
                .iter()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let k = max_norm / norm;
                for g in &mut grads {
                    g.mapv_inplace(|v| v * k);
                }
            }
        }

        let lrs: Vec<f64> = pretrained
            .iter()
            .map(|&p| if p { cfg.lr_pretrained } else { cfg.lr_rest })
            .collect();
        let n = grads.len();
        // update in place; the tape (and its array references) is gone
        let mut params: Vec<ArrayD<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            params.push(std::mem::replace(
                model.params_mut().value_mut(i),
                ArrayD::zeros(ndarray::IxDyn(&[0])),
            ));
        }
        adam_step(&mut params, &grads, state, &lrs, cfg.weight_decay)?;
        for (i, p) in params.into_iter().enumerate() {
            *model.params_mut().value_mut(i) = p;
        }

        log.push(LogEntry { iteration, loss });
    }
    Ok((make_checkpoint(model, state, cfg.max_iterations), log))
}

/// Train from a fresh initialization.
pub fn train(
    model_cfg: ModelConfig,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<LogEntry>)> {
    let mut model = Nbed::build(model_cfg)?;
    let mut state = AdamState::new(model.params().specs().iter().map(|s| s.shape.clone()));
    run(&mut model, &mut state, 0, data, cfg)
}

/// Continue training from a checkpoint up to `cfg.max_iterations` total.
pub fn resume(
    ckpt: &Checkpoint,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<LogEntry>)> {
    let mut model = Nbed::build(ckpt.model_config.clone())?;
    model.apply_overlay(ckpt.named_arrays.iter().map(|(n, a)| (n.as_str(), a.clone())))?;
    let mut state = state_from_named(&ckpt.optimizer_state, &model)?;
    run(&mut model, &mut state, ckpt.iteration, data, cfg)
}

/// Build a model holding a checkpoint's weights, for inference.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Nbed> {
    let mut model = Nbed::build(ckpt.model_config.clone())?;
    model.apply_overlay(ckpt.named_arrays.iter().map(|(n, a)| (n.as_str(), a.clone())))?;
    Ok(model)
}
