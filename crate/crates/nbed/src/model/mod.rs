//! The NBED network: bilateral encoder (location + semantic branches),
//! cascaded feature-fusion decoder, edge head, plus the two ablation
//! decoders and analytic parameter/FLOPs profilers.

mod config;
pub(crate) mod net;
mod params;
pub mod profile;

pub use config::{DecoderKind, ModelConfig, OperatorKind};
pub use params::{fusion_state_channels, registry, Init, ParamSpec, ParamStore};

use ndarray::{Array2, Array3, Array4, ArrayD, Axis};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Spatial granularity the network operates on: inputs are padded so both
/// sides are divisible by this.
pub const SIZE_MULTIPLE: usize = 16;

/// A 4-d feature tensor (batch, channels, height, width) together with its
/// downsampling denominator relative to the network input (1, 2, 4, 8, 16).
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Array4<f64>,
    pub scale_den: usize,
}

impl FeatureMap {
    pub fn new(data: Array4<f64>, scale_den: usize) -> Self {
        Self { data, scale_den }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (_, c, h, w) = self.data.dim();
        if c < 1 || h < 1 || w < 1 {
            return Err(Error::Shape(format!(
                "feature map must be non-empty, got {:?}",
                self.data.dim()
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("feature map contains non-finite values".into()));
        }
        Ok(())
    }
}

/// The five multi-scale features consumed by the decoders, ordered from
/// full resolution (location) to 1/16 (deepest semantic).
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub const SCALES: [usize; 5] = [1, 2, 4, 8, 16];

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.levels.len() != 5 {
            return Err(Error::Shape(format!(
                "pyramid must have 5 levels, got {}",
                self.levels.len()
            )));
        }
        let chans = cfg.pyramid_channels();
        for (l, (level, (&scale, &ch))) in self
            .levels
            .iter()
            .zip(Self::SCALES.iter().zip(chans.iter()))
            .enumerate()
        {
            if level.scale_den != scale {
                return Err(Error::Shape(format!(
                    "pyramid level {l}: expected scale 1/{scale}, got 1/{}",
                    level.scale_den
                )));
            }
            if level.channels() != ch {
                return Err(Error::Shape(format!(
                    "pyramid level {l}: expected {ch} channels, got {}",
                    level.channels()
                )));
            }
        }
        Ok(())
    }
}

/// Single-channel edge probability map, same spatial size as the input.
pub type EdgeProbabilityMap = Array2<f64>;

/// Built model: configuration plus all learnable arrays.
pub struct Nbed {
    config: ModelConfig,
    params: ParamStore,
}

fn single_to_batch(image: &Array3<f64>) -> Array4<f64> {
    image.clone().insert_axis(Axis(0))
}

impl Nbed {
    /// Deterministically initialize all parameters from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Overlay externally supplied named arrays (e.g. semantic-encoder
    /// weights from another checkpoint).
    pub fn apply_overlay<'a, I>(&mut self, arrays: I) -> Result<usize>
    where
        I: IntoIterator<Item = (&'a str, ArrayD<f64>)>,
    {
        self.params.apply_overlay(arrays)
    }

    fn check_input(&self, images: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        if h < SIZE_MULTIPLE || w < SIZE_MULTIPLE {
            return Err(Error::Shape(format!(
                "input must be at least {SIZE_MULTIPLE}x{SIZE_MULTIPLE}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Location branch on an unpadded-or-padded input with even sides.
    pub fn location_features(&self, images: &Array4<f64>) -> Result<(FeatureMap, FeatureMap)> {
        let (_, c, h, w) = images.dim();
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "location encoder expects {} channels, got {c}",
                self.config.input_channels
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "location encoder expects even spatial sizes, got {h}x{w}"
            )));
        }
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(images.clone().into_dyn());
        let (l1, l2) = net::location_forward(&t, &b, x);
        Ok((
            FeatureMap::new(to4(&t, l1), 1),
            FeatureMap::new(to4(&t, l2), 2),
        ))
    }

    /// Semantic branch; requires sides of at least 16 pixels.
    pub fn semantic_features(
        &self,
        images: &Array4<f64>,
    ) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
        self.check_input(images)?;
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(images.clone().into_dyn());
        let [e3, e4, e5] = net::semantic_forward(&t, &b, &self.config, x);
        Ok((
            FeatureMap::new(to4(&t, e3), 4),
            FeatureMap::new(to4(&t, e4), 8),
            FeatureMap::new(to4(&t, e5), 16),
        ))
    }

    /// Apply the downsampling layer in front of semantic stage `stage`.
    pub fn stem_apply(&self, stage: usize, x: &Array4<f64>) -> Result<Array4<f64>> {
        if !(1..=3).contains(&stage) {
            return Err(Error::Config(format!("semantic stage must be 1..=3, got {stage}")));
        }
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let xv = t.constant(x.clone().into_dyn());
        Ok(to4(&t, net::stem_forward(&t, &b, stage, xv)))
    }

    /// Apply one meta block of the semantic encoder.
    pub fn meta_block_apply(&self, stage: usize, block: usize, x: &Array4<f64>) -> Result<Array4<f64>> {
        if !(1..=3).contains(&stage) || block >= self.config.semantic_stage_blocks[stage - 1] {
            return Err(Error::Config(format!(
                "no meta block stage{stage}/block{block} in this configuration"
            )));
        }
        let expected = self.config.semantic_stage_channels[stage - 1];
        if x.dim().1 != expected {
            return Err(Error::Shape(format!(
                "meta block stage{stage} expects {expected} channels, got {}",
                x.dim().1
            )));
        }
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let xv = t.constant(x.clone().into_dyn());
        Ok(to4(
            &t,
            net::meta_block_forward(&t, &b, &self.config, stage, block, xv),
        ))
    }

    /// Both branches on a padded input (sides divisible by 16).
    pub fn pyramid(&self, images: &Array4<f64>) -> Result<FeaturePyramid> {
        self.check_input(images)?;
        let (_, _, h, w) = images.dim();
        if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::Shape(format!(
                "pyramid extraction expects sides divisible by {SIZE_MULTIPLE}, got {h}x{w}; \
                 use forward() for arbitrary sizes"
            )));
        }
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(images.clone().into_dyn());
        let (l1, l2) = net::location_forward(&t, &b, x);
        let [e3, e4, e5] = net::semantic_forward(&t, &b, &self.config, x);
        let levels = vec![
            FeatureMap::new(to4(&t, l1), 1),
            FeatureMap::new(to4(&t, l2), 2),
            FeatureMap::new(to4(&t, e3), 4),
            FeatureMap::new(to4(&t, e4), 8),
            FeatureMap::new(to4(&t, e5), 16),
        ];
        Ok(FeaturePyramid { levels })
    }

    /// Cascaded fusion. A 5-level pyramid performs the full recurrence
    /// (10 fusions); the documented degenerate single-level case returns
    /// the 1x1 channel adjustment of the sole level with no fusion.
    pub fn decode_cascaded(&self, pyramid: &FeaturePyramid) -> Result<(FeatureMap, usize)> {
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        if pyramid.levels.len() == 1 {
            let level = &pyramid.levels[0];
            if level.channels() != self.config.pyramid_channels()[0] {
                return Err(Error::Shape(format!(
                    "degenerate decode expects {} channels, got {}",
                    self.config.pyramid_channels()[0],
                    level.channels()
                )));
            }
            let x = t.constant(level.data.clone().into_dyn());
            let adjusted = t.conv2d(
                x,
                b.var("decoder.adjust.w"),
                Some(b.var("decoder.adjust.b")),
                1,
                0,
            );
            return Ok((FeatureMap::new(to4(&t, adjusted), level.scale_den), 0));
        }
        pyramid.check(&self.config)?;
        let vars: Vec<Var> = pyramid
            .levels
            .iter()
            .map(|l| t.constant(l.data.clone().into_dyn()))
            .collect();
        let levels: [Var; 5] = vars.try_into().unwrap();
        let (refined, fusions) = net::cascaded_decoder(&t, &b, &levels);
        Ok((FeatureMap::new(to4(&t, refined), 1), fusions))
    }

    /// 1x1 compression of the refined features to per-pixel probabilities.
    pub fn edge_head_map(&self, refined: &FeatureMap) -> Result<Array3<f64>> {
        if refined.scale_den != 1 {
            return Err(Error::Shape(format!(
                "edge head expects scale 1 features, got 1/{}",
                refined.scale_den
            )));
        }
        let d1 = self.config.decoder_channels()[0];
        if refined.channels() != d1 {
            return Err(Error::Shape(format!(
                "edge head expects {d1} channels, got {}",
                refined.channels()
            )));
        }
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(refined.data.clone().into_dyn());
        let prob = net::edge_head(&t, &b, x);
        Ok(to4(&t, prob).index_axis(Axis(1), 0).to_owned())
    }

    /// HED-style decode of a 5-level pyramid to (B,H,W) probabilities.
    pub fn decode_hed(&self, pyramid: &FeaturePyramid) -> Result<Array3<f64>> {
        pyramid.check(&self.config)?;
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let vars: Vec<Var> = pyramid
            .levels
            .iter()
            .map(|l| t.constant(l.data.clone().into_dyn()))
            .collect();
        let levels: [Var; 5] = vars.try_into().unwrap();
        let prob = net::hed_decoder(&t, &b, &levels);
        Ok(to4(&t, prob).index_axis(Axis(1), 0).to_owned())
    }

    /// UNet-style decode of a 5-level pyramid to (B,H,W) probabilities.
    pub fn decode_unet(&self, pyramid: &FeaturePyramid) -> Result<Array3<f64>> {
        pyramid.check(&self.config)?;
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let vars: Vec<Var> = pyramid
            .levels
            .iter()
            .map(|l| t.constant(l.data.clone().into_dyn()))
            .collect();
        let levels: [Var; 5] = vars.try_into().unwrap();
        let prob = net::unet_decoder(&t, &b, &levels);
        Ok(to4(&t, prob).index_axis(Axis(1), 0).to_owned())
    }

    /// End-to-end forward for one RGB image (3,H,W) in [0,1]; arbitrary
    /// sizes >= 16 are reflection-padded internally and cropped back.
    pub fn forward(&self, image: &Array3<f64>) -> Result<EdgeProbabilityMap> {
        let batch = single_to_batch(image);
        let out = self.forward_batch(&batch)?;
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }

    /// Batched forward; all images share one spatial size.
    pub fn forward_batch(&self, images: &Array4<f64>) -> Result<Array3<f64>> {
        self.check_input(images)?;
        let (_, _, h, w) = images.dim();
        let padded = net::reflect_pad_to_multiple(images, SIZE_MULTIPLE)?;
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(padded.into_dyn());
        let trace = net::forward_padded(&t, &b, &self.config, x, h, w);
        Ok(to4(&t, trace.prob).index_axis(Axis(1), 0).to_owned())
    }

    /// Forward with intermediate features, for inspection and tests.
    /// Pyramid and refined features are at the padded resolution; the edge
    /// map is cropped to the input size.
    pub fn forward_trace(
        &self,
        image: &Array3<f64>,
    ) -> Result<(FeaturePyramid, Option<FeatureMap>, EdgeProbabilityMap)> {
        let images = single_to_batch(image);
        self.check_input(&images)?;
        let (_, _, h, w) = images.dim();
        let padded = net::reflect_pad_to_multiple(&images, SIZE_MULTIPLE)?;
        let t = Tape::new();
        let b = net::Binding::new(&t, &self.params);
        let x = t.constant(padded.into_dyn());
        let trace = net::forward_padded(&t, &b, &self.config, x, h, w);
        let pyramid = FeaturePyramid {
            levels: trace
                .levels
                .iter()
                .zip(FeaturePyramid::SCALES.iter())
                .map(|(&v, &s)| FeatureMap::new(to4(&t, v), s))
                .collect(),
        };
        let refined = trace.refined.map(|v| FeatureMap::new(to4(&t, v), 1));
        let edge = to4(&t, trace.prob)
            .index_axis(Axis(0), 0)
            .index_axis(Axis(0), 0)
            .to_owned();
        Ok((pyramid, refined, edge))
    }
}

fn to4(t: &Tape, v: Var) -> Array4<f64> {
    t.value(v)
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap()
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv::naive_conv;
    use ndarray::{Array4, ArrayD};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64, c: usize, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((c, h, w), || rng.gen::<f64>())
    }

    fn rand4(seed: u64, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn location_branch_matches_naive_conv_oracle() {
        let model = Nbed::build(ModelConfig::tiny(11)).unwrap();
        let x = rand4(1, (1, 3, 8, 8));
        let (l1, l2) = model.location_features(&x).unwrap();

        let w1 = model.params().get("location.conv1.w").unwrap().as_ref().clone();
        let b1 = model.params().get("location.conv1.b").unwrap().as_ref().clone();
        let mut expect1 = naive_conv(&x.clone().into_dyn(), &w1, Some(&b1), 1, 1);
        expect1.mapv_inplace(|v| v.max(0.0));
        let diff1 = (&expect1 - &l1.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff1 < 1e-9, "stage 1 mismatch: {diff1}");

        // manual 2x2 max pool, then the second block
        let (bn, c, h, w) = expect1.dim();
        let mut pooled = Array4::<f64>::zeros((bn, c, h / 2, w / 2));
        for bi in 0..bn {
            for ci in 0..c {
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        let vals = [
                            expect1[(bi, ci, 2 * i, 2 * j)],
                            expect1[(bi, ci, 2 * i, 2 * j + 1)],
                            expect1[(bi, ci, 2 * i + 1, 2 * j)],
                            expect1[(bi, ci, 2 * i + 1, 2 * j + 1)],
                        ];
                        pooled[(bi, ci, i, j)] = vals.iter().cloned().fold(f64::MIN, f64::max);
                    }
                }
            }
        }
        let w2 = model.params().get("location.conv2.w").unwrap().as_ref().clone();
        let b2 = model.params().get("location.conv2.b").unwrap().as_ref().clone();
        let mut expect2 = naive_conv(&pooled.into_dyn(), &w2, Some(&b2), 1, 1);
        expect2.mapv_inplace(|v| v.max(0.0));
        let diff2 = (&expect2 - &l2.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff2 < 1e-9, "stage 2 mismatch: {diff2}");
    }

    #[test]
    fn pyramid_shapes_and_channels() {
        let cfg = ModelConfig::tiny(0);
        let model = Nbed::build(cfg.clone()).unwrap();
        let x = rand4(2, (1, 3, 64, 64));
        let pyr = model.pyramid(&x).unwrap();
        assert_eq!(pyr.levels.len(), 5);
        let chans = cfg.pyramid_channels();
        for (l, level) in pyr.levels.iter().enumerate() {
            let scale = FeaturePyramid::SCALES[l];
            assert_eq!(level.scale_den, scale);
            assert_eq!(
                level.data.dim(),
                (1, chans[l], 64 / scale, 64 / scale),
                "level {l}"
            );
            level.validate().unwrap();
        }
    }

    #[test]
    fn pyramid_rejects_unpadded_sizes() {
        let model = Nbed::build(ModelConfig::tiny(0)).unwrap();
        let x = rand4(3, (1, 3, 60, 64));
        assert!(matches!(model.pyramid(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn meta_block_with_zeroed_projections_is_identity() {
        let cfg = ModelConfig::tiny(4);
        let mut model = Nbed::build(cfg.clone()).unwrap();
        let c = cfg.semantic_stage_channels[0];
        // stage 1 is separable conv: zero the closing pointwise conv and
        // the closing MLP layer, leaving everything else random
        model
            .params_mut()
            .set(
                "semantic.stage1.block0.pw2.w",
                ArrayD::zeros(ndarray::IxDyn(&[c, 2 * c, 1, 1])),
            )
            .unwrap();
        model
            .params_mut()
            .set(
                "semantic.stage1.block0.mlp.fc2.w",
                ArrayD::zeros(ndarray::IxDyn(&[c, c * cfg.mlp_expansion_ratio, 1, 1])),
            )
            .unwrap();
        let x = rand4(9, (1, c, 6, 6));
        let y = model.meta_block_apply(1, 0, &x).unwrap();
        let diff = (&y - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "residual identity violated by {diff}");
    }

    #[test]
    fn meta_block_checks_stage_and_channels() {
        let model = Nbed::build(ModelConfig::tiny(0)).unwrap();
        assert!(model.meta_block_apply(1, 7, &rand4(0, (1, 12, 4, 4))).is_err());
        assert!(model.meta_block_apply(1, 0, &rand4(0, (1, 5, 4, 4))).is_err());
    }

    #[test]
    fn cascaded_decoder_runs_ten_fusions_to_full_resolution() {
        let cfg = ModelConfig::tiny(2);
        let model = Nbed::build(cfg.clone()).unwrap();
        let x = rand4(5, (1, 3, 32, 48));
        let pyr = model.pyramid(&x).unwrap();
        let (refined, fusions) = model.decode_cascaded(&pyr).unwrap();
        assert_eq!(fusions, 10);
        assert_eq!(refined.scale_den, 1);
        assert_eq!(
            refined.data.dim(),
            (1, cfg.decoder_base_channels, 32, 48)
        );
    }

    #[test]
    fn degenerate_single_level_decode_adjusts_channels_only() {
        let cfg = ModelConfig::tiny(2);
        let model = Nbed::build(cfg.clone()).unwrap();
        let level = FeatureMap::new(rand4(6, (1, cfg.pyramid_channels()[0], 10, 10)), 1);
        let pyr = FeaturePyramid { levels: vec![level] };
        let (out, fusions) = model.decode_cascaded(&pyr).unwrap();
        assert_eq!(fusions, 0);
        assert_eq!(out.data.dim(), (1, cfg.decoder_base_channels, 10, 10));
    }

    #[test]
    fn edge_head_outputs_probabilities() {
        let cfg = ModelConfig::tiny(8);
        let model = Nbed::build(cfg.clone()).unwrap();
        let refined = FeatureMap::new(rand4(7, (2, cfg.decoder_base_channels, 9, 9)) * 10.0, 1);
        let prob = model.edge_head_map(&refined).unwrap();
        assert_eq!(prob.dim(), (2, 9, 9));
        assert!(prob.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_handles_sizes_not_divisible_by_16() {
        let model = Nbed::build(ModelConfig::tiny(1)).unwrap();
        let img = rand_image(0, 3, 37, 53);
        let out = model.forward(&img).unwrap();
        assert_eq!(out.dim(), (37, 53));
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let model = Nbed::build(ModelConfig::tiny(3)).unwrap();
        let img = rand_image(42, 3, 32, 32);
        let a = model.forward(&img).unwrap();
        let b = model.forward(&img).unwrap();
        assert_eq!(a, b);

        // same image twice in a batch gives identical per-image outputs
        let mut batch = Array4::<f64>::zeros((2, 3, 32, 32));
        batch.index_axis_mut(Axis(0), 0).assign(&img);
        batch.index_axis_mut(Axis(0), 1).assign(&img);
        let out = model.forward_batch(&batch).unwrap();
        let first = out.index_axis(Axis(0), 0).to_owned();
        let second = out.index_axis(Axis(0), 1).to_owned();
        assert_eq!(first, second);
        let single_diff = (&first - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(single_diff < 1e-12, "batching changed the output by {single_diff}");
    }

    #[test]
    fn rebuilding_with_same_seed_reproduces_forward_bitwise() {
        let img = rand_image(9, 3, 32, 32);
        let a = Nbed::build(ModelConfig::tiny(21)).unwrap().forward(&img).unwrap();
        let b = Nbed::build(ModelConfig::tiny(21)).unwrap().forward(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_exposes_pyramid_and_refined_features() {
        let cfg = ModelConfig::tiny(6);
        let model = Nbed::build(cfg.clone()).unwrap();
        let img = rand_image(13, 3, 48, 48);
        let (pyr, refined, edge) = model.forward_trace(&img).unwrap();
        assert_eq!(pyr.levels.len(), 5);
        let refined = refined.expect("cascaded decoder exposes refined features");
        assert_eq!(refined.data.dim(), (1, cfg.decoder_base_channels, 48, 48));
        assert_eq!(edge.dim(), (48, 48));
    }

    #[test]
    fn ablation_decoders_produce_full_resolution_probabilities() {
        for kind in [DecoderKind::HedStyle, DecoderKind::UnetStyle] {
            let cfg = ModelConfig { decoder_kind: kind, ..ModelConfig::tiny(14) };
            let model = Nbed::build(cfg).unwrap();
            let img = rand_image(17, 3, 32, 32);
            let out = model.forward(&img).unwrap();
            assert_eq!(out.dim(), (32, 32), "{}", kind.name());
            assert!(out.iter().all(|&v| v > 0.0 && v < 1.0), "{}", kind.name());
        }
    }

    #[test]
    fn hed_decode_matches_side_branch_oracle() {
        // with fuse weights picking only side 1, the decode reduces to
        // sigmoid(1x1 conv of the level-1 features), which a naive conv
        // reproduces without any upsampling
        let cfg = ModelConfig { decoder_kind: DecoderKind::HedStyle, ..ModelConfig::tiny(19) };
        let mut model = Nbed::build(cfg.clone()).unwrap();
        let mut fuse = ArrayD::zeros(ndarray::IxDyn(&[1, 5, 1, 1]));
        fuse[[0, 0, 0, 0]] = 1.0;
        model.params_mut().set("hed.fuse.w", fuse).unwrap();
        model
            .params_mut()
            .set("hed.fuse.b", ArrayD::zeros(ndarray::IxDyn(&[1])))
            .unwrap();

        let x = rand4(23, (1, 3, 32, 32));
        let pyr = model.pyramid(&x).unwrap();
        let out = model.decode_hed(&pyr).unwrap();
        assert_eq!(out.dim(), (1, 32, 32));

        let w = model.params().get("hed.side1.w").unwrap().as_ref().clone();
        let b = model.params().get("hed.side1.b").unwrap().as_ref().clone();
        let logits = naive_conv(&pyr.levels[0].data.clone().into_dyn(), &w, Some(&b), 1, 0);
        let expect = logits.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let diff = out
            .iter()
            .zip(expect.iter())
            .fold(0.0f64, |m, (a, e)| m.max((a - e).abs()));
        assert!(diff < 1e-9, "mismatch {diff}");
    }

    #[test]
    fn rejects_wrong_channel_count_and_tiny_inputs() {
        let model = Nbed::build(ModelConfig::tiny(0)).unwrap();
        assert!(model.forward(&rand_image(0, 1, 32, 32).to_owned()).is_err());
        assert!(model.forward(&rand_image(0, 3, 8, 8).to_owned()).is_err());
    }

    #[test]
    fn reflection_padding_mirrors_without_edge_repeat() {
        let x = Array4::from_shape_fn((1, 1, 18, 20), |(_, _, i, j)| (i * 20 + j) as f64);
        let padded = net::reflect_pad_to_multiple(&x, 16).unwrap();
        assert_eq!(padded.dim(), (1, 1, 32, 32));
        // row 18 mirrors row 16 (skipping the edge row 17)
        assert_eq!(padded[(0, 0, 18, 0)], x[(0, 0, 16, 0)]);
        assert_eq!(padded[(0, 0, 0, 20)], x[(0, 0, 0, 18)]);
        // interior untouched
        assert_eq!(padded[(0, 0, 5, 7)], x[(0, 0, 5, 7)]);
    }

    #[test]
    fn build_rejects_invalid_configs() {
        let mut cfg = ModelConfig::tiny(0);
        cfg.location_channels = (4, 4);
        assert!(Nbed::build(cfg).is_err());
        let mut cfg = ModelConfig::default();
        cfg.semantic_stage_channels = [96, 192, 100];
        assert!(Nbed::build(cfg).is_err());
    }
}
