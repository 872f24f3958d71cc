//! Analytic cost profilers: exact learnable-scalar count and a
//! multiply-accumulate walk over the network at a given input size.
//!
//! Cost convention: one multiply-accumulate counts as one FLOP. Biases,
//! normalization, activations, and interpolation are omitted; they are
//! orders of magnitude below the conv/attention terms.

use super::config::{DecoderKind, ModelConfig, OperatorKind};
use super::params::{fusion_state_channels, registry};
use super::SIZE_MULTIPLE;

/// Exact number of learnable scalars for `config`.
pub fn count_parameters(config: &ModelConfig) -> usize {
    registry(config).iter().map(|s| s.len()).sum()
}

fn conv_macs(k: usize, ci: usize, co: usize, ho: usize, wo: usize) -> f64 {
    (k * k * ci * co) as f64 * (ho * wo) as f64
}

fn meta_block_macs(cfg: &ModelConfig, stage: usize, h: usize, w: usize) -> f64 {
    let c = cfg.semantic_stage_channels[stage - 1];
    let n = h * w;
    let op = match cfg.semantic_stage_operator[stage - 1] {
        OperatorKind::SeparableConv => {
            // pw expand, 3x3 depthwise, pw back
            conv_macs(1, c, 2 * c, h, w) + conv_macs(3, 2 * c, 1, h, w) + conv_macs(1, 2 * c, c, h, w)
        }
        OperatorKind::SelfAttention => {
            let nf = n as f64;
            let cf = c as f64;
            // qkv + output projections, then scores and value mixing
            4.0 * cf * cf * nf + 2.0 * nf * nf * cf
        }
    };
    let hidden = c * cfg.mlp_expansion_ratio;
    op + conv_macs(1, c, hidden, h, w) + conv_macs(1, hidden, c, h, w)
}

/// Multiply-accumulate count of one forward pass at the given input size.
/// The input is costed at the padded resolution, matching what the network
/// actually computes.
pub fn estimate_flops(config: &ModelConfig, height: usize, width: usize) -> f64 {
    let h = height.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
    let w = width.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
    let (lc1, lc2) = config.location_channels;
    let ch = config.semantic_stage_channels;
    let mut total = 0.0;

    total += conv_macs(3, config.input_channels, lc1, h, w);
    total += conv_macs(3, lc1, lc2, h / 2, w / 2);

    total += conv_macs(7, config.input_channels, ch[0], h / 4, w / 4);
    total += conv_macs(3, ch[0], ch[1], h / 8, w / 8);
    total += conv_macs(3, ch[1], ch[2], h / 16, w / 16);
    for stage in 1..=3 {
        let s = config.semantic_downsampling[stage - 1];
        total += config.semantic_stage_blocks[stage - 1] as f64
            * meta_block_macs(config, stage, h / s, w / s);
    }

    let pyr = config.pyramid_channels();
    let dch = config.decoder_channels();
    match config.decoder_kind {
        DecoderKind::Cascaded => {
            for j in 1..=4usize {
                for i in 1..=(5 - j) {
                    let (hi, wi) = (h >> (i - 1), w >> (i - 1));
                    let d = dch[i - 1];
                    let src = fusion_state_channels(config, i + 1, j - 1);
                    let cur = fusion_state_channels(config, i, j - 1);
                    total += conv_macs(1, src, d, hi, wi);
                    total += conv_macs(3, cur + d, d, hi, wi);
                }
            }
            total += conv_macs(1, dch[0], 1, h, w);
        }
        DecoderKind::HedStyle => {
            for (l, &c) in pyr.iter().enumerate() {
                total += conv_macs(1, c, 1, h >> l, w >> l);
            }
            total += conv_macs(1, 5, 1, h, w);
        }
        DecoderKind::UnetStyle => {
            let mut carry = pyr[4];
            for i in (1..=4usize).rev() {
                total += conv_macs(3, carry + pyr[i - 1], pyr[i - 1], h >> (i - 1), w >> (i - 1));
                carry = pyr[i - 1];
            }
            total += conv_macs(1, carry, 1, h, w);
        }
    }
    total
}
