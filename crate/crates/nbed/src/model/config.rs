use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    SeparableConv,
    SelfAttention,
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::SeparableConv => "separconv",
            OperatorKind::SelfAttention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "separconv" => Ok(OperatorKind::SeparableConv),
            "attention" => Ok(OperatorKind::SelfAttention),
            other => Err(Error::Config(format!("unknown operator kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecoderKind {
    /// Cascaded feature fusion: the triangular recurrence that refines the
    /// full-resolution location features with progressively injected
    /// semantics.
    #[default]
    Cascaded,
    /// Per-level 1x1 side outputs, upsampled and fused by one 1x1 conv.
    HedStyle,
    /// Single top-down pass: upsample, concatenate, 3x3 conv.
    UnetStyle,
}

impl DecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderKind::Cascaded => "cascaded",
            DecoderKind::HedStyle => "hed",
            DecoderKind::UnetStyle => "unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cascaded" => Ok(DecoderKind::Cascaded),
            "hed" => Ok(DecoderKind::HedStyle),
            "unet" => Ok(DecoderKind::UnetStyle),
            other => Err(Error::Config(format!("unknown decoder kind `{other}`"))),
        }
    }
}

/// Every architectural hyperparameter of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Channels of the two location-branch blocks; the second must be
    /// double the first.
    pub location_channels: (usize, usize),
    pub semantic_stage_blocks: [usize; 3],
    pub semantic_stage_channels: [usize; 3],
    pub semantic_stage_operator: [OperatorKind; 3],
    /// Downsampling of each semantic stage relative to the input (denominators).
    pub semantic_downsampling: [usize; 3],
    /// Base channel count C of the decoder; level i fuses into C * 2^(i-1).
    pub decoder_base_channels: usize,
    pub mlp_expansion_ratio: usize,
    pub attention_head_dim: usize,
    pub norm_epsilon: f64,
    pub seed: u64,
    pub decoder_kind: DecoderKind,
    /// Reserved: supervise intermediate edge maps in addition to the final
    /// one. The training loop currently supervises only the final map.
    pub supervise_side_outputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            location_channels: (16, 32),
            semantic_stage_blocks: [3, 12, 18],
            semantic_stage_channels: [96, 192, 384],
            semantic_stage_operator: [
                OperatorKind::SeparableConv,
                OperatorKind::SeparableConv,
                OperatorKind::SelfAttention,
            ],
            semantic_downsampling: [4, 8, 16],
            decoder_base_channels: 32,
            mlp_expansion_ratio: 4,
            attention_head_dim: 32,
            norm_epsilon: 1e-6,
            seed: 0,
            decoder_kind: DecoderKind::Cascaded,
            supervise_side_outputs: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale variant: channels divided by 8, stage depths 1/2/2.
    pub fn tiny(seed: u64) -> Self {
        Self {
            location_channels: (2, 4),
            semantic_stage_blocks: [1, 2, 2],
            semantic_stage_channels: [12, 24, 48],
            decoder_base_channels: 4,
            attention_head_dim: 12,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 3 {
            return Err(Error::Config(format!(
                "model.input_channels must be 3, got {}",
                self.input_channels
            )));
        }
        if self.location_channels.1 != 2 * self.location_channels.0 {
            return Err(Error::Config(format!(
                "model.location_channels: second ({}) must be double the first ({})",
                self.location_channels.1, self.location_channels.0
            )));
        }
        if self.semantic_downsampling != [4, 8, 16] {
            return Err(Error::Config(format!(
                "model.semantic_downsampling must be [4, 8, 16], got {:?}",
                self.semantic_downsampling
            )));
        }
        for (s, (&ch, op)) in self
            .semantic_stage_channels
            .iter()
            .zip(self.semantic_stage_operator.iter())
            .enumerate()
        {
            if ch == 0 {
                return Err(Error::Config(format!(
                    "model.semantic_stage_channels[{s}] must be >= 1"
                )));
            }
            if *op == OperatorKind::SelfAttention && ch % self.attention_head_dim != 0 {
                return Err(Error::Config(format!(
                    "model.semantic_stage_channels[{s}] = {ch} is not divisible by \
                     attention_head_dim = {}",
                    self.attention_head_dim
                )));
            }
        }
        if self.location_channels.0 == 0 {
            return Err(Error::Config(
                "model.location_channels must be >= 1".into(),
            ));
        }
        if self.decoder_base_channels == 0 {
            return Err(Error::Config(
                "model.decoder_base_channels must be >= 1".into(),
            ));
        }
        if self.mlp_expansion_ratio == 0 {
            return Err(Error::Config(
                "model.mlp_expansion_ratio must be >= 1".into(),
            ));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "model.norm_epsilon must be > 0, got {}",
                self.norm_epsilon
            )));
        }
        Ok(())
    }

    /// Pyramid channels at scales (1, 1/2, 1/4, 1/8, 1/16).
    pub fn pyramid_channels(&self) -> [usize; 5] {
        [
            self.location_channels.0,
            self.location_channels.1,
            self.semantic_stage_channels[0],
            self.semantic_stage_channels[1],
            self.semantic_stage_channels[2],
        ]
    }

    /// Decoder channel schedule D_i = C * 2^(i-1) for fusion levels 1..4.
    pub fn decoder_channels(&self) -> [usize; 4] {
        let c = self.decoder_base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }

    /// Flat `model.*` key/value pairs, one per field.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        fn list<T: std::fmt::Display>(xs: &[T]) -> String {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let ops: Vec<&str> = self.semantic_stage_operator.iter().map(|o| o.name()).collect();
        vec![
            ("model.input_channels".into(), self.input_channels.to_string()),
            (
                "model.location_channels".into(),
                format!("{},{}", self.location_channels.0, self.location_channels.1),
            ),
            ("model.semantic_stage_blocks".into(), list(&self.semantic_stage_blocks)),
            ("model.semantic_stage_channels".into(), list(&self.semantic_stage_channels)),
            ("model.semantic_stage_operator".into(), ops.join(",")),
            ("model.semantic_downsampling".into(), list(&self.semantic_downsampling)),
            ("model.decoder_base_channels".into(), self.decoder_base_channels.to_string()),
            ("model.mlp_expansion_ratio".into(), self.mlp_expansion_ratio.to_string()),
            ("model.attention_head_dim".into(), self.attention_head_dim.to_string()),
            ("model.norm_epsilon".into(), self.norm_epsilon.to_string()),
            ("model.seed".into(), self.seed.to_string()),
            ("model.decoder_kind".into(), self.decoder_kind.name().to_string()),
            ("model.supervise_side_outputs".into(), self.supervise_side_outputs.to_string()),
        ]
    }

    /// Apply one `model.*` key. Unknown keys are errors.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{v}` for {key}")))
        }
        fn parse_list<T: std::str::FromStr + Copy, const N: usize>(
            key: &str,
            v: &str,
        ) -> Result<[T; N]> {
            let items: Vec<T> = v
                .split(',')
                .map(|p| parse(key, p))
                .collect::<Result<Vec<_>>>()?;
            items.try_into().map_err(|_| {
                Error::Config(format!("{key} expects {N} comma-separated values, got `{v}`"))
            })
        }
        match key {
            "model.input_channels" => self.input_channels = parse(key, value)?,
            "model.location_channels" => {
                let [a, b]: [usize; 2] = parse_list(key, value)?;
                self.location_channels = (a, b);
            }
            "model.semantic_stage_blocks" => self.semantic_stage_blocks = parse_list(key, value)?,
            "model.semantic_stage_channels" => {
                self.semantic_stage_channels = parse_list(key, value)?
            }
            "model.semantic_stage_operator" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!(
                        "{key} expects 3 comma-separated operators, got `{value}`"
                    )));
                }
                for (slot, p) in self.semantic_stage_operator.iter_mut().zip(parts) {
                    *slot = OperatorKind::parse(p)?;
                }
            }
            "model.semantic_downsampling" => self.semantic_downsampling = parse_list(key, value)?,
            "model.decoder_base_channels" => self.decoder_base_channels = parse(key, value)?,
            "model.mlp_expansion_ratio" => self.mlp_expansion_ratio = parse(key, value)?,
            "model.attention_head_dim" => self.attention_head_dim = parse(key, value)?,
            "model.norm_epsilon" => self.norm_epsilon = parse(key, value)?,
            "model.seed" => self.seed = parse(key, value)?,
            "model.decoder_kind" => self.decoder_kind = DecoderKind::parse(value.trim())?,
            "model.supervise_side_outputs" => self.supervise_side_outputs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    /// One `key = value` line per field.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_kv() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Parse the output of [`Self::to_text`]; missing keys keep defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}
