use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Vgg16Truncated,
    InceptionV3,
    Xception,
    InceptionResnetV2,
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Vgg16Truncated => "vgg16_truncated",
            EncoderKind::InceptionV3 => "inception_v3",
            EncoderKind::Xception => "xception",
            EncoderKind::InceptionResnetV2 => "inception_resnet_v2",
        }
    }

    /// Feature width an external backbone adapter is expected to deliver.
    pub fn adapter_channels(&self) -> Option<usize> {
        match self {
            EncoderKind::Vgg16Truncated => None,
            EncoderKind::InceptionV3 => Some(768),
            EncoderKind::Xception => Some(728),
            EncoderKind::InceptionResnetV2 => Some(1088),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    InstanceNorm,
    BatchNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutKind {
    /// Drops whole feature maps.
    Spatial,
    Elementwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInjection {
    /// Every dilated branch after the first sees `concat(F, previous)`.
    AllBranches,
    /// Only the pooling branch and the rate-1 branch see `F`.
    FirstAndPoolingOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTopology {
    /// Pooling branch plus every dilated branch are stacked.
    ConcatAll,
    /// Only the last (largest-rate) branch leaves the module.
    LastDilationOnly,
    /// Pooling, rate-1 and last branch are stacked.
    D16PlusPoolingPlusD1,
    /// Everything except the rate-2 branch is stacked.
    DropD2FromConcat,
    /// The pooling branch is disconnected; dilated branches are stacked.
    NoPoolingConnections,
    /// A plain chain of dilated convolutions, no concatenation anywhere.
    NoConcatenations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpmConfig {
    pub enabled: bool,
    pub dilation_rates: Vec<usize>,
    pub pooling_branch: bool,
    pub encoder_feature_injection: FeatureInjection,
    pub output_topology: OutputTopology,
    pub normalization: NormKind,
    pub dropout_kind: DropoutKind,
    pub branch_filters: usize,
    pub dropout_rate: f32,
}

impl Default for FpmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dilation_rates: vec![1, 2, 4, 8, 16],
            pooling_branch: false,
            encoder_feature_injection: FeatureInjection::AllBranches,
            output_topology: OutputTopology::LastDilationOnly,
            normalization: NormKind::BatchNorm,
            dropout_kind: DropoutKind::Elementwise,
            branch_filters: 64,
            dropout_rate: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub gap_1: bool,
    pub gap_2: bool,
    pub encoder_skip_1: bool,
    pub encoder_skip_2: bool,
    pub mult_1: bool,
    pub mult_2: bool,
    pub normalization: NormKind,
    pub conv_filters: [usize; 3],
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            gap_1: false,
            gap_2: false,
            encoder_skip_1: false,
            encoder_skip_2: false,
            mult_1: false,
            mult_2: false,
            normalization: NormKind::InstanceNorm,
            conv_filters: [64, 64, 64],
        }
    }
}

impl DecoderConfig {
    /// Decoder of the base method: both GAP scaling paths active.
    pub fn full_gap() -> Self {
        Self {
            gap_1: true,
            gap_2: true,
            encoder_skip_1: true,
            encoder_skip_2: true,
            mult_1: true,
            mult_2: true,
            ..Self::default()
        }
    }

    pub(crate) fn path(&self, stage: usize) -> SkipPath {
        let (gap, skip, mult) = match stage {
            1 => (self.gap_1, self.encoder_skip_1, self.mult_1),
            _ => (self.gap_2, self.encoder_skip_2, self.mult_2),
        };
        SkipPath { gap, skip, mult }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SkipPath {
    pub gap: bool,
    pub skip: bool,
    pub mult: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub encoder: EncoderKind,
    /// Output widths of the four encoder blocks (VGG-16: 64, 128, 256, 512).
    pub encoder_widths: [usize; 4],
    pub frozen_blocks: usize,
    pub encoder_dropout_rate: f32,
    pub fpm: FpmConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 512,
            encoder: EncoderKind::Vgg16Truncated,
            encoder_widths: [64, 128, 256, 512],
            frozen_blocks: 3,
            encoder_dropout_rate: 0.25,
            fpm: FpmConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn check_rate(field: &str, rate: f32) -> Result<(), ModelError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(invalid(field, format!("{rate} is outside [0, 1)")))
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(invalid(
                "input_size",
                format!("{} is not a positive multiple of 8", self.input_size),
            ));
        }
        if self.frozen_blocks > 4 {
            return Err(invalid(
                "frozen_blocks",
                format!("{} is outside 0..=4", self.frozen_blocks),
            ));
        }
        if self.encoder_widths.contains(&0) {
            return Err(invalid("encoder_widths", "every block needs at least one channel"));
        }
        check_rate("encoder_dropout_rate", self.encoder_dropout_rate)?;

        let fpm = &self.fpm;
        check_rate("fpm.dropout_rate", fpm.dropout_rate)?;
        if fpm.enabled {
            let rates = &fpm.dilation_rates;
            if rates.first() != Some(&1) {
                return Err(invalid("fpm.dilation_rates", "must start with 1"));
            }
            if rates.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("fpm.dilation_rates", "must be strictly increasing"));
            }
            if fpm.branch_filters == 0 {
                return Err(invalid("fpm.branch_filters", "must be positive"));
            }
            if fpm.output_topology == OutputTopology::LastDilationOnly
                && fpm.dropout_kind != DropoutKind::Elementwise
            {
                return Err(invalid(
                    "fpm.dropout_kind",
                    "a single-branch output requires elementwise dropout",
                ));
            }
            if fpm.output_topology == OutputTopology::DropD2FromConcat && !rates.contains(&2) {
                return Err(invalid("fpm.output_topology", "no rate-2 branch to drop"));
            }
            if fpm.output_topology == OutputTopology::D16PlusPoolingPlusD1 && rates.len() < 2 {
                return Err(invalid("fpm.output_topology", "needs at least two dilated branches"));
            }
        }

        let dec = &self.decoder;
        if dec.conv_filters.contains(&0) {
            return Err(invalid("decoder.conv_filters", "every stage needs at least one channel"));
        }
        for stage in 1..=2 {
            let p = dec.path(stage);
            if p.mult && !p.gap {
                return Err(invalid(
                    &format!("decoder.mult_{stage}"),
                    format!("multiplication requires gap_{stage}"),
                ));
            }
            if p.mult && !p.skip {
                return Err(invalid(
                    &format!("decoder.mult_{stage}"),
                    format!("multiplication requires encoder_skip_{stage}"),
                ));
            }
            if p.gap && !p.skip {
                return Err(invalid(
                    &format!("decoder.gap_{stage}"),
                    format!("global average pooling needs encoder_skip_{stage} as its operand"),
                ));
            }
            if p.skip && self.encoder != EncoderKind::Vgg16Truncated {
                return Err(invalid(
                    &format!("decoder.encoder_skip_{stage}"),
                    format!(
                        "encoder {} exposes no intermediate feature maps",
                        self.encoder.name()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Shrinks every width so the network trains in seconds on a CPU.
    pub fn desk_scale(mut self, input_size: usize, branch_filters: usize) -> Self {
        self.input_size = input_size;
        self.encoder_widths = [8, 16, 32, 32];
        self.fpm.branch_filters = branch_filters;
        self.decoder.conv_filters = [16, 16, 8];
        self
    }
}
