//! Named configurations for every variant of the ablation study.
//!
//! * `baseline_v2`: the starting-point network (rates 1,4,8,16 plus a pooling
//!   branch stacked into 5x64 features; decoder with both GAP scaling paths).
//! * `D1`..`D3`: dilation-rate changes on the baseline module.
//! * `C1`..`C5`: concatenation changes, on the baseline with the rate-2
//!   branch added.
//! * `E1`..`E3`: encoder-feature injection, module removal, pooling removal
//!   (same base as the C tests).
//! * `G1`..`G6`: GAP / encoder-skip removal in the decoder, on the proposed
//!   feature pooling module.
//! * `M1`..`M3`: multiplication removal in the decoder, same base.
//! * `proposed`: rates 1,2,4,8,16, no pooling branch, last branch only,
//!   batch norm, elementwise dropout, no GAP.
//! * `encoder_*`: the proposed network with a swapped backbone.

use super::config::*;

pub const PRESET_NAMES: &[&str] = &[
    "proposed",
    "baseline_v2",
    "D1",
    "D2",
    "D3",
    "C1",
    "C2",
    "C3",
    "C4",
    "C5",
    "E1",
    "E2",
    "E3",
    "G1",
    "G2",
    "G3",
    "G4",
    "G5",
    "G6",
    "M1",
    "M2",
    "M3",
    "encoder_inception_v3",
    "encoder_xception",
    "encoder_inception_resnet_v2",
];

fn baseline() -> ModelConfig {
    ModelConfig {
        fpm: FpmConfig {
            enabled: true,
            dilation_rates: vec![1, 4, 8, 16],
            pooling_branch: true,
            encoder_feature_injection: FeatureInjection::AllBranches,
            output_topology: OutputTopology::ConcatAll,
            normalization: NormKind::InstanceNorm,
            dropout_kind: DropoutKind::Spatial,
            branch_filters: 64,
            dropout_rate: 0.25,
        },
        decoder: DecoderConfig::full_gap(),
        ..ModelConfig::default()
    }
}

/// Baseline with the rate-2 branch added: the base of the C and E tests.
fn baseline_with_d2() -> ModelConfig {
    let mut cfg = baseline();
    cfg.fpm.dilation_rates = vec![1, 2, 4, 8, 16];
    cfg
}

fn proposed() -> ModelConfig {
    ModelConfig::default()
}

fn with_decoder(mutate: impl FnOnce(&mut DecoderConfig)) -> ModelConfig {
    let mut cfg = proposed();
    cfg.decoder = DecoderConfig::full_gap();
    mutate(&mut cfg.decoder);
    cfg
}

fn with_encoder(kind: EncoderKind) -> ModelConfig {
    ModelConfig {
        encoder: kind,
        frozen_blocks: 0,
        ..proposed()
    }
}

/// Resolves a preset name (case-sensitive) to its configuration.
pub fn preset(name: &str) -> Option<ModelConfig> {
    let cfg = match name {
        "proposed" => proposed(),
        "baseline_v2" => baseline(),
        "D1" => {
            let mut c = baseline();
            c.fpm.dilation_rates = vec![1, 4, 8];
            c
        }
        "D2" => baseline_with_d2(),
        "D3" => {
            let mut c = baseline();
            c.fpm.dilation_rates = vec![1, 2, 4, 8];
            c
        }
        "C1" => {
            let mut c = baseline_with_d2();
            c.fpm.output_topology = OutputTopology::DropD2FromConcat;
            c
        }
        "C2" => {
            let mut c = baseline_with_d2();
            c.fpm.output_topology = OutputTopology::D16PlusPoolingPlusD1;
            c
        }
        "C3" => {
            let mut c = baseline_with_d2();
            c.fpm.output_topology = OutputTopology::NoPoolingConnections;
            c
        }
        "C4" => {
            let mut c = baseline_with_d2();
            c.fpm.output_topology = OutputTopology::LastDilationOnly;
            c.fpm.dropout_kind = DropoutKind::Elementwise;
            c
        }
        "C5" => {
            let mut c = baseline_with_d2();
            c.fpm.output_topology = OutputTopology::NoConcatenations;
            c
        }
        "E1" => {
            let mut c = baseline_with_d2();
            c.fpm.encoder_feature_injection = FeatureInjection::FirstAndPoolingOnly;
            c
        }
        "E2" => {
            let mut c = baseline_with_d2();
            c.fpm.enabled = false;
            c
        }
        "E3" => {
            let mut c = baseline_with_d2();
            c.fpm.pooling_branch = false;
            c
        }
        "G1" => with_decoder(|d| {
            d.gap_1 = false;
            d.encoder_skip_1 = false;
            d.mult_1 = false;
        }),
        "G2" => with_decoder(|d| {
            d.gap_2 = false;
            d.encoder_skip_2 = false;
            d.mult_2 = false;
        }),
        "G3" => proposed(),
        "G4" => with_decoder(|d| {
            d.gap_1 = false;
            d.mult_1 = false;
        }),
        "G5" => with_decoder(|d| {
            d.gap_2 = false;
            d.mult_2 = false;
        }),
        "G6" => with_decoder(|d| {
            d.gap_1 = false;
            d.gap_2 = false;
            d.mult_1 = false;
            d.mult_2 = false;
        }),
        "M1" => with_decoder(|d| d.mult_1 = false),
        "M2" => with_decoder(|d| d.mult_2 = false),
        "M3" => with_decoder(|d| {
            d.mult_1 = false;
            d.mult_2 = false;
        }),
        "encoder_inception_v3" => with_encoder(EncoderKind::InceptionV3),
        "encoder_xception" => with_encoder(EncoderKind::Xception),
        "encoder_inception_resnet_v2" => with_encoder(EncoderKind::InceptionResnetV2),
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap_or_else(|| panic!("{name} missing"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(preset("G7").is_none());
        assert!(preset("Proposed").is_none());
    }
}
