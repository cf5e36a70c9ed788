mod common;

use fgseg::bundle::ArrayBundle;
use fgseg::model::{
    apply_pretrained_and_freeze, build_model, forward, preset, structural_summary, ModelConfig, ModelError,
    ParameterSet, PRESET_NAMES,
};
use fgseg::{Shape4, Tensor};

#[test]
fn every_preset_matches_the_golden_table() {
    for row in common::GOLDEN {
        if let Err(e) = common::check_golden(row) {
            panic!("{e}");
        }
    }
}

#[test]
fn every_named_preset_builds() {
    for name in PRESET_NAMES {
        let mut cfg = preset(name).unwrap();
        cfg.input_size = 64;
        let a = structural_summary(&build_model(&cfg).unwrap());
        let b = structural_summary(&build_model(&cfg).unwrap());
        assert_eq!(a, b, "{name}");
    }
    assert!(preset("Z9").is_none());
}

#[test]
fn removing_the_module_leaves_no_module_layers() {
    let mut cfg = preset("E2").unwrap();
    cfg.input_size = 64;
    let s = structural_summary(&build_model(&cfg).unwrap());
    assert!(s.dilation_rates.is_empty());
    assert_eq!(s.fpm_convs, 0);
    assert_eq!(s.layers.fpm, 0);
}

#[test]
fn multiplication_requires_its_gap() {
    let mut cfg = ModelConfig::default();
    cfg.decoder.mult_1 = true;
    cfg.decoder.gap_1 = false;
    match build_model(&cfg) {
        Err(ModelError::Config { field, .. }) => assert!(field.contains("mult_1"), "{field}"),
        other => panic!("expected a configuration error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn input_size_must_divide_by_eight() {
    let cfg = ModelConfig {
        input_size: 60,
        ..ModelConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(ModelError::Config { field, .. }) if field == "input_size"));
}

#[test]
fn forward_at_desk_scale() {
    let cfg = ModelConfig::default().desk_scale(64, 8);
    let graph = build_model(&cfg).unwrap();
    let params = ParameterSet::init(&graph, 0);
    let out = forward(&graph, &params, &Tensor::zeros(Shape4::new(1, 3, 64, 64))).unwrap();
    assert_eq!(out.shape(), Shape4::new(1, 1, 64, 64));
    assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn forward_at_full_resolution() {
    // Narrow widths keep the 512x512 pass affordable; the shape contract
    // does not depend on them.
    let cfg = ModelConfig::default().desk_scale(512, 4);
    let graph = build_model(&cfg).unwrap();
    let params = ParameterSet::init(&graph, 0);
    let out = forward(&graph, &params, &Tensor::filled(Shape4::new(2, 3, 512, 512), 0.5)).unwrap();
    assert_eq!(out.shape(), Shape4::new(2, 1, 512, 512));
}

#[test]
fn forward_preserves_shape_for_multiples_of_eight() {
    for size in [8, 16, 24, 40] {
        let graph = build_model(&ModelConfig::default().desk_scale(size, 4)).unwrap();
        let params = ParameterSet::init(&graph, 1);
        let out = forward(&graph, &params, &Tensor::zeros(Shape4::new(1, 3, size, size))).unwrap();
        assert_eq!(out.shape(), Shape4::new(1, 1, size, size), "size {size}");
    }
}

#[test]
fn wrong_input_shape_is_a_dimension_error() {
    let graph = build_model(&ModelConfig::default().desk_scale(32, 4)).unwrap();
    let params = ParameterSet::init(&graph, 0);
    let err = forward(&graph, &params, &Tensor::zeros(Shape4::new(1, 3, 16, 16))).unwrap_err();
    let text = err.to_string();
    assert!(matches!(err, ModelError::Dimension { .. }));
    assert!(text.contains("32") && text.contains("16"), "{text}");
}

#[test]
fn freezing_excludes_the_first_blocks() {
    let mut cfg = ModelConfig::default().desk_scale(32, 4);
    let graph = build_model(&cfg).unwrap();
    let params = apply_pretrained_and_freeze(ParameterSet::init(&graph, 0), None, 3).unwrap();
    let summary = structural_summary(&graph);
    let in_blocks: usize = params
        .tensors
        .iter()
        .filter(|t| t.block.is_some_and(|b| b <= 3))
        .map(|t| t.data.len())
        .sum();
    assert!(in_blocks > 0);
    assert_eq!(summary.frozen_params, in_blocks);
    for t in &params.tensors {
        if t.block.is_some_and(|b| b <= 3) {
            assert!(!t.trainable, "{}", t.name);
        }
    }

    cfg.frozen_blocks = 0;
    let graph = build_model(&cfg).unwrap();
    assert_eq!(structural_summary(&graph).frozen_params, 0);
    let params = apply_pretrained_and_freeze(ParameterSet::init(&graph, 0), None, 0).unwrap();
    assert!(params.tensors.iter().all(|t| t.trainable || t.role.is_buffer()));
}

#[test]
fn pretrained_weights_load_and_mismatches_are_named() {
    let cfg = ModelConfig::default().desk_scale(32, 4);
    let graph = build_model(&cfg).unwrap();
    let params = ParameterSet::init(&graph, 0);
    let mut bundle = ArrayBundle::default();
    for t in params.tensors.iter().filter(|t| t.block.is_some()) {
        bundle.insert(t.name.clone(), t.shape.clone(), vec![0.25; t.data.len()]);
    }
    let loaded = apply_pretrained_and_freeze(params.clone(), Some(&bundle), 3).unwrap();
    let w = loaded.by_name("block2_conv1.weight").unwrap();
    assert!(w.data.iter().all(|&v| v == 0.25));

    let t = params.by_name("block2_conv1.weight").unwrap();
    let mut wrong = t.shape.clone();
    wrong[1] += 1;
    bundle.insert("block2_conv1.weight", wrong.clone(), vec![0.0; wrong.iter().product()]);
    match apply_pretrained_and_freeze(params, Some(&bundle), 3) {
        Err(ModelError::WeightLoad { layer, .. }) => assert_eq!(layer, "block2_conv1.weight"),
        other => panic!("expected a weight-load error, got {:?}", other.map(|_| ())),
    }
}
