use std::collections::BTreeSet;

use serde::Serialize;

use super::graph::{NetworkGraph, Op, Section};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub encoder: usize,
    pub fpm: usize,
    pub decoder: usize,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StructuralSummary {
    /// Number of graph nodes per stage.
    pub layers: StageCounts,
    pub encoder_convs: usize,
    pub fpm_convs: usize,
    pub decoder_convs: usize,
    /// Dilation rates of the feature pooling module's convolutions.
    pub dilation_rates: BTreeSet<usize>,
    pub pooling_branches: usize,
    /// Concatenations feeding `F` into later dilated branches.
    pub fpm_injection_concats: usize,
    /// Inputs of the final multi-feature stack; 0 when a single branch leaves.
    pub fpm_concat_arity: usize,
    /// Channels leaving the feature pooling module (0 when disabled).
    pub fpm_output_width: usize,
    pub gap_nodes: usize,
    pub multiply_nodes: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
}

pub(crate) fn param_count(op: &Op) -> usize {
    match op {
        Op::Conv {
            in_ch,
            out_ch,
            kernel,
            ..
        } => out_ch * in_ch * kernel * kernel + out_ch,
        Op::Norm { channels, .. } => 2 * channels,
        _ => 0,
    }
}

pub fn structural_summary(graph: &NetworkGraph) -> StructuralSummary {
    let mut s = StructuralSummary {
        layers: StageCounts::default(),
        encoder_convs: 0,
        fpm_convs: 0,
        decoder_convs: 0,
        dilation_rates: BTreeSet::new(),
        pooling_branches: 0,
        fpm_injection_concats: 0,
        fpm_concat_arity: 0,
        fpm_output_width: graph.taps.fpm_output.map_or(0, |id| graph.node(id).channels),
        gap_nodes: 0,
        multiply_nodes: 0,
        trainable_params: 0,
        frozen_params: 0,
    };
    for node in &graph.nodes {
        let is_conv = matches!(node.op, Op::Conv { .. });
        match node.section {
            Section::Input => {}
            Section::Encoder { .. } => {
                s.layers.encoder += 1;
                s.encoder_convs += is_conv as usize;
            }
            Section::Fpm => {
                s.layers.fpm += 1;
                s.fpm_convs += is_conv as usize;
            }
            Section::Decoder { .. } => {
                s.layers.decoder += 1;
                s.decoder_convs += is_conv as usize;
            }
            Section::Head => s.layers.head += 1,
        }
        match &node.op {
            Op::Conv { dilation, kernel, .. } if node.section == Section::Fpm && *kernel == 3 => {
                s.dilation_rates.insert(*dilation);
            }
            Op::MaxPool { stride: 1 } if node.section == Section::Fpm => s.pooling_branches += 1,
            Op::Concat if node.section == Section::Fpm => {
                if node.name == "fpm_stack" {
                    s.fpm_concat_arity = node.inputs.len();
                } else {
                    s.fpm_injection_concats += 1;
                }
            }
            Op::GlobalAvgPool => s.gap_nodes += 1,
            Op::Multiply => s.multiply_nodes += 1,
            _ => {}
        }
        let p = param_count(&node.op);
        if node.frozen {
            s.frozen_params += p;
        } else {
            s.trainable_params += p;
        }
    }
    s
}
