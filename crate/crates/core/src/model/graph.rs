use serde::Serialize;

use super::config::*;
use super::ModelError;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Input,
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    },
    Relu,
    /// 2x2 max pooling; stride 1 keeps the spatial size.
    MaxPool { stride: usize },
    /// Bilinear 2x upsampling.
    Upsample2x,
    Norm { kind: NormKind, channels: usize },
    Dropout { kind: DropoutKind, rate: f32 },
    Concat,
    GlobalAvgPool,
    /// Channel-wise multiplication by a `[n, c, 1, 1]` operand.
    Multiply,
    /// Addition; the second operand may be `[n, c, 1, 1]`.
    Add,
    Sigmoid,
    /// Placeholder for a backbone provided by an external adapter.
    ExternalBackbone { name: String, out_channels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Input,
    Encoder { block: usize },
    Fpm,
    Decoder { stage: usize },
    Head,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output channel count.
    pub channels: usize,
    /// Spatial downsampling factor relative to the image.
    pub scale: usize,
    pub section: Section,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Taps {
    pub image: NodeId,
    /// Encoder output features (F).
    pub encoder_features: NodeId,
    /// Feature pooling module output (M); absent when the module is disabled.
    pub fpm_output: Option<NodeId>,
    pub logits: NodeId,
    pub probabilities: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkGraph {
    pub config: ModelConfig,
    pub nodes: Vec<Node>,
    pub taps: Taps,
}

impl NetworkGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Structural checks: topological order, one image input, one
    /// single-channel full-resolution output, consistent concatenations.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::Graph(reason);
        let inputs = self.nodes.iter().filter(|n| n.op == Op::Input).count();
        if inputs != 1 {
            return Err(bad(format!("expected one input node, found {inputs}")));
        }
        for node in &self.nodes {
            if node.inputs.iter().any(|&i| i >= node.id) {
                return Err(bad(format!("{} consumes a later node", node.name)));
            }
            if node.op == Op::Concat {
                let sum: usize = node.inputs.iter().map(|&i| self.nodes[i].channels).sum();
                if sum != node.channels {
                    return Err(bad(format!(
                        "{}: inputs carry {sum} channels, output declares {}",
                        node.name, node.channels
                    )));
                }
            }
        }
        let out = self.node(self.taps.probabilities);
        if out.channels != 1 || out.scale != 1 || out.op != Op::Sigmoid {
            return Err(bad("output must be a full-resolution single-channel sigmoid".into()));
        }
        Ok(())
    }
}

struct Builder {
    nodes: Vec<Node>,
    frozen_blocks: usize,
}

impl Builder {
    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>, channels: usize, section: Section) -> NodeId {
        let id = self.nodes.len();
        let scale = inputs.first().map_or(1, |&i| self.nodes[i].scale);
        let scale = match &op {
            Op::MaxPool { stride: 2 } => scale * 2,
            Op::Upsample2x => scale / 2,
            Op::ExternalBackbone { .. } => 8,
            _ => scale,
        };
        let frozen = matches!(section, Section::Encoder { block } if block >= 1 && block <= self.frozen_blocks);
        self.nodes.push(Node {
            id,
            name,
            op,
            inputs,
            channels,
            scale,
            section,
            frozen,
        });
        id
    }

    fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    fn conv(&mut self, name: String, input: NodeId, out_ch: usize, kernel: usize, dilation: usize, section: Section) -> NodeId {
        let in_ch = self.channels(input);
        self.push(
            name,
            Op::Conv {
                in_ch,
                out_ch,
                kernel,
                dilation,
            },
            vec![input],
            out_ch,
            section,
        )
    }

    fn unary(&mut self, name: String, op: Op, input: NodeId, section: Section) -> NodeId {
        let ch = self.channels(input);
        self.push(name, op, vec![input], ch, section)
    }

    fn concat(&mut self, name: String, parts: Vec<NodeId>, section: Section) -> NodeId {
        let ch = parts.iter().map(|&p| self.channels(p)).sum();
        self.push(name, Op::Concat, parts, ch, section)
    }
}

struct EncoderOut {
    features: NodeId,
    /// Pre-pooling outputs of blocks 2 and 3 (half and quarter resolution).
    skips: Option<[NodeId; 2]>,
}

fn build_vgg(b: &mut Builder, cfg: &ModelConfig, image: NodeId) -> EncoderOut {
    let mut x = image;
    let mut block_out = [0; 3];
    for block in 1..=3 {
        let sec = Section::Encoder { block };
        for i in 1..=2 {
            x = b.conv(format!("block{block}_conv{i}"), x, cfg.encoder_widths[block - 1], 3, 1, sec);
            x = b.unary(format!("block{block}_relu{i}"), Op::Relu, x, sec);
        }
        block_out[block - 1] = x;
        x = b.unary(format!("block{block}_pool"), Op::MaxPool { stride: 2 }, x, sec);
    }
    let sec = Section::Encoder { block: 4 };
    for i in 1..=3 {
        x = b.conv(format!("block4_conv{i}"), x, cfg.encoder_widths[3], 3, 1, sec);
        x = b.unary(format!("block4_relu{i}"), Op::Relu, x, sec);
        x = b.unary(
            format!("block4_dropout{i}"),
            Op::Dropout {
                kind: DropoutKind::Elementwise,
                rate: cfg.encoder_dropout_rate,
            },
            x,
            sec,
        );
    }
    EncoderOut {
        features: x,
        skips: Some([block_out[2], block_out[1]]),
    }
}

fn build_fpm(b: &mut Builder, fpm: &FpmConfig, f: NodeId) -> NodeId {
    let sec = Section::Fpm;
    let bf = fpm.branch_filters;
    let topo = fpm.output_topology;
    let pooling_used = fpm.pooling_branch
        && matches!(
            topo,
            OutputTopology::ConcatAll | OutputTopology::DropD2FromConcat | OutputTopology::D16PlusPoolingPlusD1
        );
    let pool = pooling_used.then(|| {
        let p = b.unary("fpm_pool".into(), Op::MaxPool { stride: 1 }, f, sec);
        let p = b.conv("fpm_pool_conv".into(), p, bf, 1, 1, sec);
        b.unary("fpm_pool_relu".into(), Op::Relu, p, sec)
    });

    let mut branches: Vec<(usize, NodeId)> = Vec::new();
    for &rate in &fpm.dilation_rates {
        let input = match branches.last() {
            None => f,
            Some(&(_, prev)) => {
                let inject = topo != OutputTopology::NoConcatenations
                    && fpm.encoder_feature_injection == FeatureInjection::AllBranches;
                if inject {
                    b.concat(format!("fpm_inject_d{rate}"), vec![f, prev], sec)
                } else {
                    prev
                }
            }
        };
        let c = b.conv(format!("fpm_d{rate}_conv"), input, bf, 3, rate, sec);
        let r = b.unary(format!("fpm_d{rate}_relu"), Op::Relu, c, sec);
        branches.push((rate, r));
    }

    let first = branches[0].1;
    let last = branches[branches.len() - 1].1;
    let mut members: Vec<NodeId> = Vec::new();
    match topo {
        OutputTopology::ConcatAll => {
            members.extend(pool);
            members.extend(branches.iter().map(|&(_, n)| n));
        }
        OutputTopology::DropD2FromConcat => {
            members.extend(pool);
            members.extend(branches.iter().filter(|&&(r, _)| r != 2).map(|&(_, n)| n));
        }
        OutputTopology::D16PlusPoolingPlusD1 => {
            members.extend(pool);
            members.push(first);
            members.push(last);
        }
        OutputTopology::NoPoolingConnections => {
            members.extend(branches.iter().map(|&(_, n)| n));
        }
        OutputTopology::LastDilationOnly | OutputTopology::NoConcatenations => members.push(last),
    }
    let stacked = if members.len() > 1 {
        b.concat("fpm_stack".into(), members, sec)
    } else {
        members[0]
    };
    let ch = b.channels(stacked);
    let n = b.unary(
        "fpm_norm".into(),
        Op::Norm {
            kind: fpm.normalization,
            channels: ch,
        },
        stacked,
        sec,
    );
    let r = b.unary("fpm_relu".into(), Op::Relu, n, sec);
    b.unary(
        "fpm_dropout".into(),
        Op::Dropout {
            kind: fpm.dropout_kind,
            rate: fpm.dropout_rate,
        },
        r,
        sec,
    )
}

/// Builds the layer graph for `config`.
pub fn build_model(config: &ModelConfig) -> Result<NetworkGraph, ModelError> {
    config.validate()?;
    let mut b = Builder {
        nodes: Vec::new(),
        frozen_blocks: config.frozen_blocks,
    };
    let image = b.push("image".into(), Op::Input, vec![], 3, Section::Input);
    let enc = match config.encoder {
        EncoderKind::Vgg16Truncated => build_vgg(&mut b, config, image),
        other => {
            let ch = other.adapter_channels().unwrap_or(0);
            let id = b.push(
                format!("{}_backbone", other.name()),
                Op::ExternalBackbone {
                    name: other.name().to_string(),
                    out_channels: ch,
                },
                vec![image],
                ch,
                Section::Encoder { block: 0 },
            );
            EncoderOut {
                features: id,
                skips: None,
            }
        }
    };

    let fpm_output = config.fpm.enabled.then(|| build_fpm(&mut b, &config.fpm, enc.features));
    let mut x = fpm_output.unwrap_or(enc.features);

    let dec = &config.decoder;
    for stage in 1..=3 {
        let sec = Section::Decoder { stage };
        let filters = dec.conv_filters[stage - 1];
        x = b.unary(format!("dec{stage}_up"), Op::Upsample2x, x, sec);
        x = b.conv(format!("dec{stage}_conv"), x, filters, 3, 1, sec);
        x = b.unary(
            format!("dec{stage}_norm"),
            Op::Norm {
                kind: dec.normalization,
                channels: filters,
            },
            x,
            sec,
        );
        x = b.unary(format!("dec{stage}_relu"), Op::Relu, x, sec);
        if stage > 2 {
            continue;
        }
        let path = dec.path(stage);
        if !path.skip {
            continue;
        }
        // validate() guarantees skips exist whenever a path requests them.
        let source = enc.skips.expect("skip source")[stage - 1];
        let proj = b.conv(format!("dec{stage}_skip_proj"), source, filters, 1, 1, sec);
        if path.gap {
            let g = b.unary(format!("dec{stage}_gap"), Op::GlobalAvgPool, proj, sec);
            let operand = if path.mult {
                b.push(format!("dec{stage}_mult"), Op::Multiply, vec![x, g], filters, sec)
            } else {
                g
            };
            x = b.push(format!("dec{stage}_add"), Op::Add, vec![x, operand], filters, sec);
        } else {
            x = b.push(format!("dec{stage}_add"), Op::Add, vec![x, proj], filters, sec);
        }
    }
    let logits = b.conv("head_conv".into(), x, 1, 1, 1, Section::Head);
    let probabilities = b.unary("head_sigmoid".into(), Op::Sigmoid, logits, Section::Head);

    let graph = NetworkGraph {
        config: config.clone(),
        nodes: b.nodes,
        taps: Taps {
            image,
            encoder_features: enc.features,
            fpm_output,
            logits,
            probabilities,
        },
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::super::presets::{preset, PRESET_NAMES};
    use super::*;

    #[test]
    fn all_presets_build_valid_graphs() {
        for name in PRESET_NAMES {
            let g = build_model(&preset(name).unwrap()).unwrap();
            g.validate().unwrap();
        }
    }

    #[test]
    fn encoder_output_stride_is_eight() {
        let g = build_model(&ModelConfig::default()).unwrap();
        assert_eq!(g.node(g.taps.encoder_features).scale, 8);
        assert_eq!(g.node(g.taps.encoder_features).channels, 512);
    }

    #[test]
    fn vgg_block_layout() {
        let g = build_model(&ModelConfig::default()).unwrap();
        let convs = |block| {
            g.nodes
                .iter()
                .filter(|n| n.section == Section::Encoder { block } && matches!(n.op, Op::Conv { .. }))
                .count()
        };
        assert_eq!([convs(1), convs(2), convs(3), convs(4)], [2, 2, 2, 3]);
        let dropouts = g
            .nodes
            .iter()
            .filter(|n| n.section == Section::Encoder { block: 4 } && matches!(n.op, Op::Dropout { .. }))
            .count();
        assert_eq!(dropouts, 3);
    }

    #[test]
    fn frozen_flags_follow_config() {
        let g = build_model(&ModelConfig::default()).unwrap();
        for n in &g.nodes {
            let expect = matches!(n.section, Section::Encoder { block } if (1..=3).contains(&block));
            assert_eq!(n.frozen, expect, "{}", n.name);
        }
    }

    #[test]
    fn gap_skip_injects_channel_scaling() {
        let g = build_model(&preset("baseline_v2").unwrap()).unwrap();
        let mult = g.nodes.iter().find(|n| n.name == "dec1_mult").unwrap();
        let gap = g.node(mult.inputs[1]);
        assert_eq!(gap.op, Op::GlobalAvgPool);
        assert_eq!(g.node(gap.inputs[0]).name, "dec1_skip_proj");
    }
}
