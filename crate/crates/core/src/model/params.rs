//! Parameter storage, seeded initialization and pretrained-weight loading.
//!
//! Initialization: convolution weights are drawn from
//! `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))` with `fan_in = in_ch * k * k`,
//! biases start at 0, normalization scales at 1 and shifts at 0, batch-norm
//! running statistics at mean 0 / variance 1. Tensor `i` draws from ChaCha8
//! stream `i` of the run seed, so adding a layer never perturbs the others.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::NormKind;
use super::graph::{NetworkGraph, NodeId, Op, Section};
use super::ModelError;
use crate::bundle::ArrayBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn suffix(&self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }

    /// Running statistics are state, not learnable parameters.
    pub fn is_buffer(&self) -> bool {
        matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    /// `<layer>.<role>`, e.g. `block1_conv1.weight`.
    pub name: String,
    pub node: NodeId,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub trainable: bool,
    /// Encoder block the tensor belongs to, if any.
    pub block: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub tensors: Vec<ParamTensor>,
    slots: Vec<Vec<usize>>,
}

fn layer_shapes(op: &Op) -> Vec<(ParamRole, Vec<usize>)> {
    match op {
        Op::Conv {
            in_ch,
            out_ch,
            kernel,
            ..
        } => vec![
            (ParamRole::Weight, vec![*out_ch, *in_ch, *kernel, *kernel]),
            (ParamRole::Bias, vec![*out_ch]),
        ],
        Op::Norm { kind, channels } => {
            let mut v = vec![
                (ParamRole::Gamma, vec![*channels]),
                (ParamRole::Beta, vec![*channels]),
            ];
            if *kind == NormKind::BatchNorm {
                v.push((ParamRole::RunningMean, vec![*channels]));
                v.push((ParamRole::RunningVar, vec![*channels]));
            }
            v
        }
        _ => Vec::new(),
    }
}

impl ParameterSet {
    /// Seeded initialization for every layer of `graph`; trainability
    /// follows the graph's frozen flags.
    pub fn init(graph: &NetworkGraph, seed: u64) -> Self {
        let mut tensors = Vec::new();
        let mut slots = vec![Vec::new(); graph.nodes.len()];
        for node in &graph.nodes {
            for (role, shape) in layer_shapes(&node.op) {
                let len: usize = shape.iter().product();
                let index = tensors.len();
                let data = match role {
                    ParamRole::Weight => {
                        let fan_in: usize = shape[1..].iter().product();
                        let limit = (6.0 / fan_in as f64).sqrt() as f32;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(index as u64);
                        (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
                    }
                    ParamRole::Gamma | ParamRole::RunningVar => vec![1.0; len],
                    _ => vec![0.0; len],
                };
                slots[node.id].push(index);
                tensors.push(ParamTensor {
                    name: format!("{}.{}", node.name, role.suffix()),
                    node: node.id,
                    role,
                    shape,
                    data,
                    trainable: !role.is_buffer() && !node.frozen,
                    block: match node.section {
                        Section::Encoder { block } if block > 0 => Some(block),
                        _ => None,
                    },
                });
            }
        }
        Self { tensors, slots }
    }

    pub fn slot(&self, node: NodeId, role: ParamRole) -> Option<usize> {
        self.slots[node].iter().copied().find(|&i| self.tensors[i].role == role)
    }

    pub fn get(&self, node: NodeId, role: ParamRole) -> &[f32] {
        let i = self.slot(node, role).expect("parameter present for node");
        &self.tensors[i].data
    }

    pub fn get_mut(&mut self, node: NodeId, role: ParamRole) -> &mut [f32] {
        let i = self.slot(node, role).expect("parameter present for node");
        &mut self.tensors[i].data
    }

    pub fn node_trainable(&self, node: NodeId) -> bool {
        self.slots[node].iter().any(|&i| self.tensors[i].trainable)
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn count(&self, pred: impl Fn(&ParamTensor) -> bool) -> usize {
        self.tensors
            .iter()
            .filter(|t| !t.role.is_buffer() && pred(t))
            .map(|t| t.data.len())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.count(|t| t.trainable)
    }

    pub fn frozen_count(&self) -> usize {
        self.count(|t| !t.trainable)
    }

    /// Marks every tensor of encoder blocks `1..=frozen_blocks` non-trainable
    /// and everything else (except buffers) trainable.
    pub fn set_frozen_blocks(&mut self, frozen_blocks: usize) {
        for t in &mut self.tensors {
            let frozen = t.block.is_some_and(|b| b <= frozen_blocks);
            t.trainable = !t.role.is_buffer() && !frozen;
        }
    }

    /// Checks that the tensor layout matches `graph`.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<(), ModelError> {
        let expected: Vec<(String, Vec<usize>)> = graph
            .nodes
            .iter()
            .flat_map(|n| {
                layer_shapes(&n.op)
                    .into_iter()
                    .map(move |(role, shape)| (format!("{}.{}", n.name, role.suffix()), shape))
            })
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(ModelError::Dimension {
                what: "parameter set".into(),
                expected: format!("{} tensors", expected.len()),
                actual: format!("{} tensors", self.tensors.len()),
            });
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            let len: usize = shape.iter().product();
            if *name != t.name || *shape != t.shape || t.data.len() != len {
                return Err(ModelError::Dimension {
                    what: name.clone(),
                    expected: format!("{shape:?}"),
                    actual: format!("{} {:?}", t.name, t.shape),
                });
            }
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> ArrayBundle {
        let mut b = ArrayBundle::default();
        for t in &self.tensors {
            b.insert(t.name.clone(), t.shape.clone(), t.data.clone());
        }
        b
    }

    /// Rebuilds a parameter set for `graph` from a bundle containing every
    /// tensor (a checkpoint).
    pub fn from_bundle(graph: &NetworkGraph, bundle: &ArrayBundle) -> Result<Self, ModelError> {
        let mut set = ParameterSet::init(graph, 0);
        for t in &mut set.tensors {
            let arr = bundle.get(&t.name).ok_or_else(|| ModelError::WeightLoad {
                layer: t.name.clone(),
                reason: "missing from bundle".into(),
            })?;
            if arr.shape != t.shape {
                return Err(ModelError::WeightLoad {
                    layer: t.name.clone(),
                    reason: format!("shape {:?}, expected {:?}", arr.shape, t.shape),
                });
            }
            t.data.clone_from(&arr.data);
        }
        Ok(set)
    }
}

/// Copies pretrained encoder weights (when given) and applies freezing.
///
/// The bundle must provide `block{b}_conv{i}.weight` (`[out, in, 3, 3]`) and
/// `.bias` for every encoder convolution; other arrays are ignored. The
/// first mismatching layer is reported.
pub fn apply_pretrained_and_freeze(
    mut params: ParameterSet,
    weights: Option<&ArrayBundle>,
    frozen_blocks: usize,
) -> Result<ParameterSet, ModelError> {
    if frozen_blocks > 4 {
        return Err(ModelError::Config {
            field: "frozen_blocks".into(),
            reason: format!("{frozen_blocks} is outside 0..=4"),
        });
    }
    if let Some(bundle) = weights {
        for t in params.tensors.iter_mut().filter(|t| t.block.is_some()) {
            let arr = bundle.get(&t.name).ok_or_else(|| ModelError::WeightLoad {
                layer: t.name.clone(),
                reason: "missing from weight bundle".into(),
            })?;
            if arr.shape != t.shape {
                return Err(ModelError::WeightLoad {
                    layer: t.name.clone(),
                    reason: format!("bundle shape {:?}, encoder expects {:?}", arr.shape, t.shape),
                });
            }
            t.data.clone_from(&arr.data);
        }
    }
    params.set_frozen_blocks(frozen_blocks);
    Ok(params)
}
