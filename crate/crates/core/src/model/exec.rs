//! Graph execution: inference, training-mode forward with a saved trace,
//! and reverse-mode gradients.

use rand::Rng;

use super::config::{DropoutKind, NormKind};
use super::graph::{NetworkGraph, Op};
use super::params::{ParamRole, ParameterSet};
use super::ModelError;
use crate::ops::{self, ConvGeom, NormCache};
use crate::tensor::{Shape4, Tensor};

enum Cache {
    None,
    Pool(Vec<u32>),
    Norm(NormCache),
    Mask(Vec<f32>),
}

/// Activations and per-layer state from a training-mode forward pass.
pub struct Trace {
    values: Vec<Tensor>,
    caches: Vec<Cache>,
}

impl Trace {
    pub fn value(&self, node: usize) -> &Tensor {
        &self.values[node]
    }

    pub fn probabilities(&self, graph: &NetworkGraph) -> &Tensor {
        &self.values[graph.taps.probabilities]
    }
}

/// Per-tensor gradients, indexed like `ParameterSet::tensors`; `None` for
/// frozen tensors and buffers.
pub struct Gradients {
    pub per_tensor: Vec<Option<Vec<f32>>>,
}

fn check_images(graph: &NetworkGraph, images: &Tensor) -> Result<(), ModelError> {
    let s = images.shape();
    let size = graph.config.input_size;
    if s.c != 3 || s.h != size || s.w != size || s.n == 0 {
        return Err(ModelError::Dimension {
            what: "image batch".into(),
            expected: format!("Nx3x{size}x{size} with N >= 1"),
            actual: s.to_string(),
        });
    }
    Ok(())
}

fn conv_geom(op: &Op) -> ConvGeom {
    match *op {
        Op::Conv {
            in_ch,
            out_ch,
            kernel,
            dilation,
        } => ConvGeom {
            in_ch,
            out_ch,
            kernel,
            dilation,
        },
        _ => unreachable!("not a convolution"),
    }
}

enum Mode<'a, R: Rng> {
    Infer,
    Train(&'a mut R),
}

/// Updated running statistics produced by a training-mode batch norm.
type StatUpdate = Option<(Vec<f32>, Vec<f32>)>;

fn eval_node<R: Rng>(
    graph: &NetworkGraph,
    params: &ParameterSet,
    id: usize,
    inputs: &[&Tensor],
    mode: &mut Mode<'_, R>,
) -> Result<(Tensor, Cache, StatUpdate), ModelError> {
    let node = graph.node(id);
    let mut stats = None;
    let out = match &node.op {
        Op::Input => unreachable!("input handled by caller"),
        Op::Conv { .. } => {
            let g = conv_geom(&node.op);
            let y = ops::conv2d_forward(
                inputs[0],
                params.get(id, ParamRole::Weight),
                params.get(id, ParamRole::Bias),
                &g,
            );
            (y, Cache::None)
        }
        Op::Relu => (ops::relu_forward(inputs[0]), Cache::None),
        Op::Sigmoid => (ops::sigmoid_forward(inputs[0]), Cache::None),
        Op::MaxPool { stride } => {
            let (y, arg) = ops::maxpool_forward(inputs[0], *stride);
            (y, Cache::Pool(arg))
        }
        Op::Upsample2x => (ops::upsample2x_forward(inputs[0]), Cache::None),
        Op::Norm { kind, .. } => {
            let gamma = params.get(id, ParamRole::Gamma).to_vec();
            let beta = params.get(id, ParamRole::Beta).to_vec();
            match (kind, &mode) {
                (NormKind::InstanceNorm, _) => {
                    let (y, c) = ops::instance_norm_forward(inputs[0], &gamma, &beta);
                    (y, Cache::Norm(c))
                }
                (NormKind::BatchNorm, Mode::Infer) => {
                    let y = ops::batch_norm_forward_infer(
                        inputs[0],
                        &gamma,
                        &beta,
                        params.get(id, ParamRole::RunningMean),
                        params.get(id, ParamRole::RunningVar),
                    );
                    (y, Cache::None)
                }
                (NormKind::BatchNorm, Mode::Train(_)) => {
                    let mut mean = params.get(id, ParamRole::RunningMean).to_vec();
                    let mut var = params.get(id, ParamRole::RunningVar).to_vec();
                    let (y, c) = ops::batch_norm_forward_train(inputs[0], &gamma, &beta, &mut mean, &mut var);
                    stats = Some((mean, var));
                    (y, Cache::Norm(c))
                }
            }
        }
        Op::Dropout { kind, rate } => match mode {
            Mode::Train(rng) if *rate > 0.0 => {
                let mask = ops::dropout_mask(inputs[0].shape(), *rate, *kind == DropoutKind::Spatial, *rng);
                (ops::apply_mask(inputs[0], &mask), Cache::Mask(mask))
            }
            _ => (inputs[0].clone(), Cache::None),
        },
        Op::Concat => (ops::concat_forward(inputs), Cache::None),
        Op::GlobalAvgPool => (ops::gap_forward(inputs[0]), Cache::None),
        Op::Multiply => (ops::channel_scale_forward(inputs[0], inputs[1]), Cache::None),
        Op::Add => (ops::add_forward(inputs[0], inputs[1]), Cache::None),
        Op::ExternalBackbone { name, .. } => return Err(ModelError::BackboneUnavailable(name.clone())),
    };
    Ok((out.0, out.1, stats))
}

/// Inference-mode forward pass (dropout off, batch norm on running
/// statistics). Returns `N x 1 x H x W` probabilities.
pub fn forward(graph: &NetworkGraph, params: &ParameterSet, images: &Tensor) -> Result<Tensor, ModelError> {
    check_images(graph, images)?;
    params.check_against(graph)?;
    let n = graph.nodes.len();
    let mut last_use = vec![0usize; n];
    for node in &graph.nodes {
        for &i in &node.inputs {
            last_use[i] = node.id;
        }
    }
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    values[graph.taps.image] = Some(images.clone());
    let mut mode: Mode<'_, rand_chacha::ChaCha8Rng> = Mode::Infer;
    for node in graph.nodes.iter().skip(1) {
        let (y, _, _) = {
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().expect("value alive"))
                .collect();
            eval_node(graph, params, node.id, &inputs, &mut mode)?
        };
        values[node.id] = Some(y);
        for &i in &node.inputs {
            if last_use[i] == node.id {
                values[i] = None;
            }
        }
    }
    Ok(values[graph.taps.probabilities].take().expect("output computed"))
}

/// Training-mode forward pass: dropout active, batch norm on batch
/// statistics (running estimates updated in `params`).
pub fn forward_train(
    graph: &NetworkGraph,
    params: &mut ParameterSet,
    images: &Tensor,
    rng: &mut impl Rng,
) -> Result<Trace, ModelError> {
    check_images(graph, images)?;
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.nodes.len());
    let mut caches = Vec::with_capacity(graph.nodes.len());
    values.push(images.clone());
    caches.push(Cache::None);
    let mut mode = Mode::Train(rng);
    for node in graph.nodes.iter().skip(1) {
        let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
        let (y, c, stats) = eval_node(graph, params, node.id, &inputs, &mut mode)?;
        if let Some((mean, var)) = stats {
            params.get_mut(node.id, ParamRole::RunningMean).copy_from_slice(&mean);
            params.get_mut(node.id, ParamRole::RunningVar).copy_from_slice(&var);
        }
        values.push(y);
        caches.push(c);
    }
    Ok(Trace { values, caches })
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Back-propagates `d_probs` (gradient of the loss with respect to the
/// output probabilities) through the trace.
pub fn backward(graph: &NetworkGraph, params: &ParameterSet, trace: &Trace, d_probs: Tensor) -> Gradients {
    let n = graph.nodes.len();
    let mut requires = vec![false; n];
    for node in &graph.nodes {
        requires[node.id] = params.node_trainable(node.id) || node.inputs.iter().any(|&i| requires[i]);
    }
    let mut per_tensor: Vec<Option<Vec<f32>>> = vec![None; params.tensors.len()];
    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    grads[graph.taps.probabilities] = Some(d_probs);

    let set = |per_tensor: &mut Vec<Option<Vec<f32>>>, id: usize, role: ParamRole, g: Vec<f32>| {
        if let Some(i) = params.slot(id, role) {
            if params.tensors[i].trainable {
                per_tensor[i] = Some(g);
            }
        }
    };

    for node in graph.nodes.iter().rev() {
        let Some(dy) = grads[node.id].take() else {
            continue;
        };
        if !requires[node.id] {
            continue;
        }
        let id = node.id;
        let need = |k: usize| requires[node.inputs[k]];
        let x0 = node.inputs.first().map(|&i| trace.value(i));
        let push = |k: usize, g: Tensor, grads: &mut Vec<Option<Tensor>>| {
            if requires[node.inputs[k]] {
                accumulate(&mut grads[node.inputs[k]], g);
            }
        };
        match &node.op {
            Op::Input | Op::ExternalBackbone { .. } => {}
            Op::Conv { .. } => {
                let g = conv_geom(&node.op);
                let trainable = params.node_trainable(id);
                let cg = ops::conv2d_backward(
                    x0.unwrap(),
                    params.get(id, ParamRole::Weight),
                    &dy,
                    &g,
                    need(0),
                    trainable,
                );
                if let (Some(dw), Some(db)) = (cg.dweight, cg.dbias) {
                    set(&mut per_tensor, id, ParamRole::Weight, dw);
                    set(&mut per_tensor, id, ParamRole::Bias, db);
                }
                if let Some(dx) = cg.dx {
                    push(0, dx, &mut grads);
                }
            }
            Op::Relu => push(0, ops::relu_backward(trace.value(id), &dy), &mut grads),
            Op::Sigmoid => push(0, ops::sigmoid_backward(trace.value(id), &dy), &mut grads),
            Op::MaxPool { .. } => {
                let Cache::Pool(arg) = &trace.caches[id] else { unreachable!() };
                push(0, ops::maxpool_backward(x0.unwrap().shape(), arg, &dy), &mut grads);
            }
            Op::Upsample2x => push(0, ops::upsample2x_backward(x0.unwrap().shape(), &dy), &mut grads),
            Op::Norm { kind, .. } => {
                let Cache::Norm(cache) = &trace.caches[id] else { unreachable!() };
                let gamma = params.get(id, ParamRole::Gamma);
                let ng = match kind {
                    NormKind::InstanceNorm => ops::instance_norm_backward(cache, gamma, &dy),
                    NormKind::BatchNorm => ops::batch_norm_backward(cache, gamma, &dy),
                };
                set(&mut per_tensor, id, ParamRole::Gamma, ng.dgamma);
                set(&mut per_tensor, id, ParamRole::Beta, ng.dbeta);
                push(0, ng.dx, &mut grads);
            }
            Op::Dropout { .. } => match &trace.caches[id] {
                Cache::Mask(mask) => push(0, ops::apply_mask(&dy, mask), &mut grads),
                _ => push(0, dy, &mut grads),
            },
            Op::Concat => {
                let chans: Vec<usize> = node.inputs.iter().map(|&i| graph.node(i).channels).collect();
                for (k, g) in ops::concat_backward(&dy, &chans).into_iter().enumerate() {
                    push(k, g, &mut grads);
                }
            }
            Op::GlobalAvgPool => push(0, ops::gap_backward(x0.unwrap().shape(), &dy), &mut grads),
            Op::Multiply => {
                let scale = trace.value(node.inputs[1]);
                let (dx, ds) = ops::channel_scale_backward(x0.unwrap(), scale, &dy);
                push(0, dx, &mut grads);
                push(1, ds, &mut grads);
            }
            Op::Add => {
                let b_shape: Shape4 = trace.value(node.inputs[1]).shape();
                if need(1) {
                    push(1, ops::add_backward_rhs(b_shape, &dy), &mut grads);
                }
                push(0, dy, &mut grads);
            }
        }
    }
    Gradients { per_tensor }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, presets::preset, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_image_gives_open_interval_probabilities() {
        let cfg = ModelConfig::default().desk_scale(64, 8);
        let g = build_model(&cfg).unwrap();
        let p = ParameterSet::init(&g, 1);
        let out = forward(&g, &p, &Tensor::zeros(Shape4::new(1, 3, 64, 64))).unwrap();
        assert_eq!(out.shape(), Shape4::new(1, 1, 64, 64));
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn shape_mismatch_reports_dimensions() {
        let cfg = ModelConfig::default().desk_scale(32, 4);
        let g = build_model(&cfg).unwrap();
        let p = ParameterSet::init(&g, 1);
        match forward(&g, &p, &Tensor::zeros(Shape4::new(1, 3, 64, 64))) {
            Err(ModelError::Dimension { expected, actual, .. }) => {
                assert!(expected.contains("32x32"));
                assert_eq!(actual, "1x3x64x64");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = preset("baseline_v2").unwrap().desk_scale(32, 4);
        let g = build_model(&cfg).unwrap();
        let p = ParameterSet::init(&g, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(
            Shape4::new(2, 3, 32, 32),
            (0..2 * 3 * 32 * 32).map(|_| rng.gen()).collect(),
        );
        let a = forward(&g, &p, &x).unwrap();
        let b = forward(&g, &p, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn external_backbone_needs_adapter() {
        let cfg = preset("encoder_xception").unwrap().desk_scale(32, 4);
        let g = build_model(&cfg).unwrap();
        let p = ParameterSet::init(&g, 0);
        let err = forward(&g, &p, &Tensor::zeros(Shape4::new(1, 3, 32, 32))).unwrap_err();
        assert!(matches!(err, ModelError::BackboneUnavailable(_)));
    }
}
