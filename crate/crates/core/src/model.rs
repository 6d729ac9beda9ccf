//! Layer specifications, the fundamental CNN and its attention variants.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, CompatMode, CompatibilityProfile, NormMode};
use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Width of the local and global feature vectors in the default network.
pub const FEATURE_WIDTH: usize = 128;
pub const DEFAULT_KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv1d,
    Maxpool1d,
    Relu,
    Dense,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels_out: usize,
    pub kernel_len: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    /// Length-preserving convolution: kernel 5, stride 1, padding 2.
    pub fn conv(channels_out: usize) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            channels_out,
            kernel_len: DEFAULT_KERNEL,
            stride: 1,
            padding: DEFAULT_KERNEL / 2,
        }
    }

    /// Max pooling with window 2, stride 2.
    pub fn pool() -> Self {
        Self {
            kind: LayerKind::Maxpool1d,
            channels_out: 0,
            kernel_len: 2,
            stride: 2,
            padding: 0,
        }
    }

    pub fn relu() -> Self {
        Self::simple(LayerKind::Relu)
    }

    pub fn flatten() -> Self {
        Self::simple(LayerKind::Flatten)
    }

    pub fn dense(units: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            channels_out: units,
            kernel_len: 0,
            stride: 0,
            padding: 0,
        }
    }

    fn simple(kind: LayerKind) -> Self {
        Self {
            kind,
            channels_out: 0,
            kernel_len: 0,
            stride: 0,
            padding: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Conv1d | LayerKind::Maxpool1d if self.kernel_len == 0 || self.stride == 0 => {
                invalid("LayerSpec", "kernel_len and stride must be at least 1")
            }
            LayerKind::Conv1d | LayerKind::Dense if self.channels_out == 0 => {
                invalid("LayerSpec", "channels_out must be at least 1")
            }
            _ => Ok(()),
        }
    }
}

/// Full model configuration: backbone layers plus the attention head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_len: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub attention_levels: usize,
    pub compat_mode: CompatMode,
    pub norm_mode: NormMode,
    pub num_classes: usize,
}

/// Attention tap: a post-ReLU conv output usable as a local feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapInfo {
    /// Index of the ReLU layer producing the tap.
    pub layer: usize,
    pub channels: usize,
    pub positions: usize,
    /// Raw input samples per feature position.
    pub stride_to_raw: usize,
}

/// Shapes derived from a validated spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// All tap candidates, shallowest first.
    pub taps: Vec<TapInfo>,
    pub global_len: usize,
    pub classifier_inputs: usize,
}

impl Layout {
    /// Taps used by the attention head, in concatenation order.
    pub fn active_taps(&self, levels: usize) -> &[TapInfo] {
        &self.taps[self.taps.len() - levels..]
    }
}

impl ModelSpec {
    /// `C(32)-C(64)-C(128)-P-C(128)-P-C(128)-P-FC(128)` with ReLU after every
    /// conv and dense layer, no attention.
    pub fn standard(input_len: usize, input_channels: usize, num_classes: usize) -> Result<Self> {
        if input_len == 0 || input_len % 8 != 0 {
            return invalid("standard", "input_len must be a positive multiple of 8");
        }
        if input_channels == 0 || num_classes == 0 {
            return invalid("standard", "need at least one channel and one class");
        }
        let w = FEATURE_WIDTH;
        let layers = vec![
            LayerSpec::conv(32),
            LayerSpec::relu(),
            LayerSpec::conv(64),
            LayerSpec::relu(),
            LayerSpec::conv(w),
            LayerSpec::relu(),
            LayerSpec::pool(),
            LayerSpec::conv(w),
            LayerSpec::relu(),
            LayerSpec::pool(),
            LayerSpec::conv(w),
            LayerSpec::relu(),
            LayerSpec::pool(),
            LayerSpec::flatten(),
            LayerSpec::dense(w),
            LayerSpec::relu(),
        ];
        Ok(Self {
            input_len,
            input_channels,
            layers,
            attention_levels: 0,
            compat_mode: CompatMode::Pc,
            norm_mode: NormMode::Tanh,
            num_classes,
        })
    }

    pub fn with_attention(mut self, levels: usize, compat: CompatMode, norm: NormMode) -> Self {
        self.attention_levels = levels;
        self.compat_mode = compat;
        self.norm_mode = norm;
        self
    }

    /// Compact architecture string, ReLU and flatten omitted.
    pub fn shorthand(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv1d => Some(format!("C({})", l.channels_out)),
                LayerKind::Maxpool1d => Some("P".to_string()),
                LayerKind::Dense => Some(format!("FC({})", l.channels_out)),
                LayerKind::Relu | LayerKind::Flatten => None,
            })
            .collect();
        parts.join("-")
    }

    /// Checks the layer stack and attention head, returning derived shapes.
    pub fn layout(&self) -> Result<Layout> {
        if self.input_len == 0 || self.input_channels == 0 || self.num_classes == 0 {
            return invalid("ModelSpec", "input_len, input_channels and num_classes must be positive");
        }
        // (channels, length) while rank 3; (features, 0) once flattened.
        let mut channels = self.input_channels;
        let mut len = self.input_len;
        let mut flat = false;
        let mut stride_to_raw = 1;
        let mut candidates = Vec::new();
        let mut last_conv: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            match layer.kind {
                LayerKind::Conv1d => {
                    if flat {
                        return invalid("ModelSpec", "conv1d after flatten");
                    }
                    if len + 2 * layer.padding < layer.kernel_len {
                        return invalid("ModelSpec", "sequence too short for conv kernel");
                    }
                    len = (len + 2 * layer.padding - layer.kernel_len) / layer.stride + 1;
                    stride_to_raw *= layer.stride;
                    channels = layer.channels_out;
                    last_conv = Some(i);
                }
                LayerKind::Maxpool1d => {
                    if flat {
                        return invalid("ModelSpec", "maxpool1d after flatten");
                    }
                    if len < layer.kernel_len {
                        return invalid("ModelSpec", "sequence too short for pooling window");
                    }
                    len = (len - layer.kernel_len) / layer.stride + 1;
                    stride_to_raw *= layer.stride;
                    last_conv = None;
                }
                LayerKind::Relu => {
                    if !flat && last_conv == Some(i.wrapping_sub(1)) {
                        candidates.push(TapInfo {
                            layer: i,
                            channels,
                            positions: len,
                            stride_to_raw,
                        });
                    }
                }
                LayerKind::Flatten => {
                    if !flat {
                        channels *= len;
                        flat = true;
                    }
                }
                LayerKind::Dense => {
                    if !flat {
                        return invalid("ModelSpec", "dense layer needs a flatten first");
                    }
                    channels = layer.channels_out;
                }
            }
        }
        if !flat {
            return invalid("ModelSpec", "layer stack must end in a flat global descriptor");
        }
        let global_len = channels;
        let taps: Vec<TapInfo> = candidates
            .into_iter()
            .filter(|t| t.channels == global_len)
            .collect();
        let levels = self.attention_levels;
        if levels > taps.len() {
            return invalid(
                "ModelSpec",
                format!("{levels} attention levels requested but only {} taps of width {global_len}", taps.len()),
            );
        }
        let classifier_inputs = if levels == 0 { global_len } else { global_len * levels };
        Ok(Layout {
            taps,
            global_len,
            classifier_inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerParams {
    weight: usize,
    bias: usize,
}

/// Parameter layout resolved from a spec.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Plan {
    layout: Layout,
    layers: Vec<Option<LayerParams>>,
    u: Vec<usize>,
    classifier: LayerParams,
}

fn expected_params(spec: &ModelSpec) -> Result<(Plan, Vec<(String, Vec<usize>, usize)>)> {
    let layout = spec.layout()?;
    // (name, shape, fan_in)
    let mut shapes = Vec::new();
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut channels = spec.input_channels;
    let mut len = spec.input_len;
    let mut flat = false;
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Conv1d => {
                let fan_in = channels * layer.kernel_len;
                let weight = shapes.len();
                shapes.push((
                    format!("layers.{i}.weight"),
                    vec![layer.channels_out, channels, layer.kernel_len],
                    fan_in,
                ));
                shapes.push((format!("layers.{i}.bias"), vec![layer.channels_out], fan_in));
                layers.push(Some(LayerParams { weight, bias: weight + 1 }));
                len = (len + 2 * layer.padding - layer.kernel_len) / layer.stride + 1;
                channels = layer.channels_out;
            }
            LayerKind::Dense => {
                let weight = shapes.len();
                shapes.push((format!("layers.{i}.weight"), vec![layer.channels_out, channels], channels));
                shapes.push((format!("layers.{i}.bias"), vec![layer.channels_out], channels));
                layers.push(Some(LayerParams { weight, bias: weight + 1 }));
                channels = layer.channels_out;
            }
            LayerKind::Maxpool1d => {
                len = (len - layer.kernel_len) / layer.stride + 1;
                layers.push(None);
            }
            LayerKind::Flatten => {
                if !flat {
                    channels *= len;
                    flat = true;
                }
                layers.push(None);
            }
            LayerKind::Relu => layers.push(None),
        }
    }
    let mut u = Vec::new();
    if spec.attention_levels > 0 && spec.compat_mode == CompatMode::Pc {
        for s in 1..=spec.attention_levels {
            u.push(shapes.len());
            shapes.push((format!("attention.{s}.u"), vec![layout.global_len], 0));
        }
    }
    let weight = shapes.len();
    let fan_in = layout.classifier_inputs;
    shapes.push(("classifier.weight".to_string(), vec![spec.num_classes, fan_in], fan_in));
    shapes.push(("classifier.bias".to_string(), vec![spec.num_classes], fan_in));
    let plan = Plan {
        layout,
        layers,
        u,
        classifier: LayerParams { weight, bias: weight + 1 },
    };
    Ok((plan, shapes))
}

/// Uniform He initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
/// Biases and attention vectors start at zero.
fn he_uniform(rng: &mut ChaCha8Rng, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let n: usize = shape.iter().product();
    if name.ends_with(".weight") {
        let bound = libm::sqrt(6.0 / fan_in as f64);
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("shape matches element count")
    } else {
        Tensor::zeros(shape)
    }
}

/// Node handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: NodeId,
    pub global: NodeId,
    /// Active taps in concatenation order.
    pub taps: Vec<NodeId>,
    pub scores: Vec<NodeId>,
    pub weights: Vec<NodeId>,
    pub pooled: Vec<NodeId>,
    pub params: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
    plan: Plan,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let (plan, shapes) = expected_params(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let tensor = he_uniform(&mut rng, &name, &shape, fan_in);
                Param { name, tensor }
            })
            .collect();
        Ok(Self { spec, params, plan })
    }

    /// Rebuilds a model from stored parameters, which must match this spec's
    /// names and shapes exactly.
    pub fn from_params(spec: ModelSpec, params: Vec<Param>) -> Result<Self> {
        let (plan, shapes) = expected_params(&spec)?;
        if params.len() != shapes.len() {
            return shape_err("Model::from_params", "parameter count", shapes.len(), params.len());
        }
        for (p, (name, shape, _)) in params.iter().zip(&shapes) {
            if &p.name != name {
                return invalid(
                    "Model::from_params",
                    format!("expected parameter {name}, found {}", p.name),
                );
            }
            if p.tensor.shape() != shape.as_slice() {
                return invalid(
                    "Model::from_params",
                    format!("parameter {name} has shape {:?}, spec needs {:?}", p.tensor.shape(), shape),
                );
            }
        }
        Ok(Self { spec, params, plan })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.plan.layout
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Learned `u` vectors, empty in dot mode.
    pub fn attention_params(&self) -> AttentionParams {
        let u = match self.spec.compat_mode {
            CompatMode::Pc => self.plan.u.iter().map(|&i| self.params[i].tensor.data().to_vec()).collect(),
            CompatMode::Dot => Vec::new(),
        };
        AttentionParams {
            u,
            level_count: self.spec.attention_levels,
        }
    }

    /// Active taps in concatenation order.
    pub fn active_taps(&self) -> &[TapInfo] {
        self.plan.layout.active_taps(self.spec.attention_levels)
    }

    /// Records the forward pass for `input [B, C, L]`. With `track_grad` the
    /// parameters enter the graph as trainable leaves.
    pub fn forward(&self, graph: &mut Graph, input: &Tensor, track_grad: bool) -> Result<Forward> {
        let expected = [input.dim(0), self.spec.input_channels, self.spec.input_len];
        if input.rank() != 3 || input.shape() != expected {
            return Err(Error::Invalid {
                op: "Model::forward",
                reason: format!("input shape {:?}, model expects [B, {}, {}]", input.shape(), expected[1], expected[2]),
            });
        }
        let x = graph.constant(input.clone())?;
        self.forward_from(graph, x, track_grad)
    }

    /// Like [`Model::forward`] but starting from a node already on the
    /// graph, so the input itself may carry a gradient.
    pub fn forward_from(&self, graph: &mut Graph, input: NodeId, track_grad: bool) -> Result<Forward> {
        let shape = graph.value(input)?.shape();
        if shape.len() != 3 || shape[1] != self.spec.input_channels || shape[2] != self.spec.input_len {
            return Err(Error::Invalid {
                op: "Model::forward",
                reason: format!(
                    "input shape {:?}, model expects [B, {}, {}]",
                    shape, self.spec.input_channels, self.spec.input_len
                ),
            });
        }
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let mut t = p.tensor.clone();
            t.zero_grad();
            t.set_requires_grad(track_grad);
            params.push(graph.leaf(t)?);
        }
        let mut x = input;
        let tap_layers: Vec<usize> = self.active_taps().iter().map(|t| t.layer).collect();
        let mut taps = Vec::with_capacity(tap_layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = match (layer.kind, self.plan.layers[i]) {
                (LayerKind::Conv1d, Some(lp)) => graph.conv1d(
                    x,
                    params[lp.weight],
                    params[lp.bias],
                    layer.stride,
                    layer.padding,
                )?,
                (LayerKind::Dense, Some(lp)) => graph.dense(x, params[lp.weight], params[lp.bias])?,
                (LayerKind::Maxpool1d, _) => graph.maxpool1d(x, layer.kernel_len, layer.stride)?,
                (LayerKind::Relu, _) => graph.relu(x)?,
                (LayerKind::Flatten, _) => graph.flatten(x)?,
                _ => unreachable!("plan built from the same spec"),
            };
            if tap_layers.contains(&i) {
                taps.push(x);
            }
        }
        let global = x;
        let cls = self.plan.classifier;
        let mut scores = Vec::new();
        let mut weights = Vec::new();
        let mut pooled = Vec::new();
        let logits = if self.spec.attention_levels == 0 {
            graph.dense(global, params[cls.weight], params[cls.bias])?
        } else {
            for (s, &tap) in taps.iter().enumerate() {
                let c = match self.spec.compat_mode {
                    CompatMode::Dot => graph.compat_dot(tap, global)?,
                    CompatMode::Pc => graph.compat_pc(tap, global, params[self.plan.u[s]])?,
                };
                let a = match self.spec.norm_mode {
                    NormMode::Softmax => graph.softmax(c)?,
                    NormMode::Tanh => graph.tanh(c)?,
                };
                pooled.push(graph.attend_pool(tap, a)?);
                scores.push(c);
                weights.push(a);
            }
            let g = graph.concat(&pooled)?;
            graph.dense(g, params[cls.weight], params[cls.bias])?
        };
        Ok(Forward {
            logits,
            global,
            taps,
            scores,
            weights,
            pooled,
            params,
        })
    }

    /// Logits `[B, num_classes]` with frozen weights.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let f = self.forward(&mut graph, input, false)?;
        Ok(graph.value(f.logits)?.clone())
    }

    /// Mean cross-entropy of a batch; leaves parameter gradients in each
    /// parameter's grad slot. Returns the loss and the logits.
    pub fn loss_and_grads(&mut self, input: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let mut graph = Graph::new();
        let f = self.forward(&mut graph, input, true)?;
        let loss = graph.softmax_cross_entropy(f.logits, labels)?;
        graph.backward(loss)?;
        let value = graph.value(loss)?.data()[0];
        let logits = graph.value(f.logits)?.clone();
        for (p, &node) in self.params.iter_mut().zip(&f.params) {
            let g = graph.take_grad(node).unwrap_or_else(|| vec![0.0; p.tensor.len()]);
            p.tensor.set_grad(g)?;
        }
        Ok((value, logits))
    }

    /// Attention scores and weights per level for each sequence in the batch.
    pub fn compatibility_profiles(&self, input: &Tensor) -> Result<Vec<Vec<CompatibilityProfile>>> {
        if self.spec.attention_levels == 0 {
            return invalid("compatibility_profiles", "model has no attention levels");
        }
        let mut graph = Graph::new();
        let f = self.forward(&mut graph, input, false)?;
        let batch = input.dim(0);
        let mut out = vec![Vec::with_capacity(f.scores.len()); batch];
        for (s, (&c, &a)) in f.scores.iter().zip(&f.weights).enumerate() {
            let scores = graph.value(c)?;
            let weights = graph.value(a)?;
            let n = scores.dim(1);
            for (b, levels) in out.iter_mut().enumerate() {
                levels.push(CompatibilityProfile {
                    level: s + 1,
                    scores: scores.data()[b * n..(b + 1) * n].to_vec(),
                    weights: weights.data()[b * n..(b + 1) * n].to_vec(),
                    norm: self.spec.norm_mode,
                });
            }
        }
        Ok(out)
    }
}

/// Builds the fundamental CNN for the given input geometry.
pub fn build_fundamental_cnn(
    input_len: usize,
    input_channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    Model::new(ModelSpec::standard(input_len, input_channels, num_classes)?, seed)
}
