//! Central-difference verification of every differentiable graph operation.
//!
//! Each case draws random shapes and values from a seed, records the
//! operation on a fresh graph and reduces a non-scalar output to
//! `sum(out * r)` with a fixed random `r`. Sampled input entries are nudged by
//! `±h`; entries whose nudge flips a ReLU sign or a pooling argmax are skipped
//! because the function is not differentiable across that kink.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{CompatMode, NormMode};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{LayerSpec, Model, ModelSpec, Param};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seeds: u64,
    pub base_seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per input tensor and seed.
    pub samples_per_tensor: usize,
    /// Case whose analytic gradient is deliberately corrupted, for testing
    /// the checker itself.
    pub inject_fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: 0,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            samples_per_tensor: 6,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<WorstEntry>,
    /// Set when evaluation failed, e.g. on a non-finite value.
    pub failure: Option<String>,
    pub passed: bool,
}

/// Entry with the largest relative error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstEntry {
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub seeds: u64,
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

type Build = Box<dyn Fn(&mut Graph, &[Tensor]) -> Result<(NodeId, Vec<NodeId>)>>;

/// One random instance: named inputs and a recorder producing the output
/// node plus the input leaves in the same order.
pub struct Instance {
    pub inputs: Vec<(String, Tensor)>,
    pub build: Build,
}

type Generator = fn(&mut ChaCha8Rng) -> Result<Instance>;

/// Names of the cases run by [`run_suite`].
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.0).collect()
}

fn cases() -> Vec<(&'static str, Generator)> {
    vec![
        ("conv1d", conv1d_case),
        ("maxpool1d", maxpool_case),
        ("relu", relu_case),
        ("dense", dense_case),
        ("flatten", flatten_case),
        ("softmax_cross_entropy", xent_case),
        ("compat_dot", compat_dot_case),
        ("compat_pc", compat_pc_case),
        ("normalize_softmax", softmax_case),
        ("normalize_tanh", tanh_case),
        ("attend_pool", attend_pool_case),
        ("concat", concat_case),
        ("fundamental_cnn", cnn_case),
        ("net_att3_pc_tanh", att3_pc_tanh_case),
        ("net_att3_dot_softmax", att3_dot_sm_case),
    ]
}

pub fn run_suite(options: &GradcheckOptions) -> GradcheckReport {
    let cases = cases()
        .into_iter()
        .map(|(name, generator)| run_case(name, generator, options))
        .collect();
    GradcheckReport {
        tolerance: options.tolerance,
        seeds: options.seeds,
        cases,
    }
}

/// Runs a single named case, or `None` if the name is unknown.
pub fn run_named(name: &str, options: &GradcheckOptions) -> Option<CaseReport> {
    cases()
        .into_iter()
        .find(|c| c.0 == name)
        .map(|(name, generator)| run_case(name, generator, options))
}

fn run_case(name: &'static str, generator: Generator, options: &GradcheckOptions) -> CaseReport {
    let mut report = CaseReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        failure: None,
        passed: true,
    };
    let corrupt = options.inject_fault.as_deref() == Some(name);
    for s in 0..options.seeds {
        let seed = options.base_seed.wrapping_add(s).wrapping_mul(0x9e37_79b9).wrapping_add(name.len() as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome = generator(&mut rng).and_then(|inst| check_instance(&inst, &mut rng, options, corrupt));
        match outcome {
            Ok(r) => {
                report.checked += r.checked;
                report.skipped += r.skipped;
                if r.worst.is_some() && (report.worst.is_none() || r.max_rel_err > report.max_rel_err) {
                    report.max_rel_err = r.max_rel_err;
                    report.worst = r.worst;
                }
            }
            Err(e) => {
                report.failure = Some(format!("seed {s}: {e}"));
                report.max_rel_err = f64::INFINITY;
                break;
            }
        }
    }
    report.passed = report.failure.is_none() && report.max_rel_err <= options.tolerance;
    report
}

struct InstanceResult {
    max_rel_err: f64,
    checked: usize,
    skipped: usize,
    worst: Option<WorstEntry>,
}

/// Objective value and branch signature at the given inputs.
fn evaluate(inst: &Instance, inputs: &[Tensor], projection: Option<&Tensor>) -> Result<(f64, u64)> {
    let mut graph = Graph::new();
    let (out, _) = (inst.build)(&mut graph, inputs)?;
    let signature = graph.branch_signature();
    let value = graph.value(out)?;
    let f = match projection {
        Some(r) => value.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(),
        None => value.data()[0],
    };
    Ok((f, signature))
}

fn check_instance(
    inst: &Instance,
    rng: &mut ChaCha8Rng,
    options: &GradcheckOptions,
    corrupt: bool,
) -> Result<InstanceResult> {
    let tensors: Vec<Tensor> = inst.inputs.iter().map(|(_, t)| t.clone()).collect();

    let mut graph = Graph::new();
    let (out, leaves) = (inst.build)(&mut graph, &tensors)?;
    let out_value = graph.value(out)?.clone();
    let projection = (out_value.len() > 1).then(|| random_tensor(rng, out_value.shape(), 1.0));
    let objective = match &projection {
        Some(r) => {
            let r = graph.constant(r.clone())?;
            let prod = graph.mul(out, r)?;
            graph.sum(prod)?
        }
        None => out,
    };
    let signature = graph.branch_signature();
    graph.backward(objective)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(&tensors)
        .map(|(&leaf, t)| graph.grad(leaf).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    for (g, (name, _)) in analytic.iter().zip(&inst.inputs) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid {
                op: "gradcheck",
                reason: format!("non-finite gradient for {name}"),
            });
        }
    }

    let mut result = InstanceResult {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let h = options.step;
    for (k, (name, t)) in inst.inputs.iter().enumerate() {
        let picks = sample(rng, t.len(), options.samples_per_tensor.min(t.len()));
        for idx in picks {
            let mut plus = tensors.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = tensors.clone();
            minus[k].data_mut()[idx] -= h;
            let (fp, sp) = evaluate(inst, &plus, projection.as_ref())?;
            let (fm, sm) = evaluate(inst, &minus, projection.as_ref())?;
            if sp != signature || sm != signature {
                result.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::Invalid {
                    op: "gradcheck",
                    reason: format!("non-finite finite difference for {name}[{idx}]"),
                });
            }
            let mut a = analytic[k][idx];
            if corrupt {
                a = a * 1.5 + 0.1;
            }
            let err = relative_error(a, numeric);
            result.checked += 1;
            if err > result.max_rel_err || result.worst.is_none() {
                result.max_rel_err = result.max_rel_err.max(err);
                result.worst = Some(WorstEntry {
                    input: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(result)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("shape matches element count")
}

fn named(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}

fn leaves(graph: &mut Graph, inputs: &[Tensor]) -> Result<Vec<NodeId>> {
    inputs.iter().map(|t| graph.leaf(t.clone().with_grad())).collect()
}

fn conv1d_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let batch = rng.random_range(1..=3);
    let c_in = rng.random_range(1..=4);
    let c_out = rng.random_range(1..=4);
    let kernel = rng.random_range(1..=5);
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=2);
    let len = rng.random_range(kernel.max(2)..=12);
    Ok(Instance {
        inputs: vec![
            named("input", random_tensor(rng, &[batch, c_in, len], 1.0)),
            named("weight", random_tensor(rng, &[c_out, c_in, kernel], 1.0)),
            named("bias", random_tensor(rng, &[c_out], 1.0)),
        ],
        build: Box::new(move |g, t| {
            let ids = leaves(g, t)?;
            Ok((g.conv1d(ids[0], ids[1], ids[2], stride, padding)?, ids))
        }),
    })
}

fn maxpool_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let batch = rng.random_range(1..=3);
    let channels = rng.random_range(1..=3);
    let len = 2 * rng.random_range(1..=6);
    Ok(Instance {
        inputs: vec![named("input", random_tensor(rng, &[batch, channels, len], 1.0))],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.maxpool1d(ids[0], 2, 2)?, ids))
        }),
    })
}

fn relu_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let n = rng.random_range(2..=12);
    let m = rng.random_range(1..=4);
    Ok(Instance {
        inputs: vec![named("input", random_tensor(rng, &[m, n], 1.0))],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.relu(ids[0])?, ids))
        }),
    })
}

fn dense_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let batch = rng.random_range(1..=4);
    let n = rng.random_range(1..=10);
    let m = rng.random_range(1..=6);
    Ok(Instance {
        inputs: vec![
            named("input", random_tensor(rng, &[batch, n], 1.0)),
            named("weight", random_tensor(rng, &[m, n], 1.0)),
            named("bias", random_tensor(rng, &[m], 1.0)),
        ],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.dense(ids[0], ids[1], ids[2])?, ids))
        }),
    })
}

fn flatten_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let shape = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4)];
    Ok(Instance {
        inputs: vec![named("input", random_tensor(rng, &shape, 1.0))],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.flatten(ids[0])?, ids))
        }),
    })
}

fn xent_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let batch = rng.random_range(1..=5);
    let classes = rng.random_range(2..=6);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    Ok(Instance {
        inputs: vec![named("logits", random_tensor(rng, &[batch, classes], 3.0))],
        build: Box::new(move |g, t| {
            let ids = leaves(g, t)?;
            Ok((g.softmax_cross_entropy(ids[0], &labels)?, ids))
        }),
    })
}

fn attention_shapes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=8))
}

fn compat_dot_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, c, n) = attention_shapes(rng);
    Ok(Instance {
        inputs: vec![
            named("local", random_tensor(rng, &[b, c, n], 1.0)),
            named("global", random_tensor(rng, &[b, c], 1.0)),
        ],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.compat_dot(ids[0], ids[1])?, ids))
        }),
    })
}

fn compat_pc_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, c, n) = attention_shapes(rng);
    Ok(Instance {
        inputs: vec![
            named("local", random_tensor(rng, &[b, c, n], 1.0)),
            named("global", random_tensor(rng, &[b, c], 1.0)),
            named("u", random_tensor(rng, &[c], 1.0)),
        ],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.compat_pc(ids[0], ids[1], ids[2])?, ids))
        }),
    })
}

fn softmax_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, _, n) = attention_shapes(rng);
    Ok(Instance {
        inputs: vec![named("scores", random_tensor(rng, &[b, n], 3.0))],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.softmax(ids[0])?, ids))
        }),
    })
}

fn tanh_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, _, n) = attention_shapes(rng);
    Ok(Instance {
        inputs: vec![named("scores", random_tensor(rng, &[b, n], 3.0))],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.tanh(ids[0])?, ids))
        }),
    })
}

fn attend_pool_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (b, c, n) = attention_shapes(rng);
    Ok(Instance {
        inputs: vec![
            named("local", random_tensor(rng, &[b, c, n], 1.0)),
            named("weights", random_tensor(rng, &[b, n], 1.0)),
        ],
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.attend_pool(ids[0], ids[1])?, ids))
        }),
    })
}

fn concat_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let b = rng.random_range(1..=3);
    let parts = rng.random_range(1..=3);
    let inputs = (0..parts)
        .map(|i| {
            let w = rng.random_range(1..=4);
            named(&format!("part{i}"), random_tensor(rng, &[b, w], 1.0))
        })
        .collect();
    Ok(Instance {
        inputs,
        build: Box::new(|g, t| {
            let ids = leaves(g, t)?;
            Ok((g.concat(&ids)?, ids))
        }),
    })
}

/// Small instance of the full architecture: the paper layer stack with
/// narrower convolutions so finite differences stay cheap.
fn small_spec(levels: usize, compat: CompatMode, norm: NormMode) -> ModelSpec {
    let w = 8;
    let layers = vec![
        LayerSpec::conv(4),
        LayerSpec::relu(),
        LayerSpec::conv(6),
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
    ModelSpec {
        input_len: 16,
        input_channels: 2,
        layers,
        attention_levels: levels,
        compat_mode: compat,
        norm_mode: norm,
        num_classes: 3,
    }
}

fn model_case(rng: &mut ChaCha8Rng, spec: ModelSpec) -> Result<Instance> {
    let model = Model::new(spec.clone(), rng.random())?;
    let batch = 2;
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..spec.num_classes)).collect();
    let mut inputs = vec![named("input", random_tensor(rng, &[batch, spec.input_channels, spec.input_len], 1.0))];
    for p in model.into_params() {
        // Biases and u start at zero; randomize so every term is exercised.
        let t = if p.name.ends_with(".weight") {
            p.tensor
        } else {
            random_tensor(rng, p.tensor.shape(), 0.2)
        };
        inputs.push((p.name, t));
    }
    let names: Vec<String> = inputs[1..].iter().map(|(n, _)| n.clone()).collect();
    Ok(Instance {
        inputs,
        build: Box::new(move |g, t| {
            let params = names
                .iter()
                .zip(&t[1..])
                .map(|(name, tensor)| Param {
                    name: name.clone(),
                    tensor: tensor.clone(),
                })
                .collect();
            let model = Model::from_params(spec.clone(), params)?;
            let x = g.leaf(t[0].clone().with_grad())?;
            let f = model.forward_from(g, x, true)?;
            let loss = g.softmax_cross_entropy(f.logits, &labels)?;
            let mut ids = vec![x];
            ids.extend(f.params);
            Ok((loss, ids))
        }),
    })
}

fn cnn_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    model_case(rng, small_spec(0, CompatMode::Pc, NormMode::Tanh))
}

fn att3_pc_tanh_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    model_case(rng, small_spec(3, CompatMode::Pc, NormMode::Tanh))
}

fn att3_dot_sm_case(rng: &mut ChaCha8Rng) -> Result<Instance> {
    model_case(rng, small_spec(3, CompatMode::Dot, NormMode::Softmax))
}
