//! Attention over local feature maps: compatibility scoring against a global
//! descriptor, normalization of the scores, and weighted pooling.
//!
//! Feature maps are stored channel-major (`[channels, positions]`), the same
//! layout a convolution emits for one sample, so the local feature vector
//! `l_i` is the strided column `i`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::model::{Model, Param};

/// How local features are scored against the global descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompatMode {
    /// `c_i = <l_i, G>`
    Dot,
    /// `c_i = <u, l_i + G>` with a learned `u` per level.
    Pc,
}

/// How compatibility scores become attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Joint softmax over all positions.
    Softmax,
    /// Pointwise tanh, no coupling between positions.
    Tanh,
}

/// Borrowed channel-major feature map of one sample.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap<'a> {
    data: &'a [f64],
    channels: usize,
    positions: usize,
}

impl<'a> FeatureMap<'a> {
    pub fn new(data: &'a [f64], channels: usize, positions: usize) -> Result<Self> {
        if channels == 0 || positions == 0 {
            return invalid("FeatureMap::new", "empty feature map");
        }
        if data.len() != channels * positions {
            return shape_err("FeatureMap::new", "element count", channels * positions, data.len());
        }
        Ok(Self {
            data,
            channels,
            positions,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    #[inline]
    pub fn at(&self, channel: usize, position: usize) -> f64 {
        self.data[channel * self.positions + position]
    }

    pub fn channel(&self, channel: usize) -> &'a [f64] {
        &self.data[channel * self.positions..(channel + 1) * self.positions]
    }

    /// Local feature vector at `position`.
    pub fn column(&self, position: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.at(c, position)).collect()
    }
}

/// Packs row vectors `l_1..l_n` into channel-major storage.
pub fn rows_to_channel_major(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if n == 0 || c == 0 {
        return invalid("rows_to_channel_major", "empty feature map");
    }
    let mut out = vec![0.0; n * c];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return shape_err("rows_to_channel_major", "row length", c, row.len());
        }
        for (k, &v) in row.iter().enumerate() {
            out[k * n + i] = v;
        }
    }
    Ok(out)
}

fn check_global(op: &'static str, local: &FeatureMap<'_>, global: &[f64]) -> Result<()> {
    if global.len() != local.channels {
        return shape_err(op, "global length", local.channels, global.len());
    }
    Ok(())
}

/// Dot-product compatibility `c_i = <l_i, G>`.
pub fn compat_dot(local: &FeatureMap<'_>, global: &[f64]) -> Result<Vec<f64>> {
    check_global("compat_dot", local, global)?;
    let mut scores = vec![0.0; local.positions];
    for (i, c) in scores.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &g) in global.iter().enumerate() {
            acc += local.at(k, i) * g;
        }
        *c = acc;
    }
    Ok(scores)
}

/// Parametrized compatibility `c_i = <u, l_i + G>`.
pub fn compat_pc(local: &FeatureMap<'_>, global: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_global("compat_pc", local, global)?;
    if u.len() != local.channels {
        return shape_err("compat_pc", "u length", local.channels, u.len());
    }
    let mut scores = vec![0.0; local.positions];
    for (i, c) in scores.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..local.channels {
            acc += u[k] * (local.at(k, i) + global[k]);
        }
        *c = acc;
    }
    Ok(scores)
}

/// Joint softmax over positions, shifted by the maximum score.
pub fn normalize_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return invalid("normalize_softmax", "no scores");
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: "normalize_softmax",
        });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Pointwise tanh; weights are left unnormalized.
pub fn normalize_tanh(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| libm::tanh(s)).collect()
}

pub fn normalize(scores: &[f64], mode: NormMode) -> Result<Vec<f64>> {
    match mode {
        NormMode::Softmax => normalize_softmax(scores),
        NormMode::Tanh => Ok(normalize_tanh(scores)),
    }
}

/// Weighted sum of local feature vectors, `g = sum_i a_i * l_i`.
pub fn attend_pool(local: &FeatureMap<'_>, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != local.positions {
        return shape_err("attend_pool", "weights length", local.positions, weights.len());
    }
    let mut pooled = vec![0.0; local.channels];
    for (k, g) in pooled.iter_mut().enumerate() {
        let row = local.channel(k);
        let mut acc = 0.0;
        for (a, l) in weights.iter().zip(row) {
            acc += a * l;
        }
        *g = acc;
    }
    Ok(pooled)
}

/// Scores and weights of one attention level for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityProfile {
    /// 1-based level index in the order the levels are concatenated.
    pub level: usize,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub norm: NormMode,
}

impl CompatibilityProfile {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-level pooled vectors and their concatenation, the classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDescriptor {
    pub per_level: Vec<Vec<f64>>,
    pub concatenated: Vec<f64>,
}

impl PooledDescriptor {
    pub fn from_levels(per_level: Vec<Vec<f64>>) -> Self {
        let concatenated = per_level.iter().flatten().copied().collect();
        Self {
            per_level,
            concatenated,
        }
    }
}

/// Learned compatibility vectors, one per level in `pc` mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub u: Vec<Vec<f64>>,
    pub level_count: usize,
}

/// Runs scoring, normalization and pooling for one sample.
pub fn attend(
    local: &FeatureMap<'_>,
    global: &[f64],
    u: Option<&[f64]>,
    compat: CompatMode,
    norm: NormMode,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let scores = match (compat, u) {
        (CompatMode::Dot, _) => compat_dot(local, global)?,
        (CompatMode::Pc, Some(u)) => compat_pc(local, global, u)?,
        (CompatMode::Pc, None) => return invalid("attend", "pc compatibility needs u"),
    };
    let weights = normalize(&scores, norm)?;
    let pooled = attend_pool(local, &weights)?;
    Ok((scores, weights, pooled))
}

/// Turns a backbone into a Net-att variant with `levels` attention levels on
/// its deepest taps. Backbone weights are copied; `u` starts at zero and the
/// classifier over the concatenated pooled vectors is freshly initialized.
/// The global descriptor still drives compatibility but no longer feeds the
/// classifier.
pub fn assemble_attention_model(
    base: &Model,
    levels: usize,
    compat: CompatMode,
    norm: NormMode,
    seed: u64,
) -> Result<Model> {
    if levels == 0 {
        return invalid("assemble_attention_model", "at least one attention level is required");
    }
    let spec = base.spec().clone().with_attention(levels, compat, norm);
    let fresh = Model::new(spec.clone(), seed)?;
    let params = fresh
        .into_params()
        .into_iter()
        .map(|p| match base.param(&p.name) {
            Some(t) if p.name.starts_with("layers.") => Param {
                name: p.name,
                tensor: t.clone(),
            },
            _ => p,
        })
        .collect();
    Model::from_params(spec, params)
}
