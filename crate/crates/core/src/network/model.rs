use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{LayerKind, NetworkConfig, Task};
use crate::data::LabeledCloud;
use crate::error::{Error, Result};
use crate::geometry::bin_count_for;
use crate::graph::{build_pyramid, GraphPyramid};
use crate::ops::{
    avg_pool, avg_pool_backward, batch_norm_backward, batch_norm_forward, elu, elu_backward,
    global_depthwise_backward, global_depthwise_forward, global_max, global_max_backward,
    max_pool, max_pool_backward, pointwise_backward, pointwise_forward, sph3d_depthwise_backward,
    sph3d_depthwise_forward, uniform_interp, uniform_interp_backward, weighted_interp,
    weighted_interp_backward, BatchNormCache, BatchNormState, DepthwiseGrads,
    DepthwiseKernelParams, FeatureMap, GlobalGraph, LinearGrads, Mode, PointwiseParams,
};
use crate::seed::derive_seed;

/// Where a layer's feature map lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Vertex(usize),
    /// A single row produced by the global convolution.
    Global,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Vertex(l) => write!(f, "G{l}"),
            Level::Global => f.write_str("global"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub name: String,
    pub kind: LayerKind,
    pub input_level: Level,
    pub output_level: Level,
    pub in_width: usize,
    pub out_width: usize,
    /// Batch norm and ELU follow the linear part.
    pub activated: bool,
    /// Plan indices of skip / global-max sources.
    pub sources: Vec<usize>,
}

fn layer_err(name: &str, message: impl Into<String>) -> Error {
    Error::config(format!("layer.{name}"), message)
}

/// Walk the layer list tracking level and width; every inconsistency names
/// the offending layer.
pub fn plan(config: &NetworkConfig) -> Result<Vec<PlanStep>> {
    if config.layers.is_empty() {
        return Err(Error::config("layer", "the layer list is empty"));
    }
    config
        .pyramid
        .validate()
        .map_err(|e| Error::config("pyramid", e.to_string()))?;
    let levels = config.pyramid.level_count();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut steps: Vec<PlanStep> = Vec::with_capacity(config.layers.len());
    let mut level = Level::Vertex(0);
    let mut width = config.input_channels;
    let last = config.layers.len() - 1;

    for (k, layer) in config.layers.iter().enumerate() {
        let name = layer.name.as_str();
        if index.contains_key(name) {
            return Err(layer_err(name, "duplicate layer name"));
        }
        if let Some((cin, _)) = layer.kind.widths() {
            if cin != width {
                return Err(layer_err(
                    name,
                    format!("declares {cin} input channels but receives {width}"),
                ));
            }
        }
        let vertex_level = || match level {
            Level::Vertex(l) => Ok(l),
            Level::Global => Err(layer_err(
                name,
                format!("{} needs per-vertex input, got the global feature", layer.kind.tag()),
            )),
        };
        let source = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| layer_err(name, format!("unknown or later source layer `{s}`")))
        };
        let mut sources = Vec::new();
        let (out_level, out_width, activated) = match &layer.kind {
            LayerKind::Mlp { out_channels, .. } => (level, *out_channels, true),
            LayerKind::Fc { out_channels, .. } => (level, *out_channels, k != last),
            LayerKind::Sph3d { out_channels, .. } => (Level::Vertex(vertex_level()?), *out_channels, true),
            LayerKind::GSph3d { out_channels, .. } => {
                vertex_level()?;
                (Level::Global, *out_channels, true)
            }
            LayerKind::PoolMax | LayerKind::PoolAvg => {
                let l = vertex_level()?;
                if l + 1 >= levels {
                    return Err(layer_err(
                        name,
                        format!("pools below the coarsest of {levels} pyramid levels"),
                    ));
                }
                (Level::Vertex(l + 1), width, false)
            }
            LayerKind::UnpoolUniform | LayerKind::UnpoolWeighted(_) => {
                let l = vertex_level()?;
                if l == 0 {
                    return Err(layer_err(name, "unpools above the finest level"));
                }
                (Level::Vertex(l - 1), width, false)
            }
            LayerKind::ConcatSkip { source: s } => {
                let j = source(s)?;
                let src = &steps[j];
                if src.output_level != level || matches!(level, Level::Global) {
                    return Err(layer_err(
                        name,
                        format!(
                            "skip source `{s}` lives at {} but the current level is {level}",
                            src.output_level
                        ),
                    ));
                }
                sources.push(j);
                (level, width + src.out_width, false)
            }
            LayerKind::GlobalMaxConcat { sources: names } => {
                if level != Level::Global {
                    return Err(layer_err(name, "must follow the global convolution"));
                }
                let mut w = width;
                for s in names {
                    let j = source(s)?;
                    if steps[j].output_level == Level::Global {
                        return Err(layer_err(name, format!("source `{s}` is already global")));
                    }
                    w += steps[j].out_width;
                    sources.push(j);
                }
                (level, w, false)
            }
        };
        steps.push(PlanStep {
            name: name.to_string(),
            kind: layer.kind.clone(),
            input_level: level,
            output_level: out_level,
            in_width: width,
            out_width,
            activated,
            sources,
        });
        index.insert(name, k);
        level = out_level;
        width = out_width;
    }

    let last_step = &steps[last];
    if !matches!(last_step.kind, LayerKind::Fc { .. }) {
        return Err(layer_err(&last_step.name, "the output layer must be FC"));
    }
    let want = match config.task {
        Task::Classification => Level::Global,
        Task::Segmentation => Level::Vertex(0),
    };
    if level != want {
        return Err(layer_err(
            &last_step.name,
            format!("{} output must be at {want}, network ends at {level}", config.task),
        ));
    }
    if width != config.classes {
        return Err(layer_err(
            &last_step.name,
            format!("produces {width} outputs for {} classes", config.classes),
        ));
    }
    Ok(steps)
}

/// Learnable state of one layer. Absent parts are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub depthwise: Option<DepthwiseKernelParams>,
    pub pointwise: Option<PointwiseParams>,
    pub norm: Option<BatchNormState>,
}

impl LayerParams {
    fn empty() -> Self {
        Self {
            depthwise: None,
            pointwise: None,
            norm: None,
        }
    }

    /// Linear and convolution parameters, batch norm excluded.
    pub fn core_parameter_count(&self) -> usize {
        self.depthwise.as_ref().map_or(0, |d| d.parameter_count())
            + self.pointwise.as_ref().map_or(0, |p| p.parameter_count())
    }

    pub fn norm_parameter_count(&self) -> usize {
        self.norm.as_ref().map_or(0, |n| 2 * n.channels())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub depthwise: Option<DepthwiseGrads>,
    pub pointwise: Option<LinearGrads>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

impl LayerGrads {
    fn zeros_like(p: &LayerParams) -> Self {
        Self {
            depthwise: p.depthwise.as_ref().map(|d| DepthwiseGrads {
                weights: vec![0.0; d.weights.len()],
                bias: vec![0.0; d.bias.len()],
            }),
            pointwise: p.pointwise.as_ref().map(|d| LinearGrads {
                weights: vec![0.0; d.weights.len()],
                bias: vec![0.0; d.bias.len()],
            }),
            gamma: p.norm.as_ref().map(|n| vec![0.0; n.channels()]),
            beta: p.norm.as_ref().map(|n| vec![0.0; n.channels()]),
        }
    }
}

/// Gradients of every trainable tensor, in [`Network::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.layers {
            if let Some(d) = &g.depthwise {
                out.push(&d.weights);
                out.push(&d.bias);
            }
            if let Some(p) = &g.pointwise {
                out.push(&p.weights);
                out.push(&p.bias);
            }
            if let (Some(a), Some(b)) = (&g.gamma, &g.beta) {
                out.push(a);
                out.push(b);
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// A named tensor view with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

/// One input cloud with its graph pyramid and per-vertex input features.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pyramid: Arc<GraphPyramid>,
    pub features: FeatureMap,
}

impl Sample {
    /// Build the pyramid (rescaled to the cloud size) and the input features.
    pub fn from_cloud(cloud: &LabeledCloud, config: &NetworkConfig, seed: u64) -> Result<Sample> {
        let spec = config.pyramid.for_cloud_size(cloud.len())?;
        let pyramid = build_pyramid(&cloud.cloud, &spec, seed)?;
        Ok(Sample {
            pyramid: Arc::new(pyramid),
            features: input_features(cloud, config.input_channels)?,
        })
    }
}

/// Coordinates, followed by colors when `channels` is 6.
pub fn input_features(cloud: &LabeledCloud, channels: usize) -> Result<FeatureMap> {
    let pts = cloud.cloud.points();
    match channels {
        3 => Ok(FeatureMap::from_vec(
            pts.len(),
            3,
            pts.iter().flat_map(|p| p.to_array()).collect(),
        )?),
        6 => {
            let colors = cloud
                .colors
                .as_ref()
                .ok_or_else(|| Error::invalid("six input channels need per-point colors"))?;
            Ok(FeatureMap::from_vec(
                pts.len(),
                6,
                pts.iter()
                    .zip(colors)
                    .flat_map(|(p, c)| p.to_array().into_iter().chain(*c))
                    .collect(),
            )?)
        }
        c => Err(Error::invalid(format!("unsupported input width {c}; use 3 or 6"))),
    }
}

// What a norm + ELU (+ dropout) tail needs for its backward pass.
#[derive(Debug, Clone)]
enum Post {
    Linear,
    Norm {
        y: Vec<FeatureMap>,
        cache: BatchNormCache,
        mask: Option<Vec<FeatureMap>>,
    },
}

#[derive(Debug, Clone)]
enum Record {
    Dense { post: Post },
    Sph3d { mid: Vec<FeatureMap>, post: Post },
    GSph3d { graphs: Vec<GlobalGraph>, mid: Vec<FeatureMap>, post: Post },
    PoolMax { argmax: Vec<Vec<u32>> },
    Passive,
    GlobalMax { argmax: Vec<Vec<Vec<u32>>> },
}

#[derive(Debug, Clone)]
struct Tape {
    samples: Vec<Sample>,
    inputs: Vec<FeatureMap>,
    outputs: Vec<Vec<FeatureMap>>,
    records: Vec<Record>,
}

/// Summary line for one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: String,
    pub level: String,
    pub in_width: usize,
    pub out_width: usize,
    /// Convolution and linear parameters.
    pub params: usize,
    /// Batch-norm scale and shift.
    pub norm_params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSummary {
    pub rows: Vec<SummaryRow>,
}

impl ModelSummary {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.params + r.norm_params).sum()
    }

    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:<28} {:>7} {:>6} {:>6} {:>9} {:>6}",
            "layer", "kind", "level", "in", "out", "params", "bn"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:<28} {:>7} {:>6} {:>6} {:>9} {:>6}",
                r.name, r.kind, r.level, r.in_width, r.out_width, r.params, r.norm_params
            )?;
        }
        write!(f, "total parameters {}", self.total())
    }
}

/// Parameters plus the validated execution plan.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    plan: Vec<PlanStep>,
    params: Vec<LayerParams>,
    seed: u64,
    step: u64,
    dropout: f64,
    tape: Option<Tape>,
}

fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn accumulate(slot: &mut Option<Vec<FeatureMap>>, grads: Vec<FeatureMap>) {
    match slot {
        None => *slot = Some(grads),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g);
            }
        }
    }
}

impl Network {
    /// Validate `config` and initialize every parameter from `seed`.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Network> {
        let plan = plan(&config)?;
        let conv_bins = config.pyramid.kernel.bin_count();
        let (gn, gp) = config.global_kernel;
        let global_bins = bin_count_for(gn, gp, 1);
        let mut params = Vec::with_capacity(plan.len());
        for (k, step) in plan.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64]));
            let mut p = LayerParams::empty();
            match step.kind {
                LayerKind::Mlp {
                    in_channels,
                    out_channels,
                }
                | LayerKind::Fc {
                    in_channels,
                    out_channels,
                } => {
                    p.pointwise = Some(PointwiseParams::init(in_channels, out_channels, &mut rng));
                }
                LayerKind::Sph3d {
                    in_channels,
                    out_channels,
                    multiplier,
                }
                | LayerKind::GSph3d {
                    in_channels,
                    out_channels,
                    multiplier,
                } => {
                    let bins = if matches!(step.kind, LayerKind::Sph3d { .. }) {
                        conv_bins
                    } else {
                        global_bins
                    };
                    p.depthwise = Some(DepthwiseKernelParams::init(bins, in_channels, multiplier, &mut rng));
                    p.pointwise = Some(PointwiseParams::init(
                        in_channels * multiplier,
                        out_channels,
                        &mut rng,
                    ));
                }
                _ => {}
            }
            if step.activated {
                p.norm = Some(BatchNormState::new(step.out_width));
            }
            params.push(p);
        }
        Ok(Network {
            config,
            plan,
            params,
            seed,
            step: 0,
            dropout: 0.0,
            tape: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn plan(&self) -> &[PlanStep] {
        &self.plan
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn layer_params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.plan.iter().position(|s| s.name == name)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.dropout = rate;
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            rows: self
                .plan
                .iter()
                .zip(&self.params)
                .map(|(s, p)| SummaryRow {
                    name: s.name.clone(),
                    kind: s.kind.to_string(),
                    level: s.input_level.to_string(),
                    in_width: s.in_width,
                    out_width: s.out_width,
                    params: p.core_parameter_count(),
                    norm_params: p.norm_parameter_count(),
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.summary().total()
    }

    /// Every tensor, trainable ones first within each layer, with names
    /// `layer.part`.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn push<'a>(out: &mut Vec<TensorView<'a>>, layer: &str, part: &str, shape: Vec<usize>, data: &'a [f64], trainable: bool) {
            out.push(TensorView {
                name: format!("{layer}.{part}"),
                shape,
                data,
                trainable,
            });
        }
        let mut out = Vec::new();
        for (s, p) in self.plan.iter().zip(&self.params) {
            let l = s.name.as_str();
            if let Some(d) = &p.depthwise {
                push(
                    &mut out,
                    l,
                    "depthwise.weights",
                    vec![d.bin_count, d.in_channels, d.multiplier],
                    &d.weights,
                    true,
                );
                push(&mut out, l, "depthwise.bias", vec![d.bias.len()], &d.bias, true);
            }
            if let Some(w) = &p.pointwise {
                push(&mut out, l, "pointwise.weights", vec![w.in_channels, w.out_channels], &w.weights, true);
                push(&mut out, l, "pointwise.bias", vec![w.out_channels], &w.bias, true);
            }
            if let Some(n) = &p.norm {
                let c = n.channels();
                push(&mut out, l, "bn.gamma", vec![c], &n.gamma, true);
                push(&mut out, l, "bn.beta", vec![c], &n.beta, true);
                push(&mut out, l, "bn.running_mean", vec![c], &n.running_mean, false);
                push(&mut out, l, "bn.running_var", vec![c], &n.running_var, false);
            }
        }
        out
    }

    /// Mutable views of every tensor, in [`Network::tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (s, p) in self.plan.iter().zip(self.params.iter_mut()) {
            let n = |part: &str| format!("{}.{part}", s.name);
            if let Some(d) = &mut p.depthwise {
                out.push((n("depthwise.weights"), &mut d.weights));
                out.push((n("depthwise.bias"), &mut d.bias));
            }
            if let Some(w) = &mut p.pointwise {
                out.push((n("pointwise.weights"), &mut w.weights));
                out.push((n("pointwise.bias"), &mut w.bias));
            }
            if let Some(b) = &mut p.norm {
                out.push((n("bn.gamma"), &mut b.gamma));
                out.push((n("bn.beta"), &mut b.beta));
                out.push((n("bn.running_mean"), &mut b.running_mean));
                out.push((n("bn.running_var"), &mut b.running_var));
            }
        }
        out
    }

    /// Trainable tensors, in [`Gradients::slices`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for p in self.params.iter_mut() {
            if let Some(d) = &mut p.depthwise {
                out.push(&mut d.weights);
                out.push(&mut d.bias);
            }
            if let Some(w) = &mut p.pointwise {
                out.push(&mut w.weights);
                out.push(&mut w.bias);
            }
            if let Some(b) = &mut p.norm {
                out.push(&mut b.gamma);
                out.push(&mut b.beta);
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.tensors()
            .into_iter()
            .filter(|t| t.trainable)
            .map(|t| t.data)
            .collect()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().concat()
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.parameters().iter().map(|s| s.len()).sum();
        if values.len() != total {
            return Err(Error::invalid(format!(
                "{} values for {total} parameters",
                values.len()
            )));
        }
        let mut offset = 0;
        for s in self.parameters_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::invalid("forward over an empty batch"));
        }
        let deepest = self
            .plan
            .iter()
            .filter_map(|s| match s.output_level {
                Level::Vertex(l) => Some(l),
                Level::Global => None,
            })
            .max()
            .unwrap_or(0);
        let bins = self.config.pyramid.kernel.bin_count();
        for (i, s) in samples.iter().enumerate() {
            let py = &s.pyramid;
            if py.level_count() <= deepest {
                return Err(Error::Structural(format!(
                    "sample {i}: pyramid has {} levels, network uses {}",
                    py.level_count(),
                    deepest + 1
                )));
            }
            if let Some(l) = py.levels.iter().position(|lv| lv.kernel.bin_count() != bins) {
                return Err(Error::Structural(format!(
                    "sample {i}: level {l} kernel has {} bins, network expects {bins}",
                    py.levels[l].kernel.bin_count()
                )));
            }
            if s.features.rows() != py.level(0).cloud.len() || s.features.cols() != self.config.input_channels {
                return Err(Error::Structural(format!(
                    "sample {i}: features are {}x{}, expected {}x{}",
                    s.features.rows(),
                    s.features.cols(),
                    py.level(0).cloud.len(),
                    self.config.input_channels
                )));
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn post(
        &self,
        k: usize,
        z: Vec<FeatureMap>,
        mode: Mode,
    ) -> Result<(Vec<FeatureMap>, Post, Option<BatchNormState>)> {
        let step = &self.plan[k];
        if !step.activated {
            return Ok((z, Post::Linear, None));
        }
        let mut state = self.params[k].norm.clone().expect("activated layers carry batch norm");
        let (y, cache) = batch_norm_forward(&z, &mut state, mode)?;
        let mut out: Vec<FeatureMap> = y.par_iter().map(elu).collect();
        let mut mask = None;
        if mode == Mode::Training && self.dropout > 0.0 && matches!(step.kind, LayerKind::Fc { .. }) {
            let keep = 1.0 - self.dropout;
            let masks: Vec<FeatureMap> = out
                .iter()
                .enumerate()
                .map(|(b, o)| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.step, k as u64, b as u64, 7]));
                    let data = (0..o.data().len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    FeatureMap::from_vec(o.rows(), o.cols(), data).expect("same shape")
                })
                .collect();
            for (o, m) in out.iter_mut().zip(&masks) {
                for (v, s) in o.data_mut().iter_mut().zip(m.data()) {
                    *v *= s;
                }
            }
            mask = Some(masks);
        }
        let post = match cache {
            Some(cache) => Post::Norm { y, cache, mask },
            None => Post::Linear,
        };
        let update = (mode == Mode::Training).then_some(state);
        Ok((out, post, update))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        samples: &[Sample],
        mode: Mode,
        mut timings: Option<&mut Vec<Duration>>,
    ) -> Result<(Vec<FeatureMap>, Tape, Vec<Option<BatchNormState>>)> {
        self.check_samples(samples)?;
        let b = samples.len();
        let inputs: Vec<FeatureMap> = samples.iter().map(|s| s.features.clone()).collect();
        let mut outputs: Vec<Vec<FeatureMap>> = Vec::with_capacity(self.plan.len());
        let mut records = Vec::with_capacity(self.plan.len());
        let mut updates = Vec::with_capacity(self.plan.len());
        let (gn, gp) = self.config.global_kernel;

        for (k, step) in self.plan.iter().enumerate() {
            let started = Instant::now();
            let input: &[FeatureMap] = if k == 0 { &inputs } else { &outputs[k - 1] };
            let params = &self.params[k];
            let vertex = match step.input_level {
                Level::Vertex(l) => l,
                Level::Global => usize::MAX,
            };
            let (out, record, update) = match &step.kind {
                LayerKind::Mlp { .. } | LayerKind::Fc { .. } => {
                    let pw = params.pointwise.as_ref().expect("linear params");
                    let z = par_map(b, |i| pointwise_forward(&input[i], pw))?;
                    let (out, post, up) = self.post(k, z, mode)?;
                    (out, Record::Dense { post }, up)
                }
                LayerKind::Sph3d { .. } => {
                    let dw = params.depthwise.as_ref().expect("depthwise params");
                    let pw = params.pointwise.as_ref().expect("pointwise params");
                    let mid = par_map(b, |i| {
                        sph3d_depthwise_forward(&samples[i].pyramid.level(vertex).graph, &input[i], dw)
                    })?;
                    let z = par_map(b, |i| pointwise_forward(&mid[i], pw))?;
                    let (out, post, up) = self.post(k, z, mode)?;
                    (out, Record::Sph3d { mid, post }, up)
                }
                LayerKind::GSph3d { .. } => {
                    let dw = params.depthwise.as_ref().expect("depthwise params");
                    let pw = params.pointwise.as_ref().expect("pointwise params");
                    let graphs = par_map(b, |i| {
                        GlobalGraph::new(&samples[i].pyramid.level(vertex).cloud, gn, gp)
                    })?;
                    let mid = par_map(b, |i| global_depthwise_forward(&graphs[i], &input[i], dw))?;
                    let z = par_map(b, |i| pointwise_forward(&mid[i], pw))?;
                    let (out, post, up) = self.post(k, z, mode)?;
                    (out, Record::GSph3d { graphs, mid, post }, up)
                }
                LayerKind::PoolMax => {
                    let res = par_map(b, |i| max_pool(&samples[i].pyramid.pool[vertex], &input[i]))?;
                    let (out, argmax): (Vec<_>, Vec<_>) = res.into_iter().unzip();
                    (out, Record::PoolMax { argmax }, None)
                }
                LayerKind::PoolAvg => {
                    let out = par_map(b, |i| avg_pool(&samples[i].pyramid.pool[vertex], &input[i]))?;
                    (out, Record::Passive, None)
                }
                LayerKind::UnpoolUniform => {
                    let out = par_map(b, |i| {
                        uniform_interp(&samples[i].pyramid.unpool[vertex - 1], &input[i])
                    })?;
                    (out, Record::Passive, None)
                }
                LayerKind::UnpoolWeighted(w) => {
                    let out = par_map(b, |i| {
                        weighted_interp(&samples[i].pyramid.unpool[vertex - 1], &input[i], *w)
                    })?;
                    (out, Record::Passive, None)
                }
                LayerKind::ConcatSkip { .. } => {
                    let src = &outputs[step.sources[0]];
                    let out = par_map(b, |i| FeatureMap::concat_cols(&[&input[i], &src[i]]))?;
                    (out, Record::Passive, None)
                }
                LayerKind::GlobalMaxConcat { .. } => {
                    let res = par_map(b, |i| {
                        let mut parts = Vec::with_capacity(step.sources.len() + 1);
                        let mut arg = Vec::with_capacity(step.sources.len());
                        for &s in &step.sources {
                            let (m, a) = global_max(&outputs[s][i])?;
                            parts.push(m);
                            arg.push(a);
                        }
                        parts.push(input[i].clone());
                        let refs: Vec<&FeatureMap> = parts.iter().collect();
                        Ok((FeatureMap::concat_cols(&refs)?, arg))
                    })?;
                    let (out, argmax): (Vec<_>, Vec<_>) = res.into_iter().unzip();
                    (out, Record::GlobalMax { argmax }, None)
                }
            };
            outputs.push(out);
            records.push(record);
            updates.push(update);
            if let Some(t) = timings.as_deref_mut() {
                t.push(started.elapsed());
            }
        }
        let logits = outputs.last().expect("non-empty plan").clone();
        Ok((
            logits,
            Tape {
                samples: samples.to_vec(),
                inputs,
                outputs,
                records,
            },
            updates,
        ))
    }

    /// Per-sample logits: `1 x C` for classification, `m x C` for
    /// segmentation.
    ///
    /// Training mode uses batch statistics, updates the running statistics
    /// and records what [`Network::backward`] needs.
    pub fn forward(&mut self, samples: &[Sample], mode: Mode) -> Result<Vec<FeatureMap>> {
        self.forward_inner(samples, mode, None)
    }

    /// [`Network::forward`] that also reports the wall time of each layer.
    pub fn forward_timed(&mut self, samples: &[Sample], mode: Mode) -> Result<(Vec<FeatureMap>, Vec<Duration>)> {
        let mut t = Vec::with_capacity(self.plan.len());
        let logits = self.forward_inner(samples, mode, Some(&mut t))?;
        Ok((logits, t))
    }

    fn forward_inner(
        &mut self,
        samples: &[Sample],
        mode: Mode,
        timings: Option<&mut Vec<Duration>>,
    ) -> Result<Vec<FeatureMap>> {
        let (logits, tape, updates) = self.run(samples, mode, timings)?;
        if mode == Mode::Training {
            for (p, u) in self.params.iter_mut().zip(updates) {
                if let Some(state) = u {
                    p.norm = Some(state);
                }
            }
            self.tape = Some(tape);
        } else {
            self.tape = None;
        }
        Ok(logits)
    }

    /// Inference-mode forward that leaves the network untouched.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<FeatureMap>> {
        Ok(self.run(samples, Mode::Inference, None)?.0)
    }

    /// Bytes held by the recorded forward pass, if any.
    pub fn tape_bytes(&self) -> usize {
        let Some(t) = &self.tape else { return 0 };
        let maps = |v: &[FeatureMap]| v.iter().map(|m| m.data().len()).sum::<usize>();
        let post = |p: &Post| match p {
            Post::Linear => 0,
            Post::Norm { y, cache, mask } => {
                maps(y) + maps(&cache.normalized) + mask.as_deref().map_or(0, maps)
            }
        };
        let mut floats = maps(&t.inputs) + t.outputs.iter().map(|o| maps(o)).sum::<usize>();
        for r in &t.records {
            floats += match r {
                Record::Dense { post: p } => post(p),
                Record::Sph3d { mid, post: p } | Record::GSph3d { mid, post: p, .. } => maps(mid) + post(p),
                _ => 0,
            };
        }
        floats * std::mem::size_of::<f64>()
    }

    /// Gradients of the loss whose logit gradients are `grad_logits`,
    /// chaining every layer backward in reverse plan order.
    pub fn backward(&mut self, grad_logits: &[FeatureMap]) -> Result<Gradients> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward requires a training-mode forward first".into()))?;
        let b = tape.samples.len();
        if grad_logits.len() != b {
            return Err(Error::invalid(format!(
                "{} logit gradients for a batch of {b}",
                grad_logits.len()
            )));
        }
        let n = self.plan.len();
        for (i, g) in grad_logits.iter().enumerate() {
            let o = &tape.outputs[n - 1][i];
            if g.rows() != o.rows() || g.cols() != o.cols() {
                return Err(Error::invalid(format!("logit gradient {i} has the wrong shape")));
            }
        }
        let mut grads: Vec<LayerGrads> = self.params.iter().map(LayerGrads::zeros_like).collect();
        let mut pending: Vec<Option<Vec<FeatureMap>>> = vec![None; n];
        pending[n - 1] = Some(grad_logits.to_vec());
        let samples = &tape.samples;

        for k in (0..n).rev() {
            let step = &self.plan[k];
            let params = &self.params[k];
            let input: &[FeatureMap] = if k == 0 { &tape.inputs } else { &tape.outputs[k - 1] };
            let g = match pending[k].take() {
                Some(g) => g,
                None => tape.outputs[k]
                    .iter()
                    .map(|o| FeatureMap::zeros(o.rows(), o.cols()))
                    .collect(),
            };
            let vertex = match step.input_level {
                Level::Vertex(l) => l,
                Level::Global => usize::MAX,
            };
            let lg = &mut grads[k];
            let g_in: Vec<FeatureMap> = match &tape.records[k] {
                Record::Dense { post } => {
                    let gz = post_backward(post, params, lg, g)?;
                    let pw = params.pointwise.as_ref().expect("linear params");
                    let res = par_map(b, |i| pointwise_backward(&input[i], pw, &gz[i]))?;
                    linear_sum(lg, res)
                }
                Record::Sph3d { mid, post } => {
                    let gz = post_backward(post, params, lg, g)?;
                    let pw = params.pointwise.as_ref().expect("pointwise params");
                    let dw = params.depthwise.as_ref().expect("depthwise params");
                    let res = par_map(b, |i| pointwise_backward(&mid[i], pw, &gz[i]))?;
                    let gmid = linear_sum(lg, res);
                    let res = par_map(b, |i| {
                        sph3d_depthwise_backward(&samples[i].pyramid.level(vertex).graph, &input[i], dw, &gmid[i])
                    })?;
                    depthwise_sum(lg, res)
                }
                Record::GSph3d { graphs, mid, post } => {
                    let gz = post_backward(post, params, lg, g)?;
                    let pw = params.pointwise.as_ref().expect("pointwise params");
                    let dw = params.depthwise.as_ref().expect("depthwise params");
                    let res = par_map(b, |i| pointwise_backward(&mid[i], pw, &gz[i]))?;
                    let gmid = linear_sum(lg, res);
                    let res = par_map(b, |i| global_depthwise_backward(&graphs[i], &input[i], dw, &gmid[i]))?;
                    depthwise_sum(lg, res)
                }
                Record::PoolMax { argmax } => (0..b)
                    .into_par_iter()
                    .map(|i| max_pool_backward(&argmax[i], input[i].rows(), &g[i]))
                    .collect(),
                Record::Passive => match &step.kind {
                    LayerKind::PoolAvg => (0..b)
                        .into_par_iter()
                        .map(|i| avg_pool_backward(&samples[i].pyramid.pool[vertex], input[i].rows(), &g[i]))
                        .collect(),
                    LayerKind::UnpoolUniform => par_map(b, |i| {
                        uniform_interp_backward(&samples[i].pyramid.unpool[vertex - 1], input[i].rows(), &g[i])
                    })?,
                    LayerKind::UnpoolWeighted(w) => par_map(b, |i| {
                        weighted_interp_backward(
                            &samples[i].pyramid.unpool[vertex - 1],
                            input[i].rows(),
                            &g[i],
                            *w,
                        )
                    })?,
                    LayerKind::ConcatSkip { .. } => {
                        let src = step.sources[0];
                        let widths = [step.in_width, step.out_width - step.in_width];
                        let (main, skip): (Vec<_>, Vec<_>) = g
                            .iter()
                            .map(|gi| {
                                let mut parts = gi.split_cols(&widths).into_iter();
                                (parts.next().unwrap(), parts.next().unwrap())
                            })
                            .unzip();
                        accumulate(&mut pending[src], skip);
                        main
                    }
                    _ => unreachable!("passive record for an active layer"),
                },
                Record::GlobalMax { argmax } => {
                    let mut widths: Vec<usize> =
                        step.sources.iter().map(|&s| self.plan[s].out_width).collect();
                    widths.push(step.in_width);
                    let mut per_source: Vec<Vec<FeatureMap>> = vec![Vec::with_capacity(b); step.sources.len()];
                    let mut main = Vec::with_capacity(b);
                    for i in 0..b {
                        let mut parts = g[i].split_cols(&widths);
                        main.push(parts.pop().expect("main part"));
                        for (j, part) in parts.into_iter().enumerate() {
                            let rows = tape.outputs[step.sources[j]][i].rows();
                            per_source[j].push(global_max_backward(&argmax[i][j], rows, &part));
                        }
                    }
                    for (j, gs) in per_source.into_iter().enumerate() {
                        accumulate(&mut pending[step.sources[j]], gs);
                    }
                    main
                }
            };
            if k > 0 {
                accumulate(&mut pending[k - 1], g_in);
            }
        }
        Ok(Gradients { layers: grads })
    }

    pub(crate) fn clear_tape(&mut self) {
        self.tape = None;
    }
}

fn post_backward(
    post: &Post,
    params: &LayerParams,
    lg: &mut LayerGrads,
    mut g: Vec<FeatureMap>,
) -> Result<Vec<FeatureMap>> {
    match post {
        Post::Linear => Ok(g),
        Post::Norm { y, cache, mask } => {
            if let Some(masks) = mask {
                for (gi, m) in g.iter_mut().zip(masks) {
                    for (v, s) in gi.data_mut().iter_mut().zip(m.data()) {
                        *v *= s;
                    }
                }
            }
            let g: Vec<FeatureMap> = y.par_iter().zip(&g).map(|(yi, gi)| elu_backward(yi, gi)).collect();
            let gamma = &params.norm.as_ref().expect("batch norm state").gamma;
            let (gz, dgamma, dbeta) = batch_norm_backward(cache, gamma, &g)?;
            add_into(lg.gamma.as_mut().expect("gamma grad"), &dgamma);
            add_into(lg.beta.as_mut().expect("beta grad"), &dbeta);
            Ok(gz)
        }
    }
}

fn linear_sum(lg: &mut LayerGrads, res: Vec<(FeatureMap, LinearGrads)>) -> Vec<FeatureMap> {
    let acc = lg.pointwise.as_mut().expect("pointwise grad");
    res.into_iter()
        .map(|(gi, pg)| {
            add_into(&mut acc.weights, &pg.weights);
            add_into(&mut acc.bias, &pg.bias);
            gi
        })
        .collect()
}

fn depthwise_sum(lg: &mut LayerGrads, res: Vec<(FeatureMap, DepthwiseGrads)>) -> Vec<FeatureMap> {
    let acc = lg.depthwise.as_mut().expect("depthwise grad");
    res.into_iter()
        .map(|(gi, dg)| {
            add_into(&mut acc.weights, &dg.weights);
            add_into(&mut acc.bias, &dg.bias);
            gi
        })
        .collect()
}
