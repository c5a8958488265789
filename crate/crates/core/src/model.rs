//! The four dual-channel architectures (1DCNN, FRNN, LSTM, GRU).
//!
//! Each model has a vitals channel (`W` hourly steps × 7 variables) and a
//! labs channel (`W/8` steps × 16 variables). A channel is either three
//! stacked recurrent layers of 16 units, whose last hidden state is the
//! channel output, or one conv1d layer (16 filters) plus flatten. Each
//! channel output is batch-normalized, the two are concatenated, and the
//! fusion head is `dense(16) → relu → dense(1) → sigmoid`.
//!
//! Convolution kernels are 8 steps wide on the vitals channel and 1 step on
//! the labs channel (labs may have a single step).

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::layers::{LayerCache, LayerSpec, Mode, RecurrentCell};
use crate::numeric::{Gradients, ParamKind, ParameterSet, Tensor};
use crate::seed;

pub const VITAL_COUNT: usize = 7;
pub const LAB_COUNT: usize = 16;
/// Width of one labs time bin, in hours.
pub const LAB_BIN_HOURS: usize = 8;
pub const SUPPORTED_WINDOWS: [usize; 4] = [8, 16, 24, 48];
pub const RECURRENT_UNITS: usize = 16;
pub const RECURRENT_DEPTH: usize = 3;
pub const CONV_FILTERS: usize = 16;
pub const VITALS_KERNEL: usize = 8;
pub const LABS_KERNEL: usize = 1;
pub const HEAD_UNITS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cnn1d,
    Frnn,
    Lstm,
    Gru,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Cnn1d, Family::Frnn, Family::Lstm, Family::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cnn1d => "1dcnn",
            Family::Frnn => "frnn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Cnn1d => "1DCNN",
            Family::Frnn => "FRNN",
            Family::Lstm => "LSTM",
            Family::Gru => "GRU",
        }
    }

    fn cell(self) -> Option<RecurrentCell> {
        match self {
            Family::Cnn1d => None,
            Family::Frnn => Some(RecurrentCell::Frnn),
            Family::Lstm => Some(RecurrentCell::Lstm),
            Family::Gru => Some(RecurrentCell::Gru),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1dcnn" | "cnn" | "cnn1d" => Ok(Family::Cnn1d),
            "frnn" | "rnn" => Ok(Family::Frnn),
            "lstm" => Ok(Family::Lstm),
            "gru" => Ok(Family::Gru),
            other => Err(Error::config(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedLayer {
    pub name: String,
    pub spec: LayerSpec,
}

/// Layer graph of one dual-channel model. Depends only on `(family, window)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub window: usize,
    pub vitals: Vec<NamedLayer>,
    pub labs: Vec<NamedLayer>,
    /// Starts with the concat layer joining both channels.
    pub head: Vec<NamedLayer>,
}

impl ArchitectureSpec {
    pub fn vitals_steps(&self) -> usize {
        self.window
    }

    pub fn labs_steps(&self) -> usize {
        self.window / LAB_BIN_HOURS
    }

    pub fn layers(&self) -> impl Iterator<Item = &NamedLayer> {
        self.vitals.iter().chain(&self.labs).chain(&self.head)
    }

    /// Scalar parameter count, running statistics included.
    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.spec.param_count()).sum()
    }

    /// Layer table with output shapes and parameter counts.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} model, window {}h", self.family.display_name(), self.window);
        let _ = writeln!(out, "{:<22} {:<26} {:<12} {:>8}", "layer", "kind", "output", "params");
        let section = |layers: &[NamedLayer], mut shape: Vec<usize>, out: &mut String| -> Vec<usize> {
            for l in layers {
                if let Ok(s) = l.spec.output_shape(&shape) {
                    shape = s;
                }
                let _ = writeln!(
                    out,
                    "{:<22} {:<26} {:<12} {:>8}",
                    l.name,
                    l.spec.to_string(),
                    format!("{shape:?}"),
                    l.spec.param_count()
                );
            }
            shape
        };
        let v = section(&self.vitals, vec![self.vitals_steps(), VITAL_COUNT], &mut out);
        let l = section(&self.labs, vec![self.labs_steps(), LAB_COUNT], &mut out);
        section(&self.head, vec![v[0] + l[0]], &mut out);
        let _ = writeln!(out, "total parameters: {}", self.param_count());
        out
    }
}

pub fn build_architecture(family: Family, window: usize) -> Result<ArchitectureSpec> {
    if window == 0 || !window.is_multiple_of(LAB_BIN_HOURS) {
        return Err(Error::config(format!("window {window}h is not a positive multiple of {LAB_BIN_HOURS}h")));
    }
    let labs_steps = window / LAB_BIN_HOURS;
    let (vitals, v_out) = channel(family, "vitals", window, VITAL_COUNT, VITALS_KERNEL)?;
    let (labs, l_out) = channel(family, "labs", labs_steps, LAB_COUNT, LABS_KERNEL)?;
    let head = vec![
        named("head.concat", LayerSpec::Concat),
        named("head.dense0", LayerSpec::Dense { inputs: v_out + l_out, units: HEAD_UNITS }),
        named("head.relu", LayerSpec::Relu),
        named("head.dense1", LayerSpec::Dense { inputs: HEAD_UNITS, units: 1 }),
        named("head.sigmoid", LayerSpec::Sigmoid),
    ];
    let spec = ArchitectureSpec { family, window, vitals, labs, head };
    for l in spec.layers() {
        l.spec.validate()?;
    }
    Ok(spec)
}

fn named(name: &str, spec: LayerSpec) -> NamedLayer {
    NamedLayer { name: name.to_string(), spec }
}

fn channel(
    family: Family,
    prefix: &str,
    steps: usize,
    features: usize,
    kernel: usize,
) -> Result<(Vec<NamedLayer>, usize)> {
    let mut layers = Vec::new();
    let width = match family.cell() {
        Some(cell) => {
            for depth in 0..RECURRENT_DEPTH {
                layers.push(named(
                    &format!("{prefix}.{}{depth}", cell.name()),
                    LayerSpec::Recurrent {
                        cell,
                        inputs: if depth == 0 { features } else { RECURRENT_UNITS },
                        units: RECURRENT_UNITS,
                        return_sequences: depth + 1 < RECURRENT_DEPTH,
                    },
                ));
            }
            RECURRENT_UNITS
        }
        None => {
            if steps < kernel {
                return Err(Error::config(format!(
                    "{prefix} channel has {steps} steps, fewer than kernel size {kernel}"
                )));
            }
            layers.push(named(
                &format!("{prefix}.conv1d"),
                LayerSpec::Conv1d { in_channels: features, kernel_size: kernel, filters: CONV_FILTERS },
            ));
            layers.push(named(&format!("{prefix}.flatten"), LayerSpec::Flatten));
            (steps - kernel + 1) * CONV_FILTERS
        }
    };
    layers.push(named(&format!("{prefix}.batchnorm"), LayerSpec::BatchNorm { features: width }));
    Ok((layers, width))
}

/// Glorot-uniform kernels, zero biases, unit batch-norm scale and variance.
pub fn init_parameters(spec: &ArchitectureSpec, seed: u64) -> ParameterSet {
    let mut rng = seed::rng(seed, &[0x1417]);
    let mut params = ParameterSet::new();
    for layer in spec.layers() {
        for (suffix, shape, kind) in layer.spec.param_shapes() {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = match (suffix, layer.spec.glorot_fans(&shape)) {
                (_, Some((fan_in, fan_out))) if suffix.ends_with("kernel") => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
                }
                ("gamma", _) | ("running_var", _) => vec![1.0; len],
                _ => vec![0.0; len],
            };
            let value = Tensor::new(shape, data).expect("shape derived from layer spec");
            params.push(format!("{}.{suffix}", layer.name), kind, value).expect("layer names are unique");
        }
    }
    params
}

/// Inputs for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, W, 7]`
    pub vitals: Tensor,
    /// `[B, W/8, 16]`
    pub labs: Tensor,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.vitals.shape()[0]
    }
}

#[derive(Clone, Debug)]
struct BoundLayer {
    name: String,
    spec: LayerSpec,
    params: Vec<usize>,
}

/// Executable form of an [`ArchitectureSpec`]. Holds no weights.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ArchitectureSpec,
    vitals: Vec<BoundLayer>,
    labs: Vec<BoundLayer>,
    head: Vec<BoundLayer>,
    param_names: Vec<(String, ParamKind, Vec<usize>)>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ModelCache {
    mode: Mode,
    batch: usize,
    vitals_width: usize,
    vitals: Vec<LayerCache>,
    labs: Vec<LayerCache>,
    head: Vec<LayerCache>,
}

impl ModelCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Sigmoid outputs, one per sample.
    pub predictions: Vec<f64>,
    pub cache: ModelCache,
}

impl Model {
    pub fn new(spec: ArchitectureSpec) -> Self {
        let mut next = 0;
        let mut param_names = Vec::new();
        let mut bind = |layers: &[NamedLayer]| -> Vec<BoundLayer> {
            layers
                .iter()
                .map(|l| {
                    let shapes = l.spec.param_shapes();
                    let params = (next..next + shapes.len()).collect();
                    next += shapes.len();
                    for (suffix, shape, kind) in shapes {
                        param_names.push((format!("{}.{suffix}", l.name), kind, shape));
                    }
                    BoundLayer { name: l.name.clone(), spec: l.spec.clone(), params }
                })
                .collect()
        };
        let vitals = bind(&spec.vitals);
        let labs = bind(&spec.labs);
        let head = bind(&spec.head);
        Self { spec, vitals, labs, head, param_names }
    }

    pub fn build(family: Family, window: usize) -> Result<Self> {
        Ok(Self::new(build_architecture(family, window)?))
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn init_parameters(&self, seed: u64) -> ParameterSet {
        init_parameters(&self.spec, seed)
    }

    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let ok = params.len() == self.param_names.len()
            && params.iter().zip(&self.param_names).all(|(e, (name, kind, shape))| {
                &e.name == name && e.kind == *kind && e.value.shape() == shape.as_slice()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "parameter set does not match the {} {}h architecture",
                self.spec.family, self.spec.window
            )))
        }
    }

    pub fn check_batch(&self, batch: &Batch) -> Result<()> {
        let b = batch.vitals.shape().first().copied().unwrap_or(0);
        let want_v = [b, self.spec.vitals_steps(), VITAL_COUNT];
        let want_l = [b, self.spec.labs_steps(), LAB_COUNT];
        if b == 0 || batch.vitals.shape() != want_v || batch.labs.shape() != want_l {
            return Err(Error::config(format!(
                "batch shapes {:?}/{:?} do not match expected {want_v:?}/{want_l:?}",
                batch.vitals.shape(),
                batch.labs.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParameterSet, batch: &Batch, mode: Mode) -> Result<ForwardPass> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let (v_out, v_cache) = run_chain(&self.vitals, params, batch.vitals.clone(), mode)?;
        let (l_out, l_cache) = run_chain(&self.labs, params, batch.labs.clone(), mode)?;
        let b = batch.size();
        let (vw, lw) = (v_out.len() / b, l_out.len() / b);
        let mut joined = Vec::with_capacity(b * (vw + lw));
        for i in 0..b {
            joined.extend_from_slice(&v_out.data()[i * vw..(i + 1) * vw]);
            joined.extend_from_slice(&l_out.data()[i * lw..(i + 1) * lw]);
        }
        let joined = Tensor::new(vec![b, vw + lw], joined)?;
        // The concat layer is the first head layer and has no cache.
        let (out, h_cache) = run_chain(&self.head[1..], params, joined, mode)?;
        Ok(ForwardPass {
            predictions: out.into_data(),
            cache: ModelCache { mode, batch: b, vitals_width: vw, vitals: v_cache, labs: l_cache, head: h_cache },
        })
    }

    /// Predictions in eval mode.
    pub fn predict(&self, params: &ParameterSet, batch: &Batch) -> Result<Vec<f64>> {
        Ok(self.forward(params, batch, Mode::Eval)?.predictions)
    }

    /// Writes the running statistics computed by a train-mode pass into `params`.
    pub fn commit_running_stats(&self, params: &mut ParameterSet, cache: &ModelCache) {
        let sections: [(&[BoundLayer], &[LayerCache]); 3] =
            [(&self.vitals, &cache.vitals), (&self.labs, &cache.labs), (&self.head[1..], &cache.head)];
        for (layers, caches) in sections {
            for (layer, c) in layers.iter().zip(caches.iter()) {
                if let Some((mean, var)) = c.running_update() {
                    params.value_mut(layer.params[2]).data_mut().copy_from_slice(mean);
                    params.value_mut(layer.params[3]).data_mut().copy_from_slice(var);
                }
            }
        }
    }

    /// Train-mode forward that also updates batch-norm running statistics.
    pub fn forward_train(&self, params: &mut ParameterSet, batch: &Batch) -> Result<ForwardPass> {
        let pass = self.forward(params, batch, Mode::Train)?;
        self.commit_running_stats(params, &pass.cache);
        Ok(pass)
    }

    /// Gradients of the loss with respect to every trainable parameter, given
    /// the loss gradient with respect to each prediction.
    pub fn backward(&self, params: &ParameterSet, cache: &ModelCache, loss_grad: &[f64]) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::contract("backward requires a train-mode forward cache"));
        }
        if loss_grad.len() != cache.batch {
            return Err(Error::contract(format!("{} loss gradients for a batch of {}", loss_grad.len(), cache.batch)));
        }
        self.check_params(params)?;
        let mut grads = Gradients::zeros_like(params);
        let g = Tensor::new(vec![cache.batch, 1], loss_grad.to_vec())?;
        let g_joined = back_chain(&self.head[1..], &cache.head, params, g, &mut grads)?;
        let b = cache.batch;
        let width = g_joined.len() / b;
        let vw = cache.vitals_width;
        let lw = width - vw;
        let mut gv = Vec::with_capacity(b * vw);
        let mut gl = Vec::with_capacity(b * lw);
        for row in g_joined.data().chunks_exact(width) {
            gv.extend_from_slice(&row[..vw]);
            gl.extend_from_slice(&row[vw..]);
        }
        back_chain(&self.vitals, &cache.vitals, params, Tensor::new(vec![b, vw], gv)?, &mut grads)?;
        back_chain(&self.labs, &cache.labs, params, Tensor::new(vec![b, lw], gl)?, &mut grads)?;
        Ok(grads)
    }
}

fn run_chain(
    layers: &[BoundLayer],
    params: &ParameterSet,
    mut x: Tensor,
    mode: Mode,
) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let p: Vec<&Tensor> = layer.params.iter().map(|&i| params.value(i)).collect();
        let (y, cache) = layer.spec.forward(&p, &x, mode)?;
        y.check_finite(&layer.name)?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

fn back_chain(
    layers: &[BoundLayer],
    caches: &[LayerCache],
    params: &ParameterSet,
    mut g: Tensor,
    grads: &mut Gradients,
) -> Result<Tensor> {
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let p: Vec<&Tensor> = layer.params.iter().map(|&i| params.value(i)).collect();
        let mut slots: Vec<Tensor> = layer
            .params
            .iter()
            .map(|&i| grads.get(i).cloned().unwrap_or_else(|| Tensor::zeros(params.value(i).shape())))
            .collect();
        let gx = layer.spec.backward(&p, cache, &g, &mut slots)?;
        for (&i, slot) in layer.params.iter().zip(slots) {
            if let Some(dst) = grads.slot_mut(i) {
                *dst = slot;
            }
        }
        gx.check_finite(&format!("{} (backward)", layer.name))?;
        g = gx;
    }
    Ok(g)
}
