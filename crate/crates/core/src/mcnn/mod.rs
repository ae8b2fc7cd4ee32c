//! The multi-branch network: per-branch local convolution, deep
//! concatenation, a full convolution stage, a dense hidden layer and a
//! softmax output, plus slice-level majority-vote prediction.

mod io;

pub use io::{read_model, write_model, MODEL_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvCache, ConvGrads, ConvLayer, DenseCache, DenseGrads, DenseLayer};
use crate::numerics::{self, Pooled, Signal};
use crate::transform::{self, BranchKind, BranchSpec};

/// Full architectural description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McnnConfig {
    pub branch_spec: BranchSpec,
    /// Filters per local (per-branch) convolution.
    pub local_filters: usize,
    /// Filters per full-stage convolution.
    pub full_filters: usize,
    /// Number of convolution + pooling layers after concatenation.
    pub full_depth: usize,
    /// Filter length as a fraction of the layer's input length.
    pub filter_ratio: f64,
    /// Outputs per channel after every max pooling.
    pub pooling_factor: usize,
    pub dense_units: usize,
    pub num_classes: usize,
    /// Length of the original (unsliced) series.
    pub input_length: usize,
    pub slice_ratio: f64,
    pub activation: Activation,
}

impl McnnConfig {
    pub const DEFAULT_FILTERS: usize = 256;
    pub const DEFAULT_DENSE_UNITS: usize = 256;
    pub const DEFAULT_FILTER_RATIO: f64 = 0.1;
    pub const DEFAULT_POOLING_FACTOR: usize = 3;
    pub const DEFAULT_SLICE_RATIO: f64 = 0.9;

    pub fn new(input_length: usize, num_classes: usize) -> Self {
        Self {
            branch_spec: BranchSpec::default(),
            local_filters: Self::DEFAULT_FILTERS,
            full_filters: Self::DEFAULT_FILTERS,
            full_depth: 1,
            filter_ratio: Self::DEFAULT_FILTER_RATIO,
            pooling_factor: Self::DEFAULT_POOLING_FACTOR,
            dense_units: Self::DEFAULT_DENSE_UNITS,
            num_classes,
            input_length,
            slice_ratio: Self::DEFAULT_SLICE_RATIO,
            activation: Activation::Relu,
        }
    }

    /// Length of the slices the network consumes.
    pub fn slice_len(&self) -> usize {
        slice_len(self.input_length, self.slice_ratio)
    }

    /// Shape propagation through every layer, or the first branch or
    /// layer whose shapes do not fit.
    pub fn geometry(&self) -> Result<Geometry> {
        if self.num_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.local_filters == 0 || self.full_filters == 0 || self.dense_units == 0 {
            return Err(Error::invalid("filter and unit counts must be positive"));
        }
        if self.full_depth == 0 {
            return Err(Error::invalid("full stage needs at least one layer"));
        }
        if !(self.filter_ratio > 0.0 && self.filter_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "filter ratio {} outside (0, 1]",
                self.filter_ratio
            )));
        }
        if !(self.slice_ratio > 0.0 && self.slice_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "slice ratio {} outside (0, 1]",
                self.slice_ratio
            )));
        }
        let p = self.pooling_factor;
        if p == 0 {
            return Err(Error::invalid("pooling factor must be positive"));
        }
        let slice = self.slice_len();
        if slice > self.input_length {
            return Err(Error::geometry(
                "input",
                format!(
                    "slice length {slice} exceeds series length {}",
                    self.input_length
                ),
            ));
        }
        let local_filter_len = filter_len(self.filter_ratio, slice);
        let mut branches = Vec::new();
        for (kind, channels, len) in self.branch_spec.branch_shapes(slice)? {
            if len < local_filter_len {
                return Err(Error::geometry(
                    kind.to_string(),
                    format!("length {len} is shorter than filter length {local_filter_len}"),
                ));
            }
            let conv_len = len - local_filter_len + 1;
            if conv_len < p {
                return Err(Error::geometry(
                    kind.to_string(),
                    format!("pooling factor {p} exceeds convolution output length {conv_len}"),
                ));
            }
            branches.push(BranchGeometry {
                kind,
                channels,
                len,
                conv_len,
            });
        }
        let concat_channels = branches.len() * self.local_filters;
        let mut full = Vec::new();
        let (mut in_channels, mut in_len) = (concat_channels, p);
        for depth in 0..self.full_depth {
            let m = filter_len(self.filter_ratio, in_len);
            if in_len < m {
                return Err(Error::geometry(
                    format!("full layer {depth}"),
                    format!("input length {in_len} is shorter than filter length {m}"),
                ));
            }
            let conv_len = in_len - m + 1;
            let pooled_len = p.min(conv_len);
            full.push(FullGeometry {
                in_channels,
                in_len,
                filter_len: m,
                conv_len,
                pooled_len,
            });
            in_channels = self.full_filters;
            in_len = pooled_len;
        }
        Ok(Geometry {
            slice_len: slice,
            local_filter_len,
            branches,
            concat_channels,
            full,
            dense_inputs: in_channels * in_len,
        })
    }

    /// Total learned scalars implied by the geometry.
    pub fn num_params(&self) -> Result<usize> {
        let g = self.geometry()?;
        let local: usize = g
            .branches
            .iter()
            .map(|b| self.local_filters * (b.channels * g.local_filter_len + 1))
            .sum();
        let full: usize = g
            .full
            .iter()
            .map(|f| self.full_filters * (f.in_channels * f.filter_len + 1))
            .sum();
        let dense =
            self.dense_units * (g.dense_inputs + 1) + self.num_classes * (self.dense_units + 1);
        Ok(local + full + dense)
    }
}

/// Slice length used for augmentation and inference.
pub fn slice_len(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).max(2)
}

/// Filter length for a layer whose input has `len` samples.
pub fn filter_len(ratio: f64, len: usize) -> usize {
    ((ratio * len as f64).round() as usize).max(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchGeometry {
    pub kind: BranchKind,
    pub channels: usize,
    pub len: usize,
    pub conv_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullGeometry {
    pub in_channels: usize,
    pub in_len: usize,
    pub filter_len: usize,
    pub conv_len: usize,
    pub pooled_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub slice_len: usize,
    pub local_filter_len: usize,
    pub branches: Vec<BranchGeometry>,
    pub concat_channels: usize,
    pub full: Vec<FullGeometry>,
    pub dense_inputs: usize,
}

/// All learned parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct McnnModel {
    pub config: McnnConfig,
    pub seed: u64,
    /// Original label text for each class index.
    pub class_labels: Vec<String>,
    pub local: Vec<ConvLayer>,
    pub full: Vec<ConvLayer>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

/// Saved intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    local: Vec<(ConvCache, Pooled)>,
    full: Vec<(ConvCache, Pooled)>,
    hidden: DenseCache,
    output: DenseCache,
    pub logits: Vec<f64>,
}

/// Gradients congruent with every parameter of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub local: Vec<ConvGrads>,
    pub full: Vec<ConvGrads>,
    pub hidden: DenseGrads,
    pub output: DenseGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &McnnModel) -> Self {
        Self {
            local: model
                .local
                .iter()
                .map(|l| ConvGrads::zeros_like(&l.bank))
                .collect(),
            full: model
                .full
                .iter()
                .map(|l| ConvGrads::zeros_like(&l.bank))
                .collect(),
            hidden: DenseGrads::zeros_like(&model.hidden),
            output: DenseGrads::zeros_like(&model.output),
        }
    }

    pub fn clear(&mut self) {
        self.local.iter_mut().for_each(ConvGrads::clear);
        self.full.iter_mut().for_each(ConvGrads::clear);
        self.hidden.clear();
        self.output.clear();
    }

    /// Gradient arrays in the model's canonical parameter order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in self.local.iter().chain(&self.full) {
            out.push(&g.weights);
            out.push(&g.bias);
        }
        out.push(&self.hidden.weights);
        out.push(&self.hidden.bias);
        out.push(&self.output.weights);
        out.push(&self.output.bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in self.local.iter_mut().chain(self.full.iter_mut()) {
            out.push(&mut g.weights);
            out.push(&mut g.bias);
        }
        out.push(&mut self.hidden.weights);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.output.weights);
        out.push(&mut self.output.bias);
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// Stacks equal-length maps channel-wise in the given order.
pub fn deep_concat(maps: &[Signal]) -> Result<Signal> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    let len = first.len();
    let mut channels = 0;
    let mut values = Vec::with_capacity(maps.iter().map(|m| m.values().len()).sum());
    for map in maps {
        if map.len() != len {
            return Err(Error::dim("map length", len, map.len()));
        }
        channels += map.channels();
        values.extend_from_slice(map.values());
    }
    Ok(Signal::from_raw(channels, len, values))
}

/// Assembles a freshly initialised model; identical `(config, seed)` pairs
/// give bit-identical parameters.
pub fn assemble(config: &McnnConfig, seed: u64) -> Result<McnnModel> {
    let geometry = config.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = config.activation;
    let local = geometry
        .branches
        .iter()
        .map(|b| {
            ConvLayer::init(
                &mut rng,
                config.local_filters,
                b.channels,
                geometry.local_filter_len,
                act,
            )
        })
        .collect();
    let full = geometry
        .full
        .iter()
        .map(|f| {
            ConvLayer::init(
                &mut rng,
                config.full_filters,
                f.in_channels,
                f.filter_len,
                act,
            )
        })
        .collect();
    let hidden = DenseLayer::init(&mut rng, geometry.dense_inputs, config.dense_units, act);
    let output = DenseLayer::init(
        &mut rng,
        config.dense_units,
        config.num_classes,
        Activation::Identity,
    );
    Ok(McnnModel {
        config: config.clone(),
        seed,
        class_labels: (0..config.num_classes).map(|c| c.to_string()).collect(),
        local,
        full,
        hidden,
        output,
    })
}

/// Outcome of voting across all slices of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub class: usize,
    /// Slices whose argmax was each class.
    pub votes: Vec<usize>,
    /// Softmax probabilities summed over slices.
    pub prob_sums: Vec<f64>,
}

impl Vote {
    /// Majority vote over per-slice probabilities. Vote ties go to the
    /// larger probability sum, then the lower class index.
    pub fn from_probabilities(classes: usize, slices: &[Vec<f64>]) -> Self {
        let mut votes = vec![0usize; classes];
        let mut prob_sums = vec![0.0; classes];
        for probs in slices {
            votes[argmax(probs)] += 1;
            for (s, p) in prob_sums.iter_mut().zip(probs) {
                *s += p;
            }
        }
        let mut class = 0;
        for c in 1..classes {
            let better = votes[c] > votes[class]
                || (votes[c] == votes[class] && prob_sums[c] > prob_sums[class]);
            if better {
                class = c;
            }
        }
        Self {
            class,
            votes,
            prob_sums,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl McnnModel {
    pub fn slice_len(&self) -> usize {
        self.config.slice_len()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Runs the network on one slice, keeping everything backward needs.
    pub fn trace(&self, series: &[f64]) -> Result<ForwardTrace> {
        let expected = self.slice_len();
        if series.len() != expected {
            return Err(Error::dim("series length", expected, series.len()));
        }
        let p = self.config.pooling_factor;
        let inputs = transform::build_branches(series, &self.config.branch_spec)?.into_ordered();
        let mut local = Vec::with_capacity(inputs.len());
        let mut pooled_maps = Vec::with_capacity(inputs.len());
        for (layer, input) in self.local.iter().zip(&inputs) {
            let (act, cache) = layer.forward(input)?;
            let pooled = numerics::maxpool_by_factor(&act, p)?;
            pooled_maps.push(pooled.output.clone());
            local.push((cache, pooled));
        }
        let mut map = deep_concat(&pooled_maps)?;
        let mut full = Vec::with_capacity(self.full.len());
        for layer in &self.full {
            let (act, cache) = layer.forward(&map)?;
            let pooled = numerics::maxpool_by_factor(&act, p.min(act.len()))?;
            map = pooled.output.clone();
            full.push((cache, pooled));
        }
        let (hidden_out, hidden) = self.hidden.forward(map.values())?;
        let (logits, output) = self.output.forward(&hidden_out)?;
        Ok(ForwardTrace {
            local,
            full,
            hidden,
            output,
            logits,
        })
    }

    pub fn logits(&self, series: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(series)?.logits)
    }

    /// Class probabilities for one slice-length series.
    pub fn forward(&self, series: &[f64]) -> Result<Vec<f64>> {
        numerics::softmax(&self.logits(series)?)
    }

    /// Adds the gradient of a loss into `grads`, given that loss's gradient
    /// with respect to the logits of `trace`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        logit_grad: &[f64],
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let mut d_hidden = vec![0.0; self.hidden.outputs()];
        self.output.accumulate_backward(
            &trace.output,
            logit_grad,
            &mut grads.output,
            &mut d_hidden,
        )?;
        let mut d_flat = vec![0.0; self.hidden.inputs()];
        self.hidden.accumulate_backward(
            &trace.hidden,
            &d_hidden,
            &mut grads.hidden,
            &mut d_flat,
        )?;

        let last = &trace.full.last().expect("at least one full layer").1.output;
        let mut upstream = Signal::from_raw(last.channels(), last.len(), d_flat);
        for (depth, layer) in self.full.iter().enumerate().rev() {
            let (cache, pooled) = &trace.full[depth];
            let d_act = crate::nn::maxpool_backward(pooled, &upstream)?;
            let mut d_in = Signal::zeros(cache.input.channels(), cache.input.len());
            layer.accumulate_backward(cache, &d_act, &mut grads.full[depth], Some(&mut d_in))?;
            upstream = d_in;
        }

        let filters = self.config.local_filters;
        let p = upstream.len();
        for (b, layer) in self.local.iter().enumerate() {
            let (cache, pooled) = &trace.local[b];
            let rows = &upstream.values()[b * filters * p..(b + 1) * filters * p];
            let d_pooled = Signal::from_raw(filters, p, rows.to_vec());
            let d_act = crate::nn::maxpool_backward(pooled, &d_pooled)?;
            layer.accumulate_backward(cache, &d_act, &mut grads.local[b], None)?;
        }
        Ok(())
    }

    /// Cross-entropy loss of one labelled slice, accumulating its gradient.
    pub fn loss_and_grad(
        &self,
        series: &[f64],
        label: usize,
        grads: &mut ModelGrads,
    ) -> Result<(f64, usize)> {
        let trace = self.trace(series)?;
        let (loss, dz) = crate::nn::softmax_cross_entropy(&trace.logits, label)?;
        self.backward(&trace, &dz, grads)?;
        Ok((loss, argmax(&trace.logits)))
    }

    /// Softmax output for every slice of a series of at least slice length.
    pub fn slice_probabilities(&self, series: &[f64]) -> Result<Vec<Vec<f64>>> {
        let len = self.slice_len();
        if series.len() < len {
            return Err(Error::dim("series length", len, series.len()));
        }
        transform::window_slices(series, len)?
            .into_iter()
            .map(|slice| self.forward(slice))
            .collect()
    }

    /// Classifies a series of at least slice length by voting over its
    /// slices.
    pub fn predict_with_vote(&self, series: &[f64]) -> Result<Vote> {
        Ok(Vote::from_probabilities(
            self.num_classes(),
            &self.slice_probabilities(series)?,
        ))
    }

    /// Parameter arrays in canonical order with their names and dimensions.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, layers) in [("local", &self.local), ("full", &self.full)] {
            for (i, l) in layers.iter().enumerate() {
                let b = &l.bank;
                out.push((
                    format!("{prefix}.{i}.weight"),
                    vec![b.num_filters(), b.in_channels(), b.filter_len()],
                    b.weights(),
                ));
                out.push((
                    format!("{prefix}.{i}.bias"),
                    vec![b.num_filters()],
                    b.bias(),
                ));
            }
        }
        for (name, l) in [("hidden", &self.hidden), ("output", &self.output)] {
            out.push((
                format!("{name}.weight"),
                vec![l.weights.rows(), l.weights.cols()],
                l.weights.data(),
            ));
            out.push((format!("{name}.bias"), vec![l.bias.len()], &l.bias[..]));
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.local.iter_mut().chain(self.full.iter_mut()) {
            let (w, b) = l.bank.parts_mut();
            out.push(w);
            out.push(b);
        }
        for l in [&mut self.hidden, &mut self.output] {
            out.push(l.weights.data_mut());
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::dim("parameters", total, flat.len()));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }
}
