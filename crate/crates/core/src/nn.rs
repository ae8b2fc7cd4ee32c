//! Trainable layers with explicit forward caches and backward passes, the
//! softmax cross-entropy head, and a central-difference gradient checker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, FilterBank, Matrix, Pooled, Signal};

/// Pointwise nonlinearity applied after a layer's affine part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative at pre-activation `x`. The relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Uniform initialisation on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    out: &mut [f64],
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = rng.random_range(-limit..limit);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub bank: FilterBank,
    pub activation: Activation,
}

/// Values saved by [`ConvLayer::forward`] for the matching backward call.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub input: Signal,
    pub pre_activation: Signal,
}

/// Gradients congruent with a [`FilterBank`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(bank: &FilterBank) -> Self {
        Self {
            weights: vec![0.0; bank.weights().len()],
            bias: vec![0.0; bank.num_filters()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }
}

impl ConvLayer {
    pub fn new(bank: FilterBank, activation: Activation) -> Self {
        Self { bank, activation }
    }

    /// Glorot-initialised weights and zero biases.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        num_filters: usize,
        in_channels: usize,
        filter_len: usize,
        activation: Activation,
    ) -> Self {
        let mut bank = FilterBank::zeros(num_filters, in_channels, filter_len);
        glorot_uniform(
            rng,
            in_channels * filter_len,
            num_filters * filter_len,
            bank.weights_mut(),
        );
        Self { bank, activation }
    }

    pub fn forward(&self, input: &Signal) -> Result<(Signal, ConvCache)> {
        let pre = numerics::conv1d(input, &self.bank)?;
        let mut out = pre.clone();
        if self.activation != Activation::Identity {
            for v in out.values_mut() {
                *v = self.activation.apply(*v);
            }
        }
        Ok((
            out,
            ConvCache {
                input: input.clone(),
                pre_activation: pre,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, upstream: &Signal) -> Result<(ConvGrads, Signal)> {
        let mut grads = ConvGrads::zeros_like(&self.bank);
        let mut input_grad = Signal::zeros(cache.input.channels(), cache.input.len());
        self.accumulate_backward(cache, upstream, &mut grads, Some(&mut input_grad))?;
        Ok((grads, input_grad))
    }

    /// Adds this call's parameter gradients into `grads` and, when asked,
    /// the input gradient into `input_grad`.
    ///
    /// Zero entries of the upstream gradient are skipped, which makes the
    /// pass cheap after max pooling.
    pub fn accumulate_backward(
        &self,
        cache: &ConvCache,
        upstream: &Signal,
        grads: &mut ConvGrads,
        mut input_grad: Option<&mut Signal>,
    ) -> Result<()> {
        let bank = &self.bank;
        let pre = &cache.pre_activation;
        if !upstream.same_shape(pre) {
            return Err(Error::dim("upstream length", pre.len(), upstream.len()));
        }
        if grads.weights.len() != bank.weights().len() || grads.bias.len() != bank.num_filters() {
            return Err(Error::dim(
                "gradient buffer",
                bank.weights().len(),
                grads.weights.len(),
            ));
        }
        if let Some(g) = input_grad.as_deref() {
            if !g.same_shape(&cache.input) {
                return Err(Error::dim("input gradient", cache.input.len(), g.len()));
            }
        }
        let m = bank.filter_len();
        let channels = bank.in_channels();
        for f in 0..bank.num_filters() {
            let up = upstream.row(f);
            let pre_row = pre.row(f);
            for (i, (&u, &z)) in up.iter().zip(pre_row).enumerate() {
                if u == 0.0 {
                    continue;
                }
                let g = u * self.activation.derivative(z);
                if g == 0.0 {
                    continue;
                }
                grads.bias[f] += g;
                for c in 0..channels {
                    let window = &cache.input.row(c)[i..i + m];
                    let start = (f * channels + c) * m;
                    let gw = &mut grads.weights[start..start + m];
                    // tap t pairs with input offset m-1-t
                    for (t, w) in gw.iter_mut().enumerate() {
                        *w += g * window[m - 1 - t];
                    }
                    if let Some(gx) = input_grad.as_deref_mut() {
                        let taps = bank.taps(f, c);
                        let gx_row = &mut gx.row_mut(c)[i..i + m];
                        for (j, x) in gx_row.iter_mut().enumerate() {
                            *x += g * taps[m - 1 - j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Routes each pooled gradient back to the position that won the max.
pub fn maxpool_backward(pooled: &Pooled, upstream: &Signal) -> Result<Signal> {
    let mut out = Signal::zeros(pooled.output.channels(), pooled.input_len);
    maxpool_backward_into(pooled, upstream, &mut out)?;
    Ok(out)
}

pub(crate) fn maxpool_backward_into(
    pooled: &Pooled,
    upstream: &Signal,
    out: &mut Signal,
) -> Result<()> {
    if !upstream.same_shape(&pooled.output) {
        return Err(Error::dim(
            "pooled length",
            pooled.output.len(),
            upstream.len(),
        ));
    }
    let p = pooled.output.len();
    for c in 0..upstream.channels() {
        let up = upstream.row(c);
        let row = out.row_mut(c);
        for cell in 0..p {
            row[pooled.argmax[c * p + cell]] += up[cell];
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.data().len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim("bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Self {
        let mut weights = Matrix::zeros(outputs, inputs);
        glorot_uniform(rng, inputs, outputs, weights.data_mut());
        Self {
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let pre = numerics::dense(input, &self.weights, &self.bias)?;
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((
            out,
            DenseCache {
                input: input.to_vec(),
                pre_activation: pre,
            },
        ))
    }

    pub fn backward(&self, cache: &DenseCache, upstream: &[f64]) -> Result<(DenseGrads, Vec<f64>)> {
        let mut grads = DenseGrads::zeros_like(self);
        let mut input_grad = vec![0.0; self.inputs()];
        self.accumulate_backward(cache, upstream, &mut grads, &mut input_grad)?;
        Ok((grads, input_grad))
    }

    pub fn accumulate_backward(
        &self,
        cache: &DenseCache,
        upstream: &[f64],
        grads: &mut DenseGrads,
        input_grad: &mut [f64],
    ) -> Result<()> {
        if upstream.len() != self.outputs() {
            return Err(Error::dim("upstream", self.outputs(), upstream.len()));
        }
        if input_grad.len() != self.inputs() || cache.input.len() != self.inputs() {
            return Err(Error::dim("input", self.inputs(), cache.input.len()));
        }
        let cols = self.inputs();
        for (r, (&u, &z)) in upstream.iter().zip(&cache.pre_activation).enumerate() {
            let g = u * self.activation.derivative(z);
            if g == 0.0 {
                continue;
            }
            grads.bias[r] += g;
            let gw = &mut grads.weights[r * cols..(r + 1) * cols];
            for (w, &x) in gw.iter_mut().zip(&cache.input) {
                *w += g * x;
            }
            for (d, &w) in input_grad.iter_mut().zip(self.weights.row(r)) {
                *d += g * w;
            }
        }
        Ok(())
    }
}

/// Negative log-probability of `label` and its gradient with respect to the
/// logits, `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let probs = numerics::softmax(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = (log_norm - logits[label]).max(0.0);
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Magnitude below which gradient differences are judged absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Checks `analytic` against central differences of `loss` around `params`.
pub fn grad_check<F>(
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    tolerance: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: params.len(),
        tolerance,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let up = loss(&theta);
        theta[i] = orig - eps;
        let down = loss(&theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || i == 0 {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report
}
