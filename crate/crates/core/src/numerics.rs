//! Dense kernels shared by every layer: valid 1-D convolution, pooling to a
//! fixed number of outputs, affine maps and softmax.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels × len` array of reals stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    channels: usize,
    len: usize,
    values: Vec<f64>,
}

impl Signal {
    /// Builds a signal, rejecting empty shapes and non-finite entries.
    pub fn new(channels: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("signal needs at least one channel"));
        }
        if len == 0 {
            return Err(Error::invalid("signal needs at least one sample"));
        }
        if values.len() != channels * len {
            return Err(Error::dim("values", channels * len, values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            len,
            values,
        })
    }

    /// A single-channel signal holding `series`.
    pub fn from_series(series: &[f64]) -> Result<Self> {
        Self::new(1, series.len(), series.to_vec())
    }

    /// Stacks equal-length rows as channels.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * len);
        for row in rows {
            if row.len() != len {
                return Err(Error::dim("length", len, row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), len, values)
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            values: vec![0.0; channels * len],
        }
    }

    /// Wraps computed values without the finiteness scan.
    pub(crate) fn from_raw(channels: usize, len: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * len);
        Self {
            channels,
            len,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.len..(channel + 1) * self.len]
    }

    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.values[channel * self.len..(channel + 1) * self.len]
    }

    pub fn get(&self, channel: usize, index: usize) -> f64 {
        self.values[channel * self.len + index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `true` when both signals have the same shape.
    pub fn same_shape(&self, other: &Signal) -> bool {
        self.channels == other.channels && self.len == other.len
    }
}

/// `F` filters of `C` channels and length `m`, plus one bias per filter.
///
/// Weights are laid out `[filter][channel][tap]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    num_filters: usize,
    in_channels: usize,
    filter_len: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FilterBank {
    pub fn new(
        num_filters: usize,
        in_channels: usize,
        filter_len: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if num_filters == 0 || in_channels == 0 || filter_len == 0 {
            return Err(Error::invalid(format!(
                "filter bank shape {num_filters}x{in_channels}x{filter_len} has an empty axis"
            )));
        }
        let expected = num_filters * in_channels * filter_len;
        if weights.len() != expected {
            return Err(Error::dim("weights", expected, weights.len()));
        }
        if bias.len() != num_filters {
            return Err(Error::dim("bias", num_filters, bias.len()));
        }
        if let Some(index) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            num_filters,
            in_channels,
            filter_len,
            weights,
            bias,
        })
    }

    pub fn zeros(num_filters: usize, in_channels: usize, filter_len: usize) -> Self {
        Self {
            num_filters,
            in_channels,
            filter_len,
            weights: vec![0.0; num_filters * in_channels * filter_len],
            bias: vec![0.0; num_filters],
        }
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Taps of one filter on one input channel.
    pub fn taps(&self, filter: usize, channel: usize) -> &[f64] {
        let start = (filter * self.in_channels + channel) * self.filter_len;
        &self.weights[start..start + self.filter_len]
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }
}

/// Valid 1-D convolution of every filter against the input.
///
/// Output `[f, i] = bias_f + Σ_c Σ_j w[f, c, m-1-j] · x[c, i+j]`, i.e. the
/// filter is index-reversed (true convolution rather than correlation).
pub fn conv1d(input: &Signal, bank: &FilterBank) -> Result<Signal> {
    if input.channels() != bank.in_channels() {
        return Err(Error::dim("channels", bank.in_channels(), input.channels()));
    }
    let m = bank.filter_len();
    if input.len() < m {
        return Err(Error::Dimension {
            axis: "length",
            expected: m,
            actual: input.len(),
        });
    }
    let out_len = input.len() - m + 1;
    let mut out = vec![0.0; bank.num_filters() * out_len];
    for (f, row) in out.chunks_exact_mut(out_len).enumerate() {
        row.fill(bank.bias()[f]);
        for c in 0..input.channels() {
            let x = input.row(c);
            let taps = bank.taps(f, c);
            for j in 0..m {
                let w = taps[m - 1 - j];
                for (o, &xv) in row.iter_mut().zip(&x[j..j + out_len]) {
                    *o += w * xv;
                }
            }
        }
    }
    Ok(Signal::from_raw(bank.num_filters(), out_len, out))
}

/// Half-open window `[start, end)` of pooling cell `cell` when `n` inputs are
/// pooled down to `p` outputs.
pub fn pool_window(n: usize, p: usize, cell: usize) -> (usize, usize) {
    (cell * n / p, (cell + 1) * n / p)
}

/// Result of [`maxpool_by_factor`]: pooled values and, per output cell, the
/// position inside the channel that produced the maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub output: Signal,
    pub argmax: Vec<usize>,
    pub input_len: usize,
}

/// Max pooling that always yields exactly `p` outputs per channel.
///
/// Windows tile the input with floor boundaries, so `p` need not divide the
/// input length. Ties go to the lowest index.
pub fn maxpool_by_factor(input: &Signal, p: usize) -> Result<Pooled> {
    let n = input.len();
    if p == 0 || p > n {
        return Err(Error::invalid(format!(
            "pooling factor {p} outside 1..={n}"
        )));
    }
    let mut values = Vec::with_capacity(input.channels() * p);
    let mut argmax = Vec::with_capacity(input.channels() * p);
    for c in 0..input.channels() {
        let row = input.row(c);
        for cell in 0..p {
            let (start, end) = pool_window(n, p, cell);
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            values.push(row[best]);
            argmax.push(best);
        }
    }
    Ok(Pooled {
        output: Signal::from_raw(input.channels(), p, values),
        argmax,
        input_len: n,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Row-major `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Affine map `W·x + b`.
pub fn dense(input: &[f64], weights: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    if input.len() != weights.cols() {
        return Err(Error::dim("input", weights.cols(), input.len()));
    }
    if bias.len() != weights.rows() {
        return Err(Error::dim("bias", weights.rows(), bias.len()));
    }
    Ok((0..weights.rows())
        .map(|r| dot(weights.row(r), input) + bias[r])
        .collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
