//! Model file format.
//!
//! ```text
//! MCNN-MODEL v1
//! key=value            (one configuration entry per line)
//! ...
//! end
//! <name> <dim>...      (one header line per parameter array)
//! <little-endian f64 × product(dims)>
//! ...
//! ```
//!
//! Arrays appear in canonical order: `local.{i}.weight`, `local.{i}.bias`
//! for each branch, the same for every `full.{d}` layer, then
//! `hidden.weight`, `hidden.bias`, `output.weight`, `output.bias`.
//! Convolution weights are `[filters, channels, taps]`, dense weights
//! `[outputs, inputs]`, both row-major.

use std::io::{BufRead, Write};

use super::{assemble, McnnConfig, McnnModel};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::transform::BranchSpec;

pub const MODEL_MAGIC: &str = "MCNN-MODEL v1";

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_model<W: Write>(model: &McnnModel, mut out: W) -> std::io::Result<()> {
    let c = &model.config;
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "seed={}", model.seed)?;
    writeln!(out, "input_length={}", c.input_length)?;
    writeln!(out, "num_classes={}", c.num_classes)?;
    writeln!(out, "labels={}", model.class_labels.join(","))?;
    writeln!(out, "include_identity={}", c.branch_spec.include_identity)?;
    writeln!(
        out,
        "downsample_rates={}",
        join(&c.branch_spec.downsample_rates)
    )?;
    writeln!(out, "ma_windows={}", join(&c.branch_spec.ma_windows))?;
    writeln!(out, "local_filters={}", c.local_filters)?;
    writeln!(out, "full_filters={}", c.full_filters)?;
    writeln!(out, "full_depth={}", c.full_depth)?;
    // `{:?}` prints the shortest string that parses back to the same f64.
    writeln!(out, "filter_ratio={:?}", c.filter_ratio)?;
    writeln!(out, "pooling_factor={}", c.pooling_factor)?;
    writeln!(out, "dense_units={}", c.dense_units)?;
    writeln!(out, "slice_ratio={:?}", c.slice_ratio)?;
    writeln!(out, "activation={}", c.activation.name())?;
    writeln!(out, "end")?;
    for (name, dims, values) in model.named_params() {
        writeln!(
            out,
            "{name} {}",
            dims.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        )?;
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    out.flush()
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    let n = input
        .read_until(b'\n', &mut buf)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if n == 0 {
        return Err(Error::ModelFormat("unexpected end of file".into()));
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    String::from_utf8(buf).map_err(|_| Error::ModelFormat("header is not UTF-8".into()))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad value for {key}: {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

pub fn read_model<R: BufRead>(mut input: R) -> Result<McnnModel> {
    let magic = read_line(&mut input)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!("unrecognised header {magic:?}")));
    }
    let mut config = McnnConfig::new(0, 0);
    config.branch_spec = BranchSpec::identity_only();
    let mut seed = 0;
    let mut labels = None;
    loop {
        let line = read_line(&mut input)?;
        if line == "end" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("expected key=value, got {line:?}")))?;
        match key {
            "seed" => seed = parse(key, value)?,
            "input_length" => config.input_length = parse(key, value)?,
            "num_classes" => config.num_classes = parse(key, value)?,
            "labels" => labels = Some(value.split(',').map(str::to_owned).collect::<Vec<_>>()),
            "include_identity" => config.branch_spec.include_identity = parse(key, value)?,
            "downsample_rates" => config.branch_spec.downsample_rates = parse_list(key, value)?,
            "ma_windows" => config.branch_spec.ma_windows = parse_list(key, value)?,
            "local_filters" => config.local_filters = parse(key, value)?,
            "full_filters" => config.full_filters = parse(key, value)?,
            "full_depth" => config.full_depth = parse(key, value)?,
            "filter_ratio" => config.filter_ratio = parse(key, value)?,
            "pooling_factor" => config.pooling_factor = parse(key, value)?,
            "dense_units" => config.dense_units = parse(key, value)?,
            "slice_ratio" => config.slice_ratio = parse(key, value)?,
            "activation" => {
                config.activation = Activation::parse(value)
                    .ok_or_else(|| Error::ModelFormat(format!("unknown activation {value:?}")))?
            }
            other => return Err(Error::ModelFormat(format!("unknown key {other:?}"))),
        }
    }
    let mut model = assemble(&config, seed)
        .map_err(|e| Error::ModelFormat(format!("stored configuration is invalid: {e}")))?;
    if let Some(labels) = labels {
        if labels.len() != config.num_classes {
            return Err(Error::ModelFormat(format!(
                "{} labels for {} classes",
                labels.len(),
                config.num_classes
            )));
        }
        model.class_labels = labels;
    }
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let mut flat = Vec::with_capacity(model.num_params());
    for (name, dims) in expected {
        let header = read_line(&mut input)?;
        let mut parts = header.split(' ');
        let got = parts.next().unwrap_or_default();
        let got_dims: Vec<usize> = parts.map(|d| parse(&name, d)).collect::<Result<_>>()?;
        if got != name || got_dims != dims {
            return Err(Error::ModelFormat(format!(
                "expected array {name} {dims:?}, found {header:?}"
            )));
        }
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|e| Error::ModelFormat(format!("{name}: {e}")))?;
        flat.extend(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
        );
    }
    if let Some(index) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", rest.len())));
    }
    model.set_flat_params(&flat)?;
    Ok(model)
}
