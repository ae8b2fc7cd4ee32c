//! UCR-format ingestion, label remapping, z-normalisation, stratified
//! splitting and slice augmentation.
//!
//! A UCR file holds one series per line: the class label, then the values,
//! separated by commas. Lines without commas are split on whitespace.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mcnn::slice_len;

/// Datasets that are z-normalised when loaded through the CLI's `auto` mode.
pub const ZNORM_DATASETS: [&str; 5] = ["Beef", "Coffee", "Fish", "OSULeaf", "OliveOil"];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    /// Dense class index.
    pub label: usize,
    pub values: Vec<f64>,
    /// Row of the source file (0-based, data lines only) this came from.
    pub provenance: usize,
}

/// Bijection between original label text and dense class indices, ordered by
/// numeric label value (text order for non-numeric labels).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelMap {
    labels: Vec<String>,
}

fn label_key(text: &str) -> (u8, f64, String) {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => (0, v, String::new()),
        _ => (1, 0.0, text.to_owned()),
    }
}

impl LabelMap {
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let mut out: Vec<String> = Vec::new();
        for l in labels {
            let key = label_key(l);
            if !out.iter().any(|e| label_key(e) == key) {
                out.push(l.to_owned());
            }
        }
        out.sort_by(|a, b| {
            let (ka, kb) = (label_key(a), label_key(b));
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
        });
        Self { labels: out }
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        let key = label_key(text);
        self.labels.iter().position(|l| label_key(l) == key)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: Option<String>,
    pub items: Vec<LabeledSeries>,
    pub labels: LabelMap,
}

/// One parsed line of a UCR file.
#[derive(Clone, Debug, PartialEq)]
pub struct UcrRow {
    pub label: String,
    pub values: Vec<f64>,
    /// 1-based line number in the file.
    pub line: usize,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses UCR text. `rectangular` rejects rows whose length differs from the
/// first row's.
pub fn parse_ucr(text: &str, path: &Path, rectangular: bool) -> Result<Vec<UcrRow>> {
    let mut rows: Vec<UcrRow> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains(',') {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let (label, rest) = fields.split_first().expect("nonempty line");
        if label.is_empty() {
            return Err(parse_error(path, line, "missing label"));
        }
        let mut values = Vec::with_capacity(rest.len());
        for (col, field) in rest.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_error(
                    path,
                    line,
                    format!("field {} is not a number: {field:?}", col + 2),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    format!("field {} is not finite", col + 2),
                ));
            }
            values.push(v);
        }
        if values.len() < 2 {
            return Err(parse_error(
                path,
                line,
                "a series needs at least two values",
            ));
        }
        if rectangular {
            if let Some(first) = rows.first() {
                if first.values.len() != values.len() {
                    return Err(parse_error(
                        path,
                        line,
                        format!(
                            "ragged row: {} values, expected {}",
                            values.len(),
                            first.values.len()
                        ),
                    ));
                }
            }
        }
        rows.push(UcrRow {
            label: (*label).to_owned(),
            values,
            line,
        });
    }
    if rows.is_empty() {
        return Err(parse_error(path, 0, "no data lines"));
    }
    Ok(rows)
}

pub fn read_ucr_rows(path: &Path, rectangular: bool) -> Result<Vec<UcrRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_ucr(&text, path, rectangular)
}

/// Dataset name from a UCR file path: the file stem with any `_TRAIN` /
/// `_TEST` suffix removed.
pub fn dataset_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let name = stem
        .strip_suffix("_TRAIN")
        .or_else(|| stem.strip_suffix("_TEST"))
        .unwrap_or(stem);
    Some(name.to_owned())
}

/// Whether `name` is one of [`ZNORM_DATASETS`], ignoring case.
pub fn is_znorm_dataset(name: &str) -> bool {
    ZNORM_DATASETS.iter().any(|d| d.eq_ignore_ascii_case(name))
}

impl Dataset {
    /// Builds a dataset whose label map is derived from the rows.
    pub fn from_rows(rows: Vec<UcrRow>, name: Option<String>) -> Result<Self> {
        let labels = LabelMap::from_labels(rows.iter().map(|r| r.label.as_str()));
        Self::from_rows_with_labels(rows, name, &labels)
    }

    /// Builds a dataset against an existing label map, e.g. a test split
    /// aligned with its training split.
    pub fn from_rows_with_labels(
        rows: Vec<UcrRow>,
        name: Option<String>,
        labels: &LabelMap,
    ) -> Result<Self> {
        let items = rows
            .into_iter()
            .enumerate()
            .map(|(provenance, row)| {
                let label = labels.index_of(&row.label).ok_or_else(|| {
                    Error::Data(format!("line {}: unknown label {:?}", row.line, row.label))
                })?;
                Ok(LabeledSeries {
                    label,
                    values: row.values,
                    provenance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name,
            items,
            labels: labels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Common series length, or `None` when lengths differ.
    pub fn series_length(&self) -> Option<usize> {
        let n = self.items.first()?.values.len();
        self.items.iter().all(|s| s.values.len() == n).then_some(n)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    /// A copy with every series z-normalised.
    pub fn z_normalized(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.items {
            s.values = z_normalize(&s.values);
        }
        out
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Loads a rectangular UCR file.
pub fn load_ucr(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    Dataset::from_rows(read_ucr_rows(path, true)?, dataset_name(path))
}

/// Loads a rectangular UCR file using another split's label map.
pub fn load_ucr_with_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Dataset> {
    let path = path.as_ref();
    Dataset::from_rows_with_labels(read_ucr_rows(path, true)?, dataset_name(path), labels)
}

/// Writes a dataset back out in UCR comma format with round-trip exact
/// values.
pub fn write_ucr<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for s in &dataset.items {
        write!(out, "{}", dataset.labels.label(s.label))?;
        for v in &s.values {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Standardises to zero mean and unit population standard deviation;
/// constant series map to zeros.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - mean) / sd).collect()
}

/// Splits each class independently: `max(1, round(fraction · count))`
/// members go to the second part (none when `fraction` is 0). Both parts keep
/// the original item order.
pub fn stratified_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "split fraction {fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_a = Vec::new();
    let mut part_b = Vec::new();
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.items[i].label == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if fraction == 0.0 {
            part_a.extend(members);
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {} has a single member and cannot be split",
                dataset.labels.label(class)
            )));
        }
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).round() as usize).max(1);
        part_b.extend_from_slice(&members[..take]);
        part_a.extend_from_slice(&members[take..]);
    }
    part_a.sort_unstable();
    part_b.sort_unstable();
    Ok((dataset.subset(&part_a), dataset.subset(&part_b)))
}

/// Replaces every series by all of its length-`s` windows, where
/// `s = max(2, round(slice_ratio · n))`. Slices keep the parent's label and
/// provenance.
pub fn augment_by_slicing(dataset: &Dataset, slice_ratio: f64) -> Result<Dataset> {
    let mut items = Vec::new();
    for s in &dataset.items {
        let n = s.values.len();
        if !(slice_ratio > 0.0 && slice_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "slice ratio {slice_ratio} outside (0, 1]"
            )));
        }
        let len = slice_len(n, slice_ratio);
        if len > n {
            return Err(Error::invalid(format!(
                "slice length {len} exceeds series length {n}"
            )));
        }
        for window in s.values.windows(len) {
            items.push(LabeledSeries {
                label: s.label,
                values: window.to_vec(),
                provenance: s.provenance,
            });
        }
    }
    Ok(Dataset {
        name: dataset.name.clone(),
        items,
        labels: dataset.labels.clone(),
    })
}

/// Train and test splits sharing one label map.
pub fn load_ucr_pair(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
) -> Result<(Dataset, Dataset)> {
    let train = load_ucr(train)?;
    let test = load_ucr_with_labels(test, &train.labels)?;
    Ok((train, test))
}

/// `<root>/<name>/<name>_TRAIN` and `_TEST`, the archive's directory layout.
pub fn ucr_paths(root: impl AsRef<Path>, name: &str) -> (PathBuf, PathBuf) {
    let dir = root.as_ref().join(name);
    (
        dir.join(format!("{name}_TRAIN")),
        dir.join(format!("{name}_TEST")),
    )
}
