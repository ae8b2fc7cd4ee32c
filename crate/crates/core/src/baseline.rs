//! Nearest-neighbour reference classifiers and the sliding Euclidean
//! distance written as a convolution.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{self, FilterBank, Signal};

/// Sakoe-Chiba window as a fraction of the series length; `None` leaves
/// warping unconstrained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DtwParams {
    pub window: Option<f64>,
}

impl DtwParams {
    pub fn unconstrained() -> Self {
        Self { window: None }
    }

    pub fn with_window(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "warping window {fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            window: Some(fraction),
        })
    }

    /// Band radius in samples for series of length `n`.
    pub fn radius(&self, n: usize) -> Option<usize> {
        self.window
            .map(|w| (w * n as f64 - 1e-9).ceil().max(0.0) as usize)
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Accumulated squared-cost DTW with steps {diagonal, up, left}.
///
/// A band narrower than the length difference is widened to it, so a path
/// always exists.
pub fn dtw_distance(a: &[f64], b: &[f64], params: &DtwParams) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DTW of an empty series"));
    }
    let (n, m) = (a.len(), b.len());
    let radius = params
        .radius(n.max(m))
        .map_or(usize::MAX, |r| r.max(n.abs_diff(m)));
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        curr.fill(f64::INFINITY);
        let lo = i.saturating_sub(radius).max(1);
        let hi = i.saturating_add(radius).min(m);
        let ai = a[i - 1];
        for j in lo..=hi {
            let d = ai - b[j - 1];
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = d * d + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}

fn check_lengths(train: &Dataset, test: &Dataset) -> Result<usize> {
    let n = train
        .series_length()
        .ok_or_else(|| Error::Data("training series have differing lengths".into()))?;
    for s in &test.items {
        if s.values.len() != n {
            return Err(Error::dim("series length", n, s.values.len()));
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    Ok(n)
}

/// Index of the nearest training series; ties go to the lowest index.
fn nearest<F: FnMut(&[f64], &[f64]) -> f64>(
    train: &Dataset,
    query: &[f64],
    skip: Option<usize>,
    mut dist: F,
) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, s) in train.items.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d = dist(query, &s.values);
        if d < best.0 || best.1 == usize::MAX {
            best = (d, i);
        }
    }
    best.1
}

fn error_rate<F: FnMut(&[f64], &[f64]) -> f64>(
    train: &Dataset,
    test: &Dataset,
    mut dist: F,
) -> f64 {
    let wrong = test
        .items
        .iter()
        .filter(|q| train.items[nearest(train, &q.values, None, &mut dist)].label != q.label)
        .count();
    wrong as f64 / test.len() as f64
}

/// 1-NN test error under squared Euclidean distance.
pub fn euclidean_1nn(train: &Dataset, test: &Dataset) -> Result<f64> {
    check_lengths(train, test)?;
    Ok(error_rate(train, test, squared_euclidean))
}

/// 1-NN test error under DTW.
pub fn dtw_1nn(train: &Dataset, test: &Dataset, params: &DtwParams) -> Result<f64> {
    check_lengths(train, test)?;
    Ok(error_rate(train, test, |a, b| {
        dtw_distance(a, b, params).expect("nonempty series")
    }))
}

/// Default candidate windows: 0% to 10% in 1% steps.
pub fn default_cv_windows() -> Vec<f64> {
    (0..=10).map(|w| w as f64 / 100.0).collect()
}

/// Per-candidate leave-one-out outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowScore {
    pub window: f64,
    pub correct: usize,
}

/// Picks the warping window with the best leave-one-out 1-NN accuracy on the
/// training set; ties go to the smallest window.
pub fn dtw_cv_window(train: &Dataset, candidates: &[f64]) -> Result<(f64, Vec<WindowScore>)> {
    if train.len() < 2 {
        return Err(Error::Data(
            "leave-one-out needs at least two series".into(),
        ));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate windows"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(sorted.len());
    for &window in &sorted {
        let params = DtwParams::with_window(window)?;
        let correct = (0..train.len())
            .filter(|&i| {
                let q = &train.items[i];
                let nn = nearest(train, &q.values, Some(i), |a, b| {
                    dtw_distance(a, b, &params).expect("nonempty series")
                });
                train.items[nn].label == q.label
            })
            .count();
        scores.push(WindowScore { window, correct });
    }
    let best = scores.iter().fold(
        &scores[0],
        |best, s| if s.correct > best.correct { s } else { best },
    );
    Ok((best.window, scores))
}

/// Sliding squared distance between `series` windows and the reversed
/// filter, via `Σ t² + Σ f² − 2 (T · f)` with `T · f` the convolution.
pub fn euclidean_via_conv(series: &[f64], filter: &[f64]) -> Result<Vec<f64>> {
    let m = filter.len();
    if m == 0 || m > series.len() {
        return Err(Error::invalid(format!(
            "filter length {m} outside 1..={}",
            series.len()
        )));
    }
    let bank = FilterBank::new(1, 1, m, filter.to_vec(), vec![0.0])?;
    let cross = numerics::conv1d(&Signal::from_series(series)?, &bank)?;
    let filter_norm: f64 = filter.iter().map(|f| f * f).sum();
    let mut window_norm: f64 = series[..m].iter().map(|t| t * t).sum();
    let mut out = Vec::with_capacity(series.len() - m + 1);
    for (i, &c) in cross.values().iter().enumerate() {
        if i > 0 {
            window_norm += series[i + m - 1].powi(2) - series[i - 1].powi(2);
        }
        out.push(window_norm + filter_norm - 2.0 * c);
    }
    Ok(out)
}
