//! Branch transforms applied to a raw series before any learning happens:
//! down-sampling, moving-average smoothing and window slicing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Signal;

/// Which transformed views of a series feed the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub include_identity: bool,
    /// Down-sampling rates, strictly increasing, each at least 2.
    pub downsample_rates: Vec<usize>,
    /// Moving-average windows, strictly increasing, each at least 2.
    pub ma_windows: Vec<usize>,
}

impl Default for BranchSpec {
    fn default() -> Self {
        Self {
            include_identity: true,
            downsample_rates: vec![2, 3],
            ma_windows: vec![3, 5],
        }
    }
}

/// Kind of a branch, in the order branches are laid out in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Identity,
    Scale(usize),
    Frequency,
}

impl std::fmt::Display for BranchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchKind::Identity => write!(f, "identity branch"),
            BranchKind::Scale(k) => write!(f, "scale branch (k={k})"),
            BranchKind::Frequency => write!(f, "frequency branch"),
        }
    }
}

impl BranchSpec {
    /// Raw series only.
    pub fn identity_only() -> Self {
        Self {
            include_identity: true,
            downsample_rates: Vec::new(),
            ma_windows: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_increasing("downsample rate", &self.downsample_rates)?;
        check_increasing("moving-average window", &self.ma_windows)?;
        if self.num_branches() == 0 {
            return Err(Error::invalid("branch spec selects no branch"));
        }
        Ok(())
    }

    pub fn num_branches(&self) -> usize {
        usize::from(self.include_identity)
            + self.downsample_rates.len()
            + usize::from(!self.ma_windows.is_empty())
    }

    pub fn kinds(&self) -> Vec<BranchKind> {
        let mut kinds = Vec::with_capacity(self.num_branches());
        if self.include_identity {
            kinds.push(BranchKind::Identity);
        }
        kinds.extend(self.downsample_rates.iter().map(|&k| BranchKind::Scale(k)));
        if !self.ma_windows.is_empty() {
            kinds.push(BranchKind::Frequency);
        }
        kinds
    }

    /// `(channels, length)` of every branch for a series of length `n`, in
    /// branch order. Errors name the first branch that cannot be built.
    pub fn branch_shapes(&self, n: usize) -> Result<Vec<(BranchKind, usize, usize)>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("empty series"));
        }
        let mut shapes = Vec::new();
        for kind in self.kinds() {
            let shape = match kind {
                BranchKind::Identity => (1, n),
                BranchKind::Scale(k) => (1, downsampled_len(n, k)),
                BranchKind::Frequency => {
                    let widest = *self.ma_windows.last().expect("nonempty");
                    if widest > n {
                        return Err(Error::geometry(
                            kind.to_string(),
                            format!("moving-average window {widest} exceeds series length {n}"),
                        ));
                    }
                    (self.ma_windows.len(), n - widest + 1)
                }
            };
            shapes.push((kind, shape.0, shape.1));
        }
        Ok(shapes)
    }
}

fn check_increasing(what: &str, values: &[usize]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if v < 2 {
            return Err(Error::invalid(format!("{what} {v} must be at least 2")));
        }
        if i > 0 && values[i - 1] >= v {
            return Err(Error::invalid(format!(
                "{what}s must be strictly increasing"
            )));
        }
    }
    Ok(())
}

/// Number of points kept when every `k`-th point of `n` is retained.
pub fn downsampled_len(n: usize, k: usize) -> usize {
    (n - 1) / k + 1
}

/// Keeps every `k`-th point, starting with the first.
pub fn downsample(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::invalid("down-sampling rate must be at least 1"));
    }
    if series.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    Ok(series.iter().step_by(k).copied().collect())
}

/// Means of every run of `window` consecutive values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 || window > series.len() {
        return Err(Error::invalid(format!(
            "moving-average window {window} outside 1..={}",
            series.len()
        )));
    }
    let scale = window as f64;
    Ok(series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / scale)
        .collect())
}

/// All contiguous length-`len` slices, in order of their start offset.
pub fn window_slices(series: &[f64], len: usize) -> Result<Vec<&[f64]>> {
    if len < 1 || len > series.len() {
        return Err(Error::invalid(format!(
            "slice length {len} outside 1..={}",
            series.len()
        )));
    }
    Ok(series.windows(len).collect())
}

/// The transformed views of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInputs {
    pub identity: Option<Signal>,
    pub scales: Vec<Signal>,
    pub frequency: Option<Signal>,
}

impl BranchInputs {
    /// Branch signals in model order: identity, scales by rate, frequency.
    pub fn into_ordered(self) -> Vec<Signal> {
        let mut out = Vec::with_capacity(self.scales.len() + 2);
        out.extend(self.identity);
        out.extend(self.scales);
        out.extend(self.frequency);
        out
    }
}

/// Builds every branch selected by `spec`.
///
/// Smoothed channels are left-aligned and truncated to the length of the
/// widest window so they stack into one multi-channel signal.
pub fn build_branches(series: &[f64], spec: &BranchSpec) -> Result<BranchInputs> {
    spec.branch_shapes(series.len())?;
    let identity = if spec.include_identity {
        Some(Signal::from_series(series)?)
    } else {
        None
    };
    let scales = spec
        .downsample_rates
        .iter()
        .map(|&k| Signal::from_series(&downsample(series, k)?))
        .collect::<Result<Vec<_>>>()?;
    let frequency = match spec.ma_windows.last() {
        None => None,
        Some(&widest) => {
            let common = series.len() - widest + 1;
            let mut rows = Vec::with_capacity(spec.ma_windows.len());
            for &w in &spec.ma_windows {
                let mut smoothed = moving_average(series, w)?;
                smoothed.truncate(common);
                rows.push(smoothed);
            }
            Some(Signal::from_rows(&rows)?)
        }
    };
    Ok(BranchInputs {
        identity,
        scales,
        frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn downsample_examples() {
        let s = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0];
        assert_eq!(downsample(&s, 3).unwrap(), vec![10.0, 40.0, 70.0]);
        assert_eq!(downsample(&s, 1).unwrap(), s.to_vec());
        assert_eq!(downsample(&[0.0; 10], 3).unwrap().len(), 4);
        assert_eq!(downsampled_len(10, 3), 4);
        assert!(downsample(&s, 0).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(
            moving_average(&[2.0, 4.0, 6.0, 8.0], 2).unwrap(),
            vec![3.0, 5.0, 7.0]
        );
        assert_eq!(moving_average(&[1.0, 5.0], 1).unwrap(), vec![1.0, 5.0]);
        assert_eq!(moving_average(&[1.0, 2.0, 6.0], 3).unwrap(), vec![3.0]);
        assert!(moving_average(&[1.0, 2.0], 3).is_err());
        assert!(moving_average(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn slicing_examples() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let slices = window_slices(&s, 3).unwrap();
        assert_eq!(
            slices,
            vec![&[1.0, 2.0, 3.0][..], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]
        );
        assert_eq!(window_slices(&s, 5).unwrap(), vec![&s[..]]);
        assert_eq!(window_slices(&[0.0; 100], 90).unwrap().len(), 11);
        assert!(window_slices(&s, 6).is_err());
    }

    #[test]
    fn slice_counts_exhaustive() {
        for n in 1..=64usize {
            let s: Vec<f64> = (0..n).map(|i| i as f64).collect();
            for len in 1..=n {
                let slices = window_slices(&s, len).unwrap();
                assert_eq!(slices.len(), n - len + 1);
                for (j, slice) in slices.iter().enumerate() {
                    assert_eq!(*slice, &s[j..j + len]);
                }
            }
        }
    }

    #[test]
    fn identity_only_branches() {
        let b = build_branches(&[1.0, 2.0, 3.0], &BranchSpec::identity_only()).unwrap();
        assert_eq!(b.identity.unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(b.scales.is_empty() && b.frequency.is_none());
    }

    #[test]
    fn mixed_branch_lengths() {
        let spec = BranchSpec {
            include_identity: true,
            downsample_rates: vec![2],
            ma_windows: vec![2, 3],
        };
        let series: Vec<f64> = (1..=8).map(f64::from).collect();
        let b = build_branches(&series, &spec).unwrap();
        assert_eq!(b.scales[0].len(), 4);
        let freq = b.frequency.unwrap();
        assert_eq!((freq.channels(), freq.len()), (2, 6));
        assert_eq!(freq.row(0), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
        assert_eq!(freq.row(1), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn constant_series_stays_constant() {
        let b = build_branches(&[2.5; 12], &BranchSpec::default()).unwrap();
        for signal in b.into_ordered() {
            assert!(signal.values().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        }
    }

    #[test]
    fn spec_validation() {
        let bad = BranchSpec {
            include_identity: true,
            downsample_rates: vec![3, 2],
            ma_windows: vec![],
        };
        assert!(bad.validate().is_err());
        let bad = BranchSpec {
            include_identity: false,
            downsample_rates: vec![],
            ma_windows: vec![1],
        };
        assert!(bad.validate().is_err());
        let empty = BranchSpec {
            include_identity: false,
            downsample_rates: vec![],
            ma_windows: vec![],
        };
        assert!(empty.validate().is_err());
        let wide = BranchSpec {
            include_identity: true,
            downsample_rates: vec![],
            ma_windows: vec![9],
        };
        assert!(matches!(
            build_branches(&[0.0; 4], &wide),
            Err(Error::Geometry { .. })
        ));
    }

    proptest! {
        #[test]
        fn unit_transforms_are_identity(series in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            prop_assert_eq!(downsample(&series, 1).unwrap(), series.clone());
            prop_assert_eq!(moving_average(&series, 1).unwrap(), series);
        }

        #[test]
        fn moving_average_commutes_with_shift(
            series in proptest::collection::vec(-10.0f64..10.0, 2..40),
            shift in -100.0f64..100.0,
            window in 1usize..6,
        ) {
            prop_assume!(window <= series.len());
            let shifted: Vec<f64> = series.iter().map(|v| v + shift).collect();
            let a = moving_average(&shifted, window).unwrap();
            let b = moving_average(&series, window).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - (y + shift)).abs() < 1e-9);
            }
        }

        #[test]
        fn frequency_channels_share_length(
            n in 8usize..80,
            w1 in 2usize..4,
            extra in 1usize..4,
        ) {
            let spec = BranchSpec { include_identity: false, downsample_rates: vec![], ma_windows: vec![w1, w1 + extra] };
            let series: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let freq = build_branches(&series, &spec).unwrap().frequency.unwrap();
            prop_assert_eq!(freq.len(), n - (w1 + extra) + 1);
            prop_assert_eq!(freq.channels(), 2);
        }
    }
}
