//! Mini-batch SGD with momentum, validation-based early stopping,
//! vote-based evaluation and grid search.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_by_slicing, stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::mcnn::{assemble, Geometry, McnnConfig, McnnModel, ModelGrads, Vote};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Share of each class held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "batch size and epoch limit must be positive",
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        Self {
            velocity: lengths.into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(model: &McnnModel) -> Self {
        Self::new(model.named_params().into_iter().map(|(_, _, v)| v.len()))
    }
}

/// `v ← μ·v − lr·g; θ ← θ + v`, elementwise over every array.
pub fn sgd_momentum_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut SgdState,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::dim("parameter arrays", params.len(), grads.len()));
    }
    for ((theta, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if theta.len() != g.len() || theta.len() != v.len() {
            return Err(Error::dim("parameter length", theta.len(), g.len()));
        }
        for ((t, &gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = momentum * *vi - learning_rate * gi;
            *t += *vi;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean slice loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Share of training slices misclassified during the epoch.
    pub train_error: f64,
    /// Vote-based error on the held-out series after the epoch.
    pub val_error: f64,
    /// Mean cross-entropy over the held-out series' slices.
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_error: f64,
    /// Validation loss of the selected epoch.
    pub best_val_loss: f64,
    pub test_error: Option<f64>,
    /// Source rows of the series used for training and validation.
    pub train_series: Vec<usize>,
    pub validation_series: Vec<usize>,
    pub train_slices: usize,
}

impl FitReport {
    /// Equality ignoring wall-clock timings.
    pub fn same_trajectory(&self, other: &FitReport) -> bool {
        let strip = |r: &FitReport| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            r
        };
        strip(self) == strip(other)
    }

    /// One comma-separated record per epoch, with a header line.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,train_err,val_err,val_loss,seconds")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                e.epoch, e.train_loss, e.train_error, e.val_error, e.val_loss, e.seconds
            )?;
        }
        out.flush()
    }
}

/// Vote-based misclassification rate.
pub fn evaluate(model: &McnnModel, data: &Dataset) -> Result<f64> {
    Ok(evaluate_with_loss(model, data)?.0)
}

/// Vote-based misclassification rate together with the mean slice
/// cross-entropy, both from a single pass.
pub fn evaluate_with_loss(model: &McnnModel, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let mut wrong = 0;
    let (mut loss, mut slices) = (0.0, 0usize);
    for s in &data.items {
        let probs = model.slice_probabilities(&s.values)?;
        if Vote::from_probabilities(model.num_classes(), &probs).class != s.label {
            wrong += 1;
        }
        loss -= probs
            .iter()
            .map(|p| p[s.label].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>();
        slices += probs.len();
    }
    Ok((wrong as f64 / data.len() as f64, loss / slices as f64))
}

pub fn fit(
    config: &McnnConfig,
    train: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(McnnModel, FitReport)> {
    fit_with_test(config, train, None, tcfg)
}

/// Trains on `train` and, when given, reports the selected model's error on
/// `test`.
pub fn fit_with_test(
    config: &McnnConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    tcfg: &TrainConfig,
) -> Result<(McnnModel, FitReport)> {
    tcfg.validate()?;
    let n = train
        .series_length()
        .ok_or_else(|| Error::Data("training series must share one length".into()))?;
    if n != config.input_length {
        return Err(Error::dim("input length", config.input_length, n));
    }
    if train.num_classes() != config.num_classes {
        return Err(Error::dim(
            "classes",
            config.num_classes,
            train.num_classes(),
        ));
    }
    if train.num_classes() < 2 {
        return Err(Error::Data("training needs at least two classes".into()));
    }
    if let Some(class) = train.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class {} has no training series",
            train.labels.label(class)
        )));
    }

    let mut model = assemble(config, tcfg.seed)?;
    model.class_labels = train.labels.labels().to_vec();

    let (fit_part, val_part) =
        stratified_split(train, tcfg.val_fraction, tcfg.seed.wrapping_add(1))?;
    if let Some(class) = fit_part.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class {} has no series left after the validation split",
            train.labels.label(class)
        )));
    }
    let slices = augment_by_slicing(&fit_part, config.slice_ratio)?;
    debug_assert!(slices
        .items
        .iter()
        .all(|s| val_part.items.iter().all(|v| v.provenance != s.provenance)));

    let mut report = FitReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_error: f64::INFINITY,
        best_val_loss: f64::INFINITY,
        test_error: None,
        train_series: fit_part.items.iter().map(|s| s.provenance).collect(),
        validation_series: val_part.items.iter().map(|s| s.provenance).collect(),
        train_slices: slices.len(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(2));
    let mut state = SgdState::for_model(&model);
    let mut grads = ModelGrads::zeros_like(&model);
    let mut order: Vec<usize> = (0..slices.len()).collect();
    let mut best = model.clone();
    let mut stale = 0;

    for epoch in 1..=tcfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            grads.clear();
            for &i in batch {
                let s = &slices.items[i];
                let (loss, predicted) = model.loss_and_grad(&s.values, s.label, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                loss_sum += loss;
                wrong += usize::from(predicted != s.label);
            }
            grads.scale(1.0 / batch.len() as f64);
            let g = grads.slices();
            sgd_momentum_step(
                &mut model.param_slices_mut(),
                &g,
                &mut state,
                tcfg.learning_rate,
                tcfg.momentum,
            )?;
        }
        let train_loss = loss_sum / slices.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let (val_error, val_loss) = evaluate_with_loss(&model, &val_part).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteLoss { epoch },
            other => other,
        })?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_error: wrong as f64 / slices.len() as f64,
            val_error,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: loss {train_loss:.5} val_err {val_error:.4}");
        if val_error <= report.best_val_error {
            if val_error < report.best_val_error {
                stale = 0;
            } else {
                stale += 1;
            }
            report.best_val_error = val_error;
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.clone();
        } else {
            stale += 1;
        }
        if stale >= tcfg.patience {
            break;
        }
    }
    if let Some(test) = test {
        report.test_error = Some(evaluate(&best, test)?);
    }
    Ok((best, report))
}

/// Hyperparameter grid, iterated ratios-major, then factors, then batch sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub filter_ratios: Vec<f64>,
    pub pooling_factors: Vec<usize>,
    pub batch_sizes: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            filter_ratios: vec![0.05, 0.1, 0.2],
            pooling_factors: vec![2, 3, 5],
            batch_sizes: vec![16, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GridOutcome {
    Trained {
        best_val_error: f64,
        best_val_loss: f64,
        best_epoch: usize,
        epochs_run: usize,
        test_error: Option<f64>,
    },
    Skipped {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub filter_ratio: f64,
    pub pooling_factor: usize,
    pub batch_size: usize,
    pub outcome: GridOutcome,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// Index of the winner in `leaderboard`.
    pub best_index: usize,
    pub config: McnnConfig,
    pub train_config: TrainConfig,
    pub model: McnnModel,
    pub report: FitReport,
    pub leaderboard: Vec<GridEntry>,
}

pub fn grid_search(
    base: &McnnConfig,
    grid: &GridSpec,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<GridResult> {
    grid_search_with_test(base, grid, data, None, tcfg)
}

/// Trains one model per grid point with identical seeds and keeps the one
/// with the lowest validation error. Equal errors are separated by
/// validation loss, and exact ties keep the earlier point. Points that
/// resolve to the same network and batch size are trained once.
pub fn grid_search_with_test(
    base: &McnnConfig,
    grid: &GridSpec,
    data: &Dataset,
    test: Option<&Dataset>,
    tcfg: &TrainConfig,
) -> Result<GridResult> {
    if grid.filter_ratios.is_empty()
        || grid.pooling_factors.is_empty()
        || grid.batch_sizes.is_empty()
    {
        return Err(Error::invalid("every grid axis needs at least one value"));
    }
    let mut leaderboard: Vec<GridEntry> = Vec::new();
    let mut trained: Vec<(Geometry, usize, usize)> = Vec::new();
    let mut best: Option<(usize, McnnConfig, TrainConfig, McnnModel, FitReport)> = None;
    for &filter_ratio in &grid.filter_ratios {
        for &pooling_factor in &grid.pooling_factors {
            for &batch_size in &grid.batch_sizes {
                let mut config = base.clone();
                config.filter_ratio = filter_ratio;
                config.pooling_factor = pooling_factor;
                let mut point_cfg = tcfg.clone();
                point_cfg.batch_size = batch_size;
                let entry = |outcome| GridEntry {
                    filter_ratio,
                    pooling_factor,
                    batch_size,
                    outcome,
                };
                let geometry = match config.geometry() {
                    Ok(g) => g,
                    Err(e) => {
                        log::warn!("skipping ratio {filter_ratio} factor {pooling_factor}: {e}");
                        leaderboard.push(entry(GridOutcome::Skipped {
                            reason: e.to_string(),
                        }));
                        continue;
                    }
                };
                if let Some(&(_, _, earlier)) = trained
                    .iter()
                    .find(|(g, b, _)| *g == geometry && *b == batch_size)
                {
                    let outcome = leaderboard[earlier].outcome.clone();
                    leaderboard.push(entry(outcome));
                    continue;
                }
                let (model, report) = fit_with_test(&config, data, test, &point_cfg)?;
                trained.push((geometry, batch_size, leaderboard.len()));
                leaderboard.push(entry(GridOutcome::Trained {
                    best_val_error: report.best_val_error,
                    best_val_loss: report.best_val_loss,
                    best_epoch: report.best_epoch,
                    epochs_run: report.epochs.len(),
                    test_error: report.test_error,
                }));
                let improves = best.as_ref().is_none_or(|b| {
                    let (err, loss) = (b.4.best_val_error, b.4.best_val_loss);
                    report.best_val_error < err
                        || (report.best_val_error == err && report.best_val_loss < loss)
                });
                if improves {
                    best = Some((leaderboard.len() - 1, config, point_cfg, model, report));
                }
            }
        }
    }
    let (best_index, config, train_config, model, report) =
        best.ok_or_else(|| Error::geometry("grid", "every grid point is infeasible"))?;
    Ok(GridResult {
        best_index,
        config,
        train_config,
        model,
        report,
        leaderboard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_ucr, Dataset};
    use crate::nn::Activation;
    use crate::transform::BranchSpec;
    use std::path::Path;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut theta = vec![1.0, -2.0];
        let mut state = SgdState::new([2]);
        sgd_momentum_step(
            &mut [&mut theta[..]],
            &[&[0.5, -1.0][..]],
            &mut state,
            0.1,
            0.0,
        )
        .unwrap();
        assert_eq!(theta, vec![0.95, -1.9]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = vec![3.0];
        let mut state = SgdState::new([1]);
        sgd_momentum_step(&mut [&mut theta[..]], &[&[0.0][..]], &mut state, 0.1, 0.9).unwrap();
        assert_eq!(theta, vec![3.0]);
        assert_eq!(state.velocity, vec![vec![0.0]]);
    }

    #[test]
    fn two_momentum_steps_by_hand() {
        let mut theta = [0.0];
        let mut state = SgdState::new([1]);
        let g = [1.0];
        sgd_momentum_step(&mut [&mut theta[..]], &[&g[..]], &mut state, 0.1, 0.9).unwrap();
        assert!((state.velocity[0][0] + 0.1).abs() < 1e-15 && (theta[0] + 0.1).abs() < 1e-15);
        sgd_momentum_step(&mut [&mut theta[..]], &[&g[..]], &mut state, 0.1, 0.9).unwrap();
        assert!((state.velocity[0][0] + 0.19).abs() < 1e-15 && (theta[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_mismatched_shapes() {
        let mut theta = [0.0, 1.0];
        let mut state = SgdState::new([2]);
        assert!(
            sgd_momentum_step(&mut [&mut theta[..]], &[&[1.0][..]], &mut state, 0.1, 0.9).is_err()
        );
    }

    fn ramps(per_class: usize, n: usize) -> Dataset {
        let mut text = String::new();
        for i in 0..per_class * 2 {
            let up = i % 2 == 0;
            let offset = (i / 2) as f64 * 0.1;
            text.push_str(if up { "1" } else { "2" });
            for j in 0..n {
                let t = j as f64 / n as f64;
                let v = if up { t } else { 1.0 - t } + offset;
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        Dataset::from_rows(parse_ucr(&text, Path::new("ramps"), true).unwrap(), None).unwrap()
    }

    fn small_config(n: usize) -> McnnConfig {
        let mut c = McnnConfig::new(n, 2);
        c.branch_spec = BranchSpec {
            include_identity: true,
            downsample_rates: vec![2],
            ma_windows: vec![3],
        };
        c.local_filters = 4;
        c.full_filters = 4;
        c.dense_units = 8;
        c
    }

    #[test]
    fn single_momentum_free_step_reduces_batch_loss() {
        let data = ramps(4, 20);
        let mut c = small_config(20);
        c.activation = Activation::Identity;
        let mut model = assemble(&c, 3).unwrap();
        let slices = augment_by_slicing(&data, c.slice_ratio).unwrap();
        let batch_loss = |m: &McnnModel| -> f64 {
            let mut g = ModelGrads::zeros_like(m);
            slices
                .items
                .iter()
                .map(|s| m.loss_and_grad(&s.values, s.label, &mut g).unwrap().0)
                .sum::<f64>()
                / slices.len() as f64
        };
        let before = batch_loss(&model);
        let mut grads = ModelGrads::zeros_like(&model);
        for s in &slices.items {
            model.loss_and_grad(&s.values, s.label, &mut grads).unwrap();
        }
        grads.scale(1.0 / slices.len() as f64);
        let mut state = SgdState::for_model(&model);
        let g = grads.slices();
        sgd_momentum_step(&mut model.param_slices_mut(), &g, &mut state, 1e-3, 0.0).unwrap();
        assert!(batch_loss(&model) < before);
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        let (_, report) = fit(&small_config(20), &data, &tcfg).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn fit_is_deterministic_and_leak_free() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            max_epochs: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let (m1, r1) = fit(&small_config(20), &data, &tcfg).unwrap();
        let (m2, r2) = fit(&small_config(20), &data, &tcfg).unwrap();
        assert!(r1.same_trajectory(&r2));
        assert_eq!(m1, m2);
        assert!(r1
            .train_series
            .iter()
            .all(|t| !r1.validation_series.contains(t)));
        assert_eq!(r1.validation_series.len(), 2);
        let best = r1
            .epochs
            .iter()
            .map(|e| e.val_error)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r1.best_val_error, best);
    }

    #[test]
    fn selected_model_reproduces_best_validation_error() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            max_epochs: 5,
            seed: 2,
            ..TrainConfig::default()
        };
        let (model, report) = fit(&small_config(20), &data, &tcfg).unwrap();
        let (_, val) =
            stratified_split(&data, tcfg.val_fraction, tcfg.seed.wrapping_add(1)).unwrap();
        assert_eq!(evaluate(&model, &val).unwrap(), report.best_val_error);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig::default();
        assert!(fit(&small_config(21), &data, &tcfg).is_err());
        let lonely = Dataset::from_rows(
            parse_ucr("1,0,1,2,3\n1,1,2,3,4\n2,3,2,1,0\n", Path::new("x"), true).unwrap(),
            None,
        )
        .unwrap();
        let c = small_config(4);
        assert!(fit(&c, &lonely, &tcfg).is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(fit(&small_config(20), &data, &bad).is_err());
    }

    #[test]
    fn diverging_training_reports_epoch() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            learning_rate: 1e300,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        match fit(&small_config(20), &data, &tcfg) {
            Err(Error::NonFiniteLoss { epoch }) => assert!(epoch >= 1),
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|(_, r)| r.epochs)
            ),
        }
    }

    #[test]
    fn evaluate_arithmetic() {
        let data = ramps(5, 20);
        let model = assemble(&small_config(20), 0).unwrap();
        let err = evaluate(&model, &data).unwrap();
        assert!((0.0..=1.0).contains(&err));
        let wrong = data
            .items
            .iter()
            .filter(|s| model.predict_with_vote(&s.values).unwrap().class != s.label)
            .count();
        assert_eq!(err, wrong as f64 / data.len() as f64);
        let empty = Dataset {
            items: vec![],
            ..data.clone()
        };
        assert!(evaluate(&model, &empty).is_err());
    }

    #[test]
    fn planted_feasible_point_is_selected() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let grid = GridSpec {
            filter_ratios: vec![0.1],
            pooling_factors: vec![500, 3],
            batch_sizes: vec![16],
        };
        let out = grid_search(&small_config(20), &grid, &data, &tcfg).unwrap();
        assert!(matches!(
            out.leaderboard[0].outcome,
            GridOutcome::Skipped { .. }
        ));
        assert_eq!(out.best_index, 1);
        assert_eq!(out.report.best_val_error, 0.0);
    }

    #[test]
    fn equivalent_grid_points_share_one_run() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        // both ratios give the minimum filter length on 18-sample slices
        let grid = GridSpec {
            filter_ratios: vec![0.05, 0.1],
            pooling_factors: vec![3],
            batch_sizes: vec![16],
        };
        let out = grid_search(&small_config(20), &grid, &data, &tcfg).unwrap();
        assert_eq!(out.leaderboard[0].outcome, out.leaderboard[1].outcome);
        assert_eq!(out.best_index, 0);
        assert_eq!(out.config.filter_ratio, 0.05);
    }

    #[test]
    fn validation_loss_matches_slice_cross_entropy() {
        let data = ramps(3, 20);
        let model = assemble(&small_config(20), 4).unwrap();
        let (err, loss) = evaluate_with_loss(&model, &data).unwrap();
        assert_eq!(err, evaluate(&model, &data).unwrap());
        let mut total = 0.0;
        let mut count = 0;
        for s in &data.items {
            for w in s.values.windows(model.slice_len()) {
                total -= model.forward(w).unwrap()[s.label].ln();
                count += 1;
            }
        }
        assert!((loss - total / count as f64).abs() < 1e-12);
    }

    #[test]
    fn singleton_grid_and_infeasible_grid() {
        let data = ramps(5, 20);
        let tcfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let grid = GridSpec {
            filter_ratios: vec![0.1],
            pooling_factors: vec![3],
            batch_sizes: vec![16],
        };
        let out = grid_search(&small_config(20), &grid, &data, &tcfg).unwrap();
        assert_eq!(out.leaderboard.len(), 1);
        assert_eq!(
            (out.config.filter_ratio, out.config.pooling_factor),
            (0.1, 3)
        );
        assert_eq!(out.train_config.batch_size, 16);

        let impossible = GridSpec {
            filter_ratios: vec![0.1],
            pooling_factors: vec![500],
            batch_sizes: vec![16],
        };
        assert!(matches!(
            grid_search(&small_config(20), &impossible, &data, &tcfg),
            Err(Error::Geometry { .. })
        ));
    }
}
