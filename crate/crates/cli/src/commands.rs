use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use chrono::{SecondsFormat, Utc};
use serde_json::json;

use mcnn::baseline::{default_cv_windows, dtw_1nn, dtw_cv_window, euclidean_1nn, DtwParams};
use mcnn::data::{
    is_znorm_dataset, load_ucr, load_ucr_with_labels, read_ucr_rows, z_normalize, Dataset, LabelMap,
};
use mcnn::train::{
    evaluate, fit_with_test, grid_search_with_test, GridOutcome, GridSpec, TrainConfig,
};
use mcnn::{read_model, write_model, BranchSpec, McnnConfig, McnnModel};

use crate::args::*;
use crate::manifest::{describe_inputs, write_atomic, RunManifest};

/// A failed run, split by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or inconsistent input, bad flags. Exit 1.
    Input(anyhow::Error),
    /// Infeasible geometry or divergent training. Exit 2.
    Training(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Training(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Training(e) => e,
        }
    }
}

impl From<mcnn::Error> for Failure {
    fn from(e: mcnn::Error) -> Self {
        match e {
            mcnn::Error::Geometry { .. } | mcnn::Error::NonFiniteLoss { .. } => {
                Failure::Training(e.into())
            }
            other => Failure::Input(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome<T> = Result<T, Failure>;

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn fmt_error(e: f64) -> String {
    format!("{e:.3}")
}

fn wants_znorm(mode: Znorm, name: Option<&str>) -> bool {
    match mode {
        Znorm::On => true,
        Znorm::Off => false,
        Znorm::Auto => name.is_some_and(is_znorm_dataset),
    }
}

fn maybe_normalize(data: Dataset, mode: Znorm) -> Dataset {
    if wants_znorm(mode, data.name.as_deref()) {
        log::info!(
            "z-normalizing {}",
            data.name.as_deref().unwrap_or("dataset")
        );
        data.z_normalized()
    } else {
        data
    }
}

fn load_pair(
    train: &Path,
    test: Option<&Path>,
    mode: Znorm,
) -> Outcome<(Dataset, Option<Dataset>)> {
    let train_set = load_ucr(train)?;
    let test_set = match test {
        Some(p) => Some(maybe_normalize(
            load_ucr_with_labels(p, &train_set.labels)?,
            mode,
        )),
        None => None,
    };
    Ok((maybe_normalize(train_set, mode), test_set))
}

fn model_config(args: &ModelArgs, data: &Dataset) -> Outcome<McnnConfig> {
    let n = data
        .series_length()
        .ok_or_else(|| Failure::Input(anyhow!("training file contains no series")))?;
    let mut c = McnnConfig::new(n, data.num_classes());
    c.branch_spec = BranchSpec {
        include_identity: true,
        downsample_rates: args.k_rates.0.clone(),
        ma_windows: args.ma_windows.0.clone(),
    };
    c.local_filters = args.filters;
    c.full_filters = args.filters;
    c.filter_ratio = args.filter_ratio;
    c.pooling_factor = args.pool_factor;
    c.dense_units = args.dense_units;
    c.slice_ratio = args.slice_ratio;
    Ok(c)
}

fn train_config(args: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        patience: args.patience,
        seed,
        val_fraction: args.val_fraction,
    }
}

fn check_threads(common: &Common) {
    if common.threads > 1 {
        log::warn!(
            "--threads {}: computation runs on one thread",
            common.threads
        );
    }
}

fn save_model(model: &McnnModel, path: &Path) -> Outcome<()> {
    let mut bytes = Vec::new();
    write_model(model, &mut bytes).map_err(|e| Failure::Input(e.into()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn load_model(path: &Path) -> Outcome<McnnModel> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::Input(anyhow!("cannot open {}: {e}", path.display())))?;
    read_model(BufReader::new(file))
        .map_err(|e| Failure::Input(anyhow!("cannot load model {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Failure::Input(e.into()))?;
    text.push(b'\n');
    write_atomic(path, &text)?;
    Ok(())
}

/// Output common to every run: the manifest and, if requested, the metrics file.
struct Finisher<'a> {
    command: &'static str,
    argv: &'a [String],
    common: &'a Common,
    started: String,
    inputs: Vec<PathBuf>,
}

impl Finisher<'_> {
    fn finish(
        self,
        config: serde_json::Value,
        mut artifacts: Vec<PathBuf>,
        metrics: serde_json::Value,
    ) -> Outcome<()> {
        if let Some(path) = &self.common.json_out {
            write_json(
                path,
                &json!({ "command": self.command, "metrics": metrics }),
            )?;
            artifacts.push(path.clone());
        }
        let manifest = RunManifest {
            command: self.command.to_owned(),
            args: self.argv.to_vec(),
            config,
            seed: self.common.seed,
            inputs: describe_inputs(self.inputs.iter().map(PathBuf::as_path))?,
            started: self.started,
            finished: now(),
            artifacts,
            metrics,
        };
        manifest.write(&self.common.out)?;
        Ok(())
    }
}

pub fn run(command: &Command, argv: &[String]) -> Outcome<()> {
    match command {
        Command::Train(a) => train(a, argv),
        Command::Grid(a) => grid(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Baseline(a) => baseline(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn inputs_of(data: &Path, test: Option<&Path>) -> Vec<PathBuf> {
    std::iter::once(data)
        .chain(test)
        .map(Path::to_path_buf)
        .collect()
}

fn train(args: &TrainArgs, argv: &[String]) -> Outcome<()> {
    let started = now();
    check_threads(&args.common);
    let (data, test) = load_pair(&args.data, args.test.as_deref(), args.common.znorm)?;
    let config = model_config(&args.model, &data)?;
    config.geometry()?;
    let tcfg = train_config(&args.optim, args.common.seed);
    let (model, report) = fit_with_test(&config, &data, test.as_ref(), &tcfg)?;

    let out = &args.common.out;
    let model_path = out.join("model.mcnn");
    let report_path = out.join("report.json");
    let epochs_path = out.join("epochs.csv");
    save_model(&model, &model_path)?;
    write_json(
        &report_path,
        &serde_json::to_value(&report).map_err(|e| Failure::Input(e.into()))?,
    )?;
    let mut csv = Vec::new();
    report
        .write_records(&mut csv)
        .map_err(|e| Failure::Input(e.into()))?;
    write_atomic(&epochs_path, &csv)?;

    println!("epochs {}", report.epochs.len());
    println!("best_epoch {}", report.best_epoch);
    println!("validation error {}", fmt_error(report.best_val_error));
    if let Some(e) = report.test_error {
        println!("test error {}", fmt_error(e));
    }
    let metrics = json!({
        "epochs_run": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_error": report.best_val_error,
        "test_error": report.test_error,
        "num_params": model.num_params(),
    });
    let config_json = json!({
        "model": config,
        "train": tcfg,
        "znorm": args.common.znorm,
        "znorm_applied": wants_znorm(args.common.znorm, data.name.as_deref()),
        "threads": args.common.threads,
    });
    Finisher {
        command: "train",
        argv,
        common: &args.common,
        started,
        inputs: inputs_of(&args.data, args.test.as_deref()),
    }
    .finish(
        config_json,
        vec![model_path, report_path, epochs_path],
        metrics,
    )
}

fn grid(args: &GridArgs, argv: &[String]) -> Outcome<()> {
    let started = now();
    let t = &args.train;
    check_threads(&t.common);
    let (data, test) = load_pair(&t.data, t.test.as_deref(), t.common.znorm)?;
    let base = model_config(&t.model, &data)?;
    let spec = GridSpec {
        filter_ratios: args.filter_ratios.0.clone(),
        pooling_factors: args.pool_factors.0.clone(),
        batch_sizes: args.batch_sizes.0.clone(),
    };
    let tcfg = train_config(&t.optim, t.common.seed);
    let result = grid_search_with_test(&base, &spec, &data, test.as_ref(), &tcfg)?;

    let mut table = String::from("filter_ratio pool_factor batch_size val_error test_error\n");
    for (i, e) in result.leaderboard.iter().enumerate() {
        let marker = if i == result.best_index { " *" } else { "" };
        let tail = match &e.outcome {
            GridOutcome::Trained {
                best_val_error,
                test_error,
                ..
            } => format!(
                "{} {}",
                fmt_error(*best_val_error),
                test_error.map_or("-".to_owned(), fmt_error)
            ),
            GridOutcome::Skipped { reason } => format!("skipped ({reason})"),
        };
        let _ = writeln!(
            table,
            "{} {} {} {tail}{marker}",
            e.filter_ratio, e.pooling_factor, e.batch_size
        );
    }
    print!("{table}");

    let out = &t.common.out;
    let model_path = out.join("model.mcnn");
    let board_path = out.join("leaderboard.json");
    let report_path = out.join("report.json");
    save_model(&result.model, &model_path)?;
    write_json(
        &board_path,
        &serde_json::to_value(&result.leaderboard).map_err(|e| Failure::Input(e.into()))?,
    )?;
    write_json(
        &report_path,
        &serde_json::to_value(&result.report).map_err(|e| Failure::Input(e.into()))?,
    )?;

    let best = &result.leaderboard[result.best_index];
    let metrics = json!({
        "best": {
            "filter_ratio": best.filter_ratio,
            "pool_factor": best.pooling_factor,
            "batch_size": best.batch_size,
        },
        "best_val_error": result.report.best_val_error,
        "test_error": result.report.test_error,
        "rows": result.leaderboard.len(),
    });
    let config_json = json!({
        "base_model": base,
        "grid": spec,
        "train": tcfg,
        "znorm": t.common.znorm,
        "threads": t.common.threads,
    });
    Finisher {
        command: "grid",
        argv,
        common: &t.common,
        started,
        inputs: inputs_of(&t.data, t.test.as_deref()),
    }
    .finish(
        config_json,
        vec![model_path, board_path, report_path],
        metrics,
    )
}

fn model_labels(model: &McnnModel) -> Outcome<LabelMap> {
    let map = LabelMap::from_labels(model.class_labels.iter().map(String::as_str));
    if map.labels() != model.class_labels.as_slice() {
        return Err(Failure::Input(anyhow!(
            "model labels are not in canonical order"
        )));
    }
    Ok(map)
}

fn eval(args: &EvalArgs, argv: &[String]) -> Outcome<()> {
    let started = now();
    check_threads(&args.common);
    let model = load_model(&args.model)?;
    let labels = model_labels(&model)?;
    let data = maybe_normalize(
        load_ucr_with_labels(&args.data, &labels)?,
        args.common.znorm,
    );
    let error = evaluate(&model, &data).map_err(|e| Failure::Input(e.into()))?;
    println!("error {}", fmt_error(error));
    Finisher {
        command: "eval",
        argv,
        common: &args.common,
        started,
        inputs: vec![args.model.clone(), args.data.clone()],
    }
    .finish(
        json!({ "znorm": args.common.znorm }),
        vec![],
        json!({ "error": error, "series": data.len() }),
    )
}

fn predict(args: &PredictArgs, argv: &[String]) -> Outcome<()> {
    let started = now();
    check_threads(&args.common);
    let model = load_model(&args.model)?;
    let rows = read_ucr_rows(&args.data, false)?;
    let name = mcnn::data::dataset_name(&args.data);
    let normalize = wants_znorm(args.common.znorm, name.as_deref());
    let mut out = String::new();
    let mut predictions = Vec::with_capacity(rows.len());
    for row in rows {
        let values = if normalize {
            z_normalize(&row.values)
        } else {
            row.values
        };
        let vote = model
            .predict_with_vote(&values)
            .map_err(|e| Failure::Input(anyhow!("line {}: {e}", row.line)))?;
        let label = &model.class_labels[vote.class];
        out.push_str(label);
        if args.probs {
            for p in &vote.prob_sums {
                let _ = write!(out, " {p:.6}");
            }
        }
        out.push('\n');
        predictions.push(label.clone());
    }
    print!("{out}");
    Finisher {
        command: "predict",
        argv,
        common: &args.common,
        started,
        inputs: vec![args.model.clone(), args.data.clone()],
    }
    .finish(
        json!({ "znorm": args.common.znorm, "znorm_applied": normalize, "probs": args.probs }),
        vec![],
        json!({ "predictions": predictions }),
    )
}

fn baseline(args: &BaselineArgs, argv: &[String]) -> Outcome<()> {
    let started = now();
    check_threads(&args.common);
    let (train, test) = load_pair(&args.data, Some(&args.test), args.common.znorm)?;
    let test = test.expect("test set requested");
    let (error, window) = match args.method {
        Method::Ed => {
            if args.window.is_some() {
                log::warn!("--window has no effect with --method ed");
            }
            (euclidean_1nn(&train, &test)?, None)
        }
        Method::Dtw => {
            let params = match args.window {
                Some(w) => DtwParams::with_window(w)?,
                None => DtwParams::unconstrained(),
            };
            (dtw_1nn(&train, &test, &params)?, args.window)
        }
        Method::Dtwcv => {
            if args.window.is_some() {
                log::warn!("--window is chosen by cross-validation with --method dtwcv");
            }
            let (w, _) = dtw_cv_window(&train, &default_cv_windows())?;
            println!("window {w:.2}");
            (
                dtw_1nn(&train, &test, &DtwParams::with_window(w)?)?,
                Some(w),
            )
        }
    };
    println!("error {}", fmt_error(error));
    Finisher {
        command: "baseline",
        argv,
        common: &args.common,
        started,
        inputs: inputs_of(&args.data, Some(&args.test)),
    }
    .finish(
        json!({ "method": args.method, "window": args.window, "znorm": args.common.znorm }),
        vec![],
        json!({ "error": error, "window": window }),
    )
}

/// Drops any recorded `--out` so a replacement can be appended.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip_next = false;
    for a in args {
        if skip_next {
            skip_next = false;
        } else if a == "--out" {
            skip_next = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn replay(args: &ReplayArgs) -> Outcome<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let mut recorded = manifest.args.clone();
    if let Some(out) = &args.out {
        recorded = strip_out(&recorded);
        recorded.push("--out".into());
        recorded.push(out.display().to_string());
    }
    let cli = <Cli as clap::Parser>::try_parse_from(
        std::iter::once("mcnn".to_owned()).chain(recorded.iter().cloned()),
    )
    .map_err(|e| Failure::Input(anyhow!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::Input(anyhow!("a manifest cannot record a replay")));
    }
    run(&cli.command, &recorded)
}
