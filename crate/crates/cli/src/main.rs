//! `lmgc` command-line tool.
//!
//! Exit status: 0 success, 1 I/O failure, 2 invalid input or flags, 3 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmgc::experiments::{self, SweepSpec, SynthSpec};
use lmgc::io::{self as lio, ModelFile};
use lmgc::optimizer;
use lmgc::privacy::{self, PRIVACY_CAVEAT};
use lmgc::{loss, model, objective, Error, HuberLoss, LabeledDataset, OptimizerConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "lmgc", version, about = "Differentially private large-margin Gaussian classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier on a labeled CSV and write the model and a report.
    Train(TrainArgs),
    /// Predict 1-based labels for a feature-only CSV.
    Predict(PredictArgs),
    /// Loss, objective, accuracy and bound values of a model on a labeled CSV.
    Evaluate(EvaluateArgs),
    /// Draw one perturbation matrix.
    SampleNoise(SampleNoiseArgs),
    /// Run a privacy/utility sweep over epsilon on synthetic data.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "huber-h")]
    huber_h: Option<f64>,
    #[arg(long = "margin-target")]
    margin_target: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled CSV: feature columns followed by a label in 1..=C.
    #[arg(long)]
    data: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    model: PathBuf,
    /// Report JSON to write (default: next to the model, `<stem>.report.json`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Minimize the unperturbed objective; no privacy guarantee.
    #[arg(long = "no-privacy")]
    no_privacy: bool,
    #[command(flatten)]
    loss: LossArgs,
    /// Seed for the perturbation draw; a random seed is drawn and reported when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Per-class Frobenius bound on the parameters.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// JSON file with any of the train settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature-only CSV with `d` columns.
    #[arg(long)]
    data: PathBuf,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = ",")]
    delimiter: char,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epsilon for the bound fields (default: the model's).
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value = ",")]
    delimiter: char,
}

#[derive(Args)]
struct SampleNoiseArgs {
    /// Feature dimension; the matrix is (d+1)×(d+1).
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Per-cell CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON summary output.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Comma-separated epsilon grid.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 5.0, 10.0])]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long = "data-seed", default_value_t = 1)]
    data_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Full sweep specification as JSON; replaces the grid and data flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_io() {
            1
        } else if e.is_numeric() {
            3
        } else {
            2
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure { code: 1, message: format!("{}: {e}", path.display()) }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SampleNoise(a) => cmd_sample_noise(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn delimiter_byte(c: char) -> std::result::Result<u8, Failure> {
    u8::try_from(c).map_err(|_| Failure::usage(format!("--delimiter must be a single ASCII character, got '{c}'")))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::result::Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `path`, or to standard output when `path` is `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_failure(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Failure { code: 1, message: e.to_string() })
        }
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> std::result::Result<Vec<u8>, Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Train settings readable from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFileConfig {
    epsilon: Option<f64>,
    no_privacy: bool,
    lambda: Option<f64>,
    huber_h: Option<f64>,
    margin_target: Option<f64>,
    delta: Option<f64>,
    seed: Option<u64>,
    optimizer: Option<OptimizerConfig>,
}

#[derive(Serialize)]
struct Bounds {
    noise_norm_tail_bound: f64,
    empirical_risk_bound: f64,
    true_risk_bound: f64,
}

fn bounds(d: usize, classes: usize, n: usize, epsilon: f64, lambda: f64, delta: f64) -> lmgc::Result<Bounds> {
    Ok(Bounds {
        // The tail bound needs δ < d; for d = 1 and δ ≥ 1 there is nothing to report.
        noise_norm_tail_bound: privacy::noise_norm_tail_bound(d, epsilon, delta).unwrap_or(f64::NAN),
        empirical_risk_bound: privacy::empirical_risk_bound(d, classes, epsilon, lambda, delta)?,
        true_risk_bound: privacy::true_risk_bound(d, classes, n, epsilon, lambda, delta)?,
    })
}

#[derive(Serialize)]
struct TrainReportFile {
    epsilon: Option<f64>,
    lambda: f64,
    huber_h: f64,
    margin_target: f64,
    delta: f64,
    seed: Option<u64>,
    noise_seed: Option<u64>,
    noise_norm: Option<f64>,
    n: usize,
    d: usize,
    #[serde(rename = "C")]
    classes: usize,
    scale_factor: f64,
    iterations: usize,
    converged: bool,
    stationarity_residual: f64,
    grad_tolerance: f64,
    initial_objective: f64,
    final_objective: f64,
    unperturbed_objective: f64,
    train_accuracy: f64,
    param_radius: Option<f64>,
    radius_active: bool,
    common_shift_curvature: f64,
    bounds: Option<Bounds>,
    privacy_caveat: &'static str,
}

fn default_report_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    model.with_file_name(format!("{stem}.report.json"))
}

fn optimizer_config(
    base: OptimizerConfig,
    max_iters: Option<usize>,
    tol: Option<f64>,
    radius: Option<f64>,
) -> std::result::Result<OptimizerConfig, Failure> {
    let mut cfg = base;
    if let Some(m) = max_iters {
        cfg.max_iters = m;
    }
    if let Some(t) = tol {
        cfg.grad_tolerance = t;
    }
    if let Some(r) = radius {
        cfg.param_radius = Some(r);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let file: TrainFileConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFileConfig::default(),
    };
    if a.epsilon.is_some() && a.no_privacy {
        return Err(Failure::usage("--epsilon and --no-privacy are mutually exclusive"));
    }
    let epsilon = if a.no_privacy || file.no_privacy {
        None
    } else {
        Some(
            a.epsilon
                .or(file.epsilon)
                .ok_or_else(|| Failure::usage("missing --epsilon (pass --no-privacy to train without privacy)"))?,
        )
    };
    let lambda = a.loss.lambda.or(file.lambda).unwrap_or(1.0);
    let loss = HuberLoss::new(
        a.loss.huber_h.or(file.huber_h).unwrap_or(loss::DEFAULT_HUBER_H),
        a.loss.margin_target.or(file.margin_target).unwrap_or(loss::DEFAULT_MARGIN_TARGET),
    )?;
    let delta = a.loss.delta.or(file.delta).unwrap_or(0.1);
    objective::RegularizerSpec::new(lambda)?;
    if let Some(e) = epsilon {
        privacy::PrivacyBudget::new(e, delta)?;
    }
    let config = optimizer_config(file.optimizer.unwrap_or_default(), a.max_iters, a.tol, a.radius)?;
    let delimiter = delimiter_byte(a.delimiter)?;

    let raw = lio::read_labeled_csv(read_text(&a.data)?.as_bytes(), delimiter)?;
    let data = model::normalize_dataset(&raw.features, raw.labels, raw.num_classes)?;

    let seed = a.seed.or(file.seed);
    let (seed, perturbation) = match epsilon {
        Some(e) => {
            let seed = seed.unwrap_or_else(rand::random);
            (Some(seed), Some(privacy::sample_perturbation_seeded(data.dim(), e, seed)?))
        }
        None => (seed, None),
    };
    let report = optimizer::train(&data, lambda, loss, &config, perturbation.as_ref())?;

    let model_file = ModelFile::from_params(&report.params, lambda, epsilon, data.scale_factor());
    let model_json = model_file.to_json()?;
    let bounds = match epsilon {
        Some(e) => Some(bounds(data.dim(), data.num_classes(), data.len(), e, lambda, delta)?),
        None => None,
    };
    let summary = TrainReportFile {
        epsilon,
        lambda,
        huber_h: loss.h,
        margin_target: loss.margin_target,
        delta,
        seed,
        noise_seed: perturbation.as_ref().and_then(|b| b.seed()),
        noise_norm: perturbation.as_ref().map(|b| b.frob_norm()),
        n: data.len(),
        d: data.dim(),
        classes: data.num_classes(),
        scale_factor: data.scale_factor(),
        iterations: report.iterations,
        converged: report.converged,
        stationarity_residual: report.stationarity_residual,
        grad_tolerance: config.grad_tolerance,
        initial_objective: report.objective_trajectory[0],
        final_objective: report.final_objective(),
        unperturbed_objective: objective::objective_j(report.params.as_slice(), &data, lambda, &loss)?,
        train_accuracy: model::accuracy(&report.params, &data)?,
        param_radius: config.param_radius,
        radius_active: report.radius_active,
        common_shift_curvature: report.common_shift_curvature,
        bounds,
        privacy_caveat: PRIVACY_CAVEAT,
    };
    let report_path = a.out.unwrap_or_else(|| default_report_path(&a.model));
    emit(Some(&a.model), format!("{model_json}\n").as_bytes())?;
    emit(Some(&report_path), &to_json_bytes(&summary)?)?;
    if !report.converged {
        eprintln!(
            "warning: stopped after {} iterations with stationarity residual {:e}",
            report.iterations, report.stationarity_residual
        );
    }
    Ok(())
}

fn read_model(path: &Path) -> std::result::Result<(ModelFile, lmgc::ClassParams), Failure> {
    let file =
        ModelFile::from_json(&read_text(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let params = file.to_params()?;
    Ok((file, params))
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let (file, params) = read_model(&a.model)?;
    let rows = lio::read_features_csv(read_text(&a.data)?.as_bytes(), delimiter_byte(a.delimiter)?, file.d)?;
    let labels = rows
        .iter()
        .map(|r| model::predict(&params, &model::homogenize(r, file.scale_factor)))
        .collect::<lmgc::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    lio::write_predictions(&mut buf, &labels)?;
    emit(a.out.as_deref(), &buf)
}

#[derive(Serialize)]
struct Metrics {
    n: usize,
    d: usize,
    #[serde(rename = "C")]
    classes: usize,
    lambda: f64,
    huber_h: f64,
    margin_target: f64,
    accuracy: f64,
    empirical_loss: f64,
    regularizer: f64,
    objective_j: f64,
    hinge_loss: f64,
    epsilon: Option<f64>,
    delta: f64,
    bounds: Option<Bounds>,
}

fn evaluate_dataset(file: &ModelFile, raw: lio::RawLabeled) -> std::result::Result<LabeledDataset, Failure> {
    if raw.features.first().map(Vec::len) != Some(file.d) {
        return Err(Error::DimensionMismatch { expected: file.d, found: raw.features[0].len() }.into());
    }
    Ok(LabeledDataset::with_scale_factor(&raw.features, raw.labels, file.classes, file.scale_factor)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let (file, params) = read_model(&a.model)?;
    let raw = lio::read_labeled_csv(read_text(&a.data)?.as_bytes(), delimiter_byte(a.delimiter)?)?;
    let data = evaluate_dataset(&file, raw)?;
    let lambda = a.loss.lambda.unwrap_or(file.lambda);
    let loss = HuberLoss::new(
        a.loss.huber_h.unwrap_or(loss::DEFAULT_HUBER_H),
        a.loss.margin_target.unwrap_or(loss::DEFAULT_MARGIN_TARGET),
    )?;
    objective::RegularizerSpec::new(lambda)?;
    let delta = a.loss.delta.unwrap_or(0.1);
    let epsilon = a.epsilon.or(file.epsilon);
    let phi = params.as_slice();
    let empirical_loss = loss::empirical_loss(phi, &data, &loss)?;
    let regularizer = objective::regularizer(phi, lambda);
    let metrics = Metrics {
        n: data.len(),
        d: data.dim(),
        classes: data.num_classes(),
        lambda,
        huber_h: loss.h,
        margin_target: loss.margin_target,
        accuracy: model::accuracy(&params, &data)?,
        empirical_loss,
        regularizer,
        objective_j: empirical_loss + regularizer,
        hinge_loss: loss::hinge_loss_total(phi, &data)?,
        epsilon,
        delta,
        bounds: match epsilon {
            Some(e) => Some(bounds(data.dim(), data.num_classes(), data.len(), e, lambda, delta)?),
            None => None,
        },
    };
    emit(a.out.as_deref(), &to_json_bytes(&metrics)?)
}

#[derive(Serialize)]
struct NoiseFile {
    d: usize,
    epsilon: f64,
    seed: u64,
    norm: f64,
    matrix: Vec<Vec<f64>>,
}

fn cmd_sample_noise(a: SampleNoiseArgs) -> CmdResult {
    let b = privacy::sample_perturbation_seeded(a.dim, a.epsilon, a.seed)?;
    let out = NoiseFile { d: a.dim, epsilon: a.epsilon, seed: a.seed, norm: b.frob_norm(), matrix: b.to_rows() };
    emit(a.out.as_deref(), &to_json_bytes(&out)?)
}

#[derive(Serialize)]
struct SweepSummaryFile<'a> {
    spec: &'a SweepSpec,
    j_unperturbed: f64,
    acc_unperturbed: f64,
    unperturbed_converged: bool,
    fraction_within_bound: f64,
    excess_epsilon_spearman: f64,
    failed_cells: usize,
    per_epsilon: &'a [experiments::EpsilonSummary],
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let spec = match &a.config {
        Some(p) => read_json::<SweepSpec>(p)?,
        None => SweepSpec {
            epsilons: a.epsilons.clone(),
            trials: a.trials,
            data: SynthSpec::new(a.n, a.dim, a.classes, a.separation, a.data_seed),
            lambda: a.loss.lambda.unwrap_or(1.0),
            loss: HuberLoss::new(
                a.loss.huber_h.unwrap_or(loss::DEFAULT_HUBER_H),
                a.loss.margin_target.unwrap_or(loss::DEFAULT_MARGIN_TARGET),
            )?,
            delta: a.loss.delta.unwrap_or(0.1),
            optimizer: optimizer_config(OptimizerConfig::default(), a.max_iters, a.tol, a.radius)?,
            seed: a.seed,
        },
    };
    let result = experiments::run_epsilon_sweep(&spec)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    emit(Some(&a.out), &csv)?;
    if let Some(path) = &a.summary {
        let summary = SweepSummaryFile {
            spec: &spec,
            j_unperturbed: result.j_unperturbed,
            acc_unperturbed: result.acc_unperturbed,
            unperturbed_converged: result.unperturbed_converged,
            fraction_within_bound: result.fraction_within_bound(),
            excess_epsilon_spearman: result.excess_epsilon_spearman(),
            failed_cells: result.cells.iter().filter(|c| c.error.is_some()).count(),
            per_epsilon: &result.summaries,
        };
        emit(Some(path), &to_json_bytes(&summary)?)?;
    }
    Ok(())
}
