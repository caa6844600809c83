//! Command-line front end: train / convert / calibrate / eval / prop1 /
//! stability / report. Exit code 0 on success, 2 for config and file
//! errors, 3 for numeric failures; every failure prints a single
//! `error: ...` line on stderr.

use crate::ann::AnnModel;
use crate::bench::{self, DeskBench};
use crate::calibrate::{
    avg_bias_calibrate, ftbc_calibrate, prop1_sweep, CalibrationConfig, SampleDistribution,
};
use crate::config::AppConfig;
use crate::convert::{build_snn, Granularity, ThresholdKind};
use crate::data::{load_idx, Dataset, Split};
use crate::error::{Error, Result};
use crate::io::{
    load_ann_model, load_bias_table, load_snn_model, save_ann_model, save_bias_table,
    save_snn_model,
};
use crate::report::{
    ann_accuracy, emit_report, evaluate, expected_gap, GapStat, MethodResult, ReportFormat,
    RunReport,
};
use crate::snn::{PotentialPolicy, SnnModel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "spikeconv", version, about = "ANN-to-SNN conversion and temporal bias calibration")]
pub struct Cli {
    /// Config file (.toml or .json); command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed for data generation, training and calibration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuiltinData {
    Blobs,
    Digits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Vanilla,
    Ftbc,
    Avgbias,
}

impl Method {
    fn name(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Ftbc => "ftbc",
            Method::Avgbias => "avgbias",
        }
    }
}

/// Where a command's data comes from: a built-in generated benchmark or an
/// IDX image/label pair.
#[derive(Debug, Clone, Args)]
pub struct DataOpts {
    /// Built-in benchmark dataset (generated from the seed).
    #[arg(long, value_enum)]
    pub dataset: Option<BuiltinData>,

    /// IDX image file (pair with --labels).
    #[arg(long, requires = "labels", conflicts_with = "dataset")]
    pub images: Option<PathBuf>,

    /// IDX label file (pair with --images).
    #[arg(long, requires = "images", conflicts_with = "dataset")]
    pub labels: Option<PathBuf>,
}

/// Overrides for the calibration section of the config.
#[derive(Debug, Clone, Args)]
pub struct CalibOverrides {
    /// Calibration horizon (biases learned for t = 1..=T).
    #[arg(long = "T")]
    pub t: Option<usize>,

    /// Correction step size.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Calibration iterations.
    #[arg(long)]
    pub iters: Option<usize>,

    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,

    #[arg(long = "batches-per-iter")]
    pub batches_per_iter: Option<usize>,
}

impl CalibOverrides {
    fn apply(&self, cfg: &mut CalibrationConfig, seed: Option<u64>) {
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(iters) = self.iters {
            cfg.iterations = iters;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(b) = self.batches_per_iter {
            cfg.batches_per_iter = b;
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
    }
}

/// Overrides for the conversion section of the config.
#[derive(Debug, Clone, Args)]
pub struct ConvertOverrides {
    /// Threshold statistic.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,

    /// Threshold percentile.
    #[arg(long)]
    pub percentile: Option<f64>,

    #[arg(long, value_enum)]
    pub granularity: Option<GranularityArg>,

    /// Disable weight scaling to unit thresholds.
    #[arg(long)]
    pub no_scale: bool,

    /// Start membrane potentials at θ/2 instead of zero.
    #[arg(long)]
    pub half_threshold_init: bool,

    /// Samples used for threshold statistics.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Max,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Layer,
    Channel,
}

impl ConvertOverrides {
    fn apply(&self, cfg: &mut crate::convert::ConversionConfig) {
        if let Some(policy) = self.policy {
            cfg.threshold_policy.kind = match policy {
                PolicyArg::Max => ThresholdKind::Max,
                PolicyArg::Percentile => ThresholdKind::Percentile,
            };
        }
        if let Some(p) = self.percentile {
            cfg.threshold_policy.p = p;
        }
        if let Some(g) = self.granularity {
            cfg.threshold_policy.granularity = match g {
                GranularityArg::Layer => Granularity::Layer,
                GranularityArg::Channel => Granularity::Channel,
            };
        }
        if self.no_scale {
            cfg.scale_weights = false;
        }
        if self.half_threshold_init {
            cfg.initial_potential_policy = PotentialPolicy::HalfThreshold;
        }
        if let Some(s) = self.samples {
            cfg.calibration_samples = s;
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a desk-scale source model and write it as a model file.
    Train {
        #[arg(long, value_enum)]
        arch: Arch,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a trained ANN into a spiking model.
    Convert {
        /// Source ANN model file.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        overrides: ConvertOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate temporal biases for a converted model.
    Calibrate {
        /// Spiking model file.
        #[arg(long)]
        snn: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        /// ftbc or avgbias.
        #[arg(long, value_enum, default_value = "ftbc")]
        method: Method,
        #[command(flatten)]
        overrides: CalibOverrides,
        /// Bias table output path.
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration accuracy/gap CSV (ftbc only).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Evaluate a spiking model (optionally with a bias table).
    Eval {
        #[arg(long)]
        snn: PathBuf,
        #[arg(long)]
        bias: Option<PathBuf>,
        #[command(flatten)]
        data: DataOpts,
        /// Comma-separated timesteps, e.g. 1,2,4,8.
        #[arg(long)]
        timesteps: Option<String>,
        /// Report path (.json or .csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the scalar bias solver over distributions and targets.
    Prop1 {
        /// Comma-separated targets in [0,1].
        #[arg(long, default_value = "0.1,0.25,0.5,0.75,0.9")]
        targets: String,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Optional CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate while recording per-iteration accuracy (stability study).
    Stability {
        #[arg(long)]
        snn: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        overrides: CalibOverrides,
        /// Trajectory CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Optionally keep the calibrated bias table.
        #[arg(long)]
        bias_out: Option<PathBuf>,
    },
    /// Full pipeline comparison (vanilla / ftbc / avgbias) into one report.
    Report {
        /// Source ANN model file.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        /// Comma-separated methods.
        #[arg(long, default_value = "vanilla,ftbc,avgbias")]
        methods: String,
        #[command(flatten)]
        convert_overrides: ConvertOverrides,
        #[command(flatten)]
        calib_overrides: CalibOverrides,
        /// Comma-separated eval timesteps.
        #[arg(long)]
        timesteps: Option<String>,
        /// Report path (.json or .csv).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_run() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if cli.seed.is_some() {
        config.calibration.seed = seed;
    }

    match cli.command {
        Command::Train {
            arch,
            data,
            epochs,
            lr,
            out,
        } => cmd_train(arch, &data, epochs, lr, &out, seed),
        Command::Convert {
            model,
            data,
            overrides,
            out,
        } => {
            overrides.apply(&mut config.conversion);
            cmd_convert(&model, &data, &config, &out, seed)
        }
        Command::Calibrate {
            snn,
            data,
            method,
            overrides,
            out,
            trajectory,
        } => {
            overrides.apply(&mut config.calibration, cli.seed);
            cmd_calibrate(&snn, &data, method, &config, &out, trajectory.as_deref(), seed)
        }
        Command::Eval {
            snn,
            bias,
            data,
            timesteps,
            out,
        } => {
            let timesteps = parse_timesteps(timesteps.as_deref(), &config)?;
            cmd_eval(&snn, bias.as_deref(), &data, &timesteps, &config, &out, seed)
        }
        Command::Prop1 {
            targets,
            n,
            c,
            iters,
            out,
        } => cmd_prop1(&targets, n, c, iters, out.as_deref(), seed),
        Command::Stability {
            snn,
            data,
            overrides,
            out,
            bias_out,
        } => {
            overrides.apply(&mut config.calibration, cli.seed);
            cmd_stability(&snn, &data, &config, &out, bias_out.as_deref(), seed)
        }
        Command::Report {
            model,
            data,
            methods,
            convert_overrides,
            calib_overrides,
            timesteps,
            out,
        } => {
            convert_overrides.apply(&mut config.conversion);
            calib_overrides.apply(&mut config.calibration, cli.seed);
            let timesteps = parse_timesteps(timesteps.as_deref(), &config)?;
            let methods = parse_methods(&methods)?;
            cmd_report(&model, &data, &methods, &timesteps, &config, &out, seed)
        }
    }
}

fn parse_timesteps(arg: Option<&str>, config: &AppConfig) -> Result<Vec<usize>> {
    let list = match arg {
        None => config.eval.timesteps.clone(),
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad timestep {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if list.is_empty() || !list.windows(2).all(|w| w[0] < w[1]) || list[0] == 0 {
        return Err(Error::Argument(
            "timesteps must be positive and strictly increasing".into(),
        ));
    }
    Ok(list)
}

fn parse_methods(text: &str) -> Result<Vec<Method>> {
    text.split(',')
        .map(|s| match s.trim() {
            "vanilla" => Ok(Method::Vanilla),
            "ftbc" => Ok(Method::Ftbc),
            "avgbias" => Ok(Method::Avgbias),
            other => Err(Error::Argument(format!("unknown method {other:?}"))),
        })
        .collect()
}

fn parse_targets(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let t: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad target {s:?}")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Argument(format!("target {t} outside [0,1]")));
            }
            Ok(t)
        })
        .collect()
}

/// Resolves a data source into (calibration split, evaluation split).
fn resolve_data(opts: &DataOpts, seed: u64) -> Result<(Dataset, Dataset, Option<DeskBench>)> {
    match (&opts.dataset, &opts.images, &opts.labels) {
        (Some(BuiltinData::Blobs), None, None) => {
            let bench = bench::blobs_bench(seed)?;
            Ok((bench.calib.clone(), bench.test.clone(), Some(bench)))
        }
        (Some(BuiltinData::Digits), None, None) => {
            let bench = bench::digits_bench(seed)?;
            Ok((bench.calib.clone(), bench.test.clone(), Some(bench)))
        }
        (None, Some(images), Some(labels)) => {
            let data = load_idx(images, labels, Split::Test)?;
            let calib = Dataset {
                split: Split::Calib,
                ..data.clone()
            };
            Ok((calib, data, None))
        }
        _ => Err(Error::Argument(
            "choose a data source: --dataset blobs|digits, or --images with --labels".into(),
        )),
    }
}

fn status(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn cmd_train(
    arch: Arch,
    data: &DataOpts,
    epochs: Option<usize>,
    lr: Option<f64>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let (train, arch_model, default_epochs, default_lr) = match arch {
        Arch::Mlp => {
            let (calib, _, bench) = resolve_data(data, seed)?;
            let train = bench.map(|b| b.train).unwrap_or(calib);
            let dim: usize = train.sample_shape().iter().product();
            let model = crate::ann::mlp_arch(dim, &bench::MLP_HIDDEN, train.class_count, seed);
            (train, model, bench::MLP_EPOCHS, bench::MLP_LR)
        }
        Arch::Cnn => {
            let (calib, _, bench) = resolve_data(data, seed)?;
            let train = bench.map(|b| b.train).unwrap_or(calib);
            if train.sample_shape() != [1, 12, 12] {
                return Err(Error::Argument(format!(
                    "cnn arch expects 1x12x12 inputs, dataset has {:?}",
                    train.sample_shape()
                )));
            }
            let model = crate::ann::cnn_arch(train.class_count, seed);
            (train, model, bench::CNN_EPOCHS, bench::CNN_LR)
        }
    };
    let outcome = crate::ann::train_sgd(
        &arch_model,
        &train,
        epochs.unwrap_or(default_epochs),
        lr.unwrap_or(default_lr),
        seed,
    )?;
    save_ann_model(&outcome.model, out)?;
    status(&format!(
        "trained: accuracy={:.4} loss={:.4} -> {}",
        outcome.train_accuracy,
        outcome.final_loss,
        out.display()
    ));
    Ok(())
}

fn cmd_convert(
    model_path: &Path,
    data: &DataOpts,
    config: &AppConfig,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let model = load_ann_model(model_path)?;
    let (calib, _, _) = resolve_data(data, seed)?;
    let snn = build_snn(&model, &config.conversion, &calib)?;
    save_snn_model(&snn, out)?;
    status(&format!("converted -> {}", out.display()));
    Ok(())
}

fn load_snn_with_bias(snn_path: &Path, bias_path: Option<&Path>) -> Result<SnnModel> {
    let mut snn = load_snn_model(snn_path)?;
    if let Some(path) = bias_path {
        snn.set_bias(load_bias_table(path)?)?;
    }
    Ok(snn)
}

fn cmd_calibrate(
    snn_path: &Path,
    data: &DataOpts,
    method: Method,
    config: &AppConfig,
    out: &Path,
    trajectory: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let snn = load_snn_model(snn_path)?;
    let (calib, _, _) = resolve_data(data, seed)?;
    let cfg = &config.calibration;
    let calibrated = match method {
        Method::Ftbc => {
            let (model, traj) = ftbc_calibrate(snn.ann(), &snn, &calib, cfg)?;
            if let Some(path) = trajectory {
                traj.write_csv(path)?;
            }
            model
        }
        Method::Avgbias => {
            if trajectory.is_some() {
                return Err(Error::Argument(
                    "--trajectory is only recorded for --method ftbc".into(),
                ));
            }
            avg_bias_calibrate(snn.ann(), &snn, &calib, cfg)?
        }
        Method::Vanilla => {
            return Err(Error::Argument(
                "vanilla has no biases to calibrate; use convert + eval".into(),
            ))
        }
    };
    save_bias_table(calibrated.bias(), out)?;
    status(&format!("calibrated ({}) -> {}", method.name(), out.display()));
    Ok(())
}

fn report_format(path: &Path) -> Result<ReportFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(ReportFormat::Json),
        Some("csv") => Ok(ReportFormat::Csv),
        other => Err(Error::Argument(format!(
            "report path needs a .json or .csv extension, got {other:?}"
        ))),
    }
}

fn cmd_eval(
    snn_path: &Path,
    bias_path: Option<&Path>,
    data: &DataOpts,
    timesteps: &[usize],
    config: &AppConfig,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let snn = load_snn_with_bias(snn_path, bias_path)?;
    let (calib, test, _) = resolve_data(data, seed)?;
    let accuracy = evaluate(&snn, &test, timesteps)?;
    let ann_acc = ann_accuracy(snn.ann(), &test)?;

    let method = if bias_path.is_some() { "calibrated" } else { "vanilla" };
    let gap_t = timesteps.last().copied().unwrap_or(1).min(32);
    let gaps = expected_gap(snn.ann(), &snn, &calib.take(256.min(calib.len()), calib.split)?, gap_t)?;
    let gap_stats = (0..snn.layer_count())
        .map(|layer| GapStat {
            method: method.to_string(),
            layer,
            mean_abs_gap: (1..=gap_t).map(|t| gaps.norm(layer, t)).sum::<f64>() / gap_t as f64,
        })
        .collect();

    let report = RunReport::new(
        seed,
        timesteps.to_vec(),
        ann_acc,
        vec![MethodResult {
            method: method.to_string(),
            accuracy_per_t: accuracy,
        }],
        gap_stats,
        config.clone(),
        started.elapsed().as_secs_f64(),
    )?;
    emit_report(&report, out, report_format(out)?)?;
    status(&format!("evaluated -> {}", out.display()));
    Ok(())
}

fn cmd_prop1(
    targets: &str,
    n: usize,
    c: f64,
    iters: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let targets = parse_targets(targets)?;
    let distributions = [
        SampleDistribution::Uniform,
        SampleDistribution::LinearRamp,
        SampleDistribution::Triangular,
    ];
    let rows = prop1_sweep(&distributions, &targets, n, c, iters, seed)?;

    let mut stdout = std::io::stdout();
    let _ = writeln!(stdout, "distribution,target,b_estimate,b_closed_form,residual");
    for row in &rows {
        let _ = writeln!(
            stdout,
            "{},{},{},{},{}",
            row.distribution, row.target, row.b_estimate, row.b_closed_form, row.residual
        );
    }
    if let Some(path) = out {
        let display = path.display().to_string();
        let mut text = String::from("distribution,target,b_estimate,b_closed_form,residual\n");
        for row in &rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                row.distribution, row.target, row.b_estimate, row.b_closed_form, row.residual
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

fn cmd_stability(
    snn_path: &Path,
    data: &DataOpts,
    config: &AppConfig,
    out: &Path,
    bias_out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let snn = load_snn_model(snn_path)?;
    let (calib, _, _) = resolve_data(data, seed)?;
    let (calibrated, trajectory) = ftbc_calibrate(snn.ann(), &snn, &calib, &config.calibration)?;
    trajectory.write_csv(out)?;
    if let Some(path) = bias_out {
        save_bias_table(calibrated.bias(), path)?;
    }
    status(&format!("stability trajectory -> {}", out.display()));
    Ok(())
}

/// Runs convert + (per-method) calibrate + eval and merges everything into
/// one report.
fn cmd_report(
    model_path: &Path,
    data: &DataOpts,
    methods: &[Method],
    timesteps: &[usize],
    config: &AppConfig,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let model = load_ann_model(model_path)?;
    let (calib, test, _) = resolve_data(data, seed)?;
    let outcome = run_comparison(&model, &calib, &test, methods, timesteps, config)?;

    let report = RunReport::new(
        seed,
        timesteps.to_vec(),
        outcome.ann_accuracy,
        outcome.methods,
        outcome.gap_stats,
        config.clone(),
        started.elapsed().as_secs_f64(),
    )?;
    emit_report(&report, out, report_format(out)?)?;
    status(&format!("report -> {}", out.display()));
    Ok(())
}

/// Comparison results before report assembly.
pub struct ComparisonOutcome {
    pub ann_accuracy: f64,
    pub methods: Vec<MethodResult>,
    pub gap_stats: Vec<GapStat>,
}

/// Shared by the `report` command and the acceptance harness: converts
/// once, calibrates per method, evaluates each variant on the test split.
pub fn run_comparison(
    model: &AnnModel,
    calib: &Dataset,
    test: &Dataset,
    methods: &[Method],
    timesteps: &[usize],
    config: &AppConfig,
) -> Result<ComparisonOutcome> {
    let snn = build_snn(model, &config.conversion, calib)?;
    let ann_acc = ann_accuracy(snn.ann(), test)?;

    let mut results = Vec::with_capacity(methods.len());
    let mut gap_stats = Vec::new();
    let gap_t = config.calibration.t.min(32);
    let gap_data = calib.take(256.min(calib.len()), calib.split)?;

    for method in methods {
        let variant = match method {
            Method::Vanilla => snn.clone(),
            Method::Ftbc => ftbc_calibrate(snn.ann(), &snn, calib, &config.calibration)?.0,
            Method::Avgbias => avg_bias_calibrate(snn.ann(), &snn, calib, &config.calibration)?,
        };
        let accuracy = evaluate(&variant, test, timesteps)?;
        let gaps = expected_gap(variant.ann(), &variant, &gap_data, gap_t)?;
        for layer in 0..variant.layer_count() {
            gap_stats.push(GapStat {
                method: method.name().to_string(),
                layer,
                mean_abs_gap: (1..=gap_t).map(|t| gaps.norm(layer, t)).sum::<f64>()
                    / gap_t as f64,
            });
        }
        results.push(MethodResult {
            method: method.name().to_string(),
            accuracy_per_t: accuracy,
        });
    }
    Ok(ComparisonOutcome {
        ann_accuracy: ann_acc,
        methods: results,
        gap_stats,
    })
}
