//! Command-line front end: `train`, `init-stats` and `grad-check`.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
//! missing input, 3 training collapse.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, config_hash};
use crate::data::{load_dir, synthetic_bernoulli, DatasetHandle};
use crate::diagnostics::{self, GradCheckOptions, DEFAULT_BINS};
use crate::eiinit::{calibrate, InitMode, InitReport};
use crate::eiprop::StabilizationConfig;
use crate::error::{Error, Result};
use crate::network::{Architecture, ModelSpec, Network};
use crate::tensor::Scalar;
use crate::train::{EpochMetrics, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_COLLAPSE: i32 = 3;

/// Root for run directories when `--out` is not given.
pub const RUN_ROOT_ENV: &str = "EISNN_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(name = "eisnn", version, about = "E-I spiking network training and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Calibrate, train and write metrics, checkpoints and diagnostics.
    Train(TrainArgs),
    /// Run data-dependent initialization only and report current statistics.
    InitStats(InitStatsArgs),
    /// Compare backpropagated gradients to finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// TOML file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (MNIST IDX or CIFAR-10 binary).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `mlp:<in>,<hidden>...,<classes>` or `vgg8_small[:<widths>]`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `ei`, `kaiming-ee-ie` or `kaiming-all`.
    #[arg(long)]
    pub init: Option<String>,
    /// `adaptive`, `none` or `eps=<value>`.
    #[arg(long)]
    pub stabilize: Option<String>,
    #[arg(long, value_enum)]
    pub grad_scale: Option<Switch>,
    #[arg(long, value_enum)]
    pub augment: Option<Switch>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_subset: Option<usize>,
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Test samples used for per-epoch current histograms.
    #[arg(long)]
    pub diag_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub dtype: Option<Dtype>,
    /// Run directory; defaults to `$EISNN_RUN_ROOT/<arch>-<config hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct InitStatsArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Replace the dataset with Bernoulli inputs of this firing probability.
    #[arg(long)]
    pub synthetic_bernoulli: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value = "ei")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibration batch size for real data.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub arch: Option<String>,
    pub out: Option<PathBuf>,
    pub dtype: Option<Dtype>,
    pub diag_samples: Option<usize>,
    pub train: TrainConfig,
}

/// Fully resolved settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub data: PathBuf,
    pub arch: String,
    pub dtype: Dtype,
    pub diag_samples: usize,
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ResolvedTrain,
    pub model: ModelSpec,
    pub seed: u64,
    pub config_hash: String,
    pub train_checksum: String,
    pub test_checksum: String,
    pub code_version: String,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseTelemetry {
    pub epoch: usize,
    pub reason: String,
    pub metrics: EpochMetrics,
    pub firing_rates: Option<Vec<f64>>,
    pub min_constrained: f64,
    pub non_finite_params: Vec<String>,
}

/// Errors that mean the invocation itself was wrong.
fn usage(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Parameter(_) | Error::Io(_))
}

fn fail(context: &str, e: &Error, code: i32) -> i32 {
    eprintln!("error: {context}: {e}");
    code
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::InitStats(a) => cmd_init_stats(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
    }
}

pub fn resolve_train(args: &TrainArgs) -> Result<ResolvedTrain> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let mut t = file.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.lr_peak = v;
    }
    if let Some(v) = args.warmup {
        t.warmup_epochs = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = &args.init {
        t.init = InitMode::parse(v).map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(v) = &args.stabilize {
        t.stabilization = StabilizationConfig::parse(v).map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(v) = args.grad_scale {
        t.gradient_scaling = v == Switch::On;
    }
    if let Some(v) = args.augment {
        t.augment.enabled = v == Switch::On;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if args.train_subset.is_some() {
        t.train_subset = args.train_subset;
    }
    if args.test_subset.is_some() {
        t.test_subset = args.test_subset;
    }
    if t.warmup_epochs >= t.epochs && args.warmup.is_none() && args.epochs.is_some() {
        t.warmup_epochs = t.epochs.saturating_sub(1).min(t.warmup_epochs);
    }
    t.validate()?;
    let data = args
        .data
        .clone()
        .or(file.data)
        .ok_or_else(|| Error::Config("no dataset given (--data)".into()))?;
    let arch = args
        .arch
        .clone()
        .or(file.arch)
        .ok_or_else(|| Error::Config("no architecture given (--arch)".into()))?;
    Ok(ResolvedTrain {
        data,
        arch,
        dtype: args.dtype.or(file.dtype).unwrap_or_default(),
        diag_samples: args.diag_samples.or(file.diag_samples).unwrap_or(64),
        train: t,
        out: args.out.clone().or(file.out),
    })
}

fn load_data(dir: &Path) -> Result<(DatasetHandle, DatasetHandle)> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} not found", dir.display())));
    }
    load_dir(dir)
}

fn default_run_dir(spec: &ModelSpec, hash: &str) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let family = match spec.arch {
        Architecture::Mlp { .. } => "mlp",
        Architecture::Vgg8Small { .. } => "vgg8_small",
    };
    root.join(format!("{family}-{hash}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> i32 {
    let cfg = match resolve_train(args) {
        Ok(c) => c,
        Err(e) => return fail("train", &e, EXIT_USAGE),
    };
    let (train, test) = match load_data(&cfg.data) {
        Ok(d) => d,
        Err(e) => return fail("loading dataset", &e, EXIT_USAGE),
    };
    let spec = match ModelSpec::parse(&cfg.arch, train.shape, train.classes) {
        Ok(s) => s,
        Err(e) => return fail("architecture", &e, EXIT_USAGE),
    };
    let result = match cfg.dtype {
        Dtype::F32 => run_training::<f32>(&cfg, spec, &train, &test),
        Dtype::F64 => run_training::<f64>(&cfg, spec, &train, &test),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = if usage(&e) { EXIT_USAGE } else { EXIT_CHECK_FAILED };
            fail("train", &e, code)
        }
    }
}

fn run_training<S: Scalar>(
    cfg: &ResolvedTrain,
    spec: ModelSpec,
    train: &DatasetHandle,
    test: &DatasetHandle,
) -> Result<i32> {
    let hash = config_hash(&spec, &cfg.train);
    let out = cfg.out.clone().unwrap_or_else(|| default_run_dir(&spec, &hash));
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        return Err(Error::Config(format!(
            "{} already holds a run; choose another --out",
            out.display()
        )));
    }
    std::fs::create_dir_all(&out)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        model: spec.clone(),
        seed: cfg.train.seed,
        config_hash: hash,
        train_checksum: train.checksum.clone(),
        test_checksum: test.checksum.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        out_dir: out.clone(),
    };
    write_json(&manifest_path, &manifest)?;
    eprintln!("run directory {}", out.display());

    let (mut trainer, reports) = Trainer::<S>::new(spec, cfg.train.clone(), train)?;
    write_json(&out.join("init_report.json"), &reports)?;
    let diag_dir = out.join("diagnostics");
    let n_diag = cfg.diag_samples.min(test.len());
    let diag_batch = if n_diag > 0 {
        Some(test.batch::<S>(&(0..n_diag).collect::<Vec<_>>())?)
    } else {
        None
    };
    let all_layers: Vec<usize> = (0..trainer.net.layers.len()).collect();
    if let Some((x, labels)) = &diag_batch {
        let h = diagnostics::collect_currents(&trainer.net, x, &all_layers, DEFAULT_BINS, None)?;
        diagnostics::write_histograms(&diag_dir.join("init"), "currents", &h)?;
        let g = diagnostics::grad_norm_report(&trainer.net, x, labels)?;
        std::fs::write(diag_dir.join("init").join("grad_norms.csv"), diagnostics::grad_norms_csv(&g))?;
    }

    let ckpt = cfg
        .train
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.ckpt"));
    for _ in 0..cfg.train.epochs {
        let m = trainer.train_epoch(train, Some(test))?;
        write_json(&out.join("metrics.json"), &trainer.history)?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  test {}  lr {:.5}  {:.1}s",
            m.epoch,
            m.loss,
            m.train_acc,
            m.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
            m.lr,
            m.seconds
        );
        if m.collapse {
            let reason = m.collapse_reason.clone().unwrap_or_default();
            eprintln!("collapse at epoch {}: {reason}", m.epoch);
            let telemetry = CollapseTelemetry {
                epoch: m.epoch,
                reason,
                firing_rates: diag_batch
                    .as_ref()
                    .and_then(|(x, _)| diagnostics::firing_rates(&trainer.net, x).ok()),
                min_constrained: trainer.net.min_constrained(),
                non_finite_params: trainer
                    .net
                    .params()
                    .into_iter()
                    .filter(|(_, p)| !p.value.all_finite())
                    .map(|(n, _)| n)
                    .collect(),
                metrics: m,
            };
            write_json(&out.join("collapse.json"), &telemetry)?;
            return Ok(EXIT_COLLAPSE);
        }
        if let Some((x, _)) = &diag_batch {
            let epoch_dir = diag_dir.join(format!("epoch_{:03}", m.epoch));
            let h = diagnostics::collect_currents(&trainer.net, x, &all_layers, DEFAULT_BINS, Some(m.epoch))?;
            diagnostics::write_histograms(&epoch_dir, "currents", &h)?;
            write_json(&epoch_dir.join("firing_rates.json"), &diagnostics::firing_rates(&trainer.net, x)?)?;
        }
        checkpoint::save(&ckpt, &trainer)?;
    }
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitStatsOutput {
    pub arch: String,
    pub init: InitMode,
    pub samples: usize,
    pub dataset_checksum: String,
    pub layers: Vec<InitReport>,
}

/// Calibrates a freshly built network on one batch and returns the reports.
pub fn init_stats(args: &InitStatsArgs) -> Result<InitStatsOutput> {
    let mode = InitMode::parse(&args.init).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = match (args.synthetic_bernoulli, &args.data) {
        (Some(p), _) => {
            let (d, classes) = dense_dims(&args.arch)?;
            synthetic_bernoulli(args.samples, d, p, classes, &mut rng)?
        }
        (None, Some(dir)) => load_data(dir)?.0,
        (None, None) => return Err(Error::Config("need --data or --synthetic-bernoulli".into())),
    };
    let spec = ModelSpec::parse(&args.arch, data.shape, data.classes)?;
    let n = if args.synthetic_bernoulli.is_some() {
        data.len()
    } else {
        args.batch_size.min(data.len())
    };
    let mut net = Network::<f64>::new(spec, &mut rng)?;
    let (x, _) = data.batch::<f64>(&(0..n).collect::<Vec<_>>())?;
    let layers = calibrate(&mut net, &x, mode, &mut rng)?;
    Ok(InitStatsOutput {
        arch: net.spec.arch_string(),
        init: mode,
        samples: n,
        dataset_checksum: data.checksum,
        layers,
    })
}

/// Input width and class count from a dense architecture string.
fn dense_dims(arch: &str) -> Result<(usize, usize)> {
    let widths = arch
        .strip_prefix("mlp:")
        .ok_or_else(|| Error::Config("synthetic data needs an mlp architecture".into()))?
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("bad architecture '{arch}'")))?;
    match (widths.first(), widths.last()) {
        (Some(&d), Some(&c)) if widths.len() >= 3 && c <= 256 => Ok((d, c)),
        _ => Err(Error::Config(format!("bad architecture '{arch}'"))),
    }
}

pub fn cmd_init_stats(args: &InitStatsArgs) -> i32 {
    let out = match init_stats(args) {
        Ok(o) => o,
        Err(e) => {
            let code = if usage(&e) { EXIT_USAGE } else { EXIT_CHECK_FAILED };
            return fail("init-stats", &e, code);
        }
    };
    let json = serde_json::to_string_pretty(&out).expect("report serializes");
    println!("{json}");
    if let Some(p) = &args.out {
        if let Err(e) = std::fs::write(p, &json) {
            return fail("writing report", &Error::Io(e), EXIT_USAGE);
        }
    }
    EXIT_OK
}

pub fn cmd_grad_check(args: &GradCheckArgs) -> i32 {
    let opts = GradCheckOptions {
        seed: args.seed,
        corrupt_backward: args.corrupt_backward,
        ..GradCheckOptions::default()
    };
    let report = match diagnostics::grad_check(&opts) {
        Ok(r) => r,
        Err(e) => return fail("grad-check", &e, EXIT_CHECK_FAILED),
    };
    println!(
        "{} ({} parameters, smallest divisive term {:.4})",
        report.arch, report.num_params, report.min_denominator
    );
    for p in &report.params {
        println!("{:<14} max rel err {:.3e}", p.name, p.max_rel_err);
    }
    println!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_err, report.tolerance);
    if let Some(path) = &args.out {
        if let Err(e) = write_json(path, &report) {
            return fail("writing report", &e, EXIT_USAGE);
        }
    }
    if report.passed() {
        EXIT_OK
    } else if let Some(worst) = report
        .params
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    {
        eprintln!(
            "FAILED: worst parameter {} element {}: analytic {:.6e}, numeric {:.6e}",
            worst.name, worst.worst_element, worst.analytic, worst.numeric
        );
        EXIT_CHECK_FAILED
    } else {
        EXIT_CHECK_FAILED
    }
}
