//! `lvseg` command-line front end.
//!
//! Every command prints its resolved configuration as one JSON line before it
//! runs. Failures print a single `error kind=<kind> message=<text>` line to
//! stderr and exit non-zero. Log verbosity follows `RUST_LOG`.

mod pgm;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lvseg::augment::{self, AugmentConfig};
use lvseg::data::{split_patients, store, synth_phantom, CineSample, Subset};
use lvseg::engine::checkpoint;
use lvseg::engine::{self, LossKind, OptimizerKind, TrainConfig};
use lvseg::metrics::ApdMode;
use lvseg::model::{build, Activation, UNetSpec, Variant};
use lvseg::{gradsuite, Exec};

/// A failure reported as `error kind=… message=…`.
#[derive(Debug)]
struct Failure {
    kind: String,
    message: String,
}

impl Failure {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into() }
    }
}

impl From<lvseg::Error> for Failure {
    fn from(e: lvseg::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        lvseg::Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "lvseg", version, about = "Left-ventricle segmentation with normalized U-Net variants")]
struct Cli {
    /// Run every batch-level loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Convert DICOM slices and expert contours into a dataset.
    ImportDicom(ImportArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write a per-slice CSV report.
    Eval(EvalArgs),
    /// Write before/after PGM images of the augmentation pipeline.
    AugmentPreview(PreviewArgs),
    /// Finite-difference check of every differentiable op and each variant.
    Gradcheck(GradcheckArgs),
    /// Render evaluation CSVs as one comparison table.
    Report(ReportArgs),
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// Split ratio `train,validation,test`.
fn parse_ratio(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a + b + c > 0 => Ok((a, b, c)),
        _ => Err(format!("expected three non-negative integers like 4,0,1, got {s:?}")),
    }
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Case split ratio train,validation,test.
    #[arg(long, default_value = "4,0,1", value_parser = parse_ratio)]
    split: (usize, usize, usize),
}

#[derive(Args, Debug, Serialize)]
struct ImportArgs {
    #[arg(long)]
    dicom_dir: PathBuf,
    #[arg(long)]
    contour_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed of the patient-wise split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Patient split ratio train,validation,test.
    #[arg(long, default_value = "1,1,1", value_parser = parse_ratio)]
    split: (usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gbu", value_parser = parse_from_str::<Variant>)]
    variant: Variant,
    #[arg(long, default_value = "elu", value_parser = parse_from_str::<Activation>)]
    activation: Activation,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    augment: Toggle,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam", value_parser = parse_from_str::<OptimizerKind>)]
    optimizer: OptimizerKind,
    #[arg(long, default_value = "soft_dice", value_parser = parse_from_str::<LossKind>)]
    loss: LossKind,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    /// Group count of the group-normalized variants.
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[arg(long, default_value_t = 0.1)]
    dropconnect: f64,
    /// Also write the per-epoch history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let model = UNetSpec {
            depth: self.depth,
            base_channels: self.base_channels,
            kernel_size: self.kernel_size,
            variant: self.variant,
            activation: self.activation,
            dropconnect_rate: self.dropconnect,
            groups: self.groups,
            ..UNetSpec::default()
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            optimizer: self.optimizer,
            loss: self.loss,
            seed: self.seed,
            augment: self.augment == Toggle::On,
            augment_config: AugmentConfig::default(),
            model,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_from_str::<Subset>)]
    split: Subset,
    /// Per-slice CSV output.
    #[arg(long)]
    report: PathBuf,
    /// Average both directed contour distances.
    #[arg(long)]
    apd_symmetric: bool,
}

#[derive(Args, Debug, Serialize)]
struct PreviewArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the PGM files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of samples to preview.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Probability of each transform.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = gradsuite::DEFAULT_STEP)]
    step: f64,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Evaluation CSV; repeat for one row per file.
    #[arg(long, required = true)]
    csv: Vec<PathBuf>,
}

fn print_config(value: &impl Serialize) -> CliResult {
    let line = serde_json::to_string(value).map_err(|e| Failure::new("json", e.to_string()))?;
    println!("config {line}");
    Ok(())
}

fn split_and_save(out: &Path, samples: &[CineSample], ratio: (usize, usize, usize), seed: u64) -> CliResult {
    let split = split_patients(&lvseg::data::case_ids(samples), ratio, seed)?;
    store::save_dataset(out, samples, Some(&split))?;
    println!(
        "wrote {} samples to {} (cases train {}, validation {}, test {})",
        samples.len(),
        out.display(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn run_synth(a: &SynthArgs) -> CliResult {
    let samples = synth_phantom(a.count, a.size, a.seed)?;
    split_and_save(&a.out, &samples, a.split, a.seed)
}

fn run_import(a: &ImportArgs) -> CliResult {
    let samples = store::import_dicom(&a.dicom_dir, &a.contour_dir)?;
    split_and_save(&a.out, &samples, a.split, a.seed)
}

fn load_subset(dir: &Path, subset: Subset) -> CliResult<Vec<CineSample>> {
    let samples = store::load_dataset(dir)?;
    let split = store::load_split(dir, &samples)?;
    Ok(split.select(&samples, subset).into_iter().cloned().collect())
}

fn run_train(a: &TrainArgs, exec: Exec) -> CliResult {
    let cfg = a.config();
    print_config(&serde_json::json!({ "resolved_train_config": cfg }))?;
    cfg.validate()?;
    let train = load_subset(&a.data, Subset::Train)?;
    let validation = load_subset(&a.data, Subset::Validation)?;
    let model = build(&cfg.model, cfg.seed)?;
    println!(
        "training {} ({} parameters) on {} samples, validating on {}",
        cfg.model.variant,
        model.num_parameters(),
        train.len(),
        validation.len()
    );
    let outcome = engine::train(model, &train, &validation, &cfg, exec)?;
    checkpoint::save(&a.out, &outcome.model, Some(&cfg), &outcome.history)?;
    if let Some(path) = &a.history {
        engine::write_history_csv(&outcome.history, std::fs::File::create(path)?)?;
    }
    if let Some(last) = outcome.history.last() {
        println!("final epoch {}: train loss {:.5}, validation dice {:.4}", last.epoch, last.train_loss, last.val_dice);
    }
    if let Some(best) = outcome.best_epoch {
        println!("kept epoch {best}; checkpoint written to {}", a.out.display());
    }
    Ok(())
}

fn run_eval(a: &EvalArgs, exec: Exec) -> CliResult {
    let ck = checkpoint::load(&a.ckpt)?;
    let samples = load_subset(&a.data, a.split)?;
    let refs: Vec<&CineSample> = samples.iter().collect();
    let mode = if a.apd_symmetric { ApdMode::Symmetric } else { ApdMode::Directed };
    let augmented = ck.manifest.train_config.as_ref().map(|c| c.augment);
    let report = engine::evaluate(&ck.model, &refs, mode, exec)?
        .with_label("variant", ck.manifest.model.variant.name())
        .with_label("augment", match augmented {
            Some(true) => "on",
            Some(false) => "off",
            None => "unknown",
        })
        .with_label("split", &format!("{:?}", a.split).to_lowercase())
        .with_label("apd_mode", &format!("{mode:?}").to_lowercase());
    report.write_csv(std::fs::File::create(&a.report)?)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} slices: dice {:.4} ± {:.4}, sensitivity {}, APD {} mm ({} excluded), {} empty predictions",
        report.records.len(),
        report.dice_mean,
        report.dice_std,
        fmt(report.sensitivity_mean),
        fmt(report.apd_mean),
        report.apd_excluded,
        report.empty_predictions
    );
    Ok(())
}

fn run_preview(a: &PreviewArgs, exec: Exec) -> CliResult {
    let cfg = AugmentConfig { p_elastic: a.p, p_rotate: a.p, p_affine: a.p, seed: a.seed, ..AugmentConfig::default() };
    print_config(&serde_json::json!({ "resolved_augment_config": cfg }))?;
    cfg.validate()?;
    let samples = store::load_dataset(&a.data)?;
    let chosen: Vec<&CineSample> = samples.iter().take(a.count).collect();
    let indices: Vec<u64> = (0..chosen.len() as u64).collect();
    let augmented = augment::augment_batch(exec, &chosen, &cfg, &indices)?;
    std::fs::create_dir_all(&a.out)?;
    for (before, after) in chosen.iter().zip(&augmented) {
        let id = store::sample_id(before);
        pgm::write_image(&a.out.join(format!("{id}_image_before.pgm")), &before.image)?;
        pgm::write_image(&a.out.join(format!("{id}_image_after.pgm")), &after.image)?;
        pgm::write_mask(&a.out.join(format!("{id}_mask_before.pgm")), &before.mask)?;
        pgm::write_mask(&a.out.join(format!("{id}_mask_after.pgm")), &after.mask)?;
    }
    println!("wrote {} before/after pairs to {}", chosen.len(), a.out.display());
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> CliResult {
    let entries = gradsuite::run(a.step)?;
    println!("{:<28} {:>12} {:>8}  status", "op", "max rel err", "coords");
    for e in &entries {
        let status = if e.passed() { "ok" } else { "FAIL" };
        println!("{:<28} {:>12.3e} {:>8}  {status}", e.name, e.max_rel_error, e.coordinates);
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks within {:e}", entries.len(), gradsuite::TOLERANCE);
        Ok(())
    } else {
        Err(Failure::new("gradcheck_failed", format!("{} above {:e}: {}", failed.len(), gradsuite::TOLERANCE, failed.join(", "))))
    }
}

fn run_report(a: &ReportArgs) -> CliResult {
    let mut rows = Vec::with_capacity(a.csv.len());
    for path in &a.csv {
        let file = std::fs::File::open(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
        rows.push(lvseg::metrics::MetricsReport::read_csv(std::io::BufReader::new(file))?);
    }
    print!("{}", report::render(&rows));
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    print_config(&serde_json::json!({ "sequential": cli.sequential, "args": cli.command }))?;
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::ImportDicom(a) => run_import(a),
        Command::Train(a) => run_train(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::AugmentPreview(a) => run_preview(a, exec),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Report(a) => run_report(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error kind={} message={}", f.kind, one_line(&f.message));
            ExitCode::FAILURE
        }
    }
}
