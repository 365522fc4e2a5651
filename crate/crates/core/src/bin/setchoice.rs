//! Command-line front end. Failures print `{"error":{"kind":..,"message":..}}`
//! on stderr and exit nonzero.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use setchoice::datagen::{generate, Family, GeneratorSpec};
use setchoice::dataset::DatasetFile;
use setchoice::harness::{
    append_records, cross_validate, evaluate, fit_all, read_records, report, report_csv, results_dir,
    size_generalization_sweep, DatasetSource, ExperimentConfig, ModelName,
};
use setchoice::letor::{ingest_groups, parse_letor};
use setchoice::losses::LossKind;
use setchoice::{AnyModel, ChoiceModel, Error, Result};

#[derive(Parser)]
#[command(name = "setchoice", version, about = "Learn and evaluate context-dependent choice functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Generate(GenerateArgs),
    /// Convert a LETOR-format file into choice tasks.
    Ingest(IngestArgs),
    /// Train a model on a whole dataset and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset, or cross-validate a config.
    Evaluate(EvaluateArgs),
    /// Evaluate a discrete-choice checkpoint across task sizes.
    Sweep(SweepArgs),
    /// Summarise result records as a mean/std CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    family: String,
    /// Objects per task.
    #[arg(long = "n")]
    task_size: usize,
    /// Number of tasks.
    #[arg(long = "N")]
    instances: usize,
    /// Feature dimension (defaults to 2 for pareto/hypervolume, 16 otherwise).
    #[arg(long = "d")]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    discrete: bool,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    pool_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    first_instance: u64,
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, default_value = "letor")]
    format: String,
    #[arg(long)]
    task_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    input: PathBuf,
    out: PathBuf,
}

/// Flags that override values of a config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file; replaces the config's dataset source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(data) = &self.data {
            cfg.dataset = DatasetSource {
                name: cfg.dataset.name.take(),
                path: Some(data.clone()),
                generate: None,
            };
        }
        if let Some(m) = &self.model {
            cfg.model.name = m.parse::<ModelName>()?;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr0 = v;
        }
        if let Some(v) = self.units {
            t.units = v;
        }
        if let Some(v) = self.hidden_layers {
            t.hidden_layers = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.l2 {
            t.l2 = v;
        }
        if let Some(v) = &self.loss {
            t.loss = Some(LossKind::from_name(v)?);
        }
        if let Some(v) = self.seed {
            t.seed = v;
            cfg.cv.seed = v;
        }
        if let Some(v) = self.folds {
            cfg.cv.folds = v;
        }
        if let Some(v) = self.repeats {
            cfg.cv.repeats = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Checkpoint to score on `--data`; without it the config is cross-validated.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Results directory for cross-validation records.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file whose header carries the generator spec.
    #[arg(long)]
    data: PathBuf,
    /// Sizes as `lo..hi` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "3..16")]
    sizes: String,
    #[arg(long, default_value_t = 500)]
    instances: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// A records file or a directory of `*.jsonl` files.
    path: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let bad = |e: std::num::ParseIntError| Error::Config(format!("bad size list '{s}': {e}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(bad)?, hi.trim().parse().map_err(bad)?);
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(bad)).collect()
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let family = Family::from_name(&a.family)?;
    let dim = a.dim.unwrap_or(match family {
        Family::Pareto | Family::Hypervolume => 2,
        Family::Mode | Family::Unique => 16,
    });
    let mut spec = GeneratorSpec::new(family, a.instances, a.task_size, dim, a.seed);
    spec.noise = a.noise;
    spec.discrete |= a.discrete;
    if let Some(c) = a.classes {
        spec.classes = c;
    }
    if let Some(p) = a.pool_per_class {
        spec.pool_per_class = p;
    }
    spec.first_instance = a.first_instance;
    let data = generate(&spec)?;
    let spec_json = serde_json::to_value(&spec).expect("spec serialises");
    DatasetFile::new(data, Some(spec_json)).save(&a.out)?;
    print_json(&json!({"written": a.out, "instances": spec.instances}));
    Ok(())
}

fn run_ingest(a: IngestArgs) -> Result<()> {
    if a.format != "letor" {
        return Err(Error::Config(format!("unsupported format '{}'", a.format)));
    }
    let groups = parse_letor(BufReader::new(fs::File::open(&a.input)?))?;
    let (data, warnings) = ingest_groups(&groups, a.task_size, a.seed)?;
    for w in &warnings {
        eprintln!("{}", json!({"warning": {"qid": w.qid, "reason": w.reason}}));
    }
    let spec = json!({"format": "letor", "source": a.input, "task_size": a.task_size, "seed": a.seed});
    let count = data.len();
    DatasetFile::new(data, Some(spec)).save(&a.out)?;
    print_json(&json!({"written": a.out, "instances": count, "skipped_groups": warnings.len()}));
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let data = cfg.dataset.load()?;
    let model = fit_all(&cfg, &data)?;
    model.save(&a.out)?;
    print_json(&json!({"written": a.out, "model": model.name(), "threshold": model.threshold()}));
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    if let Some(ckpt) = &a.checkpoint {
        let data_path = a
            .overrides
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("--checkpoint needs --data".into()))?;
        let model = AnyModel::load(ckpt)?;
        let data = DatasetFile::load(data_path)?.dataset;
        let metrics: serde_json::Map<String, serde_json::Value> =
            evaluate(&model, &data)?.into_iter().map(|(k, v)| (k, json!(v))).collect();
        print_json(&json!({"model": model.name(), "metrics": metrics}));
        return Ok(());
    }
    let cfg = a.overrides.resolve()?;
    let records = cross_validate(&cfg)?;
    let dir = results_dir(a.results.as_deref());
    let file = dir.join(format!("{}__{}.jsonl", cfg.dataset.label(), cfg.model.name));
    append_records(&file, &records)?;
    print!("{}", report_csv(&report(&records)?));
    log::info!("records appended to {}", file.display());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let model = AnyModel::load(&a.checkpoint)?;
    let spec = DatasetFile::load(&a.data)?
        .generator_spec()
        .ok_or_else(|| Error::Config(format!("{} carries no generator spec", a.data.display())))?;
    for r in size_generalization_sweep(&model, &spec, &parse_sizes(&a.sizes)?, a.instances)? {
        print_json(&serde_json::to_value(r).expect("records serialise"));
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let path = a.path.unwrap_or_else(|| results_dir(None));
    let csv = report_csv(&report(&read_records(&path)?)?);
    match a.out {
        Some(out) => write_file(&out, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message}}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    let result = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Ingest(a) => run_ingest(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
