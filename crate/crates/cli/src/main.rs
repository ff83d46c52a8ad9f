//! `censurv`: ingest survival data, train models, evaluate and explain.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other failure (I/O and the like) |
//! | 2 | invalid config, input data or dataset |
//! | 3 | training diverged |
//! | 4 | model family incompatible with the dataset's context |
//! | 5 | metric undefined on the data (e.g. no events) |
//! | 6 | the model family has no attribute-level explanation |
//! | 7 | unknown patient id |

mod config;
mod svg;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cen_survival::likelihood::{top_k_features, write_curve_csv, write_explanation_csv};
use cen_survival::metrics::{evaluate, kfold_eval, write_reports_csv, MetricError};
use cen_survival::models::{fit, ModelArtifact, ModelError, ModelSpec};
use cen_survival::pipelines::{
    gen_synthetic, ingest_physionet, ingest_support2, split_dataset, GeneratorFamily, PipelineError,
};
use cen_survival::survival::{read_dataset, write_dataset, Dataset, SurvivalError};

use config::RunConfig;

/// Bad flags, config or input that is not covered by a library error type.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
struct UnknownPatient(String);

impl std::fmt::Display for UnknownPatient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no patient with id {:?} in the dataset", self.0)
    }
}

impl std::error::Error for UnknownPatient {}

#[derive(Parser)]
#[command(name = "censurv", version, about = "Discrete-time survival models with contextual explanations")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset file from raw inputs or the synthetic generator.
    Ingest(IngestArgs),
    /// Fit a model and write an artifact.
    Train(TrainArgs),
    /// Score an artifact on a dataset, or cross-validate a model spec.
    Eval(EvalArgs),
    /// Write one patient's explanation and survival curve.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Support2,
    Physionet,
    Synthetic,
}

#[derive(Args)]
struct IngestArgs {
    source: Source,
    /// SUPPORT2 table, or PhysioNet directory of per-patient files.
    #[arg(long)]
    input: Option<PathBuf>,
    /// PhysioNet outcomes table.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write train/valid/test dataset files into this directory.
    #[arg(long)]
    splits_dir: Option<PathBuf>,
    /// Synthetic only: write the generating weights as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d_x: Option<usize>,
    #[arg(long)]
    d_c: Option<usize>,
    #[arg(long)]
    censoring_rate: Option<f64>,
    /// Synthetic generator family: crf or cen.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    series_len: Option<usize>,
}

#[derive(Args, Clone)]
struct SpecOverrides {
    /// Model family: cox, aalen, crf, mlp-crf, lstm-crf, mlp-cen, lstm-cen.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Early-stopping set; without it a share of `data` is held out.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained artifact to score (single-split mode).
    #[arg(long, conflicts_with = "kfold")]
    artifact: Option<PathBuf>,
    /// Retrain the model spec on k folds instead of scoring an artifact.
    #[arg(long)]
    kfold: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model name in the report; defaults to the family.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    patient: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep the k attributes with the largest mean |weight|.
    #[arg(long)]
    top_k: Option<usize>,
    /// Also render SVG figures.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_env("CENSURV_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn model_code(e: &ModelError) -> Option<u8> {
    match e {
        ModelError::Diverged { .. } => Some(3),
        ModelError::IncompatibleContext { .. } => Some(4),
        ModelError::ExplanationUnavailable(_) => Some(6),
        ModelError::InvalidData(_)
        | ModelError::InvalidSpec(_)
        | ModelError::DimMismatch(_)
        | ModelError::NoEvents
        | ModelError::Format(_)
        | ModelError::Survival(_) => Some(2),
        _ => None,
    }
}

fn metric_code(e: &MetricError) -> u8 {
    match e {
        MetricError::Model(m) => model_code(m).unwrap_or(1),
        MetricError::Fold { source, .. } => metric_code(source),
        _ => 5,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            if let Some(code) = model_code(m) {
                return code;
            }
        }
        if let Some(m) = cause.downcast_ref::<MetricError>() {
            return metric_code(m);
        }
        if cause.is::<UnknownPatient>() {
            return 7;
        }
        if cause.is::<PipelineError>() || cause.is::<SurvivalError>() || cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed);
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, cfg, seed),
        Command::Train(a) => cmd_train(a, cfg, seed),
        Command::Eval(a) => cmd_eval(a, cfg, seed),
        Command::Explain(a) => cmd_explain(a, cfg),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn save_dataset(d: &Dataset, path: &Path) -> anyhow::Result<()> {
    write_dataset(d, create(path)?).with_context(|| format!("writing {}", path.display()))
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| UsageError(format!("{flag} is required for this source")).into())
}

fn summary(d: &Dataset) -> String {
    format!(
        "records={} censored={} censoring_rate={:.4} grid={} d_x={} d_c={} context={}",
        d.len(),
        d.records.iter().filter(|r| !r.label.event).count(),
        d.censoring_rate(),
        d.grid.describe(),
        d.d_x(),
        d.d_c(),
        d.context_kind
    )
}

fn cmd_ingest(a: IngestArgs, cfg: RunConfig, seed: Option<u64>) -> anyhow::Result<()> {
    // split sizes and seed for --splits-dir
    let (d, sizes, split_seed) = match a.source {
        Source::Support2 => {
            let mut c = cfg.ingest.support2;
            if let Some(s) = seed {
                c.seed = s;
            }
            (ingest_support2(need(&a.input, "--input")?, &c)?, Some(c.splits), c.seed)
        }
        Source::Physionet => {
            let d = ingest_physionet(
                need(&a.input, "--input")?,
                need(&a.outcomes, "--outcomes")?,
                &cfg.ingest.physionet,
            )?;
            (d, None, seed.unwrap_or(0))
        }
        Source::Synthetic => {
            let mut s = cfg.ingest.synthetic;
            if let Some(v) = seed {
                s.seed = v;
            }
            s.n = a.n.unwrap_or(s.n);
            s.m = a.m.unwrap_or(s.m);
            s.d_x = a.d_x.unwrap_or(s.d_x);
            s.d_c = a.d_c.unwrap_or(s.d_c);
            s.censoring_rate = a.censoring_rate.unwrap_or(s.censoring_rate);
            s.series_len = a.series_len.unwrap_or(s.series_len);
            if let Some(g) = &a.generator {
                s.family = match g.as_str() {
                    "crf" => GeneratorFamily::Crf,
                    "cen" => GeneratorFamily::Cen,
                    other => return Err(UsageError(format!("unknown generator {other:?}")).into()),
                };
            }
            let (d, truth) = gen_synthetic(&s)?;
            if let Some(p) = &a.truth {
                let mut w = create(p)?;
                serde_json::to_writer(&mut w, &truth)?;
                w.flush()?;
            }
            (d, None, s.seed)
        }
    };
    save_dataset(&d, &a.out)?;
    info!("wrote {}", a.out.display());
    println!("{}", summary(&d));

    if let Some(dir) = &a.splits_dir {
        // 80/10/10 unless the source defines its own sizes
        let sizes = sizes.unwrap_or_else(|| {
            let n = d.len();
            [n - 2 * (n / 10), n / 10, n / 10]
        });
        let s = split_dataset(&d, sizes, split_seed);
        for (name, part) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
            let p = dir.join(format!("{name}.jsonl"));
            save_dataset(part, &p)?;
            println!("{name}: {}", summary(part));
        }
    }
    Ok(())
}

fn model_spec(cfg: &RunConfig, o: &SpecOverrides, seed: Option<u64>) -> anyhow::Result<ModelSpec> {
    let mut spec = cfg.model_spec(o.family.as_deref())?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.epochs = o.epochs.unwrap_or(spec.epochs);
    spec.patience = o.patience.unwrap_or(spec.patience);
    spec.optimizer.lr = o.lr.unwrap_or(spec.optimizer.lr);
    spec.optimizer.batch_size = o.batch_size.unwrap_or(spec.optimizer.batch_size);
    spec.validate()?;
    Ok(spec)
}

fn cmd_train(a: TrainArgs, cfg: RunConfig, seed: Option<u64>) -> anyhow::Result<()> {
    let spec = model_spec(&cfg, &a.spec, seed)?;
    let data = load_dataset(&a.data)?;
    let (train, valid) = match &a.valid {
        Some(p) => (data, load_dataset(p)?),
        None => {
            let frac = a.valid_fraction.unwrap_or(cfg.train.valid_fraction);
            if !(0.0..1.0).contains(&frac) {
                return Err(UsageError(format!("valid_fraction {frac} is outside [0, 1)")).into());
            }
            let n_valid = (frac * data.len() as f64).floor() as usize;
            let s = split_dataset(&data, [data.len() - n_valid, n_valid, 0], spec.seed);
            (s.train, s.valid)
        }
    };
    info!(
        "training {} on {} records ({} held out for early stopping)",
        spec.family,
        train.len(),
        valid.len()
    );
    let artifact = fit(&spec, &train, &valid)?;
    let meta = &artifact.meta;
    for e in &meta.history {
        info!("epoch {:>4} train_loss {:.6} valid_loss {:.6}", e.epoch, e.train_loss, e.valid_loss);
    }
    for note in &meta.notes {
        warn!("{note}");
    }
    artifact.write_to(create(&a.out)?)?;
    info!("wrote {}", a.out.display());
    let fmt = |v: Option<f64>| v.map_or_else(|| "na".to_owned(), |v| format!("{v:.6}"));
    println!(
        "family={} epochs_run={} initial_train_loss={} final_train_loss={} best_valid_loss={}",
        spec.family,
        meta.epochs_run,
        fmt(meta.initial_train_loss),
        fmt(meta.final_train_loss),
        fmt(meta.best_valid_loss)
    );
    Ok(())
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_eval(a: EvalArgs, cfg: RunConfig, seed: Option<u64>) -> anyhow::Result<()> {
    let data = load_dataset(&a.data)?;
    let name = a.name.clone().or(cfg.eval.name.clone());
    let kfold = a.kfold.or(if a.artifact.is_none() { cfg.eval.kfold } else { None });
    let reports = match (&a.artifact, kfold) {
        (Some(p), None) => {
            let artifact = ModelArtifact::load(p)?;
            let name = name.unwrap_or_else(|| artifact.spec.family.to_string());
            let split = a.data.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
            vec![evaluate(&artifact, &data, &name, &split)?]
        }
        (None, Some(k)) => {
            let spec = model_spec(&cfg, &a.spec, seed)?;
            let r = kfold_eval(&spec, &data, k, spec.seed)?;
            info!(
                "horizons {:?} days; best constant call {:.2}/{:.2}/{:.2}",
                r.taus, r.constant_baseline[0], r.constant_baseline[1], r.constant_baseline[2]
            );
            let mut rows = r.folds;
            rows.push(r.mean);
            if let Some(n) = name {
                rows.iter_mut().for_each(|row| row.model = n.clone());
            }
            rows
        }
        _ => return Err(UsageError("pass either --artifact or --kfold".into()).into()),
    };
    let mut w = output(a.out.as_deref())?;
    write_reports_csv(&mut w, &reports)?;
    w.flush()?;
    Ok(())
}

fn cmd_explain(a: ExplainArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let artifact = ModelArtifact::load(&a.artifact)?;
    let data = load_dataset(&a.data)?;
    let record = data.find(&a.patient).ok_or_else(|| UnknownPatient(a.patient.clone()))?;
    let e = artifact.explain(record)?;
    let curve = artifact.predict_survival(record)?;
    let rows: Vec<usize> = match a.top_k.or(cfg.explain.top_k) {
        Some(k) => top_k_features(&e.set, k),
        None => (0..artifact.d_x()).collect(),
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = &a.out_dir;

    write_explanation_csv(&artifact.attribute_names, &e.set, &rows, create(&dir.join("explanation.csv"))?)?;
    write_curve_csv(&artifact.grid, &curve, create(&dir.join("survival.csv"))?)?;
    if let Some(alphas) = &e.attention {
        let mut w = csv::Writer::from_writer(create(&dir.join("attention.csv"))?);
        let k = alphas.first().map_or(0, Vec::len);
        let mut header = vec!["interval".to_owned()];
        header.extend((1..=k).map(|j| format!("atom_{j}")));
        w.write_record(&header)?;
        for (t, row) in alphas.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    if a.svg || cfg.explain.svg {
        let names: Vec<String> = rows.iter().map(|&j| artifact.attribute_names[j].clone()).collect();
        let values: Vec<Vec<f64>> = rows.iter().map(|&j| e.set.thetas.iter().map(|th| th[j]).collect()).collect();
        let title = format!("{} weights, patient {}", artifact.spec.family, record.id);
        std::fs::write(dir.join("explanation.svg"), svg::heatmap(&names, &values, &title))?;
        let title = format!("{} survival, patient {}", artifact.spec.family, record.id);
        std::fs::write(dir.join("survival.svg"), svg::curve(artifact.grid.boundaries(), &curve, &title))?;
    }
    println!(
        "patient={} family={} scope={:?} features={} predicted_event_time={}",
        record.id,
        artifact.spec.family,
        e.scope,
        rows.len(),
        cen_survival::likelihood::predicted_event_time(&curve, &artifact.grid)
    );
    Ok(())
}
