use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eegconn::connectivity::{load_dataset, save_dataset, OrderPolicy, PipelineMode, TensorDataset, WindowTensor};
use eegconn::model::{evaluate, load_model, save_model, train, FusionModel, ModelHeader};
use eegconn::pipeline::{
    build_dataset, load_recording_list, pipeline_run, split_and_normalize, write_atomic, write_synthetic_recordings,
    DataSource, PreparedSplit, RunConfig, RECORDING_LIST, SPLIT_FILE,
};
use eegconn::relevance::{explain, render_svg, ClassSource, RelevanceOptions, RelevanceReport, Variant};
use eegconn::signal_io::Split;
use eegconn::{Error, Result};

const THREADS_ENV: &str = "EEGCONN_THREADS";

#[derive(Parser)]
#[command(
    name = "eegconn",
    version,
    about = "EEG connectivity features, fusion classifiers and feature relevance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic coupled and uncoupled recordings
    Synth(SynthArgs),
    /// Recordings to a tensor dataset
    Extract(ExtractArgs),
    /// Tensor dataset to a trained model and its history
    Train(TrainArgs),
    /// Print metrics of a model on a tensor dataset
    Eval(EvalArgs),
    /// Feature relevance report of a model on a tensor dataset
    Explain(ExplainArgs),
    /// Render a relevance report as SVG bars
    Plot(PlotArgs),
    /// Extract, train, evaluate and explain in one reproducible run
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Broadband,
    PerBand,
}

/// Run-config overrides shared by the config-driven subcommands.
#[derive(Args)]
struct Common {
    /// JSON run config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every seeded stage
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Fusion scheme
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    scheme: Option<u8>,
    /// Fixed MVAR order
    #[arg(long, conflicts_with = "aic")]
    order: Option<usize>,
    /// Select the MVAR order by AIC up to this maximum
    #[arg(long, value_name = "MAX_ORDER")]
    aic: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::synthetic(""),
        };
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        if let Some(m) = self.mode {
            cfg.pipeline.mode = match m {
                ModeArg::Broadband => PipelineMode::Broadband,
                ModeArg::PerBand => PipelineMode::PerBand,
            };
        }
        if let Some(s) = self.scheme {
            cfg.model.scheme = s;
            if s > 2 && cfg.stages.explain && self.config.is_none() {
                eprintln!("note: scheme {s} has no concat layer; skipping explain");
                cfg.stages.explain = false;
            }
        }
        if let Some(order) = self.order {
            cfg.pipeline.order = OrderPolicy::Fixed { order };
        }
        if let Some(max_order) = self.aic {
            cfg.pipeline.order = OrderPolicy::Aic { max_order };
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// JSON run config with a synthetic source
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Start of the coupled segment, seconds
    #[arg(long)]
    onset: Option<f64>,
    /// End of the coupled segment, seconds
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    coupled: Option<usize>,
    #[arg(long)]
    uncoupled: Option<usize>,
    /// Coupling strength in [0, 1)
    #[arg(long)]
    strength: Option<f64>,
    /// Output directory for CSV recordings, annotations and the listing
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// Recording listing as written by `synth`
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Output tensor dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Tensor dataset directory
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for model.bin, history.json and split.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tensor dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Restrict to the test side of a saved split
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the metrics JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Averaged,
    PerSample,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassSourceArg {
    TrueLabel,
    Predicted,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "averaged")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "true-label")]
    class_source: ClassSourceArg,
    /// Also render relevance.svg
    #[arg(long)]
    svg: bool,
    /// Output directory for relevance.json and relevance.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Relevance report JSON
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

fn synth(args: SynthArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::synthetic(""),
    };
    let DataSource::Synthetic(mut cfg) = base.source else {
        return Err(Error::in_field("source")(Error::InvalidArgument(
            "synth needs a synthetic source".into(),
        )));
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.channels {
        cfg.channels = v;
    }
    if let Some(v) = args.fs {
        cfg.fs = v;
    }
    if let Some(v) = args.duration {
        cfg.duration_s = v;
    }
    if let Some(v) = args.onset {
        cfg.onset_s = v;
    }
    if let Some(v) = args.offset {
        cfg.offset_s = v;
    }
    if let Some(v) = args.coupled {
        cfg.coupled_recordings = v;
    }
    if let Some(v) = args.uncoupled {
        cfg.uncoupled_recordings = v;
    }
    if let Some(v) = args.strength {
        cfg.coupling_strength = v;
    }
    cfg.validate().map_err(Error::in_field("source.synthetic"))?;
    let list = write_synthetic_recordings(&cfg, &args.out)?;
    eprintln!(
        "wrote {} recordings and {}",
        list.len(),
        args.out.join(RECORDING_LIST).display()
    );
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(list) = &args.inputs {
        cfg.source = DataSource::Recordings(load_recording_list(list)?);
        // channel count comes from the recordings, not the model config
        if let DataSource::Recordings(r) = &cfg.source {
            cfg.pipeline.validate(r[0].fs).map_err(Error::in_field("pipeline"))?;
        }
    } else {
        cfg.validate()?;
    }
    let ds = build_dataset(&cfg)?;
    save_dataset(&ds, &args.out)?;
    let d = &ds.manifest.diagnostics;
    eprintln!(
        "extracted {} windows to {} ({} MVAR fits, {} unstable, {} jittered)",
        ds.len(),
        args.out.display(),
        d.fits,
        d.unstable_fits,
        d.jitter_events
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let ds = load_dataset(&args.data)?;
    // input dimensions follow the dataset
    let [features, steps, channels, _, bands] = ds.manifest.shape;
    cfg.model.features = features;
    cfg.model.time_steps = steps;
    cfg.model.channels = channels;
    cfg.model.bands = bands;
    cfg.model.validate().map_err(Error::in_field("model"))?;
    cfg.train.validate().map_err(Error::in_field("train"))?;
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::in_field("test_fraction")(Error::InvalidArgument(
            "must be in (0, 1)".into(),
        )));
    }

    let PreparedSplit {
        split,
        stats,
        train: train_set,
        ..
    } = split_and_normalize(&ds, cfg.test_fraction, cfg.split_seed)?;
    let fresh = FusionModel::build(&cfg.model)?;
    let (model, history) = train(&fresh, &train_set, &cfg.train)?;
    create_dir(&args.out)?;
    let header = ModelHeader::new(&model, Some(stats), Some(ds.manifest.config_hash.clone()));
    save_model(&model, &header, args.out.join("model.bin"))?;
    write_json(&args.out.join("history.json"), &history)?;
    write_json(&args.out.join(SPLIT_FILE), &split)?;
    if let Some(last) = history.epochs.last() {
        eprintln!("final training loss {:.5}, accuracy {:.4}", last.loss, last.accuracy);
    }
    Ok(())
}

/// Model plus the normalized tensors it should see.
fn load_inputs(args: &DataArgs) -> Result<(FusionModel, TensorDataset, Vec<WindowTensor>)> {
    let (model, header) = load_model(&args.model)?;
    let ds = load_dataset(&args.data)?;
    if let Some(h) = &header.dataset_config_hash {
        if *h != ds.manifest.config_hash {
            eprintln!("warning: dataset was extracted with a different config than the model's training data");
        }
    }
    let tensors = match &args.split {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let split: Split = serde_json::from_slice(&bytes)?;
            if let Some(&bad) = split.test.iter().find(|&&i| i >= ds.len()) {
                return Err(Error::InvalidArgument(format!(
                    "{}: index {bad} out of range for {} windows",
                    path.display(),
                    ds.len()
                )));
            }
            split.take(&ds.tensors).1
        }
        None => ds.tensors.clone(),
    };
    let tensors = match &header.norm_stats {
        Some(stats) => stats.applied(&tensors)?,
        None => tensors,
    };
    Ok((model, ds, tensors))
}

fn eval(args: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Error::in_field("threshold")(Error::InvalidArgument(
            "must be in [0, 1]".into(),
        )));
    }
    let (model, _, tensors) = load_inputs(&args.data)?;
    let metrics = evaluate(&model, &tensors, args.threshold)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    println!("{json}");
    if let Some(out) = &args.out {
        write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}

fn explain_cmd(args: ExplainArgs) -> Result<()> {
    let (model, ds, tensors) = load_inputs(&args.data)?;
    let opts = RelevanceOptions {
        variant: match args.variant {
            VariantArg::Averaged => Variant::Averaged,
            VariantArg::PerSample => Variant::PerSample,
        },
        class_source: match args.class_source {
            ClassSourceArg::TrueLabel => ClassSource::TrueLabel,
            ClassSourceArg::Predicted => ClassSource::Predicted,
        },
    };
    let report = explain(&model, &tensors, opts, ds.manifest.config_hash.clone())?;
    create_dir(&args.out)?;
    report.save_json(args.out.join("relevance.json"))?;
    report.save_csv(args.out.join("relevance.csv"))?;
    if args.svg {
        write_atomic(&args.out.join("relevance.svg"), render_svg(&report).as_bytes())?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let report = RelevanceReport::load_json(&args.report)?;
    write_atomic(&args.out, render_svg(&report).as_bytes())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    cfg.out_dir = args.out;
    let manifest = pipeline_run(&cfg)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote {} files to {}", manifest.outputs.len(), cfg.out_dir.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::in_field(THREADS_ENV)(Error::InvalidArgument(format!("not a thread count: {v:?}"))))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Plot(a) => plot(a),
        Command::Run(a) => run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
