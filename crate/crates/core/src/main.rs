use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frevl::bench::{bench_forward, preset, PRESETS};
use frevl::fusion::checkpoint::{self, Checkpoint};
use frevl::fusion::{count_params, init_params, FusionParams};
use frevl::objectives::TaskKind;
use frevl::report::{emit_report, Report, ReportFormat};
use frevl::store::{
    decode_cache, holdout_split, import_tsv, read_cache, synthesize, write_cache, DType, EmbeddingRecord, Label, LabelKind,
    SyntheticSpec, SyntheticTask,
};
use frevl::tensor::RngState;
use frevl::train::{
    ablation_axes, ablation_run, bottleneck_experiment, content_hash, evaluate, history_csv, linear_probe,
    ProbeConfig, ProbeInput, RunManifest, TrainConfig, Trainer, HOLDOUT_FRACTION,
};
use frevl::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "frevl", version, about = "Fusion network over frozen vision/text embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding cache.
    Synth(SynthArgs),
    /// Convert a tab-separated embedding dump into a cache.
    Import(ImportArgs),
    /// Train a fusion network on a cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cache.
    Eval(EvalArgs),
    /// Fit a linear probe on frozen embeddings.
    Probe(ProbeArgs),
    /// Train a base config and one ablated variant across seeds.
    Ablate(AblateArgs),
    /// Show that fusion capacity cannot recover discarded information.
    Bottleneck(BottleneckArgs),
    /// Time eval-mode forward passes.
    Bench(BenchArgs),
    /// Describe a checkpoint or a cache.
    Info(InfoArgs),
}

#[derive(Args)]
struct FormatArg {
    /// Output format: text or json-lines.
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    task: SyntheticTask,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    d_v: usize,
    #[arg(long, default_value_t = 32)]
    d_t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matching task perturbation scale.
    #[arg(long)]
    noise: Option<f64>,
    /// Bottleneck task: width of the discarded latent block.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Bottleneck task: put the label on the retained coordinates.
    #[arg(long)]
    control: bool,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// Lines of `id<TAB>label<TAB>image floats<TAB>text floats`.
    #[arg(long)]
    tsv: PathBuf,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for model.ckpt, history.csv and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Score only the held-out split used during training.
    #[arg(long)]
    holdout: bool,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    data: PathBuf,
    /// image, text or concat.
    #[arg(long, default_value = "concat")]
    input: ProbeInput,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, required_unless_present = "list")]
    data: Option<PathBuf>,
    /// Axis name as printed by --list, e.g. "w/o contrastive".
    #[arg(long, required_unless_present = "list")]
    axis: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Print the available axes and exit.
    #[arg(long)]
    list: bool,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BottleneckArgs {
    #[arg(long, default_value_t = 20000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    d_v: usize,
    #[arg(long, default_value_t = 32)]
    d_t: usize,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base training config. Without one the defaults apply with the
    /// contrastive term off, which only adds cost on this task.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench a trained checkpoint instead of a preset.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// default, tiny or sentinel.
    #[arg(long, default_value = "default", conflicts_with = "checkpoint")]
    preset: String,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InfoArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NumericFault { .. } | Error::OracleFailure { .. } => EXIT_NUMERIC,
        Error::InvalidConfig(_) | Error::UnknownAxis(_) | Error::InvalidProbability(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Error> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::load)
}

/// The task a checkpoint was trained for, recovered from its head width and
/// the labels in the data.
fn infer_task(kind: LabelKind, out_dim: usize) -> TaskKind {
    match kind {
        LabelKind::Class => TaskKind::Classification { classes: out_dim },
        LabelKind::Scalar => TaskKind::Regression,
        LabelKind::None => TaskKind::PairwiseRanking,
    }
}

fn nonempty(records: Vec<EmbeddingRecord>) -> Result<Vec<EmbeddingRecord>, Error> {
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(records)
}

fn load_data(path: &Path) -> Result<Vec<EmbeddingRecord>, Error> {
    nonempty(read_cache(path)?.1)
}

fn synth(a: SynthArgs) -> CliResult {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        task: a.task,
        n_samples: a.n,
        d_v: a.d_v,
        d_t: a.d_t,
        seed: a.seed,
        noise: a.noise.unwrap_or(defaults.noise),
        bottleneck_hidden_dim: a.hidden_dim.unwrap_or(defaults.bottleneck_hidden_dim),
        control: a.control,
    };
    spec.validate()?;
    let records = synthesize(&spec)?;
    let summary = write_cache(&records, &a.out, a.dtype)?;
    println!("wrote {} records ({} bytes) to {}", summary.record_count, summary.bytes_written, a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> CliResult {
    let records = import_tsv(&a.tsv)?;
    let summary = write_cache(&records, &a.out, a.dtype)?;
    println!("wrote {} records ({} bytes) to {}", summary.record_count, summary.bytes_written, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let ckpt_path = a.out_dir.join("model.ckpt");
    cfg.checkpoint_path = Some(ckpt_path.clone());
    cfg.validate()?;
    let bytes = std::fs::read(&a.data).map_err(|e| Error::io(&a.data, e))?;
    let data = nonempty(decode_cache(&bytes)?.1)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg.clone(), &data, checkpoint::load(p)?)?,
        None => Trainer::new(cfg.clone(), &data)?,
    };
    let out = trainer.finish()?;
    write_text(&a.out_dir.join("history.csv"), &history_csv(&out.history))?;
    let manifest = RunManifest {
        seed: cfg.seed,
        data_path: Some(a.data.display().to_string()),
        data_hash: Some(content_hash(&bytes)),
        train_size: out.train_size,
        holdout_size: out.holdout_size,
        steps: out.history.last().map_or(0, |r| r.step),
        params: count_params(&cfg.fusion, &cfg.flags),
        final_metrics: out.final_metrics.clone(),
        config: cfg,
    };
    manifest.write(&a.out_dir.join("manifest.json"))?;
    if let Some(m) = &out.final_metrics {
        print!("{}", emit_report(Report::Metrics(m), a.format.format));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let task = infer_task(data[0].label.kind(), ckpt.params.config.out_dim);
    let records = if a.holdout { holdout_split(&data, HOLDOUT_FRACTION).1 } else { data };
    let m = evaluate(&ckpt.params, &task, &records)?;
    print!("{}", emit_report(Report::Metrics(&m), a.format.format));
    Ok(())
}

fn probe(a: ProbeArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let classes = data
        .iter()
        .map(|r| match r.label {
            Label::Class(c) => Ok(c as usize + 1),
            _ => Err(usage("probe needs class labels")),
        })
        .try_fold(2, |k, c| c.map(|c| k.max(c)))?;
    let cfg = ProbeConfig {
        input: a.input,
        classes,
        seed: a.seed,
        epochs: a.epochs.unwrap_or(ProbeConfig::default().epochs),
        ..ProbeConfig::default()
    };
    let (train_set, test_set) = holdout_split(&data, HOLDOUT_FRACTION);
    let m = linear_probe(&cfg, &train_set, &test_set)?;
    print!("{}", emit_report(Report::Metrics(&m), a.format.format));
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn ablate(a: AblateArgs) -> CliResult {
    if a.list {
        for (name, delta) in ablation_axes() {
            println!("{name:<22} {}", delta.describe());
        }
        return Ok(());
    }
    let (Some(data_path), Some(axis)) = (a.data, a.axis) else {
        return Err(usage("--data and --axis are required"));
    };
    let base = load_config(a.config.as_deref())?;
    frevl::train::ablation_delta(&axis)?;
    let data = load_data(&data_path)?;
    let r = ablation_run(&base, &axis, &data, &a.seeds)?;
    println!("axis: {}  ({})", r.axis, r.ablated.change);
    for v in [&r.base, &r.ablated] {
        println!(
            "{:<24} accuracy {:.4} ± {:.4}  macro_f1 {:.4} ± {:.4}",
            v.name, v.accuracy.mean, v.accuracy.std, v.macro_f1.mean, v.macro_f1.std
        );
    }
    println!("delta accuracy {:+.4}", r.delta_accuracy);
    if let Some(p) = a.out {
        write_text(&p, &to_json(&r))?;
    }
    Ok(())
}

fn bottleneck(a: BottleneckArgs) -> CliResult {
    let base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => {
            let mut c = TrainConfig::default();
            c.weights.lambda_con = 0.0;
            c
        }
    };
    let spec = SyntheticSpec {
        task: SyntheticTask::Bottleneck,
        n_samples: a.n,
        d_v: a.d_v,
        d_t: a.d_t,
        seed: a.seed,
        bottleneck_hidden_dim: a.hidden_dim,
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    let r = bottleneck_experiment(&spec, &base, &[])?;
    println!("chance {:.4}  held-out n {}", r.chance, r.holdout_size);
    for c in &r.results {
        println!(
            "d_h {:>4}  layers {}  params {:>8}  accuracy {:.4}  train {:.4}",
            c.d_h, c.layers, c.params, c.accuracy, c.train_accuracy
        );
    }
    println!("control (label on retained coordinates): accuracy {:.4}", r.control.accuracy);
    if let Some(p) = a.out {
        write_text(&p, &to_json(&r))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let params: FusionParams<f32> = match &a.checkpoint {
        Some(p) => checkpoint::load(p)?.params,
        None => {
            let (cfg, flags) = preset(&a.preset).ok_or_else(|| {
                usage(format!("unknown preset {:?}, expected one of {}", a.preset, PRESETS.join(", ")))
            })?;
            init_params(&cfg, &flags, &mut RngState::new(a.seed))?
        }
    };
    let r = bench_forward(&params, a.batch, a.iterations, a.warmup, a.seed)?;
    print!("{}", emit_report(Report::Bench(&r), a.format.format));
    Ok(())
}

fn info(a: InfoArgs) -> CliResult {
    if let Some(p) = a.checkpoint {
        let ckpt: Checkpoint = checkpoint::load(&p)?;
        let c = count_params(&ckpt.params.config, &ckpt.params.flags);
        println!("config: {}", serde_json::to_string(&ckpt.params.config).expect("config serializes"));
        println!("flags: {}", serde_json::to_string(&ckpt.params.flags).expect("flags serialize"));
        println!("params: projection {}  attention {}  head {}  total {}", c.projection, c.attention, c.head, c.total);
        println!("optimizer state: {}", if ckpt.optimizer.is_some() { "yes" } else { "no" });
        if let Some(step) = ckpt.optimizer.as_ref().map(|o| o.step) {
            println!("optimizer step: {step}");
        }
    } else if let Some(p) = a.cache {
        let (h, _) = read_cache(&p)?;
        println!("records: {}", h.record_count);
        println!("d_v: {}  d_t: {}", h.d_v, h.d_t);
        println!("dtype: {:?}  labels: {:?}", h.dtype, h.label_kind);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Import(a) => import(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
        Command::Ablate(a) => ablate(a),
        Command::Bottleneck(a) => bottleneck(a),
        Command::Bench(a) => bench(a),
        Command::Info(a) => info(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
