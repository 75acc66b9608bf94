use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use docie_core::checkpoint::{self, RngState, TrainingState};
use docie_core::config::RunConfig;
use docie_core::corpus::io::{list_images, load_split, save_split, LABELS_FILE};
use docie_core::corpus::sroie::{load_sroie, SroieOptions};
use docie_core::corpus::synth::{generate_corpus, FieldSpec, SynthConfig, ValueKind};
use docie_core::corpus::{DocumentSample, EntitySchema, LayoutKind, TextKind, Vocabulary};
use docie_core::eval::{evaluate, fingerprint, BoxSource, MatchOptions};
use docie_core::model::{Ablation, DocModel, ForwardMode};
use docie_core::pipeline::{extract_file, render_overlay, ExtractionRecord};
use docie_core::raster::Raster;
use docie_core::training::{describe_run, train, MetricsLog};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "docie", version, about = "Text reading and entity extraction for document images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint with per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Extract entities from images without labels.
    Extract(ExtractArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Fixed,
    Variable,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextArg {
    Struct,
    Semi,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Detect from the directory contents.
    Auto,
    /// A directory written by `synth`.
    Split,
    /// The SROIE challenge layout.
    Sroie,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoxesArg {
    /// Detector output (full pipeline).
    Predicted,
    /// Annotated boxes.
    Gt,
}

#[derive(Args)]
struct SynthArgs {
    /// Output split directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of documents.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    #[arg(long, value_enum)]
    text: Option<TextArg>,
    /// Entities to generate: a comma-separated list of names or a schema
    /// JSON file. Names outside the default field set become plain codes.
    #[arg(long)]
    schema: Option<String>,
    /// TOML file; its `[synth]` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Downscale SROIE images so the longer side is at most this.
    #[arg(long)]
    max_side: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Corpus evaluated after each epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Output directory for `model.ckpt` and `metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with optional `[model]`, `[train]` and `[synth]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Context configuration: text, text+vis, text+ctx or full.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop extraction gradients at the reader outputs.
    #[arg(long)]
    frozen_reader: bool,
    #[command(flatten)]
    data_args: DataArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labelled corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `report.json` and predictions.
    #[arg(long)]
    out: PathBuf,
    /// Context configuration; defaults to the one the checkpoint was trained with.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long, value_enum, default_value_t = BoxesArg::Predicted)]
    boxes: BoxesArg,
    /// Compare strings exactly instead of trimmed and case-folded.
    #[arg(long)]
    exact_match: bool,
    /// List predictions whose document has no value for that entity.
    #[arg(long)]
    report_null_mismatch: bool,
    /// Write box overlays to `<out>/overlays`.
    #[arg(long)]
    overlay: bool,
    /// TOML file; `[train.matching]` sets the string comparison.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data_args: DataArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image files or directories of images.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output directory; one JSON file per image.
    #[arg(long)]
    out: PathBuf,
    /// Context configuration; defaults to the one the checkpoint was trained with.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Write box overlays next to the JSON files.
    #[arg(long)]
    overlay: bool,
    /// Downscale images so the longer side is at most this.
    #[arg(long)]
    max_side: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Extract(a) => extract_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn schema_fields(spec: &str, defaults: &[FieldSpec]) -> Result<Vec<FieldSpec>> {
    let names: Vec<String> = if Path::new(spec).is_file() {
        let text = fs::read_to_string(spec)?;
        let schema: EntitySchema = serde_json::from_str(&text).with_context(|| format!("reading schema {spec}"))?;
        schema.entity_names().to_vec()
    } else {
        spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    };
    if names.is_empty() {
        bail!("--schema names no entities");
    }
    Ok(names
        .iter()
        .map(|n| defaults.iter().find(|f| &f.entity == n).cloned().unwrap_or_else(|| FieldSpec::plain(n, ValueKind::Code)))
        .collect())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = run_config(a.config.as_deref())?.synth;
    if let Some(l) = a.layout {
        cfg.layout = match l {
            LayoutArg::Fixed => LayoutKind::Fixed,
            LayoutArg::Variable => LayoutKind::Variable,
        };
    }
    if let Some(t) = a.text {
        cfg.text = match t {
            TextArg::Struct => TextKind::Structured,
            TextArg::Semi => TextKind::SemiStructured,
        };
    }
    if let Some(s) = &a.schema {
        cfg.fields = schema_fields(s, &cfg.fields)?;
    }
    let docs = generate_corpus(&cfg, a.seed, a.n)?;
    save_split(&a.out, &docs, &cfg.schema()?)?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn load_corpus(dir: &Path, args: &DataArgs, schema: Option<&EntitySchema>, grayscale: bool) -> Result<(Vec<DocumentSample>, EntitySchema)> {
    let is_split = match args.format {
        FormatArg::Auto => dir.join(LABELS_FILE).is_file(),
        FormatArg::Split => true,
        FormatArg::Sroie => false,
    };
    if is_split {
        let (docs, s) = load_split(dir, grayscale)?;
        if let Some(expected) = schema {
            if &s != expected {
                bail!("corpus schema {:?} differs from the model's {:?}", s.entity_names(), expected.entity_names());
            }
        }
        return Ok((docs, s));
    }
    let s = schema.cloned().unwrap_or_else(EntitySchema::sroie);
    let opts = SroieOptions { grayscale, max_side: args.max_side };
    let (docs, report) = load_sroie(dir, &s, &opts)?;
    log::info!(
        "loaded {} SROIE samples; {} without entity files, {} unmatched values, {} clamped boxes",
        report.samples,
        report.missing_entities.len(),
        report.unmatched.len(),
        report.clamped_boxes
    );
    Ok((docs, s))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = run_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(ab) = a.ablation {
        cfg.train.set_ablation(ab);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if a.frozen_reader {
        cfg.train.end_to_end = false;
    }
    cfg.train.validate()?;
    let gray = cfg.model.backbone.in_channels == 1;
    let (docs, schema) = load_corpus(&a.data, &a.data_args, None, gray)?;
    let eval_docs = match &a.eval_data {
        Some(d) => load_corpus(d, &a.data_args, Some(&schema), gray)?.0,
        None => Vec::new(),
    };
    let vocab = Vocabulary::from_samples(&docs);
    let mut model: DocModel<f32> = DocModel::new(cfg.model.clone(), vocab, schema.clone(), cfg.train.seed)?;
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    let metrics_file = fs::File::create(a.out.join("metrics.csv"))?;
    let mut log = MetricsLog::new(metrics_file, &describe_run(&cfg.train), &schema)?;
    let tc = cfg.train.clone();
    train(&mut model, &docs, &eval_docs, &cfg.train, |m, r| {
        log.record(r).map_err(|e| docie_core::Error::Input(format!("writing metrics: {e}")))?;
        let state = TrainingState { train: Some(tc.clone()), epoch: r.epoch, rng: RngState { seed: tc.seed, epoch: r.epoch } };
        checkpoint::save(&ckpt, m, &state)
    })?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn load_model(path: &Path, ablation: Option<Ablation>) -> Result<(DocModel<f32>, ForwardMode, Ablation)> {
    let (model, state) = checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    let trained = state.train.as_ref().map(|t| t.ablation()).unwrap_or(Ablation::Full);
    let ablation = ablation.unwrap_or(trained);
    let end_to_end = state.train.as_ref().is_none_or(|t| t.end_to_end);
    Ok((model, ForwardMode { context: ablation.context_use(), end_to_end }, ablation))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    version: u32,
    checkpoint: String,
    ablation: Ablation,
    boxes: &'static str,
    sequence_accuracy: Option<f64>,
    detection_recall: Option<f64>,
    report: &'a docie_core::eval::EvalReport,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    // Model settings come from the checkpoint.
    let matching = run_config(a.config.as_deref())?.train.matching;
    let (model, mode, ablation) = load_model(&a.checkpoint, a.ablation)?;
    let gray = model.config.backbone.in_channels == 1;
    let (docs, _) = load_corpus(&a.data, &a.data_args, Some(&model.schema), gray)?;
    let source = match a.boxes {
        BoxesArg::Predicted => BoxSource::Predicted,
        BoxesArg::Gt => BoxSource::GroundTruth,
    };
    let opts = if a.exact_match { MatchOptions::EXACT } else { matching };
    let fp = fingerprint(&serde_json::to_vec(&(&model.config, &model.schema, ablation, opts))?);
    let r = evaluate(&model, &docs, mode, source, opts, &fp)?;
    fs::create_dir_all(&a.out)?;
    let out = EvalOutput {
        version: 1,
        checkpoint: a.checkpoint.display().to_string(),
        ablation,
        boxes: match source {
            BoxSource::Predicted => "predicted",
            BoxSource::GroundTruth => "gt",
        },
        sequence_accuracy: r.sequence_accuracy,
        detection_recall: r.detection_recall,
        report: &r.report,
    };
    write_json(&a.out.join("report.json"), &out)?;
    let mut preds = fs::File::create(a.out.join("predictions.jsonl"))?;
    if a.overlay {
        fs::create_dir_all(a.out.join("overlays"))?;
    }
    for (doc, p) in docs.iter().zip(&r.predictions) {
        let rec = ExtractionRecord::new(&doc.id, doc.image.width(), doc.image.height(), p, &model.schema);
        writeln!(preds, "{}", serde_json::to_string(&rec)?)?;
        if a.overlay {
            render_overlay(&doc.image, &rec).save_png(&a.out.join("overlays").join(format!("{}.png", doc.id)))?;
        }
    }
    if a.report_null_mismatch {
        write_json(&a.out.join("null_mismatches.json"), &r.null_mismatches)?;
        println!("{} predictions for entities without ground truth", r.null_mismatches.len());
    }
    for (name, s) in &r.report.per_entity {
        println!("{name:<12} P {:.4} R {:.4} F1 {:.4}", s.precision, s.recall, s.f1);
    }
    println!("mean F1 {:.4}  micro F1 {:.4}  ({} documents)", r.report.mean_f1, r.report.micro.f1, r.report.documents);
    Ok(())
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn extract_cmd(a: ExtractArgs) -> Result<()> {
    let (model, mode, _) = load_model(&a.checkpoint, a.ablation)?;
    let images = collect_images(&a.input)?;
    if images.is_empty() {
        bail!("no images found");
    }
    fs::create_dir_all(&a.out)?;
    let mut failures = 0;
    for path in &images {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let result = extract_file(&model, path, a.max_side, mode).and_then(|rec| {
            write_json(&a.out.join(format!("{stem}.json")), &rec).map_err(|e| docie_core::Error::Input(e.to_string()))?;
            if a.overlay {
                let image = Raster::load(path, false)?;
                render_overlay(&image, &rec).save_png(&a.out.join(format!("{stem}.overlay.png")))?;
            }
            Ok(rec)
        });
        match result {
            Ok(rec) => println!("{}: {} texts, {} entity values", path.display(), rec.boxes.len(), rec.entities.values().map(Vec::len).sum::<usize>()),
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if failures == images.len() {
        bail!("all {failures} images failed");
    }
    Ok(())
}
