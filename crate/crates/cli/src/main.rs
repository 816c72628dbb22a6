use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use clinfusion::attribution::{
    explain_record, render_html, render_terminal, ExplainConfig, Granularity, MethodChoice, DEFAULT_EXACT_LIMIT,
    DEFAULT_PRESCREEN_K,
};
use clinfusion::cohort::{generate_cohort, read_cohort, split_cohort, write_cohort, LabCatalog, Preset, SynthConfig};
use clinfusion::fusion::{vocab_path, FusionModel, Mode, ModelConfig, Task};
use clinfusion::lab_encoder::LabEncoderConfig;
use clinfusion::text::Pooling;
use clinfusion::textualize::{serialize_panel, InputMode, ItemOrder, SerializationSpec};
use clinfusion::train::{evaluate, train, write_predictions, ClassWeighting, TrainConfig};
use clinfusion::Error;

#[derive(Parser, Debug)]
#[command(name = "clinfusion", version, about = "Multimodal risk prediction from clinical notes and lab panels")]
struct Cli {
    /// TOML file with [synth], [model], [train] and [explain] tables; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort file.
    Generate(GenerateArgs),
    /// Split a cohort by patient into train and test files.
    Split(SplitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a cohort.
    Evaluate(EvaluateArgs),
    /// Shapley attributions for records.
    Explain(ExplainArgs),
    /// Print each record's textualized lab panel.
    SerializeLabs(SerializeArgs),
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown preset {s:?}; expected default, learnability, notes-task, onset-task or fusion-task"))
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_snake<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("invalid value {s:?}"))
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthOpts {
    /// default, learnability, notes-task, onset-task or fusion-task.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Number of patients.
    #[arg(long = "n")]
    n_patients: Option<usize>,
    #[arg(long = "encounters")]
    encounters_per_patient: Option<usize>,
    #[arg(long)]
    positive_rate: Option<f64>,
    /// Missingness rate applied to every item.
    #[arg(long)]
    missingness: Option<f64>,
    /// Missingness of the signal item, overriding --missingness for it.
    #[arg(long)]
    signal_missingness: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelOpts {
    /// fusion, text_only, labs_only or labs_text.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// binary or multiclass.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ffn_mult: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// mean or first.
    #[arg(long, value_parser = parse_snake::<Pooling>)]
    pooling: Option<Pooling>,
    /// Comma-separated hidden widths of the lab network, e.g. 256,128.
    #[arg(long)]
    lab_hidden: Option<String>,
    #[arg(long)]
    fusion_heads: Option<usize>,
    /// Concatenate embeddings without the fusion attention block.
    #[arg(long, num_args = 0..=1, default_missing_value = "false")]
    fusion_attention: Option<bool>,
    #[arg(long)]
    head_hidden: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    /// notes_only, labs_text_only or notes_plus_labs_text.
    #[arg(long, value_parser = parse_snake::<InputMode>)]
    text_input: Option<InputMode>,
    /// panel or alphabetical.
    #[arg(long)]
    lab_order: Option<String>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// none, inverse_frequency or oversample.
    #[arg(long, value_parser = parse_snake::<ClassWeighting>)]
    class_weighting: Option<ClassWeighting>,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    /// Share of training patients used for fitting; the rest validate.
    #[arg(long)]
    fit_ratio: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExplainOpts {
    /// token or lab_item.
    #[arg(long, value_parser = parse_snake::<Granularity>)]
    granularity: Option<Granularity>,
    /// auto, exact or sampled.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    exact_limit: Option<usize>,
    #[arg(long)]
    prescreen_k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    synth: SynthOpts,
    model: ModelOpts,
    train: TrainOpts,
    explain: ExplainOpts,
}

macro_rules! layer {
    ($flags:expr, $file:expr, [$($f:ident),* $(,)?]) => {{
        let mut out = $flags.clone();
        $( if out.$f.is_none() { out.$f = $file.$f.clone(); } )*
        out
    }};
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    synth: SynthOpts,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    /// Metrics report path (default: <model>.metrics.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-record probability dump (default: <out>.predictions.jsonl).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    explain: ExplainOpts,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    /// Record id (patient@date); repeatable. Without it, labeled positive records are explained.
    #[arg(long = "record")]
    records: Vec<String>,
    /// Maximum records explained when --record is absent.
    #[arg(long, default_value_t = 5)]
    limit: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Do not print the terminal rendering.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SerializeArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// panel or alphabetical.
    #[arg(long, default_value = "panel")]
    order: String,
    #[arg(long)]
    preamble: Option<String>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(Error::Json(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Config(_)) => 1,
            CliError::Lib(
                Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Index(_) | Error::MetricUndefined(_),
            ) => 2,
            CliError::Lib(Error::Numeric(_) | Error::Shape { .. } | Error::Contract(_)) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("input file {} does not exist", path.display())).into())
    }
}

fn prepare_output(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

/// Writes `<primary>.manifest.json`: config echo, seed, tool version and
/// hashes of inputs and outputs. No timestamps, so reruns are byte-identical.
fn write_manifest(
    primary: &Path,
    command: &str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> CliResult<PathBuf> {
    let hashes = |paths: &[&Path]| -> CliResult<Vec<FileHash>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    };
    let m = Manifest {
        tool: "clinfusion",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    let path = with_suffix(primary, ".manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn synth_config(opts: &SynthOpts, seed: u64) -> SynthConfig {
    let mut cfg = opts.preset.unwrap_or(Preset::Default).config();
    if let Some(n) = opts.n_patients {
        cfg.n_patients = n;
    }
    if let Some(e) = opts.encounters_per_patient {
        cfg.encounters_per_patient = e;
    }
    if let Some(r) = opts.positive_rate {
        cfg.positive_rate = r;
    }
    if opts.missingness.is_some() || opts.signal_missingness.is_some() {
        let signal_item = cfg.signal_item.clone();
        let base = opts.missingness;
        for it in &mut cfg.items {
            if let Some(b) = base {
                it.missingness = b;
            }
            if it.name == signal_item {
                if let Some(s) = opts.signal_missingness {
                    it.missingness = s;
                }
            }
        }
    }
    cfg.seed = seed;
    cfg
}

fn model_config(opts: &ModelOpts) -> CliResult<ModelConfig> {
    let mut cfg = ModelConfig::default();
    if let Some(m) = opts.mode {
        cfg.mode = m;
    }
    if let Some(t) = opts.task {
        cfg.task = t;
    }
    let e = &mut cfg.encoder;
    if let Some(v) = opts.d_model {
        e.d_model = v;
    }
    if let Some(v) = opts.heads {
        e.n_heads = v;
    }
    if let Some(v) = opts.layers {
        e.n_layers = v;
    }
    if let Some(v) = opts.ffn_mult {
        e.ffn_mult = v;
    }
    if let Some(v) = opts.max_len {
        e.max_len = v;
    }
    if let Some(v) = opts.pooling {
        e.pooling = v;
    }
    if let Some(h) = &opts.lab_hidden {
        let hidden: Result<Vec<usize>, _> = h.split(',').map(|x| x.trim().parse::<usize>()).collect();
        cfg.lab_encoder = LabEncoderConfig {
            hidden: hidden.map_err(|_| CliError::Usage(format!("invalid --lab-hidden {h:?}")))?,
        };
    }
    if let Some(v) = opts.fusion_heads {
        cfg.fusion_heads = v;
    }
    if let Some(v) = opts.fusion_attention {
        cfg.fusion_attention = v;
    }
    if opts.head_hidden.is_some() {
        cfg.head_hidden = opts.head_hidden;
    }
    if let Some(v) = opts.vocab_size {
        cfg.vocab_max_size = v;
    }
    if let Some(v) = opts.min_freq {
        cfg.vocab_min_freq = v;
    }
    if opts.text_input.is_some() {
        cfg.text_input = opts.text_input;
    }
    if let Some(o) = &opts.lab_order {
        cfg.serialization.item_order = item_order(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn item_order(s: &str) -> CliResult<ItemOrder> {
    match s {
        "panel" => Ok(ItemOrder::Panel),
        "alphabetical" => Ok(ItemOrder::Alphabetical),
        _ => Err(CliError::Usage(format!("unknown lab order {s:?}; expected panel or alphabetical"))),
    }
}

fn train_config(opts: &TrainOpts, seed: u64) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = opts.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = opts.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = opts.lr {
        cfg.lr = v;
    }
    if let Some(v) = opts.class_weighting {
        cfg.class_weighting = v;
    }
    if let Some(v) = opts.patience {
        cfg.patience = (v > 0).then_some(v);
    }
    if let Some(v) = opts.clip_norm {
        cfg.clip_norm = (v > 0.0).then_some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn explain_config(opts: &ExplainOpts, seed: u64) -> CliResult<ExplainConfig> {
    let n_samples = opts.samples.unwrap_or(256);
    let method = match opts.method.as_deref().unwrap_or("auto") {
        "auto" => MethodChoice::Auto { n_samples, seed },
        "exact" => MethodChoice::Exact,
        "sampled" => MethodChoice::Sampled { n_samples, seed },
        m => return Err(CliError::Usage(format!("unknown method {m:?}; expected auto, exact or sampled"))),
    };
    Ok(ExplainConfig {
        granularity: opts.granularity.unwrap_or(Granularity::LabItem),
        method,
        exact_limit: opts.exact_limit.unwrap_or(DEFAULT_EXACT_LIMIT),
        prescreen_k: opts.prescreen_k.unwrap_or(DEFAULT_PRESCREEN_K),
        target_class: None,
    })
}

fn cmd_generate(args: &GenerateArgs, file: &FileConfig) -> CliResult<()> {
    let opts = layer!(
        args.synth,
        file.synth,
        [preset, n_patients, encounters_per_patient, positive_rate, missingness, signal_missingness]
    );
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = synth_config(&opts, seed);
    let records = generate_cohort(&cfg)?;
    prepare_output(&args.out)?;
    write_cohort(&args.out, &records)?;
    let manifest = write_manifest(
        &args.out,
        "generate",
        Some(seed),
        serde_json::to_value(&cfg)?,
        &[],
        &[&args.out],
    )?;
    eprintln!(
        "wrote {} records to {} ({})",
        records.len(),
        args.out.display(),
        manifest.display()
    );
    Ok(())
}

fn cmd_split(args: &SplitArgs, file: &FileConfig) -> CliResult<()> {
    require_input(&args.cohort)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let records = read_cohort(&args.cohort)?;
    let (train, test) = split_cohort(&records, args.ratio, seed)?;
    prepare_output(&args.train_out)?;
    prepare_output(&args.test_out)?;
    write_cohort(&args.train_out, &train)?;
    write_cohort(&args.test_out, &test)?;
    write_manifest(
        &args.train_out,
        "split",
        Some(seed),
        serde_json::json!({ "ratio": args.ratio }),
        &[&args.cohort],
        &[&args.train_out, &args.test_out],
    )?;
    eprintln!("train {} records, test {} records", train.len(), test.len());
    Ok(())
}

fn cmd_train(args: &TrainArgs, file: &FileConfig) -> CliResult<()> {
    require_input(&args.cohort)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mopts = layer!(
        args.model,
        file.model,
        [
            mode, task, d_model, heads, layers, ffn_mult, max_len, pooling, lab_hidden, fusion_heads, fusion_attention,
            head_hidden, vocab_size, min_freq, text_input, lab_order
        ]
    );
    let topts = layer!(
        args.train,
        file.train,
        [epochs, batch_size, lr, class_weighting, patience, fit_ratio, clip_norm]
    );
    let mcfg = model_config(&mopts)?;
    let tcfg = train_config(&topts, seed)?;
    let fit_ratio = topts.fit_ratio.unwrap_or(0.9);
    let records = read_cohort(&args.cohort)?;
    let patients: std::collections::HashSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let (fit_set, val_set) = if patients.len() >= 2 && fit_ratio < 1.0 {
        split_cohort(&records, fit_ratio, seed.wrapping_add(1))?
    } else {
        (records.clone(), Vec::new())
    };
    let (model, history) = train(mcfg.clone(), &fit_set, &val_set, &LabCatalog::default(), &tcfg)?;
    prepare_output(&args.out)?;
    model.save(&args.out)?;
    let history_path = with_suffix(&args.out, ".history.json");
    fs::write(&history_path, serde_json::to_string_pretty(&history)? + "\n")?;
    let mut outputs: Vec<PathBuf> = vec![args.out.clone(), history_path.clone()];
    if model.vocab.is_some() {
        outputs.push(vocab_path(&args.out));
    }
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out,
        "train",
        Some(seed),
        serde_json::json!({ "model": mcfg, "train": tcfg, "fit_ratio": fit_ratio }),
        &[&args.cohort],
        &out_refs,
    )?;
    eprintln!(
        "trained {} model: best epoch {} of {}, validation loss {:?}",
        mcfg.mode.name(),
        history.best_epoch,
        history.epochs.len(),
        history.final_val_loss()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    require_input(&args.model)?;
    require_input(&args.cohort)?;
    let model = FusionModel::load(&args.model)?;
    let records = read_cohort(&args.cohort)?;
    let (report, rows) = evaluate(&model, &records)?;
    let out = args.out.clone().unwrap_or_else(|| with_suffix(&args.model, ".metrics.json"));
    let pred = args.predictions.clone().unwrap_or_else(|| with_suffix(&out, ".predictions.jsonl"));
    prepare_output(&out)?;
    prepare_output(&pred)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(&out, &json)?;
    write_predictions(&pred, &rows)?;
    write_manifest(
        &out,
        "evaluate",
        None,
        serde_json::json!({ "model_config": model.config }),
        &[&args.model, &args.cohort],
        &[&out, &pred],
    )?;
    print!("{json}");
    Ok(())
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_explain(args: &ExplainArgs, file: &FileConfig) -> CliResult<()> {
    require_input(&args.model)?;
    require_input(&args.cohort)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let opts = layer!(args.explain, file.explain, [granularity, method, samples, exact_limit, prescreen_k]);
    let cfg = explain_config(&opts, seed)?;
    let model = FusionModel::load(&args.model)?;
    let records = read_cohort(&args.cohort)?;
    let chosen: Vec<_> = if args.records.is_empty() {
        records
            .iter()
            .filter(|r| model.config.task.target(r) == Some(1))
            .take(args.limit)
            .collect()
    } else {
        args.records
            .iter()
            .map(|id| {
                records
                    .iter()
                    .find(|r| &r.record_id() == id)
                    .ok_or_else(|| CliError::Lib(Error::Data(format!("record {id} not found in cohort"))))
            })
            .collect::<CliResult<_>>()?
    };
    fs::create_dir_all(&args.out_dir)?;
    let mut outputs = Vec::new();
    let stdout = std::io::stdout();
    for r in chosen {
        let report = explain_record(&model, r, &cfg)?;
        let stem = args.out_dir.join(file_stem_for(&report.record_id));
        let json_path = with_suffix(&stem, ".attribution.json");
        let html_path = with_suffix(&stem, ".html");
        fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
        fs::write(&html_path, render_html(&report))?;
        outputs.push(json_path);
        outputs.push(html_path);
        if let Some(weights) = model.fusion_attention(&model.prepare(r)?)? {
            let rows: Vec<Vec<Vec<f64>>> = weights
                .iter()
                .map(|w| w.data().chunks(2).map(<[f64]>::to_vec).collect())
                .collect();
            let path = with_suffix(&stem, ".fusion_attention.json");
            let body = serde_json::json!({
                "record_id": report.record_id,
                "order": ["text", "lab"],
                "heads": rows,
            });
            fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")?;
            outputs.push(path);
        }
        if !args.quiet {
            let mut out = stdout.lock();
            write!(out, "{}", render_terminal(&report))?;
        }
    }
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out_dir.join("explain"),
        "explain",
        Some(seed),
        serde_json::to_value(&cfg)?,
        &[&args.model, &args.cohort],
        &out_refs,
    )?;
    Ok(())
}

fn cmd_serialize(args: &SerializeArgs, file: &FileConfig) -> CliResult<()> {
    require_input(&args.cohort)?;
    let records = read_cohort(&args.cohort)?;
    let order = file.model.lab_order.clone().filter(|_| args.order == "panel").unwrap_or(args.order.clone());
    let spec = SerializationSpec {
        item_order: item_order(&order)?,
        preamble: args.preamble.clone(),
        ..SerializationSpec::default()
    };
    spec.validate()?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&r.record_id());
        text.push('\t');
        text.push_str(&serialize_panel(&r.panel, &spec));
        text.push('\n');
    }
    match &args.out {
        Some(p) => {
            prepare_output(p)?;
            fs::write(p, &text)?;
            write_manifest(
                p,
                "serialize-labs",
                None,
                serde_json::to_value(&spec)?,
                &[&args.cohort],
                &[p],
            )?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Split(a) => cmd_split(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Explain(a) => cmd_explain(a, &file),
        Command::SerializeLabs(a) => cmd_serialize(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
