//! Command-line entry point: generate | train | eval | early | ablate.
//!
//! Exit codes: 0 success, 2 usage error, 3 missing input file, 4 data
//! invariant violation, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sman::config::ConfigFile;
use sman::corpus::{load_corpus, save_corpus, split_corpus, LabelScheme, Split};
use sman::error::SmanError;
use sman::eval::{early_detection_curve, evaluate, reports_to_csv, summarize, EvalReport};
use sman::graphs::{build_graphs, DiffusionPattern};
use sman::model::{load_word_vectors, Ablation, MaskMode, ModelSizes};
use sman::synth::{generate_synthetic, GenConfig};
use sman::train::{atomic_write, train, train_with_words, Checkpoint, TrainConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "sman", version, about = "Structure-aware attention network for early fake news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic corpus.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Early-detection curve: evaluate at increasing repost-time delays.
    Early(EarlyArgs),
    /// Train every ablation variant over several seeds and summarize.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config file (flat key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    publishers: Option<u32>,
    #[arg(long)]
    users: Option<u32>,
    #[arg(long)]
    news: Option<u32>,
    #[arg(long)]
    vocab: Option<u32>,
    #[arg(long)]
    p_signal: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Label scheme: 4class or 2class.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input corpus file.
    #[arg(long)]
    data: PathBuf,
    /// Training config file (flat key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Mask mode: literal or hard.
    #[arg(long)]
    mask_mode: Option<String>,
    /// Diffusion edge pattern: chain or star.
    #[arg(long)]
    pattern: Option<String>,
    /// Ablation variant: full, no-pc, no-uc, or no-puc.
    #[arg(long)]
    ablation: Option<String>,
    /// Pretrained word vectors (word index then d_w floats per line).
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Seed for the train/val/test split.
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Input corpus file.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; defaults to eval_report.csv inside the checkpoint dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
}

#[derive(Args)]
struct EarlyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated delays in seconds; `inf` means no truncation.
    #[arg(long, default_value = "0,3600,7200,14400,28800,43200,86400,inf")]
    delays: String,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV and median summary.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variants.
    #[arg(long, default_value = "full,no-pc,no-uc,no-puc")]
    variants: String,
    /// Number of seeds per variant, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args, started),
        Command::Train(args) => cmd_train(args, started),
        Command::Eval(args) => cmd_eval(args, started),
        Command::Early(args) => cmd_early(args, started),
        Command::Ablate(args) => cmd_ablate(args, started),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.downcast_ref::<SmanError>() {
        return match err {
            SmanError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            SmanError::Parse { .. }
            | SmanError::Integrity(_)
            | SmanError::Size(_)
            | SmanError::Index(_) => 4,
            _ => 1,
        };
    }
    if let Some(io) = e.downcast_ref::<std::io::Error>() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return 3;
        }
    }
    1
}

/// Open an input path with a missing-file error that maps to exit 3.
fn require_input(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(SmanError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input file {} does not exist", path.display()),
        ))
        .into());
    }
    Ok(())
}

/// Write the run manifest next to the outputs: `run_manifest.txt` inside
/// `dir`, recording the resolved config, paths, version, and elapsed time.
fn write_manifest(
    dir: &Path,
    command: &str,
    entries: &[(String, String)],
    started: Instant,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    text.push_str(&format!("artifact_version = {}\n", VERSION));
    text.push_str(&format!("command = {}\n", command));
    for (k, v) in entries {
        text.push_str(&format!("{} = {}\n", k, v));
    }
    if let Ok(threads) = std::env::var("SMAN_THREADS") {
        text.push_str(&format!("sman_threads = {}\n", threads));
    }
    text.push_str(&format!(
        "elapsed_seconds = {:.3}\n",
        started.elapsed().as_secs_f64()
    ));
    atomic_write(&dir.join("run_manifest.txt"), text.as_bytes())?;
    Ok(())
}

fn out_dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_generate(args: GenerateArgs, started: Instant) -> anyhow::Result<()> {
    let mut cfg = GenConfig::default();
    if let Some(path) = &args.config {
        require_input(path)?;
        ConfigFile::load(path)?.apply_gen(&mut cfg)?;
    }
    if let Some(v) = args.publishers {
        cfg.publishers = v;
    }
    if let Some(v) = args.users {
        cfg.users = v;
    }
    if let Some(v) = args.news {
        cfg.news = v;
    }
    if let Some(v) = args.vocab {
        cfg.vocab = v;
    }
    if let Some(v) = args.p_signal {
        cfg.p_signal = v;
    }
    if let Some(v) = args.k_max {
        cfg.k_max = v;
    }
    if let Some(s) = &args.scheme {
        cfg.scheme = LabelScheme::parse(s)
            .ok_or_else(|| SmanError::Config(format!("bad scheme {:?}", s)))?;
    }
    let corpus = generate_synthetic(&cfg, args.seed)?;
    save_corpus(&corpus, &args.out)?;
    println!(
        "wrote {} news items ({} publishers, {} reposters) to {}",
        corpus.news.len(),
        corpus.publishers.len(),
        corpus.users.len(),
        args.out.display()
    );
    let entries = vec![
        ("seed".into(), args.seed.to_string()),
        ("out".into(), args.out.display().to_string()),
        ("publishers".into(), cfg.publishers.to_string()),
        ("users".into(), cfg.users.to_string()),
        ("news".into(), cfg.news.to_string()),
        ("vocab".into(), cfg.vocab.to_string()),
        ("unreliable_frac".into(), cfg.unreliable_frac.to_string()),
        ("lowrep_frac".into(), cfg.lowrep_frac.to_string()),
        ("p_signal".into(), cfg.p_signal.to_string()),
        ("token_signal".into(), cfg.token_signal.to_string()),
        ("k_max".into(), cfg.k_max.to_string()),
        ("min_reposts".into(), cfg.min_reposts.to_string()),
        ("scheme".into(), cfg.scheme.to_string()),
        ("tokens_per_news".into(), cfg.tokens_per_news.to_string()),
        ("time_spread".into(), cfg.time_spread.to_string()),
    ];
    write_manifest(&out_dir_of(&args.out), "generate", &entries, started)
}

fn resolve_train_config(
    config: Option<&Path>,
    args: &TrainArgs,
) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        require_input(path)?;
        ConfigFile::load(path)?.apply_train(&mut cfg)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.d {
        cfg.model.d = v;
    }
    if let Some(v) = args.heads {
        cfg.model.heads = v;
    }
    if let Some(v) = args.k {
        cfg.model.k = v;
    }
    if let Some(s) = &args.mask_mode {
        cfg.model.mask_mode = MaskMode::parse(s)
            .ok_or_else(|| SmanError::Config(format!("bad mask_mode {:?}", s)))?;
    }
    if let Some(s) = &args.pattern {
        cfg.model.pattern = DiffusionPattern::parse(s)
            .ok_or_else(|| SmanError::Config(format!("bad pattern {:?}", s)))?;
    }
    if let Some(s) = &args.ablation {
        cfg.ablation = Ablation::parse(s)
            .ok_or_else(|| SmanError::Config(format!("bad ablation {:?}", s)))?;
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, started: Instant) -> anyhow::Result<()> {
    require_input(&args.data)?;
    let corpus = load_corpus(&args.data)?;
    let mut cfg = resolve_train_config(args.config.as_deref(), &args)?;
    // The corpus decides the label scheme unless a config overrode it.
    if args.config.is_none() {
        cfg.model.scheme = corpus.scheme;
    }
    let split = split_corpus(&corpus, args.split_seed)?;
    let words = match &args.word_vectors {
        Some(path) => {
            require_input(path)?;
            let sizes = ModelSizes::from_corpus(&corpus);
            Some(load_word_vectors(path, sizes.vocab, cfg.model.d_w)?)
        }
        None => None,
    };
    let result = train_with_words(&corpus, &split, &cfg, words)?;
    result.checkpoint.save(&args.out)?;
    let last = result.history.last().unwrap();
    println!(
        "trained {} epochs; best val accuracy {:.4} at epoch {}; final train loss {:.4}",
        result.history.len(),
        result.checkpoint.val_accuracy,
        result.checkpoint.epoch,
        last.train_loss
    );
    let mut entries = result.checkpoint.manifest_entries();
    entries.push(("data".into(), args.data.display().to_string()));
    entries.push(("out".into(), args.out.display().to_string()));
    entries.push(("split_seed".into(), args.split_seed.to_string()));
    write_manifest(&args.out, "train", &entries, started)
}

fn load_ckpt_and_split(
    ckpt: &Path,
    data: &Path,
    split_seed: u64,
) -> anyhow::Result<(Checkpoint, sman::corpus::Corpus, Split)> {
    require_input(&ckpt.join("manifest.txt"))?;
    require_input(data)?;
    let checkpoint = Checkpoint::load(ckpt)?;
    let corpus = load_corpus(data)?;
    let split = split_corpus(&corpus, split_seed)?;
    Ok((checkpoint, corpus, split))
}

fn cmd_eval(args: EvalArgs, started: Instant) -> anyhow::Result<()> {
    let (checkpoint, corpus, split) = load_ckpt_and_split(&args.ckpt, &args.data, args.split_seed)?;
    let graphs = build_graphs(&corpus, checkpoint.model.cfg.k, checkpoint.model.cfg.pattern)?;
    let test_ids: Vec<u32> = split.test.iter().copied().collect();
    let mut report = evaluate(&checkpoint.model, &corpus, &graphs, &test_ids)?;
    report.variant = checkpoint.train_config.ablation.to_string();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.ckpt.join("eval_report.csv"));
    atomic_write(&out, reports_to_csv(std::slice::from_ref(&report)).as_bytes())?;
    print!("{}", summarize(&report));
    println!("report written to {}", out.display());
    let entries = vec![
        ("ckpt".into(), args.ckpt.display().to_string()),
        ("data".into(), args.data.display().to_string()),
        ("out".into(), out.display().to_string()),
        ("split_seed".into(), args.split_seed.to_string()),
        ("accuracy".into(), format!("{}", report.accuracy)),
    ];
    write_manifest(&out_dir_of(&out), "eval", &entries, started)
}

fn parse_delays(s: &str) -> anyhow::Result<Vec<u64>> {
    let mut delays = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let d = if part.eq_ignore_ascii_case("inf") {
            u64::MAX
        } else {
            part.parse::<u64>()
                .map_err(|e| SmanError::Config(format!("bad delay {:?}: {}", part, e)))?
        };
        delays.push(d);
    }
    if delays.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SmanError::Config("delays must be strictly ascending".into()).into());
    }
    Ok(delays)
}

fn cmd_early(args: EarlyArgs, started: Instant) -> anyhow::Result<()> {
    let delays = parse_delays(&args.delays)?;
    let (checkpoint, corpus, split) = load_ckpt_and_split(&args.ckpt, &args.data, args.split_seed)?;
    let curve = early_detection_curve(&checkpoint, &corpus, &split, &delays)?;
    let reports: Vec<EvalReport> = curve.iter().map(|(_, r)| r.clone()).collect();
    atomic_write(&args.out, reports_to_csv(&reports).as_bytes())?;
    for (delay, report) in &curve {
        let label = if *delay == u64::MAX {
            "inf".to_string()
        } else {
            delay.to_string()
        };
        println!("delay {:>10}: accuracy {:.4}", label, report.accuracy);
    }
    println!("curve written to {}", args.out.display());
    let entries = vec![
        ("ckpt".into(), args.ckpt.display().to_string()),
        ("data".into(), args.data.display().to_string()),
        ("delays".into(), args.delays.clone()),
        ("out".into(), args.out.display().to_string()),
        ("split_seed".into(), args.split_seed.to_string()),
    ];
    write_manifest(&out_dir_of(&args.out), "early", &entries, started)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn cmd_ablate(args: AblateArgs, started: Instant) -> anyhow::Result<()> {
    require_input(&args.data)?;
    let corpus = load_corpus(&args.data)?;
    let mut base = TrainConfig::default();
    if let Some(path) = &args.config {
        require_input(path)?;
        ConfigFile::load(path)?.apply_train(&mut base)?;
    } else {
        base.model.scheme = corpus.scheme;
    }
    let variants: Vec<Ablation> = args
        .variants
        .split(',')
        .map(|s| {
            Ablation::parse(s.trim())
                .ok_or_else(|| SmanError::Config(format!("bad variant {:?}", s)))
        })
        .collect::<Result<_, _>>()?;
    if args.seeds == 0 {
        return Err(SmanError::Config("need at least one seed".into()).into());
    }
    let split = split_corpus(&corpus, args.split_seed)?;
    let test_ids: Vec<u32> = split.test.iter().copied().collect();

    std::fs::create_dir_all(&args.out)?;
    let mut reports = Vec::new();
    let mut accs: Vec<(Ablation, Vec<f64>)> =
        variants.iter().map(|&v| (v, Vec::new())).collect();
    for s in 0..args.seeds {
        let seed = args.seed + s;
        for (vi, &variant) in variants.iter().enumerate() {
            let cfg = TrainConfig {
                seed,
                ablation: variant,
                ..base.clone()
            };
            let result = train(&corpus, &split, &cfg)?;
            let graphs = build_graphs(&corpus, cfg.model.k, cfg.model.pattern)?;
            let mut report = evaluate(&result.checkpoint.model, &corpus, &graphs, &test_ids)?;
            report.variant = format!("{}/seed{}", variant, seed);
            println!("{}: accuracy {:.4}", report.variant, report.accuracy);
            accs[vi].1.push(report.accuracy);
            reports.push(report);
        }
    }
    atomic_write(
        &args.out.join("ablation.csv"),
        reports_to_csv(&reports).as_bytes(),
    )?;
    let mut summary = String::from("variant median_accuracy\n");
    for (variant, mut values) in accs {
        summary.push_str(&format!("{} {:.4}\n", variant, median(&mut values)));
    }
    atomic_write(&args.out.join("summary.txt"), summary.as_bytes())?;
    print!("{}", summary);
    let entries = vec![
        ("data".into(), args.data.display().to_string()),
        ("out".into(), args.out.display().to_string()),
        ("variants".into(), args.variants.clone()),
        ("seeds".into(), args.seeds.to_string()),
        ("seed".into(), args.seed.to_string()),
        ("split_seed".into(), args.split_seed.to_string()),
    ];
    write_manifest(&args.out, "ablate", &entries, started)
}
