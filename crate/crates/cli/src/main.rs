use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use advkt::augment::{
    reverse_labels, sample_synthetic_questions, write_samples_csv, AugmentContext, AugmentationRegistry,
    AugmentedSample, Provenance,
};
use advkt::checkpoint::{self, Checkpoint};
use advkt::corpus::{compute_stats, ingest_log, ingest_log_with_catalog, ingest_logs, split, Dataset, IngestOptions, Step};
use advkt::eval::{evaluate_with, export_embeddings, write_buckets_csv, EvalOptions};
use advkt::generator::Mode;
use advkt::oracle::{simulate, OracleConfig};
use advkt::trainer::{real_samples, stream_rng, train_observed, TrainConfig, METRICS_HEADER};

#[derive(Parser)]
#[command(name = "advkt", version, about = "Adversarial multi-step knowledge tracing")]
struct Cli {
    /// Cap on worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw log and write it back normalized, optionally split.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with known response probabilities.
    Simulate(SimulateArgs),
    /// Write augmented and negative samples for inspection.
    Augment(AugmentArgs),
    /// Train generator and discriminator.
    Train(TrainArgs),
    /// Evaluate a trained generator.
    Eval(EvalArgs),
    /// Export discriminator sequence embeddings.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct FilterArgs {
    /// Students with fewer interactions are dropped.
    #[arg(long, default_value_t = 10)]
    min_interactions: usize,
    /// Keep only each student's last N interactions.
    #[arg(long, default_value_t = 200)]
    max_len: usize,
}

impl FilterArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            min_interactions: self.min_interactions,
            max_len: self.max_len,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Training config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda1=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    /// Hold out this fraction of students as test.csv.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Hold out this fraction of the remaining students as val.csv.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 300)]
    students: usize,
    #[arg(long, default_value_t = 100)]
    questions: usize,
    #[arg(long, default_value_t = 10)]
    concepts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    learning_gain: Option<f64>,
    #[arg(long)]
    guess: Option<f64>,
    #[arg(long)]
    slip: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    filter: FilterArgs,
    /// Also label real and bigram-sampled question sequences with this generator.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "multi_step")]
    mode: Mode,
    /// Checkpoint file, or `RUN/best` / `RUN/last` inside a run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Step-index bucket edges for the AUC curve.
    #[arg(long, value_delimiter = ',', default_value = "1,50,100,150,200")]
    edges: Vec<usize>,
    /// Also report the per-student macro-averaged AUC.
    #[arg(long)]
    per_student: bool,
    /// Write report.csv and buckets.csv into this directory as well.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    filter: FilterArgs,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    ds.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// `RUN/best` resolves to `RUN/checkpoints/best.ckpt`; a run directory alone
/// means its best checkpoint.
fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_file() {
        return path.to_path_buf();
    }
    if path.is_dir() {
        return path.join("checkpoints").join("best.ckpt");
    }
    match (path.parent(), path.file_name()) {
        (Some(parent), Some(name)) => {
            let mut file = name.to_os_string();
            file.push(".ckpt");
            parent.join("checkpoints").join(file)
        }
        _ => path.to_path_buf(),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let resolved = resolve_checkpoint(path);
    checkpoint::load(&resolved).with_context(|| format!("loading checkpoint {}", resolved.display()))
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let ds = ingest_log(open(&a.data)?, &a.filter.options())?;
    fs::create_dir_all(&a.out)?;
    println!(
        "{} students, {} interactions, {} questions, {} concepts",
        ds.len(),
        ds.n_interactions(),
        ds.catalog.n_questions(),
        ds.catalog.n_concepts()
    );
    let (rest, test) = match a.test_fraction {
        Some(f) => {
            let (rest, test) = split(&ds, f, a.seed)?;
            (rest, Some(test))
        }
        None => (ds, None),
    };
    let (train, val) = match a.val_fraction {
        Some(f) => {
            let (train, val) = split(&rest, f, a.seed.wrapping_add(1))?;
            (train, Some(val))
        }
        None => (rest, None),
    };
    if test.is_none() && val.is_none() {
        write_dataset(&train, &a.out.join("corpus.csv"))?;
        return Ok(());
    }
    write_dataset(&train, &a.out.join("train.csv"))?;
    for (name, part) in [("val.csv", &val), ("test.csv", &test)] {
        if let Some(d) = part {
            write_dataset(d, &a.out.join(name))?;
            println!("{name}: {} students", d.len());
        }
    }
    println!("train.csv: {} students", train.len());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = OracleConfig {
        n_students: a.students,
        n_questions: a.questions,
        n_concepts: a.concepts,
        seed: a.seed,
        ..OracleConfig::default()
    };
    if let Some(v) = a.min_len {
        cfg.min_len = v;
    }
    if let Some(v) = a.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = a.learning_gain {
        cfg.learning_gain = v;
    }
    if let Some(v) = a.guess {
        cfg.guess = v;
    }
    if let Some(v) = a.slip {
        cfg.slip = v;
    }
    let sim = simulate(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_dataset(&sim.dataset, &a.out.join("corpus.csv"))?;
    let mut w = create(&a.out.join("truth.csv"))?;
    sim.write_truth_csv(&mut w)?;
    w.flush()?;
    println!(
        "{} students, {} interactions written to {}",
        sim.dataset.len(),
        sim.dataset.n_interactions(),
        a.out.display()
    );
    Ok(())
}

/// Per sequence: each configured augmentation, one label reversal and, with
/// a generator, one generated sample over the real and one over sampled
/// questions.
fn dry_run_samples(
    ds: &Dataset,
    cfg: &TrainConfig,
    generator: Option<&advkt::generator::GeneratorModel>,
) -> Result<Vec<AugmentedSample>> {
    let stats = compute_stats(ds, cfg.difficulty_smoothing)?;
    let registry = AugmentationRegistry::default();
    let augs = registry.select(&cfg.augmentations)?;
    let ctx = AugmentContext {
        stats: &stats,
        mask_id: ds.catalog.mask_id(),
        rates: cfg.rates,
    };
    let mut out = Vec::new();
    for (i, s) in real_samples(ds).into_iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, 0xA0, 0, i);
        for aug in &augs {
            out.push(aug.apply(&s.steps, &ctx, &mut rng)?);
        }
        out.push(reverse_labels(&s.steps, cfg.rates.flip, &mut rng)?);
        if let Some(g) = generator {
            let mut synthetic = sample_synthetic_questions(&stats, &mut rng);
            synthetic.truncate(cfg.max_len);
            for qs in [s.questions(), synthetic] {
                let hard = g.rollout(&qs, None, Mode::MultiStep)?.hard_responses();
                let steps = qs.into_iter().zip(hard).map(|(q, r)| Step::new(q, r)).collect();
                out.push(AugmentedSample::new(steps, Provenance::Generative));
            }
        }
        out.push(s);
    }
    Ok(out)
}

fn cmd_augment(a: &AugmentArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let ck = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let ds = match &ck {
        Some(c) => ingest_log_with_catalog(open(&a.data)?, &a.filter.options(), Arc::clone(&c.generator.catalog))?,
        None => ingest_log(open(&a.data)?, &a.filter.options())?,
    };
    let samples = dry_run_samples(&ds, &cfg, ck.as_ref().map(|c| &c.generator))?;
    let mut w = create(&a.out)?;
    write_samples_csv(&ds.catalog, &samples, &mut w)?;
    w.flush()?;
    println!("{} samples written to {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let mut parts = ingest_logs(vec![open(&a.data)?, open(&a.val)?], &a.filter.options())?;
    let val = parts.pop().expect("two datasets");
    let train = parts.pop().expect("two datasets");

    let ck_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    fs::write(a.out.join("config.resolved"), cfg.to_text())?;
    let mut metrics = create(&a.out.join("metrics.csv"))?;
    writeln!(metrics, "{METRICS_HEADER}")?;

    let run = train_observed(&cfg, &train, &val, |ev| {
        writeln!(metrics, "{}", ev.record.csv_row())?;
        metrics.flush()?;
        checkpoint::save(&ck_dir.join("last.ckpt"), ev.generator, ev.discriminator)?;
        if ev.is_best {
            checkpoint::save(&ck_dir.join("best.ckpt"), ev.generator, ev.discriminator)?;
        }
        eprintln!(
            "epoch {:>3}  bce {:.4}  adv {:.4}  ar {:.4}  val acc {:.4}  val auc {:.4}{}",
            ev.record.epoch,
            ev.record.l_bce,
            ev.record.l_adv,
            ev.record.l_ar,
            ev.record.val_acc,
            ev.record.val_auc,
            if ev.is_best { "  *" } else { "" }
        );
        Ok(())
    })?;

    let mut report = create(&a.out.join("report.txt"))?;
    writeln!(report, "train students: {}", train.len())?;
    writeln!(report, "val students: {}", val.len())?;
    writeln!(report, "epochs run: {}", run.history.len())?;
    writeln!(report, "stopped early: {}", run.stopped_early)?;
    writeln!(report, "best epoch: {}", run.best_epoch)?;
    writeln!(report, "best val multi-step auc: {:.6}", run.best_val_auc)?;
    writeln!(report, "random streams:")?;
    for line in &run.rng_log {
        writeln!(report, "  {line}")?;
    }
    report.flush()?;
    println!(
        "best epoch {} with validation multi-step AUC {:.4}; run written to {}",
        run.best_epoch,
        run.best_val_auc,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = ingest_log_with_catalog(open(&a.data)?, &a.filter.options(), Arc::clone(&ck.generator.catalog))?;
    let opts = EvalOptions {
        edges: a.edges.clone(),
        per_student: a.per_student,
    };
    let report = evaluate_with(&ck.generator, &ds, a.mode, &opts)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    write!(out, "{report}")?;
    writeln!(out)?;
    report.write_csv(&mut out)?;
    writeln!(out)?;
    write_buckets_csv(&report.buckets, &mut out)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let mut w = create(&dir.join("report.csv"))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir.join("buckets.csv"))?;
        write_buckets_csv(&report.buckets, &mut w)?;
        w.flush()?;
        fs::write(dir.join("report.txt"), report.to_string())?;
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = ingest_log_with_catalog(open(&a.data)?, &a.filter.options(), Arc::clone(&ck.generator.catalog))?;
    if ds.is_empty() {
        bail!("no sequences to export");
    }
    let samples = dry_run_samples(&ds, &cfg, Some(&ck.generator))?;
    let mut w = create(&a.out)?;
    export_embeddings(&ck.discriminator, &samples, &mut w)?;
    w.flush()?;
    println!("{} embeddings written to {}", samples.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(advkt::Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .filter_map(|e| e.downcast_ref::<advkt::Error>())
        .any(advkt::Error::is_validation);
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
