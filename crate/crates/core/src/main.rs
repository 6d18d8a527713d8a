use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use irts_core::autodiff::{set_precision, Precision, DEFAULT_STEP};
use irts_core::data::Dataset;
use irts_core::gradsuite;
use irts_core::models::{impute, predict_labels};
use irts_core::rng;
use irts_core::synthetic::{generate_dataset, GeneratorConfig};
use irts_core::train::{auc, Checkpoint, MetricsRow, ModelKind, TrainConfig, Trainer, METRICS_HEADER};
use irts_core::Error;

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CAPABILITY: u8 = 4;

#[derive(Parser)]
#[command(name = "irts", version, about = "Train and apply encoder-decoder models on irregularly-sampled series")]
struct Cli {
    /// Worker threads for data-parallel work; 1 runs everything serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic three-channel dataset as JSONL.
    Generate(GenerateArgs),
    /// Train a model and log metrics.
    Train(TrainArgs),
    /// Write sampled trajectories on a dense grid for selected cases.
    Impute(ImputeArgs),
    /// Predict labels with a trained classifier head.
    Classify(ClassifyArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach class labels (channel-3 frequency 12 or 15).
    #[arg(long)]
    labeled: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; defaults to the tail of --data (see --valid-fraction).
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    /// JSON training configuration (bare or a run manifest); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint; metrics are appended.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    disc_lr: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
    /// Train a classifier head jointly with this many classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    classifier_weight: Option<f64>,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    ckpt: PathBuf,
    /// Fill the seconds column (makes the CSV run-dependent).
    #[arg(long)]
    record_time: bool,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Case index; repeatable. All cases when omitted.
    #[arg(long)]
    case: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "imputations.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Run only the named check.
    #[arg(long)]
    op: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Record of one invocation, written before the run and finalized after.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: Value,
    seed: Option<u64>,
    version: String,
    precision: String,
    threads: Option<usize>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started_unix: f64,
    finished_unix: Option<f64>,
    status: String,
    summary: Value,
}

impl RunManifest {
    fn begin(command: &str, config: Value, seed: Option<u64>, inputs: &[&Path], outputs: &[&Path], threads: Option<usize>) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            precision: match irts_core::autodiff::precision() {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            threads,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            summary: Value::Null,
        }
    }

    fn write(&self, path: &Path) -> anyhow::Result<()> {
        let f = File::create(path).with_context(|| format!("cannot write manifest {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }

    fn finish(&mut self, path: &Path, status: &str, summary: Value) -> anyhow::Result<()> {
        self.finished_unix = Some(now());
        self.status = status.into();
        self.summary = summary;
        self.write(path)
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Runs `body` between the initial and final manifest writes.
fn with_manifest<T>(
    mut manifest: RunManifest,
    path: &Path,
    body: impl FnOnce() -> anyhow::Result<(T, Value)>,
) -> anyhow::Result<T> {
    manifest.write(path)?;
    match body() {
        Ok((out, summary)) => {
            manifest.finish(path, "ok", summary)?;
            Ok(out)
        }
        Err(e) => {
            let _ = manifest.finish(path, "failed", json!({ "error": format!("{e:#}") }));
            Err(e)
        }
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn cmd_generate(a: GenerateArgs, threads: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = GeneratorConfig {
        n_cases: a.n,
        seed: a.seed,
        labeled: a.labeled,
        ..Default::default()
    };
    if let Some(r) = a.rate {
        cfg.rate = r;
    }
    if let Some(w) = a.window {
        cfg.window = w;
        cfg.start_max = 1.0 - w;
    }
    if let Some(n) = a.noise {
        cfg.noise_std = n;
    }
    cfg.validate()?;
    let manifest = RunManifest::begin("generate", serde_json::to_value(&cfg)?, Some(cfg.seed), &[], &[&a.out], threads);
    with_manifest(manifest, &manifest_path(&a.out), || {
        let d = generate_dataset(&cfg)?;
        d.save(&a.out)
            .with_context(|| format!("cannot write {}", a.out.display()))?;
        eprintln!("wrote {} cases to {}", d.len(), a.out.display());
        Ok(((), json!({ "cases": d.len() })))
    })
}

fn read_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let cfg = match v.get("config") {
        Some(inner) if v.get("command").is_some() => inner.clone(),
        _ => v,
    };
    serde_json::from_value(cfg).with_context(|| format!("{} is not a training configuration", path.display()))
}

fn apply_flags(cfg: &mut TrainConfig, a: &TrainArgs) {
    if let Some(m) = a.model {
        cfg.model_kind = m;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),*) => {
            $(if let Some(v) = a.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(epochs => epochs, seed => seed, lambda => lambda, k => k, batch_size => batch_size, lr => lr,
         disc_lr => disc_lr, latent_dim => model.latent_dim, eval_every => eval_every, holdout => holdout,
         classes => model.classes, classifier_weight => classifier_weight);
    if a.record_time {
        cfg.record_time = true;
    }
}

fn cmd_train(a: TrainArgs, threads: Option<usize>) -> anyhow::Result<()> {
    let data = load_dataset(&a.data)?;
    let (train_set, valid_set) = match &a.valid {
        Some(p) => (data, load_dataset(p)?),
        None => {
            if !(a.valid_fraction > 0.0 && a.valid_fraction < 1.0) {
                return Err(Error::InvalidArgument(format!("--valid-fraction must lie in (0, 1), got {}", a.valid_fraction)).into());
            }
            let n_valid = ((data.len() as f64 * a.valid_fraction).round() as usize).clamp(1, data.len().max(1));
            data.split_at(data.len().saturating_sub(n_valid))
        }
    };

    let mut trainer = match &a.resume {
        Some(p) => {
            let mut ckpt = Checkpoint::load(p).with_context(|| format!("cannot load checkpoint {}", p.display()))?;
            if let Some(e) = a.epochs {
                ckpt.config.epochs = e;
            }
            if a.record_time {
                ckpt.config.record_time = true;
            }
            Trainer::from_checkpoint(&ckpt)?
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => read_config(p)?,
                None => TrainConfig::default(),
            };
            if a.config.is_none() {
                cfg.model.channels = train_set.channels();
            }
            apply_flags(&mut cfg, &a);
            Trainer::new(cfg)?
        }
    };

    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.valid.as_deref());
    inputs.extend(a.resume.as_deref());
    let manifest = RunManifest::begin(
        "train",
        serde_json::to_value(&trainer.config)?,
        Some(trainer.config.seed),
        &inputs,
        &[&a.ckpt, &a.metrics],
        threads,
    );
    with_manifest(manifest, &manifest_path(&a.ckpt), || {
        let append = a.resume.is_some() && a.metrics.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&a.metrics)
            .with_context(|| format!("cannot write {}", a.metrics.display()))?;
        let mut csv = BufWriter::new(file);
        if !append || std::fs::metadata(&a.metrics)?.len() == 0 {
            writeln!(csv, "{METRICS_HEADER}")?;
            csv.flush()?;
        }
        let result = trainer.run(&train_set, &valid_set, |row: &MetricsRow| {
            writeln!(csv, "{}", row.csv_line())?;
            csv.flush()?;
            eprintln!(
                "epoch {:>3} step {:>6} loss {} rmse {}",
                row.epoch,
                row.step,
                row.loss_total.map_or("-".into(), |v| format!("{v:.4}")),
                row.rmse.map_or("-".into(), |v| format!("{v:.4}"))
            );
            Ok(())
        });
        let rows = result?;
        trainer.checkpoint().save(&a.ckpt)
            .with_context(|| format!("cannot write {}", a.ckpt.display()))?;
        let last = rows.last();
        Ok((
            (),
            json!({
                "epochs": trainer.epoch,
                "steps": trainer.step,
                "rows": rows.len(),
                "rmse": last.and_then(|r| r.rmse),
                "auc": last.and_then(|r| r.auc),
            }),
        ))
    })
}

fn grid(points: usize) -> Vec<f64> {
    match points {
        1 => vec![0.0],
        n => (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    }
}

fn cmd_impute(a: ImputeArgs, threads: Option<usize>) -> anyhow::Result<()> {
    if a.grid == 0 || a.samples == 0 {
        return Err(Error::InvalidArgument("--grid and --samples must be positive".into()).into());
    }
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("cannot load checkpoint {}", a.ckpt.display()))?;
    let model = ckpt.model()?;
    let data = load_dataset(&a.data)?;
    let cases: Vec<usize> = if a.case.is_empty() { (0..data.len()).collect() } else { a.case.clone() };
    if let Some(&bad) = cases.iter().find(|&&c| c >= data.len()) {
        return Err(Error::InvalidArgument(format!("case {bad} out of range for {} cases", data.len())).into());
    }
    let manifest = RunManifest::begin(
        "impute",
        json!({ "cases": cases, "samples": a.samples, "grid": a.grid, "checkpoint_config": ckpt.config }),
        Some(a.seed),
        &[&a.ckpt, &a.data],
        &[&a.out],
        threads,
    );
    with_manifest(manifest, &manifest_path(&a.out), || {
        let times = grid(a.grid);
        let queries = vec![times.clone(); model.config.channels];
        let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?);
        for &i in &cases {
            let case = &data.cases[i];
            let imp = impute(&model, case, &queries, a.samples, &mut rng::stream(a.seed, rng::INFER, i as u64))?;
            let obs: Vec<(usize, f64, f64)> = case
                .channels
                .iter()
                .enumerate()
                .flat_map(|(c, o)| o.iter().map(move |&(t, x)| (c, t, x)))
                .collect();
            let line = json!({
                "case": i,
                "label": case.label,
                "grid": times,
                "observations": obs,
                "samples": imp.samples,
            });
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(((), json!({ "cases": cases.len() })))
    })
}

fn cmd_classify(a: ClassifyArgs, threads: Option<usize>) -> anyhow::Result<()> {
    if a.samples == 0 {
        return Err(Error::InvalidArgument("--samples must be positive".into()).into());
    }
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("cannot load checkpoint {}", a.ckpt.display()))?;
    let model = ckpt.model()?;
    let classes = match &model.classifier {
        Some(c) => c.classes,
        None => return Err(Error::Capability("checkpoint has no classifier head".into()).into()),
    };
    let data = load_dataset(&a.data)?;
    let missing: Vec<usize> = (0..data.len()).filter(|&i| data.cases[i].label.is_none()).collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(10).map(|i| i.to_string()).collect();
        bail!(
            "dataset {} has {} cases without labels (first: {})",
            a.data.display(),
            missing.len(),
            shown.join(", ")
        );
    }
    let manifest = RunManifest::begin(
        "classify",
        json!({ "samples": a.samples, "checkpoint_config": ckpt.config }),
        Some(a.seed),
        &[&a.ckpt, &a.data],
        &[&a.out],
        threads,
    );
    with_manifest(manifest, &manifest_path(&a.out), || {
        let cases: Vec<_> = data.cases.iter().collect();
        let mut preds = Vec::with_capacity(cases.len());
        for (chunk_idx, chunk) in cases.chunks(256).enumerate() {
            let mut r = rng::stream(a.seed, rng::INFER, chunk_idx as u64);
            preds.extend(predict_labels(&model, chunk, a.samples, &mut r)?);
        }
        let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?);
        let header: Vec<String> = (0..classes).map(|k| format!("logp_{k}")).collect();
        writeln!(out, "case,label,predicted,{}", header.join(","))?;
        let mut correct = 0;
        for (i, ((pred, lp), case)) in preds.iter().zip(&data.cases).enumerate() {
            let label = case.label.expect("checked above");
            correct += usize::from(*pred == label);
            let lp: Vec<String> = lp.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{label},{pred},{}", lp.join(","))?;
        }
        out.flush()?;
        let accuracy = correct as f64 / data.len().max(1) as f64;
        let auc_value = if classes == 2 {
            let scores: Vec<f64> = preds.iter().map(|p| p.1[1] - p.1[0]).collect();
            let labels: Vec<bool> = data.cases.iter().map(|c| c.label == Some(1)).collect();
            match auc(&scores, &labels) {
                Ok(v) => Some(v),
                Err(Error::SingleClass) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        match auc_value {
            Some(v) => println!("AUC {v:.6}  accuracy {accuracy:.4}  cases {}", data.len()),
            None => println!("AUC n/a  accuracy {accuracy:.4}  cases {}", data.len()),
        }
        Ok(((), json!({ "auc": auc_value, "accuracy": accuracy, "cases": data.len() })))
    })
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    set_precision(Precision::F64);
    let entries = gradsuite::run_suite(a.op.as_deref(), a.step, a.tol)?;
    for e in &entries {
        let status = if e.report.passed() { "ok" } else { "FAIL" };
        println!("{:<22} {:>4}  max rel err {:.3e}  ({:.2}s)", e.name, status, e.report.max_rel_err(), e.seconds);
    }
    let failed = entries.iter().filter(|e| !e.report.passed()).count();
    if failed == 0 {
        println!("all {} checks passed at tolerance {:e}", entries.len(), a.tol);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some((e, err)) = gradsuite::worst(&entries) {
        let p = e.report.worst().expect("failed report has parameters");
        eprintln!(
            "{failed} of {} checks failed; worst: {} parameter `{}`[{}] rel err {err:.3e} (analytic {:e}, numeric {:e})",
            entries.len(),
            e.name,
            p.name,
            p.worst_index,
            p.analytic,
            p.numeric
        );
    }
    Ok(ExitCode::from(EXIT_CHECK))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => EXIT_DIVERGED,
        Some(Error::Capability(_)) => EXIT_CAPABILITY,
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_CHECK,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match std::env::var("IRTS_PRECISION").as_deref() {
        Err(_) | Ok("f64") | Ok("") => set_precision(Precision::F64),
        Ok("f32") => set_precision(Precision::F32),
        Ok(other) => {
            return Err(Error::InvalidArgument(format!("IRTS_PRECISION must be f32 or f64, got `{other}`")).into())
        }
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    let t = cli.threads;
    match cli.command {
        Command::Generate(a) => cmd_generate(a, t)?,
        Command::Train(a) => cmd_train(a, t)?,
        Command::Impute(a) => cmd_impute(a, t)?,
        Command::Classify(a) => cmd_classify(a, t)?,
        Command::Gradcheck(a) => return cmd_gradcheck(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
