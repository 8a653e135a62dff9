//! `xmtc` command line. Every subcommand is a request to the HTTP service;
//! without `--server` an in-process service is started on a loopback port.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use xmtc_client::{Client, ClientError};
use xmtc_core::data::Split;
use xmtc_core::metrics::{Metric, RankingScope, DEFAULT_THRESHOLD};
use xmtc_core::models::{Architecture, ModelConfig};
use xmtc_core::protocol::{
    AttnRequest, EvalRequest, GoldSource, IngestRequest, MetricsRequest, SigTestRequest, TrainRequest, TuneRequest,
};
use xmtc_core::train::{AdamConfig, SearchSpace, TrainOptions, TuneOptions, DEFAULT_EPOCHS, DEFAULT_PATIENCE};
use xmtc_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "xmtc", version, about = "Extreme multi-label text classification")]
pub struct Cli {
    /// Service URL. Without it an embedded service is started.
    #[arg(long, global = true, env = "XMTC_SERVER")]
    pub server: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a corpus and cache it with its embeddings.
    Ingest(IngestArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Random search over the hyper-parameter grid.
    Tune(TuneArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Approximate randomization test between two predictions files.
    Sigtest(SigtestArgs),
    /// Export attention weights for one document.
    Attn(AttnArgs),
    /// Score a predictions file against a gold file.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory with train/, dev/ and test/ document files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label descriptor file.
    #[arg(long)]
    pub descriptors: PathBuf,
    /// Word vectors in text format.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Output directory for the cached dataset.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Cached dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_architecture)]
    pub model: Architecture,
    /// Key-value model configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables.
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    pub patience: usize,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write the epoch log as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    /// Number of grid points to try.
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON search space replacing the default grid.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Write the winning configuration as a config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// K values: `1..10`, `5` or `1,3,5`.
    #[arg(long = "k", default_value = "1..10", value_parser = parse_ks)]
    pub ks: KList,
    /// `restricted` or `global` ranking for bucket scopes.
    #[arg(long, default_value = "restricted", value_parser = parse_ranking)]
    pub ranking: RankingScope,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Write the JSON report here and print the text table to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[command(flatten)]
    pub report: ReportArgs,
    /// Also write the scores as a predictions file.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SigtestArgs {
    /// Predictions file of the first system.
    #[arg(long)]
    pub a: PathBuf,
    /// Predictions file of the second system.
    #[arg(long)]
    pub b: PathBuf,
    /// Gold file; alternatively use --dataset and --split.
    #[arg(long, conflicts_with = "dataset")]
    pub gold: Option<PathBuf>,
    #[arg(long, requires = "split")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long, default_value = "RP@5", value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub doc_id: String,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Cached dataset supplying label buckets.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KList(pub Vec<usize>);

/// `a..b` (inclusive), `a..=b`, a single K or a comma-separated list.
pub fn parse_ks(s: &str) -> Result<KList, String> {
    let bad = || format!("invalid K list `{s}`");
    let num = |t: &str| t.trim().parse::<usize>().ok().filter(|&k| k > 0).ok_or_else(bad);
    let ks = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    Ok(KList(ks))
}

pub fn parse_architecture(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: xmtc_core::Error| e.to_string())
}

pub fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: xmtc_core::Error| e.to_string())
}

pub fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: xmtc_core::Error| e.to_string())
}

pub fn parse_ranking(s: &str) -> Result<RankingScope, String> {
    match s {
        "restricted" => Ok(RankingScope::Restricted),
        "global" => Ok(RankingScope::Global),
        _ => Err(format!("unknown ranking `{s}` (restricted or global)")),
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<xmtc_core::Error> for CliError {
    fn from(e: xmtc_core::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

type CliResult<T> = Result<T, CliError>;

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("response types serialize")
}

/// Model configuration from an optional config file, with `--model` as the
/// architecture. A file naming a different architecture is rejected.
pub fn model_config(model: Architecture, file: Option<&Path>) -> CliResult<ModelConfig> {
    let Some(path) = file else {
        return Ok(ModelConfig::for_architecture(model));
    };
    let text = read_text(path)?;
    let mut config = ModelConfig::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let names_architecture = text.lines().any(|line| {
        let line = line.split('#').next().unwrap_or("");
        line.split_once('=')
            .is_some_and(|(k, _)| matches!(k.trim(), "architecture" | "model"))
    });
    if names_architecture && config.architecture != model {
        return Err(CliError::usage(format!(
            "{} configures {}, but --model is {model}",
            path.display(),
            config.architecture
        )));
    }
    config.architecture = model;
    config.validate()?;
    Ok(config)
}

fn train_options(common: &TrainingArgs, seed: u64) -> CliResult<TrainOptions> {
    let mut optimizer = AdamConfig::default();
    if let Some(lr) = common.lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::usage("--lr must be a positive number"));
        }
        optimizer.learning_rate = lr;
    }
    Ok(TrainOptions {
        epochs: common.epochs,
        patience: common.patience,
        seed,
        optimizer,
    })
}

async fn run_command(client: &Client, command: Command) -> CliResult<()> {
    let mut stdout = std::io::stdout();
    match command {
        Command::Ingest(a) => {
            let req = IngestRequest {
                corpus_dir: absolute(&a.corpus)?,
                descriptors: absolute(&a.descriptors)?,
                embeddings: absolute(&a.embeddings)?,
                dim: a.dim,
                out: absolute(&a.out)?,
            };
            let resp = client.ingest(&req).await?;
            println!("{}", to_json(&resp));
        }
        Command::Train(a) => {
            let req = TrainRequest {
                dataset: absolute(&a.common.dataset)?,
                config: model_config(a.common.model, a.common.config.as_deref())?,
                options: train_options(&a.common, a.seed)?,
                out: absolute(&a.out)?,
                resume: a.resume.as_deref().map(absolute).transpose()?,
            };
            let mut log_file = match &a.log {
                Some(p) => Some(fs::File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let mut log_error = None;
            let resp = client
                .train(&req, &mut |e| {
                    eprintln!(
                        "epoch {:>3}  train loss {:.5}  dev loss {:.5}  dev RP@5 {:.4}  dev nDCG@5 {:.4}{}",
                        e.epoch,
                        e.train_loss,
                        e.dev_loss,
                        e.dev_rp5,
                        e.dev_ndcg5,
                        if e.improved { "  *" } else { "" }
                    );
                    if let Some(f) = log_file.as_mut() {
                        let line = serde_json::to_string(e).expect("epoch logs serialize");
                        if let Err(err) = writeln!(f, "{line}") {
                            log_error.get_or_insert(err);
                        }
                    }
                })
                .await?;
            if let Some(err) = log_error {
                return Err(CliError::data(format!("epoch log: {err}")));
            }
            println!("{}", to_json(&resp));
        }
        Command::Tune(a) => {
            let space = match &a.space {
                Some(p) => serde_json::from_str::<SearchSpace>(&read_text(p)?)
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
                None => SearchSpace::default(),
            };
            let req = TuneRequest {
                dataset: absolute(&a.common.dataset)?,
                base: model_config(a.common.model, a.common.config.as_deref())?,
                options: TuneOptions {
                    budget: a.budget,
                    seed: a.seed,
                    space,
                    train: train_options(&a.common, a.seed)?,
                },
            };
            let outcome = client.tune(&req).await?;
            if let Some(out) = &a.out {
                write_text(out, &outcome.best.to_text())?;
            }
            println!("{}", to_json(&outcome));
        }
        Command::Eval(a) => {
            let req = EvalRequest {
                checkpoint: absolute(&a.checkpoint)?,
                dataset: absolute(&a.dataset)?,
                split: a.split,
                ks: a.report.ks.0.clone(),
                ranking: a.report.ranking,
                threshold: a.report.threshold,
                predictions_out: a.predictions_out.as_deref().map(absolute).transpose()?,
            };
            let report = client.eval(&req).await?;
            emit_report(&report, a.report.out.as_deref(), &mut stdout)?;
        }
        Command::Sigtest(a) => {
            let gold = match (&a.gold, &a.dataset, a.split) {
                (Some(g), None, _) => GoldSource::File(absolute(g)?),
                (None, Some(d), Some(split)) => GoldSource::Dataset {
                    dataset: absolute(d)?,
                    split,
                },
                _ => return Err(CliError::usage("give --gold, or --dataset with --split")),
            };
            let req = SigTestRequest {
                a: absolute(&a.a)?,
                b: absolute(&a.b)?,
                gold,
                metric: a.metric,
                iterations: a.iterations,
                seed: a.seed,
                threshold: a.threshold,
            };
            let result = client.sigtest(&req).await?;
            println!("{}", to_json(&result));
        }
        Command::Attn(a) => {
            let req = AttnRequest {
                checkpoint: absolute(&a.checkpoint)?,
                dataset: absolute(&a.dataset)?,
                doc_id: a.doc_id,
                top_k: a.top_k,
            };
            let record = client.attn(&req).await?;
            match &a.out {
                Some(p) => write_text(p, &to_json(&record))?,
                None => println!("{}", to_json(&record)),
            }
        }
        Command::Metrics(a) => {
            let req = MetricsRequest {
                predictions: absolute(&a.predictions)?,
                gold: absolute(&a.gold)?,
                dataset: a.dataset.as_deref().map(absolute).transpose()?,
                ks: a.report.ks.0.clone(),
                ranking: a.report.ranking,
                threshold: a.report.threshold,
            };
            let report = client.metrics(&req).await?;
            emit_report(&report, a.report.out.as_deref(), &mut stdout)?;
        }
    }
    Ok(())
}

/// JSON to stdout and the table to stderr, or JSON to `out` and the table to
/// stdout.
fn emit_report(report: &xmtc_core::metrics::EvalReport, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(p) => {
            write_text(p, &to_json(report))?;
            let _ = write!(stdout, "{}", report.to_text());
        }
        None => {
            let _ = writeln!(stdout, "{}", to_json(report));
            eprint!("{}", report.to_text());
        }
    }
    Ok(())
}

async fn run_async(cli: Cli) -> CliResult<()> {
    let base = match cli.server {
        Some(url) => url,
        None => {
            let addr = xmtc_service::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| CliError::usage(format!("cannot start embedded service: {e}")))?;
            format!("http://{addr}")
        }
    };
    run_command(&Client::new(base), cli.command).await
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return 1;
        }
    };
    match runtime.block_on(run_async(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind)
        }
    }
}
