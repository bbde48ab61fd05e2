//! `islim` command-line front end.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use implicit_slim::data::{self, LoadOptions};
use implicit_slim::embedding::{EmbeddingMatrix, EntityKind};
use implicit_slim::eval;
use implicit_slim::formats;
use implicit_slim::implicit::{self, InitialEmbeddings};
use implicit_slim::models::{self, ModelKind, Setup, TrainConfig, Validation};
use implicit_slim::slim::{self, DiagMode};
use implicit_slim::sweep::{self, Param, SweepGrid};
use implicit_slim::synth::{self, SynthSpec};
use implicit_slim::{Error, ErrorClass, ImplicitSlimParams, Result, SplitParams};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "islim",
    version,
    about = "ImplicitSLIM embeddings, MF/PLRec training and evaluation"
)]
pub struct Cli {
    /// Seed for every random choice (overrides `seed` in the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key=value file with command parameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a CSV of interactions, filter inactive users/items, write a matrix file.
    Ingest(IngestArgs),
    /// Split users into train / validation / test with fold-in and holdout parts.
    Split(SplitArgs),
    /// Extract item embeddings with ImplicitSLIM or SLIM-LLE.
    Extract(ExtractArgs),
    /// Train an MF or PLRec model on a split.
    Train(TrainArgs),
    /// Evaluate a trained model on the validation or test users of a split.
    Evaluate(EvaluateArgs),
    /// Compare the fast ImplicitSLIM path with the dense reference on random data.
    OracleCheck(OracleArgs),
    /// Generate a synthetic dataset with planted item clusters.
    Synth(SynthArgs),
    /// Grid search over hyperparameters on a split.
    Sweep(SweepArgs),
}

type Flags = Vec<(&'static str, Option<String>)>;

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `pairs` (user,item) or `triples` (user,item,rating).
    #[arg(long)]
    pub format: Option<String>,
    /// Keep triples with rating ≥ threshold.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Skip the first line.
    #[arg(long)]
    pub header: Option<String>,
    #[arg(long = "min_user")]
    pub min_user: Option<String>,
    #[arg(long = "min_item")]
    pub min_item: Option<String>,
    /// Where to write the id map (default: next to the output).
    #[arg(long)]
    pub ids: Option<PathBuf>,
}

impl IngestArgs {
    const KEYS: &'static [&'static str] = &[
        "input",
        "output",
        "format",
        "threshold",
        "header",
        "min_user",
        "min_item",
        "ids",
        "seed",
    ];

    fn flags(&self) -> Flags {
        vec![
            (
                "input",
                self.input.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("format", s(&self.format)),
            ("threshold", s(&self.threshold)),
            ("header", s(&self.header)),
            ("min_user", s(&self.min_user)),
            ("min_item", s(&self.min_item)),
            ("ids", self.ids.as_ref().map(|p| p.display().to_string())),
        ]
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long = "valid_frac")]
    pub valid_frac: Option<String>,
    #[arg(long = "test_frac")]
    pub test_frac: Option<String>,
    #[arg(long = "fold_in_frac")]
    pub fold_in_frac: Option<String>,
}

impl SplitArgs {
    const KEYS: &'static [&'static str] = &[
        "input",
        "output",
        "valid_frac",
        "test_frac",
        "fold_in_frac",
        "seed",
    ];

    fn flags(&self) -> Flags {
        vec![
            (
                "input",
                self.input.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("valid_frac", s(&self.valid_frac)),
            ("test_frac", s(&self.test_frac)),
            ("fold_in_frac", s(&self.fold_in_frac)),
        ]
    }
}

/// Hyperparameters shared by extraction, training and sweeps. Values are
/// kept as text so that sweeps can take comma-separated grids.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Embedding dimension.
    #[arg(long = "L")]
    pub latent_dim: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long = "r_p")]
    pub r_p: Option<String>,
    #[arg(long = "r_q")]
    pub r_q: Option<String>,
    #[arg(long = "s_q")]
    pub s_q: Option<String>,
    /// PLRec column-normalization exponent.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long = "popularity_threshold")]
    pub popularity_threshold: Option<String>,
    #[arg(long)]
    pub repeat: Option<String>,
    #[arg(long = "max_iters")]
    pub max_iters: Option<String>,
}

impl HyperArgs {
    const KEYS: &'static [&'static str] = &[
        "L",
        "lambda",
        "alpha",
        "r_p",
        "r_q",
        "s_q",
        "n",
        "popularity_threshold",
        "repeat",
        "max_iters",
    ];

    fn flags(&self) -> Flags {
        vec![
            ("L", s(&self.latent_dim)),
            ("lambda", s(&self.lambda)),
            ("alpha", s(&self.alpha)),
            ("r_p", s(&self.r_p)),
            ("r_q", s(&self.r_q)),
            ("s_q", s(&self.s_q)),
            ("n", s(&self.n)),
            ("popularity_threshold", s(&self.popularity_threshold)),
            ("repeat", s(&self.repeat)),
            ("max_iters", s(&self.max_iters)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Training matrix file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Embedding file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `implicit_slim` or `slim_lle`.
    #[arg(long)]
    pub method: Option<String>,
    /// Initial embeddings (default: standard Gaussian).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl ExtractArgs {
    const KEYS: &'static [&'static str] = &[
        "input",
        "output",
        "method",
        "init",
        "L",
        "lambda",
        "alpha",
        "popularity_threshold",
        "repeat",
        "seed",
    ];

    fn flags(&self) -> Flags {
        let mut f = vec![
            (
                "input",
                self.input.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("method", s(&self.method)),
            ("init", self.init.as_ref().map(|p| p.display().to_string())),
        ];
        f.extend(self.hyper.flags());
        f
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split directory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Model directory to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `mf` or `plrec`.
    #[arg(long)]
    pub model: Option<String>,
    /// `vanilla`, `islim_init_reg`, `islim_init` or `slimlle_init`.
    #[arg(long)]
    pub setup: Option<String>,
    /// Fit a per-item bias.
    #[arg(long = "use_bias")]
    pub use_bias: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

const MODEL_KEYS: &[&str] = &["model", "setup", "use_bias", "seed"];

fn with_keys(base: &[&'static str], extra: &[&'static str]) -> Vec<&'static str> {
    base.iter().chain(extra).copied().collect()
}

impl TrainArgs {
    fn keys() -> Vec<&'static str> {
        let mut k = with_keys(&["split", "output"], MODEL_KEYS);
        k.extend_from_slice(HyperArgs::KEYS);
        k
    }

    fn flags(&self) -> Flags {
        let mut f = vec![
            (
                "split",
                self.split.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("model", s(&self.model)),
            ("setup", s(&self.setup)),
            ("use_bias", s(&self.use_bias)),
        ];
        f.extend(self.hyper.flags());
        f
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Split directory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// `test` (default) or `valid`.
    #[arg(long)]
    pub subset: Option<String>,
    /// Comma-separated cutoffs (default 20,50,100).
    #[arg(long)]
    pub ks: Option<String>,
    /// Report file (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Include per-user scores in the report.
    #[arg(long = "per_user")]
    pub per_user: Option<String>,
}

impl EvaluateArgs {
    const KEYS: &'static [&'static str] = &[
        "model", "split", "subset", "ks", "output", "per_user", "seed",
    ];

    fn flags(&self) -> Flags {
        vec![
            (
                "model",
                self.model.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "split",
                self.split.as_ref().map(|p| p.display().to_string()),
            ),
            ("subset", s(&self.subset)),
            ("ks", s(&self.ks)),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("per_user", s(&self.per_user)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub users: Option<String>,
    #[arg(long)]
    pub items: Option<String>,
    #[arg(long)]
    pub density: Option<String>,
    #[arg(long)]
    pub instances: Option<String>,
    /// Largest acceptable deviation.
    #[arg(long)]
    pub tolerance: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl OracleArgs {
    const KEYS: &'static [&'static str] = &[
        "users",
        "items",
        "density",
        "instances",
        "tolerance",
        "L",
        "lambda",
        "alpha",
        "seed",
    ];

    fn flags(&self) -> Flags {
        let mut f = vec![
            ("users", s(&self.users)),
            ("items", s(&self.items)),
            ("density", s(&self.density)),
            ("instances", s(&self.instances)),
            ("tolerance", s(&self.tolerance)),
        ];
        f.extend(self.hyper.flags());
        f
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Matrix file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional JSON file for the planted item clusters.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<String>,
    #[arg(long)]
    pub items: Option<String>,
    #[arg(long = "latent_dim_true")]
    pub latent_dim_true: Option<String>,
    #[arg(long)]
    pub clusters: Option<String>,
    #[arg(long)]
    pub density: Option<String>,
    #[arg(long)]
    pub skew: Option<String>,
    #[arg(long)]
    pub spread: Option<String>,
    #[arg(long)]
    pub signal: Option<String>,
}

impl SynthArgs {
    const KEYS: &'static [&'static str] = &[
        "output",
        "labels",
        "users",
        "items",
        "latent_dim_true",
        "clusters",
        "density",
        "skew",
        "spread",
        "signal",
        "seed",
    ];

    fn flags(&self) -> Flags {
        vec![
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "labels",
                self.labels.as_ref().map(|p| p.display().to_string()),
            ),
            ("users", s(&self.users)),
            ("items", s(&self.items)),
            ("latent_dim_true", s(&self.latent_dim_true)),
            ("clusters", s(&self.clusters)),
            ("density", s(&self.density)),
            ("skew", s(&self.skew)),
            ("spread", s(&self.spread)),
            ("signal", s(&self.signal)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Split directory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Report file (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also save the selected model to this directory.
    #[arg(long = "model_out")]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub setup: Option<String>,
    #[arg(long = "use_bias")]
    pub use_bias: Option<String>,
    /// Comma-separated test cutoffs (default 20,50,100).
    #[arg(long)]
    pub ks: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl SweepArgs {
    fn keys() -> Vec<&'static str> {
        let mut k = with_keys(&["split", "output", "model_out", "ks"], MODEL_KEYS);
        k.extend_from_slice(HyperArgs::KEYS);
        k
    }

    fn flags(&self) -> Flags {
        let mut f = vec![
            (
                "split",
                self.split.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "model_out",
                self.model_out.as_ref().map(|p| p.display().to_string()),
            ),
            ("model", s(&self.model)),
            ("setup", s(&self.setup)),
            ("use_bias", s(&self.use_bias)),
            ("ks", s(&self.ks)),
        ];
        f.extend(self.hyper.flags());
        f
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

/// One-line JSON error document for stderr.
pub fn error_json(err: &Error) -> String {
    let class = match err.class() {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    };
    serde_json::json!({ "error": { "class": class, "message": err.to_string() } }).to_string()
}

const DEFAULT_KS: [usize; 3] = [20, 50, 100];

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in tests.
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::debug!("global thread pool already initialized");
        }
    }
    let seed_flag = ("seed", cli.seed.map(|s| s.to_string()));
    let file = cli.config.as_deref();
    let build =
        |name: &'static str, keys: &[&str], grid: &'static [&'static str], mut flags: Flags| {
            flags.push(seed_flag.clone());
            RunConfig::build(name, keys, grid, file, flags)
        };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(&build("ingest", IngestArgs::KEYS, &[], a.flags())?),
        Command::Split(a) => cmd_split(&build("split", SplitArgs::KEYS, &[], a.flags())?),
        Command::Extract(a) => cmd_extract(&build("extract", ExtractArgs::KEYS, &[], a.flags())?),
        Command::Train(a) => cmd_train(&build("train", &TrainArgs::keys(), &[], a.flags())?),
        Command::Evaluate(a) => {
            cmd_evaluate(&build("evaluate", EvaluateArgs::KEYS, &[], a.flags())?)
        }
        Command::OracleCheck(a) => {
            cmd_oracle_check(&build("oracle-check", OracleArgs::KEYS, &[], a.flags())?)
        }
        Command::Synth(a) => cmd_synth(&build("synth", SynthArgs::KEYS, &[], a.flags())?),
        Command::Sweep(a) => cmd_sweep(&build(
            "sweep",
            &SweepArgs::keys(),
            HyperArgs::KEYS,
            a.flags(),
        )?),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a JSON document to `path`, or stdout without one.
fn emit_json(path: Option<&Path>, json: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, &format!("{json}\n")),
        None => print_stdout(json),
    }
}

/// A closed pipe (`islim ... | head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn bool_flag(cfg: &RunConfig, key: &str) -> Result<bool> {
    cfg.get_or(key, false)
}

fn ks(cfg: &RunConfig) -> Result<Vec<usize>> {
    Ok(cfg.list("ks")?.unwrap_or_else(|| DEFAULT_KS.to_vec()))
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let input = cfg.path("input")?;
    let output = cfg.path("output")?;
    let format = cfg.get_or("format", "pairs".to_string())?;
    let mut opts = match format.as_str() {
        "pairs" => LoadOptions::pairs(),
        "triples" => LoadOptions::triples(cfg.get_or("threshold", 0.0)?),
        other => return Err(Error::Config(format!("unknown format `{other}`"))),
    };
    if format == "pairs" && cfg.raw("threshold").is_some() {
        return Err(Error::Config("`threshold` needs format=triples".into()));
    }
    opts.has_header = bool_flag(cfg, "header")?;

    let (x, ids) = data::load_interactions(&input, &opts)?;
    let filtered = data::filter_activity_with_maps(
        &x,
        cfg.get_or("min_user", 1)?,
        cfg.get_or("min_item", 1)?,
    )?;
    let ids = ids.restrict(&filtered.kept_users, &filtered.kept_items);
    formats::write_sparse(&output, &filtered.matrix)?;
    let ids_path = cfg
        .opt_path("ids")?
        .unwrap_or_else(|| output.with_extension("ids.json"));
    write_text(&ids_path, &serde_json::to_string_pretty(&ids)?)?;
    let m = &filtered.matrix;
    emit_json(
        None,
        &serde_json::json!({ "users": m.n_users(), "items": m.n_items(), "nnz": m.nnz() })
            .to_string(),
    )
}

pub fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let x = formats::read_sparse(&cfg.path("input")?)?;
    let defaults = SplitParams::default();
    let params = SplitParams {
        valid_frac: cfg.get_or("valid_frac", defaults.valid_frac)?,
        test_frac: cfg.get_or("test_frac", defaults.test_frac)?,
        fold_in_frac: cfg.get_or("fold_in_frac", defaults.fold_in_frac)?,
        seed: cfg.get_or("seed", 0)?,
    };
    let split = data::split_strong(&x, &params)?;
    formats::save_split(&cfg.path("output")?, &split)?;
    emit_json(
        None,
        &serde_json::json!({
            "train_users": split.train_users.len(),
            "valid_users": split.valid_users.len(),
            "test_users": split.test_users.len(),
        })
        .to_string(),
    )
}

fn islim_params(cfg: &RunConfig) -> Result<ImplicitSlimParams> {
    let d = ImplicitSlimParams::default();
    Ok(ImplicitSlimParams {
        lambda: cfg.get_or("lambda", d.lambda)?,
        alpha: cfg.get_or("alpha", d.alpha)?,
        popularity_threshold: cfg.get_or("popularity_threshold", d.popularity_threshold)?,
        repeat: cfg.get_or("repeat", d.repeat)?,
    })
}

pub fn cmd_extract(cfg: &RunConfig) -> Result<()> {
    let x = formats::read_sparse(&cfg.path("input")?)?;
    let output = cfg.path("output")?;
    let params = islim_params(cfg)?;
    let method = cfg.get_or("method", "implicit_slim".to_string())?;
    let init = cfg.opt_path("init")?;
    let q = match method.as_str() {
        "implicit_slim" => {
            let init = match init {
                Some(p) => {
                    InitialEmbeddings::Given(formats::read_embeddings(&p, EntityKind::Item)?)
                }
                None => InitialEmbeddings::Gaussian {
                    latent_dim: cfg.require("L")?,
                    seed: cfg.get_or("seed", 0)?,
                },
            };
            implicit::iterate_implicit_slim(&x, init, &params, None)?.embeddings
        }
        "slim_lle" => {
            if init.is_some() {
                return Err(Error::Config(
                    "`init` is only used by method=implicit_slim".into(),
                ));
            }
            slim::slim_lle_embed(&x, params.lambda, cfg.require("L")?)?
        }
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    formats::write_embeddings(&output, &q)
}

fn model_and_setup(cfg: &RunConfig) -> Result<(ModelKind, Setup)> {
    let kind = cfg.get_or("model", "mf".to_string())?.parse()?;
    let setup = cfg.get_or("setup", "vanilla".to_string())?.parse()?;
    Ok((kind, setup))
}

fn train_config(cfg: &RunConfig) -> Result<(ModelKind, TrainConfig)> {
    let (kind, setup) = model_and_setup(cfg)?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        setup,
        latent_dim: cfg.get_or("L", d.latent_dim)?,
        max_iters: cfg.get_or("max_iters", d.max_iters)?,
        r_p: cfg.get_or("r_p", d.r_p)?,
        r_q: cfg.get_or("r_q", d.r_q)?,
        s_q: cfg.get_or("s_q", d.s_q)?,
        norm_exponent: cfg.get_or("n", d.norm_exponent)?,
        islim: islim_params(cfg)?,
        seed: cfg.get_or("seed", d.seed)?,
        use_bias: bool_flag(cfg, "use_bias")?,
    };
    Ok((kind, config))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let split = formats::load_split(&cfg.path("split")?)?;
    let output = cfg.path("output")?;
    let (kind, config) = train_config(cfg)?;
    let valid = Validation {
        fold_in: &split.valid_fold_in,
        holdout: &split.valid_holdout,
    };
    let outcome = models::train(kind, &split.train, Some(valid), &config)?;
    formats::save_model(&output, &outcome.model, config.setup)?;
    let summary = serde_json::json!({
        "model": kind.name(),
        "setup": config.setup.name(),
        "best_iteration": outcome.best_iteration,
        "validation_ndcg@100": outcome.history,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    write_text(&output.join("train.json"), &format!("{text}\n"))?;
    emit_json(None, &summary.to_string())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (model, setup) = formats::load_model(&cfg.path("model")?)?;
    let split = formats::load_split(&cfg.path("split")?)?;
    let subset = cfg.get_or("subset", "test".to_string())?;
    let (fold_in, holdout) = match subset.as_str() {
        "test" => (&split.test_fold_in, &split.test_holdout),
        "valid" => (&split.valid_fold_in, &split.valid_holdout),
        other => return Err(Error::Config(format!("unknown subset `{other}`"))),
    };
    let ks = ks(cfg)?;
    let mut report = eval::evaluate(&model, fold_in, holdout, &ks, bool_flag(cfg, "per_user")?)?;
    let echo: BTreeMap<String, String> = [
        ("model", model.kind().name().to_string()),
        ("setup", setup.name().to_string()),
        ("subset", subset),
        (
            "ks",
            ks.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    report.config_echo = echo;
    emit_json(cfg.opt_path("output")?.as_deref(), &report.to_json()?)
}

/// Largest |fast − dense reference| over `instances` random problems.
pub fn oracle_deviation(
    users: usize,
    items: usize,
    density: f64,
    latent_dim: usize,
    params: &ImplicitSlimParams,
    instances: usize,
    seed: u64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..instances as u64 {
        let s = seed.wrapping_add(k);
        let x = synth::bernoulli_matrix(users, items, density, s)?;
        let q = EmbeddingMatrix::gaussian(latent_dim, items, EntityKind::Item, s);
        let fast = implicit::implicit_slim(&x, &q, &q, params)?;
        let dense = slim::explicit_implicit_slim(
            &x,
            &q,
            &q,
            params.lambda,
            params.alpha,
            DiagMode::Approx,
        )?;
        worst = worst.max(fast.matrix().max_abs_diff(dense.embeddings.matrix()));
    }
    Ok(worst)
}

pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<()> {
    let users = cfg.get_or("users", 60)?;
    let items = cfg.get_or("items", 40)?;
    let density = cfg.get_or("density", 0.15)?;
    let latent_dim = cfg.get_or("L", 8)?;
    let instances = cfg.get_or("instances", 20)?;
    let tolerance: f64 = cfg.get_or("tolerance", 1e-8)?;
    let params = ImplicitSlimParams {
        lambda: cfg.get_or("lambda", 5.0)?,
        alpha: cfg.get_or("alpha", 2.0)?,
        ..ImplicitSlimParams::default()
    };
    let seed = cfg.get_or("seed", 0)?;
    let dev = oracle_deviation(users, items, density, latent_dim, &params, instances, seed)?;
    print_stdout(
        &serde_json::json!({
            "users": users,
            "items": items,
            "L": latent_dim,
            "instances": instances,
            "max_deviation": dev,
            "tolerance": tolerance,
        })
        .to_string(),
    )?;
    if dev > tolerance {
        return Err(Error::Numeric(format!(
            "fast path deviates from the dense reference by {dev:e} (> {tolerance:e})"
        )));
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_users: cfg.get_or("users", d.n_users)?,
        n_items: cfg.get_or("items", d.n_items)?,
        latent_dim_true: cfg.get_or("latent_dim_true", d.latent_dim_true)?,
        n_clusters: cfg.get_or("clusters", d.n_clusters)?,
        density_target: cfg.get_or("density", d.density_target)?,
        popularity_skew: cfg.get_or("skew", d.popularity_skew)?,
        cluster_spread: cfg.get_or("spread", d.cluster_spread)?,
        signal: cfg.get_or("signal", d.signal)?,
        seed: cfg.get_or("seed", d.seed)?,
    };
    let data = synth::generate(&spec)?;
    formats::write_sparse(&cfg.path("output")?, &data.matrix)?;
    if let Some(labels) = cfg.opt_path("labels")? {
        write_text(
            &labels,
            &format!("{}\n", serde_json::to_string(&data.item_clusters)?),
        )?;
    }
    emit_json(
        None,
        &serde_json::json!({
            "users": spec.n_users,
            "items": spec.n_items,
            "nnz": data.matrix.nnz(),
            "density": data.matrix.density(),
        })
        .to_string(),
    )
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let split = formats::load_split(&cfg.path("split")?)?;
    let (kind, setup) = model_and_setup(cfg)?;
    let base = TrainConfig {
        setup,
        seed: cfg.get_or("seed", 0)?,
        use_bias: bool_flag(cfg, "use_bias")?,
        ..TrainConfig::default()
    };
    // Every hyperparameter given is an axis; single values are 1-point axes.
    let mut axes = Vec::new();
    for key in HyperArgs::KEYS {
        if let Some(values) = cfg.list::<f64>(key)? {
            axes.push((key.parse::<Param>()?, values));
        }
    }
    let grid = SweepGrid {
        model: kind,
        base,
        axes,
    };
    let (report, model) = sweep::run_sweep(&split, &grid, &ks(cfg)?)?;
    if let Some(dir) = cfg.opt_path("model_out")? {
        formats::save_model(&dir, &model, setup)?;
    }
    emit_json(cfg.opt_path("output")?.as_deref(), &report.to_json()?)
}
