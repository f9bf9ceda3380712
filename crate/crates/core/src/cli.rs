//! The `cdzsl` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for data
//! errors, 3 when a solver fails to converge and that is treated as fatal.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attributes::{predict_batch, PredictionMethod};
use crate::dictionary::{train_coupled_with, TrainingTrace};
use crate::error::{Error, Result};
use crate::evaluation::{pac_sample_bound, run_experiment, Method, PacQuery};
use crate::io::checkpoint::{read_checkpoint, write_checkpoint};
use crate::io::config::{load_config, PipelineConfig};
use crate::io::manifest::{load_manifest, write_labels};
use crate::io::synth::{generate_synthetic, parse_synth_config, SynthConfig};
use crate::io::{read_matrix, write_matrix, DataError};
use crate::labels::{nn_assign, taaw_classify};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cdzsl", version, about = "Zero-shot classification with coupled dictionaries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train coupled dictionaries on the seen split of a manifest.
    Train(TrainArgs),
    /// Predict attributes for a feature matrix.
    Predict(PredictArgs),
    /// Label predicted attributes.
    Classify(ClassifyArgs),
    /// Score one or more methods on the test split of a manifest.
    Evaluate(EvaluateArgs),
    /// Write a planted synthetic dataset.
    SynthGen(SynthArgs),
    /// Samples needed for a target dictionary-learning error.
    PacBound(PacArgs),
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Pipeline config file (`key = value`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fail with exit code 3 when any solver misses its tolerance.
    #[arg(long)]
    pub fatal_nonconvergence: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictFlag {
    Aag,
    Aaw,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature matrix, one column per sample.
    #[arg(long)]
    pub features: PathBuf,
    /// Unseen prototypes; required by `aaw`.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "aaw")]
    pub method: PredictFlag,
    /// Output attribute matrix.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassifyFlag {
    /// Nearest prototype.
    Nn,
    /// Label propagation over a kNN graph.
    Taaw,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Predicted attributes, one column per sample.
    #[arg(long)]
    pub predicted: PathBuf,
    #[arg(long)]
    pub prototypes: PathBuf,
    #[arg(long, value_enum, default_value = "taaw")]
    pub method: ClassifyFlag,
    /// Class ids of the prototypes (`1 × M`); defaults to their column index.
    #[arg(long)]
    pub prototype_labels: Option<PathBuf>,
    /// Output `1 × L` label matrix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trained checkpoint; trains from scratch when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long = "method", alias = "methods", value_delimiter = ',', default_value = "aag,aaw,taaw")]
    pub methods: Vec<Method>,
    /// Directory receiving `report.txt` and `table.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic config file; the defaults give the standard planted instance.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PacArgs {
    /// Failure probability δ.
    #[arg(long)]
    pub delta: f64,
    /// Target error ε.
    #[arg(long)]
    pub epsilon: f64,
    /// Feature dimension.
    #[arg(long)]
    pub p: usize,
    /// Atom count.
    #[arg(long)]
    pub r: usize,
    /// Loss constant `L`.
    #[arg(long = "loss-constant", short = 'L', default_value_t = 1.0)]
    pub loss_constant: f64,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Data(d) if d.is_config_error() => EXIT_USAGE,
        Error::Data(_) => EXIT_DATA,
        Error::InvalidParameter { .. } | Error::InvalidK { .. } | Error::Infeasible { .. } => EXIT_USAGE,
        Error::NonConvergence { .. } | Error::StepDivergence { .. } | Error::SingularSystem { .. } => {
            EXIT_SOLVER
        }
        Error::DimensionMismatch(_) | Error::NonFinite(_) => EXIT_DATA,
        Error::Stage { .. } => unreachable!("root strips stage tags"),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn pipeline_config(flags: &SolverFlags, fallback: Option<PipelineConfig>) -> Result<PipelineConfig> {
    let mut cfg = match (&flags.config, fallback) {
        (Some(p), _) => load_config(p)?,
        (None, Some(c)) => c,
        (None, None) => PipelineConfig::default(),
    };
    cfg.fatal_nonconvergence |= flags.fatal_nonconvergence;
    Ok(cfg)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Classify(a) => classify(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::SynthGen(a) => synth(&a),
        Command::PacBound(a) => pac(&a),
    }
}

fn trace_text(trace: &TrainingTrace) -> String {
    let mut s = String::from("iteration,visual_fidelity,code_sparsity,attribute_fidelity,prototype_fidelity,total,rejected\n");
    for (i, t) in trace.terms.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            t.visual_fidelity,
            t.code_sparsity,
            t.attribute_fidelity,
            t.prototype_fidelity,
            t.total(),
            u8::from(trace.rejected.contains(&i))
        ));
    }
    s
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = pipeline_config(&a.solver, None)?;
    let data = load_manifest(&a.manifest)
        .and_then(|m| m.load())
        .map_err(|e| Error::from(e).in_stage("load"))?;
    let set = data.training_set().map_err(|e| e.in_stage("load"))?;
    let start = Instant::now();
    let every = cfg.checkpoint_every;
    let model = train_coupled_with(&set, &cfg.training, |done, dict| {
        if every > 0 && done % every == 0 {
            write_checkpoint(&a.out, dict, &cfg, done)?;
        }
        Ok(())
    })
    .map_err(|e| e.in_stage("train"))?;
    if cfg.fatal_nonconvergence && model.trace.unconverged_lasso > 0 {
        return Err(Error::NonConvergence {
            stage: "train",
            count: model.trace.unconverged_lasso,
        });
    }
    write_checkpoint(&a.out, &model.dictionary, &cfg, cfg.training.outer_iterations)?;
    let trace_path = a.out.join("trace.txt");
    std::fs::write(&trace_path, trace_text(&model.trace)).map_err(|e| DataError::io(&trace_path, e))?;
    eprintln!(
        "trained {} atoms in {:.2?}; final objective {:.6e}",
        cfg.training.atoms,
        start.elapsed(),
        model.trace.totals().last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let (dict, stored) = read_checkpoint(&a.checkpoint)?;
    let cfg = pipeline_config(&a.solver, Some(stored))?;
    let features = read_matrix(&a.features)?;
    let method = match a.method {
        PredictFlag::Aag => PredictionMethod::AttributeAgnostic,
        PredictFlag::Aaw => PredictionMethod::AttributeAware,
    };
    let prototypes = match (&a.prototypes, method) {
        (Some(p), _) => read_matrix(p)?,
        (None, PredictionMethod::AttributeAgnostic) => crate::DenseMatrix::zeros((dict.attribute_dim(), 1)),
        (None, PredictionMethod::AttributeAware) => {
            return Err(Error::invalid("prototypes", "`--prototypes` is required with `--method aaw`"))
        }
    };
    let pred = predict_batch(
        &dict,
        prototypes.view(),
        features.view(),
        method,
        &cfg.prediction(),
        &cfg.training.lasso,
        cfg.training.parallel,
    )
    .map_err(|e| e.in_stage("predict"))?;
    if cfg.fatal_nonconvergence && pred.unconverged > 0 {
        return Err(Error::NonConvergence {
            stage: "predict",
            count: pred.unconverged,
        });
    }
    write_matrix(&a.out, &pred.attributes)?;
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    let predicted = read_matrix(&a.predicted)?;
    let zprime = read_matrix(&a.prototypes)?;
    let ids = match &a.prototype_labels {
        Some(p) => crate::io::manifest::read_labels(p)?,
        None => (0..zprime.ncols()).collect(),
    };
    if ids.len() != zprime.ncols() {
        return Err(DataError::Manifest {
            path: a.prototype_labels.clone().unwrap_or_default(),
            message: format!("{} labels for {} prototypes", ids.len(), zprime.ncols()),
        }
        .into());
    }
    let labels: Vec<usize> = match a.method {
        ClassifyFlag::Nn => predicted
            .columns()
            .into_iter()
            .map(|c| nn_assign(c, zprime.view()))
            .collect::<Result<_>>()?,
        ClassifyFlag::Taaw => {
            taaw_classify(predicted.view(), zprime.view(), cfg.knn_k, cfg.sigma, cfg.mu)
                .map_err(|e| e.in_stage("classify"))?
                .labels
        }
    };
    let labels: Vec<usize> = labels.into_iter().map(|m| ids[m]).collect();
    write_labels(&a.out, &labels)?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest).map_err(|e| Error::from(e).in_stage("load"))?;
    let (dict, stored) = match &a.checkpoint {
        Some(dir) => {
            let (d, c) = read_checkpoint(dir)?;
            (Some(d), Some(c))
        }
        None => (None, None),
    };
    let cfg = pipeline_config(&a.solver, stored)?;
    let report = run_experiment(&manifest, &a.methods, &cfg, dict)?;
    std::fs::create_dir_all(&a.out).map_err(|e| DataError::io(&a.out, e))?;
    report.write(&a.out.join("report.txt"), &a.out.join("table.txt"))?;
    print!("{}", report.to_table());
    let t = &report.timings;
    eprintln!(
        "load {:.2?}, train {:.2?}, predict {:.2?}, classify {:.2?}",
        t.load, t.train, t.predict, t.classify
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
            parse_synth_config(&text, p)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let manifest = generate_synthetic(&cfg, &a.out)?;
    println!("{}", manifest.path.display());
    Ok(())
}

fn pac(a: &PacArgs) -> Result<()> {
    let m = pac_sample_bound(&PacQuery {
        confidence: a.delta,
        target_error: a.epsilon,
        feature_dim: a.p,
        atoms: a.r,
        loss_constant: a.loss_constant,
    })?;
    println!("M={m}");
    Ok(())
}
