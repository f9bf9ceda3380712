//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional
//! and falls back to the default listed in [`KEYS`]; unknown or repeated keys
//! are errors.

use std::path::Path;

use crate::attributes::{AawConfig, PredictionMethod};
use crate::dictionary::TrainingConfig;
use crate::io::DataError;
use crate::labels::Bandwidth;
use crate::prox::StepRule;

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("atoms", "64", "dictionary atom count r"),
    ("sparsity", "0.05", "code sparsity weight λ used in training"),
    ("dict_penalty", "0", "Frobenius penalty β on both dictionaries"),
    ("outer_iterations", "30", "alternations of the visual and attribute blocks"),
    ("inner_alternations", "25", "code/dictionary rounds inside each block"),
    ("batch_size", "0", "samples per mini-batch, 0 for full batch"),
    ("dict_step", "1.8", "dictionary step as a fraction of the inverse curvature"),
    ("seed", "0", "seed for initialization and batch sampling"),
    ("normalize_columns", "true", "project dictionary columns onto the unit ball"),
    ("lasso_max_iterations", "2000", "iteration cap of each LASSO solve"),
    ("lasso_tolerance", "1e-6", "relative objective decrease that stops a LASSO solve"),
    ("lasso_step_rule", "fixed", "`fixed` or `backtracking`"),
    ("lasso_acceleration", "true", "use momentum in the LASSO solver"),
    ("parallel", "true", "spread per-sample solves over threads"),
    ("predict_sparsity", "auto", "λ used at prediction time, `auto` reuses `sparsity`"),
    ("entropy_weight", "0.005", "entropy weight γ of attribute-aware prediction"),
    ("kernel_param", "1.0", "Student-t degrees of freedom ρ"),
    ("aaw_max_iterations", "500", "iteration cap of each attribute-aware solve"),
    ("aaw_tolerance", "1e-8", "relative decrease that stops an attribute-aware solve"),
    ("aaw_step_rule", "backtracking", "`fixed` or `backtracking`"),
    ("knn_k", "10", "neighbors per node in the propagation graph"),
    ("sigma", "auto", "Gaussian kernel width, `auto` for the edge-length median"),
    ("mu", "1.0", "label fitness weight μ"),
    ("taaw_source", "aaw", "predictions fed to label propagation, `aaw` or `aag`"),
    ("fatal_nonconvergence", "false", "fail when any solver misses its tolerance"),
    ("checkpoint_every", "10", "outer iterations between checkpoints, 0 disables"),
];

/// Settings for the full train / predict / classify pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub training: TrainingConfig,
    /// `None` reuses the training sparsity.
    pub predict_sparsity: Option<f64>,
    pub aaw: AawConfig,
    pub knn_k: usize,
    pub sigma: Bandwidth,
    pub mu: f64,
    pub taaw_source: PredictionMethod,
    pub fatal_nonconvergence: bool,
    pub checkpoint_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        parse_config("", Path::new("<defaults>")).expect("built-in defaults parse")
    }
}

impl PipelineConfig {
    /// Prediction settings with the effective sparsity filled in.
    pub fn prediction(&self) -> AawConfig {
        AawConfig {
            sparsity: self.predict_sparsity.unwrap_or(self.training.sparsity),
            ..self.aaw
        }
    }

    /// Renders every key so that [`parse_config`] reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let a = &self.aaw;
        let values = [
            t.atoms.to_string(),
            t.sparsity.to_string(),
            t.dict_penalty.to_string(),
            t.outer_iterations.to_string(),
            t.inner_alternations.to_string(),
            t.batch_size.unwrap_or(0).to_string(),
            t.dict_step.to_string(),
            t.seed.to_string(),
            t.normalize_columns.to_string(),
            t.lasso.max_iterations.to_string(),
            t.lasso.tolerance.to_string(),
            t.lasso.step_rule.to_string(),
            t.lasso.acceleration.to_string(),
            t.parallel.to_string(),
            self.predict_sparsity
                .map_or_else(|| "auto".to_string(), |v| v.to_string()),
            a.entropy_weight.to_string(),
            a.kernel_param.to_string(),
            a.max_iterations.to_string(),
            a.tolerance.to_string(),
            a.step_rule.to_string(),
            self.knn_k.to_string(),
            self.sigma.to_string(),
            self.mu.to_string(),
            match self.taaw_source {
                PredictionMethod::AttributeAware => "aaw".to_string(),
                PredictionMethod::AttributeAgnostic => "aag".to_string(),
            },
            self.fatal_nonconvergence.to_string(),
            self.checkpoint_every.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, _, _), v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// One `key = value` entry with its 1-based line number.
#[derive(Clone, Debug)]
pub(crate) struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits `text` into entries, rejecting malformed lines and repeated keys.
pub(crate) fn key_values(
    text: &str,
    path: &Path,
    err: impl Fn(String) -> DataError,
) -> Result<Vec<Entry>, DataError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(err(format!(
                "key `{key}` appears on line {} and again on line {}",
                prev.line,
                i + 1
            )));
        }
        out.push(Entry {
            key,
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(entry: &Entry, expect: &str) -> Result<T, String> {
    entry.value.parse().map_err(|_| {
        format!(
            "line {}: key `{}` expects {expect}, got `{}`",
            entry.line, entry.key, entry.value
        )
    })
}

fn rule(entry: &Entry) -> Result<StepRule, String> {
    entry
        .value
        .parse()
        .map_err(|e| format!("line {}: key `{}`: {e}", entry.line, entry.key))
}

/// Parses config text; keys not present keep their defaults.
pub fn parse_config(text: &str, path: &Path) -> Result<PipelineConfig, DataError> {
    let cfg_err = |message: String| DataError::Config {
        path: path.to_path_buf(),
        message,
    };
    let mut cfg = PipelineConfig {
        training: TrainingConfig::default(),
        predict_sparsity: None,
        aaw: AawConfig::default(),
        knn_k: 10,
        sigma: Bandwidth::Auto,
        mu: 1.0,
        taaw_source: PredictionMethod::AttributeAware,
        fatal_nonconvergence: false,
        checkpoint_every: 10,
    };
    for e in key_values(text, path, cfg_err)? {
        apply(&mut cfg, &e).map_err(cfg_err)?;
    }
    Ok(cfg)
}

fn apply(cfg: &mut PipelineConfig, e: &Entry) -> Result<(), String> {
    let t = &mut cfg.training;
    let count = "a non-negative integer";
    let real = "a number";
    let flag = "`true` or `false`";
    match e.key.as_str() {
        "atoms" => t.atoms = value(e, count)?,
        "sparsity" => t.sparsity = value(e, real)?,
        "dict_penalty" => t.dict_penalty = value(e, real)?,
        "outer_iterations" => t.outer_iterations = value(e, count)?,
        "inner_alternations" => t.inner_alternations = value(e, count)?,
        "batch_size" => {
            let b: usize = value(e, count)?;
            t.batch_size = (b > 0).then_some(b);
        }
        "dict_step" => t.dict_step = value(e, real)?,
        "seed" => t.seed = value(e, count)?,
        "normalize_columns" => t.normalize_columns = value(e, flag)?,
        "lasso_max_iterations" => t.lasso.max_iterations = value(e, count)?,
        "lasso_tolerance" => t.lasso.tolerance = value(e, real)?,
        "lasso_step_rule" => t.lasso.step_rule = rule(e)?,
        "lasso_acceleration" => t.lasso.acceleration = value(e, flag)?,
        "parallel" => t.parallel = value(e, flag)?,
        "predict_sparsity" => {
            cfg.predict_sparsity = if e.value == "auto" {
                None
            } else {
                Some(value(e, "a number or `auto`")?)
            }
        }
        "entropy_weight" => cfg.aaw.entropy_weight = value(e, real)?,
        "kernel_param" => cfg.aaw.kernel_param = value(e, real)?,
        "aaw_max_iterations" => cfg.aaw.max_iterations = value(e, count)?,
        "aaw_tolerance" => cfg.aaw.tolerance = value(e, real)?,
        "aaw_step_rule" => cfg.aaw.step_rule = rule(e)?,
        "knn_k" => cfg.knn_k = value(e, count)?,
        "sigma" => {
            cfg.sigma = e
                .value
                .parse()
                .map_err(|m| format!("line {}: key `sigma`: {m}", e.line))?
        }
        "mu" => cfg.mu = value(e, real)?,
        "taaw_source" => {
            cfg.taaw_source = match e.value.as_str() {
                "aaw" => PredictionMethod::AttributeAware,
                "aag" => PredictionMethod::AttributeAgnostic,
                v => return Err(format!("line {}: key `taaw_source` expects `aaw` or `aag`, got `{v}`", e.line)),
            }
        }
        "fatal_nonconvergence" => cfg.fatal_nonconvergence = value(e, flag)?,
        "checkpoint_every" => cfg.checkpoint_every = value(e, count)?,
        other => return Err(format!("line {}: unknown key `{other}`", e.line)),
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_config(&text, path)
}
