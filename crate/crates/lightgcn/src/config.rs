//! Run configuration: defaults, an optional flat `key = value` file, then
//! command-line flags, in increasing precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use lightgcn_core::analysis::SmoothnessNorm;
use lightgcn_core::training::{L2Mode, LaplacianMode};
use lightgcn_core::{
    AlphaMode, GraphOperator, LayerWeights, NormScheme, Objective, SparseAdjacency, TrainConfig,
};
use serde_json::json;

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LightGcn,
    LightGcnSingle,
    Mf,
    Grmf,
    GrmfNorm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LightGcn => "lightgcn",
            Self::LightGcnSingle => "lightgcn-single",
            Self::Mf => "mf",
            Self::Grmf => "grmf",
            Self::GrmfNorm => "grmf-norm",
        }
    }

    /// Models without propagation.
    pub fn is_factorization(self) -> bool {
        matches!(self, Self::Mf | Self::Grmf | Self::GrmfNorm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "lightgcn" => Self::LightGcn,
            "lightgcn-single" => Self::LightGcnSingle,
            "mf" => Self::Mf,
            "grmf" => Self::Grmf,
            "grmf-norm" => Self::GrmfNorm,
            _ => {
                return Err(format!(
                    "unknown model `{s}` (lightgcn, lightgcn-single, mf, grmf, grmf-norm)"
                ))
            }
        })
    }
}

/// Flags shared by every command that trains or loads a model. Values are
/// kept as text until [`resolve`] so flags and config files go through the
/// same parser.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat key=value file; flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory holding train.txt and test.txt.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<String>,
    /// lightgcn, lightgcn-single, mf, grmf or grmf-norm [default: lightgcn]
    #[arg(long)]
    pub model: Option<String>,
    /// Propagation layers K [default: 3]
    #[arg(long)]
    pub layers: Option<String>,
    /// Embedding size T [default: 64]
    #[arg(long)]
    pub dim: Option<String>,
    /// sym-sqrt, sqrt-left, sqrt-right, l1-both, l1-left, l1-right or none [default: sym-sqrt]
    #[arg(long)]
    pub norm: Option<String>,
    /// uniform, single-last or custom [default: uniform]
    #[arg(long)]
    pub alpha_mode: Option<String>,
    /// Comma-separated layer weights for --alpha-mode custom (K+1 values).
    #[arg(long)]
    pub alphas: Option<String>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<String>,
    /// L2 coefficient on the layer-0 embeddings [default: 0.0001]
    #[arg(long)]
    pub lambda: Option<String>,
    /// Laplacian coefficient for grmf and grmf-norm [default: 0]
    #[arg(long)]
    pub lambda_g: Option<String>,
    /// [default: 1000]
    #[arg(long)]
    pub epochs: Option<String>,
    /// [default: 1024]
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Epochs between validation rounds [default: 20]
    #[arg(long)]
    pub eval_every: Option<String>,
    /// Validation rounds without improvement before stopping [default: 10]
    #[arg(long)]
    pub patience: Option<String>,
    /// Ranking cutoff [default: 20]
    #[arg(long)]
    pub topk: Option<String>,
    /// Seed for initialization, splitting and sampling [default: 2020]
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory [default: lightgcn-out]
    #[arg(long, value_name = "DIR")]
    pub output: Option<String>,
    /// Worker threads, 0 for one per core [default: 0]
    #[arg(long)]
    pub threads: Option<String>,
    /// Share of each user's train items held out for validation [default: 0.1]
    #[arg(long)]
    pub validation_fraction: Option<String>,
    /// Permit --norm none (propagation on the raw adjacency).
    #[arg(long)]
    pub allow_unnormalized: bool,
    /// per-batch or global [default: per-batch]
    #[arg(long)]
    pub l2_mode: Option<String>,
    /// unit or squared-norm [default: unit]
    #[arg(long)]
    pub smoothness_mode: Option<String>,
}

const KEYS: &[&str] = &[
    "dataset",
    "model",
    "layers",
    "dim",
    "norm",
    "alpha-mode",
    "alphas",
    "lr",
    "lambda",
    "lambda-g",
    "epochs",
    "batch-size",
    "eval-every",
    "patience",
    "topk",
    "seed",
    "output",
    "threads",
    "validation-fraction",
    "allow-unnormalized",
    "l2-mode",
    "smoothness-mode",
];

impl RunArgs {
    fn flag_values(&self) -> BTreeMap<&'static str, String> {
        let pairs: [(&'static str, &Option<String>); 21] = [
            ("dataset", &self.dataset),
            ("model", &self.model),
            ("layers", &self.layers),
            ("dim", &self.dim),
            ("norm", &self.norm),
            ("alpha-mode", &self.alpha_mode),
            ("alphas", &self.alphas),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("lambda-g", &self.lambda_g),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("eval-every", &self.eval_every),
            ("patience", &self.patience),
            ("topk", &self.topk),
            ("seed", &self.seed),
            ("output", &self.output),
            ("threads", &self.threads),
            ("validation-fraction", &self.validation_fraction),
            ("l2-mode", &self.l2_mode),
            ("smoothness-mode", &self.smoothness_mode),
        ];
        let mut out: BTreeMap<&'static str, String> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.allow_unnormalized {
            out.insert("allow-unnormalized", "true".into());
        }
        out
    }
}

/// Parses `key = value` lines. `#` starts a comment; underscores in keys
/// are read as dashes.
pub fn parse_config_text(text: &str, path: &Path) -> Result<BTreeMap<&'static str, String>> {
    let mut out = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err =
            |msg: String| CliError::Config(format!("{}:{}: {msg}", path.display(), index + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found `{line}`")))?;
        let key = key.trim().replace('_', "-");
        let key = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| err(format!("unknown key `{key}`")))?;
        out.insert(*key, value.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub model: ModelKind,
    pub layers: usize,
    pub dim: usize,
    /// `None` propagates over the raw adjacency.
    pub norm: Option<NormScheme>,
    pub alpha_mode: AlphaMode,
    pub alphas: Vec<f64>,
    pub learning_rate: f64,
    pub lambda: f64,
    pub lambda_g: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub topk: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub validation_fraction: f64,
    pub allow_unnormalized: bool,
    pub l2_mode: L2Mode,
    pub smoothness_mode: SmoothnessNorm,
}

/// A resolved config plus the adjustments made while resolving it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

fn parse_value<T: FromStr>(values: &BTreeMap<&str, String>, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    match values.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|e| CliError::Config(format!("--{key} `{v}`: {e}"))),
    }
}

/// Resolves flags on top of the config file named by `--config`, if any.
pub fn resolve(args: &RunArgs) -> Result<Resolved> {
    let mut values = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            parse_config_text(&text, path)?
        }
        None => BTreeMap::new(),
    };
    values.extend(args.flag_values());
    resolve_values(&values)
}

pub fn resolve_values(values: &BTreeMap<&str, String>) -> Result<Resolved> {
    let mut warnings = Vec::new();
    let bad = |msg: String| Err(CliError::Config(msg));

    let model: ModelKind = parse_value(values, "model", ModelKind::LightGcn)?;
    let mut layers: usize = parse_value(values, "layers", 3)?;
    let dim: usize = parse_value(values, "dim", 64)?;
    let norm_text = values.get("norm").map(String::as_str).unwrap_or("sym-sqrt");
    let allow_unnormalized: bool = parse_value(values, "allow-unnormalized", false)?;
    let norm =
        match norm_text {
            "none" if allow_unnormalized => None,
            "none" => return bad(
                "--norm none needs --allow-unnormalized: raw adjacency powers grow without bound"
                    .into(),
            ),
            s => Some(
                s.parse::<NormScheme>()
                    .map_err(|e| CliError::Config(e.to_string()))?,
            ),
        };
    let custom_alphas = match values.get("alphas") {
        None => None,
        Some(text) => Some(
            text.split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Config(format!("--alphas `{text}`: {e}")))?,
        ),
    };
    let default_mode = if custom_alphas.is_some() {
        AlphaMode::Custom
    } else {
        AlphaMode::Uniform
    };
    let mut alpha_mode: AlphaMode = parse_value(values, "alpha-mode", default_mode)?;
    let learning_rate: f64 = parse_value(values, "lr", 1e-3)?;
    let lambda: f64 = parse_value(values, "lambda", 1e-4)?;
    let mut lambda_g: f64 = parse_value(values, "lambda-g", 0.0)?;
    let epochs: usize = parse_value(values, "epochs", 1000)?;
    let batch_size: usize = parse_value(values, "batch-size", 1024)?;
    let eval_every: usize = parse_value(values, "eval-every", 20)?;
    let patience: usize = parse_value(values, "patience", 10)?;
    let topk: usize = parse_value(values, "topk", 20)?;
    let seed: u64 = parse_value(values, "seed", 2020)?;
    let threads: usize = parse_value(values, "threads", 0)?;
    let validation_fraction: f64 = parse_value(values, "validation-fraction", 0.1)?;
    let l2_mode: L2Mode = parse_value(values, "l2-mode", L2Mode::PerBatch)?;
    let smoothness_mode: SmoothnessNorm =
        parse_value(values, "smoothness-mode", SmoothnessNorm::Unit)?;

    if dim == 0 {
        return bad("--dim must be positive".into());
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return bad(format!(
            "--validation-fraction must be in [0, 1), got {validation_fraction}"
        ));
    }

    let mut custom = custom_alphas;
    if model.is_factorization() {
        if values.contains_key("layers") && layers != 0 {
            warnings.push(format!(
                "--model {model} has no propagation; ignoring --layers {layers}"
            ));
        }
        if values.contains_key("alpha-mode") || custom.is_some() {
            warnings.push(format!("--model {model} ignores layer weights"));
        }
        layers = 0;
        alpha_mode = AlphaMode::Uniform;
        custom = None;
    }
    if model == ModelKind::LightGcnSingle {
        if (alpha_mode != AlphaMode::SingleLast && values.contains_key("alpha-mode"))
            || custom.is_some()
        {
            warnings.push("--model lightgcn-single always uses the last layer only".into());
        }
        alpha_mode = AlphaMode::SingleLast;
        custom = None;
    }
    if matches!(model, ModelKind::Grmf | ModelKind::GrmfNorm) {
        if lambda_g <= 0.0 {
            return bad(format!("--model {model} needs --lambda-g > 0"));
        }
    } else if lambda_g != 0.0 {
        warnings.push(format!(
            "--lambda-g only applies to grmf and grmf-norm; ignored for {model}"
        ));
        lambda_g = 0.0;
    }
    if alpha_mode != AlphaMode::Custom && custom.is_some() {
        return bad(format!(
            "--alphas needs --alpha-mode custom, not {alpha_mode}"
        ));
    }
    let weights = LayerWeights::for_mode(alpha_mode, layers, custom)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let config = RunConfig {
        dataset_dir: values.get("dataset").map(PathBuf::from),
        model,
        layers,
        dim,
        norm,
        alpha_mode,
        alphas: weights.alphas().to_vec(),
        learning_rate,
        lambda,
        lambda_g,
        epochs,
        batch_size,
        eval_every,
        patience,
        topk,
        seed,
        output_dir: PathBuf::from(
            values
                .get("output")
                .map(String::as_str)
                .unwrap_or("lightgcn-out"),
        ),
        threads,
        validation_fraction,
        allow_unnormalized,
        l2_mode,
        smoothness_mode,
    };
    config
        .train_config()
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Resolved { config, warnings })
}

impl RunConfig {
    pub fn dataset_dir(&self) -> Result<&Path> {
        self.dataset_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("--dataset is required".into()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            objective: Objective {
                lambda: self.lambda,
                lambda_g: self.lambda_g,
                l2_mode: self.l2_mode,
                laplacian: if self.model == ModelKind::GrmfNorm {
                    LaplacianMode::DegreeNormalized
                } else {
                    LaplacianMode::Plain
                },
            },
            epochs: self.epochs,
            eval_every: self.eval_every,
            patience: self.patience,
            topk: self.topk,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn layer_weights(&self) -> LayerWeights {
        let custom = (self.alpha_mode == AlphaMode::Custom).then(|| self.alphas.clone());
        LayerWeights::for_mode(self.alpha_mode, self.layers, custom)
            .expect("validated during resolution")
    }

    pub fn operator(&self, adjacency: &SparseAdjacency) -> GraphOperator {
        match self.norm {
            Some(scheme) => GraphOperator::normalized(adjacency, scheme),
            None => GraphOperator::unnormalized(adjacency),
        }
    }

    pub fn norm_name(&self) -> String {
        self.norm.map_or_else(|| "none".into(), |s| s.to_string())
    }

    /// Same config with another model, layer count or scheme, re-resolved
    /// so the per-model rules apply.
    pub fn with_overrides(
        &self,
        model: ModelKind,
        layers: usize,
        norm: Option<NormScheme>,
    ) -> Result<Resolved> {
        let mut values = self.to_values();
        values.insert("model", model.name().into());
        values.insert("layers", layers.to_string());
        values.insert(
            "norm",
            norm.map_or_else(|| "none".into(), |s| s.to_string()),
        );
        if model != self.model || layers != self.layers {
            values.remove("alpha-mode");
            values.remove("alphas");
        }
        resolve_values(&values)
    }

    fn to_values(&self) -> BTreeMap<&'static str, String> {
        let mut v = BTreeMap::new();
        if let Some(d) = &self.dataset_dir {
            v.insert("dataset", d.display().to_string());
        }
        v.insert("model", self.model.name().into());
        v.insert("layers", self.layers.to_string());
        v.insert("dim", self.dim.to_string());
        v.insert("norm", self.norm_name());
        if !self.model.is_factorization() {
            v.insert("alpha-mode", self.alpha_mode.name().into());
        }
        if self.alpha_mode == AlphaMode::Custom {
            let a: Vec<String> = self.alphas.iter().map(f64::to_string).collect();
            v.insert("alphas", a.join(","));
        }
        v.insert("lr", self.learning_rate.to_string());
        v.insert("lambda", self.lambda.to_string());
        v.insert("lambda-g", self.lambda_g.to_string());
        v.insert("epochs", self.epochs.to_string());
        v.insert("batch-size", self.batch_size.to_string());
        v.insert("eval-every", self.eval_every.to_string());
        v.insert("patience", self.patience.to_string());
        v.insert("topk", self.topk.to_string());
        v.insert("seed", self.seed.to_string());
        v.insert("output", self.output_dir.display().to_string());
        v.insert("threads", self.threads.to_string());
        v.insert("validation-fraction", self.validation_fraction.to_string());
        v.insert("allow-unnormalized", self.allow_unnormalized.to_string());
        v.insert("l2-mode", self.l2_mode.name().into());
        v.insert("smoothness-mode", self.smoothness_mode.name().into());
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "dataset": self.dataset_dir.as_ref().map(|d| d.display().to_string()),
            "model": self.model.name(),
            "layers": self.layers,
            "dim": self.dim,
            "norm": self.norm_name(),
            "alpha_mode": self.alpha_mode.name(),
            "alphas": self.alphas,
            "lr": self.learning_rate,
            "lambda": self.lambda,
            "lambda_g": self.lambda_g,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "eval_every": self.eval_every,
            "patience": self.patience,
            "topk": self.topk,
            "seed": self.seed,
            "output": self.output_dir.display().to_string(),
            "threads": self.threads,
            "validation_fraction": self.validation_fraction,
            "allow_unnormalized": self.allow_unnormalized,
            "l2_mode": self.l2_mode.name(),
            "smoothness_mode": self.smoothness_mode.name(),
        })
    }
}
