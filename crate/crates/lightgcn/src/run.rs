//! Commands: train, layer and normalization sweeps, diagnostics and
//! synthetic data generation.

use std::fs;
use std::path::{Path, PathBuf};

use lightgcn_core::analysis::{
    check_appnp_identity, check_sgcn_identity, smoothness_report, IdentityCheck, SmoothnessReport,
};
use lightgcn_core::dataset::{build_dataset, BuiltDataset};
use lightgcn_core::evaluation::evaluate_all_ranking;
use lightgcn_core::synthetic::PlantedClusters;
use lightgcn_core::training::fit_with_observer;
use lightgcn_core::{
    DenseMatrix, EmbeddingState, EvalReport, EvalSplit, FitResult, GraphOperator, LayerWeights,
    NormScheme, SparseAdjacency,
};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::io::{self, CurveWriter, IdMapFile, ReportFile};
use crate::{CliError, Result, ENGINE_VERSION};

pub const CHECKPOINT_FILE: &str = "checkpoint.lgcn";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";

// Independent streams derived from the single run seed.
fn init_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn sampler_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_run_json(config: &RunConfig, command: &str, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    io::write_json(
        dir.join("run.json"),
        &json!({
            "engine_version": ENGINE_VERSION,
            "command": command,
            "config": config.to_json(),
        }),
    )
}

/// Reads `train.txt` and `test.txt` from the dataset directory and splits
/// off validation data.
pub fn load_dataset(config: &RunConfig) -> Result<BuiltDataset> {
    let dir = config.dataset_dir()?;
    let train = io::parse_interaction_file(dir.join("train.txt"))?;
    let test = io::parse_interaction_file(dir.join("test.txt"))?;
    let built = build_dataset(&train, &test, config.validation_fraction, config.seed)?;
    let ds = &built.dataset;
    log::info!(
        "{} users, {} items, {} train / {} validation / {} test interactions, density {:.5}",
        ds.num_users(),
        ds.num_items(),
        ds.num_train_interactions(),
        ds.num_validation_interactions(),
        ds.num_test_interactions(),
        ds.density()
    );
    Ok(built)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fit: FitResult,
    pub test: EvalReport,
    pub state: EmbeddingState,
}

/// Trains one model and writes run.json, mapping.json, curve.csv, the
/// checkpoint, report.json and per_user.csv into `dir`. A failed run still
/// leaves the curve so far, the restored checkpoint and `error.json`.
pub fn train_into(
    config: &RunConfig,
    built: &BuiltDataset,
    dir: &Path,
    command: &str,
) -> Result<TrainOutcome> {
    write_run_json(config, command, dir)?;
    io::write_json(dir.join("mapping.json"), &IdMapFile::from(&built.ids))?;
    let ds = &built.dataset;
    let adjacency = SparseAdjacency::from_dataset(ds);
    let op = config.operator(&adjacency);
    let weights = config.layer_weights();
    let mut state = EmbeddingState::init(
        ds.num_users(),
        ds.num_items(),
        config.dim,
        init_seed(config.seed),
    )?;
    let mut train_config = config.train_config();
    train_config.seed = sampler_seed(config.seed);

    let mut curve = CurveWriter::create(dir.join("curve.csv"), config.topk)?;
    let mut write_error = None;
    let fitted = fit_with_observer(ds, &train_config, &mut state, &op, &weights, |row| {
        if let Some(r) = row.val_recall {
            log::info!(
                "epoch {} loss {:.6} val recall@{} {:.4}",
                row.epoch,
                row.loss,
                config.topk,
                r
            );
        }
        if write_error.is_none() {
            write_error = curve.push(row).err();
        }
    });
    let save = |state: &EmbeddingState| {
        checkpoint_of(config, &weights, state).save(dir.join(CHECKPOINT_FILE))
    };
    let fit = match fitted {
        Ok(fit) => fit,
        Err(err) => {
            save(&state)?;
            io::write_json(dir.join("error.json"), &json!({ "error": err.to_string() }))?;
            return Err(err.into());
        }
    };
    if let Some(err) = write_error {
        return Err(err);
    }
    save(&state)?;

    let test = evaluate_all_ranking(&state, ds, EvalSplit::Test, config.topk)?;
    io::write_json(dir.join("report.json"), &ReportFile::from(&test))?;
    io::write_per_user_csv(dir.join("per_user.csv"), &test, &built.ids)?;
    Ok(TrainOutcome { fit, test, state })
}

fn checkpoint_of(config: &RunConfig, weights: &LayerWeights, state: &EmbeddingState) -> Checkpoint {
    Checkpoint {
        num_users: state.num_users(),
        num_items: state.num_items(),
        dim: state.dim(),
        scheme: config.norm,
        alphas: weights.alphas().to_vec(),
        e0: state.e0().clone(),
    }
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let built = load_dataset(config)?;
    let outcome = train_into(config, &built, &config.output_dir, "train")?;
    println!(
        "{} K={} epochs={} best_epoch={} test recall@{k}={:.4} ndcg@{k}={:.4} users={}",
        config.model,
        config.layers,
        outcome.fit.epochs_run,
        outcome
            .fit
            .best_epoch
            .map_or_else(|| "-".into(), |e| e.to_string()),
        outcome.test.recall,
        outcome.test.ndcg,
        outcome.test.num_evaluated_users,
        k = config.topk
    );
    Ok(outcome)
}

/// Parses `2`, `1-4` or `1,3,4`.
pub fn parse_k_range(text: &str) -> Result<Vec<usize>> {
    let bad = || {
        CliError::Config(format!(
            "--k-range `{text}`: expected N, A-B or a comma list"
        ))
    };
    let ks: Vec<usize> = if let Some((a, b)) = text.split_once('-') {
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if ks.is_empty() {
        return Err(bad());
    }
    Ok(ks)
}

pub fn parse_schemes(text: Option<&str>) -> Result<Vec<NormScheme>> {
    match text {
        None => Ok(NormScheme::ALL.to_vec()),
        Some(text) => {
            let schemes = text
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<NormScheme>()
                        .map_err(|e| CliError::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            if schemes.is_empty() {
                return Err(CliError::Config("--schemes is empty".into()));
            }
            Ok(schemes)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub model: ModelKind,
    pub layers: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Trains lightgcn and lightgcn-single for every K and writes
/// `ablate_layers.csv`.
pub fn cmd_ablate_layers(config: &RunConfig, ks: &[usize]) -> Result<Vec<LayerRow>> {
    write_run_json(config, "ablate-layers", &config.output_dir)?;
    let built = load_dataset(config)?;
    let mut rows = Vec::new();
    for &k in ks {
        for model in [ModelKind::LightGcn, ModelKind::LightGcnSingle] {
            let resolved = config.with_overrides(model, k, config.norm)?;
            for w in &resolved.warnings {
                log::warn!("{w}");
            }
            let dir = config.output_dir.join(format!("{model}-k{k}"));
            let out = train_into(&resolved.config, &built, &dir, "ablate-layers")?;
            println!(
                "{model} K={k} recall={:.4} ndcg={:.4}",
                out.test.recall, out.test.ndcg
            );
            rows.push(LayerRow {
                model,
                layers: k,
                recall: out.test.recall,
                ndcg: out.test.ndcg,
            });
        }
    }
    let mut text = String::from("model,layers,recall,ndcg\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.model, r.layers, r.recall, r.ndcg
        ));
    }
    let path = config.output_dir.join("ablate_layers.csv");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub scheme: NormScheme,
    pub recall: f64,
    pub ndcg: f64,
}

/// One run per scheme at the configured K; writes `ablate_norm.csv`.
pub fn cmd_ablate_norm(config: &RunConfig, schemes: &[NormScheme]) -> Result<Vec<NormRow>> {
    write_run_json(config, "ablate-norm", &config.output_dir)?;
    let built = load_dataset(config)?;
    let mut rows = Vec::new();
    for &scheme in schemes {
        let resolved = config.with_overrides(config.model, config.layers, Some(scheme))?;
        let dir = config.output_dir.join(format!("norm-{scheme}"));
        let out = train_into(&resolved.config, &built, &dir, "ablate-norm")?;
        println!(
            "{scheme} recall={:.4} ndcg={:.4}",
            out.test.recall, out.test.ndcg
        );
        rows.push(NormRow {
            scheme,
            recall: out.test.recall,
            ndcg: out.test.ndcg,
        });
    }
    let mut text = String::from("scheme,recall,ndcg\n");
    for r in &rows {
        text.push_str(&format!("{},{},{}\n", r.scheme, r.recall, r.ndcg));
    }
    let path = config.output_dir.join("ablate_norm.csv");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub smoothness: SmoothnessReport,
    pub checks: Vec<IdentityCheck>,
}

impl Diagnosis {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Smoothness of the checkpoint's combined embeddings plus the SGCN and
/// APPNP identity checks on a subgraph induced by `sample_users` users.
pub fn cmd_diagnose(
    config: &RunConfig,
    checkpoint: &Path,
    sample_users: usize,
) -> Result<Diagnosis> {
    let built = load_dataset(config)?;
    let ds = &built.dataset;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_shape(checkpoint, ds.num_users(), ds.num_items(), config.dim)?;
    let mapping = checkpoint.with_file_name("mapping.json");
    if mapping.exists() {
        let saved: IdMapFile = io::read_json(&mapping)?;
        if saved != IdMapFile::from(&built.ids) {
            return Err(CliError::Checkpoint {
                path: checkpoint.to_path_buf(),
                message: format!(
                    "{} does not match the dataset id mapping",
                    mapping.display()
                ),
            });
        }
    }

    let adjacency = SparseAdjacency::from_dataset(ds);
    let op = match ck.scheme {
        Some(s) => GraphOperator::normalized(&adjacency, s),
        None => GraphOperator::unnormalized(&adjacency),
    };
    let weights = LayerWeights::custom(ck.alphas.clone())?;
    let mut state = EmbeddingState::from_e0(ck.num_users, ck.num_items, ck.e0.clone())?;
    state.forward(&op, &weights)?;
    let smoothness = smoothness_report(
        state.combined()?,
        ds,
        config.smoothness_mode,
        config.model.name(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut users =
        index::sample(&mut rng, ds.num_users(), sample_users.min(ds.num_users())).into_vec();
    users.sort_unstable();
    let sub = ds.induced_by_users(&users)?;
    let mut kept_items: Vec<usize> = users
        .iter()
        .flat_map(|&u| ds.train(u).iter().copied())
        .collect();
    kept_items.sort_unstable();
    kept_items.dedup();
    let m = ds.num_users();
    let rows: Vec<usize> = users
        .iter()
        .copied()
        .chain(kept_items.iter().map(|&i| m + i))
        .collect();
    let sub_e0 = DenseMatrix::from_fn(rows.len(), ck.dim, |r, c| ck.e0.get(rows[r], c));
    let sub_adj = SparseAdjacency::from_dataset(&sub);
    let sub_op = GraphOperator::normalized(&sub_adj, ck.scheme.unwrap_or(NormScheme::SymSqrt));
    let k = ck.layers().max(2);
    let checks = vec![
        check_sgcn_identity(&sub_adj, &sub_e0, k, 1e-12)?,
        check_appnp_identity(&sub_op, &sub_e0, 0.1, k, 1e-12)?,
    ];

    println!("S_U {}", smoothness.s_user);
    println!("S_I {}", smoothness.s_item);
    for c in &checks {
        println!(
            "{} {} (error {:.3e}, tolerance {:.0e})",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.max_abs_error,
            c.tolerance
        );
    }
    create_dir(&config.output_dir)?;
    io::append_json_line(
        config.output_dir.join(DIAGNOSTICS_FILE),
        &json!({
            "model_tag": smoothness.model_tag,
            "checkpoint": checkpoint.display().to_string(),
            "smoothness_mode": config.smoothness_mode.name(),
            "s_user": smoothness.s_user,
            "s_item": smoothness.s_item,
            "subgraph_users": users.len(),
            "checks": checks.iter().map(|c| json!({
                "name": c.name,
                "max_abs_error": c.max_abs_error,
                "tolerance": c.tolerance,
                "passed": c.passed,
            })).collect::<Vec<_>>(),
        }),
    )?;
    Ok(Diagnosis { smoothness, checks })
}

/// Writes planted-cluster `train.txt` and `test.txt` into `dir`.
pub fn cmd_synth(params: &PlantedClusters, seed: u64, dir: &Path) -> Result<PathBuf> {
    let (train, test) = params
        .generate(seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(dir)?;
    io::write_interaction_file(dir.join("train.txt"), &train)?;
    io::write_interaction_file(dir.join("test.txt"), &test)?;
    Ok(dir.to_path_buf())
}
