//! Interaction files, id maps and run artifacts.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use lightgcn_core::evaluation::EvalReport;
use lightgcn_core::training::CurveRow;
use lightgcn_core::{IdMap, InteractionDataset, RawInteractions};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Reads one user per line: the user id followed by item ids, all
/// whitespace-separated. Repeated users are merged and duplicate items
/// collapse.
pub fn parse_interaction_file(path: impl AsRef<Path>) -> Result<RawInteractions> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_interactions(BufReader::new(file), path)
}

pub fn parse_interactions(reader: impl BufRead, path: &Path) -> Result<RawInteractions> {
    let mut out = RawInteractions::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let lineno = index + 1;
        let mut tokens = line.split_whitespace().map(|tok| {
            tok.parse::<u64>().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("`{tok}` is not a non-negative integer id"),
            })
        });
        let Some(user) = tokens.next() else {
            continue;
        };
        let user = user?;
        let items = tokens.collect::<Result<Vec<u64>>>()?;
        if items.is_empty() {
            log::warn!("{}:{lineno}: user {user} has no items", path.display());
        }
        out.insert(user, items);
    }
    Ok(out)
}

pub fn write_interaction_file(path: impl AsRef<Path>, data: &RawInteractions) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (user, items) in data.iter() {
        text.push_str(&user.to_string());
        for item in items {
            text.push(' ');
            text.push_str(&item.to_string());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Per-user lists translated back to raw ids, in dense user order. With
/// `merge_validation` the validation items are folded back into train.
pub fn to_raw(
    ds: &InteractionDataset,
    ids: &IdMap,
    merge_validation: bool,
) -> (RawInteractions, RawInteractions) {
    let users: Vec<u64> = ids.user_pairs().map(|(raw, _)| raw).collect();
    let items: Vec<u64> = ids.item_pairs().map(|(raw, _)| raw).collect();
    let mut train = RawInteractions::new();
    let mut test = RawInteractions::new();
    for (u, &raw_user) in users.iter().enumerate() {
        let mut dense = ds.train(u).to_vec();
        if merge_validation {
            dense.extend_from_slice(ds.validation(u));
            dense.sort_unstable();
        }
        train.insert(raw_user, dense.iter().map(|&i| items[i]));
        if !ds.test(u).is_empty() {
            test.insert(raw_user, ds.test(u).iter().map(|&i| items[i]));
        }
    }
    (train, test)
}

/// `mapping.json`: `[original, dense]` pairs for users and items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMapFile {
    pub users: Vec<(u64, usize)>,
    pub items: Vec<(u64, usize)>,
}

impl From<&IdMap> for IdMapFile {
    fn from(ids: &IdMap) -> Self {
        Self {
            users: ids.user_pairs().collect(),
            items: ids.item_pairs().collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Appends one compact JSON value as a line.
pub fn append_json_line<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let line = serde_json::to_string(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    writeln!(file, "{line}").map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub num_evaluated_users: usize,
}

impl From<&EvalReport> for ReportFile {
    fn from(r: &EvalReport) -> Self {
        Self {
            k: r.k,
            recall: r.recall,
            ndcg: r.ndcg,
            num_evaluated_users: r.num_evaluated_users,
        }
    }
}

pub fn write_per_user_csv(path: impl AsRef<Path>, report: &EvalReport, ids: &IdMap) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u64> = ids.user_pairs().map(|(r, _)| r).collect();
    let mut text = String::from("user,recall,ndcg\n");
    for row in &report.per_user {
        text.push_str(&format!("{},{},{}\n", raw[row.user], row.recall, row.ndcg));
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Streams training-curve rows to `curve.csv`, flushing after every row.
pub struct CurveWriter {
    path: std::path::PathBuf,
    out: BufWriter<fs::File>,
}

impl CurveWriter {
    pub fn create(path: impl AsRef<Path>, topk: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "epoch,loss,val_recall@{topk},val_ndcg@{topk}")
            .and_then(|_| out.flush())
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, out })
    }

    pub fn push(&mut self, row: &CurveRow) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{},{}",
            row.epoch,
            row.loss,
            opt(row.val_recall),
            opt(row.val_ndcg)
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| CliError::io(&self.path, e))
    }
}
