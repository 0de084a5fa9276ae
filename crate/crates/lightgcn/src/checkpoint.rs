//! Checkpoint files: a text header `LGCN v1 M N T K scheme`, the row-major
//! `e0` matrix as little-endian f64, then a text footer `alphas a0 a1 ...`.

use std::fs;
use std::path::{Path, PathBuf};

use lightgcn_core::{DenseMatrix, NormScheme};

use crate::{CliError, Result};

const MAGIC: &str = "LGCN";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    /// `None` for propagation on the unnormalized adjacency.
    pub scheme: Option<NormScheme>,
    pub alphas: Vec<f64>,
    pub e0: DenseMatrix,
}

impl Checkpoint {
    pub fn layers(&self) -> usize {
        self.alphas.len().saturating_sub(1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let scheme = self
            .scheme
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        let mut out = format!(
            "{MAGIC} {VERSION} {} {} {} {} {scheme}\n",
            self.num_users,
            self.num_items,
            self.dim,
            self.layers()
        )
        .into_bytes();
        for x in self.e0.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let alphas: Vec<String> = self.alphas.iter().map(f64::to_string).collect();
        out.extend_from_slice(format!("alphas {}\n", alphas.join(" ")).as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| CliError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| bad("header is not UTF-8".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 7 || fields[0] != MAGIC {
            return Err(bad(format!("unrecognised header `{header}`")));
        }
        if fields[1] != VERSION {
            return Err(bad(format!("unsupported version `{}`", fields[1])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(format!("bad header field `{s}`")))
        };
        let (num_users, num_items, dim, layers) = (
            num(fields[2])?,
            num(fields[3])?,
            num(fields[4])?,
            num(fields[5])?,
        );
        let scheme = match fields[6] {
            "none" => None,
            s => Some(s.parse::<NormScheme>().map_err(|e| bad(e.to_string()))?),
        };

        let len = (num_users + num_items)
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad("matrix size overflows".into()))?;
        let body = &bytes[newline + 1..];
        if body.len() < len {
            return Err(bad(format!(
                "expected {len} bytes of embeddings, found {}",
                body.len()
            )));
        }
        let data: Vec<f64> = body[..len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let e0 = DenseMatrix::from_vec(num_users + num_items, dim, data)?;

        let footer =
            std::str::from_utf8(&body[len..]).map_err(|_| bad("footer is not UTF-8".into()))?;
        let mut tokens = footer.split_whitespace();
        if tokens.next() != Some("alphas") {
            return Err(bad("missing alphas footer".into()));
        }
        let alphas = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| bad(format!("bad alpha `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if alphas.len() != layers + 1 {
            return Err(bad(format!(
                "header says K={layers} but footer has {} weights",
                alphas.len()
            )));
        }
        Ok(Self {
            num_users,
            num_items,
            dim,
            scheme,
            alphas,
            e0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Errors when `(M, N, T)` differ from what the caller expects.
    pub fn check_shape(
        &self,
        path: &Path,
        num_users: usize,
        num_items: usize,
        dim: usize,
    ) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_users != num_users {
            problems.push(format!("M={} (dataset has {num_users})", self.num_users));
        }
        if self.num_items != num_items {
            problems.push(format!("N={} (dataset has {num_items})", self.num_items));
        }
        if self.dim != dim {
            problems.push(format!("T={} (config has {dim})", self.dim));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Checkpoint {
                path: PathBuf::from(path),
                message: format!("checkpoint does not match: {}", problems.join(", ")),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            num_users: 2,
            num_items: 3,
            dim: 2,
            scheme: Some(NormScheme::SymSqrt),
            alphas: vec![1.0 / 3.0; 3],
            e0: DenseMatrix::from_fn(5, 2, |r, c| (r as f64 - 2.5) * 0.1 + c as f64 * 1e-17),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert!(bytes.starts_with(b"LGCN v1 2 3 2 2 sym-sqrt\n"));
        assert_eq!(Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap(), ck);
    }

    #[test]
    fn unnormalized_scheme_token() {
        let mut ck = sample();
        ck.scheme = None;
        let bytes = ck.to_bytes();
        assert!(bytes.starts_with(b"LGCN v1 2 3 2 2 none\n"));
        assert_eq!(
            Checkpoint::from_bytes(&bytes, Path::new("x"))
                .unwrap()
                .scheme,
            None
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..40], Path::new("x")).is_err());
    }

    #[test]
    fn shape_mismatch_lists_every_field() {
        let err = sample()
            .check_shape(Path::new("x"), 3, 3, 4)
            .unwrap_err()
            .to_string();
        assert!(err.contains("M=2") && err.contains("T=2") && !err.contains("N=3 "));
    }
}
