//! Embedding export: a `<n> <dim>` header line, then one row of
//! space-separated decimals per line. Inputs go to a line-aligned sidecar
//! file next to it (`<path>.inputs`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::{EmbeddingBatch, View};
use crate::error::{DseError, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".inputs");
    PathBuf::from(s)
}

pub fn embeddings_to_string(batch: &EmbeddingBatch) -> String {
    let mut s = format!("{} {}\n", batch.rows, batch.dim);
    for row in batch.iter_rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_embeddings(content: &str, file: &str) -> Result<EmbeddingBatch> {
    let perr = |line: usize, message: String| DseError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(1, format!("bad header {header:?}"))))
        .collect::<Result<_>>()?;
    let [rows, dim] = dims[..] else {
        return Err(perr(1, format!("header must be `<n> <dim>`, got {header:?}")));
    };
    let mut data = Vec::with_capacity(rows.saturating_mul(dim).min(1 << 24));
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        if seen == rows {
            if line.trim().is_empty() {
                continue;
            }
            return Err(perr(i + 2, "more rows than the header declares".into()));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|_| perr(i + 2, format!("bad number {tok:?}")))?);
        }
        if data.len() - before != dim {
            return Err(perr(i + 2, format!("expected {dim} values, found {}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(perr(seen + 2, format!("header declares {rows} rows, found {seen}")));
    }
    EmbeddingBatch::new(rows, dim, data, View::Eval)
}

pub fn save_embeddings(path: impl AsRef<Path>, batch: &EmbeddingBatch, inputs: &[&str]) -> Result<()> {
    let path = path.as_ref();
    if inputs.len() != batch.rows {
        return Err(DseError::Shape("inputs and embedding rows differ in count".into()));
    }
    fs::write(path, embeddings_to_string(batch)).map_err(|e| DseError::io(path, e))?;
    let side = sidecar_path(path);
    let body: String = inputs
        .iter()
        .map(|t| format!("{}\n", t.replace(['\n', '\r'], " ")))
        .collect();
    fs::write(&side, body).map_err(|e| DseError::io(&side, e))
}

/// Load an embedding file and, when present, its sidecar inputs.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingBatch, Option<Vec<String>>)> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    let batch = parse_embeddings(&content, &path.display().to_string())?;
    let side = sidecar_path(path);
    let inputs = match fs::read_to_string(&side) {
        Ok(s) => {
            let lines: Vec<String> = s.lines().map(str::to_string).collect();
            if lines.len() != batch.rows {
                return Err(DseError::Invalid(format!(
                    "{} has {} lines for {} embeddings",
                    side.display(),
                    lines.len(),
                    batch.rows
                )));
            }
            Some(lines)
        }
        Err(_) => None,
    };
    Ok((batch, inputs))
}
