//! `key = value` configuration files with `#` comments.

use std::path::Path;

use crate::error::{Error, Result};

/// Non-empty, non-comment lines as `(line number, key, value)`.
pub fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads `path` and feeds every pair to `set`, reporting failures with their line.
pub fn apply_file(
    path: &Path,
    mut set: impl FnMut(&str, &str) -> codecsep_core::Result<()>,
) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    for (line, k, v) in parse_pairs(path, &text)? {
        set(&k, &v).map_err(|e| Error::Parse { path: path.to_path_buf(), line, detail: e.to_string() })?;
    }
    Ok(())
}
