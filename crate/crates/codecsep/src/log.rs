//! Append-only epoch log in CSV form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use codecsep_core::trainer::EpochLog;

use crate::error::{Error, Result};

pub struct EpochLogWriter {
    path: PathBuf,
    file: BufWriter<File>,
}

impl EpochLogWriter {
    /// Creates (truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        let mut w = Self { path: path.to_path_buf(), file: BufWriter::new(file) };
        w.line(EpochLog::CSV_HEADER)?;
        Ok(w)
    }

    pub fn append(&mut self, log: &EpochLog) -> Result<()> {
        self.line(&log.csv_row())
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}").and_then(|_| self.file.flush()).map_err(Error::io(&self.path))
    }
}

pub fn read_epoch_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let parse_err = |line: usize, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };
    let mut lines = text.lines();
    if lines.next() != Some(EpochLog::CSV_HEADER) {
        return Err(parse_err(1, format!("expected header `{}`", EpochLog::CSV_HEADER)));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |j: usize| -> Result<f64> {
                f.get(j).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(i + 2, format!("bad field {j} in `{line}`")))
            };
            if f.len() != 5 {
                return Err(parse_err(i + 2, format!("expected 5 fields in `{line}`")));
            }
            Ok(EpochLog {
                epoch: f[0].parse().map_err(|_| parse_err(i + 2, format!("bad epoch `{}`", f[0])))?,
                train_loss: num(1)?,
                val_primary: num(2)?,
                val_secondary: num(3)?,
                lr: num(4)?,
            })
        })
        .collect()
}
