//! Synthetic datasets on disk: one WAV per signal plus a tab-separated manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use codecsep_core::signal::synth_example;
use codecsep_core::{MixtureExample, SynthSpec};

use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav};

pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn manifest_header(num_speakers: usize) -> String {
    let mut h = String::from("id\tmix");
    for s in 1..=num_speakers {
        write!(h, "\ts{s}").unwrap();
    }
    h.push_str("\tsnr_db");
    h
}

/// Writes `spec.num_examples` mixtures into `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut manifest = manifest_header(spec.num_speakers);
    manifest.push('\n');
    for i in 0..spec.num_examples {
        let ex = synth_example(spec, i)?;
        let mix = format!("{}_mix.wav", ex.id);
        write_wav(&dir.join(&mix), &ex.mixture)?;
        write!(manifest, "{}\t{mix}", ex.id).unwrap();
        for (s, src) in ex.sources.iter().enumerate() {
            let name = format!("{}_s{}.wav", ex.id, s + 1);
            write_wav(&dir.join(&name), src)?;
            write!(manifest, "\t{name}").unwrap();
        }
        writeln!(manifest, "\t{}", ex.snr_db).unwrap();
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(Error::io(&path))?;
    Ok(path)
}

/// Loads every example of a manifest; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<MixtureExample>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: usize, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty manifest".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let speakers = cols.len().saturating_sub(3);
    if speakers == 0 || header != manifest_header(speakers) {
        return Err(parse_err(1, format!("expected header `{}`", manifest_header(speakers.max(1)).replace('\t', "<TAB>"))));
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(n + 1, format!("{} fields, expected {}", fields.len(), cols.len())));
        }
        let snr_db = fields[cols.len() - 1]
            .parse()
            .map_err(|_| parse_err(n + 1, format!("invalid snr_db `{}`", fields[cols.len() - 1])))?;
        let mixture = read_wav(&base.join(fields[1]))?;
        let sources = fields[2..2 + speakers].iter().map(|f| read_wav(&base.join(f))).collect::<Result<Vec<_>>>()?;
        if sources.iter().any(|s| s.len() != mixture.len() || s.sample_rate != mixture.sample_rate) {
            return Err(parse_err(n + 1, "sources differ from the mixture in length or sample rate".into()));
        }
        out.push(MixtureExample { id: fields[0].to_string(), mixture, sources, snr_db });
    }
    Ok(out)
}
