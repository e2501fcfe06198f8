//! Symbolic multiply-accumulate counts for the codec and separator.
//!
//! One MAC is one multiply plus one accumulate. Bias additions, activations,
//! softmax and normalization are not counted. Layers are walked from the
//! configs alone, so the large presets never allocate.
//!
//! | layer            | MACs                 |
//! |------------------|----------------------|
//! | linear           | `n · in · out`       |
//! | conv1d           | `out_len · in · out · k` |
//! | conv1d_transposed| `in_len · in · out · k`  |
//! | attention        | `4·L·d² + 2·L²·d`    |

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::separator::SeparatorConfig;

pub const MAC_CONVENTION: &str =
    "MAC = 1 multiply + 1 accumulate; biases, activations, softmax and normalization excluded";

pub fn macs_linear(positions: u64, in_dim: u64, out_dim: u64) -> u64 {
    positions * in_dim * out_dim
}

pub fn macs_conv1d(out_len: u64, in_ch: u64, out_ch: u64, kernel: u64) -> u64 {
    out_len * in_ch * out_ch * kernel
}

/// Every input sample scatters `out_ch · k` products per input channel.
pub fn macs_conv1d_transposed(in_len: u64, in_ch: u64, out_ch: u64, kernel: u64) -> u64 {
    in_len * in_ch * out_ch * kernel
}

/// Q/K/V/output projections plus scores and weighted sum; the head split does not change the total.
pub fn macs_attention(seq_len: u64, model_dim: u64, _num_heads: u64) -> u64 {
    4 * seq_len * model_dim * model_dim + 2 * seq_len * seq_len * model_dim
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerKind {
    Linear,
    Conv1d,
    Conv1dTransposed,
    Attention,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv1d => "conv1d",
            LayerKind::Conv1dTransposed => "conv1d_transposed",
            LayerKind::Attention => "attention",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LayerKind::Linear),
            "conv1d" => Ok(LayerKind::Conv1d),
            "conv1d_transposed" => Ok(LayerKind::Conv1dTransposed),
            "attention" => Ok(LayerKind::Attention),
            other => Err(Error::UnknownLayer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Linear { positions: usize, in_dim: usize, out_dim: usize },
    Conv1d { in_len: usize, out_len: usize, in_ch: usize, out_ch: usize, kernel: usize },
    Conv1dTransposed { in_len: usize, out_len: usize, in_ch: usize, out_ch: usize, kernel: usize },
    Attention { seq_len: usize, model_dim: usize, num_heads: usize },
}

impl Layer {
    /// Builds a layer from its kind name and dimensions:
    /// `linear n in out`, `conv1d in_len out_len in out k`,
    /// `conv1d_transposed in_len out_len in out k`, `attention L d heads`.
    pub fn from_desc(kind: &str, dims: &[usize]) -> Result<Self> {
        let kind: LayerKind = kind.parse()?;
        let want = match kind {
            LayerKind::Linear | LayerKind::Attention => 3,
            LayerKind::Conv1d | LayerKind::Conv1dTransposed => 5,
        };
        if dims.len() != want {
            return Err(Error::Config(format!("{} takes {want} dimensions, got {}", kind.as_str(), dims.len())));
        }
        let d = dims;
        Ok(match kind {
            LayerKind::Linear => Layer::Linear { positions: d[0], in_dim: d[1], out_dim: d[2] },
            LayerKind::Conv1d => Layer::Conv1d { in_len: d[0], out_len: d[1], in_ch: d[2], out_ch: d[3], kernel: d[4] },
            LayerKind::Conv1dTransposed => {
                Layer::Conv1dTransposed { in_len: d[0], out_len: d[1], in_ch: d[2], out_ch: d[3], kernel: d[4] }
            }
            LayerKind::Attention => Layer::Attention { seq_len: d[0], model_dim: d[1], num_heads: d[2] },
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Conv1d { .. } => LayerKind::Conv1d,
            Layer::Conv1dTransposed { .. } => LayerKind::Conv1dTransposed,
            Layer::Attention { .. } => LayerKind::Attention,
        }
    }

    pub fn macs(&self) -> u64 {
        let u = |v: usize| v as u64;
        match *self {
            Layer::Linear { positions, in_dim, out_dim } => macs_linear(u(positions), u(in_dim), u(out_dim)),
            Layer::Conv1d { out_len, in_ch, out_ch, kernel, .. } => {
                macs_conv1d(u(out_len), u(in_ch), u(out_ch), u(kernel))
            }
            Layer::Conv1dTransposed { in_len, in_ch, out_ch, kernel, .. } => {
                macs_conv1d_transposed(u(in_len), u(in_ch), u(out_ch), u(kernel))
            }
            Layer::Attention { seq_len, model_dim, num_heads } => {
                macs_attention(u(seq_len), u(model_dim), u(num_heads))
            }
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            Layer::Linear { positions, in_dim, .. } => vec![positions, in_dim],
            Layer::Conv1d { in_len, in_ch, .. } | Layer::Conv1dTransposed { in_len, in_ch, .. } => vec![in_ch, in_len],
            Layer::Attention { seq_len, model_dim, .. } => vec![seq_len, model_dim],
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match *self {
            Layer::Linear { positions, out_dim, .. } => vec![positions, out_dim],
            Layer::Conv1d { out_len, out_ch, .. } | Layer::Conv1dTransposed { out_len, out_ch, .. } => {
                vec![out_ch, out_len]
            }
            Layer::Attention { seq_len, model_dim, .. } => vec![seq_len, model_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub title: String,
    pub layers: Vec<LayerRecord>,
    pub total_macs: u64,
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

impl MacReport {
    pub fn from_layers(title: impl Into<String>, layers: Vec<(String, Layer)>) -> Self {
        let layers: Vec<LayerRecord> = layers
            .into_iter()
            .map(|(name, l)| LayerRecord {
                name,
                kind: l.kind(),
                input_shape: l.input_shape(),
                output_shape: l.output_shape(),
                macs: l.macs(),
            })
            .collect();
        let total_macs = layers.iter().map(|l| l.macs).sum();
        Self {
            title: title.into(),
            layers,
            total_macs,
        }
    }

    /// Totals per layer kind, in kind order; kinds absent from the report are omitted.
    pub fn by_kind(&self) -> Vec<(LayerKind, u64)> {
        let mut out: Vec<(LayerKind, u64)> = Vec::new();
        for l in &self.layers {
            match out.iter_mut().find(|(k, _)| *k == l.kind) {
                Some((_, m)) => *m += l.macs,
                None => out.push((l.kind, l.macs)),
            }
        }
        out.sort();
        out
    }

    pub fn render(&self) -> String {
        let header = ["layer", "kind", "input", "output", "MACs"];
        let rows: Vec<[String; 5]> = self
            .layers
            .iter()
            .map(|l| {
                [
                    l.name.clone(),
                    l.kind.as_str().to_string(),
                    shape_str(&l.input_shape),
                    shape_str(&l.output_shape),
                    l.macs.to_string(),
                ]
            })
            .collect();
        let mut w = header.map(str::len);
        for r in &rows {
            for (i, c) in r.iter().enumerate() {
                w[i] = w[i].max(c.len());
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(
            s,
            "{:<a$}  {:<b$}  {:<c$}  {:<d$}  {:>e$}",
            header[0], header[1], header[2], header[3], header[4],
            a = w[0], b = w[1], c = w[2], d = w[3], e = w[4]
        );
        for r in &rows {
            let _ = writeln!(
                s,
                "{:<a$}  {:<b$}  {:<c$}  {:<d$}  {:>e$}",
                r[0], r[1], r[2], r[3], r[4],
                a = w[0], b = w[1], c = w[2], d = w[3], e = w[4]
            );
        }
        let _ = writeln!(s, "total {} MACs ({:.4} GMACs)", self.total_macs, self.total_macs as f64 / 1e9);
        let _ = writeln!(s, "{MAC_CONVENTION}");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,input,output,macs\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l.name,
                l.kind.as_str(),
                shape_str(&l.input_shape),
                shape_str(&l.output_shape),
                l.macs
            );
        }
        let _ = writeln!(s, "total,,,,{}", self.total_macs);
        s
    }
}

/// Encoder and decoder convolutions for `samples` input samples (hop-padded).
pub fn codec_layers(cfg: &CodecConfig, samples: usize) -> Vec<(String, Layer)> {
    let hop = cfg.hop();
    let mut len = samples.div_ceil(hop).max(1) * hop;
    let k = cfg.kernel_size;
    let pad = k - 1;
    let mut out = Vec::new();
    let mut c_prev = 1;
    for (i, (&c, &s)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        let out_len = len / s;
        out.push((
            format!("encoder.{i}"),
            Layer::Conv1d { in_len: len + pad, out_len, in_ch: c_prev, out_ch: c, kernel: k },
        ));
        len = out_len;
        c_prev = c;
    }
    let n = cfg.channels.len();
    for j in 0..n {
        let c_in = cfg.channels[n - 1 - j];
        let c_out = if j + 1 < n { cfg.channels[n - 2 - j] } else { cfg.channels[0] };
        let s = cfg.strides[n - 1 - j];
        out.push((
            format!("decoder.{j}"),
            Layer::Conv1dTransposed { in_len: len, out_len: len * s, in_ch: c_in, out_ch: c_out, kernel: k },
        ));
        len *= s;
    }
    out.push((
        "decoder.out".into(),
        Layer::Conv1d { in_len: len + pad, out_len: len, in_ch: cfg.channels[0], out_ch: 1, kernel: k },
    ));
    out
}

/// The separator stack applied to a sequence of `frames` positions.
pub fn separator_layers(cfg: &SeparatorConfig, frames: usize) -> Vec<(String, Layer)> {
    let (e, d, f) = (cfg.codec_embedding_dim, cfg.model_dim, cfg.ffn_dim);
    let mut out = vec![("input".to_string(), Layer::Linear { positions: frames, in_dim: e, out_dim: d })];
    for b in 0..cfg.num_blocks {
        out.push((
            format!("blocks.{b}.attn"),
            Layer::Attention { seq_len: frames, model_dim: d, num_heads: cfg.num_heads },
        ));
        out.push((format!("blocks.{b}.ffn.0"), Layer::Linear { positions: frames, in_dim: d, out_dim: f }));
        out.push((format!("blocks.{b}.ffn.1"), Layer::Linear { positions: frames, in_dim: f, out_dim: d }));
    }
    out.push((
        "output".into(),
        Layer::Linear { positions: frames, in_dim: d, out_dim: cfg.num_speakers * e },
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileModel {
    Codec,
    Separator,
    Pipeline,
}

impl FromStr for ProfileModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codec" => Ok(ProfileModel::Codec),
            "sep" | "separator" => Ok(ProfileModel::Separator),
            "pipeline" => Ok(ProfileModel::Pipeline),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected codec, sep or pipeline)"
            ))),
        }
    }
}

/// Codec and separator shapes behind a preset name.
pub fn preset_configs(preset: &str) -> Result<(CodecConfig, SeparatorConfig)> {
    let codec = match preset {
        "toy" => CodecConfig::toy(),
        "paper" => CodecConfig::paper(),
        other => return Err(Error::Config(format!("unknown preset `{other}` (expected toy or paper)"))),
    };
    let sep = SeparatorConfig::preset(preset, codec.embedding_dim)?;
    Ok((codec, sep))
}

pub fn input_samples(duration_s: f64, sample_rate: u32) -> Result<usize> {
    let n = (duration_s * sample_rate as f64).round();
    if !(n >= 1.0) {
        return Err(Error::Config(format!("duration {duration_s} s at {sample_rate} Hz has no samples")));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub reports: Vec<MacReport>,
    pub comparison: Option<RatioTable>,
}

/// `Codec`: encoder plus decoder. `Separator`: the stack at codec frame rate.
/// `Pipeline`: the frame-rate separator against the same stack run at
/// waveform rate, codec encode/decode excluded from both.
pub fn profile(model: ProfileModel, preset: &str, duration_s: f64, sample_rate: u32) -> Result<Profile> {
    let (codec, sep) = preset_configs(preset)?;
    let samples = input_samples(duration_s, sample_rate)?;
    let frames = samples.div_ceil(codec.hop());
    let frame_rate = || {
        MacReport::from_layers(
            format!("separator ({preset}) at codec frame rate: {frames} frames"),
            separator_layers(&sep, frames),
        )
    };
    Ok(match model {
        ProfileModel::Codec => Profile {
            reports: vec![MacReport::from_layers(
                format!("codec ({preset}): {samples} samples, hop {}", codec.hop()),
                codec_layers(&codec, samples),
            )],
            comparison: None,
        },
        ProfileModel::Separator => Profile {
            reports: vec![frame_rate()],
            comparison: None,
        },
        ProfileModel::Pipeline => {
            let a = frame_rate();
            let b = MacReport::from_layers(
                format!("separator ({preset}) at waveform rate: {samples} positions"),
                separator_layers(&sep, samples),
            );
            let cmp = compare(&a, &b)?;
            Profile {
                reports: vec![a, b],
                comparison: Some(cmp),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub label: String,
    pub candidate: u64,
    pub baseline: u64,
    /// `baseline / candidate`; `None` when the candidate has no MACs of this kind.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub total: RatioRow,
}

fn ratio_row(label: &str, candidate: u64, baseline: u64) -> RatioRow {
    RatioRow {
        label: label.into(),
        candidate,
        baseline,
        ratio: (candidate > 0).then(|| baseline as f64 / candidate as f64),
    }
}

/// How many times more MACs `baseline` needs than `candidate`, per kind and in total.
pub fn compare(candidate: &MacReport, baseline: &MacReport) -> Result<RatioTable> {
    if baseline.layers.is_empty() || baseline.total_macs == 0 {
        return Err(Error::EmptyBaseline);
    }
    let (a, b) = (candidate.by_kind(), baseline.by_kind());
    let mut kinds: Vec<LayerKind> = a.iter().chain(&b).map(|(k, _)| *k).collect();
    kinds.sort();
    kinds.dedup();
    let get = |v: &[(LayerKind, u64)], k: LayerKind| v.iter().find(|(x, _)| *x == k).map_or(0, |(_, m)| *m);
    let rows = kinds
        .into_iter()
        .map(|k| ratio_row(k.as_str(), get(&a, k), get(&b, k)))
        .collect();
    Ok(RatioTable {
        rows,
        total: ratio_row("total", candidate.total_macs, baseline.total_macs),
    })
}

impl RatioTable {
    pub fn render(&self) -> String {
        let fmt = |r: &RatioRow| -> [String; 4] {
            [
                r.label.clone(),
                r.candidate.to_string(),
                r.baseline.to_string(),
                r.ratio.map_or_else(|| "inf".to_string(), |x| format!("{x:.2}")),
            ]
        };
        let rows: Vec<[String; 4]> = self.rows.iter().chain(core::iter::once(&self.total)).map(fmt).collect();
        let header = ["kind", "candidate", "baseline", "ratio"];
        let mut w = header.map(str::len);
        for r in &rows {
            for (i, c) in r.iter().enumerate() {
                w[i] = w[i].max(c.len());
            }
        }
        let mut s = String::new();
        for r in core::iter::once(header.map(String::from)).chain(rows) {
            let _ = writeln!(
                s,
                "{:<a$}  {:>b$}  {:>c$}  {:>d$}",
                r[0], r[1], r[2], r[3],
                a = w[0], b = w[1], c = w[2], d = w[3]
            );
        }
        s
    }
}

#[cfg(test)]
mod tests;
