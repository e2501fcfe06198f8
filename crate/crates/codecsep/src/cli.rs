//! The `codecsep` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use codecsep_core::codec::{train_codec, CodecTrainConfig};
use codecsep_core::macprof::{self, ProfileModel, MAC_CONVENTION};
use codecsep_core::trainer::{
    evaluate, train_separator, training_checkpoint, CodecSpaceSeparator, EvalReport, PassthroughSeparator, Scenario,
    ScenarioSeparator, Target, TrainConfig, WaveSeparator,
};
use codecsep_core::{Codec, CodecConfig, MetricValue, MixtureExample, Separator, SeparatorConfig, SynthSpec, Waveform};

use crate::archive;
use crate::config::apply_file;
use crate::dataset::{load_manifest, write_dataset};
use crate::error::{Error, Result};
use crate::log::EpochLogWriter;

#[derive(Debug, Parser)]
#[command(name = "codecsep", version, about = "Speech separation in the latent space of a neural audio codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic talker mixtures as WAV files plus manifest.tsv
    Synth(SynthArgs),
    /// Train the toy codec on every mixture and source of a manifest
    TrainCodec(TrainCodecArgs),
    /// Train the separator over a frozen codec
    TrainSep(TrainSepArgs),
    /// Score a separator under one deployment scenario
    Eval(EvalArgs),
    /// Count multiply-accumulates of a model graph
    Profile(ProfileArgs),
    /// Describe a checkpoint
    Info(InfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    fn as_str(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    GroundTruth,
    Transmission,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::GroundTruth => Target::GroundTruth,
            TargetArg::Transmission => Target::Transmission,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Oracle,
    Local,
    Cloud,
    Codecspace,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Oracle => Scenario::Oracle,
            ScenarioArg::Local => Scenario::Local,
            ScenarioArg::Cloud => Scenario::Cloud,
            ScenarioArg::Codecspace => Scenario::CodecSpace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Codec,
    Sep,
    Pipeline,
}

impl From<ModelArg> for ProfileModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Codec => ProfileModel::Codec,
            ModelArg::Sep => ProfileModel::Separator,
            ModelArg::Pipeline => ProfileModel::Pipeline,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of mixtures
    #[arg(long, default_value_t = 100)]
    pub num: usize,
    /// Talkers per mixture
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    /// Seconds per mixture
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 8000)]
    pub sr: u32,
    /// Lower bound of the per-mixture SNR in dB
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub snr_low: f64,
    /// Upper bound of the per-mixture SNR in dB
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub snr_high: f64,
    /// Seed for talkers and mixing gains
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainCodecArgs {
    /// Training manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    pub out: PathBuf,
    /// Codec shape
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    /// `key = value` file with codec training fields, applied before the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Epochs [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization, crops and codebook reseeding [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainSepArgs {
    /// Codec checkpoint (kept frozen)
    #[arg(long)]
    pub codec: PathBuf,
    /// Training manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Validation manifest
    #[arg(long)]
    pub valid: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    pub out: PathBuf,
    /// Separator shape and training defaults
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    /// `key = value` file with training fields, applied before the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reference signals of the loss [default: transmission]
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Quantize codec embeddings inside the training loop [default: off]
    #[arg(long, value_enum)]
    pub rvq: Option<Switch>,
    /// Epochs [default: 40 for toy, 200 for paper]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate [default: 0.001 for toy, 0.00015 for paper]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization and batch order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epoch log CSV [default: OUT with extension .log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Codec checkpoint
    #[arg(long)]
    pub codec: PathBuf,
    /// Separator checkpoint, or `identity` to return the mixture once per talker
    #[arg(long)]
    pub sep: String,
    /// Evaluation manifest
    #[arg(long)]
    pub data: PathBuf,
    /// oracle: separate the clean mixture; local: separate, then transmit each output;
    /// cloud: transmit the mixture, then separate; codecspace: the separator's own codec path
    #[arg(long, value_enum, default_value_t = ScenarioArg::Codecspace)]
    pub scenario: ScenarioArg,
    /// References: clean sources or their transmitted versions
    #[arg(long, value_enum, default_value_t = TargetArg::Transmission)]
    pub comparison: TargetArg,
    /// Quantize in every codec pass (separator input, transmission, references)
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub rvq: Switch,
    /// Per-example CSV report
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// codec: encoder and decoder; sep: separator at codec frame rate; pipeline: separator at frame rate vs waveform rate
    #[arg(long, value_enum, default_value_t = ModelArg::Pipeline)]
    pub model: ModelArg,
    /// Model shapes
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    /// Input seconds
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 8000)]
    pub sr: u32,
    /// Also write per-layer counts as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::TrainCodec(a) => train_codec_cmd(a, out),
        Command::TrainSep(a) => train_sep(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Profile(a) => profile(a, out),
        Command::Info(a) => info(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes()).map_err(Error::io("<stdout>"))
}

fn show_config(out: &mut dyn Write, command: &str, pairs: &[(String, String)]) -> Result<()> {
    let mut s = format!("# codecsep {command}: resolved config\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s.push('\n');
    say(out, s)
}

fn pair(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn path_pair(k: &str, p: &Path) -> (String, String) {
    pair(k, p.display())
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        return Ok(());
    }
    let source = std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found"));
    Err(Error::Io { path: path.into(), source })
}

fn load_examples(path: &Path) -> Result<Vec<MixtureExample>> {
    require_file("manifest", path)?;
    let examples = load_manifest(path)?;
    if examples.is_empty() {
        return Err(codecsep_core::Error::EmptyDataset.into());
    }
    Ok(examples)
}

fn load_codec(path: &Path) -> Result<Codec> {
    require_file("codec checkpoint", path)?;
    Ok(Codec::from_checkpoint(&archive::load(path)?)?)
}

fn check_rate(examples: &[MixtureExample], sample_rate: u32, source: &Path) -> Result<()> {
    match examples.iter().find(|e| e.mixture.sample_rate != sample_rate) {
        Some(e) => Err(Error::Parse {
            path: source.into(),
            line: 0,
            detail: format!("example {} is at {} Hz, the codec expects {sample_rate} Hz", e.id, e.mixture.sample_rate),
        }),
        None => Ok(()),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        num_examples: a.num,
        num_speakers: a.speakers,
        duration_s: a.duration,
        sample_rate: a.sr,
        snr_range_db: (a.snr_low, a.snr_high),
        seed: a.seed,
    };
    show_config(
        out,
        "synth",
        &[
            path_pair("out", &a.out),
            pair("num", a.num),
            pair("speakers", a.speakers),
            pair("duration", a.duration),
            pair("sr", a.sr),
            pair("snr_low", a.snr_low),
            pair("snr_high", a.snr_high),
            pair("seed", a.seed),
        ],
    )?;
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if a.num == 0 {
        return Err(Error::Usage("--num must be at least 1".into()));
    }
    let manifest = write_dataset(&a.out, &spec)?;
    say(out, format!("wrote {} mixtures; manifest {}\n", a.num, manifest.display()))
}

fn train_codec_cmd(a: TrainCodecArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = CodecTrainConfig::default();
    if let Some(path) = &a.config {
        apply_file(path, |k, v| cfg.set(k, v))?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let examples = load_examples(&a.data)?;
    let mut shape = match a.preset {
        Preset::Toy => CodecConfig::toy(),
        Preset::Paper => CodecConfig::paper(),
    };
    shape.sample_rate = examples[0].mixture.sample_rate;
    check_rate(&examples, shape.sample_rate, &a.data)?;
    let mut pairs = vec![path_pair("data", &a.data), path_pair("out", &a.out), pair("preset", a.preset.as_str())];
    shape.to_metadata(&mut pairs);
    pairs.extend(cfg.to_pairs());
    show_config(out, "train-codec", &pairs)?;

    let waves: Vec<Waveform> =
        examples.iter().flat_map(|e| std::iter::once(e.mixture.clone()).chain(e.sources.iter().cloned())).collect();
    let mut codec = Codec::new(shape, cfg.seed)?;
    say(out, format!("{} training signals, {} parameters\n", waves.len(), codec.param_count()))?;
    let mut progress = Ok(());
    train_codec(&mut codec, &waves, &cfg, |epoch, loss| {
        if progress.is_ok() {
            progress = say(out, format!("epoch {epoch:>3}  loss {loss:.4}\n"));
        }
    })?;
    progress?;
    archive::save(&a.out, &codec.to_checkpoint())?;
    say(out, format!("saved {}\n", a.out.display()))
}

fn train_sep(a: TrainSepArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = TrainConfig::preset(a.preset.as_str()).map_err(|e| Error::Usage(e.to_string()))?;
    if let Some(path) = &a.config {
        apply_file(path, |k, v| cfg.set(k, v))?;
    }
    if let Some(t) = a.target {
        cfg.target = t.into();
    }
    if let Some(r) = a.rvq {
        cfg.rvq_in_loop = r.on();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.csv"));
    let codec = load_codec(&a.codec)?;
    let shape = SeparatorConfig::preset(a.preset.as_str(), codec.config.embedding_dim)?;
    let mut pairs = vec![
        path_pair("codec", &a.codec),
        path_pair("data", &a.data),
        path_pair("valid", &a.valid),
        path_pair("out", &a.out),
        path_pair("log", &log_path),
        pair("preset", a.preset.as_str()),
    ];
    shape.to_metadata(&mut pairs);
    pairs.extend(cfg.to_pairs());
    show_config(out, "train-sep", &pairs)?;
    cfg.segment_samples(codec.config.sample_rate, codec.hop())?;

    let train = load_examples(&a.data)?;
    let valid = load_examples(&a.valid)?;
    check_rate(&train, codec.config.sample_rate, &a.data)?;
    check_rate(&valid, codec.config.sample_rate, &a.valid)?;
    let mut sep = Separator::new(shape, cfg.seed)?;
    say(out, format!("{} training mixtures, {} validation mixtures, {} parameters\n", train.len(), valid.len(), sep.param_count()))?;
    let mut writer = EpochLogWriter::create(&log_path)?;
    let (primary, secondary) = (cfg.target.prefix().to_string() + "SI-SDRi", cfg.target.other().prefix().to_string() + "SI-SDRi");
    let mut progress = Ok(());
    let outcome = train_separator(&mut sep, &codec, &train, &valid, &cfg, |log| {
        if progress.is_ok() {
            progress = writer.append(log).and_then(|_| {
                say(
                    out,
                    format!(
                        "epoch {:>3}  loss {:.4}  {primary} {:.3}  {secondary} {:.3}  lr {}\n",
                        log.epoch, log.train_loss, log.val_primary, log.val_secondary, log.lr
                    ),
                )
            });
        }
    })?;
    progress?;
    archive::save(&a.out, &training_checkpoint(&sep, &outcome, &cfg))?;
    say(out, format!("best {primary} {:.3} at epoch {}; saved {}\n", outcome.best_score, outcome.best_epoch, a.out.display()))
}

fn fmt_value(v: MetricValue) -> String {
    if v.finite {
        format!("{}", v.value_db)
    } else if v.value_db > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Per-example CSV; capped values are written as `inf` / `-inf`.
pub fn report_csv(report: &EvalReport) -> String {
    let names = report.metric_names();
    let mut s = format!("id,permutation,{}\n", names.join(","));
    for e in &report.examples {
        let perm: Vec<String> = e.permutation.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.id,
            perm.join(" "),
            fmt_value(e.si_sdr),
            fmt_value(e.si_sdri),
            fmt_value(e.sdr),
            fmt_value(e.sdri)
        );
    }
    s
}

pub fn report_table(report: &EvalReport) -> String {
    let mut s = format!("{:<10} {:>10} {:>7} {:>7} {:>9}\n", "metric", "mean dB", "finite", "capped", "positive");
    for (name, m) in report.metric_names().iter().zip(report.summaries()) {
        let mean = m.mean.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(s, "{name:<10} {mean:>10} {:>7} {:>7} {:>9}", m.finite, m.capped, m.positive);
    }
    let _ = writeln!(s, "{} examples; means exclude capped values", report.examples.len());
    s
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let scenario: Scenario = a.scenario.into();
    let comparison: Target = a.comparison.into();
    let mut pairs = vec![
        path_pair("codec", &a.codec),
        pair("sep", &a.sep),
        path_pair("data", &a.data),
        pair("scenario", scenario.as_str()),
        pair("comparison", comparison.as_str()),
        pair("rvq", if a.rvq.on() { "on" } else { "off" }),
    ];
    if let Some(r) = &a.report {
        pairs.push(path_pair("report", r));
    }
    show_config(out, "eval", &pairs)?;
    let codec = load_codec(&a.codec)?;
    let examples = load_examples(&a.data)?;
    check_rate(&examples, codec.config.sample_rate, &a.data)?;
    let use_rvq = a.rvq.on();
    let sep_model;
    let passthrough;
    let codec_space;
    let inner: &dyn WaveSeparator = if a.sep == "identity" {
        passthrough = PassthroughSeparator { num_speakers: examples[0].num_speakers() };
        &passthrough
    } else {
        let path = Path::new(&a.sep);
        require_file("separator checkpoint", path)?;
        sep_model = Separator::from_checkpoint(&archive::load(path)?)?;
        if sep_model.config.codec_embedding_dim != codec.config.embedding_dim {
            return Err(codecsep_core::Error::Config(format!(
                "separator expects {}-dim embeddings, codec produces {}",
                sep_model.config.codec_embedding_dim, codec.config.embedding_dim
            ))
            .into());
        }
        codec_space = CodecSpaceSeparator { separator: &sep_model, codec: &codec, use_rvq_in: use_rvq };
        &codec_space
    };
    let wrapped = ScenarioSeparator { inner, channel: &codec, scenario, use_rvq };
    let report = evaluate(&wrapped, &codec, &examples, comparison, use_rvq)?;
    if let Some(path) = &a.report {
        std::fs::write(path, report_csv(&report)).map_err(Error::io(path))?;
    }
    say(out, report_table(&report))
}

fn profile(a: ProfileArgs, out: &mut dyn Write) -> Result<()> {
    let model: ProfileModel = a.model.into();
    let mut pairs = vec![
        pair("model", format!("{:?}", a.model).to_lowercase()),
        pair("preset", a.preset.as_str()),
        pair("duration", a.duration),
        pair("sr", a.sr),
    ];
    if let Some(c) = &a.csv {
        pairs.push(path_pair("csv", c));
    }
    show_config(out, "profile", &pairs)?;
    let p = macprof::profile(model, a.preset.as_str(), a.duration, a.sr).map_err(|e| Error::Usage(e.to_string()))?;
    for r in &p.reports {
        say(out, r.render())?;
        say(out, "\n")?;
    }
    if let Some(cmp) = &p.comparison {
        say(out, "waveform rate (baseline) vs codec frame rate (candidate)\n")?;
        say(out, cmp.render())?;
        say(out, format!("{MAC_CONVENTION}\n"))?;
    }
    if let Some(path) = &a.csv {
        let labels: &[&str] = match model {
            ProfileModel::Codec => &["codec"],
            ProfileModel::Separator => &["frame_rate"],
            ProfileModel::Pipeline => &["frame_rate", "waveform_rate"],
        };
        let mut csv = String::from("report,layer,kind,input,output,macs\n");
        for (label, r) in labels.iter().zip(&p.reports) {
            for line in r.to_csv().lines().skip(1) {
                let _ = writeln!(csv, "{label},{line}");
            }
        }
        std::fs::write(path, csv).map_err(Error::io(path))?;
    }
    Ok(())
}

fn info(a: InfoArgs, out: &mut dyn Write) -> Result<()> {
    show_config(out, "info", &[path_pair("ckpt", &a.ckpt)])?;
    require_file("checkpoint", &a.ckpt)?;
    let ckpt = archive::load(&a.ckpt)?;
    let mut s = String::from("metadata:\n");
    for (k, v) in &ckpt.metadata {
        let _ = writeln!(s, "  {k} = {v}");
    }
    let scalars: usize = ckpt.tensors.iter().map(|t| t.tensor.len()).sum();
    let _ = writeln!(s, "tensors: {} ({scalars} values)", ckpt.tensors.len());
    for t in &ckpt.tensors {
        let _ = writeln!(s, "  {:<40} {:?}", t.name, t.tensor.shape);
    }
    say(out, s)
}
