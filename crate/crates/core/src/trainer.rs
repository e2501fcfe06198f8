//! Permutation-invariant training of the separator over a frozen codec, the
//! plateau learning-rate schedule, and evaluation under the deployment
//! scenarios.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::Graph;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::metrics::{best_permutation, improvement, pit_assign, si_sdr_graph, Metric, MetricValue, Transmit};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::separator::Separator;
use crate::signal::{MixtureExample, Waveform};
use crate::tensor::{Checkpoint, ParamSet};

/// What the separator's outputs are compared against: the clean sources, or
/// the sources after a trip through the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    GroundTruth,
    Transmission,
}

pub type Comparison = Target;

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::GroundTruth => "ground-truth",
            Target::Transmission => "transmission",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Target::GroundTruth => Target::Transmission,
            Target::Transmission => Target::GroundTruth,
        }
    }

    /// Metric-name prefix: `c` for comparisons against the transmitted signal.
    pub fn prefix(self) -> &'static str {
        match self {
            Target::GroundTruth => "",
            Target::Transmission => "c",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground-truth" | "ground_truth" | "GroundTruth" => Ok(Target::GroundTruth),
            "transmission" | "Transmission" => Ok(Target::Transmission),
            other => Err(Error::Config(format!(
                "unknown target `{other}` (expected ground-truth or transmission)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub target: Target,
    pub rvq_in_loop: bool,
    pub lr: f64,
    pub lr_halve_patience: usize,
    pub lr_schedule_start_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_s: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            target: Target::Transmission,
            rvq_in_loop: false,
            lr: 1.5e-4,
            lr_halve_patience: 2,
            lr_schedule_start_epoch: 5,
            epochs: 200,
            batch_size: 2,
            segment_s: 1.0,
            seed: 0,
        }
    }
}

pub const TRAIN_CONFIG_KEYS: &[&str] = &[
    "target",
    "rvq_in_loop",
    "lr",
    "lr_halve_patience",
    "lr_schedule_start_epoch",
    "epochs",
    "batch_size",
    "segment_s",
    "seed",
];

impl TrainConfig {
    pub fn paper() -> Self {
        Self::default()
    }

    /// Desk-scale preset: fewer epochs and a larger step size.
    pub fn toy() -> Self {
        Self {
            epochs: 40,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected toy or paper)"))),
        }
    }

    /// Sets one field from its textual form; `key` is the field name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "target" => self.target = value.parse()?,
            "rvq_in_loop" => {
                self.rvq_in_loop = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    _ => return Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
                }
            }
            "lr" => self.lr = parse(key, value)?,
            "lr_halve_patience" => self.lr_halve_patience = parse(key, value)?,
            "lr_schedule_start_epoch" => self.lr_schedule_start_epoch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "segment_s" => self.segment_s = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("target".into(), self.target.as_str().into()),
            ("rvq_in_loop".into(), self.rvq_in_loop.to_string()),
            ("lr".into(), format!("{}", self.lr)),
            ("lr_halve_patience".into(), self.lr_halve_patience.to_string()),
            ("lr_schedule_start_epoch".into(), self.lr_schedule_start_epoch.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("segment_s".into(), format!("{}", self.segment_s)),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Segment length in samples, checked against the codec hop.
    pub fn segment_samples(&self, sample_rate: u32, hop: usize) -> Result<usize> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || !(self.segment_s > 0.0) {
            return Err(Error::Config("lr, epochs, batch_size and segment_s must be positive".into()));
        }
        let samples = (self.segment_s * sample_rate as f64).round() as usize;
        if samples == 0 || !samples.is_multiple_of(hop) {
            return Err(Error::Config(format!(
                "segment of {samples} samples is not a multiple of the codec hop {hop}"
            )));
        }
        Ok(samples)
    }
}

/// Halves the learning rate when the validation score stops improving.
///
/// After epoch `e` with score `v`: a strict improvement records `v` as the
/// best and clears the bad-epoch counter. Otherwise, once `e` exceeds the
/// start epoch, the counter grows; when it reaches the patience the rate is
/// halved and the counter cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub patience: usize,
    pub start_epoch: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, patience: usize, start_epoch: usize) -> Self {
        Self {
            lr,
            best: None,
            bad_epochs: 0,
            patience,
            start_epoch,
        }
    }

    /// Records the score of `epoch` (1-based); returns whether the rate was halved.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.map_or(!score.is_nan(), |b| score > b) {
            self.best = Some(score);
            self.bad_epochs = 0;
            return false;
        }
        if epoch <= self.start_epoch {
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience.max(1) {
            self.lr *= 0.5;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// One completed epoch. `val_primary` is SI-SDRi on the axis of the training
/// target (cSI-SDRi for transmission), `val_secondary` the other axis; `lr` is
/// the rate after this epoch's schedule update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_primary: f64,
    pub val_secondary: f64,
    pub lr: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_primary,val_secondary,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_primary, self.val_secondary, self.lr
        )
    }
}

/// Mixture-to-estimates black box, as seen by the evaluation.
pub trait WaveSeparator {
    fn separate(&self, mixture: &Waveform) -> Result<Vec<Waveform>>;
}

impl<F: Fn(&Waveform) -> Result<Vec<Waveform>>> WaveSeparator for F {
    fn separate(&self, mixture: &Waveform) -> Result<Vec<Waveform>> {
        self(mixture)
    }
}

/// The separator run inside the codec's latent space.
pub struct CodecSpaceSeparator<'a> {
    pub separator: &'a Separator,
    pub codec: &'a Codec,
    pub use_rvq_in: bool,
}

impl WaveSeparator for CodecSpaceSeparator<'_> {
    fn separate(&self, mixture: &Waveform) -> Result<Vec<Waveform>> {
        self.separator.separate_waveforms(self.codec, mixture, self.use_rvq_in)
    }
}

/// Stub that returns the mixture once per speaker.
#[derive(Debug, Clone, Copy)]
pub struct PassthroughSeparator {
    pub num_speakers: usize,
}

impl WaveSeparator for PassthroughSeparator {
    fn separate(&self, mixture: &Waveform) -> Result<Vec<Waveform>> {
        Ok(vec![mixture.clone(); self.num_speakers])
    }
}

/// Where the codec sits relative to the separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Separate the clean mixture; compare outputs directly.
    Oracle,
    /// Separate the clean mixture, then transmit each output.
    Local,
    /// Transmit the mixture, then separate what arrives.
    Cloud,
    /// Separate inside the codec latent (the separator consumes codec embeddings).
    CodecSpace,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Oracle => "oracle",
            Scenario::Local => "local",
            Scenario::Cloud => "cloud",
            Scenario::CodecSpace => "codecspace",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Scenario::Oracle),
            "local" => Ok(Scenario::Local),
            "cloud" => Ok(Scenario::Cloud),
            "codecspace" => Ok(Scenario::CodecSpace),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected oracle, local, cloud or codecspace)"
            ))),
        }
    }
}

/// Wraps a separator with the transmission step of a scenario.
pub struct ScenarioSeparator<'a, S: ?Sized, C: ?Sized> {
    pub inner: &'a S,
    pub channel: &'a C,
    pub scenario: Scenario,
    pub use_rvq: bool,
}

impl<S: WaveSeparator + ?Sized, C: Transmit + ?Sized> WaveSeparator for ScenarioSeparator<'_, S, C> {
    fn separate(&self, mixture: &Waveform) -> Result<Vec<Waveform>> {
        match self.scenario {
            Scenario::Oracle | Scenario::CodecSpace => self.inner.separate(mixture),
            Scenario::Local => self
                .inner
                .separate(mixture)?
                .iter()
                .map(|w| self.channel.transmit(w, self.use_rvq))
                .collect(),
            Scenario::Cloud => {
                let received = self.channel.transmit(mixture, self.use_rvq)?;
                self.inner.separate(&received)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScores {
    pub id: String,
    pub permutation: Vec<usize>,
    pub si_sdr: MetricValue,
    pub si_sdri: MetricValue,
    pub sdr: MetricValue,
    pub sdri: MetricValue,
}

/// Mean over examples whose value was not capped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub finite: usize,
    pub capped: usize,
    pub positive: usize,
}

impl MetricSummary {
    fn from_values(values: impl Iterator<Item = MetricValue>) -> Self {
        let mut s = MetricSummary::default();
        let mut total = 0.0;
        for v in values {
            if v.finite {
                s.finite += 1;
                total += v.value_db;
                if v.value_db > 0.0 {
                    s.positive += 1;
                }
            } else {
                s.capped += 1;
            }
        }
        if s.finite > 0 {
            s.mean = Some(total / s.finite as f64);
        }
        s
    }

    pub fn mean_or_nan(&self) -> f64 {
        self.mean.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub comparison: Comparison,
    pub examples: Vec<ExampleScores>,
    pub si_sdr: MetricSummary,
    pub si_sdri: MetricSummary,
    pub sdr: MetricSummary,
    pub sdri: MetricSummary,
}

impl EvalReport {
    /// `[SI-SDR, SI-SDRi, SDR, SDRi]`, `c`-prefixed for the transmission comparison.
    pub fn metric_names(&self) -> [String; 4] {
        let p = self.comparison.prefix();
        [
            format!("{p}SI-SDR"),
            format!("{p}SI-SDRi"),
            format!("{p}SDR"),
            format!("{p}SDRi"),
        ]
    }

    pub fn summaries(&self) -> [MetricSummary; 4] {
        [self.si_sdr, self.si_sdri, self.sdr, self.sdri]
    }
}

fn mean_value(values: &[MetricValue]) -> MetricValue {
    let finite = values.iter().all(|v| v.finite);
    MetricValue {
        value_db: values.iter().map(|v| v.value_db).sum::<f64>() / values.len() as f64,
        finite,
    }
}

/// Reference signals for every example under `comparison`.
pub fn references<C: Transmit + ?Sized>(
    examples: &[MixtureExample],
    comparison: Comparison,
    channel: &C,
    use_rvq: bool,
) -> Result<Vec<Vec<Waveform>>> {
    examples
        .iter()
        .map(|ex| match comparison {
            Target::GroundTruth => Ok(ex.sources.clone()),
            Target::Transmission => ex.sources.iter().map(|s| channel.transmit(s, use_rvq)).collect(),
        })
        .collect()
}

/// Scores precomputed estimates. Assignment is by SI-SDR against the given
/// references; every signal is cut to the shortest length involved.
pub fn score_estimates(
    examples: &[MixtureExample],
    estimates: &[Vec<Waveform>],
    references: &[Vec<Waveform>],
    comparison: Comparison,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(examples.len());
    for ((ex, est), refs) in examples.iter().zip(estimates).zip(references) {
        let n = est
            .iter()
            .chain(refs)
            .map(Waveform::len)
            .chain(core::iter::once(ex.mixture.len()))
            .min()
            .unwrap_or(0);
        let est: Vec<&[f32]> = est.iter().map(|w| &w.samples[..n]).collect();
        let refs: Vec<&[f32]> = refs.iter().map(|w| &w.samples[..n]).collect();
        let mix = &ex.mixture.samples[..n];
        let pit = pit_assign(Metric::SiSdr, &est, &refs)?;
        let mut cols: [Vec<MetricValue>; 4] = Default::default();
        for (i, &j) in pit.permutation.iter().enumerate() {
            cols[0].push(Metric::SiSdr.eval(est[i], refs[j])?);
            cols[1].push(improvement(Metric::SiSdr, est[i], refs[j], mix)?);
            cols[2].push(Metric::Sdr.eval(est[i], refs[j])?);
            cols[3].push(improvement(Metric::Sdr, est[i], refs[j], mix)?);
        }
        rows.push(ExampleScores {
            id: ex.id.clone(),
            permutation: pit.permutation,
            si_sdr: mean_value(&cols[0]),
            si_sdri: mean_value(&cols[1]),
            sdr: mean_value(&cols[2]),
            sdri: mean_value(&cols[3]),
        });
    }
    Ok(EvalReport {
        comparison,
        si_sdr: MetricSummary::from_values(rows.iter().map(|r| r.si_sdr)),
        si_sdri: MetricSummary::from_values(rows.iter().map(|r| r.si_sdri)),
        sdr: MetricSummary::from_values(rows.iter().map(|r| r.sdr)),
        sdri: MetricSummary::from_values(rows.iter().map(|r| r.sdri)),
        examples: rows,
    })
}

/// Runs `separator` on every mixture and scores it under `comparison`.
/// With the transmission comparison the references are `transmit(source, use_rvq)`.
pub fn evaluate<S: WaveSeparator + ?Sized, C: Transmit + ?Sized>(
    separator: &S,
    channel: &C,
    examples: &[MixtureExample],
    comparison: Comparison,
    use_rvq: bool,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let estimates = examples
        .iter()
        .map(|ex| separator.separate(&ex.mixture))
        .collect::<Result<Vec<_>>>()?;
    let refs = references(examples, comparison, channel, use_rvq)?;
    score_estimates(examples, &estimates, &refs, comparison)
}

/// Segment-sized training item with the codec-side work done once.
struct Prepared {
    latent: Vec<f32>,
    frames: usize,
    references: Vec<Vec<f32>>,
}

fn fit_segment(samples: &[f32], start: usize, len: usize) -> Vec<f32> {
    let mut out: Vec<f32> = samples.iter().skip(start).take(len).copied().collect();
    out.resize(len, 0.0);
    out
}

fn prepare(codec: &Codec, ex: &MixtureExample, start: usize, seg: usize, cfg: &TrainConfig) -> Result<Prepared> {
    let sr = ex.mixture.sample_rate;
    let mix = Waveform::new(fit_segment(&ex.mixture.samples, start, seg), sr)?;
    let mut e = codec.encode(&mix)?;
    if cfg.rvq_in_loop {
        e = codec.quantize(&e)?.quantized;
    }
    let references = ex
        .sources
        .iter()
        .map(|s| {
            let s = Waveform::new(fit_segment(&s.samples, start, seg), sr)?;
            Ok(match cfg.target {
                Target::GroundTruth => s.samples,
                Target::Transmission => codec.transmit(&s, cfg.rvq_in_loop)?.samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        latent: e.values,
        frames: e.frames,
        references,
    })
}

/// Loss and separator gradients for one batch: `−mean` over examples of the
/// best-permutation mean differentiable SI-SDR.
pub struct SepStep {
    pub loss: f64,
    pub grads: Vec<Vec<f32>>,
    /// Per example, the loss under every permutation (lexicographic order).
    pub permutation_losses: Vec<Vec<f64>>,
}

fn separator_step(sep: &Separator, codec: &Codec, batch: &[&Prepared]) -> Result<SepStep> {
    let mut g = Graph::<f32>::new();
    let sep_vars = sep.bind(&mut g, true)?;
    let codec_vars = codec.bind(&mut g, false)?;
    let dim = codec.config.embedding_dim;
    let mut chosen = Vec::new();
    let mut permutation_losses = Vec::new();
    for p in batch {
        let x = g.constant_from(vec![p.frames, dim], &p.latent)?;
        let outs = sep.forward_graph(&mut g, &sep_vars, x)?;
        let waves = outs
            .iter()
            .map(|&o| codec.decode_graph(&mut g, &codec_vars, o))
            .collect::<Result<Vec<_>>>()?;
        let refs = p
            .references
            .iter()
            .map(|r| g.constant_from(vec![r.len()], r))
            .collect::<Result<Vec<_>>>()?;
        let mut pair = Vec::with_capacity(waves.len());
        let mut table = Vec::with_capacity(waves.len());
        for &w in &waves {
            let mut row_vars = Vec::with_capacity(refs.len());
            let mut row = Vec::with_capacity(refs.len());
            for &r in &refs {
                let s = si_sdr_graph(&mut g, w, r, 1e-8)?;
                row.push(g.scalar(s) as f64);
                row_vars.push(s);
            }
            pair.push(row_vars);
            table.push(row);
        }
        let n = waves.len();
        permutation_losses.push(
            crate::metrics::permutations(n)
                .iter()
                .map(|perm| -perm.iter().enumerate().map(|(i, &j)| table[i][j]).sum::<f64>() / n as f64)
                .collect(),
        );
        let best = best_permutation(&table);
        for (i, &j) in best.permutation.iter().enumerate() {
            chosen.push(pair[i][j]);
        }
    }
    let all = g.concat(&chosen, 0)?;
    let mean = g.mean(all)?;
    let loss = g.scale(mean, -1.0)?;
    g.backward(loss)?;
    let grads = sep_vars
        .iter()
        .map(|&v| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();
    Ok(SepStep {
        loss: g.scalar(loss) as f64,
        grads,
        permutation_losses,
    })
}

pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub optimizer: Adam,
    pub final_lr: f64,
}

/// Validation scores on both axes: `(target axis, other axis)` mean SI-SDRi.
pub fn validation_scores(
    sep: &Separator,
    codec: &Codec,
    valid: &[MixtureExample],
    target_refs: &[Vec<Waveform>],
    other_refs: &[Vec<Waveform>],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let runner = CodecSpaceSeparator {
        separator: sep,
        codec,
        use_rvq_in: cfg.rvq_in_loop,
    };
    let estimates = valid
        .iter()
        .map(|ex| runner.separate(&ex.mixture))
        .collect::<Result<Vec<_>>>()?;
    let a = score_estimates(valid, &estimates, target_refs, cfg.target)?;
    let b = score_estimates(valid, &estimates, other_refs, cfg.target.other())?;
    Ok((a.si_sdri.mean_or_nan(), b.si_sdri.mean_or_nan()))
}

/// Trains `sep` in place; on return it holds the parameters of the best
/// validation epoch. The codec is only read.
pub fn train_separator(
    sep: &mut Separator,
    codec: &Codec,
    train: &[MixtureExample],
    valid: &[MixtureExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if sep.config.codec_embedding_dim != codec.config.embedding_dim {
        return Err(Error::Config(format!(
            "separator expects {}-dim latents, codec produces {}",
            sep.config.codec_embedding_dim, codec.config.embedding_dim
        )));
    }
    let seg = cfg.segment_samples(codec.config.sample_rate, codec.hop())?;
    let fixed: Vec<Option<Prepared>> = train
        .iter()
        .map(|ex| {
            if ex.mixture.len() <= seg {
                prepare(codec, ex, 0, seg, cfg).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let refs_primary = references(valid, cfg.target, codec, cfg.rvq_in_loop)?;
    let refs_other = references(valid, cfg.target.other(), codec, cfg.rvq_in_loop)?;

    let mut adam = Adam::new(&sep.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut schedule = LrSchedule::new(cfg.lr, cfg.lr_halve_patience, cfg.lr_schedule_start_epoch);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamSet)> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = Rng::from_key(&[cfg.seed, epoch as u64, 0x7a1]);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut cropped = Vec::new();
            for &i in chunk {
                if fixed[i].is_none() {
                    let start = rng.below(train[i].mixture.len() - seg + 1);
                    cropped.push(prepare(codec, &train[i], start, seg, cfg)?);
                }
            }
            let mut it = cropped.iter();
            let batch: Vec<&Prepared> = chunk
                .iter()
                .map(|&i| fixed[i].as_ref().unwrap_or_else(|| it.next().unwrap()))
                .collect();
            let step = separator_step(sep, codec, &batch)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged(format!("separator loss {} in epoch {epoch}", step.loss)));
            }
            adam.set_lr(schedule.lr);
            adam.step(&mut sep.params, &step.grads);
            total += step.loss;
            steps += 1;
        }
        let (primary, secondary) = validation_scores(sep, codec, valid, &refs_primary, &refs_other, cfg)?;
        schedule.observe(epoch, primary);
        if best.as_ref().map_or(!primary.is_nan(), |(_, b, _)| primary > *b) {
            best = Some((epoch, primary, sep.params.clone()));
        }
        let log = EpochLog {
            epoch,
            train_loss: total / steps as f64,
            val_primary: primary,
            val_secondary: secondary,
            lr: schedule.lr,
        };
        on_epoch(&log);
        logs.push(log);
    }
    let (best_epoch, best_score) = match best {
        Some((e, s, params)) => {
            sep.params = params;
            (e, s)
        }
        None => (cfg.epochs, f64::NAN),
    };
    Ok(TrainOutcome {
        logs,
        best_epoch,
        best_score,
        optimizer: adam,
        final_lr: schedule.lr,
    })
}

/// Separator weights plus optimizer moments and the training echo.
pub fn training_checkpoint(sep: &Separator, outcome: &TrainOutcome, cfg: &TrainConfig) -> Checkpoint {
    let mut ckpt = sep.to_checkpoint();
    ckpt.tensors.extend(outcome.optimizer.export(&sep.params, "adam."));
    for (k, v) in cfg.to_pairs() {
        ckpt.set_meta(&format!("train.{k}"), &v);
    }
    ckpt.set_meta("epoch", outcome.logs.len().to_string());
    ckpt.set_meta("best_epoch", outcome.best_epoch.to_string());
    ckpt.set_meta("best_score", format!("{}", outcome.best_score));
    ckpt.set_meta("lr", format!("{}", outcome.final_lr));
    let step = outcome.optimizer.states.first().map_or(0, |s| s.step);
    ckpt.set_meta("adam.step", step.to_string());
    ckpt
}
