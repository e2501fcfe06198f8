//! Waveforms and the deterministic synthetic two-talker corpus.
//!
//! Each synthetic "speaker" is a harmonic tone stack under a random
//! piecewise-linear envelope. Speakers of one mixture draw their fundamentals
//! from disjoint sub-bands of 80–300 Hz, so every mixture is separable in
//! principle while still overlapping in time and in upper harmonics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Float math for no_std builds; redundant when std's inherent methods are in scope.
#[allow(unused_imports)]
use num_traits::Float;


use crate::error::{Error, Result};
use crate::rng::Rng;

/// Peak level of every synthesized source.
pub const SOURCE_PEAK: f64 = 0.7;
/// Mixtures whose peak exceeds this are attenuated together with their sources.
pub const MIXTURE_PEAK_LIMIT: f64 = 0.95;

const F0_LOW: f64 = 80.0;
const F0_HIGH: f64 = 300.0;

// stream tags keep the per-purpose random streams independent
const TAG_SOURCE: u64 = 0x5352_4300;
const TAG_SNR: u64 = 0x534e_5200;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// Mean square.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub snr_db: f64,
}

impl MixtureExample {
    pub fn num_speakers(&self) -> usize {
        self.sources.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_examples: usize,
    pub num_speakers: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_examples: 100,
            num_speakers: 2,
            duration_s: 1.0,
            sample_rate: 8000,
            snr_range_db: (0.0, 5.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) {
            return Err(Error::Config(format!("snr range [{lo}, {hi}] is inverted")));
        }
        if self.num_speakers == 0 || self.sample_rate == 0 || !(self.duration_s > 0.0) {
            return Err(Error::Config(
                "speakers, sample rate and duration must be positive".into(),
            ));
        }
        let exact = self.duration_s * self.sample_rate as f64;
        if (exact - exact.round()).abs() > 1e-6 || exact.round() < 1.0 {
            return Err(Error::Config(format!(
                "duration {} s at {} Hz is not a whole number of samples",
                self.duration_s, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn example_id(&self, index: usize) -> String {
        format!("ex{index:05}")
    }
}

/// One synthetic talker for `(seed, example_index, speaker_index)`.
pub fn synth_source(spec: &SynthSpec, example_index: usize, speaker_index: usize) -> Result<Waveform> {
    spec.validate()?;
    if example_index >= spec.num_examples || speaker_index >= spec.num_speakers {
        return Err(Error::Config(format!(
            "index ({example_index}, {speaker_index}) outside {} examples x {} speakers",
            spec.num_examples, spec.num_speakers
        )));
    }
    let mut rng = Rng::from_key(&[spec.seed, example_index as u64, speaker_index as u64, TAG_SOURCE]);
    let sr = spec.sample_rate as f64;
    let n = spec.num_samples();

    let band = (F0_HIGH - F0_LOW) / spec.num_speakers as f64;
    let band_lo = F0_LOW + band * speaker_index as f64;
    let f0 = rng.range(band_lo, band_lo + band);

    let harmonics = 3 + rng.below(6);
    let partials: Vec<(f64, f64, f64)> = (1..=harmonics)
        .map(|h| {
            let amp = rng.range(0.2, 1.0) / h as f64;
            let phase = rng.range(0.0, core::f64::consts::TAU);
            (h as f64 * f0, amp, phase)
        })
        .filter(|&(f, _, _)| f < sr / 2.0)
        .collect();

    let segments = 4 + rng.below(13);
    let knots: Vec<f64> = (0..=segments).map(|_| rng.range(0.1, 1.0)).collect();

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let pos = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 } * segments as f64;
            let seg = (pos.floor() as usize).min(segments - 1);
            let frac = pos - seg as f64;
            let env = knots[seg] * (1.0 - frac) + knots[seg + 1] * frac;
            let t = i as f64 / sr;
            let tone: f64 = partials
                .iter()
                .map(|&(f, a, p)| a * (core::f64::consts::TAU * f * t + p).sin())
                .sum();
            env * tone
        })
        .collect();

    let peak = samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|x| *x *= SOURCE_PEAK / peak);
    }
    Waveform::new(samples.into_iter().map(|x| x as f32).collect(), spec.sample_rate)
}

fn check_same_layout(sources: &[Waveform]) -> Result<()> {
    let first = &sources[0];
    for s in &sources[1..] {
        if s.len() != first.len() {
            return Err(Error::LengthMismatch(first.len(), s.len()));
        }
        if s.sample_rate != first.sample_rate {
            return Err(Error::Config(format!(
                "sample rate mismatch: {} vs {}",
                first.sample_rate, s.sample_rate
            )));
        }
    }
    Ok(())
}

/// Gain applied to `interferer` so that `10·log10(P(reference) / P(g·interferer)) = snr_db`.
pub fn snr_gain(reference: &[f32], interferer: &[f32], snr_db: f64) -> Result<f64> {
    let (p1, p2) = (power(reference), power(interferer));
    if p1 == 0.0 || p2 == 0.0 {
        return Err(Error::DegenerateSource);
    }
    Ok((p1 / (p2 * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Rescales every source after the first to the requested level against the
/// first and returns `(mixture, rescaled sources)`. No clipping is applied.
pub fn mix_scaled(sources: &[Waveform], snr_db: &[f64]) -> Result<(Waveform, Vec<Waveform>)> {
    if sources.is_empty() || snr_db.len() + 1 != sources.len() {
        return Err(Error::Config(format!(
            "{} sources need {} relative levels, got {}",
            sources.len(),
            sources.len().saturating_sub(1),
            snr_db.len()
        )));
    }
    check_same_layout(sources)?;
    let mut scaled = Vec::with_capacity(sources.len());
    scaled.push(sources[0].clone());
    for (s, &snr) in sources[1..].iter().zip(snr_db) {
        let gain = snr_gain(&sources[0].samples, &s.samples, snr)?;
        let samples = s.samples.iter().map(|&x| (x as f64 * gain) as f32).collect();
        scaled.push(Waveform::new(samples, s.sample_rate)?);
    }
    let n = sources[0].len();
    let mixture = (0..n)
        .map(|i| scaled.iter().map(|s| s.samples[i] as f64).sum::<f64>() as f32)
        .collect();
    Ok((Waveform::new(mixture, sources[0].sample_rate)?, scaled))
}

/// Two-source mixture: the second source is rescaled to sit `snr_db` below the first.
pub fn mix(sources: &[Waveform], snr_db: f64) -> Result<Waveform> {
    if sources.len() != 2 {
        return Err(Error::Config(format!(
            "mix needs exactly 2 sources, got {}",
            sources.len()
        )));
    }
    mix_scaled(sources, &[snr_db]).map(|(m, _)| m)
}

/// Mixture example `example_index` of the corpus described by `spec`.
pub fn synth_example(spec: &SynthSpec, example_index: usize) -> Result<MixtureExample> {
    let raw = (0..spec.num_speakers)
        .map(|spk| synth_source(spec, example_index, spk))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::from_key(&[spec.seed, example_index as u64, TAG_SNR]);
    let (lo, hi) = spec.snr_range_db;
    let snrs: Vec<f64> = (1..spec.num_speakers).map(|_| rng.range(lo, hi)).collect();
    let (mut mixture, mut sources) = mix_scaled(&raw, &snrs)?;
    let peak = mixture.peak() as f64;
    if peak > MIXTURE_PEAK_LIMIT {
        let gain = MIXTURE_PEAK_LIMIT / peak;
        for w in core::iter::once(&mut mixture).chain(sources.iter_mut()) {
            w.samples.iter_mut().for_each(|x| *x = (*x as f64 * gain) as f32);
        }
        // restore exact additivity after the per-signal rounding
        for i in 0..mixture.len() {
            mixture.samples[i] = sources.iter().map(|s| s.samples[i] as f64).sum::<f64>() as f32;
        }
    }
    Ok(MixtureExample {
        id: spec.example_id(example_index),
        mixture,
        sources,
        snr_db: snrs.first().copied().unwrap_or(0.0),
    })
}
