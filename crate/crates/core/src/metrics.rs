//! Separation metrics: SI-SDR, codec SI-SDR, SNR-style SDR, their improvement
//! variants, and permutation-invariant assignment.
//!
//! Both operands are mean-subtracted before any ratio is taken. Results are
//! clamped to ±[`CAP_DB`]; a clamped value is reported with `finite = false`
//! so that perfect or orthogonal estimates stay ordered and serializable.
//!
//! SDR here is the plain signal-to-error ratio `‖s‖² / ‖s − ŝ‖²`, not the
//! BSS-eval definition with a distortion filter.

use alloc::vec;
use alloc::vec::Vec;

// Float math for no_std builds; redundant when std's inherent methods are in scope.
#[allow(unused_imports)]
use num_traits::Float;


use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::signal::Waveform;

pub const CAP_DB: f64 = 300.0;

/// Error energy below this fraction of the target energy counts as a perfect match.
const PERFECT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value_db: f64,
    pub finite: bool,
}

impl MetricValue {
    fn finite(value_db: f64) -> Self {
        if value_db >= CAP_DB {
            Self::capped(CAP_DB)
        } else if value_db <= -CAP_DB {
            Self::capped(-CAP_DB)
        } else {
            Self {
                value_db,
                finite: true,
            }
        }
    }

    fn capped(value_db: f64) -> Self {
        Self {
            value_db,
            finite: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SiSdr,
    Sdr,
}

impl Metric {
    pub fn eval(self, estimate: &[f32], reference: &[f32]) -> Result<MetricValue> {
        match self {
            Metric::SiSdr => si_sdr(estimate, reference),
            Metric::Sdr => sdr(estimate, reference),
        }
    }
}

fn centered(x: &[f32]) -> Vec<f64> {
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    x.iter().map(|&v| v as f64 - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn prepare(estimate: &[f32], reference: &[f32]) -> Result<(Vec<f64>, Vec<f64>)> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch(estimate.len(), reference.len()));
    }
    if reference.len() < 2 {
        return Err(Error::LengthMismatch(reference.len(), 2));
    }
    let constant = reference.iter().all(|&v| v == reference[0]);
    let s = centered(reference);
    if constant || dot(&s, &s) == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok((centered(estimate), s))
}

fn ratio_db(signal: f64, error: f64) -> MetricValue {
    if error < PERFECT_RATIO * signal {
        MetricValue::capped(CAP_DB)
    } else {
        MetricValue::finite(10.0 * (signal / error).log10())
    }
}

/// Scale-invariant SDR of `estimate` against `reference`.
pub fn si_sdr(estimate: &[f32], reference: &[f32]) -> Result<MetricValue> {
    let (e, s) = prepare(estimate, reference)?;
    let alpha = dot(&e, &s) / dot(&s, &s);
    if alpha == 0.0 {
        return Ok(MetricValue::capped(-CAP_DB));
    }
    let target: f64 = s.iter().map(|v| (alpha * v) * (alpha * v)).sum();
    let error: f64 = s.iter().zip(&e).map(|(v, x)| (alpha * v - x) * (alpha * v - x)).sum();
    Ok(ratio_db(target, error))
}

/// Signal-to-error ratio; unlike [`si_sdr`] it penalizes gain errors.
pub fn sdr(estimate: &[f32], reference: &[f32]) -> Result<MetricValue> {
    let (e, s) = prepare(estimate, reference)?;
    let signal = dot(&s, &s);
    let error: f64 = s.iter().zip(&e).map(|(v, x)| (v - x) * (v - x)).sum();
    Ok(ratio_db(signal, error))
}

/// `metric(estimate, reference) − metric(mixture, reference)`.
pub fn improvement(metric: Metric, estimate: &[f32], reference: &[f32], mixture: &[f32]) -> Result<MetricValue> {
    let a = metric.eval(estimate, reference)?;
    let b = metric.eval(mixture, reference)?;
    Ok(MetricValue {
        value_db: a.value_db - b.value_db,
        finite: a.finite && b.finite,
    })
}

/// Anything that can play the role of `t = Codec(s)`.
pub trait Transmit {
    fn transmit(&self, w: &Waveform, use_rvq: bool) -> Result<Waveform>;
}

/// Transmission channel that returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Transmit for IdentityCodec {
    fn transmit(&self, w: &Waveform, _use_rvq: bool) -> Result<Waveform> {
        Ok(w.clone())
    }
}

/// SI-SDR of `estimate` against the transmitted (quantized) version of `clean`.
/// Signals are truncated to the shorter length first.
pub fn codec_si_sdr<C: Transmit + ?Sized>(estimate: &[f32], clean: &Waveform, codec: &C) -> Result<MetricValue> {
    let t = codec.transmit(clean, true)?;
    let n = estimate.len().min(t.len());
    si_sdr(&estimate[..n], &t.samples[..n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitAssignment {
    /// `permutation[i]` is the reference matched to estimate `i`.
    pub permutation: Vec<usize>,
    pub score_db: f64,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Picks the estimate-to-reference assignment with the best mean score, given
/// a precomputed `scores[estimate][reference]` table. Ties go to the
/// lexicographically smallest permutation.
pub fn best_permutation(scores: &[Vec<f64>]) -> PitAssignment {
    let n = scores.len();
    let mut best = PitAssignment {
        permutation: (0..n).collect(),
        score_db: f64::NEG_INFINITY,
    };
    for perm in permutations(n) {
        let mean = perm.iter().enumerate().map(|(i, &j)| scores[i][j]).sum::<f64>() / n as f64;
        if mean > best.score_db {
            best = PitAssignment {
                permutation: perm,
                score_db: mean,
            };
        }
    }
    best
}

pub const MAX_PIT_SOURCES: usize = 4;

pub fn pit_assign<E: AsRef<[f32]>, R: AsRef<[f32]>>(
    metric: Metric,
    estimates: &[E],
    references: &[R],
) -> Result<PitAssignment> {
    if estimates.len() != references.len() {
        return Err(Error::CountMismatch {
            estimates: estimates.len(),
            references: references.len(),
        });
    }
    if estimates.is_empty() || estimates.len() > MAX_PIT_SOURCES {
        return Err(Error::Config(alloc::format!(
            "exhaustive assignment supports 1..={MAX_PIT_SOURCES} sources, got {}",
            estimates.len()
        )));
    }
    let scores = estimates
        .iter()
        .map(|e| {
            references
                .iter()
                .map(|r| metric.eval(e.as_ref(), r.as_ref()).map(|m| m.value_db))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(best_permutation(&scores))
}

/// Differentiable SI-SDR in dB with `eps` added to every denominator and no caps.
/// Both inputs must share one shape; their means are removed first.
pub fn si_sdr_graph<T: Real>(g: &mut Graph<T>, estimate: Var, reference: Var, eps: f64) -> Result<Var> {
    let e = g.center(estimate)?;
    let s = g.center(reference)?;
    let es = g.mul(e, s)?;
    let cross = g.sum(es)?;
    let ss = g.square(s)?;
    let energy = g.sum(ss)?;
    let energy = g.add_const(energy, T::lit(eps))?;
    let alpha = g.div(cross, energy)?;
    let target = g.scale_by(s, alpha)?;
    let noise = g.sub(target, e)?;
    let tt = g.square(target)?;
    let num = g.sum(tt)?;
    let num = g.add_const(num, T::lit(eps))?;
    let nn = g.square(noise)?;
    let den = g.sum(nn)?;
    let den = g.add_const(den, T::lit(eps))?;
    let ln = g.log10(num)?;
    let ld = g.log10(den)?;
    let diff = g.sub(ln, ld)?;
    g.scale(diff, T::lit(10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(n: usize, rng: &mut Rng) -> Vec<f32> {
        (0..n).map(|_| rng.range(-1.0, 1.0) as f32).collect()
    }

    #[test]
    fn hand_worked_si_sdr() {
        let s = [1.0, -1.0, 1.0, -1.0];
        let e = [1.0, 0.0, 0.0, 0.0];
        let v = si_sdr(&e, &s).unwrap();
        assert!((v.value_db - (-3.0103)).abs() < 1e-3, "{v:?}");
        assert!(v.finite);
    }

    #[test]
    fn identical_and_scaled_estimates_hit_the_cap() {
        let mut rng = Rng::new(3);
        let s = random(64, &mut rng);
        let twice: Vec<f32> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), MetricValue { value_db: CAP_DB, finite: false });
        assert_eq!(si_sdr(&twice, &s).unwrap(), MetricValue { value_db: CAP_DB, finite: false });
    }

    #[test]
    fn orthogonal_estimate_hits_the_floor() {
        let s = [1.0, -1.0, 1.0, -1.0];
        let e = [1.0, 1.0, -1.0, -1.0];
        assert_eq!(si_sdr(&e, &s).unwrap(), MetricValue { value_db: -CAP_DB, finite: false });
    }

    #[test]
    fn sdr_is_scale_sensitive() {
        // unit power, zero mean
        let s = [1.0f32, -1.0, 1.0, -1.0];
        let twice: Vec<f32> = s.iter().map(|v| 2.0 * v).collect();
        let neg: Vec<f32> = s.iter().map(|v| -v).collect();
        assert!(sdr(&twice, &s).unwrap().value_db.abs() < 1e-12);
        assert!((sdr(&neg, &s).unwrap().value_db - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        assert!(!sdr(&s, &s).unwrap().finite);
    }

    #[test]
    fn errors() {
        assert_eq!(si_sdr(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::LengthMismatch(2, 3)));
        assert_eq!(si_sdr(&[1.0, 2.0], &[0.5, 0.5]), Err(Error::DegenerateReference));
        assert!(si_sdr(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn improvement_cases() {
        let mut rng = Rng::new(5);
        let s = random(50, &mut rng);
        let m = random(50, &mut rng);
        let z = improvement(Metric::SiSdr, &m, &s, &m).unwrap();
        assert_eq!(z.value_db, 0.0);
        assert!(!improvement(Metric::SiSdr, &s, &s, &m).unwrap().finite);
        let e = [1.0, 0.0, 0.0, 0.0];
        let r = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(improvement(Metric::SiSdr, &e, &r, &e).unwrap().value_db, 0.0);
    }

    #[test]
    fn pit_identity_and_swap() {
        let mut rng = Rng::new(8);
        let a = random(40, &mut rng);
        let b = random(40, &mut rng);
        let refs = [a.clone(), b.clone()];
        assert_eq!(pit_assign(Metric::SiSdr, &[a.clone(), b.clone()], &refs).unwrap().permutation, vec![0, 1]);
        assert_eq!(pit_assign(Metric::SiSdr, &[b, a], &refs).unwrap().permutation, vec![1, 0]);
    }

    #[test]
    fn pit_recovers_planted_permutation() {
        let mut rng = Rng::new(21);
        let refs: Vec<Vec<f32>> = (0..3).map(|_| random(200, &mut rng)).collect();
        let planted = [2usize, 0, 1];
        let ests: Vec<Vec<f32>> = planted
            .iter()
            .map(|&j| refs[j].iter().map(|v| v + 0.1 * rng.range(-1.0, 1.0) as f32).collect())
            .collect();
        let got = pit_assign(Metric::SiSdr, &ests, &refs).unwrap();
        assert_eq!(got.permutation, planted.to_vec());
    }

    #[test]
    fn pit_ties_take_the_smallest_permutation() {
        let r = vec![1.0f32, -1.0, 1.0, -1.0];
        let got = pit_assign(Metric::SiSdr, &[r.clone(), r.clone()], &[r.clone(), r]).unwrap();
        assert_eq!(got.permutation, vec![0, 1]);
    }

    #[test]
    fn pit_errors() {
        let r = vec![1.0f32, -1.0];
        assert!(matches!(
            pit_assign(Metric::SiSdr, core::slice::from_ref(&r), &[r.clone(), r.clone()]),
            Err(Error::CountMismatch { .. })
        ));
        let five = vec![r.clone(); 5];
        assert!(pit_assign(Metric::SiSdr, &five, &five).is_err());
    }

    #[test]
    fn graph_si_sdr_matches_closed_form_away_from_caps() {
        let mut rng = Rng::new(13);
        let s = random(128, &mut rng);
        let e: Vec<f32> = s.iter().map(|v| v + 0.3 * rng.range(-1.0, 1.0) as f32).collect();
        let mut g = Graph::<f64>::new();
        let ev = g.constant_from(vec![128], &e).unwrap();
        let sv = g.constant_from(vec![128], &s).unwrap();
        let out = si_sdr_graph(&mut g, ev, sv, 1e-8).unwrap();
        let exact = si_sdr(&e, &s).unwrap().value_db;
        assert!((g.scalar(out) - exact).abs() < 1e-6);
    }
}
