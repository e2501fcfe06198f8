use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::rng::Rng;

/// Naive reference layers that count every multiply they perform.
struct Counter {
    muls: u64,
    rng: Rng,
}

impl Counter {
    fn new(seed: u64) -> Self {
        Self { muls: 0, rng: Rng::new(seed) }
    }

    fn random(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.range(-1.0, 1.0)).collect()
    }

    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.muls += 1;
        a * b
    }

    /// `x: [n, i]`, fresh random `[i, o]` weight.
    fn linear(&mut self, x: &[f64], n: usize, i: usize, o: usize) -> Vec<f64> {
        let w = self.random(i * o);
        let mut y = vec![0.0; n * o];
        for r in 0..n {
            for c in 0..o {
                for k in 0..i {
                    y[r * o + c] += self.mul(x[r * i + k], w[k * o + c]);
                }
            }
        }
        y
    }

    fn conv1d(&mut self, x: &[f64], cin: usize, len: usize, cout: usize, k: usize, stride: usize) -> Vec<f64> {
        let w = self.random(cout * cin * k);
        let out_len = (len - k) / stride + 1;
        let mut y = vec![0.0; cout * out_len];
        for o in 0..cout {
            for t in 0..out_len {
                for c in 0..cin {
                    for j in 0..k {
                        y[o * out_len + t] += self.mul(w[(o * cin + c) * k + j], x[c * len + t * stride + j]);
                    }
                }
            }
        }
        y
    }

    fn conv1d_transposed(&mut self, x: &[f64], cin: usize, len: usize, cout: usize, k: usize, stride: usize) -> Vec<f64> {
        let w = self.random(cin * cout * k);
        let out_len = (len - 1) * stride + k;
        let mut y = vec![0.0; cout * out_len];
        for c in 0..cin {
            for t in 0..len {
                for o in 0..cout {
                    for j in 0..k {
                        y[o * out_len + t * stride + j] += self.mul(x[c * len + t], w[(c * cout + o) * k + j]);
                    }
                }
            }
        }
        y
    }

    fn attention(&mut self, x: &[f64], l: usize, d: usize, heads: usize) -> Vec<f64> {
        let q = self.linear(x, l, d, d);
        let k = self.linear(x, l, d, d);
        let v = self.linear(x, l, d, d);
        let dh = d / heads;
        let mut merged = vec![0.0; l * d];
        for h in 0..heads {
            for a in 0..l {
                let mut scores = vec![0.0; l];
                for b in 0..l {
                    for i in 0..dh {
                        scores[b] += self.mul(q[a * d + h * dh + i], k[b * d + h * dh + i]);
                    }
                }
                // softmax is not counted
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for b in 0..l {
                    let p = (scores[b] - m).exp() / z;
                    for i in 0..dh {
                        merged[a * d + h * dh + i] += self.mul(p, v[b * d + h * dh + i]);
                    }
                }
            }
        }
        self.linear(&merged, l, d, d)
    }
}

#[test]
fn formula_examples() {
    assert_eq!(macs_linear(1, 1, 1), 1);
    assert_eq!(macs_linear(10, 64, 128), 81_920);
    assert_eq!(macs_linear(0, 64, 128), 0);
    assert_eq!(macs_conv1d(1, 1, 1, 1), 1);
    assert_eq!(macs_conv1d(100, 16, 32, 7), 358_400);
    assert_eq!(macs_conv1d_transposed(100, 16, 32, 7), macs_conv1d(100, 16, 32, 7));
    assert_eq!(macs_attention(1, 64, 4), 4 * 64 * 64 + 2 * 64);
    assert_eq!(macs_attention(50, 64, 4), 1_139_200);
    assert_eq!(macs_attention(50, 64, 1), macs_attention(50, 64, 8));
}

#[test]
fn formulas_match_naive_counts() {
    let mut rng = Rng::new(42);
    let mut dim = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    for seed in 0..4 {
        let (n, i, o) = (dim(1, 6), dim(1, 6), dim(1, 6));
        let mut c = Counter::new(seed);
        let x = c.random(n * i);
        c.linear(&x, n, i, o);
        assert_eq!(c.muls, macs_linear(n as u64, i as u64, o as u64));

        let (cin, cout, k, stride) = (dim(1, 4), dim(1, 4), dim(1, 5), dim(1, 3));
        let len = k + dim(0, 10);
        let mut c = Counter::new(seed);
        let x = c.random(cin * len);
        let y = c.conv1d(&x, cin, len, cout, k, stride);
        let out_len = y.len() / cout;
        assert_eq!(c.muls, macs_conv1d(out_len as u64, cin as u64, cout as u64, k as u64));

        let mut c = Counter::new(seed);
        let x = c.random(cin * len);
        c.conv1d_transposed(&x, cin, len, cout, k, stride);
        assert_eq!(c.muls, macs_conv1d_transposed(len as u64, cin as u64, cout as u64, k as u64));

        let heads = dim(1, 3);
        let d = heads * dim(1, 3);
        let l = dim(1, 9);
        let mut c = Counter::new(seed);
        let x = c.random(l * d);
        c.attention(&x, l, d, heads);
        assert_eq!(c.muls, macs_attention(l as u64, d as u64, heads as u64));
    }
}

#[test]
fn miniature_separator_matches_naive_forward() {
    let cfg = SeparatorConfig {
        codec_embedding_dim: 3,
        model_dim: 4,
        num_blocks: 2,
        num_heads: 2,
        ffn_dim: 8,
        num_speakers: 2,
        max_frames: 16,
    };
    let l = 8;
    let mut c = Counter::new(1);
    let x = c.random(l * 3);
    let mut h = c.linear(&x, l, 3, 4);
    for _ in 0..cfg.num_blocks {
        let a = c.attention(&h, l, 4, 2);
        h.iter_mut().zip(a).for_each(|(h, a)| *h += a);
        let f = c.linear(&h, l, 4, 8).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
        let f = c.linear(&f, l, 8, 4);
        h.iter_mut().zip(f).for_each(|(h, f)| *h += f);
    }
    c.linear(&h, l, 4, 6);
    let report = MacReport::from_layers("mini", separator_layers(&cfg, l));
    assert_eq!(report.total_macs, c.muls);
}

#[test]
fn miniature_codec_matches_naive_forward() {
    let cfg = CodecConfig {
        sample_rate: 8000,
        strides: vec![2, 2],
        channels: vec![2, 3],
        embedding_dim: 3,
        num_codebooks: 1,
        codebook_size: 2,
        kernel_size: 3,
    };
    let samples = 16;
    let mut c = Counter::new(2);
    let x = c.random(samples + 2);
    let e1 = c.conv1d(&x, 1, samples + 2, 2, 3, 2);
    let e1p: Vec<f64> = (0..2).flat_map(|ch| {
        let row = &e1[ch * 8..ch * 8 + 8];
        core::iter::once(row[1]).chain(row.iter().copied()).chain(core::iter::once(row[6])).collect::<Vec<_>>()
    }).collect();
    let e2 = c.conv1d(&e1p, 2, 10, 3, 3, 2);
    let d1 = c.conv1d_transposed(&e2, 3, 4, 2, 3, 2);
    // padding crops the full scatter back to exactly twice the input length
    let full = d1.len() / 2;
    let cropped: Vec<f64> = (0..2).flat_map(|ch| d1[ch * full..ch * full + 8].to_vec()).collect();
    let d2 = c.conv1d_transposed(&cropped, 2, 8, 2, 3, 2);
    let before = c.muls;
    let _ = d2;
    // final 2 → 1 projection over 16 output samples
    let xin = c.random(2 * 18);
    c.conv1d(&xin, 2, 18, 1, 3, 1);
    let report = MacReport::from_layers("mini codec", codec_layers(&cfg, samples));
    assert_eq!(report.total_macs, c.muls);
    assert!(before < c.muls);
}

#[test]
fn report_is_additive_and_renders() {
    let (codec, sep) = preset_configs("toy").unwrap();
    let r = MacReport::from_layers("toy", separator_layers(&sep, 250));
    assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
    assert_eq!(r.total_macs, r.by_kind().iter().map(|(_, m)| m).sum::<u64>());
    let text = r.render();
    assert!(text.contains("blocks.3.attn") && text.contains(MAC_CONVENTION));
    assert_eq!(r.to_csv().lines().count(), r.layers.len() + 2);
    let cr = MacReport::from_layers("codec", codec_layers(&codec, 16000));
    assert_eq!(cr.layers.len(), 7);
}

#[test]
fn attention_runs_at_frame_rate() {
    let p = profile(ProfileModel::Separator, "toy", 2.0, 8000).unwrap();
    let attn = p.reports[0].layers.iter().find(|l| l.kind == LayerKind::Attention).unwrap();
    assert_eq!(attn.input_shape, vec![250, 64]);
    assert_eq!(attn.macs, macs_attention(250, 64, 4));
}

#[test]
fn codec_space_reduction() {
    let toy = profile(ProfileModel::Pipeline, "toy", 2.0, 8000).unwrap();
    assert!(toy.comparison.unwrap().total.ratio.unwrap() > 50.0);
    let paper = profile(ProfileModel::Pipeline, "paper", 2.0, 8000).unwrap();
    assert_eq!(paper.reports[0].layers[1].input_shape, vec![100, 256]);
    let ratio = paper.comparison.unwrap().total.ratio.unwrap();
    assert!(ratio > 50.0, "{ratio}");
}

#[test]
fn compare_rules() {
    let (_, sep) = preset_configs("toy").unwrap();
    let a = MacReport::from_layers("a", separator_layers(&sep, 10));
    let t = compare(&a, &a).unwrap();
    assert!(t.rows.iter().chain([&t.total]).all(|r| r.ratio == Some(1.0)));
    let empty = MacReport::from_layers("empty", Vec::new());
    let err = compare(&a, &empty).unwrap_err();
    assert_eq!(alloc::format!("{err}"), "empty baseline");
    assert!(t.render().contains("total"));
}

#[test]
fn reference_row_ratio() {
    // 77.3 GMACs against 1.5 GMACs
    let big = MacReport::from_layers("big", vec![("x".into(), Layer::Linear { positions: 773, in_dim: 1000, out_dim: 100_000 })]);
    let small = MacReport::from_layers("small", vec![("x".into(), Layer::Linear { positions: 15, in_dim: 1000, out_dim: 100_000 })]);
    let r = compare(&small, &big).unwrap().total.ratio.unwrap();
    assert!((r - 51.53).abs() < 0.01, "{r}");
}

#[test]
fn layer_descriptions() {
    assert_eq!(Layer::from_desc("linear", &[10, 64, 128]).unwrap().macs(), 81_920);
    assert!(matches!(Layer::from_desc("lstm", &[1]), Err(Error::UnknownLayer(_))));
    assert!(Layer::from_desc("conv1d", &[1, 2]).is_err());
    assert!("pipeline".parse::<ProfileModel>().is_ok());
    assert!(preset_configs("huge").is_err());
}
