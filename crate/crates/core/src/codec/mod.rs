//! Toy neural audio codec: strided-conv encoder with Snake activations, a
//! residual vector quantizer, and a mirrored transposed-conv decoder.
//!
//! The encoder maps `hop = Π strides` samples to one `embedding_dim` frame.
//! Convolutions reflect-pad their input so a constant signal stays constant
//! through the encoder. The quantizer learns its codebooks by exponential
//! moving averages, never by gradient; gradients cross it straight through.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

// Float math for no_std builds; redundant when std's inherent methods are in scope.
#[allow(unused_imports)]
use num_traits::Float;


use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{si_sdr_graph, Transmit};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::rng::Rng;
use crate::signal::Waveform;
use crate::tensor::{Checkpoint, NamedTensor, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub strides: Vec<usize>,
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
    pub num_codebooks: usize,
    pub codebook_size: usize,
    pub kernel_size: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl CodecConfig {
    /// Hop 64 at 8 kHz (125 frames per second), 64-dim latent, 4 × 256 codes.
    pub fn toy() -> Self {
        Self {
            sample_rate: 8000,
            strides: vec![4, 4, 4],
            channels: vec![16, 32, 64],
            embedding_dim: 64,
            num_codebooks: 4,
            codebook_size: 256,
            kernel_size: 7,
        }
    }

    /// DAC-sized shape (hop 160 → 50 Hz at 8 kHz, 1024-dim latent). Only used
    /// symbolically by the profiler.
    pub fn paper() -> Self {
        Self {
            sample_rate: 8000,
            strides: vec![2, 4, 5, 4],
            channels: vec![128, 256, 512, 1024],
            embedding_dim: 1024,
            num_codebooks: 12,
            codebook_size: 1024,
            kernel_size: 7,
        }
    }

    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.strides.is_empty() || self.strides.len() != self.channels.len() {
            return bad(format!(
                "{} strides for {} channel entries",
                self.strides.len(),
                self.channels.len()
            ));
        }
        if self.strides.contains(&0) || self.channels.contains(&0) {
            return bad("strides and channels must be positive".into());
        }
        if self.channels.last() != Some(&self.embedding_dim) {
            return bad(format!(
                "embedding_dim {} must equal the last channel count {:?}",
                self.embedding_dim,
                self.channels.last()
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.num_codebooks == 0 || self.codebook_size == 0 || self.sample_rate == 0 {
            return bad("codebook count, codebook size and sample rate must be positive".into());
        }
        Ok(())
    }

    /// Frames produced for `samples` input samples (which must be hop-aligned).
    pub fn frames(&self, samples: usize) -> usize {
        samples / self.hop()
    }

    pub fn to_metadata(&self, out: &mut Vec<(String, String)>) {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        out.push(("codec.sample_rate".into(), self.sample_rate.to_string()));
        out.push(("codec.strides".into(), list(&self.strides)));
        out.push(("codec.channels".into(), list(&self.channels)));
        out.push(("codec.embedding_dim".into(), self.embedding_dim.to_string()));
        out.push(("codec.num_codebooks".into(), self.num_codebooks.to_string()));
        out.push(("codec.codebook_size".into(), self.codebook_size.to_string()));
        out.push(("codec.kernel_size".into(), self.kernel_size.to_string()));
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            let v = ckpt.require_meta(k)?;
            v.parse().map_err(|_| Error::Config(format!("`{k}` = `{v}` is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = ckpt.require_meta(k)?;
            v.split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("`{k}` = `{v}` is not a list"))))
                .collect()
        };
        let cfg = Self {
            sample_rate: num("codec.sample_rate")? as u32,
            strides: list("codec.strides")?,
            channels: list("codec.channels")?,
            embedding_dim: num("codec.embedding_dim")?,
            num_codebooks: num("codec.num_codebooks")?,
            codebook_size: num("codec.codebook_size")?,
            kernel_size: num("codec.kernel_size")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `(padding, output_padding)` making a transposed conv upsample exactly by `stride`.
    pub fn upsample_padding(&self, stride: usize) -> (usize, usize) {
        let k = self.kernel_size;
        let p = if k > stride { (k - stride).div_ceil(2) } else { 0 };
        (p, stride + 2 * p - k)
    }
}

/// Codec latent, `frames × dim`, row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn new(frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if frames * dim != values.len() || frames == 0 {
            return Err(Error::Shape {
                op: "embedding",
                detail: format!("{frames} x {dim} from {} values", values.len()),
            });
        }
        Ok(Self { frames, dim, values })
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn squared_distance(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum()
    }
}

/// Transmitted representation: `frames × num_codebooks` code indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    pub frames: usize,
    pub num_codebooks: usize,
    pub indices: Vec<u32>,
}

impl CodeSequence {
    pub fn get(&self, frame: usize, stage: usize) -> u32 {
        self.indices[frame * self.num_codebooks + stage]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: CodeSequence,
    pub quantized: Embedding,
    /// `mean ‖e − quantized‖²` over every latent value.
    pub commitment_loss: f32,
}

/// Codebooks with their moving-average statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Rvq {
    pub codebooks: Vec<Vec<f32>>,
    pub cluster_size: Vec<Vec<f32>>,
    pub embed_sum: Vec<Vec<f32>>,
    pub idle_steps: Vec<Vec<u32>>,
}

/// Per-stage trace of one residual quantization pass.
struct RvqTrace {
    codes: Vec<u32>,
    quantized: Vec<f32>,
    /// `residuals[q]` is the input to stage `q`.
    residuals: Vec<Vec<f32>>,
}

fn nearest(row: &[f32], book: &[f32], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (k, code) in book.chunks(dim).enumerate() {
        let d: f32 = row.iter().zip(code).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

impl Rvq {
    fn run(&self, values: &[f32], frames: usize, dim: usize, stages: usize) -> RvqTrace {
        let q_all = self.codebooks.len();
        let mut residual = values.to_vec();
        let mut quantized = vec![0.0f32; values.len()];
        let mut codes = vec![0u32; frames * q_all];
        let mut residuals = Vec::with_capacity(stages);
        for q in 0..stages {
            residuals.push(residual.clone());
            let book = &self.codebooks[q];
            for f in 0..frames {
                let row = &mut residual[f * dim..(f + 1) * dim];
                let k = nearest(row, book, dim);
                codes[f * q_all + q] = k as u32;
                let code = &book[k * dim..(k + 1) * dim];
                for (i, c) in code.iter().enumerate() {
                    row[i] -= c;
                    quantized[f * dim + i] += c;
                }
            }
        }
        RvqTrace {
            codes,
            quantized,
            residuals,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub config: CodecConfig,
    pub params: ParamSet,
    pub rvq: Option<Rvq>,
}

/// Reflect-extends `samples` at the end to the next multiple of `hop`.
pub fn pad_to_hop(samples: &[f32], hop: usize) -> Vec<f32> {
    let len = samples.len();
    let target = len.div_ceil(hop).max(1) * hop;
    let mut out = samples.to_vec();
    if len == 0 {
        out.resize(target, 0.0);
        return out;
    }
    if len == 1 {
        out.resize(target, samples[0]);
        return out;
    }
    let period = 2 * (len - 1);
    for i in len..target {
        let m = i % period;
        let src = if m < len { m } else { period - m };
        out.push(samples[src]);
    }
    out
}

impl Codec {
    /// Fresh codec with random conv weights, zero biases and no codebooks yet.
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::from_key(&[seed, 0xc0dec]);
        let k = config.kernel_size;
        let mut params = ParamSet::new();
        let mut c_prev = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            let bound = (3.0 / (c_prev * k) as f64).sqrt();
            params.push(format!("enc.{i}.weight"), Tensor::uniform(vec![c, c_prev, k], bound, &mut rng));
            params.push(format!("enc.{i}.bias"), Tensor::zeros(vec![c]));
            c_prev = c;
        }
        let n = config.channels.len();
        for j in 0..n {
            let c_in = config.channels[n - 1 - j];
            let c_out = if j + 1 < n { config.channels[n - 2 - j] } else { config.channels[0] };
            let stride = config.strides[n - 1 - j];
            let bound = (3.0 * stride as f64 / (c_in * k) as f64).sqrt();
            params.push(format!("dec.{j}.weight"), Tensor::uniform(vec![c_in, c_out, k], bound, &mut rng));
            params.push(format!("dec.{j}.bias"), Tensor::zeros(vec![c_out]));
        }
        let c0 = config.channels[0];
        let bound = (3.0 / (c0 * k) as f64).sqrt();
        params.push("dec.out.weight", Tensor::uniform(vec![1, c0, k], bound, &mut rng));
        params.push("dec.out.bias", Tensor::zeros(vec![1]));
        Ok(Self {
            config,
            params,
            rvq: None,
        })
    }

    pub fn hop(&self) -> usize {
        self.config.hop()
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn encoder_layers(&self) -> Vec<ConvLayer> {
        (0..self.config.channels.len())
            .map(|i| ConvLayer {
                weight: 2 * i,
                bias: 2 * i + 1,
                stride: self.config.strides[i],
            })
            .collect()
    }

    fn decoder_layers(&self) -> Vec<ConvLayer> {
        let n = self.config.channels.len();
        (0..n)
            .map(|j| ConvLayer {
                weight: 2 * n + 2 * j,
                bias: 2 * n + 2 * j + 1,
                stride: self.config.strides[n - 1 - j],
            })
            .collect()
    }

    /// Puts every parameter on the tape, in [`ParamSet`] order.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(&p.tensor) } else { g.constant(&p.tensor) })
            .collect()
    }

    fn check_hop(&self, len: usize) -> Result<()> {
        if len == 0 || !len.is_multiple_of(self.hop()) {
            return Err(Error::NotHopAligned { len, hop: self.hop() });
        }
        Ok(())
    }

    /// Encoder on the tape: `[1, len]` waveform to a `[frames, dim]` latent.
    pub fn encode_graph<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], wave: Var) -> Result<Var> {
        let pad = (self.config.kernel_size - 1) / 2;
        let mut x = wave;
        for layer in self.encoder_layers() {
            let padded = g.pad_reflect(x, pad, pad)?;
            let y = g.conv1d(padded, bound[layer.weight], Some(bound[layer.bias]), layer.stride, 0)?;
            x = g.snake(y)?;
        }
        g.transpose(x)
    }

    /// Decoder on the tape: `[frames, dim]` latent to a rank-1 waveform of `frames · hop` samples.
    pub fn decode_graph<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], latent: Var) -> Result<Var> {
        let mut x = g.transpose(latent)?;
        for layer in self.decoder_layers() {
            let (p, op) = self.config.upsample_padding(layer.stride);
            let y = g.conv1d_transposed(x, bound[layer.weight], Some(bound[layer.bias]), layer.stride, p, op)?;
            x = g.snake(y)?;
        }
        let n = self.params.len();
        let pad = (self.config.kernel_size - 1) / 2;
        let padded = g.pad_reflect(x, pad, pad)?;
        let y = g.conv1d(padded, bound[n - 2], Some(bound[n - 1]), 1, 0)?;
        let len = g.shape(y)[1];
        g.reshape(y, vec![len])
    }

    pub fn encode(&self, w: &Waveform) -> Result<Embedding> {
        self.check_hop(w.len())?;
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.constant_from(vec![1, w.len()], &w.samples)?;
        let e = self.encode_graph(&mut g, &bound, x)?;
        let shape = g.shape(e);
        Embedding::new(shape[0], shape[1], g.value(e).to_vec())
    }

    pub fn decode(&self, e: &Embedding) -> Result<Waveform> {
        if e.dim != self.config.embedding_dim {
            return Err(Error::Shape {
                op: "decode",
                detail: format!("latent dim {} for a {}-dim codec", e.dim, self.config.embedding_dim),
            });
        }
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.constant_from(vec![e.frames, e.dim], &e.values)?;
        let y = self.decode_graph(&mut g, &bound, x)?;
        Waveform::new(g.value(y).to_vec(), self.config.sample_rate)
    }

    fn rvq(&self) -> Result<&Rvq> {
        self.rvq.as_ref().ok_or(Error::UninitializedCodebooks)
    }

    /// Residual quantization through every stage.
    pub fn quantize(&self, e: &Embedding) -> Result<Quantized> {
        self.quantize_stages(e, self.config.num_codebooks)
    }

    /// Residual quantization through the first `stages` codebooks only.
    pub fn quantize_stages(&self, e: &Embedding, stages: usize) -> Result<Quantized> {
        let rvq = self.rvq()?;
        if e.dim != self.config.embedding_dim || stages == 0 || stages > rvq.codebooks.len() {
            return Err(Error::Shape {
                op: "quantize",
                detail: format!("{} stages of a {}-dim latent", stages, e.dim),
            });
        }
        let trace = rvq.run(&e.values, e.frames, e.dim, stages);
        let commitment = e
            .values
            .iter()
            .zip(&trace.quantized)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / e.values.len() as f64;
        Ok(Quantized {
            codes: CodeSequence {
                frames: e.frames,
                num_codebooks: rvq.codebooks.len(),
                indices: trace.codes,
            },
            quantized: Embedding::new(e.frames, e.dim, trace.quantized)?,
            commitment_loss: commitment as f32,
        })
    }

    /// Per-stage inputs of the residual chain for `e`; entry `q` is the residual fed to stage `q`.
    pub fn stage_residuals(&self, e: &Embedding) -> Result<Vec<Vec<f32>>> {
        let rvq = self.rvq()?;
        Ok(rvq.run(&e.values, e.frames, e.dim, rvq.codebooks.len()).residuals)
    }

    /// Receiver side: rebuilds the quantized latent from transmitted codes.
    pub fn dequantize(&self, codes: &CodeSequence) -> Result<Embedding> {
        let rvq = self.rvq()?;
        let dim = self.config.embedding_dim;
        let mut values = vec![0.0f32; codes.frames * dim];
        for f in 0..codes.frames {
            for q in 0..codes.num_codebooks {
                let k = codes.get(f, q) as usize;
                let code = &rvq.codebooks[q][k * dim..(k + 1) * dim];
                for (v, c) in values[f * dim..(f + 1) * dim].iter_mut().zip(code) {
                    *v += c;
                }
            }
        }
        Embedding::new(codes.frames, dim, values)
    }

    /// Seeds every codebook from latent rows (sampled stage by stage along the residual chain).
    pub fn init_codebooks(&mut self, rows: &[f32], rng: &mut Rng) -> Result<()> {
        let dim = self.config.embedding_dim;
        let frames = rows.len() / dim;
        if frames == 0 || !rows.len().is_multiple_of(dim) {
            return Err(Error::EmptyDataset);
        }
        let (q_n, k_n) = (self.config.num_codebooks, self.config.codebook_size);
        let mut residual = rows.to_vec();
        let mut rvq = Rvq {
            codebooks: Vec::with_capacity(q_n),
            cluster_size: vec![vec![1.0; k_n]; q_n],
            embed_sum: Vec::with_capacity(q_n),
            idle_steps: vec![vec![0; k_n]; q_n],
        };
        for _ in 0..q_n {
            let mut book = Vec::with_capacity(k_n * dim);
            for _ in 0..k_n {
                let f = rng.below(frames);
                book.extend_from_slice(&residual[f * dim..(f + 1) * dim]);
            }
            for f in 0..frames {
                let row = &mut residual[f * dim..(f + 1) * dim];
                let k = nearest(row, &book, dim);
                for (r, c) in row.iter_mut().zip(&book[k * dim..(k + 1) * dim]) {
                    *r -= c;
                }
            }
            rvq.embed_sum.push(book.clone());
            rvq.codebooks.push(book);
        }
        self.rvq = Some(rvq);
        Ok(())
    }

    /// One moving-average codebook update from a batch of latent rows.
    /// Codes idle for `dead_after` consecutive updates are re-seeded from
    /// random residuals of the batch.
    pub fn ema_update(&mut self, rows: &[f32], decay: f32, dead_after: u32, rng: &mut Rng) -> Result<()> {
        let dim = self.config.embedding_dim;
        let frames = rows.len() / dim;
        let k_n = self.config.codebook_size;
        let rvq = self.rvq.as_mut().ok_or(Error::UninitializedCodebooks)?;
        let trace = rvq.run(rows, frames, dim, rvq.codebooks.len());
        let q_all = rvq.codebooks.len();
        const EPS: f32 = 1e-5;
        for q in 0..q_all {
            let mut counts = vec![0.0f32; k_n];
            let mut sums = vec![0.0f32; k_n * dim];
            let residual = &trace.residuals[q];
            for f in 0..frames {
                let k = trace.codes[f * q_all + q] as usize;
                counts[k] += 1.0;
                for i in 0..dim {
                    sums[k * dim + i] += residual[f * dim + i];
                }
            }
            let (cs, es, book) = (&mut rvq.cluster_size[q], &mut rvq.embed_sum[q], &mut rvq.codebooks[q]);
            for k in 0..k_n {
                cs[k] = decay * cs[k] + (1.0 - decay) * counts[k];
                for i in 0..dim {
                    es[k * dim + i] = decay * es[k * dim + i] + (1.0 - decay) * sums[k * dim + i];
                }
            }
            let total: f32 = cs.iter().sum();
            for k in 0..k_n {
                let smoothed = (cs[k] + EPS) / (total + k_n as f32 * EPS) * total;
                for i in 0..dim {
                    book[k * dim + i] = es[k * dim + i] / smoothed;
                }
            }
            for k in 0..k_n {
                if counts[k] > 0.0 {
                    rvq.idle_steps[q][k] = 0;
                    continue;
                }
                rvq.idle_steps[q][k] += 1;
                if rvq.idle_steps[q][k] >= dead_after && frames > 0 {
                    let f = rng.below(frames);
                    let src = &residual[f * dim..(f + 1) * dim];
                    book[k * dim..(k + 1) * dim].copy_from_slice(src);
                    es[k * dim..(k + 1) * dim].copy_from_slice(src);
                    cs[k] = 1.0;
                    rvq.idle_steps[q][k] = 0;
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint { tensors: self.params.export("codec."), metadata: Vec::new() };
        if let Some(rvq) = &self.rvq {
            let (k_n, dim) = (self.config.codebook_size, self.config.embedding_dim);
            for q in 0..rvq.codebooks.len() {
                ckpt.tensors.push(NamedTensor {
                    name: format!("codec.rvq.{q}.codebook"),
                    tensor: Tensor { shape: vec![k_n, dim], data: rvq.codebooks[q].clone() },
                });
                ckpt.tensors.push(NamedTensor {
                    name: format!("codec.rvq.{q}.cluster_size"),
                    tensor: Tensor { shape: vec![k_n], data: rvq.cluster_size[q].clone() },
                });
                ckpt.tensors.push(NamedTensor {
                    name: format!("codec.rvq.{q}.embed_sum"),
                    tensor: Tensor { shape: vec![k_n, dim], data: rvq.embed_sum[q].clone() },
                });
            }
        }
        ckpt.set_meta("kind", "codec");
        self.config.to_metadata(&mut ckpt.metadata);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = CodecConfig::from_checkpoint(ckpt)?;
        let mut codec = Codec::new(config, 0)?;
        codec.params.load_from(&ckpt.tensors, "codec.")?;
        if ckpt.tensor("codec.rvq.0.codebook").is_some() {
            let (q_n, k_n, dim) = (
                codec.config.num_codebooks,
                codec.config.codebook_size,
                codec.config.embedding_dim,
            );
            let fetch = |name: String, shape: Vec<usize>| -> Result<Vec<f32>> {
                let t = ckpt.tensor(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
                if t.shape != shape {
                    return Err(Error::TensorShape { name, got: t.shape.clone(), expected: shape });
                }
                Ok(t.data.clone())
            };
            let mut rvq = Rvq {
                codebooks: Vec::new(),
                cluster_size: Vec::new(),
                embed_sum: Vec::new(),
                idle_steps: vec![vec![0; k_n]; q_n],
            };
            for q in 0..q_n {
                rvq.codebooks.push(fetch(format!("codec.rvq.{q}.codebook"), vec![k_n, dim])?);
                rvq.cluster_size.push(fetch(format!("codec.rvq.{q}.cluster_size"), vec![k_n])?);
                rvq.embed_sum.push(fetch(format!("codec.rvq.{q}.embed_sum"), vec![k_n, dim])?);
            }
            codec.rvq = Some(rvq);
        }
        Ok(codec)
    }
}

impl Transmit for Codec {
    /// `decode(quantize(encode(w)))`, or `decode(encode(w))` without the quantizer.
    /// The input is reflect-padded to a hop multiple and the output cut back.
    fn transmit(&self, w: &Waveform, use_rvq: bool) -> Result<Waveform> {
        let padded = Waveform::new(pad_to_hop(&w.samples, self.hop()), w.sample_rate)?;
        let e = self.encode(&padded)?;
        let latent = if use_rvq { self.quantize(&e)?.quantized } else { e };
        Ok(self.decode(&latent)?.truncated(w.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training crop length in samples; rounded down to a hop multiple.
    pub segment_samples: usize,
    pub commit_weight: f64,
    pub ema_decay: f32,
    pub dead_code_steps: u32,
    /// Skip moving-average codebook updates.
    pub freeze_codebooks: bool,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 2e-3,
            batch_size: 8,
            segment_samples: 2048,
            commit_weight: 0.25,
            ema_decay: 0.99,
            dead_code_steps: 100,
            freeze_codebooks: false,
            seed: 0,
        }
    }
}

pub const CODEC_TRAIN_CONFIG_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "batch_size",
    "segment_samples",
    "commit_weight",
    "ema_decay",
    "dead_code_steps",
    "freeze_codebooks",
    "seed",
];

impl CodecTrainConfig {
    /// Sets one field from its textual form; `key` is the field name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "segment_samples" => self.segment_samples = parse(key, value)?,
            "commit_weight" => self.commit_weight = parse(key, value)?,
            "ema_decay" => self.ema_decay = parse(key, value)?,
            "dead_code_steps" => self.dead_code_steps = parse(key, value)?,
            "freeze_codebooks" => self.freeze_codebooks = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown codec training key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("lr".into(), format!("{}", self.lr)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("segment_samples".into(), self.segment_samples.to_string()),
            ("commit_weight".into(), format!("{}", self.commit_weight)),
            ("ema_decay".into(), format!("{}", self.ema_decay)),
            ("dead_code_steps".into(), self.dead_code_steps.to_string()),
            ("freeze_codebooks".into(), self.freeze_codebooks.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodecTrainLog {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Loss of one batch and the gradient of every codec parameter.
pub struct CodecStep {
    pub loss: f64,
    pub grads: Vec<Vec<f32>>,
    /// Encoder outputs of the batch, frame rows concatenated.
    pub latent_rows: Vec<f32>,
}

impl Codec {
    /// Forward and backward of `−si_sdr(decode(st(quantize(e))), x) + λ·commit` averaged over `crops`.
    pub fn train_step(&self, crops: &[Vec<f32>], commit_weight: f64) -> Result<CodecStep> {
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, true)?;
        let mut terms = Vec::with_capacity(crops.len());
        let mut latent_rows = Vec::new();
        for crop in crops {
            self.check_hop(crop.len())?;
            let x = g.constant_from(vec![1, crop.len()], crop)?;
            let e = self.encode_graph(&mut g, &bound, x)?;
            let frames = g.shape(e)[0];
            let rows = g.value(e).to_vec();
            let emb = Embedding::new(frames, self.config.embedding_dim, rows.clone())?;
            let q = self.quantize(&emb)?;
            latent_rows.extend_from_slice(&rows);
            let qv = g.constant_from(vec![frames, self.config.embedding_dim], &q.quantized.values)?;
            let st = g.passthrough_grad(e, qv)?;
            let recon = self.decode_graph(&mut g, &bound, st)?;
            let target = g.constant_from(vec![crop.len()], crop)?;
            let si = si_sdr_graph(&mut g, recon, target, 1e-8)?;
            let mut term = g.scale(si, -1.0)?;
            if commit_weight != 0.0 {
                let diff = g.sub(e, qv)?;
                let sq = g.square(diff)?;
                let commit = g.mean(sq)?;
                let commit = g.scale(commit, commit_weight as f32)?;
                term = g.add(term, commit)?;
            }
            terms.push(term);
        }
        let all = g.concat(&terms, 0)?;
        let loss = g.mean(all)?;
        g.backward(loss)?;
        let grads = bound
            .iter()
            .map(|&v| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
            .collect();
        Ok(CodecStep {
            loss: g.scalar(loss) as f64,
            grads,
            latent_rows,
        })
    }
}

fn random_crop(w: &[f32], len: usize, rng: &mut Rng) -> Vec<f32> {
    if w.len() <= len {
        let mut out = w.to_vec();
        out.extend(core::iter::repeat_n(0.0, len - w.len()));
        return out;
    }
    let start = rng.below(w.len() - len + 1);
    w[start..start + len].to_vec()
}

/// Trains encoder/decoder by Adam and the codebooks by moving averages on random crops of `data`.
pub fn train_codec(
    codec: &mut Codec,
    data: &[Waveform],
    cfg: &CodecTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<CodecTrainLog> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.lr > 0.0) || cfg.epochs == 0 || cfg.batch_size == 0 || cfg.segment_samples == 0 {
        return Err(Error::Config("lr, epochs, batch_size and segment_samples must be positive".into()));
    }
    let hop = codec.hop();
    let seg = (cfg.segment_samples / hop).max(1) * hop;
    let batch = cfg.batch_size;
    let mut adam = Adam::new(&codec.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut log = CodecTrainLog::default();
    let mut ema_rng = Rng::from_key(&[cfg.seed, 0xe3a]);
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::from_key(&[cfg.seed, epoch as u64, 0xc7]);
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch) {
            let crops: Vec<Vec<f32>> = chunk.iter().map(|&i| random_crop(&data[i].samples, seg, &mut rng)).collect();
            if codec.rvq.is_none() {
                let mut g = Graph::<f32>::new();
                let bound = codec.bind(&mut g, false)?;
                let mut rows = Vec::new();
                for c in &crops {
                    let x = g.constant_from(vec![1, c.len()], c)?;
                    let e = codec.encode_graph(&mut g, &bound, x)?;
                    rows.extend_from_slice(g.value(e));
                }
                codec.init_codebooks(&rows, &mut ema_rng)?;
            }
            let step = codec.train_step(&crops, cfg.commit_weight)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged(format!("codec loss {} at epoch {epoch}", step.loss)));
            }
            adam.step(&mut codec.params, &step.grads);
            if !cfg.freeze_codebooks {
                codec.ema_update(&step.latent_rows, cfg.ema_decay, cfg.dead_code_steps, &mut ema_rng)?;
            }
            log.step_losses.push(step.loss);
            total += step.loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        log.epoch_losses.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok(log)
}
