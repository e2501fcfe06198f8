//! Separator: a plain transformer stack from a mixture's codec latent to
//! one latent per speaker, finished with Snake so its outputs live where the
//! codec's own encoder outputs live.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

// Float math for no_std builds; redundant when std's inherent methods are in scope.
#[allow(unused_imports)]
use num_traits::Float;


use crate::autodiff::{Graph, Var};
use crate::codec::{pad_to_hop, Codec, Embedding};
use crate::error::{Error, Result};
use crate::nn::{linear, multi_head_attention, AttentionWeights};
use crate::real::Real;
use crate::rng::Rng;
use crate::signal::Waveform;
use crate::tensor::{Checkpoint, ParamSet, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparatorConfig {
    pub codec_embedding_dim: usize,
    pub model_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_speakers: usize,
    pub max_frames: usize,
}

impl SeparatorConfig {
    pub fn toy(codec_embedding_dim: usize) -> Self {
        Self {
            codec_embedding_dim,
            model_dim: 64,
            num_blocks: 4,
            num_heads: 4,
            ffn_dim: 256,
            num_speakers: 2,
            max_frames: 4096,
        }
    }

    /// Model width 256 and 16 blocks.
    pub fn paper(codec_embedding_dim: usize) -> Self {
        Self {
            codec_embedding_dim,
            model_dim: 256,
            num_blocks: 16,
            num_heads: 4,
            ffn_dim: 1024,
            num_speakers: 2,
            max_frames: 4096,
        }
    }

    pub fn preset(name: &str, codec_embedding_dim: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(codec_embedding_dim)),
            "paper" => Ok(Self::paper(codec_embedding_dim)),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected toy or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.codec_embedding_dim,
            self.model_dim,
            self.num_blocks,
            self.num_heads,
            self.ffn_dim,
            self.max_frames,
        ];
        if fields.contains(&0) {
            return Err(Error::Config("separator dimensions must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.num_speakers < 2 {
            return Err(Error::Config(format!("num_speakers {} < 2", self.num_speakers)));
        }
        Ok(())
    }

    pub fn to_metadata(&self, out: &mut Vec<(String, String)>) {
        for (k, v) in [
            ("sep.codec_embedding_dim", self.codec_embedding_dim),
            ("sep.model_dim", self.model_dim),
            ("sep.num_blocks", self.num_blocks),
            ("sep.num_heads", self.num_heads),
            ("sep.ffn_dim", self.ffn_dim),
            ("sep.num_speakers", self.num_speakers),
            ("sep.max_frames", self.max_frames),
        ] {
            out.push((k.into(), v.to_string()));
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            let v = ckpt.require_meta(k)?;
            v.parse().map_err(|_| Error::Config(format!("`{k}` = `{v}` is not an integer")))
        };
        let cfg = Self {
            codec_embedding_dim: num("sep.codec_embedding_dim")?,
            model_dim: num("sep.model_dim")?,
            num_blocks: num("sep.num_blocks")?,
            num_heads: num("sep.num_heads")?,
            ffn_dim: num("sep.ffn_dim")?,
            num_speakers: num("sep.num_speakers")?,
            max_frames: num("sep.max_frames")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sinusoidal table: `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(…)`.
pub fn positional_encoding(frames: usize, dim: usize) -> Vec<f32> {
    let mut pe = vec![0.0f32; frames * dim];
    for t in 0..frames {
        for i in (0..dim).step_by(2) {
            let angle = t as f64 / 10000f64.powf(i as f64 / dim as f64);
            pe[t * dim + i] = angle.sin() as f32;
            if i + 1 < dim {
                pe[t * dim + i + 1] = angle.cos() as f32;
            }
        }
    }
    pe
}

#[derive(Debug, Clone, Copy)]
struct BlockParams {
    ln1: (usize, usize),
    attn: [usize; 8],
    ln2: (usize, usize),
    ffn: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub config: SeparatorConfig,
    pub params: ParamSet,
}

impl Separator {
    pub fn new(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::from_key(&[seed, 0x5e9]);
        let (e, d, f) = (config.codec_embedding_dim, config.model_dim, config.ffn_dim);
        let mut params = ParamSet::new();
        let dense = |params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(format!("{name}.weight"), Tensor::uniform(vec![fan_in, fan_out], bound, rng));
            params.push(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        };
        let norm = |params: &mut ParamSet, name: &str| {
            params.push(format!("{name}.gamma"), Tensor::filled(vec![d], 1.0));
            params.push(format!("{name}.beta"), Tensor::zeros(vec![d]));
        };
        dense(&mut params, "input", e, d, &mut rng);
        for b in 0..config.num_blocks {
            norm(&mut params, &format!("blocks.{b}.norm1"));
            for proj in ["query", "key", "value", "output"] {
                dense(&mut params, &format!("blocks.{b}.attn.{proj}"), d, d, &mut rng);
            }
            norm(&mut params, &format!("blocks.{b}.norm2"));
            dense(&mut params, &format!("blocks.{b}.ffn.0"), d, f, &mut rng);
            dense(&mut params, &format!("blocks.{b}.ffn.1"), f, d, &mut rng);
        }
        norm(&mut params, "final_norm");
        dense(&mut params, "output", d, config.num_speakers * e, &mut rng);
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn block(&self, b: usize) -> BlockParams {
        let base = 2 + b * 16;
        BlockParams {
            ln1: (base, base + 1),
            attn: core::array::from_fn(|i| base + 2 + i),
            ln2: (base + 10, base + 11),
            ffn: core::array::from_fn(|i| base + 12 + i),
        }
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(&p.tensor) } else { g.constant(&p.tensor) })
            .collect()
    }

    fn check_input(&self, frames: usize, dim: usize) -> Result<()> {
        if dim != self.config.codec_embedding_dim {
            return Err(Error::Shape {
                op: "separate",
                detail: format!("latent dim {dim}, separator expects {}", self.config.codec_embedding_dim),
            });
        }
        if frames > self.config.max_frames {
            return Err(Error::TooManyFrames {
                frames,
                max: self.config.max_frames,
            });
        }
        Ok(())
    }

    /// Forward on the tape for `x: [frames, E]`; one `[frames, E]` output per speaker.
    pub fn forward_graph<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var) -> Result<Vec<Var>> {
        let frames = g.shape(x)[0];
        self.check_input(frames, g.shape(x)[1])?;
        let pe = positional_encoding(frames, self.config.model_dim);
        self.forward_graph_with_pe(g, bound, x, &pe)
    }

    /// As [`forward_graph`](Self::forward_graph) with an explicit `[frames, d]` positional table.
    pub fn forward_graph_with_pe<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &[Var],
        x: Var,
        pe: &[f32],
    ) -> Result<Vec<Var>> {
        let frames = g.shape(x)[0];
        self.check_input(frames, g.shape(x)[1])?;
        let (e, d) = (self.config.codec_embedding_dim, self.config.model_dim);
        let h = linear(g, x, bound[0], bound[1])?;
        let pe = g.constant_from(vec![frames, d], pe)?;
        let mut h = g.add(h, pe)?;
        for b in 0..self.config.num_blocks {
            let p = self.block(b);
            let a = g.layer_norm(h, bound[p.ln1.0], bound[p.ln1.1], LN_EPS)?;
            let w = AttentionWeights {
                wq: bound[p.attn[0]],
                bq: bound[p.attn[1]],
                wk: bound[p.attn[2]],
                bk: bound[p.attn[3]],
                wv: bound[p.attn[4]],
                bv: bound[p.attn[5]],
                wo: bound[p.attn[6]],
                bo: bound[p.attn[7]],
            };
            let a = multi_head_attention(g, a, &w, self.config.num_heads)?;
            h = g.add(h, a)?;
            let f = g.layer_norm(h, bound[p.ln2.0], bound[p.ln2.1], LN_EPS)?;
            let f = linear(g, f, bound[p.ffn[0]], bound[p.ffn[1]])?;
            let f = g.relu(f)?;
            let f = linear(g, f, bound[p.ffn[2]], bound[p.ffn[3]])?;
            h = g.add(h, f)?;
        }
        let n = bound.len();
        let h = g.layer_norm(h, bound[n - 4], bound[n - 3], LN_EPS)?;
        let y = linear(g, h, bound[n - 2], bound[n - 1])?;
        (0..self.config.num_speakers)
            .map(|s| {
                let part = g.slice(y, 1, s * e, e)?;
                g.snake(part)
            })
            .collect()
    }

    pub fn separate(&self, mixture: &Embedding) -> Result<Vec<Embedding>> {
        self.check_input(mixture.frames, mixture.dim)?;
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, false)?;
        let x = g.constant_from(vec![mixture.frames, mixture.dim], &mixture.values)?;
        let outs = self.forward_graph(&mut g, &bound, x)?;
        outs.into_iter()
            .map(|o| Embedding::new(mixture.frames, mixture.dim, g.value(o).to_vec()))
            .collect()
    }

    /// Encode, optionally quantize, separate, and decode each speaker. Outputs
    /// have the hop-padded mixture length.
    pub fn separate_waveforms(&self, codec: &Codec, mixture: &Waveform, use_rvq_in: bool) -> Result<Vec<Waveform>> {
        let padded = Waveform::new(pad_to_hop(&mixture.samples, codec.hop()), mixture.sample_rate)?;
        let mut e = codec.encode(&padded)?;
        if use_rvq_in {
            e = codec.quantize(&e)?.quantized;
        }
        self.separate(&e)?.iter().map(|s| codec.decode(s)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint { tensors: self.params.export("sep."), metadata: Vec::new() };
        ckpt.set_meta("kind", "separator");
        self.config.to_metadata(&mut ckpt.metadata);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = SeparatorConfig::from_checkpoint(ckpt)?;
        let mut sep = Separator::new(config, 0)?;
        sep.params.load_from(&ckpt.tensors, "sep.")?;
        Ok(sep)
    }
}
