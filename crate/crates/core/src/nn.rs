//! Layer recipes shared by the models, the gradient checks and the profiler oracle.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::real::Real;

/// `x · w + b` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Global multi-head self-attention over a `[frames, dim]` sequence.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Var> {
    let dim = g.shape(x)[1];
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(shape_err(
            "attention",
            alloc::format!("model dim {dim} is not divisible by {heads} heads"),
        ));
    }
    let head_dim = dim / heads;
    let q = linear(g, x, w.wq, w.bq)?;
    let k = linear(g, x, w.wk, w.bk)?;
    let v = linear(g, x, w.wv, w.bv)?;
    let scale = T::one() / T::lit(head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * head_dim, head_dim)?;
        let kh = g.slice(k, 1, h * head_dim, head_dim)?;
        let vh = g.slice(v, 1, h * head_dim, head_dim)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let probs = g.softmax(scores, 1)?;
        outs.push(g.matmul(probs, vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, merged, w.wo, w.bo)
}
