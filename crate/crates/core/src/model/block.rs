use rand::Rng;

use super::AdaptTarget;
use crate::error::Result;
use crate::tensor::{Bound, Element, ParamStore, Tape, Tensor, Var};

/// Tape handles of one pre-norm decoder block.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BlockParams {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        let g = |s: &str| bound.get(&format!("{prefix}.{s}"));
        Ok(BlockParams {
            ln1_g: g("ln1.g")?,
            ln1_b: g("ln1.b")?,
            wq: g("attn.wq")?,
            bq: g("attn.bq")?,
            wk: g("attn.wk")?,
            bk: g("attn.bk")?,
            wv: g("attn.wv")?,
            bv: g("attn.bv")?,
            wo: g("attn.wo")?,
            bo: g("attn.bo")?,
            ln2_g: g("ln2.g")?,
            ln2_b: g("ln2.b")?,
            w1: g("ff.w1")?,
            b1: g("ff.b1")?,
            w2: g("ff.w2")?,
            b2: g("ff.b2")?,
        })
    }
}

/// Adds one block's parameters under `prefix`.
pub fn init_block<R: Rng + ?Sized>(
    params: &mut ParamStore,
    prefix: &str,
    d: usize,
    d_ff: usize,
    std: f32,
    rng: &mut R,
) -> Result<()> {
    let mut put = |name: &str, t: Tensor| params.insert(format!("{prefix}.{name}"), t);
    put("ln1.g", Tensor::filled(&[d], 1.0))?;
    put("ln1.b", Tensor::zeros(&[d]))?;
    for w in ["q", "k", "v", "o"] {
        put(&format!("attn.w{w}"), Tensor::randn(&[d, d], std, rng))?;
        put(&format!("attn.b{w}"), Tensor::zeros(&[d]))?;
    }
    put("ln2.g", Tensor::filled(&[d], 1.0))?;
    put("ln2.b", Tensor::zeros(&[d]))?;
    put("ff.w1", Tensor::randn(&[d, d_ff], std, rng))?;
    put("ff.b1", Tensor::zeros(&[d_ff]))?;
    put("ff.w2", Tensor::randn(&[d_ff, d], std, rng))?;
    put("ff.b2", Tensor::zeros(&[d]))?;
    Ok(())
}

/// Rewrites the product `x·W` of an adapted projection given `x`.
pub type ActivationHook<'a, T> = &'a mut dyn FnMut(&mut Tape<T>, AdaptTarget, Var, Var) -> Result<Var>;

/// `x + Attn(LN(x))`, then `h + FF(LN(h))`, with causal multi-head attention
/// and a GELU feed-forward.
pub fn decoder_block<T: Element>(tape: &mut Tape<T>, x: Var, p: &BlockParams, n_heads: usize) -> Result<Var> {
    adapted_block(tape, x, p, n_heads, None)
}

/// [`decoder_block`] where `adapt` may rewrite the query, value and
/// feed-forward products `x·W` given their input `x`.
pub fn adapted_block<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    p: &BlockParams,
    n_heads: usize,
    mut adapt: Option<ActivationHook<'_, T>>,
) -> Result<Var> {
    let mut project = |tape: &mut Tape<T>, t: AdaptTarget, x: Var, w: Var| -> Result<Var> {
        let y = tape.matmul(x, w)?;
        match adapt.as_mut() {
            Some(f) => f(tape, t, x, y),
            None => Ok(y),
        }
    };
    let d = tape.shape(x)[1];
    let head = d / n_heads;
    let scale = 1.0 / (head as f64).sqrt();

    let a = tape.layer_norm(x, p.ln1_g, p.ln1_b)?;
    let q = project(tape, AdaptTarget::Query, a, p.wq)?;
    let q = tape.add_row(q, p.bq)?;
    let k = tape.matmul(a, p.wk)?;
    let k = tape.add_row(k, p.bk)?;
    let v = project(tape, AdaptTarget::Value, a, p.wv)?;
    let v = tape.add_row(v, p.bv)?;

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head, head)?,
                tape.slice_cols(k, h * head, head)?,
                tape.slice_cols(v, h * head, head)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.causal_softmax(scores)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = if n_heads == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let o = tape.matmul(merged, p.wo)?;
    let o = tape.add_row(o, p.bo)?;
    let h = tape.add(x, o)?;

    let b = tape.layer_norm(h, p.ln2_g, p.ln2_b)?;
    let f = project(tape, AdaptTarget::FfIn, b, p.w1)?;
    let f = tape.add_row(f, p.b1)?;
    let f = tape.gelu(f);
    let f = project(tape, AdaptTarget::FfOut, f, p.w2)?;
    let f = tape.add_row(f, p.b2)?;
    tape.add(h, f)
}
