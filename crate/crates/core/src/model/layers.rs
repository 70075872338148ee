//! Building blocks shared by the encoder, the decoupling blocks and the
//! post-training heads.

use std::sync::Arc;

use crate::error::Result;
use crate::numeric::{Bindings, Scalar, Tape, Var};

pub(crate) fn linear<F: Scalar>(t: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = t.matmul(x, w)?;
    t.add(y, b)
}

pub(crate) fn layer_norm<F: Scalar>(t: &mut Tape<F>, vars: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let g = vars.get(&format!("{prefix}.gamma"))?;
    let b = vars.get(&format!("{prefix}.beta"))?;
    t.layer_norm(x, g, b, F::from_f64_lossy(1e-5))
}

/// Masked multi-head self-attention with projections `{prefix}.{wq,wk,wv,wo}`.
/// Per-head attention probabilities are appended to `attn` when given.
pub(crate) fn mhsa<F: Scalar>(
    t: &mut Tape<F>,
    vars: &Bindings,
    prefix: &str,
    x: Var,
    mask: &Arc<[bool]>,
    heads: usize,
    mut attn: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let d = t.shape(x)[1];
    let dk = d / heads;
    let q = t.matmul(x, vars.get(&format!("{prefix}.wq"))?)?;
    let k = t.matmul(x, vars.get(&format!("{prefix}.wk"))?)?;
    let v = t.matmul(x, vars.get(&format!("{prefix}.wv"))?)?;
    let kt = t.transpose(k)?;
    let scale = F::one() / F::from_usize(dk).expect("dk").sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_last(q, h * dk, dk)?;
        let kh = t.slice_rows(kt, h * dk, dk)?;
        let vh = t.slice_last(v, h * dk, dk)?;
        let s = t.matmul(qh, kh)?;
        let s = t.scale(s, scale);
        let p = t.masked_softmax(s, mask)?;
        if let Some(a) = attn.as_deref_mut() {
            a.push(p);
        }
        outs.push(t.matmul(p, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { t.concat_last(&outs)? };
    t.matmul(cat, vars.get(&format!("{prefix}.wo"))?)
}

/// One GRU direction over the rows of `x` in `order`, zero initial state.
/// Returns the hidden state after each position, indexed by position.
///
/// ```text
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub(crate) fn gru_direction<F: Scalar>(
    t: &mut Tape<F>,
    vars: &Bindings,
    prefix: &str,
    x: Var,
    d: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let n = t.shape(x)[0];
    let xp = linear(
        t,
        x,
        vars.get(&format!("{prefix}.w_ih"))?,
        vars.get(&format!("{prefix}.b_ih"))?,
    )?;
    let w_hh = vars.get(&format!("{prefix}.w_hh"))?;
    let b_hh = vars.get(&format!("{prefix}.b_hh"))?;
    let mut h = t.constant(crate::numeric::Tensor::zeros(&[1, d]));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for pos in order {
        let xi = t.slice_rows(xp, pos, 1)?;
        let hh = linear(t, h, w_hh, b_hh)?;
        let (xr, xz, xn) = (t.slice_last(xi, 0, d)?, t.slice_last(xi, d, d)?, t.slice_last(xi, 2 * d, d)?);
        let (hr, hz, hn) = (t.slice_last(hh, 0, d)?, t.slice_last(hh, d, d)?, t.slice_last(hh, 2 * d, d)?);
        let r = t.add(xr, hr)?;
        let r = t.sigmoid(r);
        let z = t.add(xz, hz)?;
        let z = t.sigmoid(z);
        let rh = t.mul(r, hn)?;
        let nn = t.add(xn, rh)?;
        let nn = t.tanh(nn);
        let keep = t.mul(z, h)?;
        let omz = t.one_minus(z);
        let new = t.mul(omz, nn)?;
        h = t.add(new, keep)?;
        states[pos] = h;
    }
    Ok(states)
}
