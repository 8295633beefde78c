use crate::error::{Error, Result};

use super::{Axis, Tape, Tensor, Var};

/// Projection weights of one multi-head attention block, bound on a tape.
/// Matrices are `d x d` applied on the right (`x * W + b`).
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
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `n_q x d`
    pub out: Var,
    /// Scaled pre-softmax scores, one `n_q x n_k` matrix per head.
    pub logits: Vec<Var>,
}

impl AttentionOutput {
    /// Stacks the per-head scores into a `heads x n_q x n_k` tensor.
    pub fn logits_tensor(&self, tape: &Tape) -> Tensor {
        let first = tape.value(self.logits[0]);
        let (nq, nk) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(self.logits.len() * nq * nk);
        for l in &self.logits {
            data.extend_from_slice(tape.value(*l).data());
        }
        Tensor::from_parts(vec![self.logits.len(), nq, nk], data)
    }

    /// Head-averaged scores, `n_q x n_k`.
    pub fn mean_logits(&self, tape: &mut Tape) -> Result<Var> {
        let mut acc = self.logits[0];
        for l in &self.logits[1..] {
            acc = tape.add(acc, *l)?;
        }
        tape.mul_scalar(acc, 1.0 / self.logits.len() as f64)
    }
}

/// `x * W + b`
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Scaled dot-product attention with `heads` heads. `mask` is a row-major
/// `n_q x n_k` validity matrix; masked keys get zero weight. Positional
/// encodings are not added.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    w: &AttentionWeights,
    mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let d = tape.value(q).cols();
    if w.heads == 0 || d % w.heads != 0 {
        return Err(Error::shape(format!("model dim {d} not divisible by {} heads", w.heads)));
    }
    let (nq, nk) = (tape.value(q).rows(), tape.value(k).rows());
    if tape.value(v).rows() != nk {
        return Err(Error::shape("key and value row counts differ"));
    }
    if let Some(m) = mask {
        if m.len() != nq * nk {
            return Err(Error::shape(format!("attention mask has {} entries for {nq}x{nk}", m.len())));
        }
        for (i, row) in m.chunks(nk).enumerate() {
            if !row.iter().any(|&b| b) {
                return Err(Error::invalid(format!("query row {i} has every key masked")));
            }
        }
    }
    let qp = linear(tape, q, w.wq, w.bq)?;
    let kp = linear(tape, k, w.wk, w.bk)?;
    let vp = linear(tape, v, w.wv, w.bv)?;
    let c = d / w.heads;
    let scale = 1.0 / (c as f64).sqrt();
    let mut heads_out = Vec::with_capacity(w.heads);
    let mut logits = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let (s, e) = (h * c, (h + 1) * c);
        let qh = tape.slice_cols(qp, s, e)?;
        let kh = tape.slice_cols(kp, s, e)?;
        let vh = tape.slice_cols(vp, s, e)?;
        let raw = tape.matmul_t(qh, kh)?;
        let lg = tape.mul_scalar(raw, scale)?;
        let p = tape.softmax(lg, Axis::Cols, mask)?;
        heads_out.push(tape.matmul(p, vh)?);
        logits.push(lg);
    }
    let cat = if heads_out.len() == 1 {
        heads_out[0]
    } else {
        tape.concat(&heads_out, Axis::Cols)?
    };
    let out = linear(tape, cat, w.wo, w.bo)?;
    Ok(AttentionOutput { out, logits })
}
