//! Structure-aware multi-head attention: masked scaled dot-product heads,
//! concat + projection + residual, and the per-slot diffusion encoding loop.

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SmanError};
use crate::graphs::SparseAdj;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Element-wise product of the scaled scores with the normalized
    /// adjacency, then softmax; masked positions score exactly 0 pre-softmax.
    Literal,
    /// Masked positions are excluded from the softmax entirely (weight 0);
    /// an all-masked query row yields the zero vector.
    Hard,
}

impl MaskMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "literal" => Some(MaskMode::Literal),
            "hard" => Some(MaskMode::Hard),
            _ => None,
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Literal => "literal",
            MaskMode::Hard => "hard",
        })
    }
}

/// One attention head over a weighted structural mask:
/// `softmax(Q W_h K^T / sqrt(d) (x) normAdj) V`.
pub fn structure_attention_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    w_h: Var,
    norm_adj: &Tensor,
    mode: MaskMode,
) -> Result<Var> {
    let d = tape.value(q).cols();
    if tape.value(k).cols() != d
        || tape.value(w_h).shape() != [d, d]
        || tape.value(v).rows() != tape.value(k).rows()
    {
        return Err(SmanError::Shape(format!(
            "attention head shapes inconsistent: q {:?}, k {:?}, v {:?}, w_h {:?}",
            tape.value(q).shape(),
            tape.value(k).shape(),
            tape.value(v).shape(),
            tape.value(w_h).shape()
        )));
    }
    if norm_adj.shape() != [tape.value(q).rows(), tape.value(k).rows()] {
        return Err(SmanError::Shape(format!(
            "mask shape {:?} does not match {} queries x {} keys",
            norm_adj.shape(),
            tape.value(q).rows(),
            tape.value(k).rows()
        )));
    }
    let qw = tape.matmul(q, w_h);
    let scores = tape.matmul_nt(qw, k);
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = match mode {
        MaskMode::Literal => {
            let masked = tape.mul_const(scores, norm_adj);
            tape.softmax_rows(masked)
        }
        MaskMode::Hard => tape.softmax_rows_hard(scores, norm_adj),
    };
    Ok(tape.matmul(weights, v))
}

/// Multi-head encoding with residual:
/// `ELU([Z_1; ...; Z_H] W_o) + Q`.
pub fn multi_head_encode(
    tape: &mut Tape,
    q: Var,
    kv: Var,
    head_ws: &[Var],
    w_out: Var,
    norm_adj: &Tensor,
    mode: MaskMode,
) -> Result<Var> {
    let d = tape.value(q).cols();
    if tape.value(w_out).shape() != [head_ws.len() * d, d] {
        return Err(SmanError::Shape(format!(
            "output projection shape {:?}, expected [{}, {}]",
            tape.value(w_out).shape(),
            head_ws.len() * d,
            d
        )));
    }
    let mut heads = Vec::with_capacity(head_ws.len());
    for &w_h in head_ws {
        heads.push(structure_attention_head(tape, q, kv, kv, w_h, norm_adj, mode)?);
    }
    let cat = tape.concat_cols(&heads);
    let proj = tape.matmul(cat, w_out);
    let act = tape.elu(proj);
    Ok(tape.add(act, q))
}

/// Encode the publisher table against the news table under the normalized
/// publishing mask.
pub fn encode_publishers(
    tape: &mut Tape,
    publishers: Var,
    news: Var,
    head_ws: &[Var],
    w_out: Var,
    pn_norm: &Tensor,
    mode: MaskMode,
) -> Result<Var> {
    multi_head_encode(tape, publishers, news, head_ws, w_out, pn_norm, mode)
}

/// Dense mask whose row `i` is the normalized diffusion-adjacency row of
/// `ids[i]` (PAD rows stay zero).
pub fn diffusion_mask_rows(uu_norm: &SparseAdj, ids: &[u32]) -> Tensor {
    let cols = uu_norm.cols();
    let mut mask = Tensor::zeros(vec![ids.len(), cols]);
    for (i, &id) in ids.iter().enumerate() {
        if id == 0 {
            continue;
        }
        for &(c, w) in uu_norm.row_entries(id) {
            mask.set(i, c as usize, w);
        }
    }
    mask
}

/// One slot of the diffusion encoding loop: look up the slot users, attend
/// over the full user table under their adjacency rows, project with residual,
/// then zero PAD slots.
pub fn encode_diffusion_slot(
    tape: &mut Tape,
    slot_ids: &[u32],
    users: Var,
    head_ws: &[Var],
    w_out: Var,
    uu_norm: &SparseAdj,
    mode: MaskMode,
) -> Result<Var> {
    let num_users = tape.value(users).rows();
    for &id in slot_ids {
        if id as usize >= num_users {
            return Err(SmanError::Index(format!(
                "user id {} outside embedding table of {} rows",
                id, num_users
            )));
        }
    }
    let indices: Vec<usize> = slot_ids.iter().map(|&u| u as usize).collect();
    let q = tape.gather_rows(users, &indices);
    let mask = diffusion_mask_rows(uu_norm, slot_ids);
    let encoded = multi_head_encode(tape, q, users, head_ws, w_out, &mask, mode)?;
    let keep: Vec<f64> = slot_ids.iter().map(|&u| if u == 0 { 0.0 } else { 1.0 }).collect();
    Ok(tape.mul_rows_const(encoded, &keep))
}
