//! Prediction heads: credibility classifiers, reposter aggregation, the
//! heuristic fusion unit, and the news classifier.

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// `softmax(X W + b)` row-wise; shared by the publisher, user, and news
/// heads.
pub fn linear_softmax(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let z = tape.matmul(x, w);
    let z = tape.add_row(z, b);
    tape.softmax_rows(z)
}

/// Attention-pool the per-slot reposter encodings against the news
/// embedding: `alpha = softmax(N_j R~^T)` over non-PAD slots,
/// `R' = sum_k alpha_k R~_k`. All-PAD rows yield the zero vector.
pub fn aggregate_reposters(
    tape: &mut Tape,
    news_rows: Var,
    slot_encodings: &[Var],
    pad_mask: &Tensor,
) -> Var {
    let batch = tape.value(news_rows).rows();
    let d = tape.value(news_rows).cols();
    assert_eq!(pad_mask.shape(), [batch, slot_encodings.len()]);
    let mut scores = Vec::with_capacity(slot_encodings.len());
    for &slot in slot_encodings {
        scores.push(tape.rowwise_dot(news_rows, slot));
    }
    let scores = tape.concat_cols(&scores);
    let alpha = tape.softmax_rows_hard(scores, pad_mask);
    let mut acc: Option<Var> = None;
    for (j, &slot) in slot_encodings.iter().enumerate() {
        let a_j = tape.col(alpha, j);
        let term = tape.mul_col(slot, a_j);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    acc.unwrap_or_else(|| tape.input(Tensor::zeros(vec![batch, d])))
}

/// Heuristic fusion `[P~; R'; P~ (x) R'; P~ - R'] W_F + b_F`.
pub fn fuse(tape: &mut Tape, pub_rows: Var, agg: Var, w_f: Var, b_f: Var) -> Var {
    let prod = tape.mul(pub_rows, agg);
    let diff = tape.sub(pub_rows, agg);
    let cat = tape.concat_cols(&[pub_rows, agg, prod, diff]);
    let z = tape.matmul(cat, w_f);
    tape.add_row(z, b_f)
}

/// `softmax([m; m~] W_m + b)` over the news classes.
pub fn classify_news(tape: &mut Tape, content: Var, fused: Var, w_m: Var, b: Var) -> Var {
    let cat = tape.concat_cols(&[content, fused]);
    linear_softmax(tape, cat, w_m, b)
}
