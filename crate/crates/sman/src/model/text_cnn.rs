//! Convolutional text encoder: per-window 1-D convolution over token
//! embeddings, ELU, max-over-time pooling, concatenated across window sizes.

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SmanError};

/// Encode one token sequence into a `1 x (windows * filters)` row. Sequences
/// shorter than the largest window are right-padded with PAD word 0.
///
/// `banks` pairs each window size with its `(filters x window*d_w)` weight
/// and `1 x filters` bias variables.
pub fn encode_news_text(
    tape: &mut Tape,
    tokens: &[u32],
    word_table: Var,
    banks: &[(usize, Var, Var)],
) -> Result<Var> {
    let vocab = tape.value(word_table).rows();
    for &t in tokens {
        if t as usize >= vocab {
            return Err(SmanError::Index(format!(
                "token id {} outside vocabulary of {} rows",
                t, vocab
            )));
        }
    }
    let max_win = banks.iter().map(|b| b.0).max().unwrap_or(1);
    let mut padded: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    while padded.len() < max_win {
        padded.push(0);
    }
    let emb = tape.gather_rows(word_table, &padded);
    let mut pooled = Vec::with_capacity(banks.len());
    for &(win, weights, bias) in banks {
        let windows = tape.unfold(emb, win);
        let scores = tape.matmul_nt(windows, weights);
        let scores = tape.add_row(scores, bias);
        let act = tape.elu(scores);
        pooled.push(tape.col_max(act));
    }
    Ok(tape.concat_cols(&pooled))
}
