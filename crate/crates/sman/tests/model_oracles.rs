//! Hand-computed oracles and gradient checks for the attention encoders, the
//! text CNN, the heads, and the joint objective.

mod common;

use std::collections::BTreeSet;

use common::*;
use sman::autodiff::Tape;
use sman::corpus::{annotate_credibility, LabelScheme, NewsLabel};
use sman::graphs::{build_graphs, DiffusionPattern, SparseAdj};
use sman::model::attention::{
    encode_diffusion_slot, multi_head_encode, structure_attention_head,
};
use sman::model::heads::{aggregate_reposters, fuse, linear_softmax};
use sman::model::text_cnn::encode_news_text;
use sman::model::{Ablation, MaskMode, Model, ModelSizes};
use sman::params::grad_check;
use sman::tensor::Tensor;
use sman::train::{train, Checkpoint, TrainConfig};

// Eq. scaffolding hand case, d = 1:
// q = [[1], [2]], k = v = [[1], [3]], w = [[1]], mask = [[1, 1], [0, 1]].
// Scores = [[1, 3], [2, 6]].
#[test]
fn attention_head_literal_hand_case() {
    let mut tape = Tape::new();
    let q = tape.input(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let k = tape.input(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
    let w = tape.input(Tensor::matrix(1, 1, vec![1.0]).unwrap());
    let mask = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    let out = structure_attention_head(&mut tape, q, k, k, w, &mask, MaskMode::Literal).unwrap();
    let out = tape.value(out);
    // Row 0: scores [1, 3] * mask [1, 1] -> softmax([1, 3]) applied to v.
    let (e1, e3) = (1f64.exp(), 3f64.exp());
    let expect0 = (e1 * 1.0 + e3 * 3.0) / (e1 + e3);
    // Row 1: scores [2, 6] * mask [0, 1] -> the masked position scores
    // exactly 0 before the softmax, which still assigns it e^0 weight.
    let e6 = 6f64.exp();
    let expect1 = (1.0 * 1.0 + e6 * 3.0) / (1.0 + e6);
    assert!((out.at(0, 0) - expect0).abs() < 1e-12, "{}", out.at(0, 0));
    assert!((out.at(1, 0) - expect1).abs() < 1e-12, "{}", out.at(1, 0));
}

#[test]
fn attention_head_hard_hand_case() {
    let mut tape = Tape::new();
    let q = tape.input(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let k = tape.input(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
    let w = tape.input(Tensor::matrix(1, 1, vec![1.0]).unwrap());
    let mask = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    let out = structure_attention_head(&mut tape, q, k, k, w, &mask, MaskMode::Hard).unwrap();
    let out = tape.value(out);
    let (e1, e3) = (1f64.exp(), 3f64.exp());
    let expect0 = (e1 * 1.0 + e3 * 3.0) / (e1 + e3);
    assert!((out.at(0, 0) - expect0).abs() < 1e-12);
    // Row 1: the masked key gets post-softmax weight exactly 0, so the single
    // unmasked key carries everything.
    assert_eq!(out.at(1, 0), 3.0);
}

#[test]
fn hard_mode_all_masked_row_is_zero() {
    let mut tape = Tape::new();
    let q = tape.input(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
    let k = tape.input(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap());
    let w = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let mask = Tensor::zeros(vec![1, 3]);
    let out = structure_attention_head(&mut tape, q, k, k, w, &mask, MaskMode::Hard).unwrap();
    assert!(tape.value(out).data().iter().all(|&x| x == 0.0));
}

#[test]
fn multi_head_residual_identity_at_zero_projection() {
    let mut tape = Tape::new();
    let q_val = Tensor::matrix(3, 2, vec![0.3, -1.2, 0.0, 2.5, 1.1, 0.7]).unwrap();
    let q = tape.input(q_val.clone());
    let kv = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.5, -0.5, 2.0]).unwrap());
    let h0 = tape.input(Tensor::matrix(2, 2, vec![0.4, 0.1, -0.3, 0.8]).unwrap());
    let h1 = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let w_out = tape.input(Tensor::zeros(vec![4, 2]));
    let mask = Tensor::new(vec![3, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
    let out =
        multi_head_encode(&mut tape, q, kv, &[h0, h1], w_out, &mask, MaskMode::Literal).unwrap();
    // ELU(X * 0) = 0, so the residual passes q through exactly.
    assert_eq!(tape.value(out).data(), q_val.data());
}

#[test]
fn diffusion_pad_slots_are_zero_vectors() {
    let mut tape = Tape::new();
    let users = tape.input(
        Tensor::matrix(4, 2, vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 0.3, 0.3]).unwrap(),
    );
    let h0 = tape.input(Tensor::matrix(2, 2, vec![0.2, -0.1, 0.4, 0.9]).unwrap());
    let w_out = tape.input(Tensor::matrix(2, 2, vec![0.5, 0.1, -0.2, 0.3]).unwrap());
    let mut adj = SparseAdj::new(4, 4);
    adj.insert(1, 2);
    adj.insert(2, 1);
    adj.insert(3, 1);
    adj.insert(1, 3);
    for mode in [MaskMode::Literal, MaskMode::Hard] {
        let out =
            encode_diffusion_slot(&mut tape, &[0, 2, 0], users, &[h0], w_out, &adj, mode).unwrap();
        let v = tape.value(out);
        assert!(v.row(0).iter().all(|&x| x == 0.0), "{:?} mode {}", v.row(0), mode);
        assert!(v.row(2).iter().all(|&x| x == 0.0));
        assert!(v.row(1).iter().any(|&x| x != 0.0));
    }
}

#[test]
fn aggregate_hand_case() {
    // News vector [1], slot encodings [2] and [0]: scores [2, 0],
    // alpha = [0.8808, 0.1192], aggregate = 1.7616.
    let mut tape = Tape::new();
    let news = tape.input(Tensor::matrix(1, 1, vec![1.0]).unwrap());
    let s1 = tape.input(Tensor::matrix(1, 1, vec![2.0]).unwrap());
    let s2 = tape.input(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    let mask = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
    let out = aggregate_reposters(&mut tape, news, &[s1, s2], &mask);
    let e2 = 2f64.exp();
    let alpha0 = e2 / (e2 + 1.0);
    assert!((alpha0 - 0.8808).abs() < 1e-4);
    let got = tape.value(out).at(0, 0);
    assert!((got - 2.0 * alpha0).abs() < 1e-12);
    assert!((got - 1.7616).abs() < 1e-4);
}

#[test]
fn aggregate_all_pad_row_is_zero() {
    let mut tape = Tape::new();
    let news = tape.input(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let s1 = tape.input(Tensor::matrix(2, 1, vec![3.0, 0.0]).unwrap());
    let s2 = tape.input(Tensor::matrix(2, 1, vec![4.0, 0.0]).unwrap());
    let mask = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let out = aggregate_reposters(&mut tape, news, &[s1, s2], &mask);
    assert_eq!(tape.value(out).at(1, 0), 0.0);
}

#[test]
fn fuse_hand_case() {
    // p = [2], r = [3] -> [2, 3, 6, -1] . ones = 10.
    let mut tape = Tape::new();
    let p = tape.input(Tensor::matrix(1, 1, vec![2.0]).unwrap());
    let r = tape.input(Tensor::matrix(1, 1, vec![3.0]).unwrap());
    let w = tape.input(Tensor::matrix(4, 1, vec![1.0; 4]).unwrap());
    let b = tape.input(Tensor::zeros(vec![1, 1]));
    let out = fuse(&mut tape, p, r, w, b);
    assert_eq!(tape.value(out).at(0, 0), 10.0);
}

#[test]
fn linear_softmax_rows_sum_to_one() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap());
    let w = tape.input(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
    let b = tape.input(Tensor::matrix(1, 4, vec![0.1, -0.2, 0.0, 0.4]).unwrap());
    let out = linear_softmax(&mut tape, x, w, b);
    let v = tape.value(out);
    for i in 0..2 {
        let s: f64 = v.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn text_cnn_max_over_time_hand_case() {
    // One filter of window 2 over 3 words with identity-ish weights picks the
    // max window response.
    let mut tape = Tape::new();
    // Vocab rows: PAD, then words 1..3 with 1-dim embeddings [1], [5], [2].
    let words = tape.input(Tensor::matrix(4, 1, vec![0.0, 1.0, 5.0, 2.0]).unwrap());
    // One filter summing the window: ELU(w1 + w2).
    let w = tape.input(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
    let b = tape.input(Tensor::zeros(vec![1, 1]));
    let out = encode_news_text(&mut tape, &[1, 2, 3], words, &[(2, w, b)]).unwrap();
    // Window responses: 1+5 = 6 and 5+2 = 7; max is 7.
    assert_eq!(tape.value(out).at(0, 0), 7.0);
}

#[test]
fn text_cnn_short_text_padded() {
    let mut tape = Tape::new();
    let words = tape.input(Tensor::matrix(3, 1, vec![0.0, 4.0, 1.0]).unwrap());
    let w = tape.input(Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
    let b = tape.input(Tensor::zeros(vec![1, 1]));
    // One word with a window of 3: padded with PAD zeros -> ELU(4 + 0 + 0).
    let out = encode_news_text(&mut tape, &[1], words, &[(3, w, b)]).unwrap();
    assert_eq!(tape.value(out).at(0, 0), 4.0);
}

#[test]
fn joint_loss_uniform_prediction_oracle() {
    // All-zero parameters force uniform predictions everywhere:
    // one 4-class news (ln 4), one labeled publisher (ln 3), one labeled
    // reposter in one slot (ln 3).
    let corpus = sman::corpus::Corpus::from_news(
        vec![item(1, 1, NewsLabel::Nr, vec![1, 2], &[(2, 1010)])],
        LabelScheme::FourClass,
        5,
    )
    .unwrap();
    let mut cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    cfg.lambda = 0.0;
    let sizes = ModelSizes::from_corpus(&corpus);
    let graphs = build_graphs(&corpus, cfg.k, cfg.pattern).unwrap();
    let mut model = Model::init(cfg.clone(), sizes, 0).unwrap();
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = 0.0;
        }
    }
    let train_ids: BTreeSet<u32> = [1].into_iter().collect();
    let credibility = annotate_credibility(&corpus, &train_ids);
    assert_eq!(credibility.publishers.len(), 1);
    assert_eq!(credibility.users.len(), 1);
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let out = model
        .loss(&mut tape, &binding, &corpus, &graphs, &[1], &credibility, Ablation::Full)
        .unwrap();
    let got = tape.value(out.loss).scalar_value();
    let expect = 4f64.ln() + 3f64.ln() + 3f64.ln();
    assert!((got - expect).abs() < 1e-12, "got {}, expected {}", got, expect);
}

#[test]
fn joint_loss_grad_check_small() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    let sizes = ModelSizes::from_corpus(&corpus);
    let graphs = build_graphs(&corpus, cfg.k, cfg.pattern).unwrap();
    let train_ids: BTreeSet<u32> = corpus.news.iter().map(|n| n.news_id).collect();
    let credibility = annotate_credibility(&corpus, &train_ids);
    let batch: Vec<u32> = vec![1, 2, 3, 4, 5];
    let mut model = Model::init(cfg.clone(), sizes, 11).unwrap();
    fill_grads(&mut model, &corpus, &graphs, &batch, &credibility, Ablation::Full);
    let cfg2 = cfg.clone();
    let err = grad_check(
        |store| {
            loss_value(&cfg2, sizes, store, &corpus, &graphs, &batch, &credibility, Ablation::Full)
        },
        &mut model.params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "max relative error {}", err);
}

#[test]
fn permutation_equivariant_batch_encoding() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    let sizes = ModelSizes::from_corpus(&corpus);
    let graphs = build_graphs(&corpus, cfg.k, cfg.pattern).unwrap();
    let model = Model::init(cfg, sizes, 3).unwrap();
    let a = model.forward_probs(&corpus, &graphs, &[1, 2, 3, 4, 5], 8).unwrap();
    let b = model.forward_probs(&corpus, &graphs, &[4, 1, 5, 2, 3], 8).unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    for (bi, &ai) in perm.iter().enumerate() {
        assert_eq!(a.row(ai), b.row(bi), "row mismatch for permuted batch");
    }
}

#[test]
fn ablation_no_puc_credibility_heads_get_zero_gradients() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    let sizes = ModelSizes::from_corpus(&corpus);
    let graphs = build_graphs(&corpus, cfg.k, cfg.pattern).unwrap();
    let train_ids: BTreeSet<u32> = corpus.news.iter().map(|n| n.news_id).collect();
    let credibility = annotate_credibility(&corpus, &train_ids);
    let mut model = Model::init(cfg, sizes, 5).unwrap();
    fill_grads(&mut model, &corpus, &graphs, &[1, 2, 3], &credibility, Ablation::NoPuc);
    for name in ["head.pub.w", "head.pub.b", "head.user.w", "head.user.b"] {
        let g = &model.params.get(name).unwrap().grad;
        assert!(g.data().iter().all(|&x| x == 0.0), "{} has nonzero grad", name);
    }
    // The shared encoder still learns.
    let g = &model.params.get("attn.pub.head0").unwrap().grad;
    assert!(g.data().iter().any(|&x| x != 0.0));
}

#[test]
fn checkpoint_round_trip_is_stable() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    let sizes = ModelSizes::from_corpus(&corpus);
    let model = Model::init(cfg.clone(), sizes, 9).unwrap();
    let ckpt = Checkpoint {
        model,
        train_config: TrainConfig {
            model: cfg,
            ..TrainConfig::default()
        },
        epoch: 3,
        val_accuracy: 0.75,
    };
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    ckpt.save(dir1.path()).unwrap();
    let loaded = Checkpoint::load(dir1.path()).unwrap();
    loaded.save(dir2.path()).unwrap();
    // Save -> load -> save is byte-identical for both files.
    for f in ["manifest.txt", "params.bin"] {
        let a = std::fs::read(dir1.path().join(f)).unwrap();
        let b = std::fs::read(dir2.path().join(f)).unwrap();
        assert_eq!(a, b, "{} changed across a round trip", f);
    }
    // Loaded values equal the f32-rounded originals.
    for (p, q) in ckpt.model.params.iter().zip(loaded.model.params.iter()) {
        assert_eq!(p.name, q.name);
        for (&a, &b) in p.value.data().iter().zip(q.value.data()) {
            assert_eq!(a as f32 as f64, b);
        }
    }
    assert_eq!(loaded.epoch, 3);
    assert_eq!(loaded.val_accuracy, 0.75);
}

#[test]
fn test_labels_do_not_influence_training() {
    // Transductive no-leakage: flipping every test-split label leaves the
    // trained parameters bit-identical.
    let mut corpus = tiny_corpus(LabelScheme::FourClass);
    let split = sman::corpus::Split {
        train: [1, 2, 3].into_iter().collect(),
        val: [4].into_iter().collect(),
        test: [5].into_iter().collect(),
    };
    let config = TrainConfig {
        model: tiny_config(LabelScheme::FourClass, MaskMode::Literal),
        epochs: 2,
        batch_size: 2,
        seed: 21,
        ..TrainConfig::default()
    };
    let r1 = train(&corpus, &split, &config).unwrap();
    // News 5 is the only test item; flip NR -> UR.
    let idx = corpus.news.iter().position(|n| n.news_id == 5).unwrap();
    corpus.news[idx].label = NewsLabel::Ur;
    let r2 = train(&corpus, &split, &config).unwrap();
    for (p, q) in r1
        .checkpoint
        .model
        .params
        .iter()
        .zip(r2.checkpoint.model.params.iter())
    {
        assert_eq!(p.value.data(), q.value.data(), "{} diverged", p.name);
    }
    for (a, b) in r1.history.iter().zip(&r2.history) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
}

#[test]
fn overfits_tiny_training_set() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let split = split_all_train(&corpus);
    let config = TrainConfig {
        model: tiny_config(LabelScheme::FourClass, MaskMode::Literal),
        epochs: 200,
        batch_size: 5,
        lr: 5e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    let result = train(&corpus, &split, &config).unwrap();
    let first = result.history.first().unwrap().train_loss;
    let last = result.history.last().unwrap().train_loss;
    assert!(last < first * 0.05, "loss {} -> {} did not collapse", first, last);
    let graphs = build_graphs(&corpus, config.model.k, config.model.pattern).unwrap();
    let ids: Vec<u32> = corpus.news.iter().map(|n| n.news_id).collect();
    let acc = sman::train::accuracy(&result.checkpoint.model, &corpus, &graphs, &ids).unwrap();
    assert_eq!(acc, 1.0, "failed to memorize 5 examples");
}

#[test]
fn training_is_deterministic() {
    let corpus = tiny_corpus(LabelScheme::TwoClass);
    let split = split_all_train(&corpus);
    let config = TrainConfig {
        model: tiny_config(LabelScheme::TwoClass, MaskMode::Hard),
        epochs: 4,
        batch_size: 2,
        seed: 77,
        ..TrainConfig::default()
    };
    let r1 = train(&corpus, &split, &config).unwrap();
    let r2 = train(&corpus, &split, &config).unwrap();
    for (a, b) in r1.history.iter().zip(&r2.history) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
    for (p, q) in r1
        .checkpoint
        .model
        .params
        .iter()
        .zip(r2.checkpoint.model.params.iter())
    {
        assert_eq!(p.value.data(), q.value.data());
    }
}

#[test]
fn star_pattern_trains_too() {
    let corpus = tiny_corpus(LabelScheme::FourClass);
    let split = split_all_train(&corpus);
    let mut model_cfg = tiny_config(LabelScheme::FourClass, MaskMode::Literal);
    model_cfg.pattern = DiffusionPattern::Star;
    let config = TrainConfig {
        model: model_cfg,
        epochs: 2,
        batch_size: 3,
        seed: 1,
        ..TrainConfig::default()
    };
    let result = train(&corpus, &split, &config).unwrap();
    assert!(result.history.iter().all(|e| e.train_loss.is_finite()));
}
