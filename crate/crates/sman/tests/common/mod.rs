//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use sman::autodiff::Tape;
use sman::corpus::{Corpus, CredibilityLabels, LabelScheme, NewsItem, NewsLabel, Repost, Split};
use sman::graphs::GraphSet;
use sman::model::{Ablation, MaskMode, Model, ModelConfig, ModelSizes};
use sman::params::ParamStore;

pub fn item(
    news_id: u32,
    publisher_id: u32,
    label: NewsLabel,
    tokens: Vec<u32>,
    reposts: &[(u32, u64)],
) -> NewsItem {
    NewsItem {
        news_id,
        publisher_id,
        tokens,
        label,
        publish_time: 1000,
        reposts: reposts
            .iter()
            .map(|&(user_id, time)| Repost { user_id, time })
            .collect(),
    }
}

/// Tiny fixed corpus: 3 publishers (user nodes 1..=3), 5 news, reposters
/// 4..=8, vocabulary of 10 words.
pub fn tiny_corpus(scheme: LabelScheme) -> Corpus {
    let labels = match scheme {
        LabelScheme::FourClass => [
            NewsLabel::Nr,
            NewsLabel::Fr,
            NewsLabel::Tr,
            NewsLabel::Ur,
            NewsLabel::Nr,
        ],
        LabelScheme::TwoClass => [
            NewsLabel::Nr,
            NewsLabel::Fr,
            NewsLabel::Nr,
            NewsLabel::Fr,
            NewsLabel::Nr,
        ],
    };
    let news = vec![
        item(1, 1, labels[0], vec![1, 2, 3, 4], &[(4, 1010), (5, 1020)]),
        item(2, 1, labels[1], vec![5, 6, 7], &[(5, 1015), (6, 1030), (7, 1040)]),
        item(3, 2, labels[2], vec![2, 8, 9, 1], &[(7, 1005)]),
        item(4, 3, labels[3], vec![9, 3], &[(4, 1100), (8, 1200), (6, 1300), (5, 1400)]),
        item(5, 2, labels[4], vec![6, 1, 2, 5, 7], &[]),
    ];
    Corpus::from_news(news, scheme, 10).unwrap()
}

/// Small model configuration matching the tiny corpus.
pub fn tiny_config(scheme: LabelScheme, mask_mode: MaskMode) -> ModelConfig {
    ModelConfig {
        d: 4,
        d_w: 5,
        heads: 2,
        k: 3,
        windows: vec![2, 3],
        scheme,
        mask_mode,
        lambda: 1e-3,
        ..ModelConfig::default()
    }
}

pub fn split_all_train(corpus: &Corpus) -> Split {
    Split {
        train: corpus.news.iter().map(|n| n.news_id).collect(),
        val: BTreeSet::new(),
        test: BTreeSet::new(),
    }
}

/// Forward-only joint loss value for a candidate parameter store (used as the
/// function under finite differencing).
pub fn loss_value(
    cfg: &ModelConfig,
    sizes: ModelSizes,
    store: &ParamStore,
    corpus: &Corpus,
    graphs: &GraphSet,
    batch: &[u32],
    credibility: &CredibilityLabels,
    ablation: Ablation,
) -> f64 {
    let model = Model {
        cfg: cfg.clone(),
        sizes,
        params: store.clone(),
    };
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let out = model
        .loss(&mut tape, &binding, corpus, graphs, batch, credibility, ablation)
        .unwrap();
    tape.value(out.loss).scalar_value()
}

/// Populate analytic gradients for the joint loss into `model.params`.
pub fn fill_grads(
    model: &mut Model,
    corpus: &Corpus,
    graphs: &GraphSet,
    batch: &[u32],
    credibility: &CredibilityLabels,
    ablation: Ablation,
) {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let out = model
        .loss(&mut tape, &binding, corpus, graphs, batch, credibility, ablation)
        .unwrap();
    let grads = tape.backward(out.loss);
    model.params.zero_grads();
    binding.write_grads(&grads, &mut model.params);
}
