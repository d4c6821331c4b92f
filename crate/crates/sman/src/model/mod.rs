//! The SMAN model: embedding tables, two structure-aware attention encoders,
//! the CNN text encoder, prediction heads, and the joint objective.

pub mod attention;
pub mod heads;
pub mod text_cnn;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::corpus::{Corpus, CredibilityLabels, LabelScheme, NewsItem};
use crate::error::{Result, SmanError};
use crate::graphs::{DiffusionPattern, GraphSet};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub use attention::MaskMode;

pub const CREDIBILITY_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Without publisher credibility prediction.
    NoPc,
    /// Without user credibility prediction.
    NoUc,
    /// Without both credibility tasks.
    NoPuc,
}

impl Ablation {
    pub fn uses_publisher_credibility(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoUc)
    }

    pub fn uses_user_credibility(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoPc)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Ablation::Full),
            "no-pc" => Some(Ablation::NoPc),
            "no-uc" => Some(Ablation::NoUc),
            "no-puc" => Some(Ablation::NoPuc),
            _ => None,
        }
    }

    pub fn all() -> [Ablation; 4] {
        [Ablation::Full, Ablation::NoPc, Ablation::NoUc, Ablation::NoPuc]
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoPc => "no-pc",
            Ablation::NoUc => "no-uc",
            Ablation::NoPuc => "no-puc",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Id-embedding dimension; CNN filters per window size equal `d` so the
    /// content vector has length `windows.len() * d`.
    pub d: usize,
    /// Word embedding dimension.
    pub d_w: usize,
    pub heads: usize,
    /// Repost slots per news (K).
    pub k: usize,
    pub windows: Vec<usize>,
    pub scheme: LabelScheme,
    pub mask_mode: MaskMode,
    pub lambda: f64,
    pub pattern: DiffusionPattern,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 100,
            d_w: 300,
            heads: 7,
            k: 50,
            windows: vec![3, 4, 5],
            scheme: LabelScheme::FourClass,
            mask_mode: MaskMode::Literal,
            lambda: 1e-6,
            pattern: DiffusionPattern::Chain,
        }
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.scheme.num_classes()
    }

    pub fn content_dim(&self) -> usize {
        self.windows.len() * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d == 0 || self.d_w == 0 || self.k == 0 {
            return Err(SmanError::Config(
                "heads, d, d_w, and k must all be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(SmanError::Config("lambda must be non-negative".into()));
        }
        if self.windows.is_empty() {
            return Err(SmanError::Config("need at least one window size".into()));
        }
        Ok(())
    }
}

/// Embedding table row counts derived from a corpus (all +1 for the PAD row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSizes {
    pub publisher_rows: usize,
    pub news_rows: usize,
    pub user_rows: usize,
    pub vocab: usize,
}

impl ModelSizes {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        ModelSizes {
            publisher_rows: corpus.max_publisher_id() as usize + 1,
            news_rows: corpus.max_news_id() as usize + 1,
            user_rows: corpus.max_user_node_id() as usize + 1,
            vocab: corpus.vocab_size as usize,
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub sizes: ModelSizes,
    pub params: ParamStore,
}

/// Parameters lifted onto a tape for one forward/backward pass.
pub struct Binding {
    vars: HashMap<String, Var>,
    ordered: Vec<(String, Var)>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {:?}", name))
    }

    /// Accumulate tape gradients back into the store.
    pub fn write_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (name, var) in &self.ordered {
            if let Some(g) = grads.get(*var) {
                store.get_mut(name).unwrap().grad.add_assign(g);
            }
        }
    }
}

pub struct BatchEncoding {
    /// Full encoded publisher table.
    pub p_tilde: Var,
    /// Per-slot reposter encodings, each `batch x d`.
    pub slot_encodings: Vec<Var>,
    /// Slot user ids aligned with `slot_encodings`.
    pub slot_ids: Vec<Vec<u32>>,
    /// Class probabilities, `batch x num_classes`.
    pub probs: Var,
}

pub struct LossOutput {
    pub loss: Var,
    pub probs: Var,
}

impl Model {
    pub fn init(cfg: ModelConfig, sizes: ModelSizes, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut draw = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(shape, data).unwrap()
        };
        let zero_row0 = |mut t: Tensor| {
            let c = t.cols();
            for v in &mut t.data_mut()[..c] {
                *v = 0.0;
            }
            t
        };
        let d = cfg.d;
        let mut params = ParamStore::new();
        params.add("embed.publisher", zero_row0(draw(vec![sizes.publisher_rows, d])), true)?;
        params.add("embed.news", zero_row0(draw(vec![sizes.news_rows, d])), true)?;
        params.add("embed.user", zero_row0(draw(vec![sizes.user_rows, d])), true)?;
        params.add("embed.word", zero_row0(draw(vec![sizes.vocab, cfg.d_w])), true)?;
        for enc in ["pub", "diff"] {
            for h in 0..cfg.heads {
                params.add(&format!("attn.{}.head{}", enc, h), draw(vec![d, d]), false)?;
            }
            params.add(&format!("attn.{}.out", enc), draw(vec![cfg.heads * d, d]), false)?;
        }
        for &w in &cfg.windows {
            params.add(&format!("cnn.w{}", w), draw(vec![d, w * cfg.d_w]), false)?;
            params.add(&format!("cnn.b{}", w), Tensor::zeros(vec![1, d]), false)?;
        }
        params.add("head.pub.w", draw(vec![d, CREDIBILITY_LEVELS]), false)?;
        params.add("head.pub.b", Tensor::zeros(vec![1, CREDIBILITY_LEVELS]), false)?;
        params.add("head.user.w", draw(vec![d, CREDIBILITY_LEVELS]), false)?;
        params.add("head.user.b", Tensor::zeros(vec![1, CREDIBILITY_LEVELS]), false)?;
        params.add("fuse.w", draw(vec![4 * d, d]), false)?;
        params.add("fuse.b", Tensor::zeros(vec![1, d]), false)?;
        let cls_in = cfg.content_dim() + d;
        let classes = cfg.num_classes();
        params.add("cls.w", draw(vec![cls_in, classes]), false)?;
        params.add("cls.b", Tensor::zeros(vec![1, classes]), false)?;
        Ok(Model { cfg, sizes, params })
    }

    /// Replace the word table with externally supplied vectors (the PAD row
    /// stays zero).
    pub fn set_word_embeddings(&mut self, table: Tensor) -> Result<()> {
        let p = self.params.get_mut("embed.word").unwrap();
        if table.shape() != p.value.shape() {
            return Err(SmanError::Shape(format!(
                "word table shape {:?}, expected {:?}",
                table.shape(),
                p.value.shape()
            )));
        }
        p.value = table;
        let c = p.value.cols();
        for v in &mut p.value.data_mut()[..c] {
            *v = 0.0;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut vars = HashMap::new();
        let mut ordered = Vec::new();
        for p in self.params.iter() {
            let v = tape.input(p.value.clone());
            vars.insert(p.name.clone(), v);
            ordered.push((p.name.clone(), v));
        }
        Binding { vars, ordered }
    }

    fn head_vars(&self, binding: &Binding, enc: &str) -> Vec<Var> {
        (0..self.cfg.heads)
            .map(|h| binding.var(&format!("attn.{}.head{}", enc, h)))
            .collect()
    }

    fn check_graphs(&self, graphs: &GraphSet) -> Result<()> {
        if graphs.repost.k() != self.cfg.k {
            return Err(SmanError::Config(format!(
                "repost matrix K = {} does not match model K = {}",
                graphs.repost.k(),
                self.cfg.k
            )));
        }
        if graphs.pn_norm.shape() != [self.sizes.publisher_rows, self.sizes.news_rows] {
            return Err(SmanError::Config(format!(
                "publishing mask shape {:?} does not match model sizes {:?}",
                graphs.pn_norm.shape(),
                self.sizes
            )));
        }
        if graphs.uu_norm.rows() != self.sizes.user_rows {
            return Err(SmanError::Config(format!(
                "diffusion graph has {} user rows, model expects {}",
                graphs.uu_norm.rows(),
                self.sizes.user_rows
            )));
        }
        Ok(())
    }

    /// Full forward pass for a batch of news ids.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        corpus: &Corpus,
        graphs: &GraphSet,
        news_ids: &[u32],
    ) -> Result<BatchEncoding> {
        self.check_graphs(graphs)?;
        if news_ids.is_empty() {
            return Err(SmanError::EmptyBatch("no news in batch".into()));
        }
        let index: HashMap<u32, &NewsItem> = corpus.news.iter().map(|n| (n.news_id, n)).collect();
        let mut items = Vec::with_capacity(news_ids.len());
        for &id in news_ids {
            items.push(*index.get(&id).ok_or_else(|| {
                SmanError::Index(format!("news id {} not present in corpus", id))
            })?);
        }

        let publishers = binding.var("embed.publisher");
        let news = binding.var("embed.news");
        let users = binding.var("embed.user");
        let words = binding.var("embed.word");

        let p_tilde = attention::encode_publishers(
            tape,
            publishers,
            news,
            &self.head_vars(binding, "pub"),
            binding.var("attn.pub.out"),
            &graphs.pn_norm,
            self.cfg.mask_mode,
        )?;

        let diff_heads = self.head_vars(binding, "diff");
        let diff_out = binding.var("attn.diff.out");
        let mut slot_encodings = Vec::with_capacity(self.cfg.k);
        let mut slot_ids = Vec::with_capacity(self.cfg.k);
        for j in 0..self.cfg.k {
            let ids: Vec<u32> = items.iter().map(|n| graphs.repost.row(n.news_id)[j]).collect();
            let enc = attention::encode_diffusion_slot(
                tape,
                &ids,
                users,
                &diff_heads,
                diff_out,
                &graphs.uu_norm,
                self.cfg.mask_mode,
            )?;
            slot_encodings.push(enc);
            slot_ids.push(ids);
        }

        let banks: Vec<(usize, Var, Var)> = self
            .cfg
            .windows
            .iter()
            .map(|&w| {
                (
                    w,
                    binding.var(&format!("cnn.w{}", w)),
                    binding.var(&format!("cnn.b{}", w)),
                )
            })
            .collect();
        let mut content_rows = Vec::with_capacity(items.len());
        for item in &items {
            content_rows.push(text_cnn::encode_news_text(tape, &item.tokens, words, &banks)?);
        }
        let content = tape.concat_rows(&content_rows);

        let news_indices: Vec<usize> = items.iter().map(|n| n.news_id as usize).collect();
        let news_rows = tape.gather_rows(news, &news_indices);
        let mut pad_mask = Tensor::zeros(vec![items.len(), self.cfg.k]);
        for (j, ids) in slot_ids.iter().enumerate() {
            for (i, &u) in ids.iter().enumerate() {
                if u != 0 {
                    pad_mask.set(i, j, 1.0);
                }
            }
        }
        let aggregated = heads::aggregate_reposters(tape, news_rows, &slot_encodings, &pad_mask);

        let pub_indices: Vec<usize> = items.iter().map(|n| n.publisher_id as usize).collect();
        let pub_rows = tape.gather_rows(p_tilde, &pub_indices);
        let fused = heads::fuse(
            tape,
            pub_rows,
            aggregated,
            binding.var("fuse.w"),
            binding.var("fuse.b"),
        );
        let probs = heads::classify_news(
            tape,
            content,
            fused,
            binding.var("cls.w"),
            binding.var("cls.b"),
        );
        Ok(BatchEncoding {
            p_tilde,
            slot_encodings,
            slot_ids,
            probs,
        })
    }

    /// Joint objective for a training batch: news cross-entropy, credibility
    /// losses per the ablation variant, and one L2 term over the union of
    /// active parameters.
    pub fn loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        corpus: &Corpus,
        graphs: &GraphSet,
        batch_ids: &[u32],
        credibility: &CredibilityLabels,
        ablation: Ablation,
    ) -> Result<LossOutput> {
        let enc = self.encode_batch(tape, binding, corpus, graphs, batch_ids)?;
        let index: HashMap<u32, &NewsItem> = corpus.news.iter().map(|n| (n.news_id, n)).collect();

        let mut news_picks = Vec::with_capacity(batch_ids.len());
        for (i, &id) in batch_ids.iter().enumerate() {
            let item = index[&id];
            news_picks.push((i, self.cfg.scheme.class_index(item.label)?));
        }
        if news_picks.is_empty() {
            return Err(SmanError::EmptyBatch("no labeled news in batch".into()));
        }
        // Each task contributes its mean negative log-likelihood so no task
        // dominates by pick count.
        let news_nll = tape.nll_picked(enc.probs, &news_picks);
        let mut parts = vec![tape.scale(news_nll, 1.0 / news_picks.len() as f64)];

        if ablation.uses_publisher_credibility() {
            let probs = heads::linear_softmax(
                tape,
                enc.p_tilde,
                binding.var("head.pub.w"),
                binding.var("head.pub.b"),
            );
            let picks: Vec<(usize, usize)> = credibility
                .publishers
                .iter()
                .map(|(&id, &level)| (id as usize, level.index()))
                .collect();
            if !picks.is_empty() {
                let nll = tape.nll_picked(probs, &picks);
                parts.push(tape.scale(nll, 1.0 / picks.len() as f64));
            }
        }

        if ablation.uses_user_credibility() {
            let w_r = binding.var("head.user.w");
            let b_r = binding.var("head.user.b");
            let mut slot_nlls = Vec::new();
            let mut total_picks = 0usize;
            for (slot, ids) in enc.slot_encodings.iter().zip(&enc.slot_ids) {
                let picks: Vec<(usize, usize)> = ids
                    .iter()
                    .enumerate()
                    .filter(|&(_, &u)| u != 0)
                    .filter_map(|(i, &u)| credibility.users.get(&u).map(|l| (i, l.index())))
                    .collect();
                if picks.is_empty() {
                    continue;
                }
                let probs = heads::linear_softmax(tape, *slot, w_r, b_r);
                slot_nlls.push(tape.nll_picked(probs, &picks));
                total_picks += picks.len();
            }
            if !slot_nlls.is_empty() {
                let total = tape.add_scalars(&slot_nlls);
                parts.push(tape.scale(total, 1.0 / total_picks as f64));
            }
        }

        if self.cfg.lambda > 0.0 {
            let mut reg_parts = Vec::new();
            for p in self.params.iter() {
                if !self.l2_includes(&p.name, ablation) {
                    continue;
                }
                let v = binding.var(&p.name);
                reg_parts.push(tape.sum_sq(v, p.frozen_row0));
            }
            let total = tape.add_scalars(&reg_parts);
            parts.push(tape.scale(total, self.cfg.lambda / 2.0));
        }

        let loss = tape.add_scalars(&parts);
        Ok(LossOutput {
            loss,
            probs: enc.probs,
        })
    }

    /// Whether a parameter belongs to the L2 union under an ablation variant
    /// (dropped heads must receive no gradient at all).
    fn l2_includes(&self, name: &str, ablation: Ablation) -> bool {
        if name.starts_with("head.pub.") {
            return ablation.uses_publisher_credibility();
        }
        if name.starts_with("head.user.") {
            return ablation.uses_user_credibility();
        }
        true
    }

    /// Class probabilities for a set of news ids, evaluated in chunks.
    pub fn forward_probs(
        &self,
        corpus: &Corpus,
        graphs: &GraphSet,
        news_ids: &[u32],
        chunk: usize,
    ) -> Result<Tensor> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(news_ids.len());
        for ids in news_ids.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let binding = self.bind(&mut tape);
            let enc = self.encode_batch(&mut tape, &binding, corpus, graphs, ids)?;
            let probs = tape.value(enc.probs);
            for i in 0..probs.rows() {
                rows.push(probs.row(i).to_vec());
            }
        }
        Ok(Tensor::from_rows(&rows))
    }

    /// Argmax predictions for a set of news ids.
    pub fn predict(
        &self,
        corpus: &Corpus,
        graphs: &GraphSet,
        news_ids: &[u32],
        chunk: usize,
    ) -> Result<Vec<usize>> {
        let probs = self.forward_probs(corpus, graphs, news_ids, chunk)?;
        Ok((0..probs.rows())
            .map(|i| {
                probs.row(i)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap()
            })
            .collect())
    }
}

/// Pretrained word vectors: one line per word, the word index followed by
/// `d_w` floats, whitespace-separated.
pub fn load_word_vectors(path: &Path, vocab: usize, d_w: usize) -> Result<Tensor> {
    let file = std::fs::File::open(path)?;
    let mut table = Tensor::zeros(vec![vocab, d_w]);
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let idx: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| SmanError::Parse {
                line: lineno,
                msg: format!("bad word index: {}", e),
            })?;
        if idx == 0 || idx >= vocab {
            return Err(SmanError::Parse {
                line: lineno,
                msg: format!("word index {} outside 1..{}", idx, vocab),
            });
        }
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SmanError::Parse {
                line: lineno,
                msg: format!("bad embedding value: {}", e),
            })?;
        if values.len() != d_w {
            return Err(SmanError::Parse {
                line: lineno,
                msg: format!("expected {} values, got {}", d_w, values.len()),
            });
        }
        table.row_mut(idx).copy_from_slice(&values);
    }
    Ok(table)
}
