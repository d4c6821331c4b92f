//! Synthetic corpus generation with a planted credibility signal.
//!
//! Publishers are drawn reliable or unreliable; unreliable publishers emit
//! fake or unverified news with probability `p_signal` (reliable ones with
//! `1 - p_signal`, so `p_signal = 0.5` decouples publisher type from news
//! label). Low-reputation users preferentially repost fake news with the
//! same probability, and token sequences come from class-conditioned unigram
//! distributions.
//!
//! Ids: publishers take user-node ids `1..=publishers`, pure reposters take
//! `publishers+1..=users`. Word index 0 is PAD.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Corpus, LabelScheme, NewsItem, NewsLabel, Repost};
use crate::error::{Result, SmanError};

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub publishers: u32,
    pub users: u32,
    pub news: u32,
    pub vocab: u32,
    /// Fraction of publishers drawn unreliable.
    pub unreliable_frac: f64,
    /// Fraction of reposting users drawn low-reputation.
    pub lowrep_frac: f64,
    /// Planted signal strength in [0.5, 1].
    pub p_signal: f64,
    /// Class-conditioning strength of the token unigram mixture.
    pub token_signal: f64,
    /// Max reposters per news (K).
    pub k_max: usize,
    pub min_reposts: usize,
    pub scheme: LabelScheme,
    pub tokens_per_news: usize,
    /// Repost offsets are drawn uniformly from [0, time_spread] seconds.
    pub time_spread: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            publishers: 20,
            users: 200,
            news: 500,
            vocab: 200,
            unreliable_frac: 0.4,
            lowrep_frac: 0.4,
            p_signal: 0.95,
            token_signal: 0.8,
            k_max: 10,
            min_reposts: 1,
            scheme: LabelScheme::FourClass,
            tokens_per_news: 20,
            time_spread: 86_400,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(SmanError::Config(format!("{} = {} outside [0, 1]", name, v)))
            } else {
                Ok(())
            }
        };
        prob("unreliable_frac", self.unreliable_frac)?;
        prob("lowrep_frac", self.lowrep_frac)?;
        prob("token_signal", self.token_signal)?;
        if !(0.5..=1.0).contains(&self.p_signal) {
            return Err(SmanError::Config(format!(
                "p_signal = {} outside [0.5, 1]",
                self.p_signal
            )));
        }
        if self.publishers == 0 || self.users <= self.publishers || self.news == 0 {
            return Err(SmanError::Config(
                "need publishers >= 1, users > publishers, news >= 1".into(),
            ));
        }
        if self.vocab < 8 {
            return Err(SmanError::Config("vocab must be at least 8".into()));
        }
        if self.k_max == 0 || self.min_reposts > self.k_max {
            return Err(SmanError::Config(
                "need 1 <= min_reposts <= k_max".into(),
            ));
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let pub_unreliable: Vec<bool> = (0..cfg.publishers)
        .map(|_| rng.gen::<f64>() < cfg.unreliable_frac)
        .collect();
    // Reposting users occupy ids publishers+1..=users.
    let n_repo = (cfg.users - cfg.publishers) as usize;
    let user_lowrep: Vec<bool> = (0..n_repo)
        .map(|_| rng.gen::<f64>() < cfg.lowrep_frac)
        .collect();
    let lowrep_pool: Vec<u32> = (0..n_repo)
        .filter(|&i| user_lowrep[i])
        .map(|i| cfg.publishers + 1 + i as u32)
        .collect();
    let highrep_pool: Vec<u32> = (0..n_repo)
        .filter(|&i| !user_lowrep[i])
        .map(|i| cfg.publishers + 1 + i as u32)
        .collect();

    let classes = cfg.scheme.num_classes() as u32;
    // Vocabulary after PAD is partitioned into per-class blocks.
    let block = (cfg.vocab - 1) / classes;

    let mut news = Vec::with_capacity(cfg.news as usize);
    for j in 0..cfg.news {
        let publisher_idx = rng.gen_range(0..cfg.publishers) as usize;
        let publisher_id = publisher_idx as u32 + 1;
        let p_fake = if pub_unreliable[publisher_idx] {
            cfg.p_signal
        } else {
            1.0 - cfg.p_signal
        };
        let fake = rng.gen::<f64>() < p_fake;
        let label = match (cfg.scheme, fake) {
            (LabelScheme::TwoClass, true) => NewsLabel::Fr,
            (LabelScheme::TwoClass, false) => NewsLabel::Nr,
            (LabelScheme::FourClass, true) => {
                if rng.gen::<bool>() {
                    NewsLabel::Fr
                } else {
                    NewsLabel::Ur
                }
            }
            (LabelScheme::FourClass, false) => {
                if rng.gen::<bool>() {
                    NewsLabel::Nr
                } else {
                    NewsLabel::Tr
                }
            }
        };
        let class = cfg.scheme.class_index(label)? as u32;

        let tokens: Vec<u32> = (0..cfg.tokens_per_news)
            .map(|_| {
                if block > 0 && rng.gen::<f64>() < cfg.token_signal {
                    1 + class * block + rng.gen_range(0..block)
                } else {
                    rng.gen_range(1..cfg.vocab)
                }
            })
            .collect();

        let publish_time = 1_000 * j as u64;
        let n_reposts = rng.gen_range(cfg.min_reposts..=cfg.k_max).min(n_repo);
        let mut chosen: Vec<u32> = Vec::with_capacity(n_reposts);
        while chosen.len() < n_reposts {
            let p_low = if fake { cfg.p_signal } else { 1.0 - cfg.p_signal };
            let pool = if rng.gen::<f64>() < p_low && !lowrep_pool.is_empty() {
                &lowrep_pool
            } else if !highrep_pool.is_empty() {
                &highrep_pool
            } else {
                &lowrep_pool
            };
            let u = pool[rng.gen_range(0..pool.len())];
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        let mut offsets: Vec<u64> = (0..chosen.len())
            .map(|_| rng.gen_range(0..=cfg.time_spread))
            .collect();
        offsets.sort_unstable();
        let reposts: Vec<Repost> = chosen
            .into_iter()
            .zip(offsets)
            .map(|(user_id, off)| Repost {
                user_id,
                time: publish_time + off,
            })
            .collect();

        news.push(NewsItem {
            news_id: j + 1,
            publisher_id,
            tokens,
            label,
            publish_time,
            reposts,
        });
    }
    Corpus::from_news(news, cfg.scheme, cfg.vocab)
}
