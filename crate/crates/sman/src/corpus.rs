//! Corpus data model, the line-delimited file format, splitting, and weak
//! credibility annotation.
//!
//! File format (UTF-8, one record per line, tab-separated fields):
//!
//! ```text
//! #sman-corpus scheme=4class vocab=200
//! news_id <TAB> publisher_id <TAB> label <TAB> publish_time <TAB> tokens <TAB> reposts
//! ```
//!
//! `tokens` is a space-separated list of word indices (>= 1; 0 is the PAD
//! sentinel). `reposts` is a comma-separated list of `user:time` pairs and
//! may be empty. Labels are NR, FR, TR, UR (NR/FR only for the 2-class
//! scheme). The header line is written by the generator; when absent, the
//! scheme is inferred from the labels present and the vocabulary from the
//! largest token index.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Result, SmanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NewsLabel {
    /// Non-fake news.
    Nr,
    /// Fake news.
    Fr,
    /// True news (a post debunking a fake story).
    Tr,
    /// Unverified news.
    Ur,
}

impl NewsLabel {
    pub fn parse(s: &str) -> Option<NewsLabel> {
        match s {
            "NR" => Some(NewsLabel::Nr),
            "FR" => Some(NewsLabel::Fr),
            "TR" => Some(NewsLabel::Tr),
            "UR" => Some(NewsLabel::Ur),
            _ => None,
        }
    }

    /// Fake or unverified content, the "bad" half of the credibility rules.
    pub fn is_fake_or_unverified(self) -> bool {
        matches!(self, NewsLabel::Fr | NewsLabel::Ur)
    }
}

impl fmt::Display for NewsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NewsLabel::Nr => "NR",
            NewsLabel::Fr => "FR",
            NewsLabel::Tr => "TR",
            NewsLabel::Ur => "UR",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    FourClass,
    TwoClass,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::FourClass => 4,
            LabelScheme::TwoClass => 2,
        }
    }

    pub fn class_index(self, label: NewsLabel) -> Result<usize> {
        match (self, label) {
            (_, NewsLabel::Nr) => Ok(0),
            (_, NewsLabel::Fr) => Ok(1),
            (LabelScheme::FourClass, NewsLabel::Tr) => Ok(2),
            (LabelScheme::FourClass, NewsLabel::Ur) => Ok(3),
            (LabelScheme::TwoClass, l) => Err(SmanError::Integrity(format!(
                "label {} not allowed in the 2-class scheme",
                l
            ))),
        }
    }

    pub fn parse(s: &str) -> Option<LabelScheme> {
        match s {
            "4class" => Some(LabelScheme::FourClass),
            "2class" => Some(LabelScheme::TwoClass),
            _ => None,
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScheme::FourClass => "4class",
            LabelScheme::TwoClass => "2class",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Repost {
    pub user_id: u32,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsItem {
    pub news_id: u32,
    pub publisher_id: u32,
    pub tokens: Vec<u32>,
    pub label: NewsLabel,
    pub publish_time: u64,
    /// Sorted non-decreasing by time.
    pub reposts: Vec<Repost>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub news: Vec<NewsItem>,
    pub scheme: LabelScheme,
    pub vocab_size: u32,
    /// Ids seen in the publisher role.
    pub publishers: BTreeSet<u32>,
    /// Ids seen in the reposter role.
    pub users: BTreeSet<u32>,
}

impl Corpus {
    pub fn from_news(news: Vec<NewsItem>, scheme: LabelScheme, vocab_size: u32) -> Result<Corpus> {
        let mut seen = HashSet::new();
        let mut publishers = BTreeSet::new();
        let mut users = BTreeSet::new();
        for item in &news {
            validate_item(item, scheme, vocab_size, None)?;
            if !seen.insert(item.news_id) {
                return Err(SmanError::Integrity(format!(
                    "duplicate news_id {}",
                    item.news_id
                )));
            }
            publishers.insert(item.publisher_id);
            for r in &item.reposts {
                users.insert(r.user_id);
            }
        }
        Ok(Corpus {
            news,
            scheme,
            vocab_size,
            publishers,
            users,
        })
    }

    /// Largest publisher id; embedding tables use `max_publisher_id + 1` rows.
    pub fn max_publisher_id(&self) -> u32 {
        self.publishers.iter().next_back().copied().unwrap_or(0)
    }

    /// Largest user-node id. Publishers own user nodes in the diffusion
    /// graph, so this spans both roles.
    pub fn max_user_node_id(&self) -> u32 {
        let u = self.users.iter().next_back().copied().unwrap_or(0);
        u.max(self.max_publisher_id())
    }

    pub fn max_news_id(&self) -> u32 {
        self.news.iter().map(|n| n.news_id).max().unwrap_or(0)
    }

    pub fn get(&self, news_id: u32) -> Option<&NewsItem> {
        self.news.iter().find(|n| n.news_id == news_id)
    }
}

fn validate_item(
    item: &NewsItem,
    scheme: LabelScheme,
    vocab_size: u32,
    line: Option<usize>,
) -> Result<()> {
    let integrity = |msg: String| match line {
        Some(l) => SmanError::Parse { line: l, msg },
        None => SmanError::Integrity(msg),
    };
    if item.news_id == 0 || item.publisher_id == 0 {
        return Err(integrity("ids must be positive (0 is PAD)".into()));
    }
    scheme.class_index(item.label)?;
    for &t in &item.tokens {
        if t == 0 {
            return Err(integrity("token id 0 is the PAD sentinel".into()));
        }
        if t >= vocab_size {
            return Err(integrity(format!(
                "token id {} outside vocabulary of size {}",
                t, vocab_size
            )));
        }
    }
    let mut prev = 0u64;
    for r in &item.reposts {
        if r.user_id == 0 {
            return Err(integrity("user_id 0 is the PAD sentinel".into()));
        }
        if r.time < item.publish_time {
            return Err(integrity(format!(
                "repost time {} before publish_time {}",
                r.time, item.publish_time
            )));
        }
        if r.time < prev {
            return Err(integrity("repost times must be non-decreasing".into()));
        }
        prev = r.time;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut header_scheme = None;
    let mut header_vocab = None;
    let mut raw: Vec<(usize, NewsItem)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if lineno == 1 && line.starts_with("#sman-corpus") {
                for field in line.split_whitespace().skip(1) {
                    if let Some(v) = field.strip_prefix("scheme=") {
                        header_scheme = Some(LabelScheme::parse(v).ok_or(SmanError::Parse {
                            line: lineno,
                            msg: format!("unknown scheme {:?}", v),
                        })?);
                    } else if let Some(v) = field.strip_prefix("vocab=") {
                        header_vocab = Some(v.parse::<u32>().map_err(|e| SmanError::Parse {
                            line: lineno,
                            msg: format!("bad vocab: {}", e),
                        })?);
                    }
                }
            }
            continue;
        }
        raw.push((lineno, parse_record(&line, lineno)?));
    }
    let scheme = header_scheme.unwrap_or_else(|| {
        let four = raw
            .iter()
            .any(|(_, n)| matches!(n.label, NewsLabel::Tr | NewsLabel::Ur));
        if four {
            LabelScheme::FourClass
        } else {
            LabelScheme::TwoClass
        }
    });
    let vocab_size = header_vocab.unwrap_or_else(|| {
        raw.iter()
            .flat_map(|(_, n)| n.tokens.iter())
            .max()
            .map(|&m| m + 1)
            .unwrap_or(1)
    });
    let mut seen = HashSet::new();
    for (lineno, item) in &raw {
        validate_item(item, scheme, vocab_size, Some(*lineno))?;
        if !seen.insert(item.news_id) {
            return Err(SmanError::Integrity(format!(
                "duplicate news_id {} at line {}",
                item.news_id, lineno
            )));
        }
    }
    Corpus::from_news(raw.into_iter().map(|(_, n)| n).collect(), scheme, vocab_size)
}

fn parse_record(line: &str, lineno: usize) -> Result<NewsItem> {
    let err = |msg: String| SmanError::Parse { line: lineno, msg };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(err(format!("expected 6 tab-separated fields, got {}", fields.len())));
    }
    let news_id: u32 = fields[0]
        .parse()
        .map_err(|e| err(format!("bad news_id: {}", e)))?;
    let publisher_id: u32 = fields[1]
        .parse()
        .map_err(|e| err(format!("bad publisher_id: {}", e)))?;
    let label =
        NewsLabel::parse(fields[2]).ok_or_else(|| err(format!("unknown label {:?}", fields[2])))?;
    let publish_time: u64 = fields[3]
        .parse()
        .map_err(|e| err(format!("bad publish_time: {}", e)))?;
    let mut tokens = Vec::new();
    for tok in fields[4].split_whitespace() {
        tokens.push(tok.parse().map_err(|e| err(format!("bad token: {}", e)))?);
    }
    let mut reposts = Vec::new();
    if !fields[5].trim().is_empty() {
        for pair in fields[5].split(',') {
            let (u, t) = pair
                .split_once(':')
                .ok_or_else(|| err(format!("bad repost pair {:?}", pair)))?;
            reposts.push(Repost {
                user_id: u.parse().map_err(|e| err(format!("bad user_id: {}", e)))?,
                time: t.parse().map_err(|e| err(format!("bad repost time: {}", e)))?,
            });
        }
    }
    Ok(NewsItem {
        news_id,
        publisher_id,
        tokens,
        label,
        publish_time,
        reposts,
    })
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "#sman-corpus scheme={} vocab={}\n",
        corpus.scheme, corpus.vocab_size
    ));
    for n in &corpus.news {
        let tokens: Vec<String> = n.tokens.iter().map(|t| t.to_string()).collect();
        let reposts: Vec<String> = n
            .reposts
            .iter()
            .map(|r| format!("{}:{}", r.user_id, r.time))
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            n.news_id,
            n.publisher_id,
            n.label,
            n.publish_time,
            tokens.join(" "),
            reposts.join(",")
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

/// Stratified split: 10% validation, remainder 3:1 train:test, sizes rounded
/// down globally and distributed over classes by largest remainder.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<Split> {
    let n = corpus.news.len();
    if n < 10 {
        return Err(SmanError::Size(format!(
            "need at least 10 news to split, got {}",
            n
        )));
    }
    let val_total = n / 10;
    let test_total = (n - val_total) / 4;

    let mut by_class: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for item in &corpus.news {
        let c = corpus.scheme.class_index(item.label)?;
        by_class.entry(c).or_default().push(item.news_id);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
    }
    let counts: Vec<usize> = by_class.values().map(|v| v.len()).collect();
    let val_per = largest_remainder(&counts, val_total);
    let rem: Vec<usize> = counts.iter().zip(&val_per).map(|(c, v)| c - v).collect();
    let test_per = largest_remainder(&rem, test_total);

    let mut split = Split {
        train: BTreeSet::new(),
        val: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for ((ids, &vc), &tc) in by_class.values().zip(&val_per).zip(&test_per) {
        for (i, &id) in ids.iter().enumerate() {
            if i < vc {
                split.val.insert(id);
            } else if i < vc + tc {
                split.test.insert(id);
            } else {
                split.train.insert(id);
            }
        }
    }
    Ok(split)
}

/// Apportion `total` over buckets proportionally to `counts`, rounding by
/// largest remainder with ties broken by bucket order.
fn largest_remainder(counts: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = counts.iter().sum();
    if sum == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * total / sum).collect();
    let mut rest: usize = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(counts[i] * total % sum));
    let mut k = 0;
    while rest > 0 {
        let i = order[k % order.len()];
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            rest -= 1;
        }
        k += 1;
    }
    alloc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CredibilityLevel {
    Reliable = 0,
    Uncertain = 1,
    Unreliable = 2,
}

impl CredibilityLevel {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default)]
pub struct CredibilityLabels {
    pub publishers: BTreeMap<u32, CredibilityLevel>,
    pub users: BTreeMap<u32, CredibilityLevel>,
}

fn level_from_history(has_bad: bool, has_good: bool) -> CredibilityLevel {
    if !has_bad {
        CredibilityLevel::Reliable
    } else if !has_good {
        CredibilityLevel::Unreliable
    } else {
        CredibilityLevel::Uncertain
    }
}

/// Derive per-publisher and per-user credibility levels from training-set
/// history only. Entities with no training-set history stay absent.
pub fn annotate_credibility(corpus: &Corpus, train_ids: &BTreeSet<u32>) -> CredibilityLabels {
    // (has_fake_or_unverified, has_true_or_nonfake)
    let mut pubs: BTreeMap<u32, (bool, bool)> = BTreeMap::new();
    let mut users: BTreeMap<u32, (bool, bool)> = BTreeMap::new();
    for item in &corpus.news {
        if !train_ids.contains(&item.news_id) {
            continue;
        }
        let bad = item.label.is_fake_or_unverified();
        let p = pubs.entry(item.publisher_id).or_default();
        p.0 |= bad;
        p.1 |= !bad;
        for r in &item.reposts {
            let u = users.entry(r.user_id).or_default();
            u.0 |= bad;
            u.1 |= !bad;
        }
    }
    CredibilityLabels {
        publishers: pubs
            .into_iter()
            .map(|(id, (b, g))| (id, level_from_history(b, g)))
            .collect(),
        users: users
            .into_iter()
            .map(|(id, (b, g))| (id, level_from_history(b, g)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(news_id: u32, publisher_id: u32, label: NewsLabel, reposters: &[u32]) -> NewsItem {
        NewsItem {
            news_id,
            publisher_id,
            tokens: vec![1, 2, 3],
            label,
            publish_time: 100,
            reposts: reposters
                .iter()
                .enumerate()
                .map(|(i, &u)| Repost {
                    user_id: u,
                    time: 100 + i as u64,
                })
                .collect(),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{}", l).unwrap();
        }
        f
    }

    #[test]
    fn load_two_valid_records() {
        let f = write_lines(&[
            "#sman-corpus scheme=4class vocab=50",
            "1\t3\tNR\t100\t1 2 3\t7:120,8:130",
            "2\t3\tFR\t200\t4 5\t",
        ]);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.news.len(), 2);
        assert_eq!(c.scheme, LabelScheme::FourClass);
        assert_eq!(c.vocab_size, 50);
        assert!(c.publishers.contains(&3));
        assert_eq!(c.users, BTreeSet::from([7, 8]));
    }

    #[test]
    fn load_rejects_pad_user_id() {
        let f = write_lines(&["1\t3\tNR\t100\t1 2\t0:120"]);
        let e = load_corpus(f.path()).unwrap_err();
        assert!(e.to_string().contains("PAD"), "{}", e);
    }

    #[test]
    fn load_rejects_repost_before_publish() {
        let f = write_lines(&["1\t3\tNR\t100\t1 2\t7:50"]);
        assert!(load_corpus(f.path()).is_err());
    }

    #[test]
    fn load_reports_line_numbers() {
        let f = write_lines(&["1\t3\tNR\t100\t1 2\t", "not a record"]);
        let e = load_corpus(f.path()).unwrap_err();
        match e {
            SmanError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {}", other),
        }
    }

    #[test]
    fn load_rejects_duplicate_news_id() {
        let f = write_lines(&["1\t3\tNR\t100\t1\t", "1\t4\tFR\t100\t2\t"]);
        assert!(load_corpus(f.path()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = Corpus::from_news(
            vec![item(1, 2, NewsLabel::Nr, &[5, 6]), item(2, 2, NewsLabel::Fr, &[])],
            LabelScheme::FourClass,
            10,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&corpus, f.path()).unwrap();
        let back = load_corpus(f.path()).unwrap();
        assert_eq!(back.news, corpus.news);
        assert_eq!(back.vocab_size, corpus.vocab_size);
    }

    fn balanced_corpus_40() -> Corpus {
        let labels = [NewsLabel::Nr, NewsLabel::Fr, NewsLabel::Tr, NewsLabel::Ur];
        let news: Vec<NewsItem> = (0..40)
            .map(|i| item(i + 1, 1 + i % 3, labels[(i as usize) % 4], &[]))
            .collect();
        Corpus::from_news(news, LabelScheme::FourClass, 10).unwrap()
    }

    #[test]
    fn split_sizes_40() {
        let c = balanced_corpus_40();
        let s = split_corpus(&c, 17).unwrap();
        assert_eq!(s.val.len(), 4);
        assert_eq!(s.test.len(), 9);
        assert_eq!(s.train.len(), 27);
    }

    #[test]
    fn split_deterministic_and_partitioning() {
        let c = balanced_corpus_40();
        let a = split_corpus(&c, 5).unwrap();
        let b = split_corpus(&c, 5).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<u32> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (1..=40).collect::<Vec<u32>>());
        assert!(a.train.is_disjoint(&a.val));
        assert!(a.train.is_disjoint(&a.test));
        assert!(a.val.is_disjoint(&a.test));
    }

    #[test]
    fn split_stratified_within_one_item() {
        let c = balanced_corpus_40();
        let s = split_corpus(&c, 11).unwrap();
        // Global proportions are 1/4 per class; each part must be within one
        // item of proportional.
        for part in [&s.train, &s.val, &s.test] {
            let mut per_class = [0usize; 4];
            for id in part {
                let item = c.get(*id).unwrap();
                per_class[c.scheme.class_index(item.label).unwrap()] += 1;
            }
            let expect = part.len() as f64 / 4.0;
            for &cnt in &per_class {
                assert!(
                    (cnt as f64 - expect).abs() <= 1.0,
                    "class count {} vs expected {}",
                    cnt,
                    expect
                );
            }
        }
    }

    #[test]
    fn split_too_small() {
        let news: Vec<NewsItem> = (0..9).map(|i| item(i + 1, 1, NewsLabel::Nr, &[])).collect();
        let c = Corpus::from_news(news, LabelScheme::FourClass, 10).unwrap();
        assert!(matches!(split_corpus(&c, 0), Err(SmanError::Size(_))));
    }

    #[test]
    fn annotate_rule_examples() {
        let news = vec![
            item(1, 10, NewsLabel::Nr, &[101]),
            item(2, 10, NewsLabel::Nr, &[101]),
            item(3, 11, NewsLabel::Nr, &[102]),
            item(4, 11, NewsLabel::Fr, &[102]),
            item(5, 12, NewsLabel::Fr, &[103]),
            item(6, 12, NewsLabel::Ur, &[103]),
        ];
        let c = Corpus::from_news(news, LabelScheme::FourClass, 10).unwrap();
        let train: BTreeSet<u32> = (1..=6).collect();
        let labels = annotate_credibility(&c, &train);
        // {NR, NR} -> reliable; {NR, FR} -> uncertain; {FR, UR} -> unreliable.
        assert_eq!(labels.publishers[&10], CredibilityLevel::Reliable);
        assert_eq!(labels.publishers[&11], CredibilityLevel::Uncertain);
        assert_eq!(labels.publishers[&12], CredibilityLevel::Unreliable);
        // Users are annotated from the news they reposted.
        assert_eq!(labels.users[&101], CredibilityLevel::Reliable);
        assert_eq!(labels.users[&102], CredibilityLevel::Uncertain);
        assert_eq!(labels.users[&103], CredibilityLevel::Unreliable);
    }

    #[test]
    fn annotate_single_ur_history_is_unreliable() {
        let c = Corpus::from_news(
            vec![item(1, 10, NewsLabel::Ur, &[])],
            LabelScheme::FourClass,
            10,
        )
        .unwrap();
        let labels = annotate_credibility(&c, &BTreeSet::from([1]));
        assert_eq!(labels.publishers[&10], CredibilityLevel::Unreliable);
    }

    #[test]
    fn annotate_no_label_leakage() {
        let news = vec![
            item(1, 10, NewsLabel::Nr, &[101]),
            item(2, 20, NewsLabel::Fr, &[201]), // test-only entities
        ];
        let c = Corpus::from_news(news, LabelScheme::FourClass, 10).unwrap();
        let labels = annotate_credibility(&c, &BTreeSet::from([1]));
        assert!(!labels.publishers.contains_key(&20));
        assert!(!labels.users.contains_key(&201));
    }

    #[test]
    fn annotate_invariant_under_news_permutation() {
        let mut news = vec![
            item(1, 10, NewsLabel::Nr, &[101, 102]),
            item(2, 11, NewsLabel::Fr, &[101]),
            item(3, 10, NewsLabel::Ur, &[103]),
        ];
        let c1 = Corpus::from_news(news.clone(), LabelScheme::FourClass, 10).unwrap();
        news.reverse();
        let c2 = Corpus::from_news(news, LabelScheme::FourClass, 10).unwrap();
        let train: BTreeSet<u32> = (1..=3).collect();
        let a = annotate_credibility(&c1, &train);
        let b = annotate_credibility(&c2, &train);
        assert_eq!(a.publishers, b.publishers);
        assert_eq!(a.users, b.users);
    }
}
