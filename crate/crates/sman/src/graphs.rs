//! Publishing and diffusion graphs, degree normalization, the per-news
//! repost slot matrix, and time-delay truncation for early detection.

use std::collections::BTreeSet;

use crate::corpus::{Corpus, NewsItem};
use crate::error::Result;
use crate::tensor::Tensor;

/// Sparse binary-at-build adjacency stored as per-row lists. Row/col 0 is the
/// PAD row and stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdj {
    rows: usize,
    cols: usize,
    /// Per-row (col, weight) lists, sorted by column, no duplicates.
    adj: Vec<Vec<(u32, f64)>>,
    row_deg: Vec<f64>,
    col_deg: Vec<f64>,
}

impl SparseAdj {
    pub fn new(rows: usize, cols: usize) -> Self {
        SparseAdj {
            rows,
            cols,
            adj: vec![Vec::new(); rows],
            row_deg: vec![0.0; rows],
            col_deg: vec![0.0; cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Insert a unit entry; duplicates are ignored so degrees always equal
    /// entry counts.
    pub fn insert(&mut self, row: u32, col: u32) {
        let list = &mut self.adj[row as usize];
        match list.binary_search_by_key(&col, |e| e.0) {
            Ok(_) => {}
            Err(pos) => {
                list.insert(pos, (col, 1.0));
                self.row_deg[row as usize] += 1.0;
                self.col_deg[col as usize] += 1.0;
            }
        }
    }

    pub fn nnz(&self) -> usize {
        self.adj.iter().map(|r| r.len()).sum()
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.adj[row as usize]
            .binary_search_by_key(&col, |e| e.0)
            .map(|i| self.adj[row as usize][i].1)
            .unwrap_or(0.0)
    }

    pub fn row_entries(&self, row: u32) -> &[(u32, f64)] {
        &self.adj[row as usize]
    }

    pub fn row_degree(&self, row: u32) -> f64 {
        self.row_deg[row as usize]
    }

    pub fn col_degree(&self, col: u32) -> f64 {
        self.col_deg[col as usize]
    }

    /// Dense copy of one row.
    pub fn row_dense(&self, row: u32) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &(c, w) in &self.adj[row as usize] {
            out[c as usize] = w;
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(vec![self.rows, self.cols]);
        for r in 0..self.rows {
            for &(c, w) in &self.adj[r] {
                out.set(r, c as usize, w);
            }
        }
        out
    }
}

/// `(D_row)^(-1/2) A (D_col)^(-1/2)` over the unnormalized degrees; rows and
/// columns of degree zero are left untouched.
pub fn sym_normalize(a: &SparseAdj) -> SparseAdj {
    let mut out = a.clone();
    for r in 0..a.rows {
        let dr = a.row_deg[r];
        for e in &mut out.adj[r] {
            let dc = a.col_deg[e.0 as usize];
            e.1 = 1.0 / (dr * dc).sqrt();
        }
    }
    out
}

/// Bipartite publisher-news adjacency, `(|P|+1) x (|N|+1)`.
pub fn build_publishing_adjacency(corpus: &Corpus) -> SparseAdj {
    let rows = corpus.max_publisher_id() as usize + 1;
    let cols = corpus.max_news_id() as usize + 1;
    let mut adj = SparseAdj::new(rows, cols);
    for n in &corpus.news {
        adj.insert(n.publisher_id, n.news_id);
    }
    adj
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionPattern {
    /// Publisher to first reposter, then a chronological chain of reposters.
    Chain,
    /// Publisher to every reposter directly.
    Star,
}

impl DiffusionPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chain" => Some(DiffusionPattern::Chain),
            "star" => Some(DiffusionPattern::Star),
            _ => None,
        }
    }
}

impl std::fmt::Display for DiffusionPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiffusionPattern::Chain => "chain",
            DiffusionPattern::Star => "star",
        })
    }
}

/// Undirected user-user diffusion adjacency, `(|U|+1) x (|U|+1)`, stored
/// symmetrically. Publishers own user nodes too.
pub fn build_diffusion_adjacency(corpus: &Corpus, pattern: DiffusionPattern) -> SparseAdj {
    let n = corpus.max_user_node_id() as usize + 1;
    let mut adj = SparseAdj::new(n, n);
    let mut add = |a: u32, b: u32| {
        if a != b {
            adj.insert(a, b);
            adj.insert(b, a);
        }
    };
    for item in &corpus.news {
        match pattern {
            DiffusionPattern::Chain => {
                let mut prev = item.publisher_id;
                for r in &item.reposts {
                    add(prev, r.user_id);
                    prev = r.user_id;
                }
            }
            DiffusionPattern::Star => {
                for r in &item.reposts {
                    add(item.publisher_id, r.user_id);
                }
            }
        }
    }
    adj
}

/// Per-news fixed-width reposter slots, chronological, left-padded with 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepostMatrix {
    k: usize,
    /// `(|N|+1)` rows of exactly `k` slots.
    rows: Vec<Vec<u32>>,
}

impl RepostMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, news_id: u32) -> &[u32] {
        &self.rows[news_id as usize]
    }
}

/// Build the repost matrix: earliest `k` reposters per news in time order,
/// left-padded with the PAD sentinel when fewer.
pub fn build_repost_matrix(corpus: &Corpus, k: usize) -> RepostMatrix {
    assert!(k >= 1, "K must be at least 1");
    let n = corpus.max_news_id() as usize + 1;
    let mut rows = vec![vec![0u32; k]; n];
    for item in &corpus.news {
        let ids: Vec<u32> = item.reposts.iter().take(k).map(|r| r.user_id).collect();
        let row = &mut rows[item.news_id as usize];
        let pad = k - ids.len();
        row[pad..].copy_from_slice(&ids);
    }
    RepostMatrix { k, rows }
}

/// Keep only reposts observed within `delay` seconds of publication.
pub fn truncate_by_delay(corpus: &Corpus, delay: u64) -> Corpus {
    let news: Vec<NewsItem> = corpus
        .news
        .iter()
        .map(|n| {
            let cutoff = n.publish_time.saturating_add(delay);
            NewsItem {
                reposts: n.reposts.iter().copied().filter(|r| r.time <= cutoff).collect(),
                tokens: n.tokens.clone(),
                ..*n
            }
        })
        .collect();
    let mut users = BTreeSet::new();
    for n in &news {
        for r in &n.reposts {
            users.insert(r.user_id);
        }
    }
    Corpus {
        news,
        scheme: corpus.scheme,
        vocab_size: corpus.vocab_size,
        publishers: corpus.publishers.clone(),
        // Keep the full user index table so embedding shapes stay stable
        // across delays.
        users: corpus.users.clone(),
    }
}

/// Graph bundle used by the model: normalized publishing mask, normalized
/// diffusion adjacency, repost slots.
#[derive(Debug, Clone)]
pub struct GraphSet {
    pub pn_norm: Tensor,
    pub uu_norm: SparseAdj,
    pub repost: RepostMatrix,
}

pub fn build_graphs(corpus: &Corpus, k: usize, pattern: DiffusionPattern) -> Result<GraphSet> {
    let pn = build_publishing_adjacency(corpus);
    let uu = build_diffusion_adjacency(corpus, pattern);
    Ok(GraphSet {
        pn_norm: sym_normalize(&pn).to_dense(),
        uu_norm: sym_normalize(&uu),
        repost: build_repost_matrix(corpus, k),
    })
}
