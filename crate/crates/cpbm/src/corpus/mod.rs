//! Ranking corpora and deterministic rankers.
//!
//! A corpus is a set of queries, each with a candidate list of documents
//! carrying binary relevance, plus a context vector per query. Synthetic
//! corpora couple the context to relevance through a tunable strength
//! `zeta`: a fraction `zeta` of the context coordinates are averages of the
//! relevant documents' values on a set of relevance-informative features,
//! the rest are Gaussian noise. External svmlight-style datasets can be
//! ingested instead (see [`ingest_svmlight`]).
//!
//! Rankers are deterministic linear scorers. Fitting several of them on
//! partially overlapping query subsets produces the ranking disagreement
//! that intervention harvesting feeds on.

mod io;
mod svmlight;

pub use io::{load_rankers, save_rankers};
pub use svmlight::{ingest_svmlight, ingest_svmlight_with_cutoff};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::stats::pearson;

/// One candidate result for a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: u64,
    pub features: Vec<f64>,
    /// Binary relevance of the document for its query.
    pub relevance: bool,
}

/// A query: its context vector and ordered candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: u64,
    /// Context features describing the query/user; length `t`.
    pub context: Vec<f64>,
    pub candidates: Vec<Document>,
}

impl Query {
    pub fn relevant_count(&self) -> usize {
        self.candidates.iter().filter(|d| d.relevance).count()
    }
}

/// Train/validation/test partition label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A set of queries with split labels and fixed dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub queries: Vec<Query>,
    /// Split label per query, parallel to `queries`.
    pub splits: Vec<Split>,
    /// Context dimension `t` (0 until contexts are built).
    pub context_dim: usize,
    /// Document feature dimension.
    pub n_features: usize,
}

impl Corpus {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.queries.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn split_queries(&self, split: Split) -> Vec<&Query> {
        self.split_indices(split)
            .into_iter()
            .map(|i| &self.queries[i])
            .collect()
    }

    pub fn query_by_id(&self, query_id: u64) -> Option<&Query> {
        // Generated corpora have query_id == position, so try that first.
        if let Some(q) = self.queries.get(query_id as usize) {
            if q.query_id == query_id {
                return Some(q);
            }
        }
        self.queries.iter().find(|q| q.query_id == query_id)
    }
}

/// A deterministic linear scoring function with logged traffic volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranker {
    pub ranker_id: u32,
    pub weights: Vec<f64>,
    /// Number of queries this ranker served (its share of the log).
    pub traffic: u64,
}

/// Document ids ordered by position; index 0 is position 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking(Vec<u64>);

impl Ranking {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Document at 1-based position `k`.
    pub fn doc_at(&self, k: usize) -> u64 {
        self.0[k - 1]
    }

    /// 1-based position of `doc_id`, if displayed.
    pub fn position_of(&self, doc_id: u64) -> Option<usize> {
        self.0.iter().position(|&d| d == doc_id).map(|i| i + 1)
    }

    pub fn doc_ids(&self) -> &[u64] {
        &self.0
    }

    /// Swap the documents at 1-based positions `a` and `b`.
    pub fn swap_positions(&mut self, a: usize, b: usize) {
        self.0.swap(a - 1, b - 1);
    }
}

impl Ranker {
    pub fn score(&self, doc: &Document) -> f64 {
        assert_eq!(
            self.weights.len(),
            doc.features.len(),
            "ranker/document dimension mismatch"
        );
        self.weights
            .iter()
            .zip(&doc.features)
            .map(|(w, f)| w * f)
            .sum()
    }

    /// Rank the query's candidates: descending score, ties broken by
    /// ascending doc_id, truncated at `k_max` positions.
    pub fn rank(&self, query: &Query, k_max: usize) -> Ranking {
        let mut scored: Vec<(f64, u64)> = query
            .candidates
            .iter()
            .map(|d| (self.score(d), d.doc_id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k_max);
        Ranking(scored.into_iter().map(|(_, id)| id).collect())
    }

    /// Rank the full candidate set without truncation.
    pub fn rank_full(&self, query: &Query) -> Ranking {
        self.rank(query, query.candidates.len())
    }
}

/// Configuration for synthetic corpus generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_queries: usize,
    pub candidates_per_query: usize,
    /// Context dimension `t`.
    pub context_dim: usize,
    /// Document feature dimension.
    pub n_features: usize,
    /// Context-relevance coupling strength; `zeta * 10` must be integral.
    pub zeta: f64,
    /// Standard deviation of the random context coordinates.
    pub sigma: f64,
    /// Target fraction of relevant documents.
    pub relevance_rate: f64,
    /// Share of the relevance latent noise that is drawn once per query
    /// (in [0, 1)). Larger values spread the relevant fraction across
    /// queries, making per-query relevance profiles heterogeneous.
    pub query_noise_share: f64,
    /// Drop queries that end up with no relevant candidates.
    pub filter_no_relevant: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_queries: 2000,
            candidates_per_query: 30,
            context_dim: 10,
            n_features: 30,
            zeta: 1.0,
            sigma: 0.35,
            relevance_rate: 0.3,
            query_noise_share: 0.6,
            filter_no_relevant: true,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::config("n_queries must be positive"));
        }
        if self.candidates_per_query == 0 {
            return Err(Error::config("candidates_per_query must be positive"));
        }
        if self.context_dim == 0 {
            return Err(Error::config("context_dim must be positive"));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features must be positive"));
        }
        if !(0.0..=1.0).contains(&self.zeta) || !is_near_integer(self.zeta * 10.0) {
            return Err(Error::config(format!(
                "zeta must lie on the grid 0.0, 0.1, ..., 1.0 (got {})",
                self.zeta
            )));
        }
        if !is_near_integer(self.zeta * self.context_dim as f64) {
            return Err(Error::config(format!(
                "zeta * context_dim must be integral (got {} * {})",
                self.zeta, self.context_dim
            )));
        }
        if !(self.relevance_rate > 0.0 && self.relevance_rate < 1.0) {
            return Err(Error::config(format!(
                "relevance_rate must lie in (0, 1) (got {})",
                self.relevance_rate
            )));
        }
        if !(0.0..1.0).contains(&self.query_noise_share) {
            return Err(Error::config(format!(
                "query_noise_share must lie in [0, 1) (got {})",
                self.query_noise_share
            )));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::config("sigma must be positive"));
        }
        Ok(())
    }

    /// Number of relevance-coupled context coordinates.
    pub fn relevant_part_len(&self) -> usize {
        (self.zeta * self.context_dim as f64).round() as usize
    }
}

fn is_near_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9
}

/// Relevance latent noise, relative to the norm of the latent weight vector.
const RELEVANCE_NOISE_FRAC: f64 = 0.5;

/// Size of the candidate pool for relevance-informative feature selection.
const FEATURE_CANDIDATE_POOL: usize = 30;

/// Queries sampled per ranker when fitting historic rankers.
const RANKER_SUBSET_SIZE: usize = 100;

/// Generate a synthetic corpus.
///
/// Documents get i.i.d. standard normal features; relevance is 1 iff a fixed
/// latent linear score of the features (plus noise) clears a threshold
/// calibrated so that `relevance_rate` of all documents are relevant.
/// Queries are partitioned 80/10/10 into train/validation/test, and each
/// query receives a context from [`build_context`]. Deterministic given the
/// seed: each query draws from its own derived random stream.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;

    let latent = gaussian_vector(
        &mut stream(config.seed, "relevance-weights", 0),
        config.n_features,
    );
    let latent_norm = latent.iter().map(|v| v * v).sum::<f64>().sqrt();
    let noise_std = RELEVANCE_NOISE_FRAC * latent_norm;
    // The latent noise splits into a per-query difficulty shift and a
    // per-document part, preserving the total noise variance.
    let query_std = noise_std * config.query_noise_share.sqrt();
    let doc_std = noise_std * (1.0 - config.query_noise_share).sqrt();
    let query_dist = Normal::new(0.0, query_std.max(1e-12)).expect("valid noise std");
    let doc_dist = Normal::new(0.0, doc_std.max(1e-12)).expect("valid noise std");

    // Pass 1: features and latent scores.
    let mut raw: Vec<(u64, Vec<Vec<f64>>, Vec<f64>)> = Vec::with_capacity(config.n_queries);
    let mut all_scores: Vec<f64> = Vec::with_capacity(config.n_queries * config.candidates_per_query);
    for qid in 0..config.n_queries as u64 {
        let mut rng = stream(config.seed, "query-docs", qid);
        let difficulty = if config.query_noise_share > 0.0 {
            query_dist.sample(&mut rng)
        } else {
            0.0
        };
        let mut feats = Vec::with_capacity(config.candidates_per_query);
        let mut scores = Vec::with_capacity(config.candidates_per_query);
        for _ in 0..config.candidates_per_query {
            let f = gaussian_vector(&mut rng, config.n_features);
            let s = dot(&latent, &f) + difficulty + doc_dist.sample(&mut rng);
            all_scores.push(s);
            feats.push(f);
            scores.push(s);
        }
        raw.push((qid, feats, scores));
    }

    // Threshold at the (1 - relevance_rate) quantile of the latent scores.
    all_scores.sort_by(f64::total_cmp);
    let n_docs = all_scores.len();
    let n_relevant = ((config.relevance_rate * n_docs as f64).round() as usize).clamp(1, n_docs);
    let threshold = all_scores[n_docs - n_relevant];

    // Pass 2: assemble queries, optionally dropping relevance-free ones.
    let mut queries = Vec::with_capacity(config.n_queries);
    for (qid, feats, scores) in raw {
        let candidates: Vec<Document> = feats
            .into_iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (features, score))| Document {
                doc_id: i as u64,
                features,
                relevance: score >= threshold,
            })
            .collect();
        let query = Query {
            query_id: qid,
            context: Vec::new(),
            candidates,
        };
        if config.filter_no_relevant && query.relevant_count() == 0 {
            continue;
        }
        queries.push(query);
    }

    let splits = assign_splits(queries.len());
    let mut corpus = Corpus {
        queries,
        splits,
        context_dim: config.context_dim,
        n_features: config.n_features,
    };

    let selected = select_relevant_features(
        &corpus,
        config.relevant_part_len(),
        derive_seed(config.seed, "feature-select", 0),
    )?;
    for i in 0..corpus.queries.len() {
        let qid = corpus.queries[i].query_id;
        let mut rng = stream(config.seed, "context", qid);
        let context = build_context(
            &corpus.queries[i].candidates,
            &selected,
            config.context_dim,
            config.zeta,
            config.sigma,
            &mut rng,
        )?;
        corpus.queries[i].context = context;
    }
    Ok(corpus)
}

/// 80/10/10 train/validation/test labels by query order.
pub(crate) fn assign_splits(n: usize) -> Vec<Split> {
    let n_train = (n as f64 * 0.8).floor() as usize;
    let n_val = (n as f64 * 0.1).floor() as usize;
    (0..n)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            }
        })
        .collect()
}

/// Build one query context of length `t`.
///
/// The first `zeta * t` coordinates are the averages of the relevant
/// documents' values on the selected features; the remaining coordinates are
/// i.i.d. `N(0, sigma^2)` draws from `rng`.
pub fn build_context(
    docs: &[Document],
    selected_features: &[usize],
    t: usize,
    zeta: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let relevant_len = (zeta * t as f64).round() as usize;
    if selected_features.len() != relevant_len {
        return Err(Error::config(format!(
            "expected {} selected features for zeta={}, t={}, got {}",
            relevant_len,
            zeta,
            t,
            selected_features.len()
        )));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::config("sigma must be positive"));
    }

    let relevant: Vec<&Document> = docs.iter().filter(|d| d.relevance).collect();
    if relevant_len > 0 && relevant.is_empty() {
        return Err(Error::input(
            "cannot build a relevance-coupled context for a query with no relevant documents",
        ));
    }

    let mut context = Vec::with_capacity(t);
    for &fid in selected_features {
        let sum: f64 = relevant.iter().map(|d| d.features[fid]).sum();
        context.push(sum / relevant.len() as f64);
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    for _ in relevant_len..t {
        context.push(noise.sample(rng));
    }
    Ok(context)
}

/// Pick `count` distinct relevance-informative feature ids.
///
/// Features are scored by the absolute Pearson correlation between their
/// values and document relevance over the train split; `count` ids are then
/// drawn uniformly without replacement from the top
/// [`FEATURE_CANDIDATE_POOL`] scorers. Deterministic given the seed.
pub fn select_relevant_features(corpus: &Corpus, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if count > corpus.n_features {
        return Err(Error::config(format!(
            "cannot select {} features from {}",
            count, corpus.n_features
        )));
    }
    let pool = FEATURE_CANDIDATE_POOL.min(corpus.n_features);
    if count > pool {
        return Err(Error::config(format!(
            "cannot select {} features from a candidate pool of {}",
            count, pool
        )));
    }

    let train_docs: Vec<&Document> = corpus
        .split_queries(Split::Train)
        .into_iter()
        .flat_map(|q| q.candidates.iter())
        .collect();
    if train_docs.is_empty() {
        return Err(Error::config("train split has no documents"));
    }

    let rel: Vec<f64> = train_docs
        .iter()
        .map(|d| if d.relevance { 1.0 } else { 0.0 })
        .collect();
    let mut scored: Vec<(f64, usize)> = (0..corpus.n_features)
        .map(|fid| {
            let values: Vec<f64> = train_docs.iter().map(|d| d.features[fid]).collect();
            (pearson(&values, &rel).abs(), fid)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut candidates: Vec<usize> = scored.into_iter().take(pool).map(|(_, fid)| fid).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first `count` slots end up uniform without
    // replacement.
    for i in 0..count {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
    }
    candidates.truncate(count);
    Ok(candidates)
}

/// Fit `m` deterministic linear rankers on overlapping train-query subsets.
///
/// Each ranker solves a ridge-regularized pairwise least-squares problem
/// (score gap of 1 between relevant and irrelevant candidates) on its own
/// sampled subset. `perturbation_scale` controls disagreement twice over:
/// it shrinks the shared fraction of the subsets and adds proportional
/// Gaussian noise to the fitted weights. At 0 all rankers are identical.
pub fn make_rankers(
    corpus: &Corpus,
    m: usize,
    perturbation_scale: f64,
    traffic: &[u64],
    seed: u64,
) -> Result<Vec<Ranker>> {
    if m == 0 {
        return Err(Error::config("ranker count m must be at least 1"));
    }
    if traffic.len() != m {
        return Err(Error::config(format!(
            "traffic has {} entries for {} rankers",
            traffic.len(),
            m
        )));
    }
    if traffic.contains(&0) {
        return Err(Error::config("every ranker needs traffic >= 1"));
    }
    if !perturbation_scale.is_finite() || perturbation_scale < 0.0 {
        return Err(Error::config("perturbation_scale must be finite and >= 0"));
    }

    let train = corpus.split_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::config("train split is empty"));
    }

    let subset_size = RANKER_SUBSET_SIZE.min(train.len());
    let shared = ((1.0 - perturbation_scale.min(1.0)) * subset_size as f64).round() as usize;

    let mut order = train.clone();
    shuffle(&mut order, &mut stream(seed, "ranker-base", 0));
    let base: Vec<usize> = order[..shared].to_vec();
    let remainder: Vec<usize> = order[shared..].to_vec();

    let mut rankers = Vec::with_capacity(m);
    #[allow(clippy::needless_range_loop)] // r also derives per-ranker seeds
    for r in 0..m {
        let mut subset = base.clone();
        if subset_size > shared && !remainder.is_empty() {
            let mut pool = remainder.clone();
            shuffle(&mut pool, &mut stream(seed, "ranker-extra", r as u64));
            subset.extend(pool.into_iter().take(subset_size - shared));
        }

        let mut weights = fit_pairwise_least_squares(corpus, &subset)?;
        if perturbation_scale > 0.0 {
            let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            let noise_std = perturbation_scale * norm / (corpus.n_features as f64).sqrt();
            let dist = Normal::new(0.0, noise_std.max(1e-12)).expect("valid noise std");
            let mut rng = stream(seed, "ranker-noise", r as u64);
            for w in &mut weights {
                *w += dist.sample(&mut rng);
            }
        }
        rankers.push(Ranker {
            ranker_id: r as u32,
            weights,
            traffic: traffic[r],
        });
    }
    Ok(rankers)
}

/// Least squares on (relevant - irrelevant) feature differences with target
/// margin 1: solve (sum dd^T + lambda I) w = sum d.
fn fit_pairwise_least_squares(corpus: &Corpus, query_indices: &[usize]) -> Result<Vec<f64>> {
    let f = corpus.n_features;
    let mut gram = vec![0.0; f * f];
    let mut rhs = vec![0.0; f];
    let mut n_pairs = 0u64;
    let mut diff = vec![0.0; f];

    for &qi in query_indices {
        let q = &corpus.queries[qi];
        for pos_doc in q.candidates.iter().filter(|d| d.relevance) {
            for neg_doc in q.candidates.iter().filter(|d| !d.relevance) {
                for (d, (a, b)) in diff
                    .iter_mut()
                    .zip(pos_doc.features.iter().zip(&neg_doc.features))
                {
                    *d = a - b;
                }
                for row in 0..f {
                    let d_row = diff[row];
                    if d_row == 0.0 {
                        continue;
                    }
                    let dst = &mut gram[row * f..(row + 1) * f];
                    for col in 0..f {
                        dst[col] += d_row * diff[col];
                    }
                    rhs[row] += d_row;
                }
                n_pairs += 1;
            }
        }
    }
    if n_pairs == 0 {
        return Err(Error::config(
            "sampled ranker-training subset contains no relevant/irrelevant document pairs",
        ));
    }

    let trace: f64 = (0..f).map(|i| gram[i * f + i]).sum();
    let ridge = 1e-6 * trace / f as f64 + 1e-12;
    for i in 0..f {
        gram[i * f + i] += ridge;
    }
    solve_linear_system(&mut gram, &mut rhs, f)?;
    Ok(rhs)
}

/// In-place Gaussian elimination with partial pivoting; solution left in `b`.
fn solve_linear_system(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::numeric("singular system in ranker fitting"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut sum = b[col];
        for k in (col + 1)..n {
            sum -= a[col * n + k] * b[k];
        }
        b[col] = sum / a[col * n + col];
    }
    Ok(())
}

fn shuffle(values: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..len).map(|_| normal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
