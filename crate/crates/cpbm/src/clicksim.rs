//! Click simulation under a contextual examination model.
//!
//! A displayed document is clicked iff it is examined and accepted:
//!
//! ```text
//! Pr(E=1 | k, x) = 1 / k^max(w.x + 1, 0)
//! Pr(C=1 | E=1)  = 1          if the document is relevant
//!                  eps_minus  otherwise (click noise)
//! ```
//!
//! Position 1 is always examined. The weight vector `w` is drawn uniformly
//! from `[-eta, eta)` per coordinate and mean-centered, so `eta` controls
//! how strongly examination depends on context (`eta = 0` reduces to the
//! context-free `1/k` curve).
//!
//! Two serving regimes produce logs: [`run_ab_test`] assigns each incoming
//! query to one of several rankers independently of its context, and
//! [`run_swap_experiment`] serves one ranker but swaps positions 1 and `k`
//! with probability 0.5 before presentation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Query, Ranker, Ranking, Split};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Ground-truth examination model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExaminationParams {
    /// Mean-centered context weights, length `t`.
    pub weights: Vec<f64>,
    /// Half-width of the pre-centering uniform draw.
    pub eta: f64,
}

impl ExaminationParams {
    /// Context-free `1/k` examination (eta = 0).
    pub fn context_free(t: usize) -> Self {
        ExaminationParams {
            weights: vec![0.0; t],
            eta: 0.0,
        }
    }

    /// True examination probability at 1-based position `k`:
    /// `1 / k^max(w.x + 1, 0)`.
    pub fn propensity(&self, context: &[f64], k: usize) -> f64 {
        assert!(k >= 1, "positions are 1-based");
        let wx: f64 = self.weights.iter().zip(context).map(|(w, x)| w * x).sum();
        let exponent = (wx + 1.0).max(0.0);
        (k as f64).powf(exponent).recip()
    }
}

/// Draw examination weights uniformly from `[-eta, eta)` and center them to
/// sum exactly to zero. Deterministic given the seed.
pub fn draw_examination_weights(eta: f64, t: usize, seed: u64) -> ExaminationParams {
    assert!(eta >= 0.0, "eta must be nonnegative");
    if eta == 0.0 {
        return ExaminationParams::context_free(t);
    }
    let mut rng = stream(seed, "examination-weights", 0);
    let mut weights: Vec<f64> = (0..t).map(|_| rng.random_range(-eta..eta)).collect();
    let mean = weights.iter().sum::<f64>() / t as f64;
    for w in &mut weights {
        *w -= mean;
    }
    ExaminationParams { weights, eta }
}

/// One displayed context-document pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub serving_index: u64,
    pub query_id: u64,
    /// Serving ranker (the base ranker for swap logs).
    pub ranker_id: u32,
    pub doc_id: u64,
    /// Displayed 1-based position.
    pub rank: usize,
    pub click: u8,
    /// Swap-arm tag: present only in swap logs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub swapped: Option<bool>,
}

/// Log-level metadata, persisted in the header record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub eta: f64,
    pub eps_minus: f64,
    pub seed: u64,
    /// Swap position for swap logs (paired with position 1).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_prime: Option<usize>,
}

/// A click log: one record per displayed position per serving.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
    /// Serving counts per ranker id (index = ranker_id).
    pub traffic: Vec<u64>,
    pub k_max: usize,
    pub meta: LogMeta,
}

impl ClickLog {
    pub fn n_servings(&self) -> u64 {
        self.traffic.iter().sum()
    }
}

/// Simulate clicks for one presented ranking. Returns `(doc_id, position,
/// click)` for every displayed position.
pub fn simulate_serving(
    query: &Query,
    ranking: &Ranking,
    params: &ExaminationParams,
    eps_minus: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(u64, usize, bool)> {
    debug_assert!((0.0..1.0).contains(&eps_minus));
    let mut out = Vec::with_capacity(ranking.len());
    for k in 1..=ranking.len() {
        let doc_id = ranking.doc_at(k);
        let doc = query
            .candidates
            .iter()
            .find(|d| d.doc_id == doc_id)
            .expect("ranked doc exists in candidates");
        let examined = rng.random::<f64>() < params.propensity(&query.context, k);
        let click = examined && (doc.relevance || rng.random::<f64>() < eps_minus);
        out.push((doc_id, k, click));
    }
    out
}

/// Serve `n_servings` queries sampled i.i.d. (with replacement) from the
/// split, assigning each serving to a ranker independently of the query.
///
/// The ranker choice being independent of the context is what makes the
/// traffic counts a valid assignment mechanism for intervention harvesting.
#[allow(clippy::too_many_arguments)]
pub fn run_ab_test(
    corpus: &Corpus,
    split: Split,
    rankers: &[Ranker],
    assignment_probs: &[f64],
    params: &ExaminationParams,
    eps_minus: f64,
    k_max: usize,
    n_servings: u64,
    seed: u64,
) -> Result<ClickLog> {
    if rankers.is_empty() {
        return Err(Error::config("run_ab_test needs at least one ranker"));
    }
    if assignment_probs.len() != rankers.len() {
        return Err(Error::config(format!(
            "assignment_probs has {} entries for {} rankers",
            assignment_probs.len(),
            rankers.len()
        )));
    }
    if assignment_probs.iter().any(|&p| p < 0.0)
        || (assignment_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::config("assignment_probs must be nonnegative and sum to 1"));
    }
    if !(0.0..1.0).contains(&eps_minus) {
        return Err(Error::config("eps_minus must lie in [0, 1)"));
    }
    let queries = corpus.split_queries(split);
    if queries.is_empty() {
        return Err(Error::config("serving split is empty"));
    }

    let cumulative: Vec<f64> = assignment_probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let mut records = Vec::new();
    let mut traffic = vec![0u64; rankers.len()];
    for serving in 0..n_servings {
        let mut rng = stream(seed, "serving", serving);
        let query = queries[rng.random_range(0..queries.len())];
        // Drawn independently of the query above.
        let u: f64 = rng.random();
        let arm = cumulative.iter().position(|&c| u < c).unwrap_or(rankers.len() - 1);
        traffic[arm] += 1;

        let ranking = rankers[arm].rank(query, k_max);
        for (doc_id, rank, click) in simulate_serving(query, &ranking, params, eps_minus, &mut rng)
        {
            records.push(ClickRecord {
                serving_index: serving,
                query_id: query.query_id,
                ranker_id: rankers[arm].ranker_id,
                doc_id,
                rank,
                click: u8::from(click),
                swapped: None,
            });
        }
    }

    Ok(ClickLog {
        records,
        traffic,
        k_max,
        meta: LogMeta {
            eta: params.eta,
            eps_minus,
            seed,
            k_prime: None,
        },
    })
}

/// Serve the split through `base` but swap positions 1 and `k_prime` with
/// probability 0.5 before presenting. Queries with fewer than `k_prime`
/// rankable candidates are excluded from sampling.
#[allow(clippy::too_many_arguments)]
pub fn run_swap_experiment(
    corpus: &Corpus,
    split: Split,
    base: &Ranker,
    k_prime: usize,
    params: &ExaminationParams,
    eps_minus: f64,
    k_max: usize,
    n_servings: u64,
    seed: u64,
) -> Result<ClickLog> {
    if k_prime < 1 || k_prime > k_max {
        return Err(Error::config(format!(
            "swap position {k_prime} out of range 1..={k_max}"
        )));
    }
    if !(0.0..1.0).contains(&eps_minus) {
        return Err(Error::config("eps_minus must lie in [0, 1)"));
    }
    let queries: Vec<&Query> = corpus
        .split_queries(split)
        .into_iter()
        .filter(|q| q.candidates.len() >= k_prime)
        .collect();
    if queries.is_empty() {
        return Err(Error::config(
            "no queries in the split have enough candidates for the swap",
        ));
    }

    let mut records = Vec::new();
    for serving in 0..n_servings {
        let mut rng = stream(seed, "swap-serving", serving);
        let query = queries[rng.random_range(0..queries.len())];
        let swap = rng.random::<f64>() < 0.5;

        let mut ranking = base.rank(query, k_max);
        if swap && k_prime <= ranking.len() {
            ranking.swap_positions(1, k_prime);
        }
        for (doc_id, rank, click) in simulate_serving(query, &ranking, params, eps_minus, &mut rng)
        {
            records.push(ClickRecord {
                serving_index: serving,
                query_id: query.query_id,
                ranker_id: base.ranker_id,
                doc_id,
                rank,
                click: u8::from(click),
                swapped: Some(swap),
            });
        }
    }

    Ok(ClickLog {
        records,
        traffic: vec![n_servings],
        k_max,
        meta: LogMeta {
            eta: params.eta,
            eps_minus,
            seed,
            k_prime: Some(k_prime),
        },
    })
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    traffic: Vec<u64>,
    k_max: usize,
    #[serde(flatten)]
    meta: LogMeta,
}

impl ClickLog {
    /// Write the log: a header line with traffic counts and simulation
    /// metadata, then one record per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = LogHeader {
            traffic: self.traffic.clone(),
            k_max: self.k_max,
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| Error::data(format!("log header serialization: {e}")))?;
        out.write_all(b"\n")?;
        for record in &self.records {
            serde_json::to_writer(&mut out, record)
                .map_err(|e| Error::data(format!("log record serialization: {e}")))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ClickLog> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::data("empty click log file"))??;
        let header: LogHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;

        let mut records = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ClickRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 2,
                msg: e.to_string(),
            })?;
            if record.rank < 1 || record.rank > header.k_max {
                return Err(Error::Parse {
                    line: idx + 2,
                    msg: format!("rank {} outside 1..={}", record.rank, header.k_max),
                });
            }
            records.push(record);
        }
        Ok(ClickLog {
            records,
            traffic: header.traffic,
            k_max: header.k_max,
            meta: header.meta,
        })
    }
}
