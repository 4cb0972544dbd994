//! IPS-weighted ranker training from click data.
//!
//! Clicked documents are positive signals whose strength is corrected by the
//! inverse of their (estimated) examination propensity, clipped at `1/tau`.
//! Training minimizes a weighted pairwise hinge objective over
//! (clicked document, other candidate) pairs:
//!
//! ```text
//! J(w) = sum_clicks  min(1/p, 1/tau) * sum_{d' != d} max(0, 1 - (w.f_d - w.f_d'))
//!        + (lambda/2) |w|^2
//! ```
//!
//! AvgRank on held-out queries closes the loop: better propensity estimates
//! should produce rankers closer to the true-propensity skyline.

use serde::{Deserialize, Serialize};

use crate::clicksim::{ClickLog, ExaminationParams};
use crate::corpus::{Corpus, Ranker, Split};
use crate::error::{Error, Result};
use crate::estimator::Model;

/// Hyper-parameters for [`train_ips_ranker`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpsTrainConfig {
    /// Propensity clip threshold tau: weights are capped at `1/tau`.
    pub clip_threshold: f64,
    /// L2 regularization strength.
    pub regularization: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Positions beyond this rank reuse its propensity; `None` = the log's
    /// k_max.
    pub tail_rank: Option<usize>,
}

impl Default for IpsTrainConfig {
    fn default() -> Self {
        IpsTrainConfig {
            clip_threshold: 0.1,
            regularization: 1e-3,
            learning_rate: 0.5,
            epochs: 120,
            seed: 1,
            tail_rank: None,
        }
    }
}

impl IpsTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.clip_threshold.is_nan() || self.clip_threshold <= 0.0 || self.clip_threshold > 1.0 {
            return Err(Error::config("clip_threshold must lie in (0, 1]"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.regularization < 0.0 {
            return Err(Error::config("regularization must be nonnegative"));
        }
        Ok(())
    }
}

/// Where propensity weights come from.
#[derive(Debug, Clone, Copy)]
pub enum PropensitySource<'a> {
    /// A fitted PBM/CPBM model.
    Estimated(&'a Model),
    /// The simulator's ground-truth examination parameters.
    True(&'a ExaminationParams),
    /// No reweighting (naive click training).
    Uniform,
}

impl PropensitySource<'_> {
    /// Anchor-normalized relative propensity at position `k` under context
    /// `x`.
    pub fn relative_propensity(&self, x: &[f64], k: usize) -> Result<f64> {
        match self {
            PropensitySource::Estimated(model) => {
                let ratios = model.relative_propensities(x)?;
                let idx = k.min(ratios.len());
                Ok(ratios[idx - 1])
            }
            PropensitySource::True(params) => Ok(params.propensity(x, k)),
            PropensitySource::Uniform => Ok(1.0),
        }
    }
}

/// Clipped inverse-propensity weight for a click at position `k`: positions
/// past `tail_rank` reuse the tail propensity, and the weight is capped at
/// `1 / tau`.
pub fn propensity_weight(
    source: &PropensitySource<'_>,
    x: &[f64],
    k: usize,
    tau: f64,
    tail_rank: usize,
) -> Result<f64> {
    let p = source.relative_propensity(x, k.min(tail_rank))?;
    Ok((1.0 / p).min(1.0 / tau))
}

/// Train a linear ranker by subgradient descent on the clipped IPS pairwise
/// hinge objective. Full-batch with step backtracking: the objective is
/// non-increasing across accepted epochs. Deterministic given the config.
struct ClickItem {
    query_idx: usize,
    doc_idx: usize,
    weight: f64,
}

/// Resolve every clicked record to (query, document) indices and its
/// clipped IPS weight.
fn collect_clicks(
    log: &ClickLog,
    source: &PropensitySource<'_>,
    corpus: &Corpus,
    config: &IpsTrainConfig,
) -> Result<Vec<ClickItem>> {
    let tail_rank = config.tail_rank.unwrap_or(log.k_max);
    let mut query_index: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    let mut clicks: Vec<ClickItem> = Vec::new();
    for record in log.records.iter().filter(|r| r.click == 1) {
        let query_idx = match query_index.entry(record.query_id) {
            std::collections::hash_map::Entry::Occupied(e) => *e.get(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let idx = corpus
                    .queries
                    .iter()
                    .position(|q| q.query_id == record.query_id)
                    .ok_or_else(|| {
                        Error::data(format!("log references unknown query {}", record.query_id))
                    })?;
                *e.insert(idx)
            }
        };
        let query = &corpus.queries[query_idx];
        let doc_idx = query
            .candidates
            .iter()
            .position(|d| d.doc_id == record.doc_id)
            .ok_or_else(|| {
                Error::data(format!(
                    "log references unknown doc {} in query {}",
                    record.doc_id, record.query_id
                ))
            })?;
        let weight = propensity_weight(
            source,
            &query.context,
            record.rank,
            config.clip_threshold,
            tail_rank,
        )?;
        clicks.push(ClickItem {
            query_idx,
            doc_idx,
            weight,
        });
    }
    if clicks.is_empty() {
        return Err(Error::data("cannot train a ranker: the log has no clicks"));
    }
    Ok(clicks)
}

/// Evaluate the clipped-IPS pairwise hinge objective of a weight vector.
pub fn ips_hinge_objective(
    weights: &[f64],
    log: &ClickLog,
    source: &PropensitySource<'_>,
    corpus: &Corpus,
    config: &IpsTrainConfig,
) -> Result<f64> {
    config.validate()?;
    let clicks = collect_clicks(log, source, corpus, config)?;
    Ok(hinge_objective_and_grad(weights, &clicks, corpus, config.regularization, None))
}

/// Shared objective/subgradient evaluation over the click items.
fn hinge_objective_and_grad(
    weights: &[f64],
    clicks: &[ClickItem],
    corpus: &Corpus,
    regularization: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n_features = corpus.n_features;
    let mut touched: Vec<usize> = clicks.iter().map(|c| c.query_idx).collect();
    touched.sort_unstable();
    touched.dedup();
    let mut scores: std::collections::HashMap<usize, Vec<f64>> =
        std::collections::HashMap::with_capacity(touched.len());
    for &qi in &touched {
        let q = &corpus.queries[qi];
        scores.insert(
            qi,
            q.candidates
                .iter()
                .map(|d| d.features.iter().zip(weights).map(|(f, w)| f * w).sum())
                .collect(),
        );
    }
    let mut value = 0.0;
    for click in clicks {
        let q = &corpus.queries[click.query_idx];
        let s = &scores[&click.query_idx];
        let s_pos = s[click.doc_idx];
        let f_pos = &q.candidates[click.doc_idx].features;
        for (j, other) in q.candidates.iter().enumerate() {
            if j == click.doc_idx {
                continue;
            }
            let margin = 1.0 - (s_pos - s[j]);
            if margin > 0.0 {
                value += click.weight * margin;
                if let Some(g) = grad.as_mut() {
                    for i in 0..n_features {
                        g[i] += click.weight * (other.features[i] - f_pos[i]);
                    }
                }
            }
        }
    }
    value += 0.5 * regularization * weights.iter().map(|w| w * w).sum::<f64>();
    if let Some(g) = grad.as_mut() {
        for i in 0..n_features {
            g[i] += regularization * weights[i];
        }
    }
    value
}

/// Train a linear ranker by subgradient descent on the clipped IPS pairwise
/// hinge objective. Full-batch with step backtracking: the objective is
/// non-increasing across accepted epochs. Deterministic given the config.
pub fn train_ips_ranker(
    log: &ClickLog,
    source: &PropensitySource<'_>,
    corpus: &Corpus,
    config: &IpsTrainConfig,
) -> Result<Ranker> {
    config.validate()?;
    let clicks = collect_clicks(log, source, corpus, config)?;
    let n_features = corpus.n_features;
    let mass: f64 = clicks
        .iter()
        .map(|c| c.weight * (corpus.queries[c.query_idx].candidates.len() - 1) as f64)
        .sum::<f64>()
        .max(1.0);

    let mut weights = vec![0.0; n_features];
    let mut grad = vec![0.0; n_features];
    let mut objective = hinge_objective_and_grad(&weights, &clicks, corpus, config.regularization, None);
    let mut step = config.learning_rate;
    let mut previous = weights.clone();

    for _epoch in 0..config.epochs {
        grad.fill(0.0);
        hinge_objective_and_grad(&weights, &clicks, corpus, config.regularization, Some(&mut grad));
        previous.copy_from_slice(&weights);
        let scale = step / mass;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
        let candidate =
            hinge_objective_and_grad(&weights, &clicks, corpus, config.regularization, None);
        if !candidate.is_finite() {
            return Err(Error::numeric("ranker training objective diverged"));
        }
        if candidate <= objective {
            objective = candidate;
            step = (step * 1.2).min(config.learning_rate * 64.0);
        } else {
            weights.copy_from_slice(&previous);
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }

    Ok(Ranker {
        ranker_id: 0,
        weights,
        traffic: 1,
    })
}

/// Mean over the split's queries of the summed ranks of relevant documents
/// under the ranker's full (untruncated) ranking. Lower is better.
pub fn avg_rank(ranker: &Ranker, corpus: &Corpus, split: Split) -> Result<f64> {
    let queries = corpus.split_queries(split);
    if queries.is_empty() {
        return Err(Error::input("avg_rank over an empty split"));
    }
    let mut total = 0.0;
    for query in &queries {
        let ranking = ranker.rank_full(query);
        let mut sum = 0.0;
        for (i, &doc_id) in ranking.doc_ids().iter().enumerate() {
            let doc = query
                .candidates
                .iter()
                .find(|d| d.doc_id == doc_id)
                .expect("ranked doc exists");
            if doc.relevance {
                sum += (i + 1) as f64;
            }
        }
        total += sum;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicksim::{draw_examination_weights, run_ab_test};
    use crate::corpus::{generate_corpus, make_rankers, CorpusConfig, Document, Query};
    use crate::estimator::{ModelFamily, PbmModel};

    #[test]
    fn weight_clipping_binds() {
        let truth = ExaminationParams::context_free(2);
        let source = PropensitySource::True(&truth);
        // p = 0.01 via position 100 at 1/k: clipped at 1/tau = 10.
        let w = propensity_weight(&source, &[0.0, 0.0], 100, 0.1, 200).unwrap();
        assert_eq!(w, 10.0);
        // p = 0.5 at position 2: unclipped weight 2.
        let w = propensity_weight(&source, &[0.0, 0.0], 2, 0.1, 200).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tail_rank_imputes_deep_positions() {
        let truth = ExaminationParams::context_free(2);
        let source = PropensitySource::True(&truth);
        // Position 25 with tail 21 uses p_21; tau small enough not to clip.
        let w = propensity_weight(&source, &[0.0, 0.0], 25, 0.01, 21).unwrap();
        assert!((w - 21.0).abs() < 1e-12);
    }

    #[test]
    fn weight_never_exceeds_clip_bound() {
        let model = crate::testutil::random_model(ModelFamily::Cpbm, 3, 8, 3);
        let source = PropensitySource::Estimated(&model);
        for k in 1..=12 {
            let x = vec![0.3, -0.8, 1.4];
            let w = propensity_weight(&source, &x, k, 0.2, 8).unwrap();
            assert!(w <= 5.0 + 1e-12);
        }
    }

    fn ltr_corpus(seed: u64) -> Corpus {
        generate_corpus(&CorpusConfig {
            n_queries: 120,
            candidates_per_query: 10,
            n_features: 15,
            zeta: 0.0,
            relevance_rate: 0.3,
            seed,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    fn click_log(corpus: &Corpus, seed: u64) -> ClickLog {
        let rankers = make_rankers(corpus, 2, 0.6, &[1, 1], seed).unwrap();
        let truth = draw_examination_weights(0.5, 10, seed + 1);
        run_ab_test(
            corpus,
            Split::Train,
            &rankers,
            &[0.5, 0.5],
            &truth,
            0.1,
            10,
            3000,
            seed + 2,
        )
        .unwrap()
    }

    #[test]
    fn training_without_clicks_errors() {
        let corpus = ltr_corpus(3);
        let mut log = click_log(&corpus, 4);
        for r in &mut log.records {
            r.click = 0;
        }
        let err =
            train_ips_ranker(&log, &PropensitySource::Uniform, &corpus, &Default::default())
                .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn uniform_source_equals_flat_model_weights() {
        // tau = 1 and a constant-propensity model weight every click by
        // exactly 1, matching the uniform source bit for bit.
        let corpus = ltr_corpus(5);
        let log = click_log(&corpus, 6);
        let cfg = IpsTrainConfig {
            clip_threshold: 1.0,
            epochs: 40,
            ..Default::default()
        };
        let flat = Model::Pbm(PbmModel::new(10)); // all propensities 0.5, ratios 1
        let a = train_ips_ranker(&log, &PropensitySource::Uniform, &corpus, &cfg).unwrap();
        let b = train_ips_ranker(&log, &PropensitySource::Estimated(&flat), &corpus, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn training_descends_the_hinge_objective() {
        let corpus = ltr_corpus(21);
        let log = click_log(&corpus, 22);
        let truth = draw_examination_weights(0.5, 10, 23);
        let source = PropensitySource::True(&truth);
        let cfg = IpsTrainConfig::default();
        let zero = vec![0.0; corpus.n_features];
        let j_zero = ips_hinge_objective(&zero, &log, &source, &corpus, &cfg).unwrap();
        let ranker = train_ips_ranker(&log, &source, &corpus, &cfg).unwrap();
        let j_trained = ips_hinge_objective(&ranker.weights, &log, &source, &corpus, &cfg).unwrap();
        assert!(
            j_trained < j_zero,
            "training did not reduce the objective: {j_trained} vs {j_zero}"
        );
    }

    #[test]
    fn trained_ranker_beats_reversed_ordering() {
        let corpus = ltr_corpus(7);
        let log = click_log(&corpus, 8);
        let truth = draw_examination_weights(0.5, 10, 9);
        let ranker = train_ips_ranker(
            &log,
            &PropensitySource::True(&truth),
            &corpus,
            &Default::default(),
        )
        .unwrap();
        let trained = avg_rank(&ranker, &corpus, Split::Test).unwrap();
        let reversed = Ranker {
            ranker_id: 1,
            weights: ranker.weights.iter().map(|w| -w).collect(),
            traffic: 1,
        };
        let anti = avg_rank(&reversed, &corpus, Split::Test).unwrap();
        assert!(
            trained < anti,
            "trained {trained} should beat reversed {anti}"
        );
    }

    #[test]
    fn avg_rank_known_values() {
        // One query, one relevant doc ranked first: 1.0.
        let query = Query {
            query_id: 0,
            context: vec![],
            candidates: vec![
                Document {
                    doc_id: 0,
                    features: vec![2.0],
                    relevance: true,
                },
                Document {
                    doc_id: 1,
                    features: vec![1.0],
                    relevance: false,
                },
            ],
        };
        let corpus = Corpus {
            queries: vec![query],
            splits: vec![Split::Test],
            context_dim: 0,
            n_features: 1,
        };
        let ranker = Ranker {
            ranker_id: 0,
            weights: vec![1.0],
            traffic: 1,
        };
        assert_eq!(avg_rank(&ranker, &corpus, Split::Test).unwrap(), 1.0);

        // Relevant docs at ranks 2 and 5 sum to 7.
        let query = Query {
            query_id: 0,
            context: vec![],
            candidates: (0..5)
                .map(|i| Document {
                    doc_id: i,
                    features: vec![-(i as f64)],
                    relevance: i == 1 || i == 4,
                })
                .collect(),
        };
        let corpus = Corpus {
            queries: vec![query],
            splits: vec![Split::Test],
            context_dim: 0,
            n_features: 1,
        };
        assert_eq!(avg_rank(&ranker, &corpus, Split::Test).unwrap(), 7.0);
    }

    #[test]
    fn random_ranker_expectation_matches_enumeration() {
        // With 1 relevant doc among n = 4, the average rank over all score
        // permutations is (n + 1) / 2.
        let n = 4;
        let query = Query {
            query_id: 0,
            context: vec![],
            candidates: (0..n)
                .map(|i| {
                    // One-hot features so a weight permutation fixes scores.
                    let mut f = vec![0.0; n as usize];
                    f[i as usize] = 1.0;
                    Document {
                        doc_id: i,
                        features: f,
                        relevance: i == 2,
                    }
                })
                .collect(),
        };
        let corpus = Corpus {
            queries: vec![query],
            splits: vec![Split::Test],
            context_dim: 0,
            n_features: n as usize,
        };

        // Enumerate all 4! score assignments.
        let mut perms: Vec<Vec<f64>> = Vec::new();
        let mut scores: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        permutations(&mut scores, 0, &mut perms);
        assert_eq!(perms.len(), 24);
        let total: f64 = perms
            .iter()
            .map(|weights| {
                let ranker = Ranker {
                    ranker_id: 0,
                    weights: weights.clone(),
                    traffic: 1,
                };
                avg_rank(&ranker, &corpus, Split::Test).unwrap()
            })
            .sum();
        let mean = total / perms.len() as f64;
        assert!((mean - (n as f64 + 1.0) / 2.0).abs() < 1e-12);
    }

    fn permutations(values: &mut Vec<f64>, start: usize, out: &mut Vec<Vec<f64>>) {
        if start == values.len() {
            out.push(values.clone());
            return;
        }
        for i in start..values.len() {
            values.swap(start, i);
            permutations(values, start + 1, out);
            values.swap(start, i);
        }
    }

    #[test]
    fn avg_rank_invariant_to_monotone_score_transform() {
        let corpus = ltr_corpus(11);
        let ranker = Ranker {
            ranker_id: 0,
            weights: (0..15).map(|i| ((i * 7) as f64 * 0.13).sin()).collect(),
            traffic: 1,
        };
        let scaled = Ranker {
            ranker_id: 1,
            weights: ranker.weights.iter().map(|w| 3.5 * w).collect(),
            traffic: 1,
        };
        let a = avg_rank(&ranker, &corpus, Split::Test).unwrap();
        let b = avg_rank(&scaled, &corpus, Split::Test).unwrap();
        assert_eq!(a, b);
    }
}
