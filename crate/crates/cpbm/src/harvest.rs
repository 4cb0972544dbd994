//! Intervention harvesting from multi-ranker click logs.
//!
//! When several deterministic rankers serve traffic and the ranker choice is
//! independent of the query, the log contains implicit position
//! interventions: a document that ranker `f` puts at position `k` and ranker
//! `f'` puts at position `k'` was effectively randomized between the two
//! positions. The interventional set for a position pair is
//!
//! ```text
//! S[k,k'] = { (x, d) : exists f, f' with rank(d|f(x)) = k and rank(d|f'(x)) = k' }
//! ```
//!
//! and the probability that the logging system showed `d` at `k` is the
//! traffic-weighted assignment
//!
//! ```text
//! q_k(x, d) = sum_i n_i * 1[rank(d|f_i(x)) = k] / sum_i n_i.
//! ```
//!
//! Each logged record `(x, d, k, c)` then yields, for every other attainable
//! position `k'`, an IPS-corrected label pair
//!
//! ```text
//! c_hat     = c / q_k(x, d)
//! not_c_hat = (1 - c) / q_k(x, d)
//! ```
//!
//! whose per-context expectations are `p_k(x) * r[k,k'](x)` and its
//! complement, where `r[k,k'](x)` is the average relevance over the
//! interventional set. These labels feed the AllPairs objective in
//! [`crate::estimator`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clicksim::ClickLog;
use crate::corpus::{Corpus, Query, Ranker};
use crate::error::{Error, Result};

/// Set of attainable 1-based positions, as a bitmask (positions <= 32).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PositionMask(u32);

impl PositionMask {
    pub fn add(&mut self, k: usize) {
        debug_assert!((1..=32).contains(&k));
        self.0 |= 1 << (k - 1);
    }

    pub fn contains(&self, k: usize) -> bool {
        (1..=32).contains(&k) && self.0 & (1 << (k - 1)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Iterate attainable positions in increasing order.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=32).filter(|&k| self.contains(k))
    }
}

/// Per-document placement under the full ranker set: attainable positions
/// and their traffic-weighted assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub mask: PositionMask,
    /// `(position, q_k)` pairs, ascending by position.
    pub weights: Vec<(usize, f64)>,
}

impl Placement {
    pub fn weight_at(&self, k: usize) -> f64 {
        self.weights
            .iter()
            .find(|&&(pos, _)| pos == k)
            .map_or(0.0, |&(_, w)| w)
    }
}

/// Compute the placements of every candidate of `query` under all rankers,
/// restricted to the top `k_max` positions.
pub fn doc_placements(rankers: &[Ranker], query: &Query, k_max: usize) -> HashMap<u64, Placement> {
    let total_traffic: u64 = rankers.iter().map(|r| r.traffic).sum();
    let mut counts: HashMap<u64, Vec<(usize, u64)>> = HashMap::new();
    for ranker in rankers {
        let ranking = ranker.rank(query, k_max);
        for k in 1..=ranking.len() {
            let doc_id = ranking.doc_at(k);
            let entry = counts.entry(doc_id).or_default();
            match entry.iter_mut().find(|(pos, _)| *pos == k) {
                Some((_, n)) => *n += ranker.traffic,
                None => entry.push((k, ranker.traffic)),
            }
        }
    }

    counts
        .into_iter()
        .map(|(doc_id, mut entries)| {
            entries.sort_unstable_by_key(|&(pos, _)| pos);
            let mut mask = PositionMask::default();
            let weights = entries
                .into_iter()
                .map(|(pos, n)| {
                    mask.add(pos);
                    (pos, n as f64 / total_traffic as f64)
                })
                .collect();
            (doc_id, Placement { mask, weights })
        })
        .collect()
}

/// Interventional-set membership for every (query, document) pair.
#[derive(Debug, Clone, Default)]
pub struct InterventionalIndex {
    per_query: HashMap<u64, HashMap<u64, PositionMask>>,
}

impl InterventionalIndex {
    /// Attainable positions of `(query, doc)`; empty if never displayed.
    pub fn attainable(&self, query_id: u64, doc_id: u64) -> PositionMask {
        self.per_query
            .get(&query_id)
            .and_then(|docs| docs.get(&doc_id))
            .copied()
            .unwrap_or_default()
    }

    /// Whether `(query, doc)` belongs to the interventional set S[k, k'].
    /// Symmetric in `(k, k')`; requires `k != k'` to be meaningful.
    pub fn in_set(&self, query_id: u64, doc_id: u64, k: usize, k_prime: usize) -> bool {
        let mask = self.attainable(query_id, doc_id);
        mask.contains(k) && mask.contains(k_prime)
    }
}

/// Build interventional-set memberships by re-ranking each query's
/// candidates under all rankers.
pub fn build_interventional_index<'a>(
    rankers: &[Ranker],
    queries: impl IntoIterator<Item = &'a Query>,
    k_max: usize,
) -> InterventionalIndex {
    let mut per_query = HashMap::new();
    for query in queries {
        let docs = doc_placements(rankers, query, k_max)
            .into_iter()
            .map(|(doc_id, placement)| (doc_id, placement.mask))
            .collect();
        per_query.insert(query.query_id, docs);
    }
    InterventionalIndex { per_query }
}

/// Traffic-weighted assignment probabilities q_k(x, d).
#[derive(Debug, Clone, Default)]
pub struct AssignmentWeights {
    per_query: HashMap<u64, HashMap<u64, Placement>>,
}

impl AssignmentWeights {
    pub fn weight(&self, query_id: u64, doc_id: u64, k: usize) -> f64 {
        self.per_query
            .get(&query_id)
            .and_then(|docs| docs.get(&doc_id))
            .map_or(0.0, |p| p.weight_at(k))
    }

    pub fn placement(&self, query_id: u64, doc_id: u64) -> Option<&Placement> {
        self.per_query.get(&query_id).and_then(|d| d.get(&doc_id))
    }
}

/// Compute q_k(x, d) for every candidate of every query. Traffic volumes are
/// taken from the rankers.
pub fn compute_assignment_weights<'a>(
    rankers: &[Ranker],
    queries: impl IntoIterator<Item = &'a Query>,
    k_max: usize,
) -> AssignmentWeights {
    let mut per_query = HashMap::new();
    for query in queries {
        per_query.insert(query.query_id, doc_placements(rankers, query, k_max));
    }
    AssignmentWeights { per_query }
}

/// One sparse AllPairs label entry derived from a click record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    /// Index of the originating record within the dataset.
    pub record_index: usize,
    /// Displayed position of the record (the `k` in `c_hat[k,k'](k)`).
    pub k: usize,
    /// The paired position.
    pub k_prime: usize,
    pub c_hat: f64,
    pub not_c_hat: f64,
}

/// IPS label entries for a single click record: one per position `k'` that
/// the pair could also have attained. Entries for other pairs are zero and
/// never materialized. Errors if no ranker assigns the served position
/// (which would mean q = 0 for an observed record).
pub fn make_ips_labels(
    query_id: u64,
    doc_id: u64,
    position: usize,
    click: bool,
    index: &InterventionalIndex,
    weights: &AssignmentWeights,
) -> Result<Vec<(usize, usize, f64, f64)>> {
    let mask = index.attainable(query_id, doc_id);
    if !mask.contains(position) {
        return Err(Error::data(format!(
            "record (query {query_id}, doc {doc_id}) was served at position {position} \
             but no ranker places it there; the serving ranker must contribute to q"
        )));
    }
    let q = weights.weight(query_id, doc_id, position);
    debug_assert!(q > 0.0);
    let c_hat = if click { 1.0 / q } else { 0.0 };
    let not_c_hat = if click { 0.0 } else { 1.0 / q };
    Ok(mask
        .positions()
        .filter(|&k_prime| k_prime != position)
        .map(|k_prime| (position, k_prime, c_hat, not_c_hat))
        .collect())
}

/// A harvested record: everything the AllPairs objective needs, stored once
/// per click record instead of once per label entry. The entries for pairs
/// `(k^j, k')` are reconstructed from the attainable-position mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestRecord {
    pub query_id: u64,
    pub doc_id: u64,
    /// Serving index in the source log (query-level bootstrap key).
    pub serving_index: u64,
    /// Index into [`HarvestDataset::contexts`].
    pub context_id: u32,
    /// Displayed position `k^j`.
    pub position: usize,
    pub clicked: bool,
    /// `1 / q_{k^j}(x, d)`.
    pub ips_weight: f64,
    /// All positions attainable under the ranker set.
    pub attainable: PositionMask,
}

/// Harvested intervention data: deduplicated contexts plus one record per
/// click-log record that belongs to at least one interventional pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HarvestDataset {
    pub k_max: usize,
    /// Unique contexts, indexed by `HarvestRecord::context_id`.
    pub contexts: Vec<Vec<f64>>,
    pub records: Vec<HarvestRecord>,
}

impl HarvestDataset {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.first().map_or(0, Vec::len)
    }

    /// Total number of materialized label entries.
    pub fn n_entries(&self) -> usize {
        self.records.iter().map(|r| r.attainable.len() - 1).sum()
    }

    pub fn context_of(&self, record: &HarvestRecord) -> &[f64] {
        &self.contexts[record.context_id as usize]
    }

    /// Iterate all sparse label entries.
    pub fn entries(&self) -> impl Iterator<Item = LabelEntry> + '_ {
        self.records.iter().enumerate().flat_map(|(idx, r)| {
            let (c_hat, not_c_hat) = if r.clicked {
                (r.ips_weight, 0.0)
            } else {
                (0.0, r.ips_weight)
            };
            r.attainable
                .positions()
                .filter(move |&k_prime| k_prime != r.position)
                .map(move |k_prime| LabelEntry {
                    record_index: idx,
                    k: r.position,
                    k_prime,
                    c_hat,
                    not_c_hat,
                })
        })
    }

    /// Entry counts per unordered position pair, for sparsity reporting.
    pub fn pair_counts(&self) -> BTreeMap<(usize, usize), u64> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            for k_prime in r.attainable.positions() {
                if k_prime == r.position {
                    continue;
                }
                let key = (r.position.min(k_prime), r.position.max(k_prime));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Split records by predicate into (matching, rest), sharing the context
    /// table. Used to carve a validation set out of a harvested log.
    pub fn split_records(&self, keep_left: impl Fn(&HarvestRecord) -> bool) -> (Self, Self) {
        let mut left = HarvestDataset {
            k_max: self.k_max,
            contexts: self.contexts.clone(),
            records: Vec::new(),
        };
        let mut right = HarvestDataset {
            k_max: self.k_max,
            contexts: self.contexts.clone(),
            records: Vec::new(),
        };
        for r in &self.records {
            if keep_left(r) {
                left.records.push(r.clone());
            } else {
                right.records.push(r.clone());
            }
        }
        (left, right)
    }
}

/// Harvest interventional data from a multi-ranker click log.
///
/// Records whose (query, doc) pair is attainable at only one position carry
/// no pairwise information and are dropped.
pub fn harvest(log: &ClickLog, rankers: &[Ranker], corpus: &Corpus) -> Result<HarvestDataset> {
    let known: std::collections::HashSet<u32> = rankers.iter().map(|r| r.ranker_id).collect();

    let mut contexts: Vec<Vec<f64>> = Vec::new();
    let mut context_of_query: HashMap<u64, u32> = HashMap::new();
    let mut placements_of_query: HashMap<u64, HashMap<u64, Placement>> = HashMap::new();
    let mut records = Vec::new();

    for record in &log.records {
        if !known.contains(&record.ranker_id) {
            return Err(Error::data(format!(
                "click log references unknown ranker {}",
                record.ranker_id
            )));
        }
        let query = corpus.query_by_id(record.query_id).ok_or_else(|| {
            Error::data(format!(
                "click log references unknown query {}",
                record.query_id
            ))
        })?;

        let context_id = *context_of_query.entry(record.query_id).or_insert_with(|| {
            contexts.push(query.context.clone());
            (contexts.len() - 1) as u32
        });
        let placements = placements_of_query
            .entry(record.query_id)
            .or_insert_with(|| doc_placements(rankers, query, log.k_max));

        let placement = placements.get(&record.doc_id).ok_or_else(|| {
            Error::data(format!(
                "doc {} of query {} is not ranked in the top {} by any ranker",
                record.doc_id, record.query_id, log.k_max
            ))
        })?;
        if !placement.mask.contains(record.rank) {
            return Err(Error::data(format!(
                "record (query {}, doc {}) served at position {} which no ranker assigns; \
                 was the log produced by these rankers?",
                record.query_id, record.doc_id, record.rank
            )));
        }
        if placement.mask.len() < 2 {
            continue; // No interventional pair; contributes nothing.
        }
        let q = placement.weight_at(record.rank);
        records.push(HarvestRecord {
            query_id: record.query_id,
            doc_id: record.doc_id,
            serving_index: record.serving_index,
            context_id,
            position: record.rank,
            clicked: record.click == 1,
            ips_weight: 1.0 / q,
            attainable: placement.mask,
        });
    }

    Ok(HarvestDataset {
        k_max: log.k_max,
        contexts,
        records,
    })
}

/// Grouped counts for one context bucket and ordered position pair (k, k').
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupCell {
    /// Number of records of the bucket whose pair is in S[k, k'], regardless
    /// of where they were served.
    pub n_hat: u64,
    /// Mean IPS click label over those records: sum c_hat / n_hat.
    pub y_hat: f64,
    /// Mean IPS no-click label: sum not_c_hat / n_hat.
    pub not_y_hat: f64,
}

/// Per-context grouped form of a harvested dataset.
#[derive(Debug, Clone, Default)]
pub struct GroupedCounts {
    /// One representative context per bucket.
    pub buckets: Vec<Vec<f64>>,
    /// (bucket, k, k') -> cell, for ordered pairs k != k' with n_hat > 0.
    pub cells: BTreeMap<(usize, usize, usize), GroupCell>,
}

impl GroupedCounts {
    pub fn cell(&self, bucket: usize, k: usize, k_prime: usize) -> Option<&GroupCell> {
        self.cells.get(&(bucket, k, k_prime))
    }
}

/// Group a harvested dataset by exact context equality.
///
/// `n_hat` counts every record whose pair belongs to S[k, k'] at that
/// context; the label sums only collect from records actually served at `k`.
pub fn group_counts(dataset: &HarvestDataset) -> GroupedCounts {
    group_counts_by(dataset, |context| {
        context.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
    })
}

/// Group with a custom context bucketing key.
pub fn group_counts_by<K: Ord>(
    dataset: &HarvestDataset,
    bucket_key: impl Fn(&[f64]) -> K,
) -> GroupedCounts {
    let mut bucket_ids: BTreeMap<K, usize> = BTreeMap::new();
    let mut buckets: Vec<Vec<f64>> = Vec::new();
    let mut sums: BTreeMap<(usize, usize, usize), (u64, f64, f64)> = BTreeMap::new();

    for record in &dataset.records {
        let context = dataset.context_of(record);
        let key = bucket_key(context);
        let bucket = *bucket_ids.entry(key).or_insert_with(|| {
            buckets.push(context.to_vec());
            buckets.len() - 1
        });

        let positions: Vec<usize> = record.attainable.positions().collect();
        for &k in &positions {
            for &k_prime in &positions {
                if k == k_prime {
                    continue;
                }
                let cell = sums.entry((bucket, k, k_prime)).or_insert((0, 0.0, 0.0));
                cell.0 += 1;
                if record.position == k {
                    if record.clicked {
                        cell.1 += record.ips_weight;
                    } else {
                        cell.2 += record.ips_weight;
                    }
                }
            }
        }
    }

    let cells = sums
        .into_iter()
        .map(|(key, (n, c_sum, not_c_sum))| {
            (
                key,
                GroupCell {
                    n_hat: n,
                    y_hat: c_sum / n as f64,
                    not_y_hat: not_c_sum / n as f64,
                },
            )
        })
        .collect();
    GroupedCounts { buckets, cells }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DatasetLine {
    Header {
        k_max: usize,
        n_contexts: usize,
        n_records: usize,
    },
    Context {
        context_id: u32,
        x: Vec<f64>,
    },
    Record {
        record_index: usize,
        query_id: u64,
        doc_id: u64,
        serving_index: u64,
        context_id: u32,
        position: usize,
        clicked: u8,
        ips_weight: f64,
        attainable: Vec<usize>,
    },
    Entry(LabelEntry),
    Footer {
        n_entries: usize,
        /// Entries per unordered pair, keyed "k,k'".
        pair_counts: BTreeMap<String, u64>,
    },
}

impl HarvestDataset {
    /// Write the dataset: header, context table, records, sparse label
    /// entries, and a summary footer with per-pair entry counts.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let write = |out: &mut BufWriter<File>, line: &DatasetLine| -> Result<()> {
            serde_json::to_writer(&mut *out, line)
                .map_err(|e| Error::data(format!("dataset serialization: {e}")))?;
            out.write_all(b"\n")?;
            Ok(())
        };

        write(
            &mut out,
            &DatasetLine::Header {
                k_max: self.k_max,
                n_contexts: self.contexts.len(),
                n_records: self.records.len(),
            },
        )?;
        for (i, x) in self.contexts.iter().enumerate() {
            write(
                &mut out,
                &DatasetLine::Context {
                    context_id: i as u32,
                    x: x.clone(),
                },
            )?;
        }
        for (i, r) in self.records.iter().enumerate() {
            write(
                &mut out,
                &DatasetLine::Record {
                    record_index: i,
                    query_id: r.query_id,
                    doc_id: r.doc_id,
                    serving_index: r.serving_index,
                    context_id: r.context_id,
                    position: r.position,
                    clicked: u8::from(r.clicked),
                    ips_weight: r.ips_weight,
                    attainable: r.attainable.positions().collect(),
                },
            )?;
        }
        for entry in self.entries() {
            write(&mut out, &DatasetLine::Entry(entry))?;
        }
        write(
            &mut out,
            &DatasetLine::Footer {
                n_entries: self.n_entries(),
                pair_counts: self
                    .pair_counts()
                    .into_iter()
                    .map(|((k, kp), n)| (format!("{k},{kp}"), n))
                    .collect(),
            },
        )?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HarvestDataset> {
        let reader = BufReader::new(File::open(path)?);
        let mut dataset = HarvestDataset::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            match parsed {
                DatasetLine::Header { k_max, .. } => dataset.k_max = k_max,
                DatasetLine::Context { context_id, x } => {
                    if context_id as usize != dataset.contexts.len() {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: "context ids must be dense and ordered".into(),
                        });
                    }
                    dataset.contexts.push(x);
                }
                DatasetLine::Record {
                    query_id,
                    doc_id,
                    serving_index,
                    context_id,
                    position,
                    clicked,
                    ips_weight,
                    attainable,
                    ..
                } => {
                    let mut mask = PositionMask::default();
                    for k in attainable {
                        mask.add(k);
                    }
                    dataset.records.push(HarvestRecord {
                        query_id,
                        doc_id,
                        serving_index,
                        context_id,
                        position,
                        clicked: clicked == 1,
                        ips_weight,
                        attainable: mask,
                    });
                }
                DatasetLine::Entry(_) | DatasetLine::Footer { .. } => {}
            }
        }
        Ok(dataset)
    }
}
