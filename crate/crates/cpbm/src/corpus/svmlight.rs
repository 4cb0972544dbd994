//! svmlight-style ranking file ingestion.
//!
//! One document per line: `<grade> qid:<id> <fid>:<val> ... [# comment]`.
//! Feature ids are 1-based and must be strictly increasing within a line;
//! grades at or above the cutoff (default 2) binarize to relevant. Queries
//! group by qid in order of first appearance and are labeled 80/10/10
//! train/validation/test. Contexts are left empty for a later
//! `build_context` pass.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{assign_splits, Corpus, Document, Query};
use crate::error::{Error, Result};

/// Default binarization cutoff: grade >= 2 is relevant.
pub const DEFAULT_GRADE_CUTOFF: f64 = 2.0;

pub fn ingest_svmlight(path: impl AsRef<Path>) -> Result<Corpus> {
    ingest_svmlight_with_cutoff(path, DEFAULT_GRADE_CUTOFF)
}

pub fn ingest_svmlight_with_cutoff(path: impl AsRef<Path>, cutoff: f64) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);

    // (qid, docs) in first-appearance order.
    let mut groups: Vec<(u64, Vec<Document>)> = Vec::new();
    let mut group_of: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    let mut max_fid = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();

        let grade: f64 = tokens
            .next()
            .expect("non-empty line has a first token")
            .parse()
            .map_err(|_| parse_err(line_no, "grade is not a number"))?;

        let qid_token = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing qid field"))?;
        let qid: u64 = qid_token
            .strip_prefix("qid:")
            .ok_or_else(|| parse_err(line_no, "second token must be qid:<id>"))?
            .parse()
            .map_err(|_| parse_err(line_no, "qid is not an integer"))?;

        let mut pairs: Vec<(usize, f64)> = Vec::new();
        let mut prev_fid = 0usize;
        for tok in tokens {
            let (fid_str, val_str) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("malformed feature `{tok}`")))?;
            let fid: usize = fid_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("feature id `{fid_str}` is not an integer")))?;
            if fid == 0 {
                return Err(parse_err(line_no, "feature ids are 1-based"));
            }
            if fid <= prev_fid {
                return Err(parse_err(
                    line_no,
                    format!("feature ids must be strictly increasing (saw {fid} after {prev_fid})"),
                ));
            }
            let val: f64 = val_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("feature value `{val_str}` is not a number")))?;
            pairs.push((fid, val));
            prev_fid = fid;
        }
        max_fid = max_fid.max(prev_fid);

        let group = *group_of.entry(qid).or_insert_with(|| {
            groups.push((qid, Vec::new()));
            groups.len() - 1
        });
        let mut features = Vec::with_capacity(prev_fid);
        for (fid, val) in pairs {
            features.resize(fid, 0.0);
            features[fid - 1] = val;
        }
        groups[group].1.push(Document {
            doc_id: line_no as u64,
            features,
            relevance: grade >= cutoff,
        });
    }

    // Densify every document to the global feature dimension.
    let mut queries = Vec::with_capacity(groups.len());
    for (qid, mut docs) in groups {
        for d in &mut docs {
            d.features.resize(max_fid, 0.0);
        }
        queries.push(Query {
            query_id: qid,
            context: Vec::new(),
            candidates: docs,
        });
    }

    let splits = assign_splits(queries.len());
    Ok(Corpus {
        queries,
        splits,
        context_dim: 0,
        n_features: max_fid,
    })
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}
