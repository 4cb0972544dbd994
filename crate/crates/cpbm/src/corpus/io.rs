//! Corpus persistence: one JSON record per line, one line per query.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Query, Split};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DocRecord {
    doc_id: u64,
    features: Vec<f64>,
    relevance: u8,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    query_id: u64,
    context: Vec<f64>,
    docs: Vec<DocRecord>,
    split: Split,
}

impl Corpus {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (query, &split) in self.queries.iter().zip(&self.splits) {
            let record = QueryRecord {
                query_id: query.query_id,
                context: query.context.clone(),
                docs: query
                    .candidates
                    .iter()
                    .map(|d| DocRecord {
                        doc_id: d.doc_id,
                        features: d.features.clone(),
                        relevance: u8::from(d.relevance),
                    })
                    .collect(),
                split,
            };
            serde_json::to_writer(&mut out, &record)
                .map_err(|e| Error::data(format!("corpus serialization: {e}")))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        let reader = BufReader::new(File::open(path)?);
        let mut queries = Vec::new();
        let mut splits = Vec::new();
        let mut context_dim = 0usize;
        let mut n_features = 0usize;

        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: QueryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;

            let mut seen = std::collections::HashSet::new();
            for d in &record.docs {
                if d.relevance > 1 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("relevance must be 0 or 1, got {}", d.relevance),
                    });
                }
                if !seen.insert(d.doc_id) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("duplicate doc_id {} within query", d.doc_id),
                    });
                }
                if d.features.iter().any(|f| !f.is_finite()) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "non-finite document feature".into(),
                    });
                }
                n_features = n_features.max(d.features.len());
            }
            context_dim = context_dim.max(record.context.len());

            queries.push(Query {
                query_id: record.query_id,
                context: record.context,
                candidates: record
                    .docs
                    .into_iter()
                    .map(|d| Document {
                        doc_id: d.doc_id,
                        features: d.features,
                        relevance: d.relevance == 1,
                    })
                    .collect(),
            });
            splits.push(record.split);
        }

        Ok(Corpus {
            queries,
            splits,
            context_dim,
            n_features,
        })
    }
}

/// Save rankers as a single JSON document.
pub fn save_rankers(rankers: &[crate::corpus::Ranker], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, rankers)
        .map_err(|e| Error::data(format!("ranker serialization: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_rankers(path: impl AsRef<Path>) -> Result<Vec<crate::corpus::Ranker>> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::data(format!("ranker file: {e}")))
}
