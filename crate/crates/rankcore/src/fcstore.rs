//! On-disk FC store: `<root>/<operator>/<sample>.csv` plus `<root>/index.json`.
//!
//! Every file is written atomically. A rerun skips pairs whose file exists
//! unless the operator's parameters changed or `force` is set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rankcore_core::benchmark::SampleLabels;
use rankcore_core::dataset::Dataset;
use rankcore_core::spi::{compute_fc, FcTable, SpiOperator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::fsutil::{encode_name, read_json, write_json};

pub const INDEX: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedPair {
    pub operator: String,
    pub sample_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FcIndex {
    pub labels: SampleLabels,
    pub operators: BTreeMap<String, SpiOperator>,
    /// Completed sample ids per operator.
    pub completed: BTreeMap<String, BTreeSet<String>>,
    /// Rows flagged as zero-variance per operator and sample.
    pub degenerate_rows: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    pub failed: Vec<FailedPair>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn pair_path(root: &Path, operator: &str, sample_id: &str) -> PathBuf {
    root.join(encode_name(operator)).join(format!("{}.csv", encode_name(sample_id)))
}

pub fn load_index(root: &Path) -> Result<FcIndex> {
    read_json(&root.join(INDEX))
}

/// Worker pool capped at `jobs` threads (0 = rayon's default).
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

/// Computes every missing (operator, sample) pair of `d` into `root`.
/// Per-pair failures are recorded in the index, never fatal.
pub fn compute_store(d: &Dataset, ops: &[SpiOperator], root: &Path, force: bool, jobs: usize) -> Result<StoreSummary> {
    let index_path = root.join(INDEX);
    let mut index = if index_path.exists() { load_index(root)? } else { FcIndex::default() };
    let labels = SampleLabels::from_dataset(d);
    if index.labels != labels {
        // A different dataset invalidates everything stored so far.
        index = FcIndex { labels, ..FcIndex::default() };
    }
    let mut todo = Vec::new();
    let mut summary = StoreSummary::default();
    for op in ops {
        let stale = force || index.operators.get(&op.name) != Some(op);
        if stale {
            index.completed.remove(&op.name);
            index.degenerate_rows.remove(&op.name);
        }
        index.failed.retain(|f| f.operator != op.name);
        index.operators.insert(op.name.clone(), op.clone());
        let done = index.completed.entry(op.name.clone()).or_default();
        for s in &d.samples {
            if done.contains(&s.sample_id) && pair_path(root, &op.name, &s.sample_id).exists() {
                summary.skipped += 1;
            } else {
                done.remove(&s.sample_id);
                todo.push((op, s));
            }
        }
    }
    let results: Vec<_> = pool(jobs)?.install(|| {
        todo.par_iter()
            .map(|(op, s)| {
                let out = compute_fc(op, s).map_err(Error::from).and_then(|fc| {
                    write_matrix(&pair_path(root, &op.name, &s.sample_id), &fc.values)?;
                    Ok(fc.degenerate_rows)
                });
                (op.name.clone(), s.sample_id.clone(), out)
            })
            .collect()
    });
    for (op, id, out) in results {
        match out {
            Ok(rows) => {
                summary.computed += 1;
                index.completed.entry(op.clone()).or_default().insert(id.clone());
                if !rows.is_empty() {
                    index.degenerate_rows.entry(op).or_default().insert(id, rows.into_iter().collect());
                }
            }
            Err(e) => {
                summary.failed += 1;
                index.failed.push(FailedPair { operator: op, sample_id: id, error: e.to_string() });
            }
        }
    }
    write_json(&index_path, &index)?;
    Ok(summary)
}

/// Loads the stored FCs of `operators` (all indexed ones if `None`) for
/// `samples` (all labelled ones if `None`).
pub fn load_table(root: &Path, operators: Option<&[String]>, samples: Option<&[String]>) -> Result<(FcTable, FcIndex)> {
    let index = load_index(root)?;
    let ops: Vec<String> = match operators {
        Some(o) => o.to_vec(),
        None => index.operators.keys().cloned().collect(),
    };
    let ids: Vec<String> = match samples {
        Some(s) => s.to_vec(),
        None => index.labels.labels.keys().cloned().collect(),
    };
    let mut table = FcTable::new();
    for op in &ops {
        let done = index.completed.get(op);
        for id in &ids {
            if !done.is_some_and(|d| d.contains(id)) {
                return Err(rankcore_core::Error::MissingFc { op: op.clone(), sample: id.clone() }.into());
            }
            table.insert(op, id, read_matrix(&pair_path(root, op, id))?);
        }
    }
    Ok((table, index))
}
