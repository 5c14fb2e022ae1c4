//! Structural Perturbation Score.
//!
//! For every sample the accumulator keeps only the previous fused-attention
//! snapshot and a running sum of squared Frobenius changes, so memory is
//! `O(M·N²)` regardless of the number of epochs. The score is the running sum
//! divided by the number of observed transitions; with snapshots for epochs
//! `0..=L` this is exactly the mean over the `L` epoch-to-epoch changes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct SpsAccumulator {
    previous: BTreeMap<String, Matrix>,
    sums: BTreeMap<String, f64>,
    snapshots_seen: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsRecord {
    pub scores: BTreeMap<String, f64>,
    /// Number of epoch-to-epoch transitions averaged.
    pub epochs: usize,
}

impl SpsRecord {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(id, score)` ascending by score, ties by id.
    pub fn ascending(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.scores.iter().map(|(k, &s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

impl SpsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshots_seen(&self) -> usize {
        self.snapshots_seen
    }

    /// Feeds one epoch of snapshots. Returns the mean squared change over
    /// samples (0 for the first snapshot).
    pub fn update<'a, I>(&mut self, snapshots: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a str, &'a Matrix)>,
    {
        let incoming: BTreeMap<&str, &Matrix> = snapshots.into_iter().collect();
        if incoming.is_empty() {
            return Err(Error::Empty("epoch snapshot"));
        }
        if self.snapshots_seen == 0 {
            for (id, m) in incoming {
                self.previous.insert(id.into(), m.clone());
                self.sums.insert(id.into(), 0.0);
            }
            self.snapshots_seen = 1;
            return Ok(0.0);
        }
        if incoming.len() != self.previous.len() || incoming.keys().zip(self.previous.keys()).any(|(a, b)| *a != b) {
            return Err(Error::SampleSetDrift);
        }
        let mut deltas = Vec::with_capacity(incoming.len());
        for ((id, m), prev) in incoming.iter().zip(self.previous.values()) {
            if m.shape() != prev.shape() {
                return Err(Error::DimensionMismatch { what: "snapshot", expected: prev.rows(), got: m.rows() });
            }
            deltas.push((*id, m.frobenius_dist_sq(prev)));
        }
        let mut total = 0.0;
        for ((id, delta), (m, prev)) in deltas.iter().zip(incoming.values().zip(self.previous.values_mut())) {
            *self.sums.get_mut(*id).expect("sum exists for every tracked sample") += delta;
            prev.clone_from(m);
            total += delta;
        }
        self.snapshots_seen += 1;
        Ok(total / deltas.len() as f64)
    }

    pub fn running_sums(&self) -> &BTreeMap<String, f64> {
        &self.sums
    }

    pub fn finalize(&self) -> Result<SpsRecord> {
        if self.snapshots_seen < 2 {
            return Err(Error::TooFewSnapshots(self.snapshots_seen));
        }
        let transitions = self.snapshots_seen - 1;
        Ok(SpsRecord {
            scores: self.sums.iter().map(|(k, s)| (k.clone(), s / transitions as f64)).collect(),
            epochs: transitions,
        })
    }
}

/// Running means of a stream of per-epoch changes, reported at each
/// checkpoint length.
pub fn consistency_trace(deltas: impl IntoIterator<Item = f64>, checkpoints: &[usize]) -> Result<Vec<(usize, f64)>> {
    let mut want: Vec<usize> = checkpoints.to_vec();
    want.sort_unstable();
    want.dedup();
    let mut out = Vec::with_capacity(want.len());
    let mut next = want.iter().peekable();
    let mut sum = 0.0;
    let mut seen = 0usize;
    for d in deltas {
        sum += d;
        seen += 1;
        while next.peek().is_some_and(|&&c| c == seen) {
            out.push((seen, sum / seen as f64));
            next.next();
        }
        if next.peek().is_none() {
            break;
        }
    }
    if seen == 0 {
        return Err(Error::Empty("delta stream"));
    }
    Ok(out)
}
