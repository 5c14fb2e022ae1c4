//! SPI discriminability, full and core-set rankings, and nDCG@k consistency.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::selection::CoreSet;
use crate::spi::FcTable;
use crate::{math, rng, Error, Result};

/// Spearman's ρ: Pearson correlation of tie-averaged ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { what: "spearman inputs", expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::InvalidConfig("spearman needs at least 3 observations".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) {
        return Err(Error::ConstantInput("x"));
    }
    if constant(y) {
        return Err(Error::ConstantInput("y"));
    }
    math::pearson(&math::average_ranks(x), &math::average_ranks(y)).ok_or(Error::ConstantInput("ranks"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Classes are subjects.
    Fingerprint,
    /// Classes are diagnostic labels.
    Diagnosis,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Fingerprint => "fingerprint",
            Task::Diagnosis => "diagnosis",
        }
    }
}

pub const DEFAULT_PAIR_CAP: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminability {
    pub score: f64,
    pub pairs_used: usize,
    pub pairs_dropped: usize,
}

/// Index pairs `(i, j)`, `i < j`: all of them, or `cap` drawn uniformly
/// without replacement (sorted) when there are more.
pub fn sample_pairs(n: usize, cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let decode = |mut p: usize| {
        let mut i = 0;
        let mut row = n - 1;
        while p >= row {
            p -= row;
            i += 1;
            row -= 1;
        }
        (i, i + 1 + p)
    };
    if total <= cap {
        return (0..total).map(decode).collect();
    }
    let mut picks = rand::seq::index::sample(&mut rng::seeded(seed), total, cap).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(decode).collect()
}

/// Similarities are snapped to this grid before ranking so that pairs equal
/// up to rounding noise tie instead of being ordered arbitrarily.
pub const SIMILARITY_GRID: f64 = 1e12;

/// Rank correlation between pair similarities and the within-class indicator.
pub fn discriminability_from_similarities(similarities: &[f64], within: &[bool]) -> Result<f64> {
    if within.iter().all(|w| *w) || within.iter().all(|w| !*w) {
        return Err(Error::SingleClass);
    }
    let ind: Vec<f64> = within.iter().map(|&w| if w { 1.0 } else { 0.0 }).collect();
    spearman_rho(similarities, &ind)
}

fn centred_unit(v: &[f64]) -> Option<Vec<f64>> {
    let m = math::mean(v);
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let norm = math::sqrt(c.iter().map(|x| x * x).sum());
    if !(norm > 1e-12 * (1.0 + m.abs()) * math::sqrt(v.len() as f64)) {
        return None;
    }
    Some(c.into_iter().map(|x| x / norm).collect())
}

/// Discriminability of one operator: Pearson similarity between the
/// vectorised FCs of each sample pair, rank-correlated with whether the pair
/// shares a class. Pairs touching a zero-variance vector are dropped.
pub fn discriminability<G: PartialEq>(vectors: &[Vec<f64>], classes: &[G], pair_cap: usize, seed: u64) -> Result<Discriminability> {
    if vectors.len() != classes.len() {
        return Err(Error::DimensionMismatch { what: "class labels", expected: vectors.len(), got: classes.len() });
    }
    let units: Vec<Option<Vec<f64>>> = vectors.iter().map(|v| centred_unit(v)).collect();
    let pairs = sample_pairs(vectors.len(), pair_cap, seed);
    let mut sims = Vec::with_capacity(pairs.len());
    let mut within = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for (i, j) in &pairs {
        match (&units[*i], &units[*j]) {
            (Some(a), Some(b)) => {
                sims.push(math::round(crate::matrix::dot(a, b) * SIMILARITY_GRID) / SIMILARITY_GRID);
                within.push(classes[*i] == classes[*j]);
            }
            _ => dropped += 1,
        }
    }
    if 2 * dropped > pairs.len() {
        return Err(Error::TooManyDropped { dropped, total: pairs.len() });
    }
    let score = discriminability_from_similarities(&sims, &within)?;
    Ok(Discriminability { score, pairs_used: sims.len(), pairs_dropped: dropped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub operator: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub method: String,
    pub ratio: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingProvenance {
    pub pair_cap: usize,
    pub seed: u64,
    /// Dropped zero-variance pairs per operator (only non-zero counts).
    pub dropped_pairs: BTreeMap<String, usize>,
    /// Operators whose score was undefined on this subset and set to 0.
    pub degenerate: Vec<String>,
    pub subset: Option<SubsetInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub task: Task,
    pub dataset_id: String,
    pub sample_count: usize,
    pub sample_ids: Vec<String>,
    pub entries: Vec<RankEntry>,
    pub provenance: RankingProvenance,
}

impl Ranking {
    /// Sorts by descending score, ties by operator name, and assigns ranks 1..n.
    pub fn from_scores(
        task: Task,
        dataset_id: &str,
        sample_ids: Vec<String>,
        scores: &BTreeMap<String, f64>,
        provenance: RankingProvenance,
    ) -> Self {
        let mut sorted: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, *v)).collect();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let entries =
            sorted.into_iter().enumerate().map(|(i, (op, score))| RankEntry { operator: op.clone(), score, rank: i + 1 }).collect();
        Self { task, dataset_id: dataset_id.into(), sample_count: sample_ids.len(), sample_ids, entries, provenance }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn operators(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.operator.as_str()).collect()
    }

    pub fn rank_of(&self, operator: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.operator == operator).map(|e| e.rank)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub pair_cap: usize,
    pub seed: u64,
    /// Score an operator 0 (and flag it) instead of failing when its
    /// discriminability is undefined on the subset.
    pub allow_degenerate: bool,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { pair_cap: DEFAULT_PAIR_CAP, seed: 0, allow_degenerate: false }
    }
}

/// Subject and class of each sample, enough to define both tasks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLabels {
    pub dataset_id: String,
    pub labels: BTreeMap<String, (String, u8)>,
}

impl SampleLabels {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            dataset_id: d.name.clone(),
            labels: d.samples.iter().map(|s| (s.sample_id.clone(), (s.subject_id.clone(), s.class_label))).collect(),
        }
    }

    pub fn class_of(&self, id: &str, task: Task) -> Result<String> {
        let (subject, class) =
            self.labels.get(id).ok_or_else(|| Error::InvalidSample { id: id.into(), reason: "no labels for sample".into() })?;
        Ok(match task {
            Task::Fingerprint => subject.clone(),
            Task::Diagnosis => alloc::format!("{class}"),
        })
    }
}

/// Discriminability ranking of every operator in the table over `subset`.
pub fn rank_spis(table: &FcTable, labels: &SampleLabels, subset: &[String], task: Task, cfg: &RankConfig) -> Result<Ranking> {
    let classes = subset.iter().map(|id| labels.class_of(id, task)).collect::<Result<Vec<_>>>()?;
    let mut provenance = RankingProvenance { pair_cap: cfg.pair_cap, seed: cfg.seed, ..Default::default() };
    let mut scores = BTreeMap::new();
    for op in table.operators() {
        let vectors = subset.iter().map(|id| table.get(op, id).map(|m| m.upper_triangle())).collect::<Result<Vec<_>>>()?;
        match discriminability(&vectors, &classes, cfg.pair_cap, cfg.seed) {
            Ok(d) => {
                if d.pairs_dropped > 0 {
                    provenance.dropped_pairs.insert(op.into(), d.pairs_dropped);
                }
                scores.insert(String::from(op), d.score);
            }
            Err(e @ (Error::SingleClass | Error::TooManyDropped { .. } | Error::ConstantInput(_))) => {
                if !cfg.allow_degenerate {
                    return Err(e);
                }
                provenance.degenerate.push(op.into());
                scores.insert(String::from(op), 0.0);
            }
            Err(e) => return Err(e),
        }
    }
    if scores.is_empty() {
        return Err(Error::Empty("operator table"));
    }
    Ok(Ranking::from_scores(task, &labels.dataset_id, subset.to_vec(), &scores, provenance))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `rel = n - rank`.
    #[default]
    Linear,
    /// `rel = n - rank + 1`, so the last operator still carries gain 1.
    LinearShifted,
    /// `2^(n - rank) - 1`; only sensible for small n.
    Exponential,
}

impl Gain {
    pub fn relevance(self, n: usize, rank: usize) -> f64 {
        let base = (n - rank) as f64;
        match self {
            Gain::Linear => base,
            Gain::LinearShifted => base + 1.0,
            Gain::Exponential => math::powf(2.0, base) - 1.0,
        }
    }
}

/// nDCG@k of `candidate` against the relevances implied by `reference`.
pub fn ndcg_at_k(reference: &Ranking, candidate: &Ranking, k: usize, gain: Gain) -> Result<f64> {
    if reference.operators() != candidate.operators() || reference.len() != candidate.len() {
        return Err(Error::OperatorMismatch);
    }
    let n = reference.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(alloc::format!("k = {k} outside 1..={n}")));
    }
    let rel: BTreeMap<&str, f64> = reference.entries.iter().map(|e| (e.operator.as_str(), gain.relevance(n, e.rank))).collect();
    let discount = |i: usize| math::log2(i as f64 + 2.0);
    let dcg: f64 = candidate.entries.iter().take(k).enumerate().map(|(i, e)| rel[e.operator.as_str()] / discount(i)).sum();
    let mut ideal: Vec<f64> = rel.values().copied().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, r)| r / discount(i)).sum();
    if idcg <= 0.0 {
        return Err(Error::InvalidConfig("ideal DCG is zero".into()));
    }
    Ok(dcg / idcg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub method: String,
    pub ratio: f64,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
    pub seeds: Vec<Option<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub task: Task,
    pub std_convention: String,
    pub gain: Gain,
    pub reference: Ranking,
    pub cells: Vec<ConsistencyCell>,
}

impl ConsistencyReport {
    pub fn cell(&self, method: &str, ratio: f64, k: usize) -> Option<&ConsistencyCell> {
        self.cells.iter().find(|c| c.method == method && c.ratio == ratio && c.k == k)
    }
}

/// Mean and population standard deviation of nDCG@k per (method, ratio, k).
/// Depths beyond the operator count are clamped to it.
pub fn consistency_report(full: &Ranking, runs: &[(CoreSet, Ranking)], ks: &[usize], gain: Gain) -> Result<ConsistencyReport> {
    if runs.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let mut groups: BTreeMap<(String, u64), Vec<&(CoreSet, Ranking)>> = BTreeMap::new();
    for run in runs {
        groups.entry((run.0.method.clone(), run.0.ratio.to_bits())).or_default().push(run);
    }
    let mut cells = Vec::new();
    for ((method, ratio_bits), members) in groups {
        for &k in ks {
            let k_eff = k.min(full.len());
            let values = members.iter().map(|(_, r)| ndcg_at_k(full, r, k_eff, gain)).collect::<Result<Vec<_>>>()?;
            cells.push(ConsistencyCell {
                method: method.clone(),
                ratio: f64::from_bits(ratio_bits),
                k,
                mean: math::mean(&values),
                std: math::std_dev(&values, 0),
                seeds: members.iter().map(|(c, _)| c.seed).collect(),
                values,
            });
        }
    }
    Ok(ConsistencyReport { task: full.task, std_convention: "population".into(), gain, reference: full.clone(), cells })
}
