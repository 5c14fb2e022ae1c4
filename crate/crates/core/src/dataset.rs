//! Multivariate time-series datasets and the planted-prototype generator.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::{clip_to_correlation, Matrix};
use crate::{math, rng, Error, Result};

pub const MIN_REGIONS: usize = 2;
pub const MIN_TIME_POINTS: usize = 8;
const EIGEN_FLOOR: f64 = 1e-6;

/// One windowed segment: `data` is regions × time points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub sample_id: String,
    pub subject_id: String,
    pub class_label: u8,
    pub site_id: Option<String>,
    pub data: Matrix,
}

impl TimeSeriesSample {
    pub fn n_regions(&self) -> usize {
        self.data.rows()
    }

    pub fn n_time(&self) -> usize {
        self.data.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSample { id: self.sample_id.clone(), reason };
        if self.n_regions() < MIN_REGIONS {
            return Err(bad(format!("{} regions, need at least {MIN_REGIONS}", self.n_regions())));
        }
        if self.n_time() < MIN_TIME_POINTS {
            return Err(bad(format!("{} time points, need at least {MIN_TIME_POINTS}", self.n_time())));
        }
        if !self.data.is_finite() {
            return Err(bad("non-finite entry".to_string()));
        }
        if self.class_label > 1 {
            return Err(bad(format!("class label {} is not 0/1", self.class_label)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic(SynthConfig),
    Source(String),
    Windowed { parent: Box<Provenance>, window_len: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub provenance: Provenance,
    pub samples: Vec<TimeSeriesSample>,
}

impl Dataset {
    /// Checks per-sample invariants plus id uniqueness, a shared region
    /// count, and one class label per subject.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_regions().ok_or(Error::Empty("dataset has no samples"))?;
        let mut ids = BTreeMap::new();
        let mut subject_class: BTreeMap<&str, u8> = BTreeMap::new();
        for s in &self.samples {
            s.validate()?;
            if s.n_regions() != n {
                return Err(Error::DimensionMismatch { what: "regions", expected: n, got: s.n_regions() });
            }
            if ids.insert(s.sample_id.as_str(), ()).is_some() {
                return Err(Error::InvalidSample { id: s.sample_id.clone(), reason: "duplicate sample id".into() });
            }
            match subject_class.get(s.subject_id.as_str()) {
                Some(&c) if c != s.class_label => {
                    return Err(Error::InvalidSample {
                        id: s.sample_id.clone(),
                        reason: format!("subject {} has conflicting class labels", s.subject_id),
                    })
                }
                _ => {
                    subject_class.insert(&s.subject_id, s.class_label);
                }
            }
        }
        Ok(())
    }

    pub fn n_regions(&self) -> Option<usize> {
        self.samples.first().map(TimeSeriesSample::n_regions)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&TimeSeriesSample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    /// Sample indices grouped by subject, subjects in first-seen order.
    pub fn by_subject(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            match slot.get(s.subject_id.as_str()) {
                Some(&k) => order[k].1.push(i),
                None => {
                    slot.insert(&s.subject_id, order.len());
                    order.push((s.subject_id.clone(), vec![i]));
                }
            }
        }
        order
    }
}

/// Parameters of the planted-prototype generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub t_total: usize,
    pub window_len: usize,
    pub stride: usize,
    pub n_subjects: usize,
    pub n_prototypes: usize,
    pub prototype_separation: f64,
    pub subject_jitter: f64,
    pub noise_sigma: f64,
    pub ar_coeff: f64,
    /// Class of each prototype, indexed by prototype.
    pub class_map: Vec<u8>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_regions: 16,
            t_total: 210,
            window_len: 70,
            stride: 35,
            n_subjects: 60,
            n_prototypes: 4,
            prototype_separation: 0.6,
            subject_jitter: 0.1,
            noise_sigma: 0.3,
            ar_coeff: 0.3,
            class_map: vec![0, 1, 0, 1],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_regions < MIN_REGIONS {
            return fail("n_regions must be at least 2");
        }
        if self.t_total < MIN_TIME_POINTS {
            return fail("t_total must be at least 8");
        }
        if self.window_len > self.t_total {
            return Err(Error::WindowTooLong { window: self.window_len, len: self.t_total });
        }
        if self.window_len < MIN_TIME_POINTS {
            return fail("window_len must be at least 8");
        }
        if self.stride == 0 {
            return fail("stride must be at least 1");
        }
        if self.n_prototypes == 0 {
            return fail("at least one prototype is required");
        }
        if self.n_subjects == 0 {
            return fail("at least one subject is required");
        }
        if !(self.prototype_separation > 0.0 && self.prototype_separation <= 1.0) {
            return fail("prototype_separation must lie in (0, 1]");
        }
        if !(self.subject_jitter >= 0.0 && self.noise_sigma >= 0.0) {
            return fail("subject_jitter and noise_sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return fail("ar_coeff must lie in [0, 1)");
        }
        if self.class_map.len() < self.n_prototypes {
            return Err(Error::MissingClass(self.class_map.len()));
        }
        if self.class_map.iter().any(|&c| c > 1) {
            return fail("class_map entries must be 0 or 1");
        }
        Ok(())
    }
}

/// Random partition of `n` regions into `max(2, round(sqrt n))` near-equal
/// blocks; returns the block index of every region.
pub fn block_partition(n: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let blocks = (math::round(math::sqrt(n as f64)) as usize).clamp(2, n.max(2));
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(rng, &mut order);
    let mut block_of = vec![0; n];
    for (pos, &region) in order.iter().enumerate() {
        block_of[region] = pos * blocks / n;
    }
    block_of
}

/// Block correlation matrix for a partition, repaired to positive definite.
pub fn block_prototype(block_of: &[usize], separation: f64) -> Matrix {
    let n = block_of.len();
    let raw = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if block_of[i] == block_of[j] {
            separation
        } else {
            0.0
        }
    });
    clip_to_correlation(&raw, EIGEN_FLOOR)
}

/// The K prototype correlation matrices for `config`. The partitions depend
/// only on the seed, so changing the separation rescales the same blocks.
pub fn prototypes(config: &SynthConfig) -> Result<Vec<Matrix>> {
    config.validate()?;
    let mut r = rng::stream(config.seed, 0);
    (0..config.n_prototypes)
        .map(|k| {
            let block_of = block_partition(config.n_regions, &mut r);
            let p = block_prototype(&block_of, config.prototype_separation);
            p.cholesky().map(|_| p).ok_or(Error::NotPositiveDefinite(k))
        })
        .collect()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    let protos = prototypes(config)?;
    let n = config.n_regions;
    let t = config.t_total;
    let mut samples = Vec::with_capacity(config.n_subjects);
    for subject in 0..config.n_subjects {
        let k = subject % config.n_prototypes;
        let class_label = *config.class_map.get(k).ok_or(Error::MissingClass(k))?;
        let mut r = rng::stream(config.seed, 1 + subject as u64);

        let mut cov = protos[k].clone();
        if config.subject_jitter > 0.0 {
            for i in 0..n {
                for j in (i + 1)..n {
                    let e = config.subject_jitter * rng::uniform_range(&mut r, -1.0, 1.0);
                    cov[(i, j)] += e;
                    cov[(j, i)] += e;
                }
            }
            cov = clip_to_correlation(&cov, EIGEN_FLOOR);
        }
        let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite(k))?;

        let white = Matrix::from_fn(n, t, |_, _| rng::normal(&mut r));
        let mut x = chol.matmul(&white);
        for i in 0..n {
            let row = x.row_mut(i);
            for s in 1..t {
                row[s] += config.ar_coeff * row[s - 1];
            }
            standardize(row);
        }
        if config.noise_sigma > 0.0 {
            for v in x.as_mut_slice() {
                *v += config.noise_sigma * rng::normal(&mut r);
            }
        }
        let id = format!("sub{subject:03}");
        samples.push(TimeSeriesSample {
            sample_id: id.clone(),
            subject_id: id,
            class_label,
            site_id: None,
            data: x,
        });
    }
    let ds = Dataset {
        name: format!("synthetic-{}", config.seed),
        provenance: Provenance::Synthetic(config.clone()),
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Generates the full-length series and cuts them with the configured window.
pub fn generate_windowed(config: &SynthConfig) -> Result<Dataset> {
    window_dataset(&generate_synthetic(config)?, config.window_len, config.stride)
}

/// Zero mean, unit (population) variance; constant rows are only centred.
fn standardize(row: &mut [f64]) {
    let m = math::mean(row);
    let sd = math::std_dev(row, 0);
    for v in row.iter_mut() {
        *v -= m;
        if sd > 0.0 {
            *v /= sd;
        }
    }
}

/// Start offsets of all full windows; trailing partial windows are dropped.
pub fn window_starts(len: usize, window_len: usize, stride: usize) -> Result<Vec<usize>> {
    if window_len > len {
        return Err(Error::WindowTooLong { window: window_len, len });
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    Ok((0..=(len - window_len) / stride).map(|k| k * stride).collect())
}

pub fn window_dataset(raw: &Dataset, window_len: usize, stride: usize) -> Result<Dataset> {
    let mut samples = Vec::new();
    for s in &raw.samples {
        for (k, start) in window_starts(s.n_time(), window_len, stride)?.into_iter().enumerate() {
            let data = Matrix::from_fn(s.n_regions(), window_len, |i, j| s.data[(i, start + j)]);
            samples.push(TimeSeriesSample {
                sample_id: format!("{}#{k}", s.sample_id),
                subject_id: s.subject_id.clone(),
                class_label: s.class_label,
                site_id: s.site_id.clone(),
                data,
            });
        }
    }
    let ds = Dataset {
        name: raw.name.clone(),
        provenance: Provenance::Windowed { parent: Box::new(raw.provenance.clone()), window_len, stride },
        samples,
    };
    ds.validate()?;
    Ok(ds)
}
