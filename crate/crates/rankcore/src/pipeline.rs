//! End-to-end experiment: generate → FC store → contrastive training (SPS) →
//! core-set selection → rankings → nDCG consistency report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rankcore_core::benchmark::{consistency_report, rank_spis, ConsistencyReport, Gain, RankConfig, Ranking, SampleLabels, SubsetInfo, Task};
use rankcore_core::dataset::{generate_windowed, Dataset, SynthConfig};
use rankcore_core::rng;
use rankcore_core::selection::{
    select_density_balanced, select_kmeans, select_random, select_topk_sps, target_size, CoreSet, DensityParams,
};
use rankcore_core::spi::{registry, select_operators, FcTable, ParamOverride, SpiOperator};
use rankcore_core::sps::SpsRecord;
use rankcore_core::training::{train, TrainConfig, TrainTrace};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::csv::{read_sps, trace_to_csv, write_sps};
use crate::dataset_io::{load_dataset, save_dataset, MANIFEST};
use crate::error::{Error, Result};
use crate::fcstore::{compute_store, load_table, pool};
use crate::fsutil::{read_json, to_json_bytes, write_atomic, write_json};
use crate::log::Logger;
use crate::{checkpoint, validate};

pub const CACHE_ENV: &str = "RANKCORE_CACHE";
pub const REPORT_SCHEMA: &str = "rankcore.report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sclcs")]
    Sclcs,
    #[serde(rename = "sclcs-dense")]
    SclcsDense,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "kmeans")]
    Kmeans,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sclcs, Method::SclcsDense, Method::Random, Method::Kmeans];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sclcs => "sclcs",
            Method::SclcsDense => "sclcs-dense",
            Method::Random => "random",
            Method::Kmeans => "kmeans",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`; the `RANKCORE_CACHE` variable wins over both.
    pub cache_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Operator names; empty means the full registry.
    pub operators: Vec<String>,
    pub overrides: Vec<ParamOverride>,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub tasks: Vec<Task>,
    pub ks: Vec<usize>,
    pub density: DensityParams,
    pub kmeans_reference: String,
    pub pair_cap: usize,
    pub rank_seed: u64,
    pub gain: Gain,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("rankcore-out"),
            cache_dir: None,
            synth: SynthConfig::default(),
            operators: Vec::new(),
            overrides: Vec::new(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            ratios: vec![0.1, 0.3, 0.5],
            seeds: (0..5).collect(),
            tasks: vec![Task::Fingerprint, Task::Diagnosis],
            ks: vec![5, 10, 20],
            density: DensityParams::default(),
            kmeans_reference: "pearson".into(),
            pair_cap: rankcore_core::benchmark::DEFAULT_PAIR_CAP,
            rank_seed: 0,
            gain: Gain::Linear,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("pipeline config: {m}")));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return bad("ratios must be non-empty and lie in (0, 1]");
        }
        if self.methods.is_empty() || self.tasks.is_empty() {
            return bad("methods and tasks must be non-empty");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be non-empty and positive");
        }
        self.synth.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn operators(&self) -> Result<Vec<SpiOperator>> {
        let all = registry(&self.overrides)?;
        if self.operators.is_empty() {
            return Ok(all);
        }
        let names: Vec<&str> = self.operators.iter().map(String::as_str).collect();
        let chosen = select_operators(&names)?;
        Ok(chosen.into_iter().map(|c| all.iter().find(|o| o.name == c.name).cloned().unwrap_or(c)).collect())
    }

    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory serialisation cannot fail");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub cache_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub samples: usize,
    pub subjects: usize,
    pub n_regions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub sps_epochs: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config_digest: String,
    pub dataset: DatasetSummary,
    pub operators: Vec<String>,
    /// nDCG values are fractions in [0, 1]; multiply by 100 for percentages.
    pub ndcg_scale: String,
    pub std_convention: String,
    pub gain: Gain,
    pub seeds: Vec<SeedSummary>,
    pub tasks: Vec<ConsistencyReport>,
}

impl Report {
    pub fn task(&self, task: Task) -> Option<&ConsistencyReport> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: Report,
    pub report_path: PathBuf,
    pub stages: Vec<StageRecord>,
    pub validation_passed: Option<bool>,
}

struct Ctx<'a> {
    cache: PathBuf,
    log: &'a Logger,
    stages: Vec<StageRecord>,
}

impl Ctx<'_> {
    fn record(&mut self, stage: &str, key: &str, hit: bool) {
        self.log.event(stage, if hit { "cache_hit" } else { "computed" }, json!({ "key": key }));
        self.stages.push(StageRecord { stage: stage.into(), key: key.into(), cache_hit: hit });
    }

    /// JSON artefact cached under `<cache>/<stage>/<key>.json`.
    fn cached<T, F>(&mut self, stage: &str, key: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let path = self.cache.join(stage).join(format!("{key}.json"));
        if path.exists() {
            if let Ok(v) = read_json(&path) {
                self.record(stage, key, true);
                return Ok(v);
            }
        }
        let v = compute().map_err(|e| e.in_stage(stage))?;
        write_json(&path, &v)?;
        self.record(stage, key, false);
        Ok(v)
    }
}

fn dataset_stage(ctx: &mut Ctx, synth: &SynthConfig) -> Result<(Dataset, String)> {
    let key = digest(&("dataset", synth));
    let dir = ctx.cache.join("dataset").join(&key);
    if dir.join(MANIFEST).exists() {
        if let Ok(d) = load_dataset(&dir) {
            ctx.record("gen", &key, true);
            return Ok((d, key));
        }
    }
    let d = generate_windowed(synth).map_err(|e| Error::from(e).in_stage("gen"))?;
    save_dataset(&d, &dir)?;
    ctx.record("gen", &key, false);
    Ok((d, key))
}

struct TrainArtifacts {
    sps: SpsRecord,
    trace: TrainTrace,
}

fn train_stage(ctx: &mut Ctx, d: &Dataset, dataset_key: &str, cfg: &TrainConfig, seed: u64) -> Result<TrainArtifacts> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let key = digest(&("train", dataset_key, &cfg));
    let dir = ctx.cache.join("train").join(&key);
    let (sps_path, trace_path) = (dir.join("sps.csv"), dir.join("trace.json"));
    if sps_path.exists() && trace_path.exists() {
        if let (Ok(sps), Ok(trace)) = (read_sps(&sps_path), read_json::<TrainTrace>(&trace_path)) {
            ctx.record("train", &key, true);
            return Ok(TrainArtifacts { sps, trace });
        }
    }
    let out = train(d, &cfg).map_err(|e| Error::from(e).in_stage("train"))?;
    checkpoint::save(&dir.join("params.bin"), &out.params)?;
    write_atomic(&dir.join("trace.csv"), trace_to_csv(&out.trace).as_bytes())?;
    write_json(&trace_path, &out.trace)?;
    write_sps(&sps_path, &out.sps)?;
    ctx.record("train", &key, false);
    // Reload so fresh and cached runs see identical (CSV-rounded) scores.
    Ok(TrainArtifacts { sps: read_sps(&sps_path)?, trace: out.trace })
}

fn select(method: Method, sps: &SpsRecord, table: &FcTable, ids: &[String], ratio: f64, seed: u64, cfg: &PipelineConfig) -> Result<CoreSet> {
    let m = target_size(ratio, ids.len());
    let mut cs = if m == ids.len() {
        // Selecting everything is the same for every method.
        CoreSet { method: method.name().into(), ratio, seed: Some(seed), params: BTreeMap::new(), sps_epochs: None, sample_ids: ids.to_vec() }
    } else {
        match method {
            Method::Sclcs => select_topk_sps(sps, m)?,
            Method::SclcsDense => select_density_balanced(sps, m, &cfg.density, seed)?,
            Method::Random => select_random(ids, m, seed)?,
            Method::Kmeans => select_kmeans(table, &cfg.kmeans_reference, ids, m, seed)?,
        }
    };
    cs.ratio = ratio;
    if cs.seed.is_none() {
        cs.seed = Some(seed);
    }
    Ok(cs)
}

fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_atomic(path, &to_json_bytes(report))
}

/// Runs every stage, reusing cached artefacts whose inputs are unchanged,
/// and writes `<out_dir>/report.json`.
pub fn run_pipeline(cfg: &PipelineConfig, jobs: usize, run_validation: bool, log: &Logger) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let ops = cfg.operators()?;
    if !ops.iter().any(|o| o.name == cfg.kmeans_reference) && cfg.methods.contains(&Method::Kmeans) {
        return Err(Error::Invalid(format!("kmeans reference operator `{}` is not among the operators", cfg.kmeans_reference)));
    }
    let mut ctx = Ctx { cache: cfg.cache_dir(), log, stages: Vec::new() };
    log.event("pipeline", "start", json!({ "cache": ctx.cache.display().to_string(), "operators": ops.len() }));

    let (d, dataset_key) = dataset_stage(&mut ctx, &cfg.synth)?;
    let labels = SampleLabels::from_dataset(&d);
    let ids = d.sample_ids();

    let fc_root = ctx.cache.join("fc").join(&dataset_key);
    let summary = compute_store(&d, &ops, &fc_root, false, jobs).map_err(|e| e.in_stage("spi"))?;
    log.event("spi", "summary", json!(summary));
    if summary.failed > 0 {
        return Err(Error::Invalid(format!("{} (operator, sample) pairs failed; see {}", summary.failed, fc_root.join("index.json").display()))
            .in_stage("spi"));
    }
    ctx.record("spi", &dataset_key, summary.computed == 0);
    let op_names: Vec<String> = ops.iter().map(|o| o.name.clone()).collect();
    let (table, _) = load_table(&fc_root, Some(&op_names), None).map_err(|e| e.in_stage("spi"))?;
    let fc_key = digest(&(&dataset_key, &ops));

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut sps_by_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let art = train_stage(&mut ctx, &d, &dataset_key, &cfg.train, seed)?;
        seeds.push(SeedSummary {
            seed,
            sps_epochs: art.sps.epochs,
            first_loss: art.trace.rows.first().map_or(f64::NAN, |r| r.loss),
            final_loss: art.trace.rows.last().map_or(f64::NAN, |r| r.loss),
        });
        sps_by_seed.push((seed, art.sps));
    }

    let strict = RankConfig { pair_cap: cfg.pair_cap, seed: cfg.rank_seed, allow_degenerate: false };
    let lenient = RankConfig { allow_degenerate: true, ..strict };
    let mut references = BTreeMap::new();
    for &task in &cfg.tasks {
        let key = digest(&("rank-full", &fc_key, task, &strict));
        let r: Ranking = ctx.cached("rank", &key, || Ok(rank_spis(&table, &labels, &ids, task, &strict)?))?;
        references.insert(task, r);
    }

    // Core-sets per (seed, method, ratio).
    let mut coresets = Vec::new();
    for (seed, sps) in &sps_by_seed {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            for (ri, &ratio) in cfg.ratios.iter().enumerate() {
                let sel_seed = rng::derive_seed(*seed, (mi * 1000 + ri) as u64 + 1);
                let key = digest(&("select", &fc_key, digest(sps), method, ratio, sel_seed, &cfg.density, &cfg.kmeans_reference));
                let cs: CoreSet = ctx.cached("select", &key, || select(method, sps, &table, &ids, ratio, sel_seed, cfg))?;
                coresets.push(cs);
            }
        }
    }

    // Core-set rankings, computed in parallel and cached individually.
    let jobs_list: Vec<(usize, Task, String)> = coresets
        .iter()
        .enumerate()
        .flat_map(|(i, cs)| {
            let fc_key = &fc_key;
            cfg.tasks.iter().map(move |&t| (i, t, digest(&("rank-subset", fc_key, t, &lenient, &cs.sample_ids))))
        })
        .collect();
    let rank_dir = ctx.cache.join("rank");
    let computed: Vec<(bool, Result<Ranking>)> = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|(i, task, key)| {
                let path = rank_dir.join(format!("{key}.json"));
                if let Ok(r) = read_json::<Ranking>(&path) {
                    return (true, Ok(r));
                }
                let cs = &coresets[*i];
                let r = rank_spis(&table, &labels, &cs.sample_ids, *task, &lenient).map_err(|e| Error::from(e).in_stage("rank"));
                (false, r.and_then(|r| write_json(&path, &r).map(|_| r)))
            })
            .collect()
    });
    let mut runs: BTreeMap<Task, Vec<(CoreSet, Ranking)>> = BTreeMap::new();
    for ((i, task, key), (hit, r)) in jobs_list.iter().zip(computed) {
        let mut r = r?;
        ctx.record("rank", key, hit);
        let cs = &coresets[*i];
        r.provenance.subset = Some(SubsetInfo { method: cs.method.clone(), ratio: cs.ratio, seed: cs.seed });
        runs.entry(*task).or_default().push((cs.clone(), r));
    }

    let mut tasks = Vec::new();
    for &task in &cfg.tasks {
        let rep = consistency_report(&references[&task], &runs[&task], &cfg.ks, cfg.gain).map_err(|e| Error::from(e).in_stage("report"))?;
        tasks.push(rep);
    }
    let report = Report {
        schema: REPORT_SCHEMA.into(),
        config_digest: digest(&PipelineConfig { out_dir: PathBuf::new(), cache_dir: None, ..cfg.clone() }),
        dataset: DatasetSummary {
            name: d.name.clone(),
            samples: d.len(),
            subjects: d.by_subject().len(),
            n_regions: d.n_regions().unwrap_or(0),
        },
        operators: op_names,
        ndcg_scale: "fraction".into(),
        std_convention: "population".into(),
        gain: cfg.gain,
        seeds,
        tasks,
    };
    let report_path = cfg.out_dir.join("report.json");
    write_report(&report_path, &report)?;
    log.event("report", "written", json!({ "path": report_path.display().to_string() }));

    let validation_passed = if run_validation {
        let out = validate::run(validate::Which::All, cfg.rank_seed, jobs, log)?;
        write_json(&cfg.out_dir.join("validation.json"), &out)?;
        Some(out.passed)
    } else {
        None
    };
    Ok(PipelineOutcome { report, report_path, stages: ctx.stages, validation_passed })
}
