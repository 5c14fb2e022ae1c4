use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rankcore::csv::{read_sps, trace_to_csv, write_sps};
use rankcore::dataset_io::{load_dataset, save_dataset};
use rankcore::fcstore::{compute_store, load_table};
use rankcore::fsutil::{read_json, write_atomic, write_json};
use rankcore::log::Logger;
use rankcore::pipeline::{run_pipeline, Method, PipelineConfig};
use rankcore::validate::{self, Which};
use rankcore::{checkpoint, fcstore};
use rankcore_core::benchmark::{consistency_report, rank_spis, Gain, RankConfig, Ranking, SubsetInfo, Task, DEFAULT_PAIR_CAP};
use rankcore_core::dataset::{generate_windowed, SynthConfig};
use rankcore_core::encoder::{fit_to_target, FitConfig};
use rankcore_core::selection::{
    select_density_balanced, select_kmeans, select_random, select_topk_sps, target_size, BandwidthRule, CoreSet, DensityParams,
};
use rankcore_core::spi::{registry, select_operators, ParamOverride};
use rankcore_core::training::{train, TrainConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rankcore", version, about = "Ranking-preserving core-set selection for pairwise-interaction benchmarks")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Master seed for commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress logs and the stdout summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a windowed synthetic dataset.
    Gen(GenArgs),
    /// Compute FC matrices for every (operator, sample) pair.
    Spi(SpiArgs),
    /// Fit the attention encoder to one operator's FCs.
    Fit(FitArgs),
    /// Contrastive training with SPS tracking.
    Train(TrainArgs),
    /// Select a core-set.
    Select(SelectArgs),
    /// Rank operators by discriminability on the full set or a core-set.
    Rank(RankArgs),
    /// nDCG@k consistency of core-set rankings against a reference.
    Report(ReportArgs),
    /// Run the validators.
    Validate(ValidateArgs),
    /// Run the whole experiment from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpiArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated operator names (default: the full registry).
    #[arg(long, value_delimiter = ',')]
    ops: Vec<String>,
    /// Parameter override `operator.key=value`; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Recompute pairs that are already stored.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// sclcs, sclcs-dense, random or kmeans.
    #[arg(long)]
    method: String,
    #[arg(long)]
    sps: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    /// Fixed KDE bandwidth instead of Silverman's rule.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// FC store, required for kmeans.
    #[arg(long)]
    fc: Option<PathBuf>,
    #[arg(long, default_value = "pearson")]
    reference: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    fc: PathBuf,
    #[arg(long, conflicts_with = "full", required_unless_present = "full")]
    subset: Option<PathBuf>,
    #[arg(long)]
    full: bool,
    /// fingerprint or diagnosis.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = DEFAULT_PAIR_CAP)]
    pair_cap: usize,
    /// Score undefined operators 0 instead of failing.
    #[arg(long)]
    allow_degenerate: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    ks: Vec<usize>,
    /// linear, linear_shifted or exponential.
    #[arg(long, default_value = "linear")]
    gain: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "all")]
    which: Which,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also run the validator suite; any failure makes the exit code non-zero.
    #[arg(long)]
    validate: bool,
}

fn parse_task(s: &str) -> anyhow::Result<Task> {
    match s {
        "fingerprint" => Ok(Task::Fingerprint),
        "diagnosis" => Ok(Task::Diagnosis),
        _ => bail!("unknown task `{s}` (expected fingerprint or diagnosis)"),
    }
}

fn parse_override(s: &str) -> anyhow::Result<ParamOverride> {
    let (lhs, value) = s.split_once('=').with_context(|| format!("override `{s}` lacks `=`"))?;
    let (operator, key) = lhs.split_once('.').with_context(|| format!("override `{s}` lacks `operator.key`"))?;
    let value = value.parse().with_context(|| format!("override `{s}` has a non-numeric value"))?;
    Ok(ParamOverride { operator: operator.into(), key: key.into(), value })
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> anyhow::Result<T> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    })
}

fn say(cli: &Cli, msg: impl std::fmt::Display) {
    if !cli.quiet {
        println!("{msg}");
    }
}

fn gen(cli: &Cli, a: &GenArgs) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = load_or_default(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let d = generate_windowed(&cfg)?;
    save_dataset(&d, &a.out)?;
    say(cli, format!("wrote {} samples from {} subjects to {}", d.len(), d.by_subject().len(), a.out.display()));
    Ok(())
}

fn spi(cli: &Cli, a: &SpiArgs, log: &Logger) -> anyhow::Result<()> {
    let d = load_dataset(&a.data)?;
    let overrides = a.overrides.iter().map(|s| parse_override(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let all = registry(&overrides)?;
    let ops = if a.ops.is_empty() {
        all
    } else {
        let names: Vec<&str> = a.ops.iter().map(String::as_str).collect();
        select_operators(&names)?.into_iter().map(|o| all.iter().find(|x| x.name == o.name).cloned().unwrap_or(o)).collect()
    };
    let summary = compute_store(&d, &ops, &a.out, a.force, cli.jobs)?;
    log.event("spi", "summary", json!(summary));
    say(cli, format!("computed {}, skipped {}, failed {}", summary.computed, summary.skipped, summary.failed));
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> anyhow::Result<()> {
    let d = load_dataset(&a.data)?;
    let mut cfg: FitConfig = load_or_default(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let op = select_operators(&[a.target.as_str()])?.remove(0);
    let rep = fit_to_target(&d, &op, &cfg)?;
    write_json(&a.out, &rep)?;
    say(cli, format!("{}: train MSE {:.4e} -> {:.4e}, test {:.4e}", rep.operator, rep.train_mse_start, rep.train_mse_end, rep.test_mse));
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let d = load_dataset(&a.data)?;
    let mut cfg: TrainConfig = load_or_default(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let out = train(&d, &cfg)?;
    checkpoint::save(&a.out.join("params.bin"), &out.params)?;
    write_sps(&a.out.join("sps.csv"), &out.sps)?;
    write_atomic(&a.out.join("trace.csv"), trace_to_csv(&out.trace).as_bytes())?;
    say(cli, format!("trained {} epochs; SPS over {} transitions written to {}", cfg.epochs, out.sps.epochs, a.out.display()));
    Ok(())
}

fn select_cmd(cli: &Cli, a: &SelectArgs) -> anyhow::Result<()> {
    let method = Method::parse(&a.method).with_context(|| format!("unknown method `{}`", a.method))?;
    let sps = read_sps(&a.sps)?;
    let ids: Vec<String> = sps.scores.keys().cloned().collect();
    let m = target_size(a.ratio, ids.len());
    let seed = cli.seed.unwrap_or(0);
    if !(a.ratio > 0.0 && a.ratio <= 1.0) {
        bail!("ratio must lie in (0, 1]");
    }
    let mut cs: CoreSet = match method {
        Method::Sclcs => select_topk_sps(&sps, m)?,
        Method::SclcsDense => {
            let bandwidth = a.bandwidth.map_or(BandwidthRule::Silverman, BandwidthRule::Fixed);
            select_density_balanced(&sps, m, &DensityParams { beta: a.beta, bandwidth, ..DensityParams::default() }, seed)?
        }
        Method::Random => select_random(&ids, m, seed)?,
        Method::Kmeans => {
            let fc = a.fc.as_ref().context("kmeans needs --fc")?;
            let (table, _) = load_table(fc, Some(std::slice::from_ref(&a.reference)), Some(&ids))?;
            select_kmeans(&table, &a.reference, &ids, m, seed)?
        }
    };
    cs.ratio = a.ratio;
    write_json(&a.out, &cs)?;
    say(cli, format!("{}: selected {} of {} samples", cs.method, cs.sample_ids.len(), ids.len()));
    Ok(())
}

fn rank_cmd(cli: &Cli, a: &RankArgs) -> anyhow::Result<()> {
    let task = parse_task(&a.task)?;
    let index = fcstore::load_index(&a.fc)?;
    let (ids, subset) = match &a.subset {
        Some(p) => {
            let cs: CoreSet = read_json(p)?;
            let info = SubsetInfo { method: cs.method.clone(), ratio: cs.ratio, seed: cs.seed };
            (cs.sample_ids, Some(info))
        }
        None => (index.labels.labels.keys().cloned().collect(), None),
    };
    let (table, index) = load_table(&a.fc, None, Some(&ids))?;
    let cfg = RankConfig { pair_cap: a.pair_cap, seed: cli.seed.unwrap_or(0), allow_degenerate: a.allow_degenerate };
    let mut r = rank_spis(&table, &index.labels, &ids, task, &cfg)?;
    r.provenance.subset = subset;
    write_json(&a.out, &r)?;
    say(cli, format!("ranked {} operators on {} samples; top: {}", r.len(), r.sample_count, r.entries[0].operator));
    Ok(())
}

fn report_cmd(cli: &Cli, a: &ReportArgs) -> anyhow::Result<()> {
    let gain: Gain = serde_json::from_value(json!(a.gain)).with_context(|| format!("unknown gain `{}`", a.gain))?;
    let truth: Ranking = read_json(&a.truth)?;
    let mut runs = Vec::with_capacity(a.runs.len());
    for p in &a.runs {
        let r: Ranking = read_json(p)?;
        let info = r.provenance.subset.clone().with_context(|| format!("{} has no core-set provenance", p.display()))?;
        let cs = CoreSet {
            method: info.method,
            ratio: info.ratio,
            seed: info.seed,
            params: Default::default(),
            sps_epochs: None,
            sample_ids: r.sample_ids.clone(),
        };
        runs.push((cs, r));
    }
    let rep = consistency_report(&truth, &runs, &a.ks, gain)?;
    write_json(&a.out, &rep)?;
    if !cli.quiet {
        for c in &rep.cells {
            println!("{:12} ratio {:.2} nDCG@{:<3} {:6.2} ± {:5.2}", c.method, c.ratio, c.k, 100.0 * c.mean, 100.0 * c.std);
        }
    }
    Ok(())
}

fn validate_cmd(cli: &Cli, a: &ValidateArgs, log: &Logger) -> anyhow::Result<bool> {
    let out = validate::run(a.which, cli.seed.unwrap_or(0), cli.jobs, log)?;
    write_json(&a.out, &out)?;
    if !cli.quiet {
        for (name, v) in &out.results {
            println!("{name:14} {}", if v["passed"].as_bool() == Some(true) { "pass" } else { "FAIL" });
        }
    }
    Ok(out.passed)
}

fn pipeline_cmd(cli: &Cli, a: &PipelineArgs, log: &Logger) -> anyhow::Result<bool> {
    let cfg: PipelineConfig = read_json(&a.config)?;
    let out = run_pipeline(&cfg, cli.jobs, a.validate, log)?;
    if !cli.quiet {
        let hits = out.stages.iter().filter(|s| s.cache_hit).count();
        println!("{} stages ({} cache hits); report at {}", out.stages.len(), hits, out.report_path.display());
        for t in &out.report.tasks {
            for c in t.cells.iter().filter(|c| c.k == 10 || cfg.ks.len() == 1) {
                println!("{:12} {:12} ratio {:.2} nDCG@{:<3} {:6.2} ± {:5.2}", t.task.name(), c.method, c.ratio, c.k, 100.0 * c.mean, 100.0 * c.std);
            }
        }
        if let Some(v) = out.validation_passed {
            println!("validation: {}", if v { "pass" } else { "FAIL" });
        }
    }
    Ok(out.validation_passed.unwrap_or(true))
}

fn ensure_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let log = Logger::new(cli.quiet);
    match &cli.cmd {
        Cmd::Gen(a) => gen(cli, a)?,
        Cmd::Spi(a) => spi(cli, a, &log)?,
        Cmd::Fit(a) => {
            ensure_parent(&a.out)?;
            fit(cli, a)?
        }
        Cmd::Train(a) => train_cmd(cli, a)?,
        Cmd::Select(a) => select_cmd(cli, a)?,
        Cmd::Rank(a) => rank_cmd(cli, a)?,
        Cmd::Report(a) => report_cmd(cli, a)?,
        Cmd::Validate(a) => return validate_cmd(cli, a, &log),
        Cmd::Pipeline(a) => return pipeline_cmd(cli, a, &log),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("{}", json!({ "event": "error", "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
