//! Subcommand implementations. Each one expands the experiment into named
//! variants, runs them over the seed list and writes sorted output files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use bitdecode::metrics::paired_permutation_p_value;
use bitdecode::{
    ConfidenceTargetSchedule, Criterion, DecodeConfig, DecodePlan, ScheduleEntry, SearchSettings, SearchWindow,
    SeededRng,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Experiment};
use crate::record::{bits_digest, rows, summarize, warnings, RunRecord, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error:\n{e}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<bitdecode::Error> for CliError {
    fn from(e: bitdecode::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// A named decoding configuration inside one command.
#[derive(Debug, Clone)]
pub struct Variant {
    pub run_id: String,
    pub decode: DecodeConfig,
}

/// Runs `variant` for every seed against prompt `prompt`; output is in seed order.
pub fn run_variant(exp: &Experiment, variant: &Variant, prompt: usize) -> bitdecode::Result<Vec<RunRecord>> {
    let model = exp.model(prompt)?;
    let digest = exp.digest_of(&variant.decode);
    let mut records = exp
        .seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let trajectory = variant.decode.run(&model, seed)?;
            Ok(RunRecord {
                run_id: variant.run_id.clone(),
                prompt,
                model_seed: model.profile().seed(),
                seed,
                config_digest: digest.clone(),
                bits_digest: bits_digest(&trajectory),
                trajectory,
                wall_time: start.elapsed(),
            })
        })
        .collect::<bitdecode::Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.seed);
    Ok(records)
}

/// Paired comparison of per-prompt diversity between two run ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationTest {
    pub baseline: String,
    pub candidate: String,
    pub prompts: usize,
    pub mean_baseline: f64,
    pub mean_candidate: f64,
    /// One-sided: candidate diversity exceeds baseline diversity.
    pub p_value: f64,
}

/// Output of one command before it is written to disk.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PermutationTest>,
    pub records: Vec<RunRecord>,
}

fn sequential_without_search(decode: &DecodeConfig) -> DecodeConfig {
    DecodeConfig::sequential(decode.plan.clone())
}

fn window_or_default(exp: &Experiment) -> SearchWindow {
    exp.decode.search.map(|s| s.window).unwrap_or(SearchWindow::DEFAULT)
}

fn execute(command: &str, exp: &Experiment, variants: &[Variant], prompts: usize) -> Result<Report, CliError> {
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for v in variants {
        for p in 0..prompts {
            let start = Instant::now();
            let recs = run_variant(exp, v, p).with_context(|| format!("running {} prompt {p}", v.run_id))?;
            let elapsed = start.elapsed();
            for r in &recs {
                for w in warnings(r) {
                    eprintln!("{w}");
                }
            }
            eprintln!(
                "{command}: {} prompt {p}: {} seeds in {:.1} ms",
                v.run_id,
                recs.len(),
                elapsed.as_secs_f64() * 1e3
            );
            summary.push(summarize(&recs)?);
            records.extend(recs);
        }
    }
    Ok(Report { command: command.to_string(), summary, test: None, records })
}

pub fn cmd_sample(exp: &Experiment) -> Result<Report, CliError> {
    let variant = Variant { run_id: exp.run_id.clone(), decode: exp.decode.clone() };
    execute("sample", exp, &[variant], 1)
}

/// Fixed temperatures on the first half of the scales against the
/// configured schedule.
pub fn sweep_tau_variants(exp: &Experiment) -> Result<Vec<Variant>, CliError> {
    let n = exp.scale_count();
    let half = n / 2;
    if half == 0 {
        return Err(config_problem("model.scales", "sweep-tau needs at least 2 scales"));
    }
    let mut variants = Vec::new();
    for tau in [5.0, 10.0, 20.0] {
        let schedule = ConfidenceTargetSchedule::with_argmax_suffix(vec![ScheduleEntry::FixedTau(tau); half], n)?;
        let mut plan = exp.decode.plan.clone();
        plan.schedule = schedule;
        variants.push(Variant {
            run_id: format!("tau={tau}_half"),
            decode: DecodeConfig { plan, search: exp.decode.search },
        });
    }
    variants.push(Variant { run_id: "adaptive".to_string(), decode: exp.decode.clone() });
    Ok(variants)
}

pub fn cmd_sweep_tau(exp: &Experiment) -> Result<Report, CliError> {
    execute("sweep-tau", exp, &sweep_tau_variants(exp)?, 1)
}

/// `τ = 1` on every scale with the configured sampler and no search.
pub fn baseline_variant(exp: &Experiment) -> Result<Variant, CliError> {
    let mut plan = DecodePlan::constant(1.0, exp.decode.plan.policy, exp.scale_count())?;
    plan.bisection = exp.decode.plan.bisection;
    plan.noise_decay = exp.decode.plan.noise_decay.clone();
    Ok(Variant { run_id: "baseline".to_string(), decode: DecodeConfig::sequential(plan) })
}

pub fn cmd_diversity(exp: &Experiment) -> Result<Report, CliError> {
    if exp.seeds.len() < 2 {
        return Err(config_problem("run.seeds", "diversity needs at least 2 seeds"));
    }
    let baseline = baseline_variant(exp)?;
    let candidate = Variant { run_id: exp.run_id.clone(), decode: exp.decode.clone() };
    if baseline.run_id == candidate.run_id {
        return Err(config_problem("run.id", "must differ from \"baseline\" for diversity"));
    }
    let mut report = execute("diversity", exp, &[baseline.clone(), candidate.clone()], exp.prompts)?;
    let per_run = |id: &str| -> Vec<f64> {
        report.summary.iter().filter(|s| s.run_id == id).map(|s| s.diversity.unwrap_or(0.0)).collect()
    };
    let a = per_run(&baseline.run_id);
    let b = per_run(&candidate.run_id);
    let rng = SeededRng::from_seed(exp.profile.seed());
    let p_value = paired_permutation_p_value(&a, &b, exp.resamples, &rng)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    report.test = Some(PermutationTest {
        baseline: baseline.run_id,
        candidate: candidate.run_id,
        prompts: a.len(),
        mean_baseline: mean(&a),
        mean_candidate: mean(&b),
        p_value,
    });
    Ok(report)
}

/// No search, then every criterion over the configured (or default) window.
pub fn pathsearch_variants(exp: &Experiment) -> Result<Vec<Variant>, CliError> {
    let window = window_or_default(exp);
    window.validate(exp.scale_count()).map_err(|e| config_problem("search", &e.to_string()))?;
    let mut variants =
        vec![Variant { run_id: "no_search".to_string(), decode: sequential_without_search(&exp.decode) }];
    for criterion in [Criterion::NegLogProb, Criterion::Entropy, Criterion::MeanMaxProb, Criterion::Energy] {
        let settings = SearchSettings::new(window, criterion);
        variants.push(Variant {
            run_id: format!("search_{}", criterion.name()),
            decode: DecodeConfig::with_search(exp.decode.plan.clone(), settings),
        });
    }
    Ok(variants)
}

pub fn cmd_pathsearch(exp: &Experiment) -> Result<Report, CliError> {
    execute("pathsearch", exp, &pathsearch_variants(exp)?, 1)
}

/// `(M, N)` grid evaluated by `mn-sweep`.
pub const MN_GRID: [(usize, usize); 5] = [(8, 2), (8, 3), (8, 4), (4, 4), (6, 4)];

pub fn mn_sweep_variants(exp: &Experiment) -> Result<Vec<Variant>, CliError> {
    let anchor = window_or_default(exp).anchor;
    let criterion = exp.decode.search.map(|s| s.criterion).unwrap_or(Criterion::Energy);
    let mut variants =
        vec![Variant { run_id: "no_search".to_string(), decode: sequential_without_search(&exp.decode) }];
    for (m, n) in MN_GRID {
        let window = SearchWindow { anchor, lookahead: n, candidates: m };
        window
            .validate(exp.scale_count())
            .map_err(|e| config_problem("search.anchor", &format!("mn-sweep window M={m}, N={n}: {e}")))?;
        variants.push(Variant {
            run_id: format!("M={m}_N={n}"),
            decode: DecodeConfig::with_search(exp.decode.plan.clone(), SearchSettings::new(window, criterion)),
        });
    }
    Ok(variants)
}

pub fn cmd_mn_sweep(exp: &Experiment) -> Result<Report, CliError> {
    execute("mn-sweep", exp, &mn_sweep_variants(exp)?, 1)
}

fn config_problem(field: &str, message: &str) -> CliError {
    CliError::Config(ConfigError::Invalid(vec![crate::config::Diagnostic {
        field: field.to_string(),
        message: message.to_string(),
    }]))
}

fn csv_bytes<T: Serialize>(items: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for item in items {
        w.serialize(item)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv writer: {e}"))
}

/// Writes `report` under `out`; returns the paths written.
pub fn write_report(report: &Report, out: &Path, format: Format) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = report.command.replace('-', "_");
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    match format {
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(report).context("serializing report")?;
            bytes.push(b'\n');
            files.push((out.join(format!("{stem}.json")), bytes));
        }
        Format::Csv => {
            let table: Vec<_> = report.records.iter().flat_map(rows).collect();
            files.push((out.join(format!("{stem}.csv")), csv_bytes(&table)?));
            if report.command != "sample" {
                files.push((out.join(format!("{stem}_summary.csv")), csv_bytes(&report.summary)?));
            }
            if let Some(test) = &report.test {
                files.push((out.join(format!("{stem}_test.csv")), csv_bytes(std::slice::from_ref(test))?));
            }
        }
    }
    for (path, bytes) in &files {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
