//! Run records and the flat rows derived from them.

use std::time::Duration;

use bitdecode::metrics::{pairwise_bit_diversity, ScaleSelection};
use bitdecode::temperature::Attainability;
use bitdecode::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to re-check one generated trajectory offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub prompt: usize,
    pub model_seed: u64,
    pub seed: u64,
    pub config_digest: String,
    /// SHA-256 over every sampled bit (0/1 bytes, coarse to fine).
    pub bits_digest: String,
    pub trajectory: Trajectory,
    /// Reported on stderr only so data files stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

pub fn bits_digest(trajectory: &Trajectory) -> String {
    let mut hasher = Sha256::new();
    for grid in trajectory.grids() {
        let bytes: Vec<u8> = grid.bits().iter().map(|b| b.to_binary()).collect();
        hasher.update(&bytes);
    }
    hex::encode(hasher.finalize())
}

/// One line of the per-scale / per-candidate table.
///
/// Scale rows leave the candidate columns empty; candidate rows sit on the
/// anchor scale and leave the per-scale columns empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub run_id: String,
    pub seed: u64,
    pub scale: usize,
    pub tau: Option<f64>,
    pub p_bar: Option<f64>,
    #[serde(rename = "S_k")]
    pub s_k: Option<f64>,
    pub energy: Option<f64>,
    pub entropy: Option<f64>,
    pub random_fraction: Option<f64>,
    pub criterion: Option<String>,
    pub candidate_id: Option<usize>,
    pub aggregate_score: Option<f64>,
    pub selected: Option<bool>,
}

pub fn rows(record: &RunRecord) -> Vec<Row> {
    let t = &record.trajectory;
    let mut out: Vec<Row> = t
        .scales
        .iter()
        .map(|r| Row {
            run_id: record.run_id.clone(),
            seed: record.seed,
            scale: r.scale,
            tau: Some(r.tau),
            p_bar: Some(r.p_bar),
            s_k: r.target,
            energy: Some(r.energy),
            entropy: Some(r.entropy),
            random_fraction: Some(r.random_fraction),
            criterion: None,
            candidate_id: None,
            aggregate_score: None,
            selected: None,
        })
        .collect();
    if let Some(audit) = &t.search {
        out.extend(audit.candidates.iter().enumerate().map(|(m, score)| Row {
            run_id: record.run_id.clone(),
            seed: record.seed,
            scale: audit.window.anchor,
            tau: None,
            p_bar: None,
            s_k: None,
            energy: None,
            entropy: None,
            random_fraction: None,
            criterion: Some(score.criterion.name().to_string()),
            candidate_id: Some(m),
            aggregate_score: Some(score.aggregate),
            selected: Some(m == audit.winner),
        }));
    }
    out.sort_by_key(|r| (r.seed, r.scale, r.candidate_id.map_or(0, |c| c + 1)));
    out
}

/// Aggregates for one run id and prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub prompt: usize,
    pub model_seed: u64,
    pub seeds: usize,
    /// Mean pairwise bit distance over all scales; empty with a single seed.
    pub diversity: Option<f64>,
    pub mean_entropy: f64,
    pub mean_random_fraction: f64,
    pub mean_energy: f64,
    pub mean_sampled_bits: f64,
    /// Sampled bits relative to one sequential pass.
    pub overhead: f64,
    pub unattainable_scales: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Summary of records that share a run id and prompt, in seed order.
pub fn summarize(records: &[RunRecord]) -> bitdecode::Result<SummaryRow> {
    let first = records.first().ok_or_else(|| bitdecode::Error::InvalidArgument("no records to summarize".into()))?;
    let trajectories: Vec<Trajectory> = records.iter().map(|r| r.trajectory.clone()).collect();
    let diversity =
        if trajectories.len() >= 2 { Some(pairwise_bit_diversity(&trajectories, &ScaleSelection::All)?) } else { None };
    let sequential: usize = first.trajectory.geometry().iter().map(|s| s.bit_count()).sum();
    let all_scales = || trajectories.iter().flat_map(|t| t.scales.iter());
    let mean_sampled_bits = mean(trajectories.iter().map(|t| t.sampled_bits as f64));
    Ok(SummaryRow {
        run_id: first.run_id.clone(),
        prompt: first.prompt,
        model_seed: first.model_seed,
        seeds: records.len(),
        diversity,
        mean_entropy: mean(all_scales().map(|r| r.entropy)),
        mean_random_fraction: mean(all_scales().map(|r| r.random_fraction)),
        mean_energy: mean(all_scales().map(|r| r.energy)),
        mean_sampled_bits,
        overhead: mean_sampled_bits / sequential as f64,
        unattainable_scales: all_scales()
            .filter(|r| matches!(r.attainability, Some(Attainability::TooSharp | Attainability::TooFlat)))
            .count(),
    })
}

/// Human-readable warnings for clamped temperatures.
pub fn warnings(record: &RunRecord) -> Vec<String> {
    record
        .trajectory
        .scales
        .iter()
        .filter_map(|r| {
            let why = match r.attainability? {
                Attainability::Attained => return None,
                Attainability::TooSharp => "logits too sharp",
                Attainability::TooFlat => "logits too flat",
            };
            Some(format!(
                "warning: {} prompt {} seed {} scale {}: target {} unattainable ({why}); tau clamped to {} (p_bar {:.4})",
                record.run_id,
                record.prompt,
                record.seed,
                r.scale,
                r.target.unwrap_or(f64::NAN),
                r.tau,
                r.p_bar
            ))
        })
        .collect()
}
