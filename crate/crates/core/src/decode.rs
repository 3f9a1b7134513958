//! Scale-by-scale decoding and the trajectory record.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SeededRng;
use crate::sampler::{sample_scale, NoiseDecay, SamplerPolicy};
use crate::search::{run_path_search, scale_energy, scale_entropy, Criterion, PathScore, SearchSettings, SearchWindow};
use crate::temperature::{
    mean_peak_confidence, solve_temperature, Attainability, BisectionSettings, ConfidenceTargetSchedule, ScheduleEntry,
};
use crate::types::{validate_geometry, BitLogitGrid, BitTokenGrid, ScaleSpec};

/// A multi-scale bitwise generator seen through its logits.
///
/// `next_logits(context, k)` must be a pure function of the model's own
/// parameters, `context` (the grids of scales `1..k`) and `k`.
pub trait LogitsSource: Sync {
    fn scales(&self) -> &[ScaleSpec];

    fn next_logits(&self, context: &[BitTokenGrid], scale: usize) -> Result<BitLogitGrid>;
}

/// How each scale is decoded: temperature rule plus sampling operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodePlan {
    pub schedule: ConfidenceTargetSchedule,
    pub policy: SamplerPolicy,
    pub bisection: BisectionSettings,
    /// Per-scale Gumbel strengths; only used with the Gumbel policy.
    pub noise_decay: Option<NoiseDecay>,
}

impl DecodePlan {
    pub fn new(schedule: ConfidenceTargetSchedule, policy: SamplerPolicy) -> Self {
        Self { schedule, policy, bisection: BisectionSettings::default(), noise_decay: None }
    }

    /// Fixed `τ` on every scale under `policy`.
    pub fn constant(tau: f64, policy: SamplerPolicy, scale_count: usize) -> Result<Self> {
        Ok(Self::new(ConfidenceTargetSchedule::constant_tau(tau, scale_count)?, policy))
    }

    pub fn with_noise_decay(mut self, decay: NoiseDecay) -> Self {
        self.noise_decay = Some(decay);
        self
    }

    pub fn validate(&self, scales: &[ScaleSpec]) -> Result<()> {
        if self.schedule.len() != scales.len() {
            return invalid(format!(
                "schedule covers {} scales but the model has {}",
                self.schedule.len(),
                scales.len()
            ));
        }
        self.bisection.validate()?;
        let d = scales.first().map(|s| s.bit_depth());
        self.policy.validate(d)
    }

    /// Sampling operator for scale `k`.
    pub fn policy_at(&self, k: usize) -> SamplerPolicy {
        match (self.schedule.entry(k), self.policy, &self.noise_decay) {
            (Some(ScheduleEntry::Argmax), _, _) => SamplerPolicy::Argmax,
            (_, SamplerPolicy::GumbelPerturbedArgmax { .. }, Some(decay)) => {
                SamplerPolicy::GumbelPerturbedArgmax { noise_strength: decay.strength_at(k) }
            }
            (_, policy, _) => policy,
        }
    }
}

/// What happened at one scale of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub scale: usize,
    /// Temperature used for sampling (1 on argmax scales).
    pub tau: f64,
    pub target: Option<f64>,
    pub attainability: Option<Attainability>,
    /// Mean peak confidence at `tau`.
    pub p_bar: f64,
    /// Mean peak confidence at `τ = 1`, before any adjustment.
    pub p_bar_unadjusted: f64,
    /// Energy of the sampled bits under the raw logits.
    pub energy: f64,
    /// Mean bit entropy at `tau`.
    pub entropy: f64,
    pub random_fraction: f64,
    pub tokens: BitTokenGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchAudit {
    pub window: SearchWindow,
    pub criterion: Criterion,
    pub candidates: Vec<PathScore>,
    pub winner: usize,
}

/// One complete generation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    /// Root stream id; scale `k` of path `m` draws from `scale_stream`.
    pub stream: u64,
    pub scales: Vec<ScaleRecord>,
    pub search: Option<SearchAudit>,
    /// Bits sampled to produce this trajectory, discarded candidates included.
    pub sampled_bits: usize,
}

impl Trajectory {
    pub fn grids(&self) -> impl Iterator<Item = &BitTokenGrid> {
        self.scales.iter().map(|r| &r.tokens)
    }

    pub fn geometry(&self) -> Vec<ScaleSpec> {
        self.grids().map(|g| *g.scale()).collect()
    }

    pub fn record(&self, k: usize) -> Option<&ScaleRecord> {
        self.scales.iter().find(|r| r.scale == k)
    }
}

/// Stream for scale `k` on candidate path `path` (0 outside a search window).
pub fn scale_stream(root: &SeededRng, k: usize, path: u64) -> SeededRng {
    root.derive(k as u64).derive(path)
}

/// Decodes scale `k` given the grids of the coarser scales.
pub fn decode_scale(
    model: &dyn LogitsSource,
    context: &[BitTokenGrid],
    k: usize,
    plan: &DecodePlan,
    stream: &SeededRng,
) -> Result<(ScaleRecord, BitLogitGrid)> {
    let logits = model.next_logits(context, k)?;
    let Some(entry) = plan.schedule.entry(k) else {
        return invalid(format!("schedule has no entry for scale {k}"));
    };
    let (tau, target, attainability) = match entry {
        ScheduleEntry::Target(s) => {
            let sol = solve_temperature(&logits, s, &plan.bisection)?;
            (sol.tau, Some(s), Some(sol.attainability))
        }
        ScheduleEntry::FixedTau(tau) => (tau, None, None),
        ScheduleEntry::Argmax => (1.0, None, None),
    };
    let sample = sample_scale(&logits, tau, &plan.policy_at(k), stream)?;
    let record = ScaleRecord {
        scale: k,
        tau,
        target,
        attainability,
        p_bar: mean_peak_confidence(&logits, tau)?,
        p_bar_unadjusted: mean_peak_confidence(&logits, 1.0)?,
        energy: scale_energy(&logits, &sample.tokens)?,
        entropy: scale_entropy(&logits, tau)?,
        random_fraction: sample.random_bit_fraction,
        tokens: sample.tokens,
    };
    Ok((record, logits))
}

/// Plain scale-by-scale decoding on path stream 0.
pub fn sample_sequential(model: &dyn LogitsSource, plan: &DecodePlan, rng: &SeededRng) -> Result<Trajectory> {
    let scales = model.scales();
    validate_geometry(scales)?;
    plan.validate(scales)?;
    let mut context = Vec::with_capacity(scales.len());
    let mut records = Vec::with_capacity(scales.len());
    let mut sampled_bits = 0;
    for k in 1..=scales.len() {
        let (record, _) = decode_scale(model, &context, k, plan, &scale_stream(rng, k, 0))?;
        sampled_bits += record.tokens.scale().bit_count();
        context.push(record.tokens.clone());
        records.push(record);
    }
    Ok(Trajectory { seed: rng.seed(), stream: rng.stream(), scales: records, search: None, sampled_bits })
}

/// A decoding plan with optional path search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub plan: DecodePlan,
    pub search: Option<SearchSettings>,
}

impl DecodeConfig {
    pub fn sequential(plan: DecodePlan) -> Self {
        Self { plan, search: None }
    }

    pub fn with_search(plan: DecodePlan, search: SearchSettings) -> Self {
        Self { plan, search: Some(search) }
    }

    pub fn run(&self, model: &dyn LogitsSource, seed: u64) -> Result<Trajectory> {
        let rng = SeededRng::from_seed(seed);
        match &self.search {
            Some(search) => run_path_search(model, search, &self.plan, &rng),
            None => sample_sequential(model, &self.plan, &rng),
        }
    }
}
