//! Adaptive temperature scaling.
//!
//! For each scale the mean peak confidence `p̄(τ)` (average over all bits of
//! the larger class probability at temperature `τ`) is driven to a target
//! `S_k` by bisection on `τ`. `p̄` is continuous and non-increasing in `τ`,
//! so when `p̄(τ) > S_k` the root lies above `τ` and the lower bound moves up.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::probability::{check_tau, peak_probability};
use crate::types::BitLogitGrid;

/// Decoding rule for one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleEntry {
    /// Solve `τ_k` so that `p̄_k(τ_k) ≈ S_k`.
    Target(f64),
    FixedTau(f64),
    Argmax,
}

impl ScheduleEntry {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleEntry::Target(s) => check_target(s),
            ScheduleEntry::FixedTau(tau) => check_tau(tau),
            ScheduleEntry::Argmax => Ok(()),
        }
    }

    pub fn target(&self) -> Option<f64> {
        match *self {
            ScheduleEntry::Target(s) => Some(s),
            _ => None,
        }
    }
}

fn check_target(s: f64) -> Result<()> {
    if s > 0.5 && s < 1.0 {
        Ok(())
    } else {
        invalid(format!("confidence target must be in (0.5, 1), got {s}"))
    }
}

/// Per-scale decoding rules covering every scale of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTargetSchedule {
    entries: Vec<ScheduleEntry>,
}

impl ConfidenceTargetSchedule {
    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return invalid("schedule has no entries");
        }
        for (k, e) in entries.iter().enumerate() {
            e.validate().map_err(|err| crate::Error::InvalidArgument(format!("scale {}: {err}", k + 1)))?;
        }
        Ok(Self { entries })
    }

    /// Targets rising linearly from `start` to `end` over the first
    /// `active_prefix` scales, argmax afterwards.
    pub fn linear(start: f64, end: f64, scale_count: usize, active_prefix: usize) -> Result<Self> {
        check_target(start)?;
        check_target(end)?;
        if start > end {
            return invalid(format!("linear schedule must be non-decreasing ({start} > {end})"));
        }
        if active_prefix > scale_count {
            return invalid(format!("active prefix {active_prefix} exceeds scale count {scale_count}"));
        }
        let targets = (0..active_prefix).map(|i| {
            if active_prefix == 1 {
                start
            } else {
                start + (end - start) * i as f64 / (active_prefix - 1) as f64
            }
        });
        Self::with_argmax_suffix(targets.map(ScheduleEntry::Target).collect(), scale_count)
    }

    /// The same target on the first `active_prefix` scales, argmax afterwards.
    pub fn fixed_target(target: f64, scale_count: usize, active_prefix: usize) -> Result<Self> {
        Self::linear(target, target, scale_count, active_prefix)
    }

    /// An explicit target list followed by argmax on the remaining scales.
    pub fn explicit(targets: &[f64], scale_count: usize) -> Result<Self> {
        Self::with_argmax_suffix(targets.iter().map(|&s| ScheduleEntry::Target(s)).collect(), scale_count)
    }

    /// A fixed temperature on every scale.
    pub fn constant_tau(tau: f64, scale_count: usize) -> Result<Self> {
        Self::new(vec![ScheduleEntry::FixedTau(tau); scale_count])
    }

    pub fn argmax(scale_count: usize) -> Result<Self> {
        Self::new(vec![ScheduleEntry::Argmax; scale_count])
    }

    /// Pads `prefix` with argmax up to `scale_count` entries.
    pub fn with_argmax_suffix(mut prefix: Vec<ScheduleEntry>, scale_count: usize) -> Result<Self> {
        if prefix.len() > scale_count {
            return invalid(format!("schedule has {} entries but the run has {scale_count} scales", prefix.len()));
        }
        prefix.resize(scale_count, ScheduleEntry::Argmax);
        Self::new(prefix)
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for 1-based scale `k`.
    pub fn entry(&self, k: usize) -> Option<ScheduleEntry> {
        k.checked_sub(1).and_then(|i| self.entries.get(i)).copied()
    }

    pub fn targets(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(ScheduleEntry::target).collect()
    }
}

/// Bisection bracket and stopping rule.
///
/// The search stops once `|p̄(τ) - S| < epsilon` and the bracket is no wider
/// than `tau_tolerance`, or after `max_iterations` midpoints. Setting
/// `tau_tolerance` to infinity stops on the confidence test alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionSettings {
    pub tau_min: f64,
    pub tau_max: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tau_tolerance: f64,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self { tau_min: 0.001, tau_max: 100.0, epsilon: 0.005, max_iterations: 60, tau_tolerance: 1e-6 }
    }
}

impl BisectionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min.is_finite() && self.tau_max.is_finite()) {
            return invalid(format!("tau_min must be positive and finite, got {}", self.tau_min));
        }
        if self.tau_min >= self.tau_max {
            return invalid(format!("tau_min {} must be below tau_max {}", self.tau_min, self.tau_max));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        if self.tau_tolerance.is_nan() || self.tau_tolerance <= 0.0 {
            return invalid(format!("tau_tolerance must be positive, got {}", self.tau_tolerance));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attainability {
    Attained,
    /// `p̄(τ_max) > S`: the logits stay sharper than the target even at `τ_max`.
    TooSharp,
    /// `p̄(τ_min) < S`: the logits are flatter than the target even at `τ_min`.
    TooFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSolution {
    pub tau: f64,
    /// `p̄` at the returned `τ`.
    pub achieved: f64,
    pub iterations: usize,
    pub attainability: Attainability,
    /// Whether the stopping rule was met before `max_iterations`.
    pub converged: bool,
}

/// Average over all bits of the larger class probability at `tau`.
pub fn mean_peak_confidence(grid: &BitLogitGrid, tau: f64) -> Result<f64> {
    mean_peak_confidence_of(grid.pairs(), tau)
}

pub fn mean_peak_confidence_of(pairs: &[[f64; 2]], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if pairs.is_empty() {
        return invalid("mean peak confidence of an empty grid");
    }
    Ok(mean_peak(pairs, tau))
}

fn mean_peak(pairs: &[[f64; 2]], tau: f64) -> f64 {
    pairs.iter().map(|&p| peak_probability(p, tau)).sum::<f64>() / pairs.len() as f64
}

/// Bisects `τ` in `[tau_min, tau_max]` until `p̄(τ)` is within `epsilon` of
/// `target`. Unreachable targets return the clamped bound and a flag.
pub fn solve_temperature(
    grid: &BitLogitGrid,
    target: f64,
    settings: &BisectionSettings,
) -> Result<TemperatureSolution> {
    check_target(target)?;
    settings.validate()?;
    let pairs = grid.pairs();
    let p_bar = |tau: f64| mean_peak(pairs, tau);

    let at_max = p_bar(settings.tau_max);
    if at_max > target && at_max - target >= settings.epsilon {
        return Ok(TemperatureSolution {
            tau: settings.tau_max,
            achieved: at_max,
            iterations: 0,
            attainability: Attainability::TooSharp,
            converged: false,
        });
    }
    let at_min = p_bar(settings.tau_min);
    if at_min < target && target - at_min >= settings.epsilon {
        return Ok(TemperatureSolution {
            tau: settings.tau_min,
            achieved: at_min,
            iterations: 0,
            attainability: Attainability::TooFlat,
            converged: false,
        });
    }

    let (mut lo, mut hi) = (settings.tau_min, settings.tau_max);
    let mut tau = 0.5 * (lo + hi);
    let mut achieved = p_bar(tau);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        tau = 0.5 * (lo + hi);
        achieved = p_bar(tau);
        if (achieved - target).abs() < settings.epsilon && hi - lo <= settings.tau_tolerance {
            converged = true;
            break;
        }
        if achieved > target {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    if !converged && (achieved - target).abs() < settings.epsilon {
        converged = hi - lo <= settings.tau_tolerance;
    }
    Ok(TemperatureSolution { tau, achieved, iterations, attainability: Attainability::Attained, converged })
}
