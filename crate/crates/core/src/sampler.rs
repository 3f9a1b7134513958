//! Sampling operators over per-bit two-class distributions.
//!
//! The nucleus filter on a two-class distribution keeps the smallest prefix
//! of classes, sorted by descending probability, whose cumulative mass is
//! `>= threshold`. With two classes that is: the dominant class alone when
//! its probability reaches the threshold, otherwise both classes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::probability::{check_tau, softmax_pair};
use crate::rng::{SeededRng, StreamGenerator};
use crate::types::{Bit, BitLogitGrid, BitTokenGrid};

pub const DEFAULT_TOP_P: f64 = 0.97;

/// Class chosen by argmax when both logits are exactly equal.
pub const ARGMAX_TIE_BIT: Bit = Bit::Pos;

/// Largest bit depth for which joint top-k enumerates all `2^d` patterns.
pub const MAX_JOINT_BIT_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerPolicy {
    Argmax,
    TopP {
        threshold: f64,
    },
    /// Top-k over the `2^d` joint bit patterns of a token.
    JointTopK {
        k: usize,
    },
    GumbelPerturbedArgmax {
        noise_strength: f64,
    },
}

impl Default for SamplerPolicy {
    fn default() -> Self {
        SamplerPolicy::TopP { threshold: DEFAULT_TOP_P }
    }
}

impl SamplerPolicy {
    pub fn top_p(threshold: f64) -> Self {
        SamplerPolicy::TopP { threshold }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerPolicy::Argmax => "argmax",
            SamplerPolicy::TopP { .. } => "top_p",
            SamplerPolicy::JointTopK { .. } => "joint_top_k",
            SamplerPolicy::GumbelPerturbedArgmax { .. } => "gumbel_perturbed_argmax",
        }
    }

    /// Checks parameter ranges; `bit_depth` bounds `k` for joint top-k.
    pub fn validate(&self, bit_depth: Option<usize>) -> Result<()> {
        match *self {
            SamplerPolicy::Argmax => Ok(()),
            SamplerPolicy::TopP { threshold } => {
                if threshold > 0.0 && threshold <= 1.0 {
                    Ok(())
                } else {
                    invalid(format!("top-p threshold must be in (0, 1], got {threshold}"))
                }
            }
            SamplerPolicy::JointTopK { k } => {
                if k == 0 {
                    return invalid("joint top-k needs k >= 1");
                }
                if let Some(d) = bit_depth {
                    if d > MAX_JOINT_BIT_DEPTH {
                        return Err(Error::Unsupported(format!(
                            "joint top-k enumerates 2^d patterns; d = {d} exceeds {MAX_JOINT_BIT_DEPTH}"
                        )));
                    }
                    if k > 1usize << d {
                        return invalid(format!("joint top-k: k = {k} exceeds 2^{d}"));
                    }
                }
                Ok(())
            }
            SamplerPolicy::GumbelPerturbedArgmax { noise_strength } => {
                if noise_strength >= 0.0 && noise_strength.is_finite() {
                    Ok(())
                } else {
                    invalid(format!("noise strength must be non-negative, got {noise_strength}"))
                }
            }
        }
    }
}

/// A sampled bit plus whether more than one class was still possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitDraw {
    pub bit: Bit,
    pub random: bool,
}

fn argmax_bit(pair: [f64; 2]) -> Bit {
    if pair[0] > pair[1] {
        Bit::Neg
    } else {
        ARGMAX_TIE_BIT
    }
}

/// Samples one bit from `softmax(pair / tau)` under `policy`.
///
/// Top-p always consumes exactly one unit draw per bit, whether or not the
/// bit ends up random, so two temperatures sampled from the same stream use
/// common random numbers.
pub fn sample_bit(pair: [f64; 2], tau: f64, policy: &SamplerPolicy, gen: &mut StreamGenerator) -> Result<BitDraw> {
    check_tau(tau)?;
    policy.validate(None)?;
    if !pair[0].is_finite() || !pair[1].is_finite() {
        return invalid(format!("logits must be finite, got {pair:?}"));
    }
    Ok(draw_bit(pair, tau, policy, gen))
}

#[inline]
fn draw_bit(pair: [f64; 2], tau: f64, policy: &SamplerPolicy, gen: &mut StreamGenerator) -> BitDraw {
    match *policy {
        SamplerPolicy::Argmax => BitDraw { bit: argmax_bit(pair), random: false },
        SamplerPolicy::TopP { threshold } => {
            let u = gen.next_unit();
            let probs = softmax_pair(pair, tau);
            let dominant = argmax_bit(pair);
            if probs[dominant.class_index()] >= threshold {
                BitDraw { bit: dominant, random: false }
            } else {
                BitDraw { bit: full_draw(probs, u), random: true }
            }
        }
        // A single bit is its own joint pattern: k >= 2 keeps both classes.
        SamplerPolicy::JointTopK { k } => {
            let u = gen.next_unit();
            if k >= 2 {
                BitDraw { bit: full_draw(softmax_pair(pair, tau), u), random: true }
            } else {
                BitDraw { bit: argmax_bit(pair), random: false }
            }
        }
        SamplerPolicy::GumbelPerturbedArgmax { noise_strength } => {
            let g0 = gen.next_gumbel();
            let g1 = gen.next_gumbel();
            let perturbed = [pair[0] / tau + noise_strength * g0, pair[1] / tau + noise_strength * g1];
            BitDraw { bit: argmax_bit(perturbed), random: noise_strength > 0.0 }
        }
    }
}

#[inline]
fn full_draw(probs: [f64; 2], u: f64) -> Bit {
    if u < probs[1] {
        Bit::Pos
    } else {
        Bit::Neg
    }
}

/// Sampled grid and the share of bits whose draw was random.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSample {
    pub tokens: BitTokenGrid,
    pub random_bit_fraction: f64,
}

/// Samples every bit of a scale. Token `l` draws from `rng.derive(l)`.
pub fn sample_scale(grid: &BitLogitGrid, tau: f64, policy: &SamplerPolicy, rng: &SeededRng) -> Result<ScaleSample> {
    check_tau(tau)?;
    let spec = *grid.scale();
    policy.validate(Some(spec.bit_depth()))?;
    if let SamplerPolicy::JointTopK { k } = *policy {
        return joint_top_k_scale(grid, tau, k, rng);
    }
    let d = spec.bit_depth();
    let mut bits = Vec::with_capacity(spec.bit_count());
    let mut random = 0usize;
    for token in 0..spec.token_count() {
        let mut gen = rng.derive(token as u64).generator();
        for &pair in &grid.pairs()[token * d..(token + 1) * d] {
            let draw = draw_bit(pair, tau, policy, &mut gen);
            random += usize::from(draw.random);
            bits.push(draw.bit);
        }
    }
    Ok(ScaleSample {
        tokens: BitTokenGrid::new(spec, bits)?,
        random_bit_fraction: random as f64 / spec.bit_count() as f64,
    })
}

/// Probability of each of the `2^d` joint patterns of one token under
/// independent bits. Bit `i` of the pattern index set means `+1` at bit `i`.
pub fn joint_pattern_probabilities(pairs: &[[f64; 2]], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let d = pairs.len();
    if d > MAX_JOINT_BIT_DEPTH {
        return Err(Error::Unsupported(format!("joint enumeration over d = {d} bits exceeds {MAX_JOINT_BIT_DEPTH}")));
    }
    let per_bit: Vec<[f64; 2]> = pairs.iter().map(|&p| softmax_pair(p, tau)).collect();
    let mut probs = vec![1.0f64; 1 << d];
    for (i, p) in per_bit.iter().enumerate() {
        let block = 1usize << i;
        for (pattern, slot) in probs.iter_mut().enumerate() {
            *slot *= p[(pattern / block) & 1];
        }
    }
    Ok(probs)
}

/// Bit pattern of a joint index.
pub fn pattern_bits(pattern: usize, bit_depth: usize) -> Vec<Bit> {
    (0..bit_depth).map(|i| Bit::from_class_index((pattern >> i) & 1)).collect()
}

/// Joint top-k over each token's bit patterns: keep the `k` most likely
/// patterns (ties by lower pattern index), renormalise, draw one.
pub fn joint_top_k_sample(grid: &BitLogitGrid, tau: f64, k: usize, rng: &SeededRng) -> Result<BitTokenGrid> {
    let policy = SamplerPolicy::JointTopK { k };
    policy.validate(Some(grid.scale().bit_depth()))?;
    check_tau(tau)?;
    Ok(joint_top_k_scale(grid, tau, k, rng)?.tokens)
}

fn joint_top_k_scale(grid: &BitLogitGrid, tau: f64, k: usize, rng: &SeededRng) -> Result<ScaleSample> {
    let spec = *grid.scale();
    let d = spec.bit_depth();
    let mut bits = Vec::with_capacity(spec.bit_count());
    let mut random = 0usize;
    for token in 0..spec.token_count() {
        let probs = joint_pattern_probabilities(grid.token(token), tau)?;
        let kept = top_k_patterns(&probs, k);
        let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
        let u = rng.derive(token as u64).generator().next_unit() * mass;
        let mut chosen = kept[kept.len() - 1];
        let mut acc = 0.0;
        for &i in &kept {
            acc += probs[i];
            if u < acc {
                chosen = i;
                break;
            }
        }
        // A bit is random when the surviving patterns disagree on it.
        let all_on = kept.iter().fold(usize::MAX, |a, &i| a & i);
        let any_on = kept.iter().fold(0usize, |a, &i| a | i);
        random += (0..d).filter(|&i| ((all_on ^ any_on) >> i) & 1 == 1).count();
        bits.extend(pattern_bits(chosen, d));
    }
    Ok(ScaleSample {
        tokens: BitTokenGrid::new(spec, bits)?,
        random_bit_fraction: random as f64 / spec.bit_count() as f64,
    })
}

fn top_k_patterns(probs: &[f64], k: usize) -> Vec<usize> {
    let order = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    let k = k.min(idx.len());
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

/// `logits + strength * g` with i.i.d. standard Gumbel `g`.
pub fn gumbel_perturb(logits: &[f64], strength: f64, gen: &mut StreamGenerator) -> Result<Vec<f64>> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return invalid(format!("noise strength must be non-negative, got {strength}"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return invalid("logits must be finite");
    }
    if strength == 0.0 {
        return Ok(logits.to_vec());
    }
    Ok(logits.iter().map(|&x| x + strength * gen.next_gumbel()).collect())
}

/// Per-step Gumbel strengths; steps past the end of the list are unperturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecay {
    strengths: Vec<f64>,
}

impl NoiseDecay {
    pub fn new(strengths: Vec<f64>) -> Result<Self> {
        if let Some(s) = strengths.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return invalid(format!("noise strengths must be non-negative, got {s}"));
        }
        Ok(Self { strengths })
    }

    /// Linear decay 1.4 down to 0.8 over the first seven steps.
    pub fn linear_default() -> Self {
        Self { strengths: vec![1.4, 1.3, 1.2, 1.1, 1.0, 0.9, 0.8] }
    }

    pub fn strengths(&self) -> &[f64] {
        &self.strengths
    }

    /// Strength at 1-based `step`.
    pub fn strength_at(&self, step: usize) -> f64 {
        step.checked_sub(1).and_then(|i| self.strengths.get(i)).copied().unwrap_or(0.0)
    }
}
