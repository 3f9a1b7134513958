//! Deterministic synthetic logits source.
//!
//! For bit `i` of token `l` at scale `k` the logit pair is
//! `(0, a_k * u + γ * parent)`, where
//!
//! * `u ∈ (-1, 1)` comes from `hash64(seed, k, l, i, digest(context))`,
//! * `parent ∈ {-1, +1}` is bit `i` of the co-located token one scale up
//!   (nearest-neighbour downsampling of the token grid), `0` at scale 1.
//!
//! The context digest enters the hash only when `γ > 0`. With `γ = 0` the
//! scales are independent of each other.
//!
//! The logit gap is `a_k * u` with `u` uniform, so at scale 1 a top-p
//! threshold `p` leaves a bit random with probability `logit(p) / a_1`.

use serde::{Deserialize, Serialize};

use crate::decode::LogitsSource;
use crate::error::{invalid, Result};
use crate::rng::{hash_words, mix64};
use crate::types::{geometry_from_sides, validate_geometry, BitLogitGrid, BitTokenGrid, ScaleSpec};

/// Scale-1 random-bit fraction the default profile is calibrated to.
pub const DEFAULT_FIRST_SCALE_RANDOM_FRACTION: f64 = 0.10;
/// Top-p threshold the calibration assumes.
pub const CALIBRATION_TOP_P: f64 = 0.97;
/// Per-scale amplitude decay of the default profile.
pub const DEFAULT_AMPLITUDE_DECAY: f64 = 0.7;
/// Amplitude floor of the default profile.
pub const DEFAULT_AMPLITUDE_FLOOR: f64 = 6.0;
pub const DEFAULT_CONTEXT_GAMMA: f64 = 1.0;
pub const DEFAULT_SCALE_COUNT: usize = 8;
pub const DEFAULT_BIT_DEPTH: usize = 16;

/// `a_1` such that `P(|a_1 u| < logit(0.97)) = 0.10` for `u ~ U(-1, 1)`.
pub fn calibrated_first_amplitude() -> f64 {
    (CALIBRATION_TOP_P / (1.0 - CALIBRATION_TOP_P)).ln() / DEFAULT_FIRST_SCALE_RANDOM_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessProfile {
    amplitudes: Vec<f64>,
    context_gamma: f64,
    seed: u64,
}

impl SharpnessProfile {
    pub fn new(amplitudes: Vec<f64>, context_gamma: f64, seed: u64) -> Result<Self> {
        if let Some(a) = amplitudes.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return invalid(format!("amplitudes must be non-negative and finite, got {a}"));
        }
        if !(context_gamma >= 0.0 && context_gamma.is_finite()) {
            return invalid(format!("context sensitivity must be non-negative, got {context_gamma}"));
        }
        Ok(Self { amplitudes, context_gamma, seed })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// `a_k` for 1-based `k`.
    pub fn amplitude(&self, k: usize) -> f64 {
        self.amplitudes[k - 1]
    }

    pub fn context_gamma(&self) -> f64 {
        self.context_gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_context_gamma(mut self, gamma: f64) -> Result<Self> {
        Self::new(std::mem::take(&mut self.amplitudes), gamma, self.seed)
    }
}

/// Amplitudes `max(a_1 * 0.7^(k-1), 6)` with the calibrated `a_1`, `γ = 1`.
pub fn default_profile(scale_count: usize) -> Result<SharpnessProfile> {
    if scale_count < 2 {
        return invalid(format!("default profile needs at least 2 scales, got {scale_count}"));
    }
    let a1 = calibrated_first_amplitude();
    let amplitudes =
        (0..scale_count).map(|i| (a1 * DEFAULT_AMPLITUDE_DECAY.powi(i as i32)).max(DEFAULT_AMPLITUDE_FLOOR)).collect();
    SharpnessProfile::new(amplitudes, DEFAULT_CONTEXT_GAMMA, 0)
}

/// Side lengths `1..=scale_count`, so `L_k = k^2`.
pub fn default_geometry(scale_count: usize, bit_depth: usize) -> Result<Vec<ScaleSpec>> {
    geometry_from_sides(&(1..=scale_count).collect::<Vec<_>>(), bit_depth)
}

/// Order-sensitive digest of every bit of every context grid.
pub fn context_digest(context: &[BitTokenGrid]) -> u64 {
    let mut words = Vec::with_capacity(context.len() * 4);
    for grid in context {
        let s = grid.scale();
        words.extend([s.index() as u64, s.height() as u64, s.width() as u64, s.bit_depth() as u64]);
        for chunk in grid.bits().chunks(64) {
            let packed = chunk.iter().enumerate().fold(0u64, |acc, (i, b)| acc | ((b.to_binary() as u64) << i));
            words.push(packed);
        }
    }
    hash_words(&words)
}

/// Maps a hash to the open interval `(-1, 1)`.
fn signed_unit(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (2.0 / (1u64 << 52) as f64) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    geometry: Vec<ScaleSpec>,
    profile: SharpnessProfile,
}

impl ToyModel {
    pub fn new(geometry: Vec<ScaleSpec>, profile: SharpnessProfile) -> Result<Self> {
        validate_geometry(&geometry)?;
        if profile.amplitudes.len() != geometry.len() {
            return invalid(format!(
                "profile has {} amplitudes for {} scales",
                profile.amplitudes.len(),
                geometry.len()
            ));
        }
        Ok(Self { geometry, profile })
    }

    /// Default profile on the default geometry with the given model seed.
    pub fn default_with_seed(seed: u64) -> Result<Self> {
        Self::new(
            default_geometry(DEFAULT_SCALE_COUNT, DEFAULT_BIT_DEPTH)?,
            default_profile(DEFAULT_SCALE_COUNT)?.with_seed(seed),
        )
    }

    pub fn profile(&self) -> &SharpnessProfile {
        &self.profile
    }

    pub fn geometry(&self) -> &[ScaleSpec] {
        &self.geometry
    }

    /// Logits of scale `k`; `context` must hold exactly scales `1..k`.
    pub fn synth_logits(&self, context: &[BitTokenGrid], k: usize) -> Result<BitLogitGrid> {
        if k == 0 || k > self.geometry.len() {
            return invalid(format!("scale {k} outside 1..={}", self.geometry.len()));
        }
        if context.len() != k - 1 {
            return invalid(format!("scale {k} needs {} context grids, got {}", k - 1, context.len()));
        }
        for (grid, spec) in context.iter().zip(&self.geometry) {
            if grid.scale() != spec {
                return invalid(format!("context grid for scale {} has the wrong geometry", spec.index()));
            }
        }
        let spec = self.geometry[k - 1];
        let gamma = self.profile.context_gamma;
        let amplitude = self.profile.amplitude(k);
        let digest = if gamma > 0.0 { context_digest(context) } else { 0 };
        let parent = context.last();
        let base = hash_words(&[self.profile.seed, k as u64, digest]);
        let d = spec.bit_depth();

        let mut pairs = Vec::with_capacity(spec.bit_count());
        for row in 0..spec.height() {
            for col in 0..spec.width() {
                let l = row * spec.width() + col;
                let parent_token = parent.map(|p| {
                    let ps = p.scale();
                    let pr = row * ps.height() / spec.height();
                    let pc = col * ps.width() / spec.width();
                    p.token(pr * ps.width() + pc)
                });
                for i in 0..d {
                    let u = signed_unit(mix64(base ^ mix64(((l as u64) << 20) | i as u64)));
                    let influence = parent_token.map_or(0.0, |t| f64::from(t[i].value()));
                    pairs.push([0.0, amplitude * u + gamma * influence]);
                }
            }
        }
        BitLogitGrid::new(spec, pairs)
    }
}

impl LogitsSource for ToyModel {
    fn scales(&self) -> &[ScaleSpec] {
        &self.geometry
    }

    fn next_logits(&self, context: &[BitTokenGrid], scale: usize) -> Result<BitLogitGrid> {
        self.synth_logits(context, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temperature::mean_peak_confidence;
    use crate::types::Bit;

    fn model(amplitudes: Vec<f64>, gamma: f64, seed: u64) -> ToyModel {
        let geometry = default_geometry(amplitudes.len(), 4).unwrap();
        ToyModel::new(geometry, SharpnessProfile::new(amplitudes, gamma, seed).unwrap()).unwrap()
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let m = model(vec![0.0, 0.0], 0.0, 1);
        let g = m.synth_logits(&[], 1).unwrap();
        assert!(g.pairs().iter().all(|p| p[0] == p[1]));
        assert_eq!(mean_peak_confidence(&g, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn pure_function_of_inputs() {
        let m = model(vec![5.0, 5.0, 5.0], 1.0, 3);
        let s1 = m.synth_logits(&[], 1).unwrap();
        assert_eq!(s1, m.synth_logits(&[], 1).unwrap());
        let ctx = vec![BitTokenGrid::filled(m.geometry()[0], Bit::Pos)];
        assert_eq!(m.synth_logits(&ctx, 2).unwrap(), m.synth_logits(&ctx, 2).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = model(vec![5.0, 5.0], 1.0, 1).synth_logits(&[], 1).unwrap();
        let b = model(vec![5.0, 5.0], 1.0, 2).synth_logits(&[], 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn context_flip_changes_logits() {
        let m = model(vec![5.0, 5.0, 5.0], 1.0, 4);
        let s1 = BitTokenGrid::filled(m.geometry()[0], Bit::Pos);
        let s2 = BitTokenGrid::filled(m.geometry()[1], Bit::Neg);
        let base = m.synth_logits(&[s1.clone(), s2.clone()], 3).unwrap();
        for flat in 0..s1.bits().len() {
            let flipped = m.synth_logits(&[s1.with_flipped(flat), s2.clone()], 3).unwrap();
            assert_ne!(base, flipped);
        }
        for flat in 0..s2.bits().len() {
            let flipped = m.synth_logits(&[s1.clone(), s2.with_flipped(flat)], 3).unwrap();
            assert_ne!(base, flipped);
        }
    }

    #[test]
    fn gamma_zero_factorises() {
        let m = model(vec![5.0, 5.0], 0.0, 4);
        let a = m.synth_logits(&[BitTokenGrid::filled(m.geometry()[0], Bit::Pos)], 2).unwrap();
        let b = m.synth_logits(&[BitTokenGrid::filled(m.geometry()[0], Bit::Neg)], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parent_bit_shifts_logit() {
        // With a_k = 0 the logit is exactly γ times the co-located parent bit.
        let m = model(vec![0.0, 0.0], 2.0, 4);
        let parent = BitTokenGrid::unflatten(m.geometry()[0], &[1, -1, 1, -1]).unwrap();
        let g = m.synth_logits(&[parent], 2).unwrap();
        for l in 0..4 {
            assert_eq!(g.token(l).iter().map(|p| p[1]).collect::<Vec<_>>(), vec![2.0, -2.0, 2.0, -2.0]);
        }
    }

    #[test]
    fn context_length_checked() {
        let m = model(vec![5.0, 5.0, 5.0], 1.0, 4);
        assert!(m.synth_logits(&[], 2).is_err());
        assert!(m.synth_logits(&[], 0).is_err());
        assert!(m.synth_logits(&[], 4).is_err());
        let wrong = BitTokenGrid::filled(m.geometry()[1], Bit::Pos);
        assert!(m.synth_logits(&[wrong], 2).is_err());
    }

    #[test]
    fn default_profile_shape() {
        let p = default_profile(8).unwrap();
        assert!(p.amplitudes().windows(2).all(|w| w[1] <= w[0]));
        assert!((p.amplitude(1) - 34.761).abs() < 1e-3);
        assert_eq!(p.amplitude(8), DEFAULT_AMPLITUDE_FLOOR);
        assert_eq!(p.context_gamma(), 1.0);
        assert!(default_profile(1).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(SharpnessProfile::new(vec![-1.0], 0.0, 0).is_err());
        assert!(SharpnessProfile::new(vec![1.0], -0.5, 0).is_err());
        let geometry = default_geometry(3, 4).unwrap();
        assert!(ToyModel::new(geometry, SharpnessProfile::new(vec![1.0], 0.0, 0).unwrap()).is_err());
    }

    #[test]
    fn signed_unit_open_interval() {
        assert!(signed_unit(0) > -1.0);
        assert!(signed_unit(u64::MAX) < 1.0);
    }
}
