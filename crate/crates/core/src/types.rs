//! Scale geometry, per-bit logits and sampled bit tensors.
//!
//! Bits live in the alphabet `{-1, +1}`. Logits are stored per class as
//! `[logit(-1), logit(+1)]`, tokens in row-major order and bits within a
//! token contiguous, so the flat index of bit `i` of token `l` is `l * d + i`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One symbol of the bit alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Bit {
    Neg,
    Pos,
}

impl Bit {
    pub const fn value(self) -> i8 {
        match self {
            Bit::Neg => -1,
            Bit::Pos => 1,
        }
    }

    /// Position of this symbol in a logit pair: `0` for `-1`, `1` for `+1`.
    pub const fn class_index(self) -> usize {
        match self {
            Bit::Neg => 0,
            Bit::Pos => 1,
        }
    }

    pub const fn from_class_index(index: usize) -> Bit {
        if index == 0 {
            Bit::Neg
        } else {
            Bit::Pos
        }
    }

    pub fn from_value(value: i8) -> Result<Bit> {
        match value {
            -1 => Ok(Bit::Neg),
            1 => Ok(Bit::Pos),
            other => invalid(format!("bit value {other} is not in {{-1, +1}}")),
        }
    }

    /// `{0, 1}` presentation alias: `0 -> -1`, `1 -> +1`.
    pub fn from_binary(value: u8) -> Result<Bit> {
        match value {
            0 => Ok(Bit::Neg),
            1 => Ok(Bit::Pos),
            other => invalid(format!("binary bit {other} is not in {{0, 1}}")),
        }
    }

    pub const fn to_binary(self) -> u8 {
        self.class_index() as u8
    }

    pub const fn flipped(self) -> Bit {
        match self {
            Bit::Neg => Bit::Pos,
            Bit::Pos => Bit::Neg,
        }
    }
}

impl From<Bit> for i8 {
    fn from(bit: Bit) -> i8 {
        bit.value()
    }
}

impl TryFrom<i8> for Bit {
    type Error = crate::Error;

    fn try_from(value: i8) -> Result<Bit> {
        Bit::from_value(value)
    }
}

/// Geometry of one scale: an `height x width` token grid with `bit_depth`
/// bits per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleSpec {
    index: usize,
    height: usize,
    width: usize,
    bit_depth: usize,
}

impl ScaleSpec {
    pub fn new(index: usize, height: usize, width: usize, bit_depth: usize) -> Result<Self> {
        if index == 0 {
            return invalid("scale index is 1-based");
        }
        if height == 0 || width == 0 || bit_depth == 0 {
            return invalid(format!(
                "scale {index}: height, width and bit depth must be positive (got {height}x{width}, d={bit_depth})"
            ));
        }
        Ok(Self { index, height, width, bit_depth })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit_depth(&self) -> usize {
        self.bit_depth
    }

    /// `L_k = h_k * w_k`.
    pub fn token_count(&self) -> usize {
        self.height * self.width
    }

    pub fn bit_count(&self) -> usize {
        self.token_count() * self.bit_depth
    }
}

/// Square pyramid `h_k = w_k = side_k` for the given side lengths.
pub fn geometry_from_sides(sides: &[usize], bit_depth: usize) -> Result<Vec<ScaleSpec>> {
    let scales = sides
        .iter()
        .enumerate()
        .map(|(i, &side)| ScaleSpec::new(i + 1, side, side, bit_depth))
        .collect::<Result<Vec<_>>>()?;
    validate_geometry(&scales)?;
    Ok(scales)
}

/// Checks the cross-scale invariants of a run's geometry.
pub fn validate_geometry(scales: &[ScaleSpec]) -> Result<()> {
    let Some(first) = scales.first() else {
        return invalid("geometry has no scales");
    };
    for pair in scales.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.index <= prev.index {
            return invalid(format!("scale indices must be strictly increasing ({} then {})", prev.index, next.index));
        }
        if next.token_count() < prev.token_count() {
            return invalid(format!(
                "token counts must be non-decreasing (scale {} has {}, scale {} has {})",
                prev.index,
                prev.token_count(),
                next.index,
                next.token_count()
            ));
        }
    }
    if let Some(odd) = scales.iter().find(|s| s.bit_depth != first.bit_depth) {
        return invalid(format!(
            "bit depth differs across scales ({} at scale {}, {} at scale {})",
            first.bit_depth, first.index, odd.bit_depth, odd.index
        ));
    }
    Ok(())
}

/// Raw per-bit, per-class logits for one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitLogitGrid {
    scale: ScaleSpec,
    logits: Vec<[f64; 2]>,
}

impl BitLogitGrid {
    pub fn new(scale: ScaleSpec, logits: Vec<[f64; 2]>) -> Result<Self> {
        if logits.len() != scale.bit_count() {
            return invalid(format!(
                "scale {}: expected {} logit pairs ({} tokens x {} bits), got {}",
                scale.index,
                scale.bit_count(),
                scale.token_count(),
                scale.bit_depth,
                logits.len()
            ));
        }
        if let Some(pos) = logits.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return invalid(format!("scale {}: non-finite logit at flat index {pos}", scale.index));
        }
        Ok(Self { scale, logits })
    }

    /// Every bit gets the same logit pair.
    pub fn uniform(scale: ScaleSpec, pair: [f64; 2]) -> Result<Self> {
        Self::new(scale, vec![pair; scale.bit_count()])
    }

    pub fn scale(&self) -> &ScaleSpec {
        &self.scale
    }

    pub fn pairs(&self) -> &[[f64; 2]] {
        &self.logits
    }

    pub fn pair(&self, token: usize, bit: usize) -> [f64; 2] {
        self.logits[token * self.scale.bit_depth + bit]
    }

    /// Logit pairs of a single token.
    pub fn token(&self, token: usize) -> &[[f64; 2]] {
        let d = self.scale.bit_depth;
        &self.logits[token * d..(token + 1) * d]
    }
}

/// Sampled bits for one scale.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitTokenGrid {
    scale: ScaleSpec,
    bits: Vec<Bit>,
}

impl BitTokenGrid {
    pub fn new(scale: ScaleSpec, bits: Vec<Bit>) -> Result<Self> {
        if bits.len() != scale.bit_count() {
            return invalid(format!("scale {}: expected {} bits, got {}", scale.index, scale.bit_count(), bits.len()));
        }
        Ok(Self { scale, bits })
    }

    pub fn filled(scale: ScaleSpec, bit: Bit) -> Self {
        Self { scale, bits: vec![bit; scale.bit_count()] }
    }

    pub fn scale(&self) -> &ScaleSpec {
        &self.scale
    }

    pub fn bits(&self) -> &[Bit] {
        &self.bits
    }

    pub fn bit(&self, token: usize, bit: usize) -> Bit {
        self.bits[token * self.scale.bit_depth + bit]
    }

    pub fn token(&self, token: usize) -> &[Bit] {
        let d = self.scale.bit_depth;
        &self.bits[token * d..(token + 1) * d]
    }

    /// Row-major `L_k x d` vector of `-1`/`+1` values.
    pub fn flatten(&self) -> Vec<i8> {
        self.bits.iter().map(|b| b.value()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(scale: ScaleSpec, values: &[i8]) -> Result<Self> {
        let bits = values.iter().map(|&v| Bit::from_value(v)).collect::<Result<Vec<_>>>()?;
        Self::new(scale, bits)
    }

    /// Copy with one bit flipped.
    pub fn with_flipped(&self, flat_index: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[flat_index] = bits[flat_index].flipped();
        Self { scale: self.scale, bits }
    }
}
