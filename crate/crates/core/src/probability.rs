//! Two-class softmax over a bit's logit pair.

use crate::error::{invalid, Result};

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        invalid(format!("temperature must be positive and finite, got {tau}"))
    }
}

/// `softmax(pair / tau)` as `(P(-1), P(+1))`, computed in max-subtracted form.
pub fn bit_probability(pair: [f64; 2], tau: f64) -> Result<[f64; 2]> {
    check_tau(tau)?;
    if !pair[0].is_finite() || !pair[1].is_finite() {
        return invalid(format!("logits must be finite, got {pair:?}"));
    }
    Ok(softmax_pair(pair, tau))
}

#[inline]
pub(crate) fn softmax_pair(pair: [f64; 2], tau: f64) -> [f64; 2] {
    let a = pair[0] / tau;
    let b = pair[1] / tau;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    [ea / z, eb / z]
}

/// Larger of the two class probabilities at temperature `tau`, in `[0.5, 1]`.
pub fn max_bit_probability(pair: [f64; 2], tau: f64) -> Result<f64> {
    let [p0, p1] = bit_probability(pair, tau)?;
    Ok(p0.max(p1))
}

#[inline]
pub(crate) fn peak_probability(pair: [f64; 2], tau: f64) -> f64 {
    let [p0, p1] = softmax_pair(pair, tau);
    p0.max(p1)
}

/// Binary Shannon entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// `log(sum(exp(values)))` with max subtraction. `values` must be non-empty.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.map(|v| (v - m).exp()).sum();
    m + s.ln()
}
