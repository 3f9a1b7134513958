//! Bit-space diversity and per-scale diagnostics over finished trajectories.
//!
//! Diversity across seeds is the mean, over all unordered pairs, of the
//! normalised Hamming distance between the trajectories' bits on the
//! selected scales.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{DecodeConfig, LogitsSource, Trajectory};
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Which scales enter a distance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSelection {
    #[default]
    All,
    /// 1-based scale indices.
    Only(Vec<usize>),
}

impl ScaleSelection {
    pub fn includes(&self, k: usize) -> bool {
        match self {
            ScaleSelection::All => true,
            ScaleSelection::Only(list) => list.contains(&k),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScaleSelection::All => "all".to_string(),
            ScaleSelection::Only(list) => list.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+"),
        }
    }
}

/// Normalised Hamming distance between two trajectories on `selection`.
pub fn bit_distance(a: &Trajectory, b: &Trajectory, selection: &ScaleSelection) -> Result<f64> {
    if a.geometry() != b.geometry() {
        return invalid("trajectories have different scale geometry");
    }
    let mut differing = 0usize;
    let mut total = 0usize;
    for (ra, rb) in a.scales.iter().zip(&b.scales) {
        if !selection.includes(ra.scale) {
            continue;
        }
        total += ra.tokens.bits().len();
        differing += ra.tokens.bits().iter().zip(rb.tokens.bits()).filter(|(x, y)| x != y).count();
    }
    if total == 0 {
        return invalid(format!("scale selection {} matches no scale", selection.label()));
    }
    Ok(differing as f64 / total as f64)
}

/// Mean pairwise distance over the upper triangle of the distance matrix.
pub fn pairwise_bit_diversity(trajectories: &[Trajectory], selection: &ScaleSelection) -> Result<f64> {
    let n = trajectories.len();
    if n < 2 {
        return invalid(format!("pairwise diversity needs at least 2 trajectories, got {n}"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let distances = pairs
        .par_iter()
        .map(|&(i, j)| bit_distance(&trajectories[i], &trajectories[j], selection))
        .collect::<Result<Vec<f64>>>()?;
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

/// Per-scale entropy (bits) at the sampling temperature.
pub fn entropy_curve(trajectory: &Trajectory) -> Result<Vec<f64>> {
    if trajectory.scales.is_empty() {
        return invalid("trajectory has no scale records");
    }
    Ok(trajectory.scales.iter().map(|r| r.entropy).collect())
}

pub fn random_fraction_curve(trajectory: &Trajectory) -> Result<Vec<f64>> {
    if trajectory.scales.is_empty() {
        return invalid("trajectory has no scale records");
    }
    Ok(trajectory.scales.iter().map(|r| r.random_fraction).collect())
}

/// Diversity and per-scale curves (averaged over seeds) for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub mean_pairwise_distance: f64,
    pub entropy_curve: Vec<f64>,
    pub random_fraction_curve: Vec<f64>,
    pub seed_count: usize,
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves[0].len();
    (0..len).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64).collect()
}

pub fn diversity_report(trajectories: &[Trajectory], selection: &ScaleSelection) -> Result<DiversityReport> {
    let mean_pairwise_distance = pairwise_bit_diversity(trajectories, selection)?;
    let entropies = trajectories.iter().map(entropy_curve).collect::<Result<Vec<_>>>()?;
    let fractions = trajectories.iter().map(random_fraction_curve).collect::<Result<Vec<_>>>()?;
    Ok(DiversityReport {
        mean_pairwise_distance,
        entropy_curve: mean_curve(&entropies),
        random_fraction_curve: mean_curve(&fractions),
        seed_count: trajectories.len(),
    })
}

/// Runs `config` once per seed, in seed order.
pub fn run_seeds(model: &dyn LogitsSource, config: &DecodeConfig, seeds: &[u64]) -> Result<Vec<Trajectory>> {
    seeds.par_iter().map(|&seed| config.run(model, seed)).collect()
}

/// Runs two configurations over the same seeds against the same model.
pub fn diversity_comparison(
    model: &dyn LogitsSource,
    a: &DecodeConfig,
    b: &DecodeConfig,
    seeds: &[u64],
    selection: &ScaleSelection,
) -> Result<(DiversityReport, DiversityReport)> {
    if seeds.len() < 2 {
        return invalid(format!("diversity comparison needs at least 2 seeds, got {}", seeds.len()));
    }
    let runs_a = run_seeds(model, a, seeds)?;
    let runs_b = run_seeds(model, b, seeds)?;
    if runs_a[0].geometry() != runs_b[0].geometry() {
        return invalid("configurations produce different geometry");
    }
    Ok((diversity_report(&runs_a, selection)?, diversity_report(&runs_b, selection)?))
}

/// One-sided paired permutation test of `mean(b - a) > 0`.
///
/// Enumerates all `2^n` sign flips for `n <= 20`, otherwise draws
/// `resamples` random flips from `rng`. Returns the fraction of flips whose
/// mean difference is at least the observed one.
pub fn paired_permutation_p_value(a: &[f64], b: &[f64], resamples: usize, rng: &SeededRng) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return invalid(format!("paired samples must be non-empty and equal length ({} vs {})", a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let n = diffs.len();
    let observed: f64 = diffs.iter().sum();
    // Relative slack so exact ties with the observed sum count as extreme.
    let slack = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>();
    let flipped_sum = |mask: u64| -> f64 {
        diffs.iter().enumerate().map(|(i, d)| if (mask >> (i % 64)) & 1 == 1 { -d } else { *d }).sum()
    };
    if n <= 20 {
        let total = 1u64 << n;
        let extreme = (0..total).filter(|&m| flipped_sum(m) >= observed - slack).count();
        return Ok(extreme as f64 / total as f64);
    }
    if resamples == 0 {
        return invalid("Monte Carlo permutation test needs resamples > 0");
    }
    let mut gen = rng.generator();
    let mut extreme = 1usize;
    for _ in 0..resamples {
        let sum: f64 = diffs.iter().map(|d| if gen.next_u64() & 1 == 1 { -d } else { *d }).sum();
        if sum >= observed - slack {
            extreme += 1;
        }
    }
    Ok(extreme as f64 / (resamples + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::ScaleRecord;
    use crate::types::{BitTokenGrid, ScaleSpec};

    fn trajectory(bits: &[i8]) -> Trajectory {
        let spec = ScaleSpec::new(1, 1, 1, bits.len()).unwrap();
        Trajectory {
            seed: 0,
            stream: 0,
            scales: vec![ScaleRecord {
                scale: 1,
                tau: 1.0,
                target: None,
                attainability: None,
                p_bar: 0.5,
                p_bar_unadjusted: 0.5,
                energy: 0.0,
                entropy: 1.0,
                random_fraction: 1.0,
                tokens: BitTokenGrid::unflatten(spec, bits).unwrap(),
            }],
            search: None,
            sampled_bits: bits.len(),
        }
    }

    #[test]
    fn identical_and_complementary() {
        let a = trajectory(&[1, -1, 1, 1, -1]);
        let b = trajectory(&[-1, 1, -1, -1, 1]);
        assert_eq!(pairwise_bit_diversity(&[a.clone(), a.clone()], &ScaleSelection::All).unwrap(), 0.0);
        assert_eq!(pairwise_bit_diversity(&[a, b], &ScaleSelection::All).unwrap(), 1.0);
    }

    #[test]
    fn three_pair_mean() {
        // d(a,b) = 0.2, d(a,c) = 0.4, d(b,c) = 0.6 over 10 bits.
        let a = trajectory(&[1; 10]);
        let b = trajectory(&[-1, -1, 1, 1, 1, 1, 1, 1, 1, 1]);
        let c = trajectory(&[1, 1, -1, -1, -1, -1, 1, 1, 1, 1]);
        let sel = ScaleSelection::All;
        assert!((bit_distance(&a, &b, &sel).unwrap() - 0.2).abs() < 1e-12);
        assert!((bit_distance(&a, &c, &sel).unwrap() - 0.4).abs() < 1e-12);
        assert!((bit_distance(&b, &c, &sel).unwrap() - 0.6).abs() < 1e-12);
        let d = pairwise_bit_diversity(&[a, b, c], &sel).unwrap();
        assert!((d - 0.4).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = trajectory(&[1, 1]);
        assert!(pairwise_bit_diversity(std::slice::from_ref(&a), &ScaleSelection::All).is_err());
        let b = trajectory(&[1, 1, 1]);
        assert!(pairwise_bit_diversity(&[a.clone(), b], &ScaleSelection::All).is_err());
        assert!(pairwise_bit_diversity(&[a.clone(), a.clone()], &ScaleSelection::Only(vec![2])).is_err());
        let mut empty = a;
        empty.scales.clear();
        assert!(entropy_curve(&empty).is_err());
        assert!(random_fraction_curve(&empty).is_err());
    }

    #[test]
    fn permutation_test_exact() {
        let a = [0.0; 10];
        let b = [1.0; 10];
        let p = paired_permutation_p_value(&a, &b, 0, &SeededRng::from_seed(0)).unwrap();
        assert!((p - 1.0 / 1024.0).abs() < 1e-15);
        let p = paired_permutation_p_value(&b, &a, 0, &SeededRng::from_seed(0)).unwrap();
        assert_eq!(p, 1.0);
        assert!(paired_permutation_p_value(&a, &b[..3], 0, &SeededRng::from_seed(0)).is_err());
    }

    #[test]
    fn permutation_test_monte_carlo() {
        let a = vec![0.0; 40];
        let b: Vec<f64> = (0..40).map(|i| if i % 4 == 0 { -0.5 } else { 1.0 }).collect();
        let p = paired_permutation_p_value(&a, &b, 20_000, &SeededRng::from_seed(1)).unwrap();
        assert!(p < 0.001);
        let noise: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let p = paired_permutation_p_value(&a, &noise, 20_000, &SeededRng::from_seed(1)).unwrap();
        assert!(p > 0.3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn diversity_order_invariant(rows in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 2..6), rot in 0usize..6) {
                let trajs: Vec<Trajectory> = rows
                    .iter()
                    .map(|r| trajectory(&r.iter().map(|&b| if b { 1 } else { -1 }).collect::<Vec<_>>()))
                    .collect();
                let mut shuffled = trajs.clone();
                shuffled.rotate_left(rot % trajs.len());
                shuffled.reverse();
                let a = pairwise_bit_diversity(&trajs, &ScaleSelection::All).unwrap();
                let b = pairwise_bit_diversity(&shuffled, &ScaleSelection::All).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn distance_symmetric(x in proptest::collection::vec(any::<bool>(), 8), y in proptest::collection::vec(any::<bool>(), 8)) {
                let to = |v: &Vec<bool>| trajectory(&v.iter().map(|&b| if b { 1 } else { -1 }).collect::<Vec<_>>());
                let (a, b) = (to(&x), to(&y));
                prop_assert_eq!(bit_distance(&a, &b, &ScaleSelection::All).unwrap(), bit_distance(&b, &a, &ScaleSelection::All).unwrap());
                prop_assert_eq!(bit_distance(&a, &a, &ScaleSelection::All).unwrap(), 0.0);
            }
        }
    }
}
