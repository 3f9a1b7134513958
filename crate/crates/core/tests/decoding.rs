use bitdecode::decode::{decode_scale, sample_sequential, scale_stream};
use bitdecode::sampler::NoiseDecay;
use bitdecode::toy::{default_geometry, default_profile};
use bitdecode::*;

fn small_model(scales: usize, seed: u64) -> ToyModel {
    let geometry = default_geometry(scales, 6).unwrap();
    let profile = default_profile(scales).unwrap().with_seed(seed);
    ToyModel::new(geometry, profile).unwrap()
}

fn naive_energy(logits: &BitLogitGrid, bits: &BitTokenGrid) -> f64 {
    let s = logits.scale();
    let mut total = 0.0;
    for l in 0..s.token_count() {
        let mut acc = 0.0;
        for i in 0..s.bit_depth() {
            let pair = logits.pair(l, i);
            acc += if bits.bit(l, i) == Bit::Pos { pair[1] } else { pair[0] }.exp();
        }
        total += acc.ln();
    }
    -total / s.token_count() as f64
}

fn plans(n: usize) -> Vec<DecodePlan> {
    vec![
        DecodePlan::constant(1.0, SamplerPolicy::top_p(0.97), n).unwrap(),
        DecodePlan::new(ConfidenceTargetSchedule::linear(0.6, 0.9, n, n / 2).unwrap(), SamplerPolicy::top_p(0.97)),
        DecodePlan::constant(2.0, SamplerPolicy::JointTopK { k: 4 }, n).unwrap(),
        DecodePlan::constant(1.0, SamplerPolicy::GumbelPerturbedArgmax { noise_strength: 1.0 }, n)
            .unwrap()
            .with_noise_decay(NoiseDecay::linear_default()),
    ]
}

#[test]
fn single_candidate_equals_sequential() {
    let model = small_model(5, 3);
    for plan in plans(5) {
        for seed in 0..6 {
            let rng = SeededRng::from_seed(seed);
            let seq = sample_sequential(&model, &plan, &rng).unwrap();
            for (anchor, lookahead) in [(1, 1), (2, 3), (3, 2), (1, 4)] {
                let settings =
                    SearchSettings::new(SearchWindow { anchor, lookahead, candidates: 1 }, Criterion::Energy);
                let searched = bitdecode::search::run_path_search(&model, &settings, &plan, &rng).unwrap();
                assert_eq!(searched.scales, seq.scales, "plan {:?} seed {seed}", plan.policy);
                assert_eq!(searched.sampled_bits, seq.sampled_bits);
            }
        }
    }
}

#[test]
fn winner_matches_exhaustive_resimulation() {
    let n = 5;
    let model = small_model(n, 11);
    let plan = DecodePlan::new(ConfidenceTargetSchedule::linear(0.6, 0.8, n, 3).unwrap(), SamplerPolicy::top_p(0.97));
    for seed in 0..12u64 {
        let window =
            SearchWindow { anchor: 1 + (seed as usize % 2), lookahead: 2 + (seed as usize % 2), candidates: 4 };
        let rng = SeededRng::from_seed(seed);
        let settings = SearchSettings::new(window, Criterion::Energy);
        let out = DecodeConfig::with_search(plan.clone(), settings).run(&model, seed).unwrap();

        let prefix: Vec<BitTokenGrid> = out.scales[..window.anchor - 1].iter().map(|r| r.tokens.clone()).collect();
        let mut energies = Vec::new();
        let mut paths = Vec::new();
        for m in 0..window.candidates {
            let mut ctx = prefix.clone();
            let mut sum = 0.0;
            for k in window.anchor..=window.anchor + window.lookahead {
                let (rec, logits) = decode_scale(&model, &ctx, k, &plan, &scale_stream(&rng, k, m as u64)).unwrap();
                if k > window.anchor {
                    sum += naive_energy(&logits, &rec.tokens);
                }
                ctx.push(rec.tokens);
            }
            energies.push(sum / window.lookahead as f64);
            paths.push(ctx);
        }
        let mut best = 0;
        for (m, e) in energies.iter().enumerate() {
            if *e < energies[best] {
                best = m;
            }
        }
        let audit = out.search.as_ref().unwrap();
        assert_eq!(audit.winner, best, "seed {seed}");
        for (m, e) in energies.iter().enumerate() {
            assert!((audit.candidates[m].aggregate - e).abs() <= 1e-9 * e.abs().max(1.0));
        }
        let kept: Vec<BitTokenGrid> = out.grids().take(window.last_scale()).cloned().collect();
        assert_eq!(kept, paths[best]);
    }
}

#[test]
fn sampled_bit_accounting() {
    let n = 6;
    let model = small_model(n, 0);
    let plan = DecodePlan::constant(1.0, SamplerPolicy::top_p(0.97), n).unwrap();
    let sequential: usize = model.geometry().iter().map(|s| s.bit_count()).sum();
    for (anchor, lookahead, m) in [(2, 3, 4), (1, 1, 2), (3, 3, 8)] {
        let window = SearchWindow { anchor, lookahead, candidates: m };
        let out = DecodeConfig::with_search(plan.clone(), SearchSettings::new(window, Criterion::Energy))
            .run(&model, 9)
            .unwrap();
        let window_bits: usize =
            model.geometry()[anchor - 1..=anchor + lookahead - 1].iter().map(|s| s.bit_count()).sum();
        assert_eq!(out.sampled_bits, sequential + (m - 1) * window_bits);
        let bound = sequential as f64 * (1.0 + m as f64 * window_bits as f64 / sequential as f64);
        assert!(out.sampled_bits as f64 <= bound);
    }
}

#[test]
fn runs_are_reproducible() {
    let model = ToyModel::default_with_seed(5).unwrap();
    let config = DecodeConfig::with_search(
        DecodePlan::new(ConfidenceTargetSchedule::linear(0.6, 0.9, 8, 4).unwrap(), SamplerPolicy::top_p(0.97)),
        SearchSettings::default(),
    );
    let a = config.run(&model, 77).unwrap();
    let b = config.run(&model, 77).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = config.run(&model, 78).unwrap();
    assert_ne!(a.scales, c.scales);
}

#[test]
fn trajectory_serde_round_trip() {
    let model = small_model(4, 1);
    let plan = DecodePlan::new(ConfidenceTargetSchedule::linear(0.6, 0.9, 4, 2).unwrap(), SamplerPolicy::top_p(0.97));
    let t = DecodeConfig::sequential(plan).run(&model, 2).unwrap();
    let back: Trajectory = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn adaptive_prefix_hits_targets() {
    let model = ToyModel::default_with_seed(0).unwrap();
    let plan = DecodePlan::new(ConfidenceTargetSchedule::linear(0.6, 0.9, 8, 4).unwrap(), SamplerPolicy::top_p(0.97));
    let t = DecodeConfig::sequential(plan).run(&model, 0).unwrap();
    for r in &t.scales[..4] {
        let s = r.target.unwrap();
        assert!((r.p_bar - s).abs() < 0.005, "scale {} p_bar {} target {s}", r.scale, r.p_bar);
        assert!(r.tau > 1.0);
    }
    for r in &t.scales[4..] {
        assert_eq!(r.target, None);
        assert_eq!(r.random_fraction, 0.0);
    }
}

#[test]
fn rejects_mismatched_schedule() {
    let model = small_model(4, 0);
    let plan = DecodePlan::constant(1.0, SamplerPolicy::top_p(0.97), 3).unwrap();
    assert!(DecodeConfig::sequential(plan).run(&model, 0).is_err());
}
