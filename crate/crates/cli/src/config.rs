//! Experiment configuration: TOML schema, validation and resolution into
//! library types.

use std::fmt;
use std::path::Path;

use bitdecode::sampler::NoiseDecay;
use bitdecode::toy::{
    calibrated_first_amplitude, DEFAULT_AMPLITUDE_DECAY, DEFAULT_AMPLITUDE_FLOOR, DEFAULT_CONTEXT_GAMMA,
};
use bitdecode::types::geometry_from_sides;
use bitdecode::{
    BisectionSettings, ConfidenceTargetSchedule, Criterion, DecodeConfig, DecodePlan, SamplerPolicy, ScaleSpec,
    ScheduleEntry, SearchSettings, SearchWindow, SharpnessProfile, ToyModel,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One problem found in a config, anchored to a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// A number of seeds (`0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(list) => list.clone(),
        }
    }
}

impl std::str::FromStr for SeedSpec {
    type Err = String;

    /// `"50"` means seeds `0..50`; `"3,7,11"` is a list.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if !s.contains(',') {
            return s.parse().map(SeedSpec::Count).map_err(|e| format!("invalid seed count `{s}`: {e}"));
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<u64>().map_err(|e| format!("invalid seed `{}`: {e}", p.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(SeedSpec::List)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub bisection: BisectionSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Seed of the first prompt; prompt `p` uses `seed + p`.
    #[serde(default)]
    pub seed: u64,
    /// Number of scales with sides `1..=scales`; ignored when `sides` is set.
    pub scales: Option<usize>,
    pub sides: Option<Vec<usize>>,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: usize,
    pub context_gamma: Option<f64>,
    pub amplitudes: Option<Vec<f64>>,
}

fn default_bit_depth() -> usize {
    16
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            seed: 0,
            scales: None,
            sides: None,
            bit_depth: default_bit_depth(),
            context_gamma: None,
            amplitudes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Argmax,
    #[default]
    TopP,
    JointTopK,
    Gumbel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseDecaySpec {
    /// `"linear"`: the default 1.4 → 0.8 ramp.
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default)]
    pub kind: SamplerKind,
    pub top_p: Option<f64>,
    pub k: Option<usize>,
    pub noise_strength: Option<f64>,
    pub noise_decay: Option<NoiseDecaySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    FixedTau,
    FixedTarget,
    Linear,
    Explicit,
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuffixKind {
    Argmax,
    Tau,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub kind: ScheduleKind,
    /// `fixed_tau`: one temperature for the active scales.
    pub tau: Option<f64>,
    /// `fixed_tau`: one temperature per scale.
    pub taus: Option<Vec<f64>>,
    /// `fixed_target`.
    pub target: Option<f64>,
    /// `linear`.
    pub start: Option<f64>,
    pub end: Option<f64>,
    /// `explicit`.
    pub targets: Option<Vec<f64>>,
    /// Number of leading scales the rule applies to (`fixed_*`, `linear`).
    pub active: Option<usize>,
    /// Rule for scales after the active prefix.
    pub suffix: Option<SuffixKind>,
    pub suffix_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisectionSection {
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
    pub tau_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default)]
    pub enabled: bool,
    pub anchor: Option<usize>,
    pub lookahead: Option<usize>,
    pub candidates: Option<usize>,
    pub criterion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_run_id")]
    pub id: String,
    #[serde(default = "default_seeds")]
    pub seeds: SeedSpec,
    /// Number of model seeds ("prompts") used by `diversity`.
    #[serde(default = "default_prompts")]
    pub prompts: usize,
    /// Monte Carlo resamples for the permutation test beyond 20 prompts.
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

fn default_run_id() -> String {
    "run".to_string()
}

fn default_seeds() -> SeedSpec {
    SeedSpec::Count(8)
}

fn default_prompts() -> usize {
    1
}

fn default_resamples() -> usize {
    9999
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            id: default_run_id(),
            seeds: default_seeds(),
            prompts: default_prompts(),
            resamples: default_resamples(),
        }
    }
}

/// Why a config could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(Vec<Diagnostic>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(msg) | ConfigError::Parse(msg) => f.write_str(msg),
            ConfigError::Invalid(diags) => {
                let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
                f.write_str(&lines.join("\n"))
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every field and builds the runnable experiment.
    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let mut diags = Vec::new();
        let geometry = self.resolve_geometry(&mut diags);
        let n = geometry.as_ref().map(|g| g.len());
        let profile = n.and_then(|n| self.resolve_profile(n, &mut diags));
        let schedule = n.and_then(|n| self.resolve_schedule(n, &mut diags));
        let policy = self.resolve_policy(&mut diags);
        let noise_decay = self.resolve_noise_decay(&mut diags);
        let bisection = self.resolve_bisection(&mut diags);
        let search = n.and_then(|n| self.resolve_search(n, &mut diags));
        let seeds = self.run.seeds.seeds();
        if seeds.is_empty() {
            diags.push(Diagnostic::new("run.seeds", "seed list is empty"));
        }
        if self.run.prompts == 0 {
            diags.push(Diagnostic::new("run.prompts", "must be at least 1"));
        }
        if self.run.id.is_empty() || self.run.id.contains(['\n', ',', '"']) {
            diags.push(Diagnostic::new("run.id", "must be non-empty without commas, quotes or newlines"));
        }
        if let (Some(policy), Some(geometry)) = (&policy, &geometry) {
            if let Err(e) = policy.validate(geometry.first().map(|s| s.bit_depth())) {
                diags.push(Diagnostic::new("sampler", e.to_string()));
            }
        }
        if !diags.is_empty() {
            return Err(ConfigError::Invalid(diags));
        }
        let (geometry, profile, schedule, policy, bisection, search) = (
            geometry.expect("checked"),
            profile.expect("checked"),
            schedule.expect("checked"),
            policy.expect("checked"),
            bisection.expect("checked"),
            search.expect("checked"),
        );
        let mut plan = DecodePlan::new(schedule, policy);
        plan.bisection = bisection;
        plan.noise_decay = noise_decay.flatten();
        let decode = DecodeConfig { plan, search };
        let experiment = Experiment {
            run_id: self.run.id.clone(),
            geometry,
            profile,
            decode,
            seeds,
            prompts: self.run.prompts,
            resamples: self.run.resamples,
        };
        // Building the model catches anything the field checks missed.
        experiment.model(0).map_err(|e| ConfigError::Invalid(vec![Diagnostic::new("model", e.to_string())]))?;
        Ok(experiment)
    }

    /// Every diagnostic, or an empty list for a valid config.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self.resolve() {
            Ok(_) => Vec::new(),
            Err(ConfigError::Invalid(d)) => d,
            Err(other) => vec![Diagnostic::new("config", other.to_string())],
        }
    }

    fn resolve_geometry(&self, diags: &mut Vec<Diagnostic>) -> Option<Vec<ScaleSpec>> {
        let m = &self.model;
        let sides: Vec<usize> = match (&m.sides, m.scales) {
            (Some(sides), Some(n)) if sides.len() != n => {
                diags.push(Diagnostic::new(
                    "model.sides",
                    format!("lists {} scales but model.scales is {n}", sides.len()),
                ));
                return None;
            }
            (Some(sides), _) => sides.clone(),
            (None, n) => (1..=n.unwrap_or(8)).collect(),
        };
        if sides.is_empty() {
            diags.push(Diagnostic::new("model.scales", "must be at least 1"));
            return None;
        }
        if m.bit_depth == 0 {
            diags.push(Diagnostic::new("model.bit_depth", "must be at least 1"));
            return None;
        }
        if sides.windows(2).any(|w| w[1] < w[0]) {
            diags.push(Diagnostic::new("model.sides", "side lengths must be non-decreasing"));
            return None;
        }
        match geometry_from_sides(&sides, m.bit_depth) {
            Ok(g) => Some(g),
            Err(e) => {
                diags.push(Diagnostic::new("model.sides", e.to_string()));
                None
            }
        }
    }

    fn resolve_profile(&self, n: usize, diags: &mut Vec<Diagnostic>) -> Option<SharpnessProfile> {
        let amplitudes = match &self.model.amplitudes {
            Some(a) if a.len() != n => {
                diags.push(Diagnostic::new(
                    "model.amplitudes",
                    format!("has {} entries but the model has {n} scales", a.len()),
                ));
                return None;
            }
            Some(a) => a.clone(),
            None => {
                let a1 = calibrated_first_amplitude();
                (0..n).map(|i| (a1 * DEFAULT_AMPLITUDE_DECAY.powi(i as i32)).max(DEFAULT_AMPLITUDE_FLOOR)).collect()
            }
        };
        let gamma = self.model.context_gamma.unwrap_or(DEFAULT_CONTEXT_GAMMA);
        match SharpnessProfile::new(amplitudes, gamma, self.model.seed) {
            Ok(p) => Some(p),
            Err(e) => {
                diags.push(Diagnostic::new("model", e.to_string()));
                None
            }
        }
    }

    fn resolve_schedule(&self, n: usize, diags: &mut Vec<Diagnostic>) -> Option<ConfidenceTargetSchedule> {
        let s = &self.schedule;
        let before = diags.len();
        let check_target = |field: String, v: f64, diags: &mut Vec<Diagnostic>| {
            if !(v > 0.5 && v < 1.0) {
                diags.push(Diagnostic::new(field, format!("target {v} out of range: S_k must lie in (0.5, 1)")));
            }
        };
        let check_tau = |field: String, v: f64, diags: &mut Vec<Diagnostic>| {
            if !(v > 0.0 && v.is_finite()) {
                diags.push(Diagnostic::new(field, format!("temperature {v} must be positive and finite")));
            }
        };
        let active = s.active.unwrap_or(n);
        if active > n {
            diags.push(Diagnostic::new(
                "schedule.active",
                format!("schedule covers {active} scales but the model has {n}"),
            ));
        }
        let prefix: Vec<ScheduleEntry> = match s.kind {
            ScheduleKind::Argmax => Vec::new(),
            ScheduleKind::FixedTau => match (&s.taus, s.tau) {
                (Some(_), Some(_)) => {
                    diags.push(Diagnostic::new("schedule.taus", "set either `tau` or `taus`, not both"));
                    Vec::new()
                }
                (Some(taus), None) => {
                    for (i, &t) in taus.iter().enumerate() {
                        check_tau(format!("schedule.taus[{i}]"), t, diags);
                    }
                    taus.iter().map(|&t| ScheduleEntry::FixedTau(t)).collect()
                }
                (None, tau) => {
                    let tau = tau.unwrap_or(1.0);
                    check_tau("schedule.tau".into(), tau, diags);
                    vec![ScheduleEntry::FixedTau(tau); active.min(n)]
                }
            },
            ScheduleKind::FixedTarget => match s.target {
                Some(t) => {
                    check_target("schedule.target".into(), t, diags);
                    vec![ScheduleEntry::Target(t); active.min(n)]
                }
                None => {
                    diags.push(Diagnostic::new("schedule.target", "required for kind = \"fixed_target\""));
                    Vec::new()
                }
            },
            ScheduleKind::Linear => match (s.start, s.end) {
                (Some(a), Some(b)) => {
                    check_target("schedule.start".into(), a, diags);
                    check_target("schedule.end".into(), b, diags);
                    if a > b {
                        diags.push(Diagnostic::new("schedule.end", format!("must be at least start ({a} > {b})")));
                    }
                    let m = active.min(n);
                    (0..m)
                        .map(|i| {
                            let t = if m == 1 { a } else { a + (b - a) * i as f64 / (m - 1) as f64 };
                            ScheduleEntry::Target(t)
                        })
                        .collect()
                }
                _ => {
                    diags.push(Diagnostic::new("schedule", "`start` and `end` are required for kind = \"linear\""));
                    Vec::new()
                }
            },
            ScheduleKind::Explicit => match &s.targets {
                Some(targets) => {
                    for (i, &t) in targets.iter().enumerate() {
                        check_target(format!("schedule.targets[{i}]"), t, diags);
                    }
                    targets.iter().map(|&t| ScheduleEntry::Target(t)).collect()
                }
                None => {
                    diags.push(Diagnostic::new("schedule.targets", "required for kind = \"explicit\""));
                    Vec::new()
                }
            },
        };
        let is_list =
            matches!(s.kind, ScheduleKind::Explicit) || (s.kind == ScheduleKind::FixedTau && s.taus.is_some());
        if prefix.len() > n || (is_list && prefix.len() < n && s.suffix.is_none()) {
            let field = if s.kind == ScheduleKind::Explicit { "schedule.targets" } else { "schedule.taus" };
            diags.push(Diagnostic::new(
                field,
                format!(
                    "schedule length {} does not match the model's {n} scales (set `suffix` to fill the remainder)",
                    prefix.len()
                ),
            ));
        }
        let suffix = match s.suffix.unwrap_or(SuffixKind::Argmax) {
            SuffixKind::Argmax => ScheduleEntry::Argmax,
            SuffixKind::Tau => {
                let t = s.suffix_tau.unwrap_or(1.0);
                check_tau("schedule.suffix_tau".into(), t, diags);
                ScheduleEntry::FixedTau(t)
            }
        };
        if diags.len() > before {
            return None;
        }
        let mut entries = prefix;
        entries.resize(n, suffix);
        match ConfidenceTargetSchedule::new(entries) {
            Ok(s) => Some(s),
            Err(e) => {
                diags.push(Diagnostic::new("schedule", e.to_string()));
                None
            }
        }
    }

    fn resolve_policy(&self, diags: &mut Vec<Diagnostic>) -> Option<SamplerPolicy> {
        let s = &self.sampler;
        let policy = match s.kind {
            SamplerKind::Argmax => SamplerPolicy::Argmax,
            SamplerKind::TopP => {
                SamplerPolicy::TopP { threshold: s.top_p.unwrap_or(bitdecode::sampler::DEFAULT_TOP_P) }
            }
            SamplerKind::JointTopK => match s.k {
                Some(k) => SamplerPolicy::JointTopK { k },
                None => {
                    diags.push(Diagnostic::new("sampler.k", "required for kind = \"joint_top_k\""));
                    return None;
                }
            },
            SamplerKind::Gumbel => {
                SamplerPolicy::GumbelPerturbedArgmax { noise_strength: s.noise_strength.unwrap_or(1.0) }
            }
        };
        if let Err(e) = policy.validate(None) {
            let field = match s.kind {
                SamplerKind::TopP => "sampler.top_p",
                SamplerKind::JointTopK => "sampler.k",
                SamplerKind::Gumbel => "sampler.noise_strength",
                SamplerKind::Argmax => "sampler",
            };
            diags.push(Diagnostic::new(field, e.to_string()));
            return None;
        }
        Some(policy)
    }

    fn resolve_noise_decay(&self, diags: &mut Vec<Diagnostic>) -> Option<Option<NoiseDecay>> {
        let decay = match &self.sampler.noise_decay {
            None => return Some(None),
            Some(NoiseDecaySpec::Named(name)) if name == "linear" => NoiseDecay::linear_default(),
            Some(NoiseDecaySpec::Named(name)) => {
                diags.push(Diagnostic::new(
                    "sampler.noise_decay",
                    format!("unknown decay `{name}` (expected \"linear\" or a list)"),
                ));
                return None;
            }
            Some(NoiseDecaySpec::Explicit(list)) => match NoiseDecay::new(list.clone()) {
                Ok(d) => d,
                Err(e) => {
                    diags.push(Diagnostic::new("sampler.noise_decay", e.to_string()));
                    return None;
                }
            },
        };
        if self.sampler.kind != SamplerKind::Gumbel {
            diags.push(Diagnostic::new("sampler.noise_decay", "only applies to kind = \"gumbel\""));
            return None;
        }
        Some(Some(decay))
    }

    fn resolve_bisection(&self, diags: &mut Vec<Diagnostic>) -> Option<BisectionSettings> {
        let b = &self.bisection;
        let d = BisectionSettings::default();
        let settings = BisectionSettings {
            tau_min: b.tau_min.unwrap_or(d.tau_min),
            tau_max: b.tau_max.unwrap_or(d.tau_max),
            epsilon: b.epsilon.unwrap_or(d.epsilon),
            max_iterations: b.max_iterations.unwrap_or(d.max_iterations),
            tau_tolerance: b.tau_tolerance.unwrap_or(d.tau_tolerance),
        };
        match settings.validate() {
            Ok(()) => Some(settings),
            Err(e) => {
                diags.push(Diagnostic::new("bisection", e.to_string()));
                None
            }
        }
    }

    fn resolve_search(&self, n: usize, diags: &mut Vec<Diagnostic>) -> Option<Option<SearchSettings>> {
        let s = &self.search;
        if !s.enabled {
            return Some(None);
        }
        let d = SearchWindow::DEFAULT;
        let window = SearchWindow {
            anchor: s.anchor.unwrap_or(d.anchor),
            lookahead: s.lookahead.unwrap_or(d.lookahead),
            candidates: s.candidates.unwrap_or(d.candidates),
        };
        let criterion = match s.criterion.as_deref().unwrap_or("energy").parse::<Criterion>() {
            Ok(c) => c,
            Err(e) => {
                diags.push(Diagnostic::new("search.criterion", e.to_string()));
                return None;
            }
        };
        if let Err(e) = window.validate(n) {
            diags.push(Diagnostic::new("search", e.to_string()));
            return None;
        }
        Some(Some(SearchSettings::new(window, criterion)))
    }
}

/// A validated, runnable experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub run_id: String,
    pub geometry: Vec<ScaleSpec>,
    pub profile: SharpnessProfile,
    pub decode: DecodeConfig,
    pub seeds: Vec<u64>,
    pub prompts: usize,
    pub resamples: usize,
}

impl Experiment {
    /// Toy model for prompt `p`.
    pub fn model(&self, prompt: usize) -> bitdecode::Result<ToyModel> {
        let seed = self.profile.seed().wrapping_add(prompt as u64);
        ToyModel::new(self.geometry.clone(), self.profile.clone().with_seed(seed))
    }

    /// SHA-256 over the model and decoding settings (seeds excluded).
    pub fn digest_of(&self, decode: &DecodeConfig) -> String {
        #[derive(Serialize)]
        struct Digested<'a> {
            geometry: &'a [ScaleSpec],
            profile: &'a SharpnessProfile,
            decode: &'a DecodeConfig,
        }
        let json = serde_json::to_vec(&Digested { geometry: &self.geometry, profile: &self.profile, decode })
            .expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn scale_count(&self) -> usize {
        self.geometry.len()
    }
}
