//! Decoding control for bitwise, multi-scale autoregressive generators.
//!
//! A bitwise generator predicts, at every scale `k`, a pair of class logits
//! for each of the `d` bits of each of the `L_k` tokens. This crate provides
//! the pieces needed to turn those logits into bits in a controlled way:
//!
//! * [`sampler`]: argmax, nucleus (top-p), joint top-k over bit patterns, and
//!   Gumbel-perturbed argmax.
//! * [`temperature`]: per-scale temperature solved by bisection so that the
//!   mean peak bit confidence hits a target.
//! * [`search`]: energy-based look-ahead over `M` candidate paths.
//! * [`toy`]: a deterministic synthetic logits source for desk-scale runs.
//! * [`metrics`]: bit-space diversity and per-scale diagnostics.

pub mod decode;
pub mod error;
pub mod metrics;
pub mod probability;
pub mod rng;
pub mod sampler;
pub mod search;
pub mod temperature;
pub mod toy;
pub mod types;

pub use decode::{DecodeConfig, DecodePlan, LogitsSource, ScaleRecord, SearchAudit, Trajectory};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use sampler::SamplerPolicy;
pub use search::{Criterion, PathScore, SearchSettings, SearchWindow};
pub use temperature::{BisectionSettings, ConfidenceTargetSchedule, ScheduleEntry};
pub use toy::{SharpnessProfile, ToyModel};
pub use types::{Bit, BitLogitGrid, BitTokenGrid, ScaleSpec};
