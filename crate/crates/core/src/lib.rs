//! Core algorithms for a verification-centric research-agent engine.
//!
//! Module map:
//! - [`world`] — deterministic simulated knowledge world (entities, documents, search)
//! - [`synth`] — question/answer synthesis over the world, with adversarial verification
//! - [`runtime`] — single-agent rollout loop, tool layer, context-reset strategies
//! - [`multi_agent`] — planner/executor/verifier traces and trajectory flattening
//! - [`tts`] — verifier-guided test-time scaling over candidate answers
//! - [`judge`] — rule-based and two-stage model-based answer judging
//! - [`training`] — masked SFT loss and group-relative policy objective kernels
//! - [`stats`] — dataset/trajectory statistics and reporting
//! - [`text`] — tokenization and answer normalization shared by the above

pub mod error;
pub mod judge;
pub mod multi_agent;
pub mod retry;
pub mod runtime;
pub mod stats;
pub mod synth;
pub mod text;
pub mod training;
pub mod tts;
pub mod world;

pub use error::{Error, Result};
