//! Fault injection and error attribution for LLM multi-agent systems.
//!
//! The crate generates labeled failure trajectories from deterministic
//! baselines (`sim`, `manipulator`, `pipeline`) and scores attribution
//! predictions (`reward`, `metrics`, `dcl`).

pub mod dcl;
pub mod gateway;
pub mod jsonl;
pub mod manipulator;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod reward;
pub mod sim;
pub mod taxonomy;
