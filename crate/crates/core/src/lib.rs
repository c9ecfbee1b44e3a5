//! Office errand assistant engine: a graph memory, four cooperating LLM agents
//! in a perceive-plan-decide-reflect loop, a deterministic text-world office
//! simulator, the benchmark dataset and its scoring harness.

pub mod actions;
pub mod memory;
pub mod scenario;
pub mod dataset;
pub mod llm;
pub mod sim;
pub mod agents;
pub mod trace;
pub mod eval;
