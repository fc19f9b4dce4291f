//! Tool-augmented agent runtime that learns from self-reflection.
//!
//! The optimization stage attempts each training task, reflects on failures
//! against the gold answer, retries, and keeps successful trajectories in a
//! BM25-indexed long-term memory while distilling per-tool experience. The
//! inference stage retrieves similar solved tasks as demonstrations and
//! verifies every proposed action, either by iterative refinement or by
//! choosing among sampled candidates.

pub mod agent;
pub mod backend;
pub mod experience;
pub mod harness;
pub mod memory;
pub mod model;
pub mod optimizer;
pub mod prompts;
pub mod toolbox;
pub mod verifier;

pub use agent::{run_task, AgentConfig, Deps};
pub use backend::{Backend, BackendError, GenerationRequest, ScriptedBackend};
pub use experience::ExperienceLedger;
pub use memory::MemoryStore;
pub use model::{
    parse_action, render_transcript, ActionInvocation, Matcher, Observation, ObservationStatus,
    Outcome, Step, TaskInstance, Trajectory,
};
pub use toolbox::ToolRegistry;
pub use verifier::{VerifierConfig, VerifierMode};
