//! Bounded-memory inference: a static buffer plan for one window and an
//! executor that runs the network inside a single preallocated arena.

mod exec;
mod plan;

pub use exec::{infer_stream, ArenaExecutor, StreamConfig, StreamOutput, StreamStats, WindowResult};
pub use plan::{BufferPlan, MemoryPlan, Op, OpKind, DEFAULT_BUDGET_BYTES, VALUE_BYTES};

/// Plans activation memory for one window of `model`.
pub fn plan_memory<T: crate::nn::Real>(model: &crate::model::TinyPpg<T>) -> crate::Result<MemoryPlan> {
    MemoryPlan::for_model(model)
}
