use thiserror::Error;

/// Library-wide error type. Every failure carries enough context to be
/// reported by the CLI without re-deriving state.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("data not persistently exciting: smallest/largest singular value {ratio:.3e} below threshold {threshold:.1e}")]
    RankDeficient { ratio: f64, threshold: f64 },

    #[error("convex solver failed: {status}")]
    SolverFailure { status: String },

    #[error("optimal control problem infeasible at prediction step {step}")]
    Infeasible { step: usize },

    #[error("tube divergent at step {step}: interval radius {radius:.3e} exceeds threshold {threshold:.3e}")]
    TubeDivergent { step: usize, radius: f64, threshold: f64 },

    #[error("vertex enumeration limits exceeded: dimension {dim} (max {max_dim}) or generators {gens} (max {max_gens})")]
    VertexLimits { dim: usize, max_dim: usize, gens: usize, max_gens: usize },

    #[error("gain synthesis infeasible: no common Lyapunov certificate found within {iterations} iterations")]
    SynthesisInfeasible { iterations: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}
