use thiserror::Error;

/// Error type shared by the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dynamics returned a non-finite value at x={x:?}, u={u:?}")]
    NonFiniteDynamics { x: Vec<f64>, u: Vec<f64> },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("value iteration did not converge: residual {residual} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },

    #[error("point outside grid bounds")]
    OutsideGrid,

    #[error("value function not differentiable at the queried point")]
    NotDifferentiable,

    #[error("no decrease direction at {point:?}: best margin {margin}")]
    HjMarginFailure { point: Vec<f64>, margin: f64 },

    #[error("covering failed: {0}")]
    CoveringFailure(String),

    #[error("degenerate bisector between pieces {k} and {i}")]
    DegenerateBisector { k: usize, i: usize },

    #[error("level set empty at tau={tau}")]
    EmptyLevelSet { tau: f64 },

    #[error("synthesis failed at level {level} (tau={tau}): {reason}")]
    SynthesisFailure { level: usize, tau: f64, reason: String },

    #[error("simulation stalled: {switches} switches within one step window at t={t}")]
    Stalled { switches: usize, t: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
