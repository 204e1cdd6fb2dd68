//! Deterministic queue-based microsimulator of one cyclically controlled
//! 4-leg intersection.

mod flow;
mod intersection;
mod movement;
mod plan;
mod profile;

pub use flow::{measure_flow, ArrivalHistory};
pub use intersection::{departure_slots, CycleStats, IntersectionState, SecondOutcome};
pub use movement::{
    MovementId, Phase, NUM_MOVEMENTS, NUM_PHASES, SATURATION_FLOW_VPH, SATURATION_HEADWAY_S,
};
pub use plan::{PhasePlan, PlanBounds, DURATION_STEP_S};
pub use profile::{FlowProfile, MovementRates};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("phase {phase} duration {duration}s is not a multiple of 5")]
    NotQuantized { phase: Phase, duration: u32 },
    #[error("phase {phase} duration {duration}s outside [{min}, {max}]")]
    GreenOutOfRange {
        phase: Phase,
        duration: u32,
        min: u32,
        max: u32,
    },
    #[error("cycle time {cycle}s outside [{min}, {max}]")]
    CycleOutOfRange { cycle: u32, min: u32, max: u32 },
    #[error("plan lost time {plan}s differs from configured {bounds}s")]
    LostTimeMismatch { plan: u32, bounds: u32 },
    #[error("invalid plan bounds: {0}")]
    InvalidBounds(String),
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid flow profile: {0}")]
    Invalid(String),
    #[error("negative or non-finite rate {rate} at bin {bin}, movement {movement}")]
    NegativeRate { bin: usize, movement: usize, rate: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("flow window not filled yet ({have}s of {need}s)")]
    NotReady { have: usize, need: usize },
    #[error("flow window must be positive")]
    ZeroWindow,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("movement number {0} outside 1..=8")]
    InvalidMovement(u8),
    #[error("flow profile exhausted at t={clock}s (duration {duration}s)")]
    ProfileExhausted { clock: u32, duration: u32 },
    #[error("plan change requested mid-cycle at t={clock}s (cycle started {cycle_start}s)")]
    NotAtCycleBoundary { clock: u32, cycle_start: u32 },
}
