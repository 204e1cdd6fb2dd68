//! Rule-based signal controllers. They serve as evaluation baselines and as
//! the behavior-cloning guides of the curriculum (linear, then logistic, then
//! the stair-shaped SCATS-like controller).

mod curves;
mod label;
mod split;

pub use curves::{sigmoid, webster_cycle, webster_cycle_raw, LogisticCurve, ScatsConfig};
pub use label::{plan_labels, teacher_label, LABEL_EXTEND, LABEL_KEEP, LABEL_SHORTEN};
pub use split::{green_budget_for_cycle, ideal_split, round_to_step, split_green};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{
    Phase, PhasePlan, PlanBounds, DURATION_STEP_S, NUM_MOVEMENTS, NUM_PHASES, SATURATION_FLOW_VPH,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeacherError {
    #[error("invalid teacher input: {0}")]
    InvalidInput(String),
    #[error("intersection saturated: critical flow ratio sum {0} >= 1")]
    Saturated(f64),
    #[error("green budget {budget}s cannot be split within [{lo}, {hi}]")]
    InfeasibleBudget { budget: u32, lo: u32, hi: u32 },
    #[error("unknown teacher {0:?}")]
    UnknownTeacher(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    FixedTime,
    Webster,
    Linear,
    Logistic,
    ScatsLike,
}

impl TeacherKind {
    pub const ALL: [TeacherKind; 5] = [
        TeacherKind::FixedTime,
        TeacherKind::Webster,
        TeacherKind::Linear,
        TeacherKind::Logistic,
        TeacherKind::ScatsLike,
    ];

    /// Position in the easy-to-advanced curriculum; `None` for teachers that
    /// only serve as baselines.
    pub fn curriculum_rank(self) -> Option<u8> {
        match self {
            TeacherKind::Linear => Some(0),
            TeacherKind::Logistic => Some(1),
            TeacherKind::ScatsLike => Some(2),
            TeacherKind::FixedTime | TeacherKind::Webster => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::FixedTime => "fixed_time",
            TeacherKind::Webster => "webster",
            TeacherKind::Linear => "linear",
            TeacherKind::Logistic => "logistic",
            TeacherKind::ScatsLike => "scats_like",
        }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TeacherKind {
    type Err = TeacherError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed_time" | "fixed" | "ftc" => Ok(TeacherKind::FixedTime),
            "webster" => Ok(TeacherKind::Webster),
            "linear" => Ok(TeacherKind::Linear),
            "logistic" => Ok(TeacherKind::Logistic),
            "scats_like" | "scats" => Ok(TeacherKind::ScatsLike),
            _ => Err(TeacherError::UnknownTeacher(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Green durations of the fixed-time plan, A/D/E/H.
    pub fixed_durations: [u32; NUM_PHASES],
    /// Seconds of green per vehicle counted in `linear_window_s`.
    pub linear_coefficient: f64,
    pub linear_window_s: u32,
    /// Total intersection flow (veh/h) the logistic curve is scaled against.
    pub capacity_vph: f64,
    pub logistic_midpoint_fraction: f64,
    pub logistic_scale_fraction: f64,
    pub scats: ScatsConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            fixed_durations: [30, 15, 25, 20],
            linear_coefficient: 0.35,
            linear_window_s: 300,
            capacity_vph: 2600.0,
            logistic_midpoint_fraction: 0.6,
            logistic_scale_fraction: 0.15,
            scats: ScatsConfig::default(),
        }
    }
}

impl TeacherConfig {
    pub fn logistic_curve(&self, bounds: &PlanBounds) -> LogisticCurve {
        LogisticCurve {
            min_cycle: f64::from(bounds.min_cycle),
            max_cycle: f64::from(bounds.max_cycle),
            midpoint: self.logistic_midpoint_fraction * self.capacity_vph,
            scale: self.logistic_scale_fraction * self.capacity_vph,
        }
    }
}

/// Flow of the busier movement of each phase.
pub fn phase_critical_flows(flows: &[f64; NUM_MOVEMENTS]) -> [f64; NUM_PHASES] {
    Phase::CYCLE.map(|p| {
        let [a, b] = p.movement_indices();
        flows[a].max(flows[b])
    })
}

/// Combined flow of both movements of each phase.
pub fn phase_flows(flows: &[f64; NUM_MOVEMENTS]) -> [f64; NUM_PHASES] {
    Phase::CYCLE.map(|p| {
        let [a, b] = p.movement_indices();
        flows[a] + flows[b]
    })
}

/// Quantized plan whose cycle is as close to `cycle` as the bounds allow,
/// split in proportion to `weights`.
pub fn plan_for_cycle(
    cycle: f64,
    weights: [f64; NUM_PHASES],
    bounds: &PlanBounds,
) -> Result<PhasePlan, TeacherError> {
    let budget = green_budget_for_cycle(cycle, bounds);
    let durations = split_green(budget, weights, bounds)?;
    Ok(PhasePlan::new(durations, bounds.lost_time))
}

/// Per-phase linear guide before any cycle rescaling:
/// `round5(coefficient · v)` clamped to the green bounds.
pub fn linear_durations(
    phase_volumes: [f64; NUM_PHASES],
    coefficient: f64,
    bounds: &PlanBounds,
) -> [u32; NUM_PHASES] {
    phase_volumes.map(|v| round_to_step(coefficient * v.max(0.0)).clamp(bounds.min_green, bounds.max_green))
}

/// Linear guide with the cycle pulled back inside its bounds by proportional
/// rescaling and re-quantization.
pub fn linear_plan(
    phase_volumes: [f64; NUM_PHASES],
    coefficient: f64,
    bounds: &PlanBounds,
) -> Result<PhasePlan, TeacherError> {
    let durations = linear_durations(phase_volumes, coefficient, bounds);
    let total: u32 = durations.iter().sum();
    let (lo, hi) = bounds.green_budget_range();
    if (lo..=hi).contains(&total) {
        return Ok(PhasePlan::new(durations, bounds.lost_time));
    }
    let budget = total.clamp(lo, hi);
    let weights = durations.map(|d| f64::from(d - bounds.min_green) + f64::from(DURATION_STEP_S) * 1e-3);
    let scaled = split_green(budget, weights, bounds)?;
    Ok(PhasePlan::new(scaled, bounds.lost_time))
}

/// A rule-based controller mapping observed movement flows to a target plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    kind: TeacherKind,
    config: TeacherConfig,
    bounds: PlanBounds,
}

impl Teacher {
    pub fn new(kind: TeacherKind, config: TeacherConfig, bounds: PlanBounds) -> Result<Self, TeacherError> {
        bounds
            .validate()
            .map_err(|e| TeacherError::InvalidInput(e.to_string()))?;
        if kind == TeacherKind::FixedTime {
            PhasePlan::checked(config.fixed_durations, &bounds)
                .map_err(|e| TeacherError::InvalidInput(format!("fixed-time plan: {e}")))?;
        }
        if !(config.linear_coefficient >= 0.0) || config.linear_window_s == 0 {
            return Err(TeacherError::InvalidInput("linear guide needs coefficient >= 0 and a window".into()));
        }
        if !(config.capacity_vph > 0.0) || !(config.logistic_scale_fraction > 0.0) {
            return Err(TeacherError::InvalidInput("capacity and logistic scale must be positive".into()));
        }
        Ok(Self { kind, config, bounds })
    }

    pub fn kind(&self) -> TeacherKind {
        self.kind
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn bounds(&self) -> &PlanBounds {
        &self.bounds
    }

    /// Target cycle from the teacher's cycle-flow curve, for the curve-based
    /// teachers.
    pub fn cycle_curve(&self, flows: &[f64; NUM_MOVEMENTS]) -> Option<f64> {
        let total: f64 = flows.iter().sum();
        match self.kind {
            TeacherKind::Webster => Some(self.webster_target(flows)),
            TeacherKind::Logistic => Some(f64::from(self.config.logistic_curve(&self.bounds).cycle(total))),
            TeacherKind::ScatsLike => Some(f64::from(self.config.scats.cycle(total))),
            TeacherKind::FixedTime | TeacherKind::Linear => None,
        }
    }

    fn webster_target(&self, flows: &[f64; NUM_MOVEMENTS]) -> f64 {
        let y: f64 = phase_critical_flows(flows).iter().map(|q| q / SATURATION_FLOW_VPH).sum();
        let loss = f64::from(self.bounds.total_lost_time());
        let (min, max) = (f64::from(self.bounds.min_cycle), f64::from(self.bounds.max_cycle));
        match webster_cycle(loss, y, min, max) {
            Ok(c) => c,
            Err(_) => max,
        }
    }

    /// The plan this teacher would run given the observed movement flows (veh/h).
    pub fn target_plan(&self, flows: &[f64; NUM_MOVEMENTS]) -> Result<PhasePlan, TeacherError> {
        let weights = phase_critical_flows(flows);
        match self.kind {
            TeacherKind::FixedTime => Ok(PhasePlan::new(self.config.fixed_durations, self.bounds.lost_time)),
            TeacherKind::Linear => {
                let per_window = f64::from(self.config.linear_window_s) / 3600.0;
                let volumes = phase_flows(flows).map(|q| q * per_window);
                linear_plan(volumes, self.config.linear_coefficient, &self.bounds)
            }
            TeacherKind::Webster | TeacherKind::Logistic | TeacherKind::ScatsLike => {
                let cycle = self.cycle_curve(flows).expect("curve teacher");
                plan_for_cycle(cycle, weights, &self.bounds)
            }
        }
    }

    pub fn labels(&self, flows: &[f64; NUM_MOVEMENTS], previous: &PhasePlan) -> Result<[u8; NUM_PHASES], TeacherError> {
        Ok(plan_labels(&self.target_plan(flows)?, previous))
    }
}
