//! The intersection as a decision process: one decision per cycle, flow-only
//! observations, masked ±5 s per-phase actions and a four-factor reward.

mod action;
mod reward;

pub use action::{
    actions_from_indices, apply_action, mask_actions, ActionMask, ActionVector, PhaseAction, NUM_OPTIONS,
};
pub use reward::{
    compute_reward, mean_and_population_std, phase_green_utilization, reward_terms, RewardTerms, RewardWeights,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{
    measure_flow, CycleStats, IntersectionState, Phase, PhasePlan, PlanBounds, PlanError, FlowProfile, SimError,
    NUM_MOVEMENTS, NUM_PHASES, SATURATION_FLOW_VPH,
};

pub const MOVEMENT_FEATURES: usize = 3;
pub const PHASE_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("action {action} is masked for phase {phase}")]
    MaskedAction { phase: Phase, action: PhaseAction },
    #[error("episode already finished")]
    EpisodeDone,
    #[error("environment not reset")]
    NotReset,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("trace export failed: {0}")]
    Trace(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the agent sees before choosing the next plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Per movement: flow (veh/h), capacity (veh/h), present (0/1).
    pub movement: [[f64; MOVEMENT_FEATURES]; NUM_MOVEMENTS],
    /// Per phase: duration last cycle (s), green utilization, green imbalance.
    pub phase: [[f64; PHASE_FEATURES]; NUM_PHASES],
}

impl Observation {
    pub fn flows(&self) -> [f64; NUM_MOVEMENTS] {
        self.movement.map(|row| row[0])
    }

    pub fn total_flow(&self) -> f64 {
        self.movement.iter().map(|row| row[0]).sum()
    }
}

/// Builds an observation from measured flows and the last completed cycle.
pub fn build_observation(
    flows: &[f64; NUM_MOVEMENTS],
    present: &[bool; NUM_MOVEMENTS],
    capacity: &[f64; NUM_MOVEMENTS],
    plan: &PhasePlan,
    last: Option<&CycleStats>,
) -> Observation {
    let movement = std::array::from_fn(|m| {
        if present[m] {
            [flows[m], capacity[m], 1.0]
        } else {
            [0.0; MOVEMENT_FEATURES]
        }
    });
    let (gr, gi) = match last {
        Some(stats) => {
            let per_phase = phase_green_utilization(stats);
            (per_phase, mean_and_population_std(&per_phase).1)
        }
        None => ([0.0; NUM_PHASES], 0.0),
    };
    let phase = Phase::CYCLE.map(|p| [f64::from(plan.duration(p)), gr[p.index()], gi]);
    Observation { movement, phase }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub bounds: PlanBounds,
    pub present: [bool; NUM_MOVEMENTS],
    /// Per-movement capacity (veh/h) shown to the agent.
    pub capacity_vph: [f64; NUM_MOVEMENTS],
    /// Trailing window of the flow measurement, seconds.
    pub observation_window: u32,
    /// Plan run during warm-up and at the first decision.
    pub initial_plan: [u32; NUM_PHASES],
    /// Simulated seconds before the first decision; defaults to one window.
    pub warmup_s: Option<u32>,
    /// Stop after this many decisions even if traffic remains.
    pub max_decisions: Option<usize>,
    pub reward: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            bounds: PlanBounds::default(),
            present: [true; NUM_MOVEMENTS],
            capacity_vph: [SATURATION_FLOW_VPH; NUM_MOVEMENTS],
            observation_window: 300,
            initial_plan: [30, 15, 25, 20],
            warmup_s: None,
            max_decisions: None,
            reward: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.bounds.validate()?;
        PhasePlan::checked(self.initial_plan, &self.bounds)?;
        if self.observation_window == 0 {
            return Err(EnvError::Config("observation window must be positive".into()));
        }
        if self.capacity_vph.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(EnvError::Config("capacities must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn warmup(&self) -> u32 {
        self.warmup_s.unwrap_or(self.observation_window)
    }

    pub fn initial(&self) -> PhasePlan {
        PhasePlan::new(self.initial_plan, self.bounds.lost_time)
    }
}

/// One row of the per-cycle episode trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle: usize,
    pub d_a: u32,
    pub d_d: u32,
    pub d_e: u32,
    pub d_h: u32,
    pub cycle_time: u32,
    /// Total measured flow (veh/h) when the plan was chosen.
    pub total_flow: f64,
    pub v: f64,
    pub l: f64,
    pub gr: f64,
    pub gi: f64,
    pub r: f64,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<(), EnvError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(rows: &[TraceRow], path: &Path) -> Result<(), EnvError> {
    write_trace(rows, std::fs::File::create(path)?)
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terms: RewardTerms,
    pub stats: CycleStats,
    pub done: bool,
}

#[derive(Clone, Debug)]
struct Episode {
    sim: IntersectionState,
    last_stats: Option<CycleStats>,
    decisions: usize,
    done: bool,
    trace: Vec<TraceRow>,
}

/// Simulator wrapped as an episodic environment over one flow profile.
#[derive(Clone, Debug)]
pub struct TrafficEnv {
    config: EnvConfig,
    profile: FlowProfile,
    episode: Option<Episode>,
}

impl TrafficEnv {
    pub fn new(config: EnvConfig, profile: FlowProfile) -> Result<Self, EnvError> {
        config.validate()?;
        let needed = config.warmup() + config.bounds.max_cycle;
        if profile.duration() < needed {
            return Err(EnvError::Config(format!(
                "profile lasts {}s, need at least {needed}s for warm-up and one cycle",
                profile.duration()
            )));
        }
        let profile = profile.masked(&config.present);
        Ok(Self { config, profile, episode: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn profile(&self) -> &FlowProfile {
        &self.profile
    }

    /// Starts a new episode: runs the initial plan through warm-up and
    /// returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let plan = self.config.initial();
        let mut sim = IntersectionState::new(plan, self.config.bounds, self.config.present, seed)?;
        let mut last_stats = None;
        while sim.clock() < self.config.warmup() {
            last_stats = Some(sim.run_cycle(plan, &self.profile)?);
        }
        self.episode = Some(Episode { sim, last_stats, decisions: 0, done: false, trace: Vec::new() });
        self.observation()
    }

    fn episode(&self) -> Result<&Episode, EnvError> {
        self.episode.as_ref().ok_or(EnvError::NotReset)
    }

    pub fn sim(&self) -> Result<&IntersectionState, EnvError> {
        Ok(&self.episode()?.sim)
    }

    pub fn plan(&self) -> Result<PhasePlan, EnvError> {
        Ok(*self.episode()?.sim.active_plan())
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn decisions(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.decisions)
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.episode.as_ref().map_or(&[], |e| &e.trace)
    }

    /// Flow over the trailing window, zeros until the window has filled.
    pub fn measured_flows(&self) -> Result<[f64; NUM_MOVEMENTS], EnvError> {
        let sim = &self.episode()?.sim;
        Ok(measure_flow(sim.history(), self.config.observation_window).unwrap_or([0.0; NUM_MOVEMENTS]))
    }

    pub fn observation(&self) -> Result<Observation, EnvError> {
        let ep = self.episode()?;
        Ok(build_observation(
            &self.measured_flows()?,
            &self.config.present,
            &self.config.capacity_vph,
            ep.sim.active_plan(),
            ep.last_stats.as_ref(),
        ))
    }

    pub fn mask(&self) -> Result<ActionMask, EnvError> {
        Ok(mask_actions(&self.plan()?, &self.config.bounds))
    }

    /// Applies a ±5 s action to the current plan and runs one cycle.
    pub fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(self.episode.as_ref().map_or(EnvError::NotReset, |_| EnvError::EpisodeDone));
        }
        let plan = apply_action(&self.plan()?, action, &self.config.bounds)?;
        self.step_plan(plan)
    }

    /// Runs one cycle of an arbitrary valid plan (used by rule-based controllers).
    pub fn step_plan(&mut self, plan: PhasePlan) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(self.episode.as_ref().map_or(EnvError::NotReset, |_| EnvError::EpisodeDone));
        }
        plan.validate(&self.config.bounds)?;
        let total_flow: f64 = self.measured_flows()?.iter().sum();
        let weights = self.config.reward;
        let max_cycle = self.config.bounds.max_cycle;
        let max_decisions = self.config.max_decisions;
        let duration = self.profile.duration();
        let ep = self.episode.as_mut().expect("checked above");
        let stats = ep.sim.run_cycle(plan, &self.profile)?;
        let (reward, terms) = compute_reward(&stats, &weights);
        let d = plan.durations();
        ep.trace.push(TraceRow {
            cycle: ep.decisions,
            d_a: d[0],
            d_d: d[1],
            d_e: d[2],
            d_h: d[3],
            cycle_time: plan.cycle_time(),
            total_flow,
            v: terms.v,
            l: terms.l,
            gr: terms.gr,
            gi: terms.gi,
            r: reward,
        });
        ep.decisions += 1;
        ep.last_stats = Some(stats);
        ep.done = duration - ep.sim.clock() < max_cycle || max_decisions.is_some_and(|n| ep.decisions >= n);
        Ok(StepOutcome { observation: self.observation()?, reward, terms, stats, done: self.is_done() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(rate: f64, duration: u32) -> TrafficEnv {
        let profile = FlowProfile::constant([rate; 8], 300, duration).unwrap();
        TrafficEnv::new(EnvConfig::default(), profile).unwrap()
    }

    #[test]
    fn zero_traffic_observation_and_rewards() {
        let mut env = env(0.0, 3600);
        let obs = env.reset(1).unwrap();
        assert!(obs.movement.iter().all(|m| m[0] == 0.0 && m[1] == SATURATION_FLOW_VPH && m[2] == 1.0));
        assert_eq!(obs.phase.map(|p| p[0]), [30.0, 15.0, 25.0, 20.0]);
        assert!(obs.phase.iter().all(|p| p[1] == 0.0 && p[2] == 0.0));
        while !env.is_done() {
            let out = env.step(&[PhaseAction::Keep; 4]).unwrap();
            assert_eq!(out.reward, 0.0);
        }
        assert!(matches!(env.step(&[PhaseAction::Keep; 4]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn absent_movements_are_zero_rows() {
        let mut config = EnvConfig::default();
        config.present[3] = false;
        config.present[7] = false;
        let profile = FlowProfile::constant([600.0; 8], 300, 1800).unwrap();
        let mut env = TrafficEnv::new(config, profile).unwrap();
        let obs = env.reset(3).unwrap();
        assert_eq!(obs.movement[3], [0.0; 3]);
        assert_eq!(obs.movement[7], [0.0; 3]);
        assert!(obs.movement[0][0] > 0.0);
    }

    #[test]
    fn step_before_reset_fails() {
        let mut env = env(100.0, 3600);
        assert!(matches!(env.step(&[PhaseAction::Keep; 4]), Err(EnvError::NotReset)));
    }

    #[test]
    fn decision_cap_ends_episode() {
        let profile = FlowProfile::constant([300.0; 8], 300, 7200).unwrap();
        let config = EnvConfig { max_decisions: Some(10), ..EnvConfig::default() };
        let mut env = TrafficEnv::new(config, profile).unwrap();
        env.reset(0).unwrap();
        let mut n = 0;
        while !env.is_done() {
            env.step(&[PhaseAction::Keep; 4]).unwrap();
            n += 1;
        }
        assert_eq!(n, 10);
        assert_eq!(env.trace().len(), 10);
    }

    #[test]
    fn trace_round_trips_through_csv() {
        let mut env = env(400.0, 1800);
        env.reset(5).unwrap();
        while !env.is_done() {
            env.step(&[PhaseAction::Keep; 4]).unwrap();
        }
        let mut buf = Vec::new();
        write_trace(env.trace(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cycle,d_a,d_d,d_e,d_h,cycle_time,total_flow,v,l,gr,gi,r"));
        assert_eq!(text.lines().count(), env.trace().len() + 1);
    }
}
