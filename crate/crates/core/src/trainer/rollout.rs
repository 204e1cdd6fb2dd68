use rand::Rng;

use crate::env::{actions_from_indices, ActionMask, Observation, TrafficEnv};
use crate::nn::{ActionSelection, PolicyNet, RecurrentState};
use crate::sim::NUM_PHASES;
use crate::teachers::{Teacher, TeacherKind};

use super::TrainError;

/// Everything needed to re-evaluate one decision during an update.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub observation: Observation,
    pub mask: ActionMask,
    /// Recurrent state the decision was taken from.
    pub state: RecurrentState,
    pub actions: [usize; NUM_PHASES],
    pub log_probs: [f64; NUM_PHASES],
    pub value: f64,
    pub reward: f64,
    pub labels: [u8; NUM_PHASES],
}

impl Record {
    pub fn joint_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub teacher: Option<TeacherKind>,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

/// Runs one full episode with `policy`, labelling every decision with what
/// `teacher` would have done from the same pre-action plan.
pub fn collect_episode<R: Rng>(
    env: &mut TrafficEnv,
    policy: &PolicyNet,
    teacher: &Teacher,
    seed: u64,
    selection: ActionSelection,
    rng: &mut R,
) -> Result<Trajectory, TrainError> {
    let mut observation = env.reset(seed)?;
    let mut state = policy.initial_state();
    let mut records = Vec::new();
    while !env.is_done() {
        let mask = env.mask()?;
        let labels = teacher.labels(&env.measured_flows()?, &env.plan()?)?;
        let step = policy.act(&observation, &mask, &state, selection, rng)?;
        let outcome = env.step(&actions_from_indices(step.actions))?;
        records.push(Record {
            observation,
            mask,
            state,
            actions: step.actions,
            log_probs: step.log_probs,
            value: step.value,
            reward: outcome.reward,
            labels,
        });
        observation = outcome.observation;
        state = step.next_state;
    }
    Ok(Trajectory { teacher: Some(teacher.kind()), records })
}
