use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::{Phase, PhasePlan, PlanBounds, DURATION_STEP_S, NUM_PHASES};

use super::EnvError;

/// Per-phase duration change, encoded like the behavior-cloning labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAction {
    Extend,
    Shorten,
    Keep,
}

pub type ActionVector = [PhaseAction; NUM_PHASES];

/// `mask[p][k]` is true when option `k` is allowed for phase `p`.
pub type ActionMask = [[bool; 3]; NUM_PHASES];

pub const NUM_OPTIONS: usize = 3;

impl PhaseAction {
    pub const ALL: [PhaseAction; 3] = [PhaseAction::Extend, PhaseAction::Shorten, PhaseAction::Keep];

    pub fn index(self) -> usize {
        match self {
            PhaseAction::Extend => 0,
            PhaseAction::Shorten => 1,
            PhaseAction::Keep => 2,
        }
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn delta(self) -> i64 {
        match self {
            PhaseAction::Extend => i64::from(DURATION_STEP_S),
            PhaseAction::Shorten => -i64::from(DURATION_STEP_S),
            PhaseAction::Keep => 0,
        }
    }
}

impl fmt::Display for PhaseAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseAction::Extend => "+5",
            PhaseAction::Shorten => "-5",
            PhaseAction::Keep => "0",
        })
    }
}

pub fn actions_from_indices(indices: [usize; NUM_PHASES]) -> ActionVector {
    indices.map(PhaseAction::from_index)
}

/// Which options each phase may take from `plan`, judged one phase at a time.
pub fn mask_actions(plan: &PhasePlan, bounds: &PlanBounds) -> ActionMask {
    let cycle = plan.cycle_time();
    let step = DURATION_STEP_S;
    Phase::CYCLE.map(|p| {
        let d = plan.duration(p);
        let extend = d + step <= bounds.max_green && cycle + step <= bounds.max_cycle;
        let shorten = d >= bounds.min_green + step && cycle >= bounds.min_cycle + step;
        [extend, shorten, true]
    })
}

/// Applies per-phase deltas in cycle order. A delta that would take the
/// running cycle outside its bounds is dropped, so the result is always valid
/// and the cycle moves by at most 20 s.
pub fn apply_action(plan: &PhasePlan, action: &ActionVector, bounds: &PlanBounds) -> Result<PhasePlan, EnvError> {
    let mask = mask_actions(plan, bounds);
    for phase in Phase::CYCLE {
        let a = action[phase.index()];
        if !mask[phase.index()][a.index()] {
            return Err(EnvError::MaskedAction { phase, action: a });
        }
    }
    let mut durations = plan.durations();
    let mut cycle = i64::from(plan.cycle_time());
    let (lo, hi) = (i64::from(bounds.min_cycle), i64::from(bounds.max_cycle));
    for (d, a) in durations.iter_mut().zip(action) {
        let next = cycle + a.delta();
        if next < lo || next > hi {
            continue;
        }
        cycle = next;
        *d = (i64::from(*d) + a.delta()) as u32;
    }
    Ok(PhasePlan::new(durations, plan.lost_time()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use PhaseAction::*;

    fn b() -> PlanBounds {
        PlanBounds { lost_time: 5, ..PlanBounds::default() }
    }

    #[test]
    fn keep_is_identity() {
        let plan = PhasePlan::new([30, 15, 25, 20], 5);
        assert_eq!(apply_action(&plan, &[Keep; 4], &b()).unwrap(), plan);
    }

    #[test]
    fn extending_everything_adds_twenty_seconds() {
        let plan = PhasePlan::new([30, 15, 25, 20], 5);
        let next = apply_action(&plan, &[Extend; 4], &b()).unwrap();
        assert_eq!(next.cycle_time(), plan.cycle_time() + 20);
    }

    #[test]
    fn max_cycle_masks_every_extension() {
        let plan = PhasePlan::new([40, 40, 40, 40], 5);
        assert_eq!(plan.cycle_time(), 180);
        let mask = mask_actions(&plan, &b());
        assert!(mask.iter().all(|m| !m[0] && m[1] && m[2]));
    }

    #[test]
    fn min_green_masks_only_that_phase() {
        let plan = PhasePlan::new([10, 30, 30, 30], 5);
        let mask = mask_actions(&plan, &b());
        assert_eq!(mask[0], [true, false, true]);
        assert!(mask[1..].iter().all(|m| *m == [true, true, true]));
    }

    #[test]
    fn sequential_clip_near_max_cycle() {
        let plan = PhasePlan::new([40, 40, 40, 30], 5);
        assert_eq!(plan.cycle_time(), 170);
        let next = apply_action(&plan, &[Extend; 4], &b()).unwrap();
        assert_eq!(next.durations(), [45, 45, 40, 30]);
    }

    #[test]
    fn masked_choice_is_rejected() {
        let plan = PhasePlan::new([10, 30, 30, 30], 5);
        let err = apply_action(&plan, &[Shorten, Keep, Keep, Keep], &b()).unwrap_err();
        assert!(matches!(err, EnvError::MaskedAction { phase: Phase::A, .. }));
    }
}
