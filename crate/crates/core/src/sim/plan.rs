use serde::{Deserialize, Serialize};

use super::movement::{Phase, NUM_PHASES};
use super::PlanError;

/// Granularity of every phase duration, matching the ±5 s action grid.
pub const DURATION_STEP_S: u32 = 5;

/// Green and cycle limits every signal plan must respect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanBounds {
    pub min_green: u32,
    pub max_green: u32,
    pub min_cycle: u32,
    pub max_cycle: u32,
    /// Yellow plus all-red after each phase.
    pub lost_time: u32,
}

impl Default for PlanBounds {
    fn default() -> Self {
        Self {
            min_green: 10,
            max_green: 90,
            min_cycle: 60,
            max_cycle: 180,
            lost_time: 4,
        }
    }
}

impl PlanBounds {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: &str| Err(PlanError::InvalidBounds(msg.to_string()));
        if self.min_green == 0 || self.min_green % DURATION_STEP_S != 0 {
            return bad("min_green must be a positive multiple of 5");
        }
        if self.max_green % DURATION_STEP_S != 0 || self.max_green < self.min_green {
            return bad("max_green must be a multiple of 5 and >= min_green");
        }
        if self.min_cycle > self.max_cycle {
            return bad("min_cycle must not exceed max_cycle");
        }
        let (lo, hi) = self.green_budget_range();
        if lo > hi {
            return bad("no quantized plan fits the cycle bounds");
        }
        Ok(())
    }

    pub fn total_lost_time(&self) -> u32 {
        self.lost_time * NUM_PHASES as u32
    }

    /// Smallest and largest admissible sum of green durations.
    pub fn green_budget_range(&self) -> (u32, u32) {
        let lost = self.total_lost_time();
        let lo = self
            .min_cycle
            .saturating_sub(lost)
            .div_ceil(DURATION_STEP_S)
            * DURATION_STEP_S;
        let lo = lo.max(self.min_green * NUM_PHASES as u32);
        let hi = self.max_cycle.saturating_sub(lost) / DURATION_STEP_S * DURATION_STEP_S;
        let hi = hi.min(self.max_green * NUM_PHASES as u32);
        (lo, hi)
    }

    pub fn cycle_in_range(&self, cycle: u32) -> bool {
        (self.min_cycle..=self.max_cycle).contains(&cycle)
    }

    pub fn green_in_range(&self, green: u32) -> bool {
        (self.min_green..=self.max_green).contains(&green)
    }
}

/// Durations of the four cyclic phases plus the lost time that follows each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhasePlan {
    durations: [u32; NUM_PHASES],
    lost_time: u32,
}

impl PhasePlan {
    pub fn new(durations: [u32; NUM_PHASES], lost_time: u32) -> Self {
        Self {
            durations,
            lost_time,
        }
    }

    /// Builds a plan and checks it against `bounds` in one go.
    pub fn checked(durations: [u32; NUM_PHASES], bounds: &PlanBounds) -> Result<Self, PlanError> {
        let plan = Self::new(durations, bounds.lost_time);
        plan.validate(bounds)?;
        Ok(plan)
    }

    pub fn durations(&self) -> [u32; NUM_PHASES] {
        self.durations
    }

    pub fn duration(&self, phase: Phase) -> u32 {
        self.durations[phase.index()]
    }

    pub fn lost_time(&self) -> u32 {
        self.lost_time
    }

    pub fn total_green(&self) -> u32 {
        self.durations.iter().sum()
    }

    pub fn cycle_time(&self) -> u32 {
        self.total_green() + self.lost_time * NUM_PHASES as u32
    }

    pub fn validate(&self, bounds: &PlanBounds) -> Result<(), PlanError> {
        if self.lost_time != bounds.lost_time {
            return Err(PlanError::LostTimeMismatch {
                plan: self.lost_time,
                bounds: bounds.lost_time,
            });
        }
        for phase in Phase::CYCLE {
            let d = self.duration(phase);
            if d % DURATION_STEP_S != 0 {
                return Err(PlanError::NotQuantized { phase, duration: d });
            }
            if !bounds.green_in_range(d) {
                return Err(PlanError::GreenOutOfRange {
                    phase,
                    duration: d,
                    min: bounds.min_green,
                    max: bounds.max_green,
                });
            }
        }
        let cycle = self.cycle_time();
        if !bounds.cycle_in_range(cycle) {
            return Err(PlanError::CycleOutOfRange {
                cycle,
                min: bounds.min_cycle,
                max: bounds.max_cycle,
            });
        }
        Ok(())
    }

    /// Offset of the first green second of `phase` from the cycle start.
    pub fn green_start(&self, phase: Phase) -> u32 {
        self.durations[..phase.index()]
            .iter()
            .map(|d| d + self.lost_time)
            .sum()
    }

    /// The phase showing green at `offset` seconds into the cycle and how many
    /// green seconds have elapsed including the current one.
    pub fn green_at(&self, offset: u32) -> Option<(Phase, u32)> {
        let mut start = 0;
        for phase in Phase::CYCLE {
            let d = self.duration(phase);
            if offset < start + d {
                return if offset >= start {
                    Some((phase, offset - start + 1))
                } else {
                    None
                };
            }
            start += d + self.lost_time;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_time_includes_lost_time() {
        let plan = PhasePlan::new([30, 15, 25, 20], 4);
        assert_eq!(plan.cycle_time(), 90 + 16);
    }

    #[test]
    fn green_windows_follow_phase_order() {
        let plan = PhasePlan::new([10, 15, 20, 25], 4);
        assert_eq!(plan.green_start(Phase::A), 0);
        assert_eq!(plan.green_start(Phase::D), 14);
        assert_eq!(plan.green_start(Phase::E), 33);
        assert_eq!(plan.green_start(Phase::H), 57);
        assert_eq!(plan.green_at(0), Some((Phase::A, 1)));
        assert_eq!(plan.green_at(9), Some((Phase::A, 10)));
        assert_eq!(plan.green_at(10), None);
        assert_eq!(plan.green_at(13), None);
        assert_eq!(plan.green_at(14), Some((Phase::D, 1)));
        assert_eq!(plan.green_at(81), Some((Phase::H, 25)));
        assert_eq!(plan.green_at(82), None);
        assert_eq!(plan.green_at(plan.cycle_time() - 1), None);
    }

    #[test]
    fn validation_rejects_each_violation() {
        let b = PlanBounds::default();
        assert!(PhasePlan::checked([25, 25, 25, 25], &b).is_ok());
        assert!(matches!(
            PhasePlan::checked([5, 25, 25, 25], &b),
            Err(PlanError::GreenOutOfRange { .. })
        ));
        assert!(matches!(
            PhasePlan::checked([12, 25, 25, 25], &b),
            Err(PlanError::NotQuantized { .. })
        ));
        assert!(matches!(
            PhasePlan::checked([10, 10, 10, 10], &b),
            Err(PlanError::CycleOutOfRange { .. })
        ));
        assert!(matches!(
            PhasePlan::checked([90, 90, 10, 10], &b),
            Err(PlanError::CycleOutOfRange { .. })
        ));
        assert!(matches!(
            PhasePlan::new([25; 4], 3).validate(&b),
            Err(PlanError::LostTimeMismatch { .. })
        ));
    }

    #[test]
    fn green_budget_range_respects_quantization() {
        let b = PlanBounds::default();
        assert_eq!(b.green_budget_range(), (45, 160));
        let b5 = PlanBounds {
            lost_time: 5,
            ..PlanBounds::default()
        };
        assert_eq!(b5.green_budget_range(), (40, 160));
        assert!(b.validate().is_ok());
        let broken = PlanBounds {
            min_cycle: 177,
            max_cycle: 179,
            ..PlanBounds::default()
        };
        assert!(broken.validate().is_err());
    }
}
