use std::fmt;

use serde::{Deserialize, Serialize};

use super::SimError;

pub const NUM_MOVEMENTS: usize = 8;
pub const NUM_PHASES: usize = 4;

/// Seconds a queued vehicle needs to clear the stop line under green.
pub const SATURATION_HEADWAY_S: f64 = 2.5;

/// Saturation flow of a single movement, 3600 / 2.5 veh/h.
pub const SATURATION_FLOW_VPH: f64 = 3600.0 / SATURATION_HEADWAY_S;

/// One of the eight signal-controlled movements, numbered 1..=8.
///
/// Right turns are free and not modeled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MovementId(u8);

impl MovementId {
    pub fn new(number: u8) -> Result<Self, SimError> {
        if (1..=NUM_MOVEMENTS as u8).contains(&number) {
            Ok(Self(number))
        } else {
            Err(SimError::InvalidMovement(number))
        }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_MOVEMENTS, "movement index {index} out of range");
        Self(index as u8 + 1)
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Zero-based slot used by the fixed-size arrays throughout the crate.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn all() -> impl Iterator<Item = MovementId> {
        (1..=NUM_MOVEMENTS as u8).map(MovementId)
    }
}

impl TryFrom<u8> for MovementId {
    type Error = SimError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<MovementId> for u8 {
    fn from(value: MovementId) -> Self {
        value.0
    }
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// A pair of non-conflicting movements released together.
///
/// Phases always run in the order A, D, E, H and then repeat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    D,
    E,
    H,
}

impl Phase {
    pub const CYCLE: [Phase; NUM_PHASES] = [Phase::A, Phase::D, Phase::E, Phase::H];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::D => 1,
            Phase::E => 2,
            Phase::H => 3,
        }
    }

    pub fn from_index(index: usize) -> Self {
        Self::CYCLE[index]
    }

    /// A = {1,5} EW through, D = {3,7} EW left, E = {2,6} SN through, H = {4,8} SN left.
    pub fn movements(self) -> [MovementId; 2] {
        let (a, b) = match self {
            Phase::A => (1, 5),
            Phase::D => (3, 7),
            Phase::E => (2, 6),
            Phase::H => (4, 8),
        };
        [MovementId(a), MovementId(b)]
    }

    pub fn movement_indices(self) -> [usize; 2] {
        let [a, b] = self.movements();
        [a.index(), b.index()]
    }

    pub fn of_movement(movement: MovementId) -> Phase {
        Self::CYCLE
            .into_iter()
            .find(|p| p.movements().contains(&movement))
            .expect("every movement belongs to a phase")
    }

    pub fn shares_movement(self, other: Phase) -> bool {
        let mine = self.movements();
        other.movements().iter().any(|m| mine.contains(m))
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::D => "D",
            Phase::E => "E",
            Phase::H => "H",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_partition_the_movements() {
        let mut seen = [0usize; NUM_MOVEMENTS];
        for phase in Phase::CYCLE {
            for m in phase.movements() {
                seen[m.index()] += 1;
            }
        }
        assert_eq!(seen, [1; NUM_MOVEMENTS]);
    }

    #[test]
    fn standard_pairing() {
        let nums = |p: Phase| p.movements().map(MovementId::number);
        assert_eq!(nums(Phase::A), [1, 5]);
        assert_eq!(nums(Phase::D), [3, 7]);
        assert_eq!(nums(Phase::E), [2, 6]);
        assert_eq!(nums(Phase::H), [4, 8]);
        assert_eq!(Phase::of_movement(MovementId::new(6).unwrap()), Phase::E);
    }

    #[test]
    fn movement_range_checked() {
        assert!(MovementId::new(0).is_err());
        assert!(MovementId::new(9).is_err());
        assert_eq!(MovementId::new(8).unwrap().index(), 7);
    }

    #[test]
    fn distinct_phases_never_share_movements() {
        for p in Phase::CYCLE {
            for q in Phase::CYCLE {
                assert_eq!(p.shares_movement(q), p == q);
            }
        }
    }
}
