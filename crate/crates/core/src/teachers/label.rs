use crate::sim::{PhasePlan, NUM_PHASES};

/// Action classes shared by behavior-cloning labels and the policy's outputs.
pub const LABEL_EXTEND: u8 = 0;
pub const LABEL_SHORTEN: u8 = 1;
pub const LABEL_KEEP: u8 = 2;

/// Per-phase behavior-cloning target: 0 when the teacher wants at least 5 s
/// more than last cycle, 1 when it wants at least 5 s less, 2 otherwise.
pub fn teacher_label(teacher_duration: f64, previous_duration: f64) -> u8 {
    if teacher_duration - 5.0 >= previous_duration {
        LABEL_EXTEND
    } else if teacher_duration + 5.0 <= previous_duration {
        LABEL_SHORTEN
    } else {
        LABEL_KEEP
    }
}

pub fn plan_labels(teacher: &PhasePlan, previous: &PhasePlan) -> [u8; NUM_PHASES] {
    let t = teacher.durations();
    let p = previous.durations();
    std::array::from_fn(|i| teacher_label(f64::from(t[i]), f64::from(p[i])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_branches() {
        assert_eq!(teacher_label(35.0, 30.0), LABEL_EXTEND);
        assert_eq!(teacher_label(20.0, 30.0), LABEL_SHORTEN);
        assert_eq!(teacher_label(32.0, 30.0), LABEL_KEEP);
        assert_eq!(teacher_label(30.0, 30.0), LABEL_KEEP);
    }

    #[test]
    fn replaying_the_current_plan_labels_keep() {
        let plan = PhasePlan::new([30, 15, 25, 20], 4);
        assert_eq!(plan_labels(&plan, &plan), [LABEL_KEEP; 4]);
    }
}
