use serde::{Deserialize, Serialize};

use crate::teachers::TeacherKind;

use super::TrainError;

/// Episodes `[start, end)` guided by `teacher`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub teacher: TeacherKind,
    pub start: usize,
    pub end: usize,
}

/// Piecewise-constant teacher schedule; past the last stage its teacher stays.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CurriculumStage>", into = "Vec<CurriculumStage>")]
pub struct Curriculum {
    stages: Vec<CurriculumStage>,
}

impl TryFrom<Vec<CurriculumStage>> for Curriculum {
    type Error = TrainError;

    fn try_from(stages: Vec<CurriculumStage>) -> Result<Self, Self::Error> {
        Self::new(stages)
    }
}

impl From<Curriculum> for Vec<CurriculumStage> {
    fn from(c: Curriculum) -> Self {
        c.stages
    }
}

impl Curriculum {
    pub fn new(stages: Vec<CurriculumStage>) -> Result<Self, TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if stages.is_empty() {
            return bad("curriculum needs at least one stage".into());
        }
        if stages[0].start != 0 {
            return bad(format!("curriculum must start at episode 0, starts at {}", stages[0].start));
        }
        for s in &stages {
            if s.end <= s.start {
                return bad(format!("empty curriculum stage {}..{}", s.start, s.end));
            }
            if s.teacher.curriculum_rank().is_none() {
                return bad(format!("{} cannot guide the curriculum", s.teacher));
            }
        }
        for w in stages.windows(2) {
            if w[1].start != w[0].end {
                return bad(format!("curriculum gap or overlap between episode {} and {}", w[0].end, w[1].start));
            }
            if w[1].teacher.curriculum_rank() < w[0].teacher.curriculum_rank() {
                return bad(format!("curriculum moves back from {} to {}", w[0].teacher, w[1].teacher));
            }
        }
        Ok(Self { stages })
    }

    /// Splits `episodes` into equal contiguous stages, one per teacher; the
    /// last stage absorbs the remainder.
    pub fn equal_split(teachers: &[TeacherKind], episodes: usize) -> Result<Self, TrainError> {
        if teachers.is_empty() || episodes < teachers.len() {
            return Err(TrainError::Config(format!(
                "cannot split {episodes} episodes over {} teachers",
                teachers.len()
            )));
        }
        let n = teachers.len();
        let stages = teachers
            .iter()
            .enumerate()
            .map(|(i, &teacher)| CurriculumStage {
                teacher,
                start: i * episodes / n,
                end: (i + 1) * episodes / n,
            })
            .collect();
        Self::new(stages)
    }

    /// Linear, logistic and SCATS-like guides over equal thirds.
    pub fn default_for(episodes: usize) -> Result<Self, TrainError> {
        Self::equal_split(&[TeacherKind::Linear, TeacherKind::Logistic, TeacherKind::ScatsLike], episodes)
    }

    pub fn stages(&self) -> &[CurriculumStage] {
        &self.stages
    }

    pub fn select(&self, episode: usize) -> TeacherKind {
        self.stage_index(episode).map_or(self.stages[self.stages.len() - 1].teacher, |i| self.stages[i].teacher)
    }

    pub fn stage_index(&self, episode: usize) -> Option<usize> {
        self.stages.iter().position(|s| (s.start..s.end).contains(&episode))
    }

    pub fn teachers(&self) -> Vec<TeacherKind> {
        self.stages.iter().map(|s| s.teacher).collect()
    }
}

pub fn curriculum_select(episode: usize, schedule: &Curriculum) -> TeacherKind {
    schedule.select(episode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use TeacherKind::*;

    #[test]
    fn default_thirds() {
        let c = Curriculum::default_for(300).unwrap();
        let bounds: Vec<(usize, usize)> = c.stages().iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(bounds, vec![(0, 100), (100, 200), (200, 300)]);
        assert_eq!(curriculum_select(0, &c), Linear);
        assert_eq!(curriculum_select(150, &c), Logistic);
        assert_eq!(curriculum_select(299, &c), ScatsLike);
        assert_eq!(curriculum_select(10_000, &c), ScatsLike);
    }

    #[test]
    fn rejects_gaps_and_regressions() {
        let gap = vec![
            CurriculumStage { teacher: Linear, start: 0, end: 10 },
            CurriculumStage { teacher: ScatsLike, start: 11, end: 20 },
        ];
        assert!(Curriculum::new(gap).is_err());
        let back = vec![
            CurriculumStage { teacher: ScatsLike, start: 0, end: 10 },
            CurriculumStage { teacher: Linear, start: 10, end: 20 },
        ];
        assert!(Curriculum::new(back).is_err());
        let late = vec![CurriculumStage { teacher: Linear, start: 5, end: 10 }];
        assert!(Curriculum::new(late).is_err());
        let baseline = vec![CurriculumStage { teacher: Webster, start: 0, end: 10 }];
        assert!(Curriculum::new(baseline).is_err());
    }

    #[test]
    fn selection_never_moves_backward() {
        let c = Curriculum::default_for(31).unwrap();
        let ranks: Vec<u8> = (0..60).map(|e| c.select(e).curriculum_rank().unwrap()).collect();
        assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn serde_validates() {
        let text = r#"[{"teacher":"scats_like","start":0,"end":5},{"teacher":"linear","start":5,"end":9}]"#;
        assert!(serde_json::from_str::<Curriculum>(text).is_err());
        let c = Curriculum::default_for(9).unwrap();
        let back: Curriculum = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
