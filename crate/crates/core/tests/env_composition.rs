//! Environment pieces composed: action application against the mask, the
//! reward identity, and traces of whole episodes.

mod common;

use guidelight::env::{
    actions_from_indices, apply_action, compute_reward, mask_actions, EnvConfig, EnvError, RewardWeights,
    TrafficEnv,
};
use guidelight::sim::{FlowProfile, PhasePlan, PlanBounds};
use guidelight::teachers::{Teacher, TeacherConfig, TeacherKind};
use proptest::prelude::*;

fn valid_plan() -> impl Strategy<Value = PhasePlan> {
    prop::array::uniform4(2u32..=18).prop_filter_map("cycle outside bounds", |s| {
        let plan = PhasePlan::new(s.map(|x| x * 5), 4);
        plan.validate(&PlanBounds::default()).ok().map(|_| plan)
    })
}

proptest! {
    #[test]
    fn unmasked_actions_keep_plans_valid(plan in valid_plan(), picks in prop::array::uniform4(0usize..3)) {
        let bounds = PlanBounds::default();
        let mask = mask_actions(&plan, &bounds);
        let action = actions_from_indices(picks);
        let allowed = (0..4).all(|p| mask[p][picks[p]]);
        match apply_action(&plan, &action, &bounds) {
            Ok(next) => {
                prop_assert!(allowed);
                prop_assert!(next.validate(&bounds).is_ok());
                prop_assert!(next.cycle_time().abs_diff(plan.cycle_time()) <= 20);
                for p in 0..4 {
                    let delta = i64::from(next.durations()[p]) - i64::from(plan.durations()[p]);
                    prop_assert!(delta == 0 || delta == action[p].delta());
                }
            }
            Err(EnvError::MaskedAction { .. }) => prop_assert!(!allowed),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn keep_is_always_allowed(plan in valid_plan()) {
        let mask = mask_actions(&plan, &PlanBounds::default());
        prop_assert!(mask.iter().all(|m| m[2]));
    }

    #[test]
    fn reward_is_the_weighted_sum(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let stats = common::random_cycle_stats(&mut rng);
        let (r, t) = compute_reward(&stats, &RewardWeights::default());
        prop_assert_eq!(r, 0.04 * t.v - 0.001 * t.l + t.gr - t.gi);
        let v = f64::from(stats.phase_throughput.iter().sum::<u32>()) * 60.0 / f64::from(stats.plan.cycle_time());
        prop_assert_eq!(t.v, v);
        prop_assert_eq!(t.l, f64::from(stats.end_queues.iter().sum::<u32>()));
    }
}

fn ramp_profile() -> FlowProfile {
    let shares = [0.17, 0.15, 0.08, 0.10, 0.17, 0.15, 0.08, 0.10];
    let bins = (0..12).map(|i| shares.map(|s| s * (400.0 + 150.0 * f64::from(i)))).collect();
    FlowProfile::new(300, bins).unwrap()
}

#[test]
fn teacher_episode_trace_is_consistent() {
    let cfg = EnvConfig::default();
    let mut env = TrafficEnv::new(cfg.clone(), ramp_profile()).unwrap();
    let teacher = Teacher::new(TeacherKind::ScatsLike, TeacherConfig::default(), cfg.bounds).unwrap();
    env.reset(3).unwrap();
    let mut clock = env.sim().unwrap().clock();
    assert!(clock >= 300);
    while !env.is_done() {
        let flows = env.measured_flows().unwrap();
        let plan = teacher.target_plan(&flows).unwrap();
        let out = env.step_plan(plan).unwrap();
        assert_eq!(out.stats.start_clock, clock);
        clock += plan.cycle_time();
        assert_eq!(env.sim().unwrap().clock(), clock);
        assert_eq!(out.terms.gr.to_bits(), env.trace().last().unwrap().gr.to_bits());
        assert!(env.sim().unwrap().is_conserved());
    }
    let remaining = env.profile().duration() - clock;
    assert!(remaining < cfg.bounds.max_cycle);
    for (i, row) in env.trace().iter().enumerate() {
        assert_eq!(row.cycle, i);
        assert_eq!(row.cycle_time, row.d_a + row.d_d + row.d_e + row.d_h + 16);
        assert_eq!(row.r, 0.04 * row.v - 0.001 * row.l + row.gr - row.gi);
    }
    assert!(matches!(env.step_plan(PhasePlan::new([30, 15, 25, 20], 4)), Err(EnvError::EpisodeDone)));
}

#[test]
fn stepping_before_reset_fails() {
    let mut env = TrafficEnv::new(EnvConfig::default(), ramp_profile()).unwrap();
    assert!(matches!(env.step(&actions_from_indices([2; 4])), Err(EnvError::NotReset)));
}

#[test]
fn trace_csv_round_trips() {
    let mut env = TrafficEnv::new(EnvConfig { max_decisions: Some(5), ..EnvConfig::default() }, ramp_profile()).unwrap();
    env.reset(1).unwrap();
    while !env.is_done() {
        env.step(&actions_from_indices([0, 2, 2, 0])).unwrap();
    }
    assert_eq!(env.trace().len(), 5);
    let mut buf = Vec::new();
    guidelight::env::write_trace(env.trace(), &mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let back: Vec<guidelight::env::TraceRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(back, env.trace());
}
