//! Closed-loop evaluation of controllers, the cycle-flow monotonicity
//! statistic and the ablation suite.

mod monotonicity;

pub use monotonicity::{binned_means, midranks, monotonicity_stat, spearman, Monotonicity};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{actions_from_indices, EnvConfig, EnvError, RewardTerms, TraceRow, TrafficEnv};
use crate::nn::{ActionSelection, NetConfig, NnError, PolicyNet};
use crate::sim::FlowProfile;
use crate::teachers::{Teacher, TeacherConfig, TeacherError, TeacherKind};
use crate::trainer::{Curriculum, TrainConfig, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Something that picks the next plan once per cycle.
#[derive(Clone, Debug)]
pub enum Controller {
    Teacher(Teacher),
    /// Greedy actions from a trained policy.
    Policy(PolicyNet),
}

impl Controller {
    /// Runs one full episode and returns its per-cycle trace.
    pub fn run_episode(&self, env: &mut TrafficEnv, seed: u64) -> Result<Vec<TraceRow>, EvalError> {
        let mut obs = env.reset(seed)?;
        match self {
            Controller::Teacher(t) => {
                while !env.is_done() {
                    let plan = t.target_plan(&env.measured_flows()?)?;
                    env.step_plan(plan)?;
                }
            }
            Controller::Policy(net) => {
                // Greedy selection never draws from the rng.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut state = net.initial_state();
                while !env.is_done() {
                    let mask = env.mask()?;
                    let step = net.act(&obs, &mask, &state, ActionSelection::Greedy, &mut rng)?;
                    obs = env.step(&actions_from_indices(step.actions))?.observation;
                    state = step.next_state;
                }
            }
        }
        Ok(env.trace().to_vec())
    }
}

/// Mean reward factors over a set of cycles.
pub fn mean_terms(rows: &[TraceRow]) -> RewardTerms {
    let n = rows.len().max(1) as f64;
    RewardTerms {
        v: rows.iter().map(|r| r.v).sum::<f64>() / n,
        l: rows.iter().map(|r| r.l).sum::<f64>() / n,
        gr: rows.iter().map(|r| r.gr).sum::<f64>() / n,
        gi: rows.iter().map(|r| r.gi).sum::<f64>() / n,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population std across seeds.
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = crate::env::mean_and_population_std(values);
        Self { mean, std }
    }
}

/// Metrics from one seed (or one training run) of a method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub terms: RewardTerms,
    pub all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub per_seed: Vec<SeedMetrics>,
    pub v: MetricSummary,
    pub l: MetricSummary,
    pub gr: MetricSummary,
    pub gi: MetricSummary,
    pub all: MetricSummary,
    pub monotonicity: Monotonicity,
    /// Per-cycle (measured flow, cycle time) on the staircase, all seeds pooled.
    #[serde(skip)]
    pub staircase_pairs: Vec<(f64, f64)>,
}

impl MethodReport {
    fn summarize(method: &str, per_seed: Vec<SeedMetrics>, pairs: Vec<(f64, f64)>, bins: usize) -> Self {
        let pick = |f: fn(&SeedMetrics) -> f64| MetricSummary::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        let monotonicity = monotonicity_stat(&pairs, bins);
        Self {
            method: method.to_string(),
            v: pick(|s| s.terms.v),
            l: pick(|s| s.terms.l),
            gr: pick(|s| s.terms.gr),
            gi: pick(|s| s.terms.gi),
            all: pick(|s| s.all),
            per_seed,
            monotonicity,
            staircase_pairs: pairs,
        }
    }

    /// Collapses several runs (e.g. one per training seed) into one report,
    /// each run contributing its seed-averaged metrics as a single sample.
    pub fn merge(method: &str, runs: &[(u64, MethodReport)], bins: usize) -> Self {
        let per_seed = runs
            .iter()
            .map(|(seed, r)| SeedMetrics {
                seed: *seed,
                terms: RewardTerms { v: r.v.mean, l: r.l.mean, gr: r.gr.mean, gi: r.gi.mean },
                all: r.all.mean,
            })
            .collect();
        let pairs = runs.iter().flat_map(|(_, r)| r.staircase_pairs.iter().copied()).collect();
        Self::summarize(method, per_seed, pairs, bins)
    }
}

/// Profiles and seeds every method is scored on.
#[derive(Clone, Debug)]
pub struct EvalSetup {
    pub env: EnvConfig,
    pub profiles: Vec<FlowProfile>,
    pub seeds: Vec<u64>,
    pub staircase: Option<FlowProfile>,
    pub monotonicity_bins: usize,
}

impl EvalSetup {
    fn check(&self) -> Result<(), EvalError> {
        if self.profiles.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::Config("need at least one profile and one seed".into()));
        }
        Ok(())
    }
}

/// Scores `controller` on every (seed, profile) pair. Per-seed metrics average
/// all cycles of all profiles; "All" combines them with the reward weights.
pub fn evaluate(controller: &Controller, method: &str, setup: &EvalSetup) -> Result<MethodReport, EvalError> {
    setup.check()?;
    let weights = setup.env.reward;
    let mut envs = setup
        .profiles
        .iter()
        .map(|p| TrafficEnv::new(setup.env.clone(), p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stair = setup.staircase.as_ref().map(|p| TrafficEnv::new(setup.env.clone(), p.clone())).transpose()?;
    let mut per_seed = Vec::with_capacity(setup.seeds.len());
    let mut pairs = Vec::new();
    for &seed in &setup.seeds {
        let mut rows = Vec::new();
        for env in envs.iter_mut() {
            rows.extend(controller.run_episode(env, seed)?);
        }
        let terms = mean_terms(&rows);
        per_seed.push(SeedMetrics { seed, terms, all: weights.combine(&terms) });
        if let Some(env) = stair.as_mut() {
            let trace = controller.run_episode(env, seed)?;
            pairs.extend(trace.iter().map(|r| (r.total_flow, f64::from(r.cycle_time))));
        }
    }
    Ok(MethodReport::summarize(method, per_seed, pairs, setup.monotonicity_bins))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No cloning term.
    #[serde(rename = "wo_bc")]
    WithoutBc,
    /// Only the advanced teacher, no easier stages.
    #[serde(rename = "wo_l")]
    WithoutLearning,
    /// Easier stages only, the advanced teacher is skipped.
    #[serde(rename = "wo_s")]
    WithoutAdvanced,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::Full, Ablation::WithoutLearning, Ablation::WithoutAdvanced, Ablation::WithoutBc];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WithoutBc => "wo_bc",
            Ablation::WithoutLearning => "wo_l",
            Ablation::WithoutAdvanced => "wo_s",
        }
    }

    /// The training config of this variant; only the cloning weight and the
    /// curriculum differ from `base`.
    pub fn train_config(self, base: &TrainConfig) -> Result<TrainConfig, TrainError> {
        let n = base.episodes.max(2);
        let mut cfg = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::WithoutBc => cfg.kappa = 0.0,
            Ablation::WithoutLearning => {
                cfg.curriculum = Some(Curriculum::equal_split(&[TeacherKind::ScatsLike], n)?);
            }
            Ablation::WithoutAdvanced => {
                cfg.curriculum = Some(Curriculum::equal_split(&[TeacherKind::Linear, TeacherKind::Logistic], n)?);
            }
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}, expected one of full, wo_l, wo_s, wo_bc"))
    }
}

/// Everything needed to train one policy.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub teachers: TeacherConfig,
    pub profiles: Vec<FlowProfile>,
}

/// Trains with the given seed (both the initialization and the rollouts).
pub fn train_policy(setup: &TrainSetup, train: TrainConfig, seed: u64) -> Result<Trainer, EvalError> {
    let net = NetConfig { seed, ..setup.net.clone() };
    let train = TrainConfig { seed, ..train };
    let mut trainer = Trainer::new(net, train, setup.env.clone(), setup.teachers.clone())?;
    trainer.train(&setup.profiles, |_, _| Ok(()))?;
    Ok(trainer)
}

/// Trains every variant once per training seed (runs in parallel) and
/// evaluates each resulting policy; reports are in `variants` order.
pub fn ablation_suite(
    train: &TrainSetup,
    eval: &EvalSetup,
    variants: &[Ablation],
    train_seeds: &[u64],
) -> Result<Vec<MethodReport>, EvalError> {
    eval.check()?;
    if train_seeds.is_empty() {
        return Err(EvalError::Config("need at least one training seed".into()));
    }
    let jobs: Vec<(Ablation, u64)> =
        variants.iter().flat_map(|&v| train_seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<Result<MethodReport, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(variant, seed)| {
                scope.spawn(move || {
                    let cfg = variant.train_config(&train.train)?;
                    let trainer = train_policy(train, cfg, seed)?;
                    evaluate(&Controller::Policy(trainer.into_net()), variant.name(), eval)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut results = results.into_iter();
    variants
        .iter()
        .map(|v| {
            let runs = train_seeds
                .iter()
                .map(|&s| Ok((s, results.next().expect("one result per job")?)))
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok(MethodReport::merge(v.name(), &runs, eval.monotonicity_bins))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
    /// Relative band used when comparing "All" scores.
    pub tolerance: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    seeds: usize,
    v_mean: f64,
    v_std: f64,
    l_mean: f64,
    l_std: f64,
    gr_mean: f64,
    gr_std: f64,
    gi_mean: f64,
    gi_std: f64,
    all_mean: f64,
    all_std: f64,
    rho: Option<f64>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// `a` scores at least `b` on "All", allowing `tolerance·|b|` slack.
    pub fn at_least(&self, a: &str, b: &str) -> Option<bool> {
        let (a, b) = (self.method(a)?.all.mean, self.method(b)?.all.mean);
        Some(a >= b - self.tolerance * b.abs())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.methods {
            w.serialize(CsvRow {
                method: &m.method,
                seeds: m.per_seed.len(),
                v_mean: m.v.mean,
                v_std: m.v.std,
                l_mean: m.l.mean,
                l_std: m.l.std,
                gr_mean: m.gr.mean,
                gr_std: m.gr.std,
                gi_mean: m.gi.mean,
                gi_std: m.gi.std,
                all_mean: m.all.mean,
                all_std: m.all.std,
                rho: m.monotonicity.rho(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64, l: f64, gr: f64, gi: f64) -> TraceRow {
        TraceRow { cycle: 0, d_a: 10, d_d: 10, d_e: 10, d_h: 10, cycle_time: 56, total_flow: 0.0, v, l, gr, gi, r: 0.0 }
    }

    #[test]
    fn mean_terms_average_rows() {
        let t = mean_terms(&[row(1.0, 2.0, 0.5, 0.1), row(3.0, 4.0, 0.7, 0.3)]);
        assert_eq!(t, RewardTerms { v: 2.0, l: 3.0, gr: 0.6, gi: 0.2 });
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn ablations_touch_only_kappa_and_schedule() {
        let base = TrainConfig { episodes: 9, ..TrainConfig::default() };
        for a in Ablation::ALL {
            let cfg = a.train_config(&base).unwrap();
            let reset = TrainConfig { kappa: base.kappa, curriculum: None, ..cfg.clone() };
            assert_eq!(reset, base, "{}", a.name());
        }
        assert_eq!(Ablation::WithoutBc.train_config(&base).unwrap().kappa, 0.0);
        let wo_s = Ablation::WithoutAdvanced.train_config(&base).unwrap().schedule().unwrap();
        assert!(!wo_s.teachers().contains(&TeacherKind::ScatsLike));
    }

    #[test]
    fn merge_treats_each_run_as_one_sample() {
        let mk = |all: f64| MethodReport::summarize(
            "x",
            vec![SeedMetrics { seed: 0, terms: RewardTerms { v: all, ..RewardTerms::default() }, all }],
            vec![],
            10,
        );
        let merged = MethodReport::merge("x", &[(1, mk(1.0)), (2, mk(3.0))], 10);
        assert_eq!(merged.all, MetricSummary { mean: 2.0, std: 1.0 });
        assert_eq!(merged.per_seed.len(), 2);
    }

    #[test]
    fn tolerance_band() {
        let mk = |name: &str, all: f64| {
            let mut m = MethodReport::summarize(name, vec![], vec![], 10);
            m.all.mean = all;
            m
        };
        let report = EvalReport { methods: vec![mk("a", 0.99), mk("b", 1.0)], tolerance: 0.02 };
        assert_eq!(report.at_least("a", "b"), Some(true));
        let strict = EvalReport { tolerance: 0.0, ..report };
        assert_eq!(strict.at_least("a", "b"), Some(false));
    }
}
