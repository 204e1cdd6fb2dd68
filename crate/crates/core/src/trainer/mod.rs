//! PPO with a behavior-cloning term whose teacher follows a curriculum.

mod curriculum;
mod loss;
mod rollout;

pub use curriculum::{curriculum_select, Curriculum, CurriculumStage};
pub use loss::{
    bc_loss, build_losses, effective_labels, evaluate_losses, gae_advantages, normalize, ppo_losses, update, Batch,
    LossReport, LossVars, LossWeights,
};
pub use rollout::{collect_episode, Record, Trajectory};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, TrafficEnv};
use crate::nn::{ActionSelection, Adam, AdamConfig, NetConfig, NnError, PolicyNet};
use crate::sim::FlowProfile;
use crate::teachers::{Teacher, TeacherConfig, TeacherError, TeacherKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub optimizer: AdamConfig,
    /// Explicit schedule; `None` means linear/logistic/SCATS-like over thirds.
    pub curriculum: Option<Curriculum>,
    /// Independent intersections rolled out per episode.
    pub corridor_size: usize,
    /// Critic regresses standardized returns using running statistics.
    pub normalize_values: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 900,
            alpha: 1.0,
            beta: 1.0,
            kappa: 0.5,
            gamma: 0.95,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            optimizer: AdamConfig::default(),
            curriculum: None,
            corridor_size: 1,
            normalize_values: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.kappa >= 0.0) {
            return bad("alpha, beta and kappa must be >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip ratio must lie in (0, 1)");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.corridor_size == 0 {
            return bad("epochs, minibatch and corridor_size must be positive");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<Curriculum, TrainError> {
        match &self.curriculum {
            Some(c) => Ok(c.clone()),
            None => Curriculum::default_for(self.episodes.max(3)),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, kappa: self.kappa, clip: self.clip }
    }
}

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            (self.m2 / self.count as f64).sqrt().max(1e-6)
        }
    }
}

/// One row per gradient step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub update: usize,
    pub teacher: TeacherKind,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub bc_loss: f64,
    pub total_loss: f64,
    pub mean_reward: f64,
}

pub fn write_log<W: Write>(rows: &[LogRow], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_log(rows: &[LogRow], path: &Path) -> Result<(), TrainError> {
    write_log(rows, std::fs::File::create(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub teacher: TeacherKind,
    pub decisions: usize,
    pub mean_reward: f64,
    pub losses: Vec<LossReport>,
}

/// Mean cloning loss of `net` over a recorded trajectory.
pub fn trajectory_bc_loss(net: &PolicyNet, trajectory: &Trajectory) -> Result<f64, TrainError> {
    if trajectory.is_empty() {
        return Err(TrainError::EmptyTrajectory);
    }
    let records: Vec<&Record> = trajectory.records.iter().collect();
    let zeros = vec![0.0; records.len()];
    let batch = Batch::from_records(net, &records, &zeros, &zeros)?;
    let w = LossWeights { alpha: 0.0, beta: 0.0, kappa: 1.0, clip: 0.2 };
    Ok(evaluate_losses(net, &batch, &w).bc)
}

pub struct Trainer {
    config: TrainConfig,
    schedule: Curriculum,
    env_config: EnvConfig,
    teacher_config: TeacherConfig,
    net: PolicyNet,
    adam: Adam,
    value_stats: RunningStats,
    rng: ChaCha8Rng,
    updates: usize,
    remapped_labels: usize,
    log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(
        net_config: NetConfig,
        config: TrainConfig,
        env_config: EnvConfig,
        teacher_config: TeacherConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        env_config.validate()?;
        let net = PolicyNet::new(net_config)?;
        Self::with_net(net, config, env_config, teacher_config)
    }

    pub fn with_net(
        net: PolicyNet,
        config: TrainConfig,
        env_config: EnvConfig,
        teacher_config: TeacherConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = Adam::new(config.optimizer, net.params());
        Ok(Self {
            schedule: config.schedule()?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            env_config,
            teacher_config,
            net,
            adam,
            value_stats: RunningStats::default(),
            updates: 0,
            remapped_labels: 0,
            log: Vec::new(),
        })
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn into_net(self) -> PolicyNet {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Curriculum {
        &self.schedule
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Teacher labels that pointed at masked options and were replaced.
    pub fn remapped_labels(&self) -> usize {
        self.remapped_labels
    }

    pub fn teacher(&self, kind: TeacherKind) -> Result<Teacher, TrainError> {
        Ok(Teacher::new(kind, self.teacher_config.clone(), self.env_config.bounds)?)
    }

    /// Collects one episode per corridor intersection and updates on them.
    pub fn run_episode(&mut self, episode: usize, profiles: &[FlowProfile]) -> Result<EpisodeSummary, TrainError> {
        if profiles.is_empty() {
            return Err(TrainError::Config("no flow profiles to train on".into()));
        }
        let kind = self.schedule.select(episode);
        let teacher = self.teacher(kind)?;
        let mut trajectories = Vec::with_capacity(self.config.corridor_size);
        for _ in 0..self.config.corridor_size {
            let profile = &profiles[self.rng.random_range(0..profiles.len())];
            let seed: u64 = self.rng.random();
            let mut env = TrafficEnv::new(self.env_config.clone(), profile.clone())?;
            let t = collect_episode(&mut env, &self.net, &teacher, seed, ActionSelection::Sample, &mut self.rng)?;
            if t.is_empty() {
                return Err(TrainError::EmptyTrajectory);
            }
            trajectories.push(t);
        }
        self.learn(episode, kind, &trajectories)
    }

    /// PPO epochs over freshly collected trajectories.
    pub fn learn(&mut self, episode: usize, kind: TeacherKind, trajectories: &[Trajectory]) -> Result<EpisodeSummary, TrainError> {
        let c = &self.config;
        let (mu, sigma) = if c.normalize_values { (self.value_stats.mean, self.value_stats.std()) } else { (0.0, 1.0) };
        let mut records: Vec<&Record> = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for t in trajectories {
            let values: Vec<f64> = t.records.iter().map(|r| r.value * sigma + mu).collect();
            let (adv, ret) = gae_advantages(&t.rewards(), &values, c.gamma, c.lambda)?;
            advantages.extend(adv);
            returns.extend(ret);
            records.extend(t.records.iter());
        }
        if c.normalize_values {
            for &r in &returns {
                self.value_stats.push(r);
            }
        }
        let (mu, sigma) = if c.normalize_values { (self.value_stats.mean, self.value_stats.std()) } else { (0.0, 1.0) };
        let targets: Vec<f64> = returns.iter().map(|r| (r - mu) / sigma).collect();
        normalize(&mut advantages);

        let mean_reward = records.iter().map(|r| r.reward).sum::<f64>() / records.len() as f64;
        let weights = c.loss_weights();
        let (epochs, minibatch) = (c.epochs, c.minibatch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut losses = Vec::new();
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(minibatch) {
                let recs: Vec<&Record> = chunk.iter().map(|&i| records[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let tgt: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                let batch = Batch::from_records(&self.net, &recs, &adv, &tgt)?;
                let report = update(&mut self.net, &mut self.adam, &batch, &weights)?;
                self.remapped_labels += batch.remapped_labels;
                self.log.push(LogRow {
                    episode,
                    update: self.updates,
                    teacher: kind,
                    actor_loss: report.actor,
                    critic_loss: report.critic,
                    bc_loss: report.bc,
                    total_loss: report.total,
                    mean_reward,
                });
                self.updates += 1;
                losses.push(report);
            }
        }
        Ok(EpisodeSummary { episode, teacher: kind, decisions: records.len(), mean_reward, losses })
    }

    /// Runs every configured episode; `on_episode` sees each summary and may
    /// write checkpoints.
    pub fn train(
        &mut self,
        profiles: &[FlowProfile],
        mut on_episode: impl FnMut(&Trainer, &EpisodeSummary) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        for episode in 0..self.config.episodes {
            let summary = self.run_episode(episode, profiles)?;
            on_episode(self, &summary)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_match_direct_formula() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.0];
        let mut s = RunningStats::default();
        xs.iter().for_each(|&x| s.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { clip: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { kappa: -0.1, ..TrainConfig::default() }.validate().is_err());
    }
}
