use serde::{Deserialize, Serialize};

use crate::env::{Observation, NUM_OPTIONS};
use crate::nn::{Adam, Matrix, NnError, PolicyInput, PolicyNet, RecurrentState, Tape, Var};
use crate::sim::NUM_PHASES;
use crate::teachers::LABEL_KEEP;

use super::rollout::Record;
use super::TrainError;

/// Generalized advantage estimates and the matching returns; the value after
/// the last step is taken as zero.
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    if rewards.is_empty() {
        return Err(TrainError::EmptyTrajectory);
    }
    if rewards.len() != values.len() {
        return Err(TrainError::Config(format!("{} rewards but {} values", rewards.len(), values.len())));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Rescales to zero mean and unit (population) standard deviation.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.is_empty() {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / (std + 1e-8);
    }
}

/// Teacher labels with masked targets replaced by "keep"; returns how many
/// were replaced.
pub fn effective_labels(labels: &[u8; NUM_PHASES], mask: &[[bool; NUM_OPTIONS]; NUM_PHASES]) -> ([usize; NUM_PHASES], usize) {
    let mut remapped = 0;
    let out = std::array::from_fn(|p| {
        let l = labels[p] as usize;
        if mask[p][l] {
            l
        } else {
            remapped += 1;
            LABEL_KEEP as usize
        }
    });
    (out, remapped)
}

/// A minibatch in the layout the losses consume.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: PolicyInput,
    pub actions: Vec<[usize; NUM_PHASES]>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub labels: Vec<[usize; NUM_PHASES]>,
    pub remapped_labels: usize,
}

impl Batch {
    pub fn from_records(
        net: &PolicyNet,
        records: &[&Record],
        advantages: &[f64],
        value_targets: &[f64],
    ) -> Result<Self, TrainError> {
        let obs: Vec<Observation> = records.iter().map(|r| r.observation).collect();
        let masks: Vec<_> = records.iter().map(|r| r.mask).collect();
        let states: Vec<&RecurrentState> = records.iter().map(|r| &r.state).collect();
        let input = net.prepare(&obs, &masks, &states)?;
        let mut remapped_labels = 0;
        let labels = records
            .iter()
            .map(|r| {
                let (l, n) = effective_labels(&r.labels, &r.mask);
                remapped_labels += n;
                l
            })
            .collect();
        Ok(Self {
            input,
            actions: records.iter().map(|r| r.actions).collect(),
            old_log_probs: records.iter().map(|r| r.joint_log_prob()).collect(),
            advantages: advantages.to_vec(),
            value_targets: value_targets.to_vec(),
            labels,
            remapped_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.input.batch
    }

    pub fn is_empty(&self) -> bool {
        self.input.batch == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub clip: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub actor: Var,
    pub critic: Var,
    pub bc: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub actor: f64,
    pub critic: f64,
    pub bc: f64,
    pub total: f64,
}

fn column(values: &[f64]) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.to_vec())
}

fn picks(tape: &mut Tape, log_probs: &[Var; NUM_PHASES], choice: &[[usize; NUM_PHASES]]) -> [Var; NUM_PHASES] {
    std::array::from_fn(|p| {
        let cols: Vec<usize> = choice.iter().map(|c| c[p]).collect();
        tape.pick(log_probs[p], &cols)
    })
}

fn add_all(tape: &mut Tape, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    acc
}

/// Clipped-surrogate actor loss and squared-error critic loss.
pub fn ppo_losses(tape: &mut Tape, log_probs: &[Var; NUM_PHASES], value: Var, batch: &Batch, clip: f64) -> (Var, Var) {
    let chosen = picks(tape, log_probs, &batch.actions);
    let joint = add_all(tape, &chosen);
    let neg_old = column(&batch.old_log_probs.iter().map(|x| -x).collect::<Vec<_>>());
    let log_ratio = tape.add_const(joint, &neg_old);
    let ratio = tape.exp(log_ratio);
    let adv = column(&batch.advantages);
    let surr1 = tape.mul_const(ratio, adv.clone());
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let surr2 = tape.mul_const(clipped, adv);
    let surr = tape.min(surr1, surr2);
    let mean = tape.mean(surr);
    let actor = tape.scale(mean, -1.0);

    let neg_target = column(&batch.value_targets.iter().map(|x| -x).collect::<Vec<_>>());
    let err = tape.add_const(value, &neg_target);
    let sq = tape.square(err);
    let critic = tape.mean(sq);
    (actor, critic)
}

/// Cross-entropy between the masked policy and the teacher labels, averaged
/// over samples and phases.
pub fn bc_loss(tape: &mut Tape, log_probs: &[Var; NUM_PHASES], batch: &Batch) -> Var {
    let chosen = picks(tape, log_probs, &batch.labels);
    let joint = add_all(tape, &chosen);
    let mean = tape.mean(joint);
    tape.scale(mean, -1.0 / NUM_PHASES as f64)
}

/// Builds `α·L_actor + β·L_critic + κ·L_BC` on the tape. With `κ = 0` the
/// cloning term is still evaluated for reporting but left out of the total.
pub fn build_losses(net: &PolicyNet, tape: &mut Tape, batch: &Batch, w: &LossWeights) -> LossVars {
    let out = net.forward(tape, &batch.input);
    let (actor, critic) = ppo_losses(tape, &out.log_probs, out.value, batch, w.clip);
    let bc = bc_loss(tape, &out.log_probs, batch);
    let a = tape.scale(actor, w.alpha);
    let c = tape.scale(critic, w.beta);
    let mut total = tape.add(a, c);
    if w.kappa != 0.0 {
        let b = tape.scale(bc, w.kappa);
        total = tape.add(total, b);
    }
    LossVars { actor, critic, bc, total }
}

/// One gradient step on the combined loss. A non-finite loss or gradient
/// leaves the parameters untouched.
pub fn update(net: &mut PolicyNet, adam: &mut Adam, batch: &Batch, w: &LossWeights) -> Result<LossReport, TrainError> {
    let (report, grads) = {
        let mut tape = Tape::new(net.params());
        let vars = build_losses(net, &mut tape, batch, w);
        let report = LossReport {
            actor: tape.scalar(vars.actor),
            critic: tape.scalar(vars.critic),
            bc: tape.scalar(vars.bc),
            total: tape.scalar(vars.total),
        };
        if !report.total.is_finite() || !report.actor.is_finite() || !report.critic.is_finite() {
            return Err(TrainError::NonFinite(format!("loss {report:?}")));
        }
        (report, tape.backward(vars.total)?)
    };
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(TrainError::Nn(NnError::NonFinite("gradients".into())));
    }
    let params = net.params_mut();
    params.zero_grad();
    params.accumulate(&grads)?;
    adam.step(params)?;
    Ok(report)
}

/// Loss components without touching parameters.
pub fn evaluate_losses(net: &PolicyNet, batch: &Batch, w: &LossWeights) -> LossReport {
    let mut tape = Tape::new(net.params());
    let vars = build_losses(net, &mut tape, batch, w);
    LossReport {
        actor: tape.scalar(vars.actor),
        critic: tape.scalar(vars.critic),
        bc: tape.scalar(vars.bc),
        total: tape.scalar(vars.total),
    }
}
