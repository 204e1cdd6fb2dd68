//! FRAP-style policy/value network with a recurrent core.
//!
//! Per movement, each scalar feature goes through its own 1→d MLP and a
//! sigmoid; the concatenation is the movement embedding. Phase embeddings are
//! sums of their two movements. Every ordered phase pair is concatenated,
//! mixed by a shared 1×1 convolution, scaled by the learned 4×4 competition
//! mask and summed over the partner phase. Phase-context features get their
//! own per-feature MLPs; the fused 4×(d_f + d_c) block feeds an LSTM whose
//! hidden state drives four 3-way actor heads and a critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionMask, Observation, MOVEMENT_FEATURES, NUM_OPTIONS, PHASE_FEATURES};
use crate::sim::{Phase, NUM_MOVEMENTS, NUM_PHASES, SATURATION_FLOW_VPH};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{Matrix, NnError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Width of each per-feature movement embedding.
    pub embed_dim: usize,
    /// Channels after the pairwise convolution.
    pub frap_dim: usize,
    /// Width of each per-feature phase-context embedding.
    pub context_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    /// Initialization seed.
    pub seed: u64,
    /// Flow (veh/h) mapped to 1.0 at the input.
    pub flow_unit: f64,
    pub capacity_unit: f64,
    /// Phase duration (s) mapped to 1.0 at the input.
    pub duration_unit: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            frap_dim: 16,
            context_dim: 4,
            hidden: 64,
            head_hidden: 64,
            seed: 7,
            flow_unit: 200.0,
            capacity_unit: SATURATION_FLOW_VPH,
            duration_unit: 30.0,
        }
    }
}

impl NetConfig {
    pub fn tiny() -> Self {
        Self { embed_dim: 2, frap_dim: 4, context_dim: 2, hidden: 8, head_hidden: 8, ..Self::default() }
    }

    pub fn movement_dim(&self) -> usize {
        MOVEMENT_FEATURES * self.embed_dim
    }

    pub fn fused_dim(&self) -> usize {
        NUM_PHASES * (self.frap_dim + PHASE_FEATURES * self.context_dim)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [self.embed_dim, self.frap_dim, self.context_dim, self.hidden, self.head_hidden];
        if dims.contains(&0) {
            return Err(NnError::Shape("network widths must be positive".into()));
        }
        if !(self.flow_unit > 0.0 && self.capacity_unit > 0.0 && self.duration_unit > 0.0) {
            return Err(NnError::Shape("input units must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    hidden: LinearIds,
    out: LinearIds,
}

#[derive(Clone, Debug)]
struct Ids {
    movement: [LinearIds; MOVEMENT_FEATURES],
    conv: LinearIds,
    omega: ParamId,
    context: [LinearIds; PHASE_FEATURES],
    lstm: LinearIds,
    actors: [HeadIds; NUM_PHASES],
    critic: HeadIds,
}

/// Recurrent memory carried between decisions of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// A batch of observations in network units.
#[derive(Clone, Debug)]
pub struct PolicyInput {
    pub batch: usize,
    /// `(batch·8) × 3`
    pub movement: Matrix,
    /// `(batch·4) × 3`
    pub phase: Matrix,
    pub h: Matrix,
    pub c: Matrix,
    /// Flattened `batch × 4 × 3` allowed flags.
    pub allowed: Vec<bool>,
}

/// Handles to the taped outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    /// Per phase, `batch × 3` masked log-probabilities.
    pub log_probs: [Var; NUM_PHASES],
    /// `batch × 1`
    pub value: Var,
    pub h: Var,
    pub c: Var,
    /// `(batch·16) × d_f` pair features after convolution and masking.
    pub pairs: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// One decision of the policy for a single intersection.
#[derive(Clone, Debug)]
pub struct PolicyStep {
    pub actions: [usize; NUM_PHASES],
    pub log_probs: [f64; NUM_PHASES],
    pub probs: [[f64; NUM_OPTIONS]; NUM_PHASES],
    pub value: f64,
    pub next_state: RecurrentState,
}

impl PolicyStep {
    pub fn joint_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    config: NetConfig,
    params: ParamStore,
    ids: Ids,
}

/// Ordered phase pairs `(p, q)`, row `4p + q` of the pair tensor.
pub const PAIR_COUNT: usize = NUM_PHASES * NUM_PHASES;

impl PolicyNet {
    pub fn new(config: NetConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let linear = |p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let w = p.add_uniform(&format!("{name}.w"), fan_in, fan_out, fan_in, rng);
            let b = p.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
            LinearIds { w, b }
        };
        let movement = std::array::from_fn(|k| linear(&mut p, &format!("movement_embed.{k}"), 1, config.embed_dim, &mut rng));
        let conv = linear(&mut p, "frap.conv", 2 * config.movement_dim(), config.frap_dim, &mut rng);
        let omega = p.add("frap.omega", initial_omega());
        let context = std::array::from_fn(|k| linear(&mut p, &format!("context_embed.{k}"), 1, config.context_dim, &mut rng));
        let fused = config.fused_dim();
        let lstm = linear(&mut p, "lstm", fused + config.hidden, 4 * config.hidden, &mut rng);
        let actors = std::array::from_fn(|i| HeadIds {
            hidden: linear(&mut p, &format!("actor.{i}.hidden"), config.hidden, config.head_hidden, &mut rng),
            out: linear(&mut p, &format!("actor.{i}.out"), config.head_hidden, NUM_OPTIONS, &mut rng),
        });
        let critic = HeadIds {
            hidden: linear(&mut p, "critic.hidden", config.hidden, config.head_hidden, &mut rng),
            out: linear(&mut p, "critic.out", config.head_hidden, 1, &mut rng),
        };
        Ok(Self { config, params: p, ids: Ids { movement, conv, omega, context, lstm, actors, critic } })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.config.hidden)
    }

    /// Scales raw observations into network units and stacks them.
    pub fn prepare(
        &self,
        observations: &[Observation],
        masks: &[ActionMask],
        states: &[&RecurrentState],
    ) -> Result<PolicyInput, NnError> {
        let batch = observations.len();
        if batch == 0 || masks.len() != batch || states.len() != batch {
            return Err(NnError::Shape(format!(
                "batch sizes differ: {} observations, {} masks, {} states",
                batch,
                masks.len(),
                states.len()
            )));
        }
        let c = &self.config;
        let mut movement = Vec::with_capacity(batch * NUM_MOVEMENTS * MOVEMENT_FEATURES);
        let mut phase = Vec::with_capacity(batch * NUM_PHASES * PHASE_FEATURES);
        for obs in observations {
            for row in &obs.movement {
                movement.extend_from_slice(&[row[0] / c.flow_unit, row[1] / c.capacity_unit, row[2]]);
            }
            for row in &obs.phase {
                phase.extend_from_slice(&[row[0] / c.duration_unit, row[1], row[2]]);
            }
        }
        let mut h = Vec::with_capacity(batch * c.hidden);
        let mut cell = Vec::with_capacity(batch * c.hidden);
        for s in states {
            if s.h.len() != c.hidden || s.c.len() != c.hidden {
                return Err(NnError::Shape(format!("recurrent state must have width {}", c.hidden)));
            }
            h.extend_from_slice(&s.h);
            cell.extend_from_slice(&s.c);
        }
        let allowed = masks.iter().flat_map(|m| m.iter().flatten().copied()).collect();
        Ok(PolicyInput {
            batch,
            movement: Matrix::from_vec(batch * NUM_MOVEMENTS, MOVEMENT_FEATURES, movement),
            phase: Matrix::from_vec(batch * NUM_PHASES, PHASE_FEATURES, phase),
            h: Matrix::from_vec(batch, c.hidden, h),
            c: Matrix::from_vec(batch, c.hidden, cell),
            allowed,
        })
    }

    fn apply_linear(&self, tape: &mut Tape, x: Var, ids: LinearIds) -> Var {
        let w = tape.param(ids.w);
        let b = tape.param(ids.b);
        tape.linear(x, w, b)
    }

    /// `(batch·8) × 3` scaled features → `(batch·8) × 3d` movement embeddings.
    pub fn embed_movements(&self, tape: &mut Tape, features: Var) -> Var {
        let parts: Vec<Var> = (0..MOVEMENT_FEATURES)
            .map(|k| {
                let col = tape.slice_cols(features, k, 1);
                let z = self.apply_linear(tape, col, self.ids.movement[k]);
                tape.sigmoid(z)
            })
            .collect();
        tape.concat_cols(&parts)
    }

    /// Movement embeddings → (pair tensor `(batch·16) × d_f`, phase output `(batch·4) × d_f`).
    pub fn frap_block(&self, tape: &mut Tape, movements: Var, batch: usize) -> (Var, Var) {
        let (first, second): (Vec<usize>, Vec<usize>) = (0..batch)
            .flat_map(|b| {
                Phase::CYCLE.map(|p| {
                    let [m1, m2] = p.movement_indices();
                    (b * NUM_MOVEMENTS + m1, b * NUM_MOVEMENTS + m2)
                })
            })
            .unzip();
        let e1 = tape.gather_rows(movements, &first);
        let e2 = tape.gather_rows(movements, &second);
        let phases = tape.add(e1, e2);

        let mut left = Vec::with_capacity(batch * PAIR_COUNT);
        let mut right = Vec::with_capacity(batch * PAIR_COUNT);
        for b in 0..batch {
            for p in 0..NUM_PHASES {
                for q in 0..NUM_PHASES {
                    left.push(b * NUM_PHASES + p);
                    right.push(b * NUM_PHASES + q);
                }
            }
        }
        let l = tape.gather_rows(phases, &left);
        let r = tape.gather_rows(phases, &right);
        let pairs = tape.concat_cols(&[l, r]);
        let conv = self.apply_linear(tape, pairs, self.ids.conv);
        let omega = tape.param(self.ids.omega);
        let masked = tape.scale_rows_cyclic(conv, omega);
        let out = tape.segment_sum(masked, NUM_PHASES);
        (masked, out)
    }

    /// `(batch·4) × 3` phase features → `(batch·4) × 3d_c`.
    pub fn embed_phase_context(&self, tape: &mut Tape, features: Var) -> Var {
        let parts: Vec<Var> = (0..PHASE_FEATURES)
            .map(|k| {
                let col = tape.slice_cols(features, k, 1);
                let z = self.apply_linear(tape, col, self.ids.context[k]);
                tape.tanh(z)
            })
            .collect();
        tape.concat_cols(&parts)
    }

    /// One LSTM step; gates ordered input, forget, candidate, output.
    pub fn recurrent_step(&self, tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var) -> (Var, Var) {
        let hdim = self.config.hidden;
        let z_in = tape.concat_cols(&[x, h_prev]);
        let z = self.apply_linear(tape, z_in, self.ids.lstm);
        let gi = tape.slice_cols(z, 0, hdim);
        let gf = tape.slice_cols(z, hdim, hdim);
        let gg = tape.slice_cols(z, 2 * hdim, hdim);
        let go = tape.slice_cols(z, 3 * hdim, hdim);
        let i = tape.sigmoid(gi);
        let f = tape.sigmoid(gf);
        let g = tape.tanh(gg);
        let o = tape.sigmoid(go);
        let keep = tape.mul(f, c_prev);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        (h, c)
    }

    fn head(&self, tape: &mut Tape, h: Var, ids: &HeadIds) -> Var {
        let z = self.apply_linear(tape, h, ids.hidden);
        let a = tape.tanh(z);
        self.apply_linear(tape, a, ids.out)
    }

    /// Raw actor logits (`batch × 3` per phase) and the value column.
    pub fn heads(&self, tape: &mut Tape, h: Var) -> ([Var; NUM_PHASES], Var) {
        let logits = std::array::from_fn(|p| self.head(tape, h, &self.ids.actors[p]));
        let value = self.head(tape, h, &self.ids.critic);
        (logits, value)
    }

    pub fn forward(&self, tape: &mut Tape, input: &PolicyInput) -> PolicyOutput {
        let batch = input.batch;
        let mv = tape.input(input.movement.clone());
        let ph = tape.input(input.phase.clone());
        let h0 = tape.input(input.h.clone());
        let c0 = tape.input(input.c.clone());

        let emb = self.embed_movements(tape, mv);
        let (pairs, frap) = self.frap_block(tape, emb, batch);
        let ctx = self.embed_phase_context(tape, ph);
        let fused = tape.concat_cols(&[frap, ctx]);
        let x = tape.reshape(fused, batch, self.config.fused_dim());
        let (h, c) = self.recurrent_step(tape, x, h0, c0);
        let (logits, value) = self.heads(tape, h);

        let log_probs = std::array::from_fn(|p| {
            let allowed: Vec<bool> = (0..batch)
                .flat_map(|b| {
                    let base = (b * NUM_PHASES + p) * NUM_OPTIONS;
                    input.allowed[base..base + NUM_OPTIONS].to_vec()
                })
                .collect();
            tape.log_softmax(logits[p], Some(&allowed))
        });
        PolicyOutput { log_probs, value, h, c, pairs }
    }

    /// Chooses an action for one intersection and advances its memory.
    pub fn act<R: Rng>(
        &self,
        obs: &Observation,
        mask: &ActionMask,
        state: &RecurrentState,
        selection: ActionSelection,
        rng: &mut R,
    ) -> Result<PolicyStep, NnError> {
        let input = self.prepare(std::slice::from_ref(obs), std::slice::from_ref(mask), &[state])?;
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, &input);
        let mut actions = [0; NUM_PHASES];
        let mut log_probs = [0.0; NUM_PHASES];
        let mut probs = [[0.0; NUM_OPTIONS]; NUM_PHASES];
        for p in 0..NUM_PHASES {
            let lp = tape.value(out.log_probs[p]).row(0).to_vec();
            if lp.iter().any(|x| x.is_nan()) {
                return Err(NnError::NonFinite(format!("log-probabilities of phase {p}")));
            }
            probs[p] = std::array::from_fn(|k| lp[k].exp());
            let k = match selection {
                ActionSelection::Greedy => (0..NUM_OPTIONS)
                    .filter(|&k| mask[p][k])
                    .fold(None, |best: Option<usize>, k| match best {
                        Some(b) if probs[p][b] >= probs[p][k] => Some(b),
                        _ => Some(k),
                    })
                    .expect("keep is never masked"),
                ActionSelection::Sample => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = None;
                    for k in 0..NUM_OPTIONS {
                        if !mask[p][k] {
                            continue;
                        }
                        acc += probs[p][k];
                        chosen = Some(k);
                        if u < acc {
                            break;
                        }
                    }
                    chosen.expect("keep is never masked")
                }
            };
            actions[p] = k;
            log_probs[p] = lp[k];
        }
        let value = tape.value(out.value).get(0, 0);
        let next_state = RecurrentState {
            h: tape.value(out.h).row(0).to_vec(),
            c: tape.value(out.c).row(0).to_vec(),
        };
        Ok(PolicyStep { actions, log_probs, probs, value, next_state })
    }
}

/// Competition mask start: 0.5 on the diagonal, 1.0 elsewhere.
fn initial_omega() -> Matrix {
    let data = (0..PAIR_COUNT)
        .map(|i| if i / NUM_PHASES == i % NUM_PHASES { 0.5 } else { 1.0 })
        .collect();
    Matrix::from_vec(PAIR_COUNT, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_observation;
    use crate::sim::PhasePlan;

    fn obs(flow: f64) -> Observation {
        build_observation(
            &[flow; 8],
            &[true; 8],
            &[SATURATION_FLOW_VPH; 8],
            &PhasePlan::new([30, 15, 25, 20], 4),
            None,
        )
    }

    #[test]
    fn parameter_shapes() {
        let net = PolicyNet::new(NetConfig::default()).unwrap();
        let p = net.params();
        assert_eq!(p.by_name("frap.conv.w").unwrap().shape(), (24, 16));
        assert_eq!(p.by_name("frap.omega").unwrap().shape(), (16, 1));
        assert_eq!(p.by_name("lstm.w").unwrap().shape(), (112 + 64, 256));
        assert_eq!(p.by_name("actor.3.out.w").unwrap().shape(), (64, 3));
        assert_eq!(p.by_name("critic.out.w").unwrap().shape(), (64, 1));
        let omega = p.by_name("frap.omega").unwrap().value.data().to_vec();
        assert_eq!(omega[0], 0.5);
        assert_eq!(omega[1], 1.0);
        assert_eq!(omega[5], 0.5);
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let net = PolicyNet::new(NetConfig::default()).unwrap();
        let o = [obs(100.0), obs(300.0)];
        let mut mask = [[true; 3]; 4];
        mask[2][0] = false;
        let s = net.initial_state();
        let input = net.prepare(&o, &[mask, [[true; 3]; 4]], &[&s, &s]).unwrap();
        let mut tape = Tape::new(net.params());
        let out = net.forward(&mut tape, &input);
        assert_eq!(tape.value(out.pairs).shape(), (2 * 16, 16));
        assert_eq!(tape.value(out.value).shape(), (2, 1));
        for p in 0..4 {
            let lp = tape.value(out.log_probs[p]);
            assert_eq!(lp.shape(), (2, 3));
            for r in 0..2 {
                let total: f64 = lp.row(r).iter().map(|x| x.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(tape.value(out.log_probs[2]).get(0, 0).exp(), 0.0);
    }

    #[test]
    fn masked_options_are_never_sampled() {
        let net = PolicyNet::new(NetConfig::tiny()).unwrap();
        let mut mask = [[true; 3]; 4];
        mask[0] = [false, false, true];
        mask[1][1] = false;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = net.initial_state();
        for _ in 0..200 {
            let step = net.act(&obs(200.0), &mask, &s, ActionSelection::Sample, &mut rng).unwrap();
            assert_eq!(step.actions[0], 2);
            assert_ne!(step.actions[1], 1);
        }
    }

    #[test]
    fn recurrent_state_changes_between_steps() {
        let net = PolicyNet::new(NetConfig::tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = net.initial_state();
        let a = net.act(&obs(200.0), &[[true; 3]; 4], &s0, ActionSelection::Greedy, &mut rng).unwrap();
        assert_ne!(a.next_state, s0);
        let b = net.act(&obs(200.0), &[[true; 3]; 4], &s0, ActionSelection::Greedy, &mut rng).unwrap();
        assert_eq!(a.next_state, b.next_state);
    }
}
