#![allow(dead_code)]

use guidelight::env::{build_observation, ActionMask, Observation};
use guidelight::nn::{Matrix, NetConfig, PolicyInput, PolicyNet, RecurrentState, Tape, Var};
use guidelight::sim::{PhasePlan, SATURATION_FLOW_VPH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_observation(rng: &mut ChaCha8Rng) -> Observation {
    let flows: [f64; 8] = std::array::from_fn(|_| rng.random_range(0.0..500.0));
    let present: [bool; 8] = std::array::from_fn(|_| rng.random_bool(0.9));
    let d: [u32; 4] = std::array::from_fn(|_| 5 * rng.random_range(2..=18));
    let mut obs = build_observation(&flows, &present, &[SATURATION_FLOW_VPH; 8], &PhasePlan::new(d, 4), None);
    for row in &mut obs.phase {
        row[1] = rng.random_range(0.0..1.0);
        row[2] = rng.random_range(0.0..0.5);
    }
    obs
}

pub fn random_mask(rng: &mut ChaCha8Rng) -> ActionMask {
    std::array::from_fn(|_| [rng.random_bool(0.8), rng.random_bool(0.8), true])
}

pub fn random_state(rng: &mut ChaCha8Rng, hidden: usize) -> RecurrentState {
    RecurrentState {
        h: (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
        c: (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub fn random_input(net: &PolicyNet, batch: usize, rng: &mut ChaCha8Rng) -> PolicyInput {
    let obs: Vec<Observation> = (0..batch).map(|_| random_observation(rng)).collect();
    let masks: Vec<ActionMask> = (0..batch).map(|_| random_mask(rng)).collect();
    let states: Vec<RecurrentState> = (0..batch).map(|_| random_state(rng, net.config().hidden)).collect();
    let refs: Vec<&RecurrentState> = states.iter().collect();
    net.prepare(&obs, &masks, &refs).unwrap()
}

/// Perturbs every parameter by uniform noise so biases and the competition
/// mask are not at their structured initial values.
pub fn randomize(net: &mut PolicyNet, rng: &mut ChaCha8Rng, scale: f64) {
    for t in net.params_mut().tensors_mut() {
        for v in t.value.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// Fixed random readout of every network output into one smooth scalar:
/// weighted allowed log-probs, weighted values, and the new recurrent state.
pub struct Readout {
    pub lp_weights: Vec<Matrix>,
    pub value_weights: Matrix,
    pub h_weights: Matrix,
    pub c_weights: Matrix,
}

impl Readout {
    pub fn random(net: &PolicyNet, input: &PolicyInput, rng: &mut ChaCha8Rng) -> Self {
        let b = input.batch;
        let h = net.config().hidden;
        let mut w = |rows, cols| Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut lp_weights: Vec<Matrix> = (0..4).map(|_| w(b, 3)).collect();
        // Masked log-probs sit near -1e9; their gradient is exactly zero but
        // reading them out would swamp finite differences.
        for (p, m) in lp_weights.iter_mut().enumerate() {
            for r in 0..b {
                for k in 0..3 {
                    if !input.allowed[(r * 4 + p) * 3 + k] {
                        m.set(r, k, 0.0);
                    }
                }
            }
        }
        Self { lp_weights, value_weights: w(b, 1), h_weights: w(b, h), c_weights: w(b, h) }
    }

    pub fn loss(&self, net: &PolicyNet, tape: &mut Tape, input: &PolicyInput) -> Var {
        let out = net.forward(tape, input);
        let mut terms = Vec::new();
        for p in 0..4 {
            let t = tape.mul_const(out.log_probs[p], self.lp_weights[p].clone());
            terms.push(tape.sum(t));
        }
        let v = tape.mul_const(out.value, self.value_weights.clone());
        terms.push(tape.sum(v));
        let h = tape.mul_const(out.h, self.h_weights.clone());
        terms.push(tape.sum(h));
        let c = tape.mul_const(out.c, self.c_weights.clone());
        terms.push(tape.sum(c));
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        total
    }

    pub fn eval(&self, net: &PolicyNet, input: &PolicyInput) -> f64 {
        let mut tape = Tape::new(net.params());
        let l = self.loss(net, &mut tape, input);
        tape.scalar(l)
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

/// Compares reverse-mode gradients with central differences on `per_tensor`
/// random coordinates of every tensor (all coordinates of small tensors).
pub fn grad_check(net: &PolicyNet, input: &PolicyInput, readout: &Readout, per_tensor: usize, eps: f64, rng: &mut ChaCha8Rng) -> GradCheck {
    let mut tape = Tape::new(net.params());
    let loss = readout.loss(net, &mut tape, input);
    let grads = tape.backward(loss).unwrap();

    let mut probe = net.clone();
    let mut result = GradCheck { max_rel_err: 0.0, checked: 0, worst: String::new() };
    for ti in 0..net.params().len() {
        let n = net.params().tensors()[ti].value.len();
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| rng.random_range(0..n)).collect() };
        for k in coords {
            let base = net.params().tensors()[ti].value.data()[k];
            probe.params_mut().tensors_mut()[ti].value.data_mut()[k] = base + eps;
            let up = readout.eval(&probe, input);
            probe.params_mut().tensors_mut()[ti].value.data_mut()[k] = base - eps;
            let down = readout.eval(&probe, input);
            probe.params_mut().tensors_mut()[ti].value.data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.iter().nth(ti).unwrap().map_or(0.0, |g| g.data()[k]);
            let err = relative_error(analytic, numeric);
            result.checked += 1;
            if err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst = format!("{}[{k}] analytic {analytic:e} numeric {numeric:e}", net.params().tensors()[ti].name);
            }
        }
    }
    result
}

pub fn default_net(seed: u64) -> PolicyNet {
    PolicyNet::new(NetConfig { seed, ..NetConfig::default() }).unwrap()
}

/// Physically consistent counters for one cycle of a random valid plan.
pub fn random_cycle_stats(rng: &mut ChaCha8Rng) -> guidelight::sim::CycleStats {
    let bounds = guidelight::sim::PlanBounds::default();
    let plan = loop {
        let d: [u32; 4] = std::array::from_fn(|_| 5 * rng.random_range(2..=18));
        let plan = PhasePlan::new(d, bounds.lost_time);
        if plan.validate(&bounds).is_ok() {
            break plan;
        }
    };
    let movements: [[usize; 2]; 4] = [[0, 4], [2, 6], [1, 5], [3, 7]];
    let mut movement_departures = [0u32; 8];
    for (p, ms) in movements.iter().enumerate() {
        let slots = 2 * plan.durations()[p] / 5;
        for &m in ms {
            movement_departures[m] = rng.random_range(0..=slots);
        }
    }
    let phase_throughput = std::array::from_fn(|p| movements[p].iter().map(|&m| movement_departures[m]).sum());
    let critical_throughput = std::array::from_fn(|p| movements[p].iter().map(|&m| movement_departures[m]).max().unwrap());
    let end_queues: [u32; 8] = std::array::from_fn(|_| rng.random_range(0..60));
    let movement_arrivals = std::array::from_fn(|m| movement_departures[m] + rng.random_range(0..10));
    guidelight::sim::CycleStats {
        plan,
        start_clock: 300,
        phase_throughput,
        critical_throughput,
        movement_departures,
        movement_arrivals,
        end_queues,
    }
}
