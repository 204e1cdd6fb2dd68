//! The taped policy forward pass against a plain scalar re-implementation
//! that reads the parameters by name.

mod common;

use guidelight::env::{ActionMask, Observation};
use guidelight::nn::{
    checkpoint, ActionSelection, Matrix, NetConfig, PolicyNet, RecurrentState, Tape,
};

const PHASE_MOVEMENTS: [[usize; 2]; 4] = [[0, 4], [2, 6], [1, 5], [3, 7]];

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn param<'a>(net: &'a PolicyNet, name: &str) -> &'a Matrix {
    &net.params().by_name(name).unwrap_or_else(|| panic!("missing {name}")).value
}

/// `x · W + b` for a row vector.
fn affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols()).map(|j| b.get(0, j) + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>()).collect()
}

fn layer(net: &PolicyNet, name: &str, x: &[f64]) -> Vec<f64> {
    affine(x, param(net, &format!("{name}.w")), param(net, &format!("{name}.b")))
}

struct Reference {
    log_probs: [Vec<f64>; 4],
    value: f64,
    h: Vec<f64>,
    c: Vec<f64>,
}

fn reference(net: &PolicyNet, obs: &Observation, mask: &ActionMask, state: &RecurrentState) -> Reference {
    let cfg = net.config();
    let units = [cfg.flow_unit, cfg.capacity_unit, 1.0];
    let emb: Vec<Vec<f64>> = obs
        .movement
        .iter()
        .map(|row| {
            (0..3)
                .flat_map(|k| layer(net, &format!("movement_embed.{k}"), &[row[k] / units[k]]).into_iter().map(sig))
                .collect()
        })
        .collect();
    let phase: Vec<Vec<f64>> =
        PHASE_MOVEMENTS.iter().map(|[a, b]| emb[*a].iter().zip(&emb[*b]).map(|(x, y)| x + y).collect()).collect();
    let omega = param(net, "frap.omega");
    let mut fused = Vec::new();
    for p in 0..4 {
        let mut acc = vec![0.0; cfg.frap_dim];
        for q in 0..4 {
            let pair: Vec<f64> = phase[p].iter().chain(&phase[q]).copied().collect();
            let y = layer(net, "frap.conv", &pair);
            let w = omega.get(4 * p + q, 0);
            for (a, v) in acc.iter_mut().zip(y) {
                *a += w * v;
            }
        }
        fused.extend(acc);
        let pu = [cfg.duration_unit, 1.0, 1.0];
        for k in 0..3 {
            fused.extend(layer(net, &format!("context_embed.{k}"), &[obs.phase[p][k] / pu[k]]).into_iter().map(f64::tanh));
        }
    }
    let n = cfg.hidden;
    let z_in: Vec<f64> = fused.iter().chain(&state.h).copied().collect();
    let z = layer(net, "lstm", &z_in);
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for j in 0..n {
        let (i, f, g, o) = (sig(z[j]), sig(z[n + j]), z[2 * n + j].tanh(), sig(z[3 * n + j]));
        c[j] = f * state.c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    let head = |name: &str| {
        let a: Vec<f64> = layer(net, &format!("{name}.hidden"), &h).into_iter().map(f64::tanh).collect();
        layer(net, &format!("{name}.out"), &a)
    };
    let log_probs = std::array::from_fn(|p| {
        let logits = head(&format!("actor.{p}"));
        let allowed: Vec<usize> = (0..3).filter(|&k| mask[p][k]).collect();
        let m = allowed.iter().map(|&k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + allowed.iter().map(|&k| (logits[k] - m).exp()).sum::<f64>().ln();
        (0..3).map(|k| if mask[p][k] { logits[k] - lse } else { f64::NEG_INFINITY }).collect()
    });
    Reference { log_probs, value: head("critic")[0], h, c }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

fn check_batch(net: &PolicyNet, seed: u64, batch: usize) {
    let mut rng = common::rng(seed);
    let obs: Vec<Observation> = (0..batch).map(|_| common::random_observation(&mut rng)).collect();
    let masks: Vec<ActionMask> = (0..batch).map(|_| common::random_mask(&mut rng)).collect();
    let states: Vec<RecurrentState> = (0..batch).map(|_| common::random_state(&mut rng, net.config().hidden)).collect();
    let refs: Vec<&RecurrentState> = states.iter().collect();
    let input = net.prepare(&obs, &masks, &refs).unwrap();
    let mut tape = Tape::new(net.params());
    let out = net.forward(&mut tape, &input);
    for b in 0..batch {
        let r = reference(net, &obs[b], &masks[b], &states[b]);
        for p in 0..4 {
            let row = tape.value(out.log_probs[p]).row(b).to_vec();
            for k in 0..3 {
                if masks[b][p][k] {
                    assert!(close(row[k], r.log_probs[p][k]), "sample {b} phase {p} option {k}: {} vs {}", row[k], r.log_probs[p][k]);
                } else {
                    assert!(row[k].exp() < 1e-300, "masked option kept mass");
                }
            }
        }
        assert!(close(tape.value(out.value).get(b, 0), r.value));
        for j in 0..net.config().hidden {
            assert!(close(tape.value(out.h).get(b, j), r.h[j]));
            assert!(close(tape.value(out.c).get(b, j), r.c[j]));
        }
    }
}

#[test]
fn default_net_matches_reference() {
    let mut net = common::default_net(3);
    check_batch(&net, 10, 5);
    let mut rng = common::rng(11);
    common::randomize(&mut net, &mut rng, 0.3);
    check_batch(&net, 12, 5);
}

#[test]
fn tiny_net_matches_reference() {
    let mut net = PolicyNet::new(NetConfig::tiny()).unwrap();
    let mut rng = common::rng(21);
    common::randomize(&mut net, &mut rng, 0.5);
    check_batch(&net, 22, 9);
}

#[test]
fn act_follows_forward_and_respects_masks() {
    let net = common::default_net(5);
    let mut rng = common::rng(31);
    for _ in 0..50 {
        let obs = common::random_observation(&mut rng);
        let mask = common::random_mask(&mut rng);
        let state = common::random_state(&mut rng, net.config().hidden);
        let r = reference(&net, &obs, &mask, &state);
        let greedy = net.act(&obs, &mask, &state, ActionSelection::Greedy, &mut rng).unwrap();
        let sampled = net.act(&obs, &mask, &state, ActionSelection::Sample, &mut rng).unwrap();
        for p in 0..4 {
            assert!(mask[p][greedy.actions[p]] && mask[p][sampled.actions[p]]);
            let best = (0..3).filter(|&k| mask[p][k]).map(|k| r.log_probs[p][k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(close(greedy.log_probs[p], best));
            assert!(close(sampled.log_probs[p], r.log_probs[p][sampled.actions[p]]));
        }
        assert!(close(greedy.value, r.value));
        assert_eq!(greedy.next_state, sampled.next_state);
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut net = common::default_net(8);
    let mut rng = common::rng(41);
    common::randomize(&mut net, &mut rng, 0.2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    checkpoint::save(&net, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.params().checksum(), net.params().checksum());
    let obs = common::random_observation(&mut rng);
    let mask = common::random_mask(&mut rng);
    let state = net.initial_state();
    let a = net.act(&obs, &mask, &state, ActionSelection::Greedy, &mut rng).unwrap();
    let b = back.act(&obs, &mask, &state, ActionSelection::Greedy, &mut rng).unwrap();
    assert_eq!(a.log_probs, b.log_probs);
    assert_eq!(a.value, b.value);
}
