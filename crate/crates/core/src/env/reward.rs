use serde::{Deserialize, Serialize};

use crate::sim::{CycleStats, Phase, NUM_PHASES, SATURATION_HEADWAY_S};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub throughput: f64,
    pub queue: f64,
    pub green_utilization: f64,
    pub green_imbalance: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            throughput: 4e-2,
            queue: -1e-3,
            green_utilization: 1.0,
            green_imbalance: -1.0,
        }
    }
}

impl RewardWeights {
    pub fn combine(&self, terms: &RewardTerms) -> f64 {
        self.throughput * terms.v + self.queue * terms.l + self.green_utilization * terms.gr
            + self.green_imbalance * terms.gi
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            throughput: self.throughput * factor,
            queue: self.queue * factor,
            green_utilization: self.green_utilization * factor,
            green_imbalance: self.green_imbalance * factor,
        }
    }
}

/// The four reward factors of one cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    /// Departures per minute of cycle time.
    pub v: f64,
    /// Vehicles queued on all movements when the cycle ends.
    pub l: f64,
    pub gr: f64,
    pub gi: f64,
}

/// Share of each phase's green spent releasing its busier movement.
pub fn phase_green_utilization(stats: &CycleStats) -> [f64; NUM_PHASES] {
    Phase::CYCLE.map(|p| {
        let used = f64::from(stats.critical_throughput[p.index()]) * SATURATION_HEADWAY_S;
        used / f64::from(stats.plan.duration(p))
    })
}

/// Mean and population std. The variance is taken over all pairwise
/// differences, `Σᵢⱼ (xᵢ − xⱼ)² / 2n²`, so identical values give exactly zero.
pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().flat_map(|a| values.iter().map(move |b| (a - b) * (a - b))).sum::<f64>() / (2.0 * n * n);
    (mean, var.sqrt())
}

pub fn reward_terms(stats: &CycleStats) -> RewardTerms {
    let per_phase = phase_green_utilization(stats);
    let (gr, gi) = mean_and_population_std(&per_phase);
    RewardTerms {
        v: f64::from(stats.total_throughput()) * 60.0 / f64::from(stats.cycle_time()),
        l: f64::from(stats.total_queue()),
        gr,
        gi,
    }
}

pub fn compute_reward(stats: &CycleStats, weights: &RewardWeights) -> (f64, RewardTerms) {
    let terms = reward_terms(stats);
    (weights.combine(&terms), terms)
}
