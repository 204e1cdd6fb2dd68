//! Turning a cycle length into four quantized phase durations.

use crate::sim::{PlanBounds, DURATION_STEP_S, NUM_PHASES};

use super::TeacherError;

/// Nearest multiple of 5, halves rounded up. Values within float noise of a
/// half step count as the half, so `162.49999999999997` rounds like `162.5`.
pub fn round_to_step(seconds: f64) -> u32 {
    let step = f64::from(DURATION_STEP_S);
    ((seconds / step + 0.5 + 1e-9).floor().max(0.0) as u32) * DURATION_STEP_S
}

/// Green budget (sum of phase durations) for a target cycle, clamped to what
/// a valid plan can hold.
pub fn green_budget_for_cycle(cycle: f64, bounds: &PlanBounds) -> u32 {
    let (lo, hi) = bounds.green_budget_range();
    round_to_step(cycle - f64::from(bounds.total_lost_time())).clamp(lo, hi)
}

/// Continuous split of `budget` seconds: every phase starts at `min_green` and
/// the remainder is shared in proportion to `weights`, capped at `max_green`
/// with the excess handed on to the uncapped phases.
pub fn ideal_split(budget: f64, weights: [f64; NUM_PHASES], bounds: &PlanBounds) -> [f64; NUM_PHASES] {
    let min = f64::from(bounds.min_green);
    let max = f64::from(bounds.max_green);
    let weights = if weights.iter().all(|w| *w <= 0.0) {
        [1.0; NUM_PHASES]
    } else {
        weights.map(|w| w.max(0.0))
    };

    let mut out = [min; NUM_PHASES];
    let mut capped = [false; NUM_PHASES];
    let mut remaining = budget - min * NUM_PHASES as f64;
    // Each pass either places all remaining time or caps at least one phase.
    for _ in 0..NUM_PHASES {
        if remaining <= 0.0 {
            break;
        }
        let mut total_w: f64 = (0..NUM_PHASES).filter(|&p| !capped[p]).map(|p| weights[p]).sum();
        let uncapped = (0..NUM_PHASES).filter(|&p| !capped[p]).count();
        if uncapped == 0 {
            break;
        }
        let equal = total_w <= 0.0;
        if equal {
            total_w = uncapped as f64;
        }
        let mut overflow = 0.0;
        for p in 0..NUM_PHASES {
            if capped[p] {
                continue;
            }
            let w = if equal { 1.0 } else { weights[p] };
            out[p] += remaining * w / total_w;
            if out[p] >= max {
                overflow += out[p] - max;
                out[p] = max;
                capped[p] = true;
            }
        }
        remaining = overflow;
    }
    out
}

/// Quantizes an ideal split to multiples of 5 that sum exactly to `budget`
/// (largest-remainder rounding, ties to the earlier phase).
pub fn split_green(
    budget: u32,
    weights: [f64; NUM_PHASES],
    bounds: &PlanBounds,
) -> Result<[u32; NUM_PHASES], TeacherError> {
    let lo = bounds.min_green * NUM_PHASES as u32;
    let hi = bounds.max_green * NUM_PHASES as u32;
    if budget % DURATION_STEP_S != 0 || budget < lo || budget > hi {
        return Err(TeacherError::InfeasibleBudget { budget, lo, hi });
    }
    let ideal = ideal_split(f64::from(budget), weights, bounds);
    let step = f64::from(DURATION_STEP_S);
    let mut out = ideal.map(|x| {
        let floored = ((x / step).floor() as u32) * DURATION_STEP_S;
        floored.clamp(bounds.min_green, bounds.max_green)
    });
    let mut order: Vec<usize> = (0..NUM_PHASES).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - f64::from(out[a]);
        let rb = ideal[b] - f64::from(out[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: u32 = out.iter().sum();
    while assigned < budget {
        let before = assigned;
        for &p in &order {
            if assigned >= budget {
                break;
            }
            if out[p] + DURATION_STEP_S <= bounds.max_green {
                out[p] += DURATION_STEP_S;
                assigned += DURATION_STEP_S;
            }
        }
        if assigned == before {
            return Err(TeacherError::InfeasibleBudget { budget, lo, hi });
        }
    }
    while assigned > budget {
        // Only reachable through float noise in the ideal split.
        let p = order
            .iter()
            .rev()
            .copied()
            .find(|&p| out[p] >= bounds.min_green + DURATION_STEP_S)
            .ok_or(TeacherError::InfeasibleBudget { budget, lo, hi })?;
        out[p] -= DURATION_STEP_S;
        assigned -= DURATION_STEP_S;
    }
    Ok(out)
}
