use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "value")]
pub enum Monotonicity {
    Rho(f64),
    /// All observations share one flow level.
    NotApplicable,
    /// Fewer populated flow bins than required.
    InsufficientBins { populated: usize, required: usize },
}

impl Monotonicity {
    pub fn rho(&self) -> Option<f64> {
        match self {
            Monotonicity::Rho(r) => Some(*r),
            _ => None,
        }
    }
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with midranks; zero when either side has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (midranks(x), midranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Mean cycle per equal-width flow bin, skipping empty bins.
pub fn binned_means(pairs: &[(f64, f64)], bins: usize) -> Option<Vec<(usize, f64)>> {
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if pairs.is_empty() || bins == 0 || !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / bins as f64;
    let mut sums = vec![(0.0, 0usize); bins];
    for &(flow, cycle) in pairs {
        let b = (((flow - lo) / width) as usize).min(bins - 1);
        sums[b].0 += cycle;
        sums[b].1 += 1;
    }
    Some(
        sums.iter()
            .enumerate()
            .filter(|(_, s)| s.1 > 0)
            .map(|(b, s)| (b, s.0 / s.1 as f64))
            .collect(),
    )
}

/// Rank correlation between flow level and mean cycle time over `bins`
/// equal-width flow bins; every bin must hold data.
pub fn monotonicity_stat(pairs: &[(f64, f64)], bins: usize) -> Monotonicity {
    let Some(means) = binned_means(pairs, bins) else {
        return Monotonicity::NotApplicable;
    };
    if means.len() < bins {
        return Monotonicity::InsufficientBins { populated: means.len(), required: bins };
    }
    let x: Vec<f64> = means.iter().map(|m| m.0 as f64).collect();
    let y: Vec<f64> = means.iter().map(|m| m.1).collect();
    Monotonicity::Rho(spearman(&x, &y))
}
