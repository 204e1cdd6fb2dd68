//! Synthetic demand: a base daily shape, perturbed copies of it, and the
//! staircase profile used to probe the cycle-flow relation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::sim::{FlowProfile, MovementRates, ProfileError, NUM_MOVEMENTS};

/// Movement split of the total intersection flow, m1..m8.
pub const DEFAULT_SHARES: [f64; NUM_MOVEMENTS] = [0.17, 0.15, 0.08, 0.10, 0.17, 0.15, 0.08, 0.10];

/// Total flow (veh/h) per 5-minute bin over two hours: off-peak, climb, peak, recovery.
pub const DEFAULT_LEVELS: [f64; 24] = [
    500.0, 550.0, 600.0, 650.0, 700.0, 800.0, 900.0, 1000.0, 1100.0, 1200.0, 1300.0, 1450.0, 1600.0, 1750.0, 1900.0,
    2050.0, 2150.0, 2150.0, 2050.0, 1900.0, 1700.0, 1500.0, 1300.0, 1100.0,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseShape {
    pub bin_width_s: u32,
    pub levels: Vec<f64>,
    pub shares: [f64; NUM_MOVEMENTS],
}

impl Default for BaseShape {
    fn default() -> Self {
        Self { bin_width_s: 300, levels: DEFAULT_LEVELS.to_vec(), shares: DEFAULT_SHARES }
    }
}

impl BaseShape {
    pub fn profile(&self) -> Result<FlowProfile, ProfileError> {
        let bins = self.levels.iter().map(|&total| self.shares.map(|s| s * total)).collect();
        FlowProfile::new(self.bin_width_s, bins)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternNoise {
    /// Log-scale std of one multiplier shared by a whole pattern.
    pub level_sigma: f64,
    /// Log-scale std of the independent per-bin, per-movement multipliers.
    pub bin_sigma: f64,
    /// Largest shift, in bins, of the time warp `t + a·sin(πt/T)`.
    pub warp_bins: f64,
}

impl Default for PatternNoise {
    fn default() -> Self {
        Self { level_sigma: 0.15, bin_sigma: 0.1, warp_bins: 1.5 }
    }
}

impl PatternNoise {
    pub fn none() -> Self {
        Self { level_sigma: 0.0, bin_sigma: 0.0, warp_bins: 0.0 }
    }
}

/// Mean-one lognormal multiplier.
fn lognormal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// Base rates at fractional bin position `x` by linear interpolation.
fn interpolate(bins: &[MovementRates], x: f64) -> MovementRates {
    let last = bins.len() - 1;
    let x = x.clamp(0.0, last as f64);
    let i = (x.floor() as usize).min(last);
    let j = (i + 1).min(last);
    let f = x - i as f64;
    std::array::from_fn(|m| bins[i][m] * (1.0 - f) + bins[j][m] * f)
}

/// `count` perturbed copies of `base`, reproducible from `seed`.
pub fn generate_flow_patterns(
    base: &FlowProfile,
    count: usize,
    seed: u64,
    noise: &PatternNoise,
) -> Result<Vec<FlowProfile>, ProfileError> {
    if count == 0 {
        return Err(ProfileError::Invalid("pattern count must be at least 1".into()));
    }
    if noise.level_sigma < 0.0 || noise.bin_sigma < 0.0 || noise.warp_bins < 0.0 {
        return Err(ProfileError::Invalid("noise parameters must be >= 0".into()));
    }
    let bins = base.bins();
    let n = bins.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let level = lognormal(&mut rng, noise.level_sigma);
            let a = if noise.warp_bins > 0.0 { rng.random_range(-noise.warp_bins..=noise.warp_bins) } else { 0.0 };
            let rates = (0..n)
                .map(|i| {
                    let t = i as f64;
                    let warped = t + a * (std::f64::consts::PI * t / n as f64).sin();
                    let src = if a == 0.0 { bins[i] } else { interpolate(bins, warped) };
                    std::array::from_fn(|m| (src[m] * level * lognormal(&mut rng, noise.bin_sigma)).max(0.0))
                })
                .collect();
            FlowProfile::new(base.bin_width(), rates)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Staircase {
    /// Total flow (veh/h) held on each step; the profile climbs through
    /// these and then walks back down.
    pub levels: Vec<f64>,
    pub hold_s: u32,
    pub shares: [f64; NUM_MOVEMENTS],
}

impl Default for Staircase {
    fn default() -> Self {
        Self {
            levels: (0..11).map(|i| 350.0 + 200.0 * f64::from(i)).collect(),
            hold_s: 900,
            shares: DEFAULT_SHARES,
        }
    }
}

impl Staircase {
    /// Up through every level, then down again without repeating the top.
    pub fn profile(&self) -> Result<FlowProfile, ProfileError> {
        if self.levels.is_empty() {
            return Err(ProfileError::Invalid("staircase needs at least one level".into()));
        }
        let down = self.levels.iter().rev().skip(1);
        let bins = self.levels.iter().chain(down).map(|&total| self.shares.map(|s| s * total)).collect();
        FlowProfile::new(self.hold_s, bins)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_sum_to_one() {
        assert!((DEFAULT_SHARES.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_reproduces_base() {
        let base = BaseShape::default().profile().unwrap();
        let out = generate_flow_patterns(&base, 1, 9, &PatternNoise::none()).unwrap();
        assert_eq!(out[0], base);
    }

    #[test]
    fn same_seed_same_patterns() {
        let base = BaseShape::default().profile().unwrap();
        let a = generate_flow_patterns(&base, 5, 3, &PatternNoise::default()).unwrap();
        let b = generate_flow_patterns(&base, 5, 3, &PatternNoise::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn staircase_goes_up_then_down() {
        let s = Staircase { levels: vec![100.0, 200.0, 300.0], hold_s: 60, shares: DEFAULT_SHARES };
        let p = s.profile().unwrap();
        let totals: Vec<f64> = p.bins().iter().map(|b| b.iter().sum::<f64>().round()).collect();
        assert_eq!(totals, vec![100.0, 200.0, 300.0, 200.0, 100.0]);
        assert_eq!(p.duration(), 300);
    }
}
