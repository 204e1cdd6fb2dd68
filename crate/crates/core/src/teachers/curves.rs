//! Cycle-length curves of the rule-based controllers.

use serde::{Deserialize, Serialize};

use super::split::round_to_step;
use super::TeacherError;

/// Webster's delay-minimizing cycle, `(1.5·L + 5) / (1 − Y)`.
pub fn webster_cycle_raw(loss_time: f64, critical_ratio_sum: f64) -> Result<f64, TeacherError> {
    if !(loss_time > 0.0) {
        return Err(TeacherError::InvalidInput(format!(
            "loss time must be positive, got {loss_time}"
        )));
    }
    if !(critical_ratio_sum >= 0.0) {
        return Err(TeacherError::InvalidInput(format!(
            "critical flow ratio sum must be >= 0, got {critical_ratio_sum}"
        )));
    }
    if critical_ratio_sum >= 1.0 {
        return Err(TeacherError::Saturated(critical_ratio_sum));
    }
    Ok((1.5 * loss_time + 5.0) / (1.0 - critical_ratio_sum))
}

/// Webster's cycle clamped to `[min_cycle, max_cycle]`.
pub fn webster_cycle(
    loss_time: f64,
    critical_ratio_sum: f64,
    min_cycle: f64,
    max_cycle: f64,
) -> Result<f64, TeacherError> {
    webster_cycle_raw(loss_time, critical_ratio_sum).map(|c| c.clamp(min_cycle, max_cycle))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic cycle-flow curve between a minimum and maximum cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticCurve {
    pub min_cycle: f64,
    pub max_cycle: f64,
    /// Total flow (veh/h) at the curve's midpoint.
    pub midpoint: f64,
    /// Flow scale (veh/h) of the transition.
    pub scale: f64,
}

impl LogisticCurve {
    pub fn raw(&self, total_flow: f64) -> f64 {
        self.min_cycle + (self.max_cycle - self.min_cycle) * sigmoid((total_flow - self.midpoint) / self.scale)
    }

    /// Cycle seconds rounded to the 5 s grid.
    pub fn cycle(&self, total_flow: f64) -> u32 {
        round_to_step(self.raw(total_flow))
    }
}

/// Parameters of the three-stage stair controller.
///
/// Below `breakpoints[0]` the cycle is `min_ct`; the next two stairs hold
/// `alt_min_1` and `alt_min_2`. From `breakpoints[2]` to `breakpoints[3]` the
/// cycle climbs steeply to `stretch_ct`, then rises gently to `max_ct`, which
/// is reached at `saturation_flow`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScatsConfigRaw", into = "ScatsConfigRaw")]
pub struct ScatsConfig {
    min_ct: f64,
    alt_min_1: f64,
    alt_min_2: f64,
    stretch_ct: f64,
    max_ct: f64,
    breakpoints: [f64; 4],
    saturation_flow: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScatsConfigRaw {
    min_ct: f64,
    alt_min_1: f64,
    alt_min_2: f64,
    stretch_ct: f64,
    max_ct: f64,
    breakpoints: [f64; 4],
    saturation_flow: f64,
}

impl TryFrom<ScatsConfigRaw> for ScatsConfig {
    type Error = TeacherError;

    fn try_from(r: ScatsConfigRaw) -> Result<Self, Self::Error> {
        ScatsConfig::new(
            [r.min_ct, r.alt_min_1, r.alt_min_2, r.stretch_ct, r.max_ct],
            r.breakpoints,
            r.saturation_flow,
        )
    }
}

impl From<ScatsConfig> for ScatsConfigRaw {
    fn from(c: ScatsConfig) -> Self {
        Self {
            min_ct: c.min_ct,
            alt_min_1: c.alt_min_1,
            alt_min_2: c.alt_min_2,
            stretch_ct: c.stretch_ct,
            max_ct: c.max_ct,
            breakpoints: c.breakpoints,
            saturation_flow: c.saturation_flow,
        }
    }
}

impl ScatsConfig {
    /// `cycles` is `[min_ct, alt_min_1, alt_min_2, stretch_ct, max_ct]`.
    pub fn new(cycles: [f64; 5], breakpoints: [f64; 4], saturation_flow: f64) -> Result<Self, TeacherError> {
        if cycles.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TeacherError::InvalidInput(format!(
                "stair cycles must be strictly increasing, got {cycles:?}"
            )));
        }
        let mut flows = breakpoints.to_vec();
        flows.push(saturation_flow);
        if !(flows[0] > 0.0) || flows.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TeacherError::InvalidInput(format!(
                "breakpoints must be positive and strictly increasing, got {flows:?}"
            )));
        }
        let [min_ct, alt_min_1, alt_min_2, stretch_ct, max_ct] = cycles;
        Ok(Self {
            min_ct,
            alt_min_1,
            alt_min_2,
            stretch_ct,
            max_ct,
            breakpoints,
            saturation_flow,
        })
    }

    /// Breakpoints at 25/45/60/85 % of `capacity`, saturating at capacity.
    pub fn with_capacity(cycles: [f64; 5], capacity: f64) -> Result<Self, TeacherError> {
        Self::new(
            cycles,
            [0.25 * capacity, 0.45 * capacity, 0.60 * capacity, 0.85 * capacity],
            capacity,
        )
    }

    pub fn cycles(&self) -> [f64; 5] {
        [self.min_ct, self.alt_min_1, self.alt_min_2, self.stretch_ct, self.max_ct]
    }

    pub fn breakpoints(&self) -> [f64; 4] {
        self.breakpoints
    }

    pub fn saturation_flow(&self) -> f64 {
        self.saturation_flow
    }

    /// Unquantized cycle for a total flow in veh/h.
    pub fn raw(&self, total_flow: f64) -> f64 {
        let [b1, b2, b3, b4] = self.breakpoints;
        let i = total_flow.max(0.0);
        if i < b1 {
            self.min_ct
        } else if i < b2 {
            self.alt_min_1
        } else if i < b3 {
            self.alt_min_2
        } else if i < b4 {
            self.alt_min_2 + (self.stretch_ct - self.alt_min_2) * (i - b3) / (b4 - b3)
        } else if i < self.saturation_flow {
            self.stretch_ct + (self.max_ct - self.stretch_ct) * (i - b4) / (self.saturation_flow - b4)
        } else {
            self.max_ct
        }
    }

    /// Cycle seconds rounded to the 5 s grid.
    pub fn cycle(&self, total_flow: f64) -> u32 {
        round_to_step(self.raw(total_flow))
    }
}

impl Default for ScatsConfig {
    fn default() -> Self {
        Self::with_capacity([60.0, 70.0, 80.0, 150.0, 180.0], 2600.0).expect("valid defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn webster_direct_substitution() {
        assert_eq!(webster_cycle_raw(10.0, 0.5).unwrap(), 40.0);
        assert_eq!(webster_cycle_raw(12.0, 0.0).unwrap(), 23.0);
        let raw = webster_cycle_raw(10.0, 0.95).unwrap();
        assert!((raw - 400.0).abs() < 1e-9);
        assert_eq!(webster_cycle(10.0, 0.95, 60.0, 180.0).unwrap(), 180.0);
    }

    #[test]
    fn webster_saturation_is_an_error() {
        assert!(matches!(webster_cycle_raw(10.0, 1.0), Err(TeacherError::Saturated(_))));
        assert!(webster_cycle_raw(0.0, 0.5).is_err());
        assert!(webster_cycle_raw(10.0, -0.1).is_err());
    }

    #[test]
    fn logistic_midpoint_and_tails() {
        let c = LogisticCurve {
            min_cycle: 60.0,
            max_cycle: 180.0,
            midpoint: 1000.0,
            scale: 200.0,
        };
        assert_eq!(c.raw(1000.0), 120.0);
        assert!((c.raw(1200.0) - 147.7271).abs() < 1e-3);
        assert_eq!(c.cycle(1200.0), 150);
        let far = LogisticCurve { midpoint: 5000.0, ..c };
        assert!((far.raw(0.0) - 60.0).abs() < 1e-6);
        assert_eq!(far.cycle(0.0), 60);
    }

    #[test]
    fn scats_stairs_and_caps() {
        let s = ScatsConfig::default();
        assert_eq!(s.breakpoints(), [650.0, 1170.0, 1560.0, 2210.0]);
        assert_eq!(s.cycle(0.0), 60);
        assert_eq!(s.cycle(649.0), 60);
        assert_eq!(s.cycle(650.0), 70);
        assert_eq!(s.cycle(1200.0), 80);
        assert_eq!(s.cycle(2210.0), 150);
        assert_eq!(s.cycle(2600.0), 180);
        assert_eq!(s.cycle(99_999.0), 180);
    }

    #[test]
    fn scats_rejects_unordered_config() {
        assert!(ScatsConfig::new([60.0, 70.0, 70.0, 150.0, 180.0], [1.0, 2.0, 3.0, 4.0], 5.0).is_err());
        assert!(ScatsConfig::new([60.0, 70.0, 80.0, 150.0, 180.0], [1.0, 3.0, 2.0, 4.0], 5.0).is_err());
        assert!(ScatsConfig::new([60.0, 70.0, 80.0, 150.0, 180.0], [1.0, 2.0, 3.0, 4.0], 4.0).is_err());
    }

    #[test]
    fn scats_config_deserialization_validates() {
        let bad = r#"{"min_ct":60,"alt_min_1":50,"alt_min_2":80,"stretch_ct":150,"max_ct":180,
                      "breakpoints":[1,2,3,4],"saturation_flow":5}"#;
        assert!(serde_json::from_str::<ScatsConfig>(bad).is_err());
        let good = serde_json::to_string(&ScatsConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<ScatsConfig>(&good).unwrap(), ScatsConfig::default());
    }
}
