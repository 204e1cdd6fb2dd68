use super::movement::NUM_MOVEMENTS;
use super::FlowError;

/// Per-second arrival counts, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ArrivalHistory {
    seconds: Vec<[u32; NUM_MOVEMENTS]>,
}

impl ArrivalHistory {
    pub fn from_seconds(seconds: Vec<[u32; NUM_MOVEMENTS]>) -> Self {
        Self { seconds }
    }

    pub fn push(&mut self, arrivals: [u32; NUM_MOVEMENTS]) {
        self.seconds.push(arrivals);
    }

    pub fn len(&self) -> usize {
        self.seconds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seconds.is_empty()
    }

    pub fn seconds(&self) -> &[[u32; NUM_MOVEMENTS]] {
        &self.seconds
    }
}

/// Arrivals over the trailing `window` seconds, scaled to vehicles per hour.
///
/// This is the only traffic quantity the agent ever observes.
pub fn measure_flow(history: &ArrivalHistory, window: u32) -> Result<[f64; NUM_MOVEMENTS], FlowError> {
    if window == 0 {
        return Err(FlowError::ZeroWindow);
    }
    let need = window as usize;
    if history.len() < need {
        return Err(FlowError::NotReady {
            have: history.len(),
            need,
        });
    }
    let mut counts = [0u64; NUM_MOVEMENTS];
    for second in &history.seconds[history.len() - need..] {
        for (c, &a) in counts.iter_mut().zip(second) {
            *c += u64::from(a);
        }
    }
    let scale = 3600.0 / f64::from(window);
    Ok(counts.map(|c| c as f64 * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_five_arrivals_in_five_minutes_is_300_vph() {
        let mut seconds = vec![[0u32; 8]; 300];
        for s in seconds.iter_mut().take(25) {
            s[2] = 1;
        }
        let flow = measure_flow(&ArrivalHistory::from_seconds(seconds), 300).unwrap();
        assert_eq!(flow[2], 300.0);
        assert_eq!(flow[0], 0.0);
    }

    #[test]
    fn zero_arrivals_is_zero_flow() {
        let h = ArrivalHistory::from_seconds(vec![[0; 8]; 900]);
        assert_eq!(measure_flow(&h, 900).unwrap(), [0.0; 8]);
    }

    #[test]
    fn only_the_trailing_window_counts() {
        let mut seconds = vec![[5u32; 8]; 100];
        seconds.extend(vec![[0u32; 8]; 300]);
        let h = ArrivalHistory::from_seconds(seconds);
        assert_eq!(measure_flow(&h, 300).unwrap(), [0.0; 8]);
    }

    #[test]
    fn short_history_is_not_ready() {
        let h = ArrivalHistory::from_seconds(vec![[1; 8]; 299]);
        assert_eq!(
            measure_flow(&h, 300),
            Err(FlowError::NotReady { have: 299, need: 300 })
        );
    }
}
