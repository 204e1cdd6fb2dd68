use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::flow::ArrivalHistory;
use super::movement::{MovementId, Phase, NUM_MOVEMENTS, NUM_PHASES, SATURATION_HEADWAY_S};
use super::plan::{PhasePlan, PlanBounds};
use super::profile::FlowProfile;
use super::SimError;

/// Vehicles that may have crossed after `elapsed_green` seconds of green, ⌊t / 2.5⌋.
pub fn departure_slots(elapsed_green: u32) -> u32 {
    elapsed_green * 2 / 5
}

/// What happened during one simulated second.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SecondOutcome {
    pub arrivals: [u32; NUM_MOVEMENTS],
    pub departures: [u32; NUM_MOVEMENTS],
    pub green: Option<Phase>,
}

/// Counters gathered over one full A→D→E→H cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleStats {
    pub plan: PhasePlan,
    pub start_clock: u32,
    /// Departures from both movements of each phase during its green.
    pub phase_throughput: [u32; NUM_PHASES],
    /// Departures of the busier movement of each phase.
    pub critical_throughput: [u32; NUM_PHASES],
    pub movement_departures: [u32; NUM_MOVEMENTS],
    pub movement_arrivals: [u32; NUM_MOVEMENTS],
    pub end_queues: [u32; NUM_MOVEMENTS],
}

impl CycleStats {
    pub fn cycle_time(&self) -> u32 {
        self.plan.cycle_time()
    }

    pub fn total_throughput(&self) -> u32 {
        self.phase_throughput.iter().sum()
    }

    pub fn total_queue(&self) -> u32 {
        self.end_queues.iter().sum()
    }

    pub fn total_arrivals(&self) -> u32 {
        self.movement_arrivals.iter().sum()
    }

    /// Seconds of green consumed by the critical movement of `phase`.
    pub fn green_used(&self, phase: Phase) -> f64 {
        f64::from(self.critical_throughput[phase.index()]) * SATURATION_HEADWAY_S
    }
}

#[derive(Clone, Debug)]
struct ArrivalSampler {
    rates: Option<[f64; NUM_MOVEMENTS]>,
    dists: [Option<Poisson<f64>>; NUM_MOVEMENTS],
}

impl ArrivalSampler {
    fn new() -> Self {
        Self {
            rates: None,
            dists: [None; NUM_MOVEMENTS],
        }
    }

    fn refresh(&mut self, profile: &FlowProfile, clock: u32) {
        let rates = profile.rates_at(clock);
        if self.rates.as_ref() == Some(rates) {
            return;
        }
        self.rates = Some(*rates);
        for (slot, &rate) in self.dists.iter_mut().zip(rates) {
            let per_second = rate / 3600.0;
            *slot = (per_second > 0.0).then(|| Poisson::new(per_second).expect("positive finite rate"));
        }
    }
}

/// Queue-based model of one signalized 4-leg intersection.
///
/// Time advances in whole seconds. Vehicles arrive by a per-movement Poisson
/// process and leave at one per 2.5 s of green on their phase. Conservation
/// `arrivals = departures + queue` holds per movement after every step.
#[derive(Clone, Debug)]
pub struct IntersectionState {
    clock: u32,
    queues: [u32; NUM_MOVEMENTS],
    cumulative_arrivals: [u64; NUM_MOVEMENTS],
    cumulative_departures: [u64; NUM_MOVEMENTS],
    active_plan: PhasePlan,
    bounds: PlanBounds,
    present: [bool; NUM_MOVEMENTS],
    cycle_start: u32,
    departed_this_green: [u32; NUM_MOVEMENTS],
    history: ArrivalHistory,
    sampler: ArrivalSampler,
    rng: ChaCha8Rng,
}

impl IntersectionState {
    pub fn new(
        plan: PhasePlan,
        bounds: PlanBounds,
        present: [bool; NUM_MOVEMENTS],
        seed: u64,
    ) -> Result<Self, SimError> {
        bounds.validate()?;
        plan.validate(&bounds)?;
        Ok(Self {
            clock: 0,
            queues: [0; NUM_MOVEMENTS],
            cumulative_arrivals: [0; NUM_MOVEMENTS],
            cumulative_departures: [0; NUM_MOVEMENTS],
            active_plan: plan,
            bounds,
            present,
            cycle_start: 0,
            departed_this_green: [0; NUM_MOVEMENTS],
            history: ArrivalHistory::default(),
            sampler: ArrivalSampler::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Places `count` vehicles in the queue of `movement` as if they had just arrived.
    pub fn preload(&mut self, movement: MovementId, count: u32) {
        let m = movement.index();
        self.queues[m] += count;
        self.cumulative_arrivals[m] += u64::from(count);
    }

    pub fn clock(&self) -> u32 {
        self.clock
    }

    pub fn queues(&self) -> &[u32; NUM_MOVEMENTS] {
        &self.queues
    }

    pub fn cumulative_arrivals(&self) -> &[u64; NUM_MOVEMENTS] {
        &self.cumulative_arrivals
    }

    pub fn cumulative_departures(&self) -> &[u64; NUM_MOVEMENTS] {
        &self.cumulative_departures
    }

    pub fn active_plan(&self) -> &PhasePlan {
        &self.active_plan
    }

    pub fn bounds(&self) -> &PlanBounds {
        &self.bounds
    }

    pub fn present(&self) -> &[bool; NUM_MOVEMENTS] {
        &self.present
    }

    pub fn history(&self) -> &ArrivalHistory {
        &self.history
    }

    pub fn at_cycle_boundary(&self) -> bool {
        self.clock == self.cycle_start
    }

    pub fn is_conserved(&self) -> bool {
        (0..NUM_MOVEMENTS).all(|m| {
            self.cumulative_arrivals[m] == self.cumulative_departures[m] + u64::from(self.queues[m])
        })
    }

    /// Replaces the signal program. Only allowed between cycles.
    pub fn set_plan(&mut self, plan: PhasePlan) -> Result<(), SimError> {
        if !self.at_cycle_boundary() {
            return Err(SimError::NotAtCycleBoundary {
                clock: self.clock,
                cycle_start: self.cycle_start,
            });
        }
        plan.validate(&self.bounds)?;
        self.active_plan = plan;
        Ok(())
    }

    /// Advances the simulation by one second.
    pub fn step_second(&mut self, profile: &FlowProfile) -> Result<SecondOutcome, SimError> {
        self.active_plan.validate(&self.bounds)?;
        if self.clock >= profile.duration() {
            return Err(SimError::ProfileExhausted {
                clock: self.clock,
                duration: profile.duration(),
            });
        }

        let mut outcome = SecondOutcome::default();
        self.sampler.refresh(profile, self.clock);
        for m in 0..NUM_MOVEMENTS {
            if !self.present[m] {
                continue;
            }
            if let Some(dist) = &self.sampler.dists[m] {
                let k = dist.sample(&mut self.rng) as u32;
                outcome.arrivals[m] = k;
                self.queues[m] += k;
                self.cumulative_arrivals[m] += u64::from(k);
            }
        }

        let offset = self.clock - self.cycle_start;
        if let Some((phase, elapsed)) = self.active_plan.green_at(offset) {
            outcome.green = Some(phase);
            let slots = departure_slots(elapsed);
            for m in phase.movement_indices() {
                let allowed = slots - self.departed_this_green[m];
                let leaving = allowed.min(self.queues[m]);
                self.queues[m] -= leaving;
                self.departed_this_green[m] += leaving;
                self.cumulative_departures[m] += u64::from(leaving);
                outcome.departures[m] = leaving;
            }
        }

        self.history.push(outcome.arrivals);
        self.clock += 1;
        if self.clock - self.cycle_start == self.active_plan.cycle_time() {
            self.cycle_start = self.clock;
            self.departed_this_green = [0; NUM_MOVEMENTS];
        }
        Ok(outcome)
    }

    /// Runs one complete cycle of `plan` and reports its counters.
    pub fn run_cycle(&mut self, plan: PhasePlan, profile: &FlowProfile) -> Result<CycleStats, SimError> {
        self.set_plan(plan)?;
        let cycle = plan.cycle_time();
        let remaining = profile.duration().saturating_sub(self.clock);
        if remaining < cycle {
            return Err(SimError::ProfileExhausted {
                clock: self.clock,
                duration: profile.duration(),
            });
        }

        let start_clock = self.clock;
        let mut phase_throughput = [0; NUM_PHASES];
        let mut movement_departures = [0; NUM_MOVEMENTS];
        let mut movement_arrivals = [0; NUM_MOVEMENTS];
        for _ in 0..cycle {
            let out = self.step_second(profile)?;
            for m in 0..NUM_MOVEMENTS {
                movement_arrivals[m] += out.arrivals[m];
                movement_departures[m] += out.departures[m];
            }
            if let Some(phase) = out.green {
                phase_throughput[phase.index()] += phase
                    .movement_indices()
                    .iter()
                    .map(|&m| out.departures[m])
                    .sum::<u32>();
            }
        }
        debug_assert!(self.at_cycle_boundary());

        let critical_throughput = Phase::CYCLE.map(|p| {
            let [a, b] = p.movement_indices();
            movement_departures[a].max(movement_departures[b])
        });
        Ok(CycleStats {
            plan,
            start_clock,
            phase_throughput,
            critical_throughput,
            movement_departures,
            movement_arrivals,
            end_queues: self.queues,
        })
    }
}
