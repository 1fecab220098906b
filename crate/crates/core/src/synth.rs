//! Seeded synthetic scenarios.
//!
//! All randomness comes from one SplitMix64 stream seeded with the scenario
//! seed, consumed in a fixed order (houses in index order, then slots), so a
//! seed always yields the same scenario.

use std::fmt;
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::model::{
    BatterySpec, BatteryState, ContractLimits, DemandSeries, Ess, HouseSpec, Pev, PevAvailability, PevWindow,
    Scenario, SubstationSpec, TimeGrid,
};

/// Thin wrapper giving uniform draws from SplitMix64.
pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as i64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    EveningPeak,
    Flat,
    RandomWalk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::EveningPeak => "evening-peak",
            Profile::Flat => "flat",
            Profile::RandomWalk => "random-walk",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Profile::EveningPeak, Profile::Flat, Profile::RandomWalk]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown profile '{s}' (expected evening-peak, flat or random-walk)"))
    }
}

/// Day starts at noon so the evening peak and the overnight vehicle windows
/// fall inside a one-day horizon.
pub const START_MINUTE: i64 = 12 * 60;

/// Time grid for `n_slots`: one day when it divides evenly, else 15-minute
/// slots. Houses decide hourly (or every slot if slots are longer) and the
/// substation every four house periods.
pub fn default_grid(n_slots: usize) -> TimeGrid {
    let slot_minutes = if n_slots > 0 && 1440 % n_slots == 0 {
        (1440 / n_slots) as u32
    } else {
        15
    };
    let house_period_minutes = if 60 % slot_minutes == 0 { 60 } else { slot_minutes };
    TimeGrid {
        slot_minutes,
        house_period_minutes,
        substation_period_minutes: 4 * house_period_minutes,
        n_slots,
        start_minute: START_MINUTE,
    }
}

fn demand_series(rng: &mut SeededRng, grid: &TimeGrid, profile: Profile) -> Vec<f64> {
    let n = grid.n_slots;
    let base = rng.range(0.3, 0.8);
    match profile {
        Profile::Flat => vec![base; n],
        Profile::EveningPeak => {
            let peak = rng.range(2.0, 4.0);
            (0..n)
                .map(|t| {
                    let m = grid.minute_of_day(t);
                    let jitter = rng.range(-0.1, 0.1);
                    let bump = if (18 * 60..21 * 60).contains(&m) { peak } else { 0.0 };
                    (base + jitter + bump).max(0.0)
                })
                .collect()
        }
        Profile::RandomWalk => {
            let mut level = base;
            (0..n)
                .map(|_| {
                    level = (level + rng.range(-0.4, 0.4)).clamp(0.1, 4.0);
                    level
                })
                .collect()
        }
    }
}

fn slot_of(grid: &TimeGrid, minutes_after_start: i64) -> usize {
    (minutes_after_start.max(0) / i64::from(grid.slot_minutes)) as usize
}

fn vehicle(rng: &mut SeededRng, grid: &TimeGrid, contract: &ContractLimits, demand: &[f64]) -> Pev {
    let spec = BatterySpec {
        capacity_kwh: rng.range(20.0, 40.0),
        min_rate_kw: 0.0,
        max_rate_kw: 3.7,
        charge_eff: 0.92,
        discharge_eff: 0.92,
    };
    let plug_hour = rng.int(17, 20);
    let leave_hour = rng.int(6, 8) + 24;
    let arrival_frac = rng.range(0.3, 0.6);
    let n = grid.n_slots;
    let plug_in_slot = slot_of(grid, plug_hour * 60 - START_MINUTE);
    let deadline_slot = slot_of(grid, leave_hour * 60 - START_MINUTE).min(n);
    let soc_on_arrival_kwh = arrival_frac * spec.capacity_kwh;
    let mut windows = Vec::new();
    if plug_in_slot + 1 < deadline_slot {
        // Aim for a full battery, but never beyond 80% of what the window
        // can physically deliver.
        let dt = grid.slot_hours();
        let reachable: f64 = (plug_in_slot..deadline_slot)
            .map(|t| spec.max_rate_kw.min(contract.high_kw - demand[t]).max(0.0) * spec.charge_eff * dt)
            .sum();
        let cap = (soc_on_arrival_kwh + 0.8 * reachable) / spec.capacity_kwh;
        let target = (cap.min(1.0) * 20.0).floor() / 20.0;
        windows.push(PevWindow {
            plug_in_slot,
            deadline_slot,
            soc_on_arrival_kwh,
            target_soc_fraction: target.max(arrival_frac.min(1.0)),
        });
    }
    Pev {
        spec,
        initial: BatteryState::new(soc_on_arrival_kwh),
        availability: PevAvailability { windows },
    }
}

/// Builds a deterministic scenario. Substation upper bounds are set to a
/// fraction in `[0.6, 0.85)` of the summed per-house peaks so unmanaged
/// demand violates them.
pub fn generate_synthetic(n_houses: usize, n_slots: usize, seed: u64, profile: Profile) -> Scenario {
    let grid = default_grid(n_slots);
    let mut rng = SeededRng::new(seed);
    let contract = ContractLimits { low_kw: 0.0, high_kw: 10.0 };
    let mut houses = Vec::with_capacity(n_houses);
    for u in 0..n_houses {
        let demand = demand_series(&mut rng, &grid, profile);
        let ess = rng.chance(0.75).then(|| {
            let capacity_kwh = rng.range(5.0, 10.0);
            Ess {
                spec: BatterySpec {
                    capacity_kwh,
                    min_rate_kw: 0.0,
                    max_rate_kw: rng.range(2.5, 3.3),
                    charge_eff: 0.95,
                    discharge_eff: 0.95,
                },
                initial: BatteryState::new(0.5 * capacity_kwh),
            }
        });
        let pev = if rng.chance(0.5) {
            Some(vehicle(&mut rng, &grid, &contract, &demand))
        } else {
            None
        };
        houses.push(HouseSpec {
            id: format!("h{u:02}"),
            ess,
            pev,
            contract,
            demand: DemandSeries::new(demand),
        });
    }
    let peak_sum: f64 = houses
        .iter()
        .map(|h| h.demand.kw.iter().copied().fold(0.0, f64::max))
        .sum();
    let fraction = rng.range(0.6, 0.85);
    Scenario {
        grid,
        substation: SubstationSpec::constant(0.0, fraction * peak_sum, n_slots),
        houses,
        rng_seed: seed,
    }
}
