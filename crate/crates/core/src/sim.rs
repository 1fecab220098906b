//! Closed-loop simulation of the two-layer controller and the run trace shared
//! by every strategy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{
    allocate_bounds, compute_exceedance, coordination_window, flexibility_weights, CoordinatorInput,
};
use crate::house::{
    greedy_fallback, solve_with_adaptive_horizon, AdaptiveHorizonConfig, ControllerState, HouseInputs,
    ObjectiveWeights,
};
use crate::milp::SolveStatus;
use crate::model::{
    soc_step, sum_series, validate_scenario, BatteryState, HouseBounds, HousePlan, HouseSpec, PlanProvenance,
    Scenario, Violation,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario failed validation: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("house {house} slot {slot}: {message}")]
    InvariantBroken { house: String, slot: usize, message: String },
    #[error(transparent)]
    House(#[from] crate::house::HouseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Unmanaged,
    Hierarchical,
    Centralized,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Unmanaged, Strategy::Hierarchical, Strategy::Centralized];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unmanaged => "unmanaged",
            Strategy::Hierarchical => "hierarchical",
            Strategy::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy '{s}' (expected unmanaged, hierarchical or centralized)"))
    }
}

/// Realized series of one house. SOCs are end-of-slot values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseTrace {
    pub id: String,
    pub demand_kw: Vec<f64>,
    pub net_kw: Vec<f64>,
    pub charge_ess_kw: Vec<f64>,
    pub discharge_ess_kw: Vec<f64>,
    pub charge_pev_kw: Vec<f64>,
    pub discharge_pev_kw: Vec<f64>,
    pub soc_ess_kwh: Vec<f64>,
    pub soc_pev_kwh: Vec<f64>,
    pub bound_low_kw: Vec<f64>,
    pub bound_high_kw: Vec<f64>,
    pub provenance: Vec<Option<PlanProvenance>>,
    /// Horizon of the decision that produced the slot's action, 0 if none.
    pub horizon_slots: Vec<usize>,
    /// Solve time of that decision, reported on the decision slot only.
    pub solve_ms: Vec<u64>,
}

impl HouseTrace {
    pub fn new(house: &HouseSpec, n: usize) -> Self {
        Self {
            id: house.id.clone(),
            demand_kw: house.demand.kw.clone(),
            net_kw: vec![0.0; n],
            charge_ess_kw: vec![0.0; n],
            discharge_ess_kw: vec![0.0; n],
            charge_pev_kw: vec![0.0; n],
            discharge_pev_kw: vec![0.0; n],
            soc_ess_kwh: vec![0.0; n],
            soc_pev_kwh: vec![0.0; n],
            bound_low_kw: vec![house.contract.low_kw; n],
            bound_high_kw: vec![house.contract.high_kw; n],
            provenance: vec![None; n],
            horizon_slots: vec![0; n],
            solve_ms: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.net_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net_kw.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub strategy: Strategy,
    pub slot_minutes: u32,
    pub substation_low_kw: Vec<f64>,
    pub substation_high_kw: Vec<f64>,
    pub aggregate_kw: Vec<f64>,
    pub houses: Vec<HouseTrace>,
    /// Slots whose allocation could not honour the substation envelope.
    pub conflict: Vec<bool>,
    pub solver_status: Option<SolveStatus>,
    /// Solved to proven optimality, so usable as a reference.
    pub oracle: bool,
    pub objective: Option<f64>,
}

impl RunTrace {
    pub fn new(strategy: Strategy, scenario: &Scenario) -> Self {
        let n = scenario.grid.n_slots;
        Self {
            strategy,
            slot_minutes: scenario.grid.slot_minutes,
            substation_low_kw: scenario.substation.low_kw.clone(),
            substation_high_kw: scenario.substation.high_kw.clone(),
            aggregate_kw: vec![0.0; n],
            houses: scenario.houses.iter().map(|h| HouseTrace::new(h, n)).collect(),
            conflict: vec![false; n],
            solver_status: None,
            oracle: false,
            objective: None,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.aggregate_kw.len()
    }

    pub(crate) fn finish(&mut self) {
        let nets: Vec<&[f64]> = self.houses.iter().map(|h| h.net_kw.as_slice()).collect();
        self.aggregate_kw = sum_series(&nets, self.aggregate_kw.len());
    }
}

/// Battery states of one house at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HouseState {
    pub ess: BatteryState,
    pub pev: BatteryState,
}

impl HouseState {
    pub fn initial(house: &HouseSpec) -> Self {
        Self {
            ess: house.ess.as_ref().map_or(BatteryState::new(0.0), |e| e.initial),
            pev: house.pev.as_ref().map_or(BatteryState::new(0.0), |p| p.initial),
        }
    }

    /// Overwrites the vehicle SOC when it plugs in at `slot`.
    pub fn arrive(&mut self, house: &HouseSpec, slot: usize) {
        if let Some(w) = house.pev.as_ref().and_then(|p| p.availability.arrival_at(slot)) {
            self.pev = BatteryState::new(w.soc_on_arrival_kwh);
        }
    }
}

/// Charge/discharge rates of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotAction {
    pub charge_ess_kw: f64,
    pub discharge_ess_kw: f64,
    pub charge_pev_kw: f64,
    pub discharge_pev_kw: f64,
}

impl SlotAction {
    pub fn from_plan(plan: &HousePlan, slot: usize) -> Option<Self> {
        let k = slot.checked_sub(plan.start_slot)?;
        (k < plan.len()).then(|| Self {
            charge_ess_kw: plan.charge_ess_kw[k],
            discharge_ess_kw: plan.discharge_ess_kw[k],
            charge_pev_kw: plan.charge_pev_kw[k],
            discharge_pev_kw: plan.discharge_pev_kw[k],
        })
    }
}

/// Applies one slot's action, checking battery and contract limits, and
/// records it in the trace.
pub(crate) fn apply_slot(
    house: &HouseSpec,
    slot: usize,
    slot_minutes: u32,
    state: &mut HouseState,
    action: SlotAction,
    trace: &mut HouseTrace,
) -> Result<(), SimError> {
    let broken = |message: String| SimError::InvariantBroken {
        house: house.id.clone(),
        slot,
        message,
    };
    let plugged = house.is_pev_plugged(slot);
    if house.ess.is_none() && (action.charge_ess_kw != 0.0 || action.discharge_ess_kw != 0.0) {
        return Err(broken("battery action without a battery".into()));
    }
    if !plugged && (action.charge_pev_kw != 0.0 || action.discharge_pev_kw != 0.0) {
        return Err(broken("vehicle action while unplugged".into()));
    }
    if let Some(ess) = &house.ess {
        state.ess = soc_step(state.ess, &ess.spec, action.charge_ess_kw, action.discharge_ess_kw, slot_minutes)
            .map_err(|e| broken(format!("battery: {e}")))?;
    }
    if let (Some(pev), true) = (&house.pev, plugged) {
        state.pev = soc_step(state.pev, &pev.spec, action.charge_pev_kw, action.discharge_pev_kw, slot_minutes)
            .map_err(|e| broken(format!("vehicle: {e}")))?;
    }
    let e = house.demand.kw[slot] + action.charge_ess_kw + action.charge_pev_kw
        - action.discharge_ess_kw
        - action.discharge_pev_kw;
    let c = &house.contract;
    if e < c.low_kw - 1e-6 || e > c.high_kw + 1e-6 {
        return Err(broken(format!("net demand {e} kW outside contract [{}, {}]", c.low_kw, c.high_kw)));
    }
    trace.net_kw[slot] = e;
    trace.charge_ess_kw[slot] = action.charge_ess_kw;
    trace.discharge_ess_kw[slot] = action.discharge_ess_kw;
    trace.charge_pev_kw[slot] = action.charge_pev_kw;
    trace.discharge_pev_kw[slot] = action.discharge_pev_kw;
    trace.soc_ess_kwh[slot] = state.ess.soc_kwh;
    trace.soc_pev_kwh[slot] = state.pev.soc_kwh;
    Ok(())
}

/// Settings of the two-layer controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HierarchicalConfig {
    pub horizon: AdaptiveHorizonConfig,
    pub weights: ObjectiveWeights,
    pub coordinator_input: CoordinatorInput,
}

pub fn ensure_valid(scenario: &Scenario) -> Result<(), SimError> {
    let violations = validate_scenario(scenario);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SimError::Invalid(violations))
    }
}

/// Runs the two-layer controller over the whole scenario.
///
/// Coordination fires before house decisions when both fall on the same
/// slot. Each decision's plan is applied until the next decision; slots the
/// plan does not reach are filled by the greedy rule.
pub fn run_hierarchical(scenario: &Scenario, cfg: &HierarchicalConfig) -> Result<RunTrace, SimError> {
    ensure_valid(scenario)?;
    cfg.horizon.validate()?;
    let grid = &scenario.grid;
    let n = grid.n_slots;
    let houses = &scenario.houses;
    let mut trace = RunTrace::new(Strategy::Hierarchical, scenario);
    let mut states: Vec<HouseState> = houses.iter().map(HouseState::initial).collect();
    let mut bounds: Vec<HouseBounds> = houses.iter().map(|h| HouseBounds::from_contract(&h.contract, n)).collect();
    let mut controllers: Vec<ControllerState> = houses.iter().map(|_| ControllerState::new(&cfg.horizon)).collect();
    let mut plans: Vec<Option<HousePlan>> = vec![None; houses.len()];
    let mut last_info: Vec<(Option<PlanProvenance>, usize)> = vec![(None, 0); houses.len()];

    for t in 0..n {
        for (h, s) in houses.iter().zip(states.iter_mut()) {
            s.arrive(h, t);
        }

        if grid.is_coordination_slot(t) {
            let window = coordination_window(grid, t, cfg.horizon.initial_horizon_slots);
            let forecasts: Vec<Vec<f64>> = houses
                .iter()
                .zip(&plans)
                .map(|(h, plan)| {
                    let mut f = h.demand.kw.clone();
                    if let (CoordinatorInput::Plan, Some(p)) = (cfg.coordinator_input, plan) {
                        for k in 0..p.len() {
                            if p.start_slot + k >= t {
                                f[p.start_slot + k] = p.net_demand_kw[k];
                            }
                        }
                    }
                    f
                })
                .collect();
            let aggregate = sum_series(&forecasts, n);
            let exceedance = compute_exceedance(&aggregate, &scenario.substation, window.clone())
                .expect("validated scenario covers every slot");
            let ess: Vec<BatteryState> = states.iter().map(|s| s.ess).collect();
            let pev: Vec<BatteryState> = states.iter().map(|s| s.pev).collect();
            let weights = flexibility_weights(houses, &ess, &pev, t, grid);
            let alloc = allocate_bounds(houses, &forecasts, &exceedance, &weights, &scenario.substation, window);
            for (b, new) in bounds.iter_mut().zip(&alloc.bounds) {
                b.overlay(new);
            }
            for c in &alloc.conflicts {
                trace.conflict[c.slot] = true;
            }
        }

        if grid.is_decision_slot(t) {
            for (u, h) in houses.iter().enumerate() {
                let inputs = HouseInputs {
                    house: h,
                    bounds: &bounds[u],
                    ess: states[u].ess,
                    pev: states[u].pev,
                    start_slot: t,
                    grid,
                };
                let (plan, next, info) = solve_with_adaptive_horizon(&controllers[u], &cfg.horizon, &cfg.weights, &inputs);
                controllers[u] = ControllerState {
                    last_plan: None,
                    ..next
                };
                last_info[u] = (Some(plan.provenance), info.horizon_used);
                trace.houses[u].solve_ms[t] = info.wall_ms;
                plans[u] = Some(plan);
            }
        }

        for (u, h) in houses.iter().enumerate() {
            let planned = plans[u].as_ref().and_then(|p| SlotAction::from_plan(p, t));
            let (action, provenance) = match planned {
                Some(a) => (a, last_info[u].0),
                None => {
                    let inputs = HouseInputs {
                        house: h,
                        bounds: &bounds[u],
                        ess: states[u].ess,
                        pev: states[u].pev,
                        start_slot: t,
                        grid,
                    };
                    let g = greedy_fallback(&inputs, 1);
                    (SlotAction::from_plan(&g, t).unwrap_or_default(), Some(PlanProvenance::Greedy))
                }
            };
            let ht = &mut trace.houses[u];
            let (lo, hi) = bounds[u].at(t);
            ht.bound_low_kw[t] = lo;
            ht.bound_high_kw[t] = hi;
            ht.provenance[t] = provenance;
            ht.horizon_slots[t] = last_info[u].1;
            apply_slot(h, t, grid.slot_minutes, &mut states[u], action, ht)?;
        }
    }
    trace.finish();
    Ok(trace)
}

/// Largest gap between a trace's SOC series and a replay of its actions.
pub fn replay_soc_error(scenario: &Scenario, trace: &RunTrace) -> Result<f64, SimError> {
    let mut worst: f64 = 0.0;
    for (h, ht) in scenario.houses.iter().zip(&trace.houses) {
        let mut state = HouseState::initial(h);
        let mut scratch = HouseTrace::new(h, ht.len());
        for t in 0..ht.len() {
            state.arrive(h, t);
            let action = SlotAction {
                charge_ess_kw: ht.charge_ess_kw[t],
                discharge_ess_kw: ht.discharge_ess_kw[t],
                charge_pev_kw: ht.charge_pev_kw[t],
                discharge_pev_kw: ht.discharge_pev_kw[t],
            };
            apply_slot(h, t, trace.slot_minutes, &mut state, action, &mut scratch)?;
            worst = worst
                .max((state.ess.soc_kwh - ht.soc_ess_kwh[t]).abs())
                .max((state.pev.soc_kwh - ht.soc_pev_kwh[t]).abs());
        }
    }
    Ok(worst)
}

/// Vehicle windows whose target was missed: `(house, deadline_slot, soc, target)`.
pub fn missed_deadlines(scenario: &Scenario, trace: &RunTrace) -> Vec<(String, usize, f64, f64)> {
    let mut out = Vec::new();
    for (h, ht) in scenario.houses.iter().zip(&trace.houses) {
        let Some(pev) = &h.pev else { continue };
        for w in &pev.availability.windows {
            if w.deadline_slot == 0 || w.deadline_slot > ht.len() {
                continue;
            }
            let soc = ht.soc_pev_kwh[w.deadline_slot - 1];
            let target = w.target_soc_fraction * pev.spec.capacity_kwh;
            if soc < target - 1e-6 {
                out.push((h.id.clone(), w.deadline_slot, soc, target));
            }
        }
    }
    out
}

/// Whether a vehicle window can reach its target from its arrival SOC when
/// charging at full rate within the contract headroom.
pub fn deadline_reachable(house: &HouseSpec, window: &crate::model::PevWindow, slot_minutes: u32) -> bool {
    let Some(pev) = &house.pev else { return true };
    let dt = f64::from(slot_minutes) / 60.0;
    let reachable: f64 = (window.plug_in_slot..window.deadline_slot.min(house.demand.len()))
        .map(|t| {
            let room = (house.contract.high_kw - house.demand.kw[t]).max(0.0);
            pev.spec.max_rate_kw.min(room) * pev.spec.charge_eff * dt
        })
        .sum();
    window.soc_on_arrival_kwh + reachable >= window.target_soc_fraction * pev.spec.capacity_kwh - 1e-9
}
