//! Per-house receding-horizon controller.
//!
//! Each decision builds a MILP over the next `H` slots that keeps the house's
//! net demand inside the limits handed down by the coordinator, subject to
//! battery dynamics, the supply contract and the vehicle's recharge deadline.
//! The horizon adapts to the per-solve deadline.

use thiserror::Error;

use crate::milp::{
    solve_milp, MilpError, MilpProblem, MilpSolution, ObjectiveSense, Sense, SolveBudget, SolveStatus, VarId,
    VarKind,
};
use crate::model::{
    soc_step, BatterySpec, BatteryState, HouseBounds, HousePlan, HouseSpec, PevWindow, PlanProvenance, TimeGrid,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HouseError {
    #[error(
        "vehicle window {plug_in_slot}..{deadline_slot} cannot reach its target: needs {needed_kwh} kWh, at most {available_kwh} kWh reachable"
    )]
    InfeasibleDeadline {
        plug_in_slot: usize,
        deadline_slot: usize,
        needed_kwh: f64,
        available_kwh: f64,
    },
    #[error("inconsistent solution: {0}")]
    InconsistentSolution(String),
    #[error("invalid horizon: start {start} + horizon {horizon} exceeds {n_slots} slots")]
    InvalidHorizon { start: usize, horizon: usize, n_slots: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] MilpError),
}

/// Weights of the house objective. The slack term must dominate the
/// tie-breakers for every horizon in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub slack_weight: f64,
    pub out_of_bounds_slot_weight: f64,
    pub wear_weight: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            slack_weight: 1.0,
            out_of_bounds_slot_weight: 1e-3,
            wear_weight: 1e-6,
        }
    }
}

impl ObjectiveWeights {
    pub fn new(
        slack_weight: f64,
        out_of_bounds_slot_weight: f64,
        wear_weight: f64,
        max_horizon: usize,
        max_rate_sum_kw: f64,
    ) -> Result<Self, HouseError> {
        let w = Self {
            slack_weight,
            out_of_bounds_slot_weight,
            wear_weight,
        };
        w.validate(max_horizon, max_rate_sum_kw)?;
        Ok(w)
    }

    /// Checks `slack > oob·H + wear·H·(M_E + M_P)` for the largest horizon.
    pub fn validate(&self, max_horizon: usize, max_rate_sum_kw: f64) -> Result<(), HouseError> {
        if !(self.slack_weight > 0.0 && self.out_of_bounds_slot_weight >= 0.0 && self.wear_weight >= 0.0) {
            return Err(HouseError::InvalidConfig(format!("weights out of range: {self:?}")));
        }
        let h = max_horizon as f64;
        let rhs = self.out_of_bounds_slot_weight * h + self.wear_weight * h * max_rate_sum_kw;
        if self.slack_weight <= rhs {
            return Err(HouseError::InvalidConfig(format!(
                "slack weight {} does not dominate tie-breakers ({rhs}) at horizon {max_horizon}",
                self.slack_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveHorizonConfig {
    pub initial_horizon_slots: usize,
    pub step_slots: usize,
    pub min_horizon_slots: usize,
    pub deadline_ms: u64,
    /// Deterministic alternative to the wall-clock deadline.
    pub node_limit: Option<u64>,
    /// Grow the horizon again after fast solves.
    pub regrow: bool,
}

impl Default for AdaptiveHorizonConfig {
    fn default() -> Self {
        Self {
            initial_horizon_slots: 8,
            step_slots: 2,
            min_horizon_slots: 1,
            deadline_ms: 60_000,
            node_limit: None,
            regrow: true,
        }
    }
}

impl AdaptiveHorizonConfig {
    pub fn validate(&self) -> Result<(), HouseError> {
        if self.min_horizon_slots == 0
            || self.min_horizon_slots > self.initial_horizon_slots
            || self.step_slots == 0
        {
            return Err(HouseError::InvalidConfig(format!(
                "need 1 <= min ({}) <= initial ({}) and step >= 1 ({})",
                self.min_horizon_slots, self.initial_horizon_slots, self.step_slots
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub current_horizon_slots: usize,
    pub last_plan: Option<HousePlan>,
}

impl ControllerState {
    pub fn new(cfg: &AdaptiveHorizonConfig) -> Self {
        Self {
            current_horizon_slots: cfg.initial_horizon_slots,
            last_plan: None,
        }
    }
}

/// Everything a house decision depends on.
#[derive(Debug, Clone, Copy)]
pub struct HouseInputs<'a> {
    pub house: &'a HouseSpec,
    pub bounds: &'a HouseBounds,
    /// ESS state at the start of `start_slot`.
    pub ess: BatteryState,
    /// PEV state at the start of `start_slot`, after any arrival at that slot.
    pub pev: BatteryState,
    pub start_slot: usize,
    pub grid: &'a TimeGrid,
}

/// Variables of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotVars {
    pub charge_ess: VarId,
    pub discharge_ess: VarId,
    pub charge_pev: VarId,
    pub discharge_pev: VarId,
    pub net: VarId,
    pub slack: VarId,
    pub soc_ess: VarId,
    pub soc_pev: VarId,
    pub mode_ess: VarId,
    pub mode_pev: VarId,
    /// Separate discharge binaries, only when a minimum rate is set.
    pub discharge_mode_ess: Option<VarId>,
    pub discharge_mode_pev: Option<VarId>,
    pub indicators: Option<Indicators>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indicators {
    pub low: VarId,
    pub high: VarId,
    pub inside: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseLayout {
    pub start_slot: usize,
    pub slots: Vec<SlotVars>,
}

impl HouseLayout {
    pub fn horizon(&self) -> usize {
        self.slots.len()
    }
}

/// How the per-house block is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockMode {
    /// Stand-alone house problem: slack is free, indicators are added later.
    House,
    /// Inside the centralized problem: no per-house slack.
    Centralized,
}

fn device(spec: Option<&BatterySpec>) -> BatterySpec {
    spec.copied().unwrap_or(BatterySpec {
        capacity_kwh: 0.0,
        min_rate_kw: 0.0,
        max_rate_kw: 0.0,
        charge_eff: 1.0,
        discharge_eff: 1.0,
    })
}

/// Energy the vehicle can still take in over `from..to`, limited by its rate
/// and by the contract headroom above the base load.
fn reachable_charge_kwh(house: &HouseSpec, spec: &BatterySpec, grid: &TimeGrid, from: usize, to: usize) -> f64 {
    let dt = grid.slot_hours();
    (from..to.min(house.demand.len()))
        .map(|t| {
            let room = (house.contract.high_kw - house.demand.kw[t]).max(0.0);
            spec.max_rate_kw.min(room) * spec.charge_eff * dt
        })
        .sum()
}

/// Rejects horizons in which a vehicle window cannot reach its target even at
/// full rate.
pub fn check_deadlines(inputs: &HouseInputs<'_>, horizon: usize) -> Result<(), HouseError> {
    let Some(pev) = &inputs.house.pev else {
        return Ok(());
    };
    let end = inputs.start_slot + horizon;
    let dt = inputs.grid.slot_hours();
    for w in &pev.availability.windows {
        if w.deadline_slot <= inputs.start_slot || w.plug_in_slot >= end {
            continue;
        }
        let from = w.plug_in_slot.max(inputs.start_slot);
        let soc_now = if w.plug_in_slot <= inputs.start_slot {
            inputs.pev.soc_kwh
        } else {
            w.soc_on_arrival_kwh
        };
        let needed = w.target_soc_fraction * pev.spec.capacity_kwh - soc_now;
        let available = (w.deadline_slot - from) as f64 * dt * pev.spec.max_rate_kw * pev.spec.charge_eff;
        if needed > available + 1e-9 {
            return Err(HouseError::InfeasibleDeadline {
                plug_in_slot: w.plug_in_slot,
                deadline_slot: w.deadline_slot,
                needed_kwh: needed,
                available_kwh: available,
            });
        }
    }
    Ok(())
}

/// Adds one house's variables and physical constraints (power balance, SOC
/// recursion, mode coupling, vehicle availability and deadlines, contract).
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_house_block(
    p: &mut MilpProblem,
    house: &HouseSpec,
    ess_state: BatteryState,
    pev_state: BatteryState,
    start: usize,
    horizon: usize,
    grid: &TimeGrid,
    mode: BlockMode,
) -> HouseLayout {
    let dt = grid.slot_hours();
    let ess = device(house.ess.as_ref().map(|e| &e.spec));
    let pev = device(house.pev.as_ref().map(|p| &p.spec));
    let windows: &[PevWindow] = house.pev.as_ref().map_or(&[], |p| &p.availability.windows);
    let tag = &house.id;
    let end = start + horizon;

    let mut slots = Vec::with_capacity(horizon);
    let mut prev_ess: Option<VarId> = None;
    let mut prev_pev: Option<VarId> = None;
    for k in 0..horizon {
        let t = start + k;
        let plugged_window = windows.iter().find(|w| w.contains(t));
        let plugged = house.pev.is_some() && plugged_window.is_some();
        let ess_rate = if house.ess.is_some() { ess.max_rate_kw } else { 0.0 };
        let pev_rate = if plugged { pev.max_rate_kw } else { 0.0 };

        let charge_ess = p.continuous(format!("{tag}_ach_e_{t}"), 0.0, ess_rate);
        let discharge_ess = p.continuous(format!("{tag}_adis_e_{t}"), 0.0, ess_rate);
        let charge_pev = p.continuous(format!("{tag}_ach_p_{t}"), 0.0, pev_rate);
        let discharge_pev = p.continuous(format!("{tag}_adis_p_{t}"), 0.0, pev_rate);
        let net = p.continuous(format!("{tag}_e_{t}"), house.contract.low_kw, house.contract.high_kw);
        let slack_hi = match mode {
            BlockMode::House => f64::INFINITY,
            BlockMode::Centralized => 0.0,
        };
        let slack = p.continuous(format!("{tag}_z_{t}"), 0.0, slack_hi);
        let soc_ess = p.continuous(format!("{tag}_b_e_{t}"), 0.0, ess.capacity_kwh);

        // Deadline and end-of-horizon tracking become lower bounds on b_P.
        let mut pev_floor: f64 = 0.0;
        if let Some(w) = plugged_window {
            let target = w.target_soc_fraction * pev.capacity_kwh;
            if w.deadline_slot == t + 1 {
                pev_floor = target;
            } else if k + 1 == horizon && w.deadline_slot > end {
                let reachable = reachable_charge_kwh(house, &pev, grid, end, w.deadline_slot);
                pev_floor = (target - reachable).max(0.0);
            }
        }
        let soc_pev = p.continuous(format!("{tag}_b_p_{t}"), pev_floor.min(pev.capacity_kwh), pev.capacity_kwh);

        let mode_ess = p.add_var(format!("{tag}_y_e_{t}"), 0.0, if ess_rate > 0.0 { 1.0 } else { 0.0 }, VarKind::Binary);
        let mode_pev = p.add_var(format!("{tag}_y_p_{t}"), 0.0, if pev_rate > 0.0 { 1.0 } else { 0.0 }, VarKind::Binary);

        // (1) power balance
        p.add_constraint(
            format!("{tag}_balance_{t}"),
            &[
                (net, 1.0),
                (charge_ess, -1.0),
                (charge_pev, -1.0),
                (discharge_ess, 1.0),
                (discharge_pev, 1.0),
            ],
            Sense::Eq,
            house.demand.kw[t],
        );

        // (2) SOC recursions
        if house.ess.is_some() {
            let mut terms = vec![
                (soc_ess, 1.0),
                (charge_ess, -ess.stored_per_kw(dt)),
                (discharge_ess, ess.drained_per_kw(dt)),
            ];
            let rhs = match prev_ess {
                Some(v) => {
                    terms.push((v, -1.0));
                    0.0
                }
                None => ess_state.soc_kwh,
            };
            p.add_constraint(format!("{tag}_soc_e_{t}"), &terms, Sense::Eq, rhs);
        }
        if house.pev.is_some() {
            let mut terms = vec![
                (soc_pev, 1.0),
                (charge_pev, -pev.stored_per_kw(dt)),
                (discharge_pev, pev.drained_per_kw(dt)),
            ];
            let arrival = windows.iter().find(|w| w.plug_in_slot == t && k > 0);
            let rhs = match (arrival, prev_pev) {
                (Some(w), _) => w.soc_on_arrival_kwh,
                (None, Some(v)) => {
                    terms.push((v, -1.0));
                    0.0
                }
                (None, None) => pev_state.soc_kwh,
            };
            p.add_constraint(format!("{tag}_soc_p_{t}"), &terms, Sense::Eq, rhs);
        }

        // (3) mode coupling
        let discharge_mode_ess = add_mode_rows(p, tag, "e", t, &ess, ess_rate, charge_ess, discharge_ess, mode_ess);
        let discharge_mode_pev = add_mode_rows(p, tag, "p", t, &pev, pev_rate, charge_pev, discharge_pev, mode_pev);

        slots.push(SlotVars {
            charge_ess,
            discharge_ess,
            charge_pev,
            discharge_pev,
            net,
            slack,
            soc_ess,
            soc_pev,
            mode_ess,
            mode_pev,
            discharge_mode_ess,
            discharge_mode_pev,
            indicators: None,
        });
        prev_ess = Some(soc_ess);
        prev_pev = Some(soc_pev);
    }
    HouseLayout { start_slot: start, slots }
}

#[allow(clippy::too_many_arguments)]
fn add_mode_rows(
    p: &mut MilpProblem,
    tag: &str,
    dev: &str,
    t: usize,
    spec: &BatterySpec,
    rate: f64,
    charge: VarId,
    discharge: VarId,
    mode: VarId,
) -> Option<VarId> {
    if rate <= 0.0 {
        return None;
    }
    if spec.min_rate_kw > 0.0 {
        // Semi-continuous: each direction is either idle or within [m, M].
        let dmode = p.binary(format!("{tag}_yd_{dev}_{t}"));
        p.add_constraint(format!("{tag}_chmax_{dev}_{t}"), &[(charge, 1.0), (mode, -rate)], Sense::Le, 0.0);
        p.add_constraint(
            format!("{tag}_chmin_{dev}_{t}"),
            &[(charge, 1.0), (mode, -spec.min_rate_kw)],
            Sense::Ge,
            0.0,
        );
        p.add_constraint(format!("{tag}_dismax_{dev}_{t}"), &[(discharge, 1.0), (dmode, -rate)], Sense::Le, 0.0);
        p.add_constraint(
            format!("{tag}_dismin_{dev}_{t}"),
            &[(discharge, 1.0), (dmode, -spec.min_rate_kw)],
            Sense::Ge,
            0.0,
        );
        p.add_constraint(format!("{tag}_excl_{dev}_{t}"), &[(mode, 1.0), (dmode, 1.0)], Sense::Le, 1.0);
        Some(dmode)
    } else {
        p.add_constraint(format!("{tag}_ch_{dev}_{t}"), &[(charge, 1.0), (mode, -rate)], Sense::Le, 0.0);
        p.add_constraint(format!("{tag}_dis_{dev}_{t}"), &[(discharge, 1.0), (mode, rate)], Sense::Le, rate);
        None
    }
}

/// Big-M for the indicator rows.
pub fn big_m(house: &HouseSpec, bounds: &HouseBounds, start: usize, horizon: usize) -> f64 {
    let d_max = house.demand.kw[start..start + horizon]
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()));
    let band_max = (start..start + horizon)
        .map(|t| {
            let (lo, hi) = bounds.at(t);
            hi - lo
        })
        .fold(0.0f64, f64::max);
    (house.contract.high_kw - house.contract.low_kw) + house.max_ess_rate() + house.max_pev_rate() + d_max + band_max
}

/// Builds the house MILP over `start_slot .. start_slot + horizon`.
pub fn build_house_milp(
    inputs: &HouseInputs<'_>,
    horizon: usize,
    weights: &ObjectiveWeights,
) -> Result<(MilpProblem, HouseLayout), HouseError> {
    let n = inputs.grid.n_slots;
    let start = inputs.start_slot;
    if horizon == 0 || start + horizon > n {
        return Err(HouseError::InvalidHorizon {
            start,
            horizon,
            n_slots: n,
        });
    }
    if !(inputs.bounds.covers(start) && inputs.bounds.covers(start + horizon - 1)) {
        return Err(HouseError::InvalidConfig(format!(
            "bounds do not cover slots {start}..{}",
            start + horizon
        )));
    }
    check_deadlines(inputs, horizon)?;

    let mut p = MilpProblem::new(ObjectiveSense::Minimize);
    let mut layout = add_house_block(
        &mut p,
        inputs.house,
        inputs.ess,
        inputs.pev,
        start,
        horizon,
        inputs.grid,
        BlockMode::House,
    );
    let m_big = big_m(inputs.house, inputs.bounds, start, horizon);
    let tag = &inputs.house.id;
    for (k, sv) in layout.slots.iter_mut().enumerate() {
        let t = start + k;
        let (lo, hi) = inputs.bounds.at(t);
        let low = p.binary(format!("{tag}_ylow_{t}"));
        let high = p.binary(format!("{tag}_yhigh_{t}"));
        let inside = p.binary(format!("{tag}_yin_{t}"));
        // (6) slack above / below the assigned limits
        p.add_constraint(format!("{tag}_zhi_{t}"), &[(sv.slack, 1.0), (sv.net, -1.0)], Sense::Ge, -hi);
        p.add_constraint(format!("{tag}_zlo_{t}"), &[(sv.slack, 1.0), (sv.net, 1.0)], Sense::Ge, lo);
        // (7) indicators
        p.add_constraint(format!("{tag}_ihi_{t}"), &[(sv.net, 1.0), (high, m_big)], Sense::Le, hi + m_big);
        p.add_constraint(format!("{tag}_ilo_{t}"), &[(sv.net, 1.0), (low, -m_big)], Sense::Ge, lo - m_big);
        p.add_constraint(format!("{tag}_iin_lo_{t}"), &[(inside, 1.0), (low, -1.0)], Sense::Le, 0.0);
        p.add_constraint(format!("{tag}_iin_hi_{t}"), &[(inside, 1.0), (high, -1.0)], Sense::Le, 0.0);

        p.add_objective_term(sv.slack, weights.slack_weight);
        p.add_objective_term(inside, -weights.out_of_bounds_slot_weight);
        for v in [sv.charge_ess, sv.discharge_ess, sv.charge_pev, sv.discharge_pev] {
            p.add_objective_term(v, weights.wear_weight);
        }
        sv.indicators = Some(Indicators { low, high, inside });
    }
    p.objective_offset = weights.out_of_bounds_slot_weight * horizon as f64;
    Ok((p, layout))
}

/// Objective of a plan under the house MILP's weights.
pub fn plan_objective(plan: &HousePlan, weights: &ObjectiveWeights) -> f64 {
    (0..plan.len())
        .map(|k| {
            let wear = plan.charge_ess_kw[k] + plan.discharge_ess_kw[k] + plan.charge_pev_kw[k] + plan.discharge_pev_kw[k];
            weights.slack_weight * plan.slack_kw[k]
                + weights.out_of_bounds_slot_weight * if plan.ind_in[k] { 0.0 } else { 1.0 }
                + weights.wear_weight * wear
        })
        .sum()
}

/// Replays a device over the plan, nudging actions by at most solver
/// tolerance so every SOC stays inside `[0, capacity]`.
#[allow(clippy::too_many_arguments)]
fn settle_device(
    spec: &BatterySpec,
    start_soc: f64,
    start_slot: usize,
    grid: &TimeGrid,
    arrivals: &[PevWindow],
    charge: &mut [f64],
    discharge: &mut [f64],
    soc: &mut [f64],
) -> Result<(), HouseError> {
    let dt = grid.slot_hours();
    let mut s = start_soc;
    for k in 0..charge.len() {
        let t = start_slot + k;
        if k > 0 {
            if let Some(w) = arrivals.iter().find(|w| w.plug_in_slot == t) {
                s = w.soc_on_arrival_kwh;
            }
        }
        charge[k] = charge[k].clamp(0.0, spec.max_rate_kw);
        discharge[k] = discharge[k].clamp(0.0, spec.max_rate_kw);
        let next = s + (spec.charge_eff * charge[k] - discharge[k] / spec.discharge_eff) * dt;
        if next > spec.capacity_kwh {
            let fixed = ((spec.capacity_kwh - s + discharge[k] / spec.discharge_eff * dt) / (spec.charge_eff * dt)).max(0.0);
            if charge[k] - fixed > 1e-6 {
                return Err(HouseError::InconsistentSolution(format!("SOC overflow at slot {t}")));
            }
            charge[k] = fixed.min(charge[k]);
        } else if next < 0.0 {
            let fixed = ((s + spec.charge_eff * charge[k] * dt) * spec.discharge_eff / dt).max(0.0);
            if discharge[k] - fixed > 1e-6 {
                return Err(HouseError::InconsistentSolution(format!("SOC underflow at slot {t}")));
            }
            discharge[k] = fixed.min(discharge[k]);
        }
        let state = soc_step(BatteryState::new(s), spec, charge[k], discharge[k], grid.slot_minutes)
            .map_err(|e| HouseError::InconsistentSolution(format!("slot {t}: {e}")))?;
        s = state.soc_kwh;
        soc[k] = s;
    }
    Ok(())
}

/// Maps a solver point back onto a plan and re-verifies it.
pub fn extract_plan(
    solution: &MilpSolution,
    layout: &HouseLayout,
    inputs: &HouseInputs<'_>,
    provenance: PlanProvenance,
) -> Result<HousePlan, HouseError> {
    let usable = matches!(solution.status, SolveStatus::Optimal | SolveStatus::TimedOut);
    let x = match (&solution.values, usable) {
        (Some(x), true) => x,
        _ => {
            return Err(HouseError::InconsistentSolution(format!(
                "no usable point (status {:?})",
                solution.status
            )))
        }
    };
    let house = inputs.house;
    let h = layout.horizon();
    let mut plan = HousePlan::with_len(layout.start_slot, h, provenance);
    let snap = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v };
    for (k, sv) in layout.slots.iter().enumerate() {
        let t = layout.start_slot + k;
        let raw = [x[sv.charge_ess.0], x[sv.discharge_ess.0], x[sv.charge_pev.0], x[sv.discharge_pev.0]];
        let expected = house.demand.kw[t] + raw[0] + raw[2] - raw[1] - raw[3];
        if (x[sv.net.0] - expected).abs() > 1e-6 {
            return Err(HouseError::InconsistentSolution(format!(
                "power balance off by {} kW at slot {t}",
                (x[sv.net.0] - expected).abs()
            )));
        }
        let mut ch_e = snap(raw[0]);
        let mut dis_e = snap(raw[1]);
        let mut ch_p = snap(raw[2]);
        let mut dis_p = snap(raw[3]);
        let y_e = x[sv.mode_ess.0].round() >= 1.0;
        let y_p = x[sv.mode_pev.0].round() >= 1.0;
        for (on, ch, dis) in [(y_e, &mut ch_e, &mut dis_e), (y_p, &mut ch_p, &mut dis_p)] {
            let off = if on { &mut *dis } else { &mut *ch };
            if *off > 1e-6 {
                return Err(HouseError::InconsistentSolution(format!(
                    "mode exclusivity broken at slot {t} ({off} kW)"
                )));
            }
            *off = 0.0;
        }
        plan.charge_ess_kw[k] = ch_e;
        plan.discharge_ess_kw[k] = dis_e;
        plan.charge_pev_kw[k] = ch_p;
        plan.discharge_pev_kw[k] = dis_p;
        plan.mode_ess[k] = y_e;
        plan.mode_pev[k] = y_p;
    }
    if let Some(ess) = &house.ess {
        settle_device(
            &ess.spec,
            inputs.ess.soc_kwh,
            layout.start_slot,
            inputs.grid,
            &[],
            &mut plan.charge_ess_kw,
            &mut plan.discharge_ess_kw,
            &mut plan.soc_ess_kwh,
        )?;
    }
    if let Some(pev) = &house.pev {
        settle_device(
            &pev.spec,
            inputs.pev.soc_kwh,
            layout.start_slot,
            inputs.grid,
            &pev.availability.windows,
            &mut plan.charge_pev_kw,
            &mut plan.discharge_pev_kw,
            &mut plan.soc_pev_kwh,
        )?;
    }
    for k in 0..h {
        plan.mode_ess[k] = plan.mode_ess[k] && plan.discharge_ess_kw[k] == 0.0;
        plan.mode_pev[k] = plan.mode_pev[k] && plan.discharge_pev_kw[k] == 0.0;
    }
    plan.recompute_derived(&house.demand, inputs.bounds);
    Ok(plan)
}

/// Myopic per-slot rule used when no MILP plan is available.
pub fn greedy_fallback(inputs: &HouseInputs<'_>, horizon: usize) -> HousePlan {
    let house = inputs.house;
    let grid = inputs.grid;
    let dt = grid.slot_hours();
    let start = inputs.start_slot;
    let horizon = horizon.min(grid.n_slots.saturating_sub(start));
    let mut plan = HousePlan::with_len(start, horizon, PlanProvenance::Greedy);
    let mut ess_soc = inputs.ess.soc_kwh;
    let mut pev_soc = inputs.pev.soc_kwh;
    let above_min = |rate: f64, spec: &BatterySpec| if rate < spec.min_rate_kw { 0.0 } else { rate };
    for k in 0..horizon {
        let t = start + k;
        let d = house.demand.kw[t];
        let (lo, hi) = inputs.bounds.at(t);
        let c = &house.contract;

        let (mut ch_e, mut dis_e) = (0.0, 0.0);
        if let Some(ess) = &house.ess {
            let s = &ess.spec;
            if d > hi {
                let rate = s
                    .max_rate_kw
                    .min(d - hi)
                    .min(ess_soc * s.discharge_eff / dt)
                    .min((d - c.low_kw).max(0.0));
                dis_e = above_min(rate.max(0.0), s);
            } else if d < lo {
                let rate = s
                    .max_rate_kw
                    .min(lo - d)
                    .min((s.capacity_kwh - ess_soc) / (s.charge_eff * dt))
                    .min((c.high_kw - d).max(0.0));
                ch_e = above_min(rate.max(0.0), s);
            }
            ess_soc = soc_step(BatteryState::new(ess_soc), s, ch_e, dis_e, grid.slot_minutes)
                .map(|b| b.soc_kwh)
                .unwrap_or(ess_soc);
        }

        let mut ch_p = 0.0;
        if let Some(pev) = &house.pev {
            let s = &pev.spec;
            if k > 0 {
                if let Some(w) = pev.availability.arrival_at(t) {
                    pev_soc = w.soc_on_arrival_kwh;
                }
            }
            if let Some(w) = pev.availability.window_at(t) {
                let target = w.target_soc_fraction * s.capacity_kwh;
                if pev_soc < target {
                    let rate = s
                        .max_rate_kw
                        .min((target - pev_soc) / (s.charge_eff * dt))
                        .min((c.high_kw - (d + ch_e - dis_e)).max(0.0));
                    ch_p = above_min(rate.max(0.0), s);
                }
            }
            pev_soc = soc_step(BatteryState::new(pev_soc), s, ch_p, 0.0, grid.slot_minutes)
                .map(|b| b.soc_kwh)
                .unwrap_or(pev_soc);
        }

        plan.charge_ess_kw[k] = ch_e;
        plan.discharge_ess_kw[k] = dis_e;
        plan.charge_pev_kw[k] = ch_p;
        plan.soc_ess_kwh[k] = ess_soc;
        plan.soc_pev_kwh[k] = pev_soc;
        plan.mode_ess[k] = ch_e > 0.0;
        plan.mode_pev[k] = ch_p > 0.0;
    }
    plan.recompute_derived(&house.demand, inputs.bounds);
    plan
}

/// Outcome details of one controller decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionInfo {
    pub horizon_used: usize,
    pub status: Option<SolveStatus>,
    pub wall_ms: u64,
    pub nodes: u64,
}

/// One receding-horizon decision with horizon adaptation.
///
/// The MILP is solved once at the current horizon under the deadline. A fast
/// optimal solve lets the horizon grow back by one step; a timeout shrinks it
/// for the next decision, using the incumbent if there is one and the greedy
/// rule otherwise.
pub fn solve_with_adaptive_horizon(
    state: &ControllerState,
    cfg: &AdaptiveHorizonConfig,
    weights: &ObjectiveWeights,
    inputs: &HouseInputs<'_>,
) -> (HousePlan, ControllerState, DecisionInfo) {
    let remaining = inputs.grid.n_slots.saturating_sub(inputs.start_slot);
    let current = state.current_horizon_slots.clamp(cfg.min_horizon_slots, cfg.initial_horizon_slots);
    let horizon = current.min(remaining).max(1);
    let mut next = current;
    let budget = SolveBudget {
        deadline_ms: Some(cfg.deadline_ms),
        node_limit: cfg.node_limit,
    };

    let mut info = DecisionInfo {
        horizon_used: horizon,
        status: None,
        wall_ms: 0,
        nodes: 0,
    };
    let plan = match build_house_milp(inputs, horizon, weights) {
        Err(_) => greedy_fallback(inputs, horizon),
        Ok((problem, layout)) => match solve_milp(&problem, budget) {
            Err(_) => greedy_fallback(inputs, horizon),
            Ok(sol) => {
                info.status = Some(sol.status);
                info.wall_ms = sol.wall_ms;
                info.nodes = sol.nodes_explored;
                match sol.status {
                    SolveStatus::Optimal => {
                        if cfg.regrow && sol.wall_ms.saturating_mul(2) < cfg.deadline_ms {
                            next = (current + cfg.step_slots).min(cfg.initial_horizon_slots);
                        }
                        extract_plan(&sol, &layout, inputs, PlanProvenance::Optimal)
                            .unwrap_or_else(|_| greedy_fallback(inputs, horizon))
                    }
                    SolveStatus::TimedOut => {
                        next = current.saturating_sub(cfg.step_slots).max(cfg.min_horizon_slots);
                        if sol.has_incumbent() {
                            extract_plan(&sol, &layout, inputs, PlanProvenance::Incumbent)
                                .unwrap_or_else(|_| greedy_fallback(inputs, horizon))
                        } else {
                            greedy_fallback(inputs, horizon)
                        }
                    }
                    SolveStatus::Infeasible | SolveStatus::Unbounded => greedy_fallback(inputs, horizon),
                }
            }
        },
    };
    let new_state = ControllerState {
        current_horizon_slots: next,
        last_plan: Some(plan.clone()),
    };
    (plan, new_state, info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{check_solution, solve_lp};
    use crate::model::{ContractLimits, DemandSeries, Ess, Pev, PevAvailability};

    fn grid(n: usize, slot: u32) -> TimeGrid {
        TimeGrid {
            slot_minutes: slot,
            house_period_minutes: slot,
            substation_period_minutes: slot * n as u32,
            n_slots: n,
            start_minute: 0,
        }
    }

    fn ess(cap: f64, rate: f64, soc: f64, eff: f64) -> Ess {
        Ess {
            spec: BatterySpec {
                capacity_kwh: cap,
                min_rate_kw: 0.0,
                max_rate_kw: rate,
                charge_eff: eff,
                discharge_eff: eff,
            },
            initial: BatteryState::new(soc),
        }
    }

    fn house(demand: Vec<f64>) -> HouseSpec {
        HouseSpec {
            id: "h".into(),
            ess: None,
            pev: None,
            contract: ContractLimits { low_kw: 0.0, high_kw: 12.0 },
            demand: DemandSeries::new(demand),
        }
    }

    fn inputs<'a>(h: &'a HouseSpec, b: &'a HouseBounds, g: &'a TimeGrid, start: usize) -> HouseInputs<'a> {
        HouseInputs {
            house: h,
            bounds: b,
            ess: h.ess.as_ref().map_or(BatteryState::new(0.0), |e| e.initial),
            pev: h.pev.as_ref().map_or(BatteryState::new(0.0), |p| p.initial),
            start_slot: start,
            grid: g,
        }
    }

    fn with_both(n: usize) -> HouseSpec {
        let mut h = house(vec![1.0; n]);
        h.ess = Some(ess(10.0, 3.0, 5.0, 0.95));
        h.pev = Some(Pev {
            spec: BatterySpec {
                capacity_kwh: 20.0,
                min_rate_kw: 0.0,
                max_rate_kw: 4.0,
                charge_eff: 0.9,
                discharge_eff: 0.9,
            },
            initial: BatteryState::new(10.0),
            availability: PevAvailability {
                windows: vec![PevWindow {
                    plug_in_slot: 0,
                    deadline_slot: n,
                    soc_on_arrival_kwh: 10.0,
                    target_soc_fraction: 0.6,
                }],
            },
        });
        h
    }

    #[test]
    fn variable_counts_follow_construction() {
        let h = with_both(4);
        let g = grid(4, 15);
        let b = HouseBounds::from_contract(&h.contract, 4);
        let (p, layout) = build_house_milp(&inputs(&h, &b, &g, 0), 4, &ObjectiveWeights::default()).unwrap();
        assert_eq!(p.n_continuous(), 32);
        assert_eq!(p.n_binaries(), 20);
        assert_eq!(layout.horizon(), 4);
    }

    #[test]
    fn idle_house_costs_nothing() {
        let h = house(vec![0.0; 6]);
        let g = grid(6, 60);
        let b = HouseBounds::uniform(0.0, 5.0, 0, 6);
        let inp = inputs(&h, &b, &g, 0);
        let (p, layout) = build_house_milp(&inp, 6, &ObjectiveWeights::default()).unwrap();
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.objective.abs() < 1e-9);
        let plan = extract_plan(&s, &layout, &inp, PlanProvenance::Optimal).unwrap();
        assert!(plan.charge_ess_kw.iter().chain(&plan.discharge_ess_kw).all(|&v| v == 0.0));
        assert!(plan.ind_in.iter().all(|&b| b));
    }

    /// Brute force over every indicator/mode assignment, each solved as an LP.
    fn enumerate(p: &MilpProblem) -> f64 {
        let bins: Vec<usize> = (0..p.n_vars()).filter(|&j| p.vars[j].kind == VarKind::Binary).collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << bins.len()) {
            let mut q = p.clone();
            for (k, &j) in bins.iter().enumerate() {
                let v = f64::from((mask >> k) & 1);
                if v < q.vars[j].lower || v > q.vars[j].upper {
                    continue;
                }
                q.vars[j].lower = v;
                q.vars[j].upper = v;
            }
            if bins.iter().any(|&j| q.vars[j].lower != q.vars[j].upper) {
                continue;
            }
            let s = solve_lp(&q).unwrap();
            if s.status == SolveStatus::Optimal {
                best = best.min(s.objective);
            }
        }
        best
    }

    #[test]
    fn single_slot_peak_is_shaved_by_discharge() {
        let mut h = house(vec![6.0]);
        h.ess = Some(ess(10.0, 3.0, 2.0, 1.0));
        let g = grid(1, 60);
        let b = HouseBounds::uniform(0.0, 5.0, 0, 1);
        let inp = inputs(&h, &b, &g, 0);
        let w = ObjectiveWeights::default();
        let (p, layout) = build_house_milp(&inp, 1, &w).unwrap();
        let oracle = enumerate(&p);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert!((s.objective - oracle).abs() < 1e-9);
        let plan = extract_plan(&s, &layout, &inp, PlanProvenance::Optimal).unwrap();
        assert_eq!(plan.slack_kw[0], 0.0);
        assert!((plan.discharge_ess_kw[0] - 1.0).abs() < 1e-9);
        assert!((plan.net_demand_kw[0] - 5.0).abs() < 1e-9);
        // Objective: only the wear of the 1 kW discharge.
        assert!((oracle - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn extract_rejects_missing_point() {
        let h = house(vec![0.0]);
        let g = grid(1, 60);
        let b = HouseBounds::uniform(0.0, 5.0, 0, 1);
        let inp = inputs(&h, &b, &g, 0);
        let (_, layout) = build_house_milp(&inp, 1, &ObjectiveWeights::default()).unwrap();
        let sol = MilpSolution {
            status: SolveStatus::Infeasible,
            values: None,
            objective: f64::NAN,
            relaxation_bound: None,
            nodes_explored: 1,
            wall_ms: 0,
        };
        assert!(matches!(
            extract_plan(&sol, &layout, &inp, PlanProvenance::Optimal),
            Err(HouseError::InconsistentSolution(_))
        ));
    }

    #[test]
    fn extract_of_zero_point_is_idle() {
        let h = house(vec![0.0, 0.0]);
        let g = grid(2, 60);
        let b = HouseBounds::uniform(0.0, 5.0, 0, 2);
        let inp = inputs(&h, &b, &g, 0);
        let (p, layout) = build_house_milp(&inp, 2, &ObjectiveWeights::default()).unwrap();
        let sol = MilpSolution {
            status: SolveStatus::Optimal,
            values: Some(vec![0.0; p.n_vars()]),
            objective: 0.0,
            relaxation_bound: None,
            nodes_explored: 1,
            wall_ms: 0,
        };
        let plan = extract_plan(&sol, &layout, &inp, PlanProvenance::Optimal).unwrap();
        assert!(plan.net_demand_kw.iter().all(|&v| v == 0.0));
        assert!(plan.slack_kw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greedy_examples() {
        let g = grid(1, 60);
        let b = HouseBounds::uniform(0.0, 5.0, 0, 1);
        let mut h = house(vec![6.0]);
        h.ess = Some(ess(10.0, 3.0, 5.0, 1.0));
        let plan = greedy_fallback(&inputs(&h, &b, &g, 0), 1);
        assert!((plan.discharge_ess_kw[0] - 1.0).abs() < 1e-12);
        assert!((plan.net_demand_kw[0] - 5.0).abs() < 1e-12);

        h.ess = Some(ess(10.0, 3.0, 0.0, 1.0));
        let plan = greedy_fallback(&inputs(&h, &b, &g, 0), 1);
        assert_eq!(plan.net_demand_kw[0], 6.0);
        assert_eq!(plan.slack_kw[0], 1.0);

        let h = house(vec![3.0]);
        let plan = greedy_fallback(&inputs(&h, &b, &g, 0), 1);
        assert!(plan.charge_ess_kw.iter().chain(&plan.charge_pev_kw).all(|&v| v == 0.0));
        assert_eq!(plan.net_demand_kw[0], 3.0);
    }

    #[test]
    fn infeasible_deadline_is_reported_before_solving() {
        let mut h = with_both(2);
        h.pev.as_mut().unwrap().availability.windows[0].target_soc_fraction = 1.0;
        let g = grid(2, 15);
        let b = HouseBounds::from_contract(&h.contract, 2);
        let err = build_house_milp(&inputs(&h, &b, &g, 0), 2, &ObjectiveWeights::default()).unwrap_err();
        assert!(matches!(err, HouseError::InfeasibleDeadline { .. }));
    }

    #[test]
    fn deadline_is_met_by_plan() {
        let h = with_both(6);
        let g = grid(6, 60);
        let b = HouseBounds::uniform(0.0, 12.0, 0, 6);
        let inp = inputs(&h, &b, &g, 0);
        let (p, layout) = build_house_milp(&inp, 6, &ObjectiveWeights::default()).unwrap();
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert!(check_solution(&p, s.values.as_ref().unwrap()).unwrap().is_empty());
        let plan = extract_plan(&s, &layout, &inp, PlanProvenance::Optimal).unwrap();
        assert!(plan.soc_pev_kwh[5] >= 12.0 - 1e-6);
    }

    #[test]
    fn weights_must_dominate() {
        assert!(ObjectiveWeights::new(1.0, 1e-3, 1e-6, 96, 20.0).is_ok());
        assert!(ObjectiveWeights::new(0.1, 1e-2, 0.0, 96, 20.0).is_err());
    }

    #[test]
    fn adaptive_zero_deadline_falls_back() {
        let h = with_both(6);
        let g = grid(6, 60);
        let b = HouseBounds::from_contract(&h.contract, 6);
        let cfg = AdaptiveHorizonConfig {
            initial_horizon_slots: 4,
            step_slots: 1,
            deadline_ms: 0,
            ..Default::default()
        };
        let st = ControllerState::new(&cfg);
        let (plan, next, _) = solve_with_adaptive_horizon(&st, &cfg, &ObjectiveWeights::default(), &inputs(&h, &b, &g, 0));
        assert_eq!(plan.provenance, PlanProvenance::Greedy);
        assert_eq!(next.current_horizon_slots, 3);
    }

    #[test]
    fn adaptive_generous_deadline_stays_at_initial() {
        let h = with_both(6);
        let g = grid(6, 60);
        let b = HouseBounds::from_contract(&h.contract, 6);
        let cfg = AdaptiveHorizonConfig {
            initial_horizon_slots: 4,
            step_slots: 1,
            deadline_ms: 1_000_000_000,
            ..Default::default()
        };
        let st = ControllerState::new(&cfg);
        let (plan, next, info) = solve_with_adaptive_horizon(&st, &cfg, &ObjectiveWeights::default(), &inputs(&h, &b, &g, 0));
        assert_eq!(plan.provenance, PlanProvenance::Optimal);
        assert_eq!(info.horizon_used, 4);
        assert_eq!(next.current_horizon_slots, 4);
    }
    #[test]
    fn adaptive_horizon_settles_below_a_budget() {
        // Calibrated so the node budget stops H=8 but not H=6.
        let n = 12;
        let mut h = house((0..n).map(|t| [0.5, 4.0, 1.0, 5.5, 0.2, 3.0][t % 6]).collect());
        h.ess = Some(ess(1.5, 3.0, 0.75, 0.9));
        let g = grid(n, 60);
        let b = HouseBounds::uniform(1.0, 1.2, 0, n);
        let cfg = AdaptiveHorizonConfig {
            initial_horizon_slots: 8,
            step_slots: 2,
            deadline_ms: 1_000_000_000,
            node_limit: Some(7),
            regrow: false,
            ..Default::default()
        };
        let mut st = ControllerState::new(&cfg);
        let mut seen = Vec::new();
        for start in 0..3 {
            let (plan, next, info) = solve_with_adaptive_horizon(&st, &cfg, &ObjectiveWeights::default(), &inputs(&h, &b, &g, start));
            seen.push((info.horizon_used, info.status, plan.provenance));
            st = next;
        }
        assert_eq!(seen[0].0, 8);
        assert_eq!(seen[0].1, Some(SolveStatus::TimedOut));
        for &(hz, status, prov) in &seen[1..] {
            assert!(hz <= 8 - cfg.step_slots);
            assert_eq!(status, Some(SolveStatus::Optimal));
            assert_eq!(prov, PlanProvenance::Optimal);
        }
    }
}
