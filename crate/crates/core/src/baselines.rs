//! Reference strategies: unmanaged demand and the perfect-foresight
//! centralized optimum.

use thiserror::Error;

use crate::house::{add_house_block, extract_plan, BlockMode, HouseError, HouseInputs, HouseLayout, ObjectiveWeights};
use crate::milp::{solve_milp, MilpError, MilpProblem, ObjectiveSense, Sense, SolveBudget, SolveStatus, VarId};
use crate::model::{HouseBounds, PlanProvenance, Scenario};
use crate::sim::{apply_slot, ensure_valid, HouseState, RunTrace, SimError, SlotAction, Strategy};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("centralized problem too large: {houses} houses x {slots} slots exceeds {max_houses} x {max_slots}")]
    ScaleGuard {
        houses: usize,
        slots: usize,
        max_houses: usize,
        max_slots: usize,
    },
    #[error("centralized solve returned no usable point (status {0:?})")]
    NoSolution(SolveStatus),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    House(#[from] HouseError),
    #[error(transparent)]
    Solver(#[from] MilpError),
}

/// Unmanaged demand: batteries idle, vehicles charge at full rate on arrival
/// until their target, within the contract.
pub fn run_unmanaged(scenario: &Scenario) -> Result<RunTrace, BaselineError> {
    ensure_valid(scenario)?;
    let grid = &scenario.grid;
    let dt = grid.slot_hours();
    let mut trace = RunTrace::new(Strategy::Unmanaged, scenario);
    for (h, ht) in scenario.houses.iter().zip(trace.houses.iter_mut()) {
        let mut state = HouseState::initial(h);
        for t in 0..grid.n_slots {
            state.arrive(h, t);
            let mut action = SlotAction::default();
            if let Some(pev) = &h.pev {
                if let Some(w) = pev.availability.window_at(t) {
                    let s = &pev.spec;
                    let target = w.target_soc_fraction * s.capacity_kwh;
                    let missing = target - state.pev.soc_kwh;
                    if missing > 0.0 {
                        let mut rate = s.max_rate_kw.min(missing / (s.charge_eff * dt));
                        if rate < s.min_rate_kw {
                            // Finish the last bit at the minimum rate if the battery has room.
                            let room = (s.capacity_kwh - state.pev.soc_kwh) / (s.charge_eff * dt);
                            rate = if room >= s.min_rate_kw { s.min_rate_kw } else { 0.0 };
                        }
                        rate = rate.min((h.contract.high_kw - h.demand.kw[t]).max(0.0));
                        if rate < s.min_rate_kw {
                            rate = 0.0;
                        }
                        action.charge_pev_kw = rate;
                    }
                }
            }
            apply_slot(h, t, grid.slot_minutes, &mut state, action, ht)?;
        }
    }
    trace.finish();
    Ok(trace)
}

/// Size limit for the centralized problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleLimit {
    pub max_houses: usize,
    pub max_slots: usize,
}

impl Default for ScaleLimit {
    fn default() -> Self {
        Self {
            max_houses: 12,
            max_slots: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedProblemLayout {
    pub houses: Vec<HouseLayout>,
    /// Substation slack per slot.
    pub substation_slack: Vec<VarId>,
}

/// One MILP over the whole horizon: every house's physical constraints, no
/// per-house limits, and a substation slack `Z(t)` on the aggregate.
pub fn build_centralized_milp(
    scenario: &Scenario,
    weights: &ObjectiveWeights,
    limit: ScaleLimit,
) -> Result<(MilpProblem, CentralizedProblemLayout), BaselineError> {
    let grid = &scenario.grid;
    let n = grid.n_slots;
    let u = scenario.houses.len();
    if u > limit.max_houses || n > limit.max_slots {
        return Err(BaselineError::ScaleGuard {
            houses: u,
            slots: n,
            max_houses: limit.max_houses,
            max_slots: limit.max_slots,
        });
    }
    let mut p = MilpProblem::new(ObjectiveSense::Minimize);
    let mut houses = Vec::with_capacity(u);
    for h in &scenario.houses {
        let s = HouseState::initial(h);
        let mut pev = s.pev;
        if let Some(w) = h.pev.as_ref().and_then(|p| p.availability.arrival_at(0)) {
            pev.soc_kwh = w.soc_on_arrival_kwh;
        }
        let layout = add_house_block(&mut p, h, s.ess, pev, 0, n, grid, BlockMode::Centralized);
        for sv in &layout.slots {
            for v in [sv.charge_ess, sv.discharge_ess, sv.charge_pev, sv.discharge_pev] {
                p.add_objective_term(v, weights.wear_weight);
            }
        }
        houses.push(layout);
    }
    let mut substation_slack = Vec::with_capacity(n);
    for t in 0..n {
        let z = p.continuous(format!("Z_{t}"), 0.0, f64::INFINITY);
        let mut above = vec![(z, 1.0)];
        let mut below = vec![(z, 1.0)];
        for layout in &houses {
            above.push((layout.slots[t].net, -1.0));
            below.push((layout.slots[t].net, 1.0));
        }
        p.add_constraint(format!("Zhi_{t}"), &above, Sense::Ge, -scenario.substation.high_kw[t]);
        p.add_constraint(format!("Zlo_{t}"), &below, Sense::Ge, scenario.substation.low_kw[t]);
        p.add_objective_term(z, weights.slack_weight);
        substation_slack.push(z);
    }
    Ok((p, CentralizedProblemLayout { houses, substation_slack }))
}

/// Solves the centralized problem and replays its schedule. Only an optimal
/// solve is marked as a reference (`oracle`).
pub fn run_centralized(
    scenario: &Scenario,
    weights: &ObjectiveWeights,
    budget: SolveBudget,
    limit: ScaleLimit,
) -> Result<RunTrace, BaselineError> {
    ensure_valid(scenario)?;
    let grid = &scenario.grid;
    let n = grid.n_slots;
    let mut trace = RunTrace::new(Strategy::Centralized, scenario);
    let (problem, layout) = build_centralized_milp(scenario, weights, limit)?;
    let sol = solve_milp(&problem, budget)?;
    trace.solver_status = Some(sol.status);
    trace.oracle = sol.status == SolveStatus::Optimal;
    if !sol.has_incumbent() {
        if scenario.houses.is_empty() && sol.status == SolveStatus::Optimal {
            trace.objective = Some(sol.objective);
            trace.finish();
            return Ok(trace);
        }
        return Err(BaselineError::NoSolution(sol.status));
    }
    trace.objective = Some(sol.objective);
    let provenance = if trace.oracle {
        PlanProvenance::Optimal
    } else {
        PlanProvenance::Incumbent
    };
    for ((h, hl), ht) in scenario.houses.iter().zip(&layout.houses).zip(trace.houses.iter_mut()) {
        let bounds = HouseBounds::from_contract(&h.contract, n);
        let mut state = HouseState::initial(h);
        state.arrive(h, 0);
        let inputs = HouseInputs {
            house: h,
            bounds: &bounds,
            ess: state.ess,
            pev: state.pev,
            start_slot: 0,
            grid,
        };
        let plan = extract_plan(&sol, hl, &inputs, provenance)?;
        let mut state = HouseState::initial(h);
        for t in 0..n {
            state.arrive(h, t);
            let action = SlotAction::from_plan(&plan, t).unwrap_or_default();
            ht.provenance[t] = Some(provenance);
            ht.horizon_slots[t] = n;
            apply_slot(h, t, grid.slot_minutes, &mut state, action, ht)?;
        }
        ht.solve_ms[0] = sol.wall_ms;
    }
    trace.finish();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::VarKind;
    use crate::model::{
        BatterySpec, BatteryState, ContractLimits, DemandSeries, Ess, HouseSpec, Pev, PevAvailability, PevWindow,
        SubstationSpec, TimeGrid,
    };

    fn grid(n: usize, slot: u32) -> TimeGrid {
        TimeGrid {
            slot_minutes: slot,
            house_period_minutes: slot,
            substation_period_minutes: slot * 4,
            n_slots: n,
            start_minute: 0,
        }
    }

    fn plain(id: &str, demand: Vec<f64>) -> HouseSpec {
        HouseSpec {
            id: id.into(),
            ess: None,
            pev: None,
            contract: ContractLimits { low_kw: 0.0, high_kw: 10.0 },
            demand: DemandSeries::new(demand),
        }
    }

    fn ess(soc: f64) -> Ess {
        Ess {
            spec: BatterySpec {
                capacity_kwh: 4.0,
                min_rate_kw: 0.0,
                max_rate_kw: 2.0,
                charge_eff: 1.0,
                discharge_eff: 1.0,
            },
            initial: BatteryState::new(soc),
        }
    }

    fn pev(need_kwh: f64) -> Pev {
        Pev {
            spec: BatterySpec {
                capacity_kwh: 10.0,
                min_rate_kw: 0.0,
                max_rate_kw: 4.0,
                charge_eff: 1.0,
                discharge_eff: 1.0,
            },
            initial: BatteryState::new(0.0),
            availability: PevAvailability {
                windows: vec![PevWindow {
                    plug_in_slot: 0,
                    deadline_slot: 8,
                    soc_on_arrival_kwh: 6.0 - need_kwh,
                    target_soc_fraction: 0.6,
                }],
            },
        }
    }

    fn scenario(houses: Vec<HouseSpec>, high: f64, slot: u32) -> Scenario {
        let n = houses.first().map_or(4, |h| h.demand.len());
        Scenario {
            grid: grid(n, slot),
            substation: SubstationSpec::constant(0.0, high, n),
            houses,
            rng_seed: 0,
        }
    }

    #[test]
    fn unmanaged_without_vehicles_is_demand() {
        let s = scenario(vec![plain("a", vec![1.0, 2.0, 3.0, 4.0])], 5.0, 60);
        let t = run_unmanaged(&s).unwrap();
        assert_eq!(t.houses[0].net_kw, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unmanaged_vehicle_charges_until_target() {
        let mut h = plain("a", vec![1.0; 8]);
        h.pev = Some(pev(4.0));
        let s = scenario(vec![h], 50.0, 15);
        let t = run_unmanaged(&s).unwrap();
        assert_eq!(t.houses[0].charge_pev_kw, vec![4.0, 4.0, 4.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((t.houses[0].soc_pev_kwh[7] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unmanaged_vehicle_respects_contract() {
        let mut h = plain("a", vec![8.0; 8]);
        h.pev = Some(pev(4.0));
        let s = scenario(vec![h], 50.0, 15);
        let t = run_unmanaged(&s).unwrap();
        assert_eq!(t.houses[0].net_kw[0], 10.0);
        assert_eq!(t.houses[0].charge_pev_kw[0], 2.0);
    }

    #[test]
    fn centralized_counts() {
        let mut a = plain("a", vec![1.0; 6]);
        a.ess = Some(ess(2.0));
        let mut b = plain("b", vec![1.0; 6]);
        b.ess = Some(ess(2.0));
        b.pev = Some(pev(1.0));
        let s = scenario(vec![a, b], 5.0, 60);
        let (p, layout) = build_centralized_milp(&s, &ObjectiveWeights::default(), ScaleLimit::default()).unwrap();
        assert_eq!(p.n_continuous(), 2 * 6 * 8 + 6);
        assert_eq!(p.n_binaries(), 2 * 6 * 2);
        assert_eq!(layout.substation_slack.len(), 6);
        let too_small = ScaleLimit {
            max_houses: 1,
            max_slots: 96,
        };
        assert!(matches!(
            build_centralized_milp(&s, &ObjectiveWeights::default(), too_small),
            Err(BaselineError::ScaleGuard { .. })
        ));
    }

    #[test]
    fn single_idle_house_has_zero_objective() {
        let s = scenario(vec![plain("a", vec![1.0; 4])], 5.0, 60);
        let t = run_centralized(&s, &ObjectiveWeights::default(), SolveBudget::unlimited(), ScaleLimit::default()).unwrap();
        assert!(t.oracle);
        assert_eq!(t.objective, Some(0.0));
        assert_eq!(t.houses[0].net_kw, vec![1.0; 4]);
    }

    #[test]
    fn one_full_battery_covers_a_shared_peak() {
        let mut a = plain("a", vec![1.0, 3.0]);
        a.ess = Some(ess(4.0));
        let b = plain("b", vec![1.0, 3.0]);
        let s = scenario(vec![a, b], 5.0, 60);
        let w = ObjectiveWeights::default();
        let (p, _) = build_centralized_milp(&s, &w, ScaleLimit::default()).unwrap();
        // Enumerate every binary assignment as an LP.
        let bins: Vec<usize> = (0..p.n_vars()).filter(|&j| p.vars[j].kind == VarKind::Binary).collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << bins.len()) {
            let mut q = p.clone();
            for (k, &j) in bins.iter().enumerate() {
                let v = f64::from((mask >> k) & 1);
                q.vars[j].lower = q.vars[j].lower.max(v.min(q.vars[j].upper));
                q.vars[j].upper = v.max(q.vars[j].lower);
            }
            let r = crate::milp::solve_lp(&q).unwrap();
            if r.status == SolveStatus::Optimal {
                best = best.min(r.objective);
            }
        }
        let t = run_centralized(&s, &w, SolveBudget::unlimited(), ScaleLimit::default()).unwrap();
        assert!((t.objective.unwrap() - best).abs() < 1e-9);
        assert!(t.aggregate_kw.iter().all(|&e| e <= 5.0 + 1e-9), "{:?}", t.aggregate_kw);
        assert!(best < 1e-3);
    }

    #[test]
    fn empty_scenario_is_all_zero() {
        let s = Scenario {
            grid: grid(4, 60),
            substation: SubstationSpec::constant(0.0, 1.0, 4),
            houses: vec![],
            rng_seed: 0,
        };
        let t = run_centralized(&s, &ObjectiveWeights::default(), SolveBudget::unlimited(), ScaleLimit::default()).unwrap();
        assert_eq!(t.aggregate_kw, vec![0.0; 4]);
    }

    #[test]
    fn zero_budget_is_not_a_reference() {
        let mut a = plain("a", vec![1.0, 6.0]);
        a.ess = Some(ess(4.0));
        let s = scenario(vec![a], 5.0, 60);
        let r = run_centralized(&s, &ObjectiveWeights::default(), SolveBudget::deadline(0), ScaleLimit::default());
        match r {
            Ok(t) => assert!(!t.oracle),
            Err(BaselineError::NoSolution(st)) => assert_eq!(st, SolveStatus::TimedOut),
            Err(e) => panic!("{e}"),
        }
    }
}
