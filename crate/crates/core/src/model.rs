//! Domain types shared by every layer: time grid, batteries, houses, the
//! substation envelope, and the per-house plan produced by controllers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance (kWh) when checking a state of charge against its limits.
pub const SOC_TOLERANCE_KWH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state of charge {soc_kwh} kWh outside [0, {capacity_kwh}]")]
    SocOutOfRange { soc_kwh: f64, capacity_kwh: f64 },
    #[error("invalid battery action: {0}")]
    InvalidAction(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Discretisation of the simulated period.
///
/// Slots last `slot_minutes`; houses re-plan every `house_period_minutes` and
/// the substation re-allocates every `substation_period_minutes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slot_minutes: u32,
    pub house_period_minutes: u32,
    pub substation_period_minutes: u32,
    pub n_slots: usize,
    pub start_minute: i64,
}

impl TimeGrid {
    pub fn slot_hours(&self) -> f64 {
        f64::from(self.slot_minutes) / 60.0
    }

    /// Number of slots covered by one substation period.
    pub fn substation_horizon(&self) -> usize {
        (self.substation_period_minutes / self.slot_minutes.max(1)) as usize
    }

    /// Number of slots between two house decisions.
    pub fn house_stride(&self) -> usize {
        (self.house_period_minutes / self.slot_minutes.max(1)) as usize
    }

    pub fn is_coordination_slot(&self, slot: usize) -> bool {
        (slot as u64 * u64::from(self.slot_minutes)).is_multiple_of(u64::from(self.substation_period_minutes))
    }

    pub fn is_decision_slot(&self, slot: usize) -> bool {
        (slot as u64 * u64::from(self.slot_minutes)).is_multiple_of(u64::from(self.house_period_minutes))
    }

    /// Minute-of-day of the start of `slot`.
    pub fn minute_of_day(&self, slot: usize) -> i64 {
        (self.start_minute + slot as i64 * i64::from(self.slot_minutes)).rem_euclid(1440)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub capacity_kwh: f64,
    pub min_rate_kw: f64,
    pub max_rate_kw: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
}

impl BatterySpec {
    /// Energy stored per kW of grid-side charging over one slot.
    pub fn stored_per_kw(&self, slot_hours: f64) -> f64 {
        self.charge_eff * slot_hours
    }

    /// Energy drained per kW of house-side discharge over one slot.
    pub fn drained_per_kw(&self, slot_hours: f64) -> f64 {
        slot_hours / self.discharge_eff
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all = [
            self.capacity_kwh,
            self.min_rate_kw,
            self.max_rate_kw,
            self.charge_eff,
            self.discharge_eff,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            out.push("non-finite battery parameter".to_string());
            return out;
        }
        if self.capacity_kwh <= 0.0 {
            out.push(format!("capacity_kwh must be > 0, got {}", self.capacity_kwh));
        }
        if self.min_rate_kw < 0.0 || self.min_rate_kw > self.max_rate_kw {
            out.push(format!(
                "rates must satisfy 0 <= min ({}) <= max ({})",
                self.min_rate_kw, self.max_rate_kw
            ));
        }
        for (name, eff) in [("charge_eff", self.charge_eff), ("discharge_eff", self.discharge_eff)] {
            if !(eff > 0.0 && eff <= 1.0) {
                out.push(format!("{name} must be in (0, 1], got {eff}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc_kwh: f64,
}

impl BatteryState {
    pub fn new(soc_kwh: f64) -> Self {
        Self { soc_kwh }
    }
}

/// One plug-in period of the vehicle: plugged from `plug_in_slot` (inclusive)
/// to `deadline_slot` (exclusive). The target must be reached by the start of
/// `deadline_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PevWindow {
    pub plug_in_slot: usize,
    pub deadline_slot: usize,
    pub soc_on_arrival_kwh: f64,
    pub target_soc_fraction: f64,
}

impl PevWindow {
    pub fn contains(&self, slot: usize) -> bool {
        slot >= self.plug_in_slot && slot < self.deadline_slot
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PevAvailability {
    pub windows: Vec<PevWindow>,
}

impl PevAvailability {
    pub fn window_at(&self, slot: usize) -> Option<&PevWindow> {
        self.windows.iter().find(|w| w.contains(slot))
    }

    pub fn is_plugged(&self, slot: usize) -> bool {
        self.window_at(slot).is_some()
    }

    pub fn arrival_at(&self, slot: usize) -> Option<&PevWindow> {
        self.windows.iter().find(|w| w.plug_in_slot == slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractLimits {
    pub low_kw: f64,
    pub high_kw: f64,
}

impl ContractLimits {
    pub fn clamp(&self, kw: f64) -> f64 {
        kw.clamp(self.low_kw, self.high_kw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ess {
    pub spec: BatterySpec,
    pub initial: BatteryState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pev {
    pub spec: BatterySpec,
    pub initial: BatteryState,
    pub availability: PevAvailability,
}

/// Forecast of the uncontrollable base load, one value per slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandSeries {
    pub kw: Vec<f64>,
}

impl DemandSeries {
    pub fn new(kw: Vec<f64>) -> Self {
        Self { kw }
    }

    pub fn len(&self) -> usize {
        self.kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kw.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseSpec {
    pub id: String,
    pub ess: Option<Ess>,
    pub pev: Option<Pev>,
    pub contract: ContractLimits,
    pub demand: DemandSeries,
}

impl HouseSpec {
    pub fn max_ess_rate(&self) -> f64 {
        self.ess.as_ref().map_or(0.0, |e| e.spec.max_rate_kw)
    }

    pub fn max_pev_rate(&self) -> f64 {
        self.pev.as_ref().map_or(0.0, |p| p.spec.max_rate_kw)
    }

    pub fn is_pev_plugged(&self, slot: usize) -> bool {
        self.pev
            .as_ref()
            .is_some_and(|p| p.availability.is_plugged(slot))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstationSpec {
    pub low_kw: Vec<f64>,
    pub high_kw: Vec<f64>,
}

impl SubstationSpec {
    pub fn constant(low_kw: f64, high_kw: f64, n_slots: usize) -> Self {
        Self {
            low_kw: vec![low_kw; n_slots],
            high_kw: vec![high_kw; n_slots],
        }
    }
}

/// Per-house power limits assigned by the coordinator, covering slots
/// `start_slot .. start_slot + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseBounds {
    pub start_slot: usize,
    pub low_kw: Vec<f64>,
    pub high_kw: Vec<f64>,
}

impl HouseBounds {
    /// Bounds equal to the contract limits for every slot of a scenario.
    pub fn from_contract(contract: &ContractLimits, n_slots: usize) -> Self {
        Self {
            start_slot: 0,
            low_kw: vec![contract.low_kw; n_slots],
            high_kw: vec![contract.high_kw; n_slots],
        }
    }

    pub fn uniform(low_kw: f64, high_kw: f64, start_slot: usize, len: usize) -> Self {
        Self {
            start_slot,
            low_kw: vec![low_kw; len],
            high_kw: vec![high_kw; len],
        }
    }

    pub fn len(&self) -> usize {
        self.low_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low_kw.is_empty()
    }

    pub fn covers(&self, slot: usize) -> bool {
        slot >= self.start_slot && slot < self.start_slot + self.len()
    }

    /// `(low, high)` at an absolute slot.
    ///
    /// Panics when the slot is outside the covered range.
    pub fn at(&self, slot: usize) -> (f64, f64) {
        let k = slot - self.start_slot;
        (self.low_kw[k], self.high_kw[k])
    }

    /// Overwrite the covered part of `self` with the values in `other`.
    pub fn overlay(&mut self, other: &HouseBounds) {
        for k in 0..other.len() {
            let slot = other.start_slot + k;
            if self.covers(slot) {
                let i = slot - self.start_slot;
                self.low_kw[i] = other.low_kw[k];
                self.high_kw[i] = other.high_kw[k];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanProvenance {
    Optimal,
    Incumbent,
    Greedy,
}

impl fmt::Display for PlanProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanProvenance::Optimal => "optimal",
            PlanProvenance::Incumbent => "incumbent",
            PlanProvenance::Greedy => "greedy",
        })
    }
}

/// Schedule for one house over `start_slot .. start_slot + len()`.
///
/// SOC values are end-of-slot states.
#[derive(Debug, Clone, PartialEq)]
pub struct HousePlan {
    pub start_slot: usize,
    pub charge_ess_kw: Vec<f64>,
    pub discharge_ess_kw: Vec<f64>,
    pub charge_pev_kw: Vec<f64>,
    pub discharge_pev_kw: Vec<f64>,
    pub net_ess_kw: Vec<f64>,
    pub soc_ess_kwh: Vec<f64>,
    pub soc_pev_kwh: Vec<f64>,
    pub net_demand_kw: Vec<f64>,
    pub slack_kw: Vec<f64>,
    pub mode_ess: Vec<bool>,
    pub mode_pev: Vec<bool>,
    pub ind_low: Vec<bool>,
    pub ind_high: Vec<bool>,
    pub ind_in: Vec<bool>,
    pub provenance: PlanProvenance,
}

impl HousePlan {
    pub fn with_len(start_slot: usize, len: usize, provenance: PlanProvenance) -> Self {
        Self {
            start_slot,
            charge_ess_kw: vec![0.0; len],
            discharge_ess_kw: vec![0.0; len],
            charge_pev_kw: vec![0.0; len],
            discharge_pev_kw: vec![0.0; len],
            net_ess_kw: vec![0.0; len],
            soc_ess_kwh: vec![0.0; len],
            soc_pev_kwh: vec![0.0; len],
            net_demand_kw: vec![0.0; len],
            slack_kw: vec![0.0; len],
            mode_ess: vec![false; len],
            mode_pev: vec![false; len],
            ind_low: vec![false; len],
            ind_high: vec![false; len],
            ind_in: vec![false; len],
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.net_demand_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net_demand_kw.is_empty()
    }

    /// Largest violation of `e = d + charging - discharging` over the plan.
    pub fn balance_residual(&self, demand: &DemandSeries) -> f64 {
        (0..self.len())
            .map(|k| {
                let d = demand.kw[self.start_slot + k];
                let expected = d + self.charge_ess_kw[k] + self.charge_pev_kw[k]
                    - self.discharge_ess_kw[k]
                    - self.discharge_pev_kw[k];
                (self.net_demand_kw[k] - expected).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Fills `net_ess_kw`, `net_demand_kw`, `slack_kw` and the indicator flags
    /// from the action vectors.
    pub fn recompute_derived(&mut self, demand: &DemandSeries, bounds: &HouseBounds) {
        for k in 0..self.len() {
            let slot = self.start_slot + k;
            self.net_ess_kw[k] = self.charge_ess_kw[k] - self.discharge_ess_kw[k];
            let e = demand.kw[slot] + self.charge_ess_kw[k] + self.charge_pev_kw[k]
                - self.discharge_ess_kw[k]
                - self.discharge_pev_kw[k];
            self.net_demand_kw[k] = e;
            let (low, high) = bounds.at(slot);
            self.slack_kw[k] = (e - high).max(low - e).max(0.0);
            self.ind_low[k] = e >= low - 1e-9;
            self.ind_high[k] = e <= high + 1e-9;
            self.ind_in[k] = self.ind_low[k] && self.ind_high[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub substation: SubstationSpec,
    pub houses: Vec<HouseSpec>,
    pub rng_seed: u64,
}

/// Advance a battery by one slot.
///
/// Charging draws `charge_kw` from the grid and stores `charge_eff` of it;
/// discharging delivers `discharge_kw` to the house and drains
/// `discharge_kw / discharge_eff`.
pub fn soc_step(
    state: BatteryState,
    spec: &BatterySpec,
    charge_kw: f64,
    discharge_kw: f64,
    slot_minutes: u32,
) -> Result<BatteryState, ModelError> {
    let rate_tol = 1e-9 * spec.max_rate_kw.max(1.0);
    if !(charge_kw.is_finite() && discharge_kw.is_finite()) {
        return Err(ModelError::InvalidAction("non-finite rate".into()));
    }
    if charge_kw < -rate_tol || discharge_kw < -rate_tol {
        return Err(ModelError::InvalidAction(format!(
            "negative rate (charge {charge_kw}, discharge {discharge_kw})"
        )));
    }
    if charge_kw > spec.max_rate_kw + rate_tol || discharge_kw > spec.max_rate_kw + rate_tol {
        return Err(ModelError::InvalidAction(format!(
            "rate above {} kW (charge {charge_kw}, discharge {discharge_kw})",
            spec.max_rate_kw
        )));
    }
    if charge_kw > rate_tol && discharge_kw > rate_tol {
        return Err(ModelError::InvalidAction(
            "simultaneous charge and discharge".into(),
        ));
    }
    let hours = f64::from(slot_minutes) / 60.0;
    let soc = state.soc_kwh + (spec.charge_eff * charge_kw - discharge_kw / spec.discharge_eff) * hours;
    if soc < -SOC_TOLERANCE_KWH || soc > spec.capacity_kwh + SOC_TOLERANCE_KWH {
        return Err(ModelError::SocOutOfRange {
            soc_kwh: soc,
            capacity_kwh: spec.capacity_kwh,
        });
    }
    Ok(BatteryState::new(soc.clamp(0.0, spec.capacity_kwh)))
}

/// Element-wise sum of per-house series; the result has `n_slots` entries.
pub fn aggregate_demand(
    scenario: &Scenario,
    per_house_kw: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<f64>, ModelError> {
    let n = scenario.grid.n_slots;
    let mut total = vec![0.0; n];
    for series in per_house_kw.values() {
        if series.len() != n {
            return Err(ModelError::LengthMismatch {
                expected: n,
                got: series.len(),
            });
        }
        for (acc, v) in total.iter_mut().zip(series) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Slice-based aggregation used by the simulator and metrics.
pub fn sum_series<S: AsRef<[f64]>>(series: &[S], n_slots: usize) -> Vec<f64> {
    let mut total = vec![0.0; n_slots];
    for s in series {
        for (acc, v) in total.iter_mut().zip(s.as_ref()) {
            *acc += v;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    LengthMismatch,
    NonFinite,
    InvalidGrid,
    InvalidBattery,
    InvalidState,
    InvalidWindow,
    InvalidBounds,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub house: Option<String>,
    pub slot: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}", self.kind, self.field)?;
        if let Some(h) = &self.house {
            write!(f, " (house {h})")?;
        }
        if let Some(s) = self.slot {
            write!(f, " (slot {s})")?;
        }
        write!(f, ": {}", self.message)
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn push(
        &mut self,
        kind: ViolationKind,
        house: Option<&str>,
        slot: Option<usize>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) {
        self.0.push(Violation {
            kind,
            house: house.map(str::to_string),
            slot,
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Checks every structural invariant of a scenario. An empty result means the
/// scenario is valid.
pub fn validate_scenario(scenario: &Scenario) -> Vec<Violation> {
    let mut r = Report(Vec::new());
    let g = &scenario.grid;
    let n = g.n_slots;

    if g.slot_minutes == 0 || g.house_period_minutes == 0 || g.substation_period_minutes == 0 {
        r.push(ViolationKind::InvalidGrid, None, None, "time", "periods must be positive");
    } else {
        if !g.house_period_minutes.is_multiple_of(g.slot_minutes) {
            r.push(
                ViolationKind::InvalidGrid,
                None,
                None,
                "time.house_period_minutes",
                "must be a multiple of slot_minutes",
            );
        }
        if !g.substation_period_minutes.is_multiple_of(g.house_period_minutes) {
            r.push(
                ViolationKind::InvalidGrid,
                None,
                None,
                "time.substation_period_minutes",
                "must be a multiple of house_period_minutes",
            );
        }
    }
    if n == 0 {
        r.push(ViolationKind::InvalidGrid, None, None, "time.n_slots", "must be positive");
    }

    let sub = &scenario.substation;
    for (name, series) in [("substation.low_kw", &sub.low_kw), ("substation.high_kw", &sub.high_kw)] {
        if series.len() != n {
            r.push(
                ViolationKind::LengthMismatch,
                None,
                None,
                name,
                format!("expected {n} values, got {}", series.len()),
            );
        }
        if let Some(t) = series.iter().position(|v| v.is_nan()) {
            r.push(ViolationKind::NonFinite, None, Some(t), name, "NaN bound");
        }
    }
    for (t, (lo, hi)) in sub.low_kw.iter().zip(&sub.high_kw).enumerate() {
        if lo > hi {
            r.push(
                ViolationKind::InvalidBounds,
                None,
                Some(t),
                "substation",
                format!("low {lo} > high {hi}"),
            );
        }
    }

    let mut seen = BTreeSet::new();
    for h in &scenario.houses {
        let id = Some(h.id.as_str());
        if !seen.insert(h.id.clone()) {
            r.push(ViolationKind::DuplicateId, id, None, "houses.id", "duplicate house id");
        }
        if !(h.contract.low_kw.is_finite() && h.contract.high_kw.is_finite())
            || h.contract.low_kw > h.contract.high_kw
        {
            r.push(
                ViolationKind::InvalidBounds,
                id,
                None,
                "contract",
                format!("need finite low <= high, got [{}, {}]", h.contract.low_kw, h.contract.high_kw),
            );
        }
        if h.demand.len() != n {
            r.push(
                ViolationKind::LengthMismatch,
                id,
                None,
                "demand",
                format!("expected {n} values, got {}", h.demand.len()),
            );
        }
        if let Some(t) = h.demand.kw.iter().position(|v| !v.is_finite()) {
            r.push(ViolationKind::NonFinite, id, Some(t), "demand", "non-finite demand");
        }
        if let Some(ess) = &h.ess {
            for msg in ess.spec.problems() {
                r.push(ViolationKind::InvalidBattery, id, None, "ess", msg);
            }
            check_state(&mut r, id, "ess.initial_soc_kwh", ess.initial, &ess.spec);
        }
        if let Some(pev) = &h.pev {
            for msg in pev.spec.problems() {
                r.push(ViolationKind::InvalidBattery, id, None, "pev", msg);
            }
            check_state(&mut r, id, "pev.initial_soc_kwh", pev.initial, &pev.spec);
            let mut prev_end = 0usize;
            for (i, w) in pev.availability.windows.iter().enumerate() {
                let field = format!("pev.windows[{i}]");
                if w.plug_in_slot >= w.deadline_slot || w.deadline_slot > n {
                    r.push(
                        ViolationKind::InvalidWindow,
                        id,
                        Some(w.plug_in_slot),
                        field.clone(),
                        format!(
                            "need plug_in_slot < deadline_slot <= n_slots, got {}..{}",
                            w.plug_in_slot, w.deadline_slot
                        ),
                    );
                }
                if i > 0 && w.plug_in_slot < prev_end {
                    r.push(
                        ViolationKind::InvalidWindow,
                        id,
                        Some(w.plug_in_slot),
                        field.clone(),
                        "windows overlap or are out of order",
                    );
                }
                prev_end = w.deadline_slot;
                if !(w.soc_on_arrival_kwh >= 0.0 && w.soc_on_arrival_kwh <= pev.spec.capacity_kwh) {
                    r.push(
                        ViolationKind::InvalidWindow,
                        id,
                        Some(w.plug_in_slot),
                        field.clone(),
                        format!("soc_on_arrival_kwh {} outside capacity", w.soc_on_arrival_kwh),
                    );
                }
                if !(0.0..=1.0).contains(&w.target_soc_fraction) {
                    r.push(
                        ViolationKind::InvalidWindow,
                        id,
                        Some(w.plug_in_slot),
                        field,
                        format!("target_soc_fraction {} outside [0, 1]", w.target_soc_fraction),
                    );
                }
            }
        }
    }
    r.0
}

fn check_state(r: &mut Report, house: Option<&str>, field: &str, state: BatteryState, spec: &BatterySpec) {
    if !(state.soc_kwh >= 0.0 && state.soc_kwh <= spec.capacity_kwh) {
        r.push(
            ViolationKind::InvalidState,
            house,
            None,
            field,
            format!("{} kWh outside [0, {}]", state.soc_kwh, spec.capacity_kwh),
        );
    }
}
