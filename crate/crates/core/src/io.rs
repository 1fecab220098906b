//! Scenario files (JSON) and CSV series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::RunMetrics;
use crate::model::{
    validate_scenario, BatterySpec, BatteryState, ContractLimits, DemandSeries, Ess, HouseSpec, Pev,
    PevAvailability, PevWindow, PlanProvenance, Scenario, SubstationSpec, TimeGrid, Violation,
};
use crate::sim::{RunTrace, Strategy};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error at '{path}': {message}")]
    Schema { path: String, message: String },
    #[error("{path}: line {line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error("invalid scenario: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

/// A per-slot series or a scalar broadcast to every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesOrScalar {
    Scalar(f64),
    Series(Vec<f64>),
}

impl SeriesOrScalar {
    fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            SeriesOrScalar::Scalar(x) => vec![*x; n],
            SeriesOrScalar::Series(v) => v.clone(),
        }
    }

    fn compact(v: &[f64]) -> Self {
        match v.first() {
            Some(&x) if v.iter().all(|&y| y == x) => SeriesOrScalar::Scalar(x),
            _ => SeriesOrScalar::Series(v.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub slot_minutes: u32,
    pub house_period_minutes: u32,
    pub substation_period_minutes: u32,
    pub n_slots: usize,
    /// Minute of day at which slot 0 starts.
    #[serde(default)]
    pub start_minute: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstationSection {
    pub low_kw: SeriesOrScalar,
    pub high_kw: SeriesOrScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSection {
    pub low_kw: f64,
    pub high_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssSection {
    pub capacity_kwh: f64,
    pub min_rate_kw: f64,
    pub max_rate_kw: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub initial_soc_kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub plug_in_slot: usize,
    pub deadline_slot: usize,
    pub soc_on_arrival_kwh: f64,
    pub target_soc_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PevSection {
    pub capacity_kwh: f64,
    pub min_rate_kw: f64,
    pub max_rate_kw: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub initial_soc_kwh: f64,
    pub windows: Vec<WindowSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseSection {
    pub id: String,
    pub contract: ContractSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<EssSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pev: Option<PevSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub time: TimeSection,
    pub substation: SubstationSection,
    pub houses: Vec<HouseSection>,
    pub seed: u64,
}

fn spec_of(capacity_kwh: f64, min_rate_kw: f64, max_rate_kw: f64, charge_eff: f64, discharge_eff: f64) -> BatterySpec {
    BatterySpec {
        capacity_kwh,
        min_rate_kw,
        max_rate_kw,
        charge_eff,
        discharge_eff,
    }
}

impl ScenarioFile {
    /// Builds the scenario, reading any demand CSV relative to `base_dir`.
    pub fn into_scenario(self, base_dir: &Path) -> Result<Scenario, IoError> {
        let n = self.time.n_slots;
        let grid = TimeGrid {
            slot_minutes: self.time.slot_minutes,
            house_period_minutes: self.time.house_period_minutes,
            substation_period_minutes: self.time.substation_period_minutes,
            n_slots: n,
            start_minute: self.time.start_minute,
        };
        let substation = SubstationSpec {
            low_kw: self.substation.low_kw.expand(n),
            high_kw: self.substation.high_kw.expand(n),
        };
        let mut houses = Vec::with_capacity(self.houses.len());
        for (i, h) in self.houses.into_iter().enumerate() {
            let demand = match (h.demand, h.demand_csv) {
                (Some(d), None) => d,
                (None, Some(p)) => read_demand_csv(&base_dir.join(p))?,
                _ => {
                    return Err(IoError::Schema {
                        path: format!("houses[{i}]"),
                        message: "exactly one of 'demand' and 'demand_csv' is required".into(),
                    })
                }
            };
            let ess = h.ess.map(|e| Ess {
                spec: spec_of(e.capacity_kwh, e.min_rate_kw, e.max_rate_kw, e.charge_eff, e.discharge_eff),
                initial: BatteryState::new(e.initial_soc_kwh),
            });
            let pev = h.pev.map(|p| Pev {
                spec: spec_of(p.capacity_kwh, p.min_rate_kw, p.max_rate_kw, p.charge_eff, p.discharge_eff),
                initial: BatteryState::new(p.initial_soc_kwh),
                availability: PevAvailability {
                    windows: p
                        .windows
                        .into_iter()
                        .map(|w| PevWindow {
                            plug_in_slot: w.plug_in_slot,
                            deadline_slot: w.deadline_slot,
                            soc_on_arrival_kwh: w.soc_on_arrival_kwh,
                            target_soc_fraction: w.target_soc_fraction,
                        })
                        .collect(),
                },
            });
            houses.push(HouseSpec {
                id: h.id,
                ess,
                pev,
                contract: ContractLimits {
                    low_kw: h.contract.low_kw,
                    high_kw: h.contract.high_kw,
                },
                demand: DemandSeries::new(demand),
            });
        }
        Ok(Scenario {
            grid,
            substation,
            houses,
            rng_seed: self.seed,
        })
    }

    /// File form of a scenario with demand stored inline.
    pub fn from_scenario(s: &Scenario) -> Self {
        let battery = |b: &BatterySpec, soc: f64| EssSection {
            capacity_kwh: b.capacity_kwh,
            min_rate_kw: b.min_rate_kw,
            max_rate_kw: b.max_rate_kw,
            charge_eff: b.charge_eff,
            discharge_eff: b.discharge_eff,
            initial_soc_kwh: soc,
        };
        Self {
            time: TimeSection {
                slot_minutes: s.grid.slot_minutes,
                house_period_minutes: s.grid.house_period_minutes,
                substation_period_minutes: s.grid.substation_period_minutes,
                n_slots: s.grid.n_slots,
                start_minute: s.grid.start_minute,
            },
            substation: SubstationSection {
                low_kw: SeriesOrScalar::compact(&s.substation.low_kw),
                high_kw: SeriesOrScalar::compact(&s.substation.high_kw),
            },
            houses: s
                .houses
                .iter()
                .map(|h| HouseSection {
                    id: h.id.clone(),
                    contract: ContractSection {
                        low_kw: h.contract.low_kw,
                        high_kw: h.contract.high_kw,
                    },
                    ess: h.ess.as_ref().map(|e| battery(&e.spec, e.initial.soc_kwh)),
                    pev: h.pev.as_ref().map(|p| {
                        let b = battery(&p.spec, p.initial.soc_kwh);
                        PevSection {
                            capacity_kwh: b.capacity_kwh,
                            min_rate_kw: b.min_rate_kw,
                            max_rate_kw: b.max_rate_kw,
                            charge_eff: b.charge_eff,
                            discharge_eff: b.discharge_eff,
                            initial_soc_kwh: b.initial_soc_kwh,
                            windows: p
                                .availability
                                .windows
                                .iter()
                                .map(|w| WindowSection {
                                    plug_in_slot: w.plug_in_slot,
                                    deadline_slot: w.deadline_slot,
                                    soc_on_arrival_kwh: w.soc_on_arrival_kwh,
                                    target_soc_fraction: w.target_soc_fraction,
                                })
                                .collect(),
                        }
                    }),
                    demand_csv: None,
                    demand: Some(h.demand.kw.clone()),
                })
                .collect(),
            seed: s.rng_seed,
        }
    }
}

/// Parses a scenario document without touching the file system.
pub fn parse_scenario_file(text: &str) -> Result<ScenarioFile, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: Result<ScenarioFile, _> = serde_path_to_error::deserialize(de);
    let err = match parsed {
        Ok(f) => return Ok(f),
        Err(e) => e,
    };
    let path = err.path().to_string();
    let inner = err.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        return Err(IoError::Parse {
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        });
    }
    let message = inner.to_string();
    // Missing keys are reported at their parent; name the key itself.
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    let path = match (missing, path.as_str()) {
        (Some(key), ".") => key.to_string(),
        (Some(key), parent) => format!("{parent}.{key}"),
        (None, p) => p.to_string(),
    };
    Err(IoError::Schema { path, message })
}

/// Parses a scenario document and validates the result. Relative demand CSV
/// paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, IoError> {
    let scenario = parse_scenario_file(text)?.into_scenario(base_dir)?;
    let violations = validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(IoError::Validation(violations));
    }
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    let mut s = serde_json::to_string_pretty(&ScenarioFile::from_scenario(scenario)).expect("scenario serializes");
    s.push('\n');
    s
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), IoError> {
    write_file(path, scenario_to_json(scenario).as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, bytes).map_err(wrap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DemandRow {
    slot: usize,
    kw: f64,
}

fn csv_error(path: &str, e: &csv::Error) -> IoError {
    IoError::Csv {
        path: path.to_string(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Reads a `slot,kw` series with contiguous 0-based slots.
pub fn parse_demand_csv(text: &str, name: &str) -> Result<Vec<f64>, IoError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(name, &e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "kw"] {
        return Err(IoError::Csv {
            path: name.to_string(),
            line: 1,
            message: format!("expected header 'slot,kw', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<DemandRow>() {
        let row = row.map_err(|e| csv_error(name, &e))?;
        if row.slot != out.len() {
            return Err(IoError::Csv {
                path: name.to_string(),
                line: out.len() as u64 + 2,
                message: format!("expected slot {}, found {}", out.len(), row.slot),
            });
        }
        out.push(row.kw);
    }
    Ok(out)
}

pub fn read_demand_csv(path: &Path) -> Result<Vec<f64>, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_demand_csv(&text, &path.display().to_string())
}

pub fn demand_csv(kw: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (slot, &kw) in kw.iter().enumerate() {
        w.serialize(DemandRow { slot, kw }).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// One row of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub house: String,
    pub demand_kw: f64,
    pub net_kw: f64,
    pub charge_ess_kw: f64,
    pub discharge_ess_kw: f64,
    pub charge_pev_kw: f64,
    pub discharge_pev_kw: f64,
    pub soc_ess_kwh: f64,
    pub soc_pev_kwh: f64,
    pub bound_low_kw: f64,
    pub bound_high_kw: f64,
    pub provenance: Option<PlanProvenance>,
    pub horizon_slots: usize,
    pub solve_ms: u64,
}

pub fn trace_rows(trace: &RunTrace) -> Vec<TraceRow> {
    let mut rows = Vec::with_capacity(trace.n_slots() * trace.houses.len());
    for t in 0..trace.n_slots() {
        for h in &trace.houses {
            rows.push(TraceRow {
                slot: t,
                house: h.id.clone(),
                demand_kw: h.demand_kw[t],
                net_kw: h.net_kw[t],
                charge_ess_kw: h.charge_ess_kw[t],
                discharge_ess_kw: h.discharge_ess_kw[t],
                charge_pev_kw: h.charge_pev_kw[t],
                discharge_pev_kw: h.discharge_pev_kw[t],
                soc_ess_kwh: h.soc_ess_kwh[t],
                soc_pev_kwh: h.soc_pev_kwh[t],
                bound_low_kw: h.bound_low_kw[t],
                bound_high_kw: h.bound_high_kw[t],
                provenance: h.provenance[t],
                horizon_slots: h.horizon_slots[t],
                solve_ms: h.solve_ms[t],
            });
        }
    }
    rows
}

/// Per-strategy metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub strategy: Strategy,
    pub violation_kwh: f64,
    pub slots_out_of_bounds: usize,
    pub efficiency: f64,
    /// Filled on the hierarchical row when a reference exists.
    pub efficiency_ratio: Option<f64>,
    pub oracle: Option<bool>,
}

pub fn metrics_rows(m: &RunMetrics) -> Vec<MetricsRow> {
    let mut rows = vec![
        MetricsRow {
            strategy: Strategy::Unmanaged,
            violation_kwh: m.unmanaged.violation_kwh,
            slots_out_of_bounds: m.unmanaged.slots_out_of_bounds,
            efficiency: m.unmanaged.efficiency,
            efficiency_ratio: None,
            oracle: None,
        },
        MetricsRow {
            strategy: Strategy::Hierarchical,
            violation_kwh: m.hierarchical.violation_kwh,
            slots_out_of_bounds: m.hierarchical.slots_out_of_bounds,
            efficiency: m.hierarchical.efficiency,
            efficiency_ratio: m.efficiency_ratio,
            oracle: None,
        },
    ];
    if let Some(c) = &m.centralized {
        rows.push(MetricsRow {
            strategy: Strategy::Centralized,
            violation_kwh: c.violation_kwh,
            slots_out_of_bounds: c.slots_out_of_bounds,
            efficiency: c.efficiency,
            efficiency_ratio: None,
            oracle: Some(m.centralized_oracle),
        });
    }
    rows
}

/// Aggregate of each strategy next to the substation bounds, per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub slot: usize,
    pub minute_of_day: i64,
    pub substation_low_kw: f64,
    pub substation_high_kw: f64,
    pub unmanaged_kw: Option<f64>,
    pub hierarchical_kw: Option<f64>,
    pub centralized_kw: Option<f64>,
    pub conflict: bool,
}

pub fn report_rows(scenario: &Scenario, traces: &[&RunTrace]) -> Vec<ReportRow> {
    let pick = |s: Strategy, t: usize| traces.iter().find(|tr| tr.strategy == s).map(|tr| tr.aggregate_kw[t]);
    (0..scenario.grid.n_slots)
        .map(|t| ReportRow {
            slot: t,
            minute_of_day: scenario.grid.minute_of_day(t),
            substation_low_kw: scenario.substation.low_kw[t],
            substation_high_kw: scenario.substation.high_kw[t],
            unmanaged_kw: pick(Strategy::Unmanaged, t),
            hierarchical_kw: pick(Strategy::Hierarchical, t),
            centralized_kw: pick(Strategy::Centralized, t),
            conflict: traces
                .iter()
                .any(|tr| tr.strategy == Strategy::Hierarchical && tr.conflict[t]),
        })
        .collect()
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn from_csv<R: for<'de> Deserialize<'de>>(text: &str, name: &str) -> Result<Vec<R>, IoError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(name, &e)))
        .collect()
}
