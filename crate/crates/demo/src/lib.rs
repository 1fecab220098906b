//! Browser bindings for the gridbound simulator.
//!
//! Every export takes plain numbers or a JSON string and returns JSON, so the
//! page needs no generated types.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use gridbound::cli::{compare, ControlArgs};
use gridbound::coordinator::{allocate_bounds, compute_exceedance, FlexibilityWeight};
use gridbound::model::{
    soc_step, BatterySpec, BatteryState, ContractLimits, DemandSeries, HouseSpec, SubstationSpec,
};
use gridbound::synth::{generate_synthetic, Profile};

#[derive(Serialize)]
struct StrategySeries {
    name: String,
    aggregate_kw: Vec<f64>,
    violation_kwh: f64,
    efficiency: f64,
}

#[derive(Serialize)]
struct Simulation {
    slot_minutes: u32,
    start_minute: i64,
    substation_low_kw: Vec<f64>,
    substation_high_kw: Vec<f64>,
    strategies: Vec<StrategySeries>,
    efficiency_ratio: Option<f64>,
    summary: String,
}

/// Generates a scenario and runs every strategy on it.
pub fn simulate_json(
    houses: usize,
    slots: usize,
    seed: u64,
    profile: &str,
    deadline_ms: u64,
    centralized: bool,
) -> Result<String, String> {
    let profile: Profile = profile.parse()?;
    let scenario = generate_synthetic(houses, slots, seed, profile);
    let control = ControlArgs {
        deadline_ms,
        no_centralized: !centralized,
        ..ControlArgs::default()
    };
    let (traces, m) = compare(&scenario, &control).map_err(|e| e.to_string())?;
    let per = [Some(&m.unmanaged), Some(&m.hierarchical), m.centralized.as_ref()];
    let strategies = traces
        .iter()
        .zip(per.into_iter().flatten())
        .map(|(t, s)| StrategySeries {
            name: t.strategy.name().to_string(),
            aggregate_kw: t.aggregate_kw.clone(),
            violation_kwh: s.violation_kwh,
            efficiency: s.efficiency,
        })
        .collect();
    let out = Simulation {
        slot_minutes: scenario.grid.slot_minutes,
        start_minute: scenario.grid.start_minute,
        substation_low_kw: scenario.substation.low_kw.clone(),
        substation_high_kw: scenario.substation.high_kw.clone(),
        strategies,
        efficiency_ratio: m.efficiency_ratio,
        summary: gridbound::cli::summary(&scenario, &m),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct PreviewInput {
    forecast_kw: Vec<f64>,
    down_kw: Vec<f64>,
    up_kw: Vec<f64>,
    #[serde(default = "default_contract")]
    contract_high_kw: f64,
    substation_low_kw: f64,
    substation_high_kw: f64,
}

fn default_contract() -> f64 {
    10.0
}

#[derive(Serialize)]
struct Preview {
    low_kw: Vec<f64>,
    high_kw: Vec<f64>,
    conflicts: Vec<String>,
}

/// Splits one slot of a substation envelope among houses.
pub fn allocation_preview_json(input: &str) -> Result<String, String> {
    let p: PreviewInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let n = p.forecast_kw.len();
    if p.down_kw.len() != n || p.up_kw.len() != n {
        return Err(format!("expected {n} down and up weights"));
    }
    let houses: Vec<HouseSpec> = p
        .forecast_kw
        .iter()
        .enumerate()
        .map(|(i, &kw)| HouseSpec {
            id: format!("h{i:02}"),
            ess: None,
            pev: None,
            contract: ContractLimits {
                low_kw: 0.0,
                high_kw: p.contract_high_kw,
            },
            demand: DemandSeries::new(vec![kw]),
        })
        .collect();
    let weights: Vec<FlexibilityWeight> = houses
        .iter()
        .zip(p.down_kw.iter().zip(&p.up_kw))
        .map(|(h, (&down_kw, &up_kw))| FlexibilityWeight {
            house: h.id.clone(),
            down_kw,
            up_kw,
        })
        .collect();
    let substation = SubstationSpec::constant(p.substation_low_kw, p.substation_high_kw, 1);
    let aggregate = vec![p.forecast_kw.iter().sum::<f64>()];
    let exceedance = compute_exceedance(&aggregate, &substation, 0..1).map_err(|e| e.to_string())?;
    let forecast: Vec<Vec<f64>> = p.forecast_kw.iter().map(|&kw| vec![kw]).collect();
    let a = allocate_bounds(&houses, &forecast, &exceedance, &weights, &substation, 0..1);
    let out = Preview {
        low_kw: a.bounds.iter().map(|b| b.low_kw[0]).collect(),
        high_kw: a.bounds.iter().map(|b| b.high_kw[0]).collect(),
        conflicts: a
            .conflicts
            .iter()
            .map(|c| format!("{:?} limit short by {:.3} kW", c.side, c.gap_kw))
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct SocInput {
    spec: BatterySpec,
    soc_kwh: f64,
    slot_minutes: u32,
    /// Grid-side power per slot, positive to charge.
    net_kw: Vec<f64>,
}

#[derive(Serialize)]
struct SocProfile {
    soc_kwh: Vec<f64>,
    error: Option<String>,
}

/// SOC after each slot of a charge/discharge schedule. Stops at the first
/// infeasible step and reports why.
pub fn soc_profile_json(input: &str) -> Result<String, String> {
    let p: SocInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let mut state = BatteryState::new(p.soc_kwh);
    let mut soc_kwh = vec![state.soc_kwh];
    let mut error = None;
    for (t, &kw) in p.net_kw.iter().enumerate() {
        match soc_step(state, &p.spec, kw.max(0.0), (-kw).max(0.0), p.slot_minutes) {
            Ok(next) => {
                state = next;
                soc_kwh.push(state.soc_kwh);
            }
            Err(e) => {
                error = Some(format!("slot {t}: {e}"));
                break;
            }
        }
    }
    serde_json::to_string(&SocProfile { soc_kwh, error }).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(
    houses: usize,
    slots: usize,
    seed: u32,
    profile: &str,
    deadline_ms: u32,
    centralized: bool,
) -> Result<String, JsValue> {
    simulate_json(houses, slots, seed.into(), profile, deadline_ms.into(), centralized).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn allocation_preview(input: &str) -> Result<String, JsValue> {
    allocation_preview_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn soc_profile(input: &str) -> Result<String, JsValue> {
    soc_profile_json(input).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulate_reports_three_strategies() {
        let v: Value = serde_json::from_str(&simulate_json(3, 24, 1, "evening-peak", 1000, true).unwrap()).unwrap();
        assert_eq!(v["strategies"].as_array().unwrap().len(), 3);
        assert_eq!(v["strategies"][0]["aggregate_kw"].as_array().unwrap().len(), 24);
        assert!(simulate_json(1, 24, 1, "nope", 1000, true).is_err());
    }

    #[test]
    fn preview_splits_evenly() {
        let input = r#"{"forecast_kw":[6,6],"down_kw":[1,1],"up_kw":[1,1],"substation_low_kw":0,"substation_high_kw":10}"#;
        let v: Value = serde_json::from_str(&allocation_preview_json(input).unwrap()).unwrap();
        assert_eq!(v["high_kw"], serde_json::json!([5.0, 5.0]));
        assert!(v["conflicts"].as_array().unwrap().is_empty());
    }

    #[test]
    fn soc_profile_stops_when_empty() {
        let input = r#"{"spec":{"capacity_kwh":2,"min_rate_kw":0,"max_rate_kw":4,"charge_eff":1,"discharge_eff":1},
            "soc_kwh":1,"slot_minutes":60,"net_kw":[1,-2,-1]}"#;
        let v: Value = serde_json::from_str(&soc_profile_json(input).unwrap()).unwrap();
        assert_eq!(v["soc_kwh"], serde_json::json!([1.0, 2.0, 0.0]));
        assert!(v["error"].as_str().unwrap().starts_with("slot 2"));
    }
}
