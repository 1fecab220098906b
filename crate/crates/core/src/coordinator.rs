//! Substation coordinator: exceedance and per-house limit allocation.
//!
//! Every substation period the aggregate forecast is compared with the
//! substation envelope and each house receives `[low, high]` limits whose sums
//! stay inside the envelope. The shortfall is shared in proportion to each
//! house's flexibility, limits are clamped into the supply contracts, and a
//! re-normalization pass restores the sum property when clamping broke it.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BatteryState, HouseBounds, HouseSpec, SubstationSpec, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("length mismatch: window {start}..{end} needs {end} slots, series has {got}")]
    LengthMismatch { start: usize, end: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceProfile {
    pub start_slot: usize,
    pub over_kw: Vec<f64>,
    pub under_kw: Vec<f64>,
}

impl ExceedanceProfile {
    pub fn len(&self) -> usize {
        self.over_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.over_kw.is_empty()
    }
}

/// How much a house can move its consumption down (discharge) or up (charge)
/// during the next slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibilityWeight {
    pub house: String,
    pub down_kw: f64,
    pub up_kw: f64,
}

/// Which substation limit could not be honoured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Low,
    High,
}

/// The contracts make the substation envelope unreachable at this slot.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsConflict {
    pub slot: usize,
    pub side: BoundSide,
    /// Remaining gap in kW.
    pub gap_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// One entry per house, in scenario order, covering the window.
    pub bounds: Vec<HouseBounds>,
    pub conflicts: Vec<BoundsConflict>,
}

/// Which house demand the coordinator allocates around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinatorInput {
    #[default]
    Forecast,
    /// Last reported plan where one exists, forecast elsewhere.
    Plan,
}

fn check_window(len: usize, window: &Range<usize>) -> Result<(), CoordinatorError> {
    if window.end > len || window.start > window.end {
        return Err(CoordinatorError::LengthMismatch {
            start: window.start,
            end: window.end,
            got: len,
        });
    }
    Ok(())
}

/// Power above the upper and below the lower substation bound per slot.
pub fn compute_exceedance(
    aggregate_kw: &[f64],
    substation: &SubstationSpec,
    window: Range<usize>,
) -> Result<ExceedanceProfile, CoordinatorError> {
    check_window(aggregate_kw.len(), &window)?;
    check_window(substation.high_kw.len().min(substation.low_kw.len()), &window)?;
    let over_kw = window
        .clone()
        .map(|t| (aggregate_kw[t] - substation.high_kw[t]).max(0.0))
        .collect();
    let under_kw = window
        .clone()
        .map(|t| (substation.low_kw[t] - aggregate_kw[t]).max(0.0))
        .collect();
    Ok(ExceedanceProfile {
        start_slot: window.start,
        over_kw,
        under_kw,
    })
}

/// Down- and up-flexibility of every house at `slot`, from current SOCs.
pub fn flexibility_weights(
    houses: &[HouseSpec],
    ess: &[BatteryState],
    pev: &[BatteryState],
    slot: usize,
    grid: &TimeGrid,
) -> Vec<FlexibilityWeight> {
    let dt = grid.slot_hours();
    houses
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut down = 0.0;
            let mut up = 0.0;
            if let Some(e) = &h.ess {
                let s = &e.spec;
                let soc = ess[i].soc_kwh;
                down += s.max_rate_kw.min(s.discharge_eff * soc / dt).max(0.0);
                up += s.max_rate_kw.min((s.capacity_kwh - soc) / (s.charge_eff * dt)).max(0.0);
            }
            if let Some(p) = &h.pev {
                if p.availability.is_plugged(slot) {
                    let s = &p.spec;
                    let soc = pev[i].soc_kwh;
                    down += s.max_rate_kw.min(s.discharge_eff * soc / dt).max(0.0);
                    up += s.max_rate_kw.min((s.capacity_kwh - soc) / (s.charge_eff * dt)).max(0.0);
                }
            }
            FlexibilityWeight {
                house: h.id.clone(),
                down_kw: down,
                up_kw: up,
            }
        })
        .collect()
}

/// Weights actually used to share a shift: flexibility, else demand, else
/// equal shares.
fn sharing_weights(flex: &[f64], demand: &[f64]) -> Vec<f64> {
    if flex.iter().sum::<f64>() > 0.0 {
        return flex.to_vec();
    }
    let abs: Vec<f64> = demand.iter().map(|d| d.abs()).collect();
    if abs.iter().sum::<f64>() > 0.0 {
        return abs;
    }
    vec![1.0; demand.len()]
}

/// Moves `values` by `amount` (positive raises, negative lowers) toward the
/// per-house `limits`. Houses first move in proportion to `weights`; once
/// those saturate the remaining room is used in proportion to its size.
/// Returns the part of `amount` that could not be placed.
fn shift(values: &mut [f64], weights: &[f64], limits: &[f64], amount: f64) -> f64 {
    let dir = amount.signum();
    let mut need = amount.abs();
    if need == 0.0 {
        return 0.0;
    }
    let room: Vec<f64> = values
        .iter()
        .zip(limits)
        .map(|(v, l)| ((l - v) * dir).max(0.0))
        .collect();

    // Water-fill along the weights: find λ with Σ min(room_u, λ·w_u) = need.
    let mut active: Vec<usize> = (0..values.len()).filter(|&u| weights[u] > 0.0 && room[u] > 0.0).collect();
    active.sort_by(|&a, &b| (room[a] / weights[a]).total_cmp(&(room[b] / weights[b])).then(a.cmp(&b)));
    let mut moved = vec![0.0; values.len()];
    let mut w_sum: f64 = active.iter().map(|&u| weights[u]).sum();
    let mut lambda_prev = 0.0;
    let mut placed = 0.0;
    let mut lambda = None;
    for &u in &active {
        let lambda_u = room[u] / weights[u];
        let capacity = (lambda_u - lambda_prev) * w_sum;
        if placed + capacity >= need {
            lambda = Some(lambda_prev + (need - placed) / w_sum);
            break;
        }
        placed += capacity;
        lambda_prev = lambda_u;
        w_sum -= weights[u];
    }
    match lambda {
        Some(l) => {
            for &u in &active {
                moved[u] = (l * weights[u]).min(room[u]);
            }
            need = 0.0;
        }
        None => {
            for &u in &active {
                moved[u] = room[u];
            }
            need -= placed;
        }
    }

    // Room-proportional stage for whatever is left.
    if need > 0.0 {
        let left: Vec<f64> = room.iter().zip(&moved).map(|(r, m)| r - m).collect();
        let total: f64 = left.iter().sum();
        if total > 0.0 {
            let mu = (need / total).min(1.0);
            for u in 0..values.len() {
                moved[u] += mu * left[u];
            }
            need -= mu * total;
        }
    }
    for u in 0..values.len() {
        values[u] = if moved[u] >= room[u] {
            limits[u]
        } else {
            values[u] + dir * moved[u]
        };
    }
    need.max(0.0)
}

/// Per-house `[low, high]` limits over `window`.
///
/// `forecast_kw[u]` is indexed by absolute slot. The high limits start from
/// the forecasts clamped into the contracts and are shifted until their sum
/// equals the upper substation bound: down along the down-flexibility when
/// the aggregate exceeds it, up along the up-flexibility otherwise. The low
/// limits are then built the same way against the lower substation bound,
/// never exceeding the high limits. If the contracts cannot accommodate the
/// envelope a conflict is reported and the clamped values are kept.
pub fn allocate_bounds(
    houses: &[HouseSpec],
    forecast_kw: &[Vec<f64>],
    exceedance: &ExceedanceProfile,
    weights: &[FlexibilityWeight],
    substation: &SubstationSpec,
    window: Range<usize>,
) -> Allocation {
    let n = houses.len();
    let len = window.len();
    let mut bounds: Vec<HouseBounds> = (0..n).map(|_| HouseBounds::uniform(0.0, 0.0, window.start, len)).collect();
    let mut conflicts = Vec::new();
    let down: Vec<f64> = weights.iter().map(|w| w.down_kw).collect();
    let up: Vec<f64> = weights.iter().map(|w| w.up_kw).collect();
    let floors: Vec<f64> = houses.iter().map(|h| h.contract.low_kw).collect();
    let ceilings: Vec<f64> = houses.iter().map(|h| h.contract.high_kw).collect();
    let tol = 1e-9;
    debug_assert!(exceedance.start_slot == window.start && exceedance.len() == len);

    for (k, t) in window.clone().enumerate() {
        let d: Vec<f64> = houses
            .iter()
            .zip(forecast_kw)
            .map(|(h, f)| h.contract.clamp(f[t]))
            .collect();
        let d_sum: f64 = d.iter().sum();

        // Upper limits.
        let mut high = d.clone();
        let excess = d_sum - substation.high_kw[t];
        if excess > 0.0 {
            let w = sharing_weights(&down, &d);
            let gap = shift(&mut high, &w, &floors, -excess.max(0.0));
            if gap > tol {
                conflicts.push(BoundsConflict {
                    slot: t,
                    side: BoundSide::High,
                    gap_kw: gap,
                });
            }
        } else {
            let w = sharing_weights(&up, &vec![1.0; n]);
            shift(&mut high, &w, &ceilings, -excess);
        }

        // Lower limits, capped by the upper ones.
        let mut low: Vec<f64> = d.iter().zip(&high).map(|(a, b)| a.min(*b)).collect();
        let low_sum: f64 = low.iter().sum();
        let deficit = substation.low_kw[t] - low_sum;
        if deficit > 0.0 {
            let w = sharing_weights(&up, &d);
            let gap = shift(&mut low, &w, &high, deficit);
            if gap > tol {
                conflicts.push(BoundsConflict {
                    slot: t,
                    side: BoundSide::Low,
                    gap_kw: gap,
                });
            }
        } else {
            let w = sharing_weights(&down, &vec![1.0; n]);
            shift(&mut low, &w, &floors, deficit);
        }

        for u in 0..n {
            bounds[u].low_kw[k] = low[u];
            bounds[u].high_kw[k] = high[u];
        }
    }
    Allocation { bounds, conflicts }
}

/// Number of slots each coordination round covers: one substation period
/// plus enough look-ahead for the longest house horizon that starts inside it.
pub fn coordination_window(grid: &TimeGrid, slot: usize, max_house_horizon: usize) -> Range<usize> {
    let len = grid.substation_horizon().max(1) + max_house_horizon.saturating_sub(1);
    slot..(slot + len).min(grid.n_slots)
}
