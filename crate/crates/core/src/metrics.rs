//! Violation energy and constraints-management efficiency.

use thiserror::Error;

use crate::sim::RunTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("unmanaged demand has no violations but the {strategy} run has {violation_kwh} kWh")]
    DegenerateBaseline { strategy: String, violation_kwh: f64 },
    #[error("traces cover different horizons ({0} vs {1} slots)")]
    LengthMismatch(usize, usize),
}

/// Excess below this many kW is rounding noise, not a violation.
pub const EXCESS_FLOOR_KW: f64 = 1e-9;

/// Energy outside the substation envelope, in kWh.
pub fn violation_kwh(trace: &RunTrace) -> f64 {
    let dt = f64::from(trace.slot_minutes) / 60.0;
    let part = |x: f64| if x > EXCESS_FLOOR_KW { x } else { 0.0 };
    (0..trace.n_slots())
        .map(|t| {
            let e = trace.aggregate_kw[t];
            dt * (part(e - trace.substation_high_kw[t]) + part(trace.substation_low_kw[t] - e))
        })
        .sum()
}

/// Slots whose aggregate lies outside the envelope by more than 1e-6 kW.
pub fn slots_out_of_bounds(trace: &RunTrace) -> usize {
    (0..trace.n_slots())
        .filter(|&t| {
            let e = trace.aggregate_kw[t];
            e > trace.substation_high_kw[t] + 1e-6 || e < trace.substation_low_kw[t] - 1e-6
        })
        .count()
}

/// `η = (V_unmanaged − V) / V_unmanaged`, with η = 1 when both are zero.
pub fn efficiency(v_unmanaged: f64, v_strategy: f64, strategy: &str) -> Result<f64, MetricsError> {
    if v_unmanaged > 0.0 {
        Ok((v_unmanaged - v_strategy) / v_unmanaged)
    } else if v_strategy <= 0.0 {
        Ok(1.0)
    } else {
        Err(MetricsError::DegenerateBaseline {
            strategy: strategy.to_string(),
            violation_kwh: v_strategy,
        })
    }
}

/// `ρ = η_hier / η_central`, defined only for a positive reference.
pub fn efficiency_ratio(eta_hierarchical: f64, eta_centralized: f64) -> Option<f64> {
    (eta_centralized > 0.0).then(|| eta_hierarchical / eta_centralized)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyMetrics {
    pub violation_kwh: f64,
    pub slots_out_of_bounds: usize,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub unmanaged: StrategyMetrics,
    pub hierarchical: StrategyMetrics,
    pub centralized: Option<StrategyMetrics>,
    /// Whether the centralized run was solved to optimality.
    pub centralized_oracle: bool,
    pub efficiency_ratio: Option<f64>,
}

fn strategy_metrics(trace: &RunTrace, v_un: f64) -> Result<StrategyMetrics, MetricsError> {
    let v = violation_kwh(trace);
    Ok(StrategyMetrics {
        violation_kwh: v,
        slots_out_of_bounds: slots_out_of_bounds(trace),
        efficiency: efficiency(v_un, v, trace.strategy.name())?,
    })
}

/// Metrics of a comparison. The ratio is only reported against an optimal
/// centralized run.
pub fn compute_metrics(
    unmanaged: &RunTrace,
    hierarchical: &RunTrace,
    centralized: Option<&RunTrace>,
) -> Result<RunMetrics, MetricsError> {
    for t in std::iter::once(hierarchical).chain(centralized) {
        if t.n_slots() != unmanaged.n_slots() {
            return Err(MetricsError::LengthMismatch(unmanaged.n_slots(), t.n_slots()));
        }
    }
    let v_un = violation_kwh(unmanaged);
    let un = strategy_metrics(unmanaged, v_un)?;
    let hier = strategy_metrics(hierarchical, v_un)?;
    let cen = centralized.map(|c| strategy_metrics(c, v_un)).transpose()?;
    let oracle = centralized.is_some_and(|c| c.oracle);
    let ratio = match (&cen, oracle) {
        (Some(c), true) => efficiency_ratio(hier.efficiency, c.efficiency),
        _ => None,
    };
    Ok(RunMetrics {
        unmanaged: un,
        hierarchical: hier,
        centralized: cen,
        centralized_oracle: oracle,
        efficiency_ratio: ratio,
    })
}
