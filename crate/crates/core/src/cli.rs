//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on invalid arguments, input or scenario
//! errors, 2 when the centralized problem exceeds its size limit.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::baselines::{run_centralized, run_unmanaged, BaselineError, ScaleLimit};
use crate::coordinator::CoordinatorInput;
use crate::house::{AdaptiveHorizonConfig, ObjectiveWeights};
use crate::io::{
    from_csv, load_scenario, metrics_rows, report_rows, save_scenario, to_csv, trace_rows, write_file, IoError,
    MetricsRow,
};
use crate::metrics::{compute_metrics, MetricsError, RunMetrics};
use crate::milp::SolveBudget;
use crate::model::Scenario;
use crate::sim::{run_hierarchical, HierarchicalConfig, RunTrace, SimError, Strategy};
use crate::synth::{generate_synthetic, Profile};

#[derive(Debug, Parser)]
#[command(name = "gridbound", version, about = "Two-layer home battery control against substation bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scenario file.
    Generate {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one strategy and write its trace.
    Run {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run all strategies and write metrics plus a summary.
    Compare {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write per-slot aggregate demand against the substation bounds.
    Report {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Where the scenario comes from: a file, or the generator.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Scenario file; when absent a synthetic scenario is generated.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub houses: usize,
    #[arg(long, default_value_t = 96)]
    pub slots: usize,
    #[arg(long, default_value = "evening-peak", value_parser = parse_profile)]
    pub profile: Profile,
}

#[derive(Debug, Clone, Args)]
pub struct ControlArgs {
    /// Per-solve deadline of each house MILP.
    #[arg(long, default_value_t = 60_000)]
    pub deadline_ms: u64,
    /// Initial (and maximum) house horizon in slots.
    #[arg(long, default_value_t = 8)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2)]
    pub horizon_step: usize,
    #[arg(long, default_value_t = 1)]
    pub min_horizon: usize,
    /// Keep the horizon from growing back after fast solves.
    #[arg(long)]
    pub no_regrow: bool,
    #[arg(long, default_value = "forecast", value_parser = parse_input)]
    pub coordinator_input: CoordinatorInput,
    /// Deadline of the centralized solve.
    #[arg(long, default_value_t = 600_000)]
    pub central_deadline_ms: u64,
    #[arg(long, default_value_t = 12)]
    pub max_houses: usize,
    #[arg(long, default_value_t = 96)]
    pub max_slots: usize,
    /// Skip the centralized reference.
    #[arg(long)]
    pub no_centralized: bool,
}

impl Default for ControlArgs {
    fn default() -> Self {
        Self {
            deadline_ms: 60_000,
            horizon: 8,
            horizon_step: 2,
            min_horizon: 1,
            no_regrow: false,
            coordinator_input: CoordinatorInput::Forecast,
            central_deadline_ms: 600_000,
            max_houses: 12,
            max_slots: 96,
            no_centralized: false,
        }
    }
}

impl ControlArgs {
    pub fn hierarchical(&self) -> HierarchicalConfig {
        HierarchicalConfig {
            horizon: AdaptiveHorizonConfig {
                initial_horizon_slots: self.horizon,
                step_slots: self.horizon_step,
                min_horizon_slots: self.min_horizon,
                deadline_ms: self.deadline_ms,
                node_limit: None,
                regrow: !self.no_regrow,
            },
            weights: ObjectiveWeights::default(),
            coordinator_input: self.coordinator_input,
        }
    }

    fn scale(&self) -> ScaleLimit {
        ScaleLimit {
            max_houses: self.max_houses,
            max_slots: self.max_slots,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn parse_input(s: &str) -> Result<CoordinatorInput, String> {
    match s {
        "forecast" => Ok(CoordinatorInput::Forecast),
        "plan" => Ok(CoordinatorInput::Plan),
        _ => Err(format!("unknown coordinator input '{s}' (expected forecast or plan)")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("centralized reference is worse than {0}: the lower-bound property failed")]
    LowerBound(Strategy),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Baseline(BaselineError::ScaleGuard { .. }) => 2,
            _ => 1,
        }
    }
}

pub fn load_source(source: &SourceArgs) -> Result<Scenario, CliError> {
    match &source.scenario {
        Some(p) => Ok(load_scenario(p)?),
        None => {
            if source.houses == 0 || source.slots == 0 {
                return Err(CliError::Usage("--houses and --slots must be at least 1".into()));
            }
            Ok(generate_synthetic(source.houses, source.slots, source.seed, source.profile))
        }
    }
}

pub fn run_strategy(scenario: &Scenario, strategy: Strategy, control: &ControlArgs) -> Result<RunTrace, CliError> {
    Ok(match strategy {
        Strategy::Unmanaged => run_unmanaged(scenario)?,
        Strategy::Hierarchical => run_hierarchical(scenario, &control.hierarchical())?,
        Strategy::Centralized => run_centralized(
            scenario,
            &ObjectiveWeights::default(),
            SolveBudget::deadline(control.central_deadline_ms),
            control.scale(),
        )?,
    })
}

/// All traces of a comparison, in strategy order.
pub fn run_all(scenario: &Scenario, control: &ControlArgs) -> Result<Vec<RunTrace>, CliError> {
    let mut traces = vec![
        run_strategy(scenario, Strategy::Unmanaged, control)?,
        run_strategy(scenario, Strategy::Hierarchical, control)?,
    ];
    if !control.no_centralized {
        traces.push(run_strategy(scenario, Strategy::Centralized, control)?);
    }
    Ok(traces)
}

/// Metrics of a comparison, checking that an optimal centralized run is a
/// lower bound on violation energy.
pub fn compare(scenario: &Scenario, control: &ControlArgs) -> Result<(Vec<RunTrace>, RunMetrics), CliError> {
    let traces = run_all(scenario, control)?;
    let m = compute_metrics(&traces[0], &traces[1], traces.get(2))?;
    if let (Some(c), true) = (&m.centralized, m.centralized_oracle) {
        if c.violation_kwh > m.hierarchical.violation_kwh + 1e-6 {
            return Err(CliError::LowerBound(Strategy::Hierarchical));
        }
        if c.violation_kwh > m.unmanaged.violation_kwh + 1e-6 {
            return Err(CliError::LowerBound(Strategy::Unmanaged));
        }
    }
    Ok((traces, m))
}

/// Human-readable comparison table.
pub fn summary(scenario: &Scenario, m: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} houses, {} slots of {} min, seed {}",
        scenario.houses.len(),
        scenario.grid.n_slots,
        scenario.grid.slot_minutes,
        scenario.rng_seed
    );
    let _ = writeln!(s, "{:<14} {:>12} {:>10} {:>10}", "strategy", "V [kWh]", "slots out", "eta");
    let mut row = |name: &str, v: f64, n: usize, eta: f64| {
        let _ = writeln!(s, "{name:<14} {v:>12.6} {n:>10} {eta:>10.6}");
    };
    row("unmanaged", m.unmanaged.violation_kwh, m.unmanaged.slots_out_of_bounds, m.unmanaged.efficiency);
    row(
        "hierarchical",
        m.hierarchical.violation_kwh,
        m.hierarchical.slots_out_of_bounds,
        m.hierarchical.efficiency,
    );
    if let Some(c) = &m.centralized {
        row("centralized", c.violation_kwh, c.slots_out_of_bounds, c.efficiency);
    }
    let _ = writeln!(s, "eta_hier = {:.6}", m.hierarchical.efficiency);
    match &m.centralized {
        Some(c) => {
            let _ = writeln!(
                s,
                "eta_central = {:.6} ({})",
                c.efficiency,
                if m.centralized_oracle { "optimal" } else { "not proven optimal" }
            );
        }
        None => {
            let _ = writeln!(s, "eta_central = n/a");
        }
    }
    match m.efficiency_ratio {
        Some(r) => {
            let _ = writeln!(s, "rho = {r:.6}");
        }
        None => {
            let _ = writeln!(s, "rho = undefined");
        }
    }
    s
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let written = |out: &mut dyn Write, path: &Path| {
        let _ = writeln!(out, "wrote {}", path.display());
    };
    match cli.command {
        Command::Generate { source, out: dir } => {
            let scenario = load_source(&source)?;
            let path = dir.join("scenario.json");
            save_scenario(&scenario, &path)?;
            written(out, &path);
        }
        Command::Run {
            strategy,
            source,
            control,
            out: dir,
        } => {
            let scenario = load_source(&source)?;
            let trace = run_strategy(&scenario, strategy, &control)?;
            let path = dir.join(format!("trace_{strategy}.csv"));
            write_file(&path, to_csv(&trace_rows(&trace)).as_bytes())?;
            written(out, &path);
        }
        Command::Compare {
            source,
            control,
            out: dir,
        } => {
            let scenario = load_source(&source)?;
            let (_, m) = compare(&scenario, &control)?;
            let csv = to_csv(&metrics_rows(&m));
            // The table must be loadable by our own reader.
            debug_assert!(from_csv::<MetricsRow>(&csv, "metrics").is_ok());
            let text = summary(&scenario, &m);
            write_file(&dir.join("metrics.csv"), csv.as_bytes())?;
            write_file(&dir.join("summary.txt"), text.as_bytes())?;
            let _ = write!(out, "{text}");
            written(out, &dir.join("metrics.csv"));
        }
        Command::Report {
            source,
            control,
            out: dir,
        } => {
            let scenario = load_source(&source)?;
            let traces = run_all(&scenario, &control)?;
            let refs: Vec<&RunTrace> = traces.iter().collect();
            let path = dir.join("report.csv");
            write_file(&path, to_csv(&report_rows(&scenario, &refs)).as_bytes())?;
            written(out, &path);
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("gridbound").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn tmp(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("gridbound-cli-{}-{name}", std::process::id()))
    }

    #[test]
    fn unknown_strategy_exits_1() {
        let (code, _, err) = run(&["run", "--strategy", "optimal"]);
        assert_eq!(code, 1);
        assert!(err.contains("unknown strategy"));
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(&["--help"]).0, 0);
    }

    #[test]
    fn generate_is_reproducible() {
        let a = tmp("gen-a");
        let b = tmp("gen-b");
        for d in [&a, &b] {
            let (code, _, err) = run(&["generate", "--seed", "7", "--houses", "3", "--slots", "24", "--out", d.to_str().unwrap()]);
            assert_eq!(code, 0, "{err}");
        }
        assert_eq!(
            std::fs::read(a.join("scenario.json")).unwrap(),
            std::fs::read(b.join("scenario.json")).unwrap()
        );
        let _ = std::fs::remove_dir_all(a);
        let _ = std::fs::remove_dir_all(b);
    }

    #[test]
    fn scale_guard_exits_2() {
        let d = tmp("guard");
        let (code, _, err) = run(&[
            "run", "--strategy", "centralized", "--houses", "3", "--slots", "8", "--max-houses", "2", "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code, 2, "{err}");
        let _ = std::fs::remove_dir_all(d);
    }

    #[test]
    fn missing_scenario_file_exits_1() {
        let (code, _, err) = run(&["run", "--strategy", "unmanaged", "--scenario", "/nonexistent/s.json"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn compare_prints_the_metrics() {
        let d = tmp("cmp");
        let (code, out, err) = run(&["compare", "--houses", "2", "--slots", "24", "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("eta_hier") && out.contains("eta_central") && out.contains("rho"));
        let rows: Vec<MetricsRow> = from_csv(&std::fs::read_to_string(d.join("metrics.csv")).unwrap(), "m").unwrap();
        assert_eq!(rows.len(), 3);
        let _ = std::fs::remove_dir_all(d);
    }
}
