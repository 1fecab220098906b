//! Small exact MILP engine: a bounded-variable dense simplex for the LP
//! relaxations and best-first branch-and-bound over binary variables.

mod branch;
mod simplex;

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use branch::solve_milp_with;
pub use simplex::solve_lp_with;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("malformed problem: {0}")]
    MalformedProblem(String),
    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// Sparse coefficients, sorted by variable index, no duplicates.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// Amount by which `values` violate this row (0 when satisfied).
    pub fn residual(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, f64)>,
    pub objective_offset: f64,
    pub sense: ObjectiveSense,
}

impl MilpProblem {
    pub fn new(sense: ObjectiveSense) -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            objective_offset: 0.0,
            sense,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    /// Adds a row; repeated variables have their coefficients merged.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: &[(VarId, f64)],
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs: merge(coeffs.iter().map(|&(v, a)| (v.0, a))),
            sense,
            rhs,
        });
    }

    /// Adds `coeff * var` to the objective.
    pub fn add_objective_term(&mut self, var: VarId, coeff: f64) {
        self.objective.push((var.0, coeff));
        self.objective = merge(self.objective.drain(..));
    }

    pub fn set_objective(&mut self, terms: &[(VarId, f64)]) {
        self.objective = merge(terms.iter().map(|&(v, a)| (v.0, a)));
    }

    pub fn n_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn n_continuous(&self) -> usize {
        self.n_vars() - self.n_binaries()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().map(|&(j, c)| c * values[j]).sum::<f64>()
    }

    /// Checks finiteness and bound sanity.
    pub fn validate(&self) -> Result<(), MilpError> {
        let bad = |msg: String| Err(MilpError::MalformedProblem(msg));
        for (j, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return bad(format!("variable {j} ({}) has invalid bounds", v.name));
            }
            if v.lower > v.upper {
                return bad(format!("variable {j} ({}) has lower > upper", v.name));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return bad(format!("binary variable {j} ({}) has bounds outside [0, 1]", v.name));
            }
        }
        let n = self.n_vars();
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return bad(format!("constraint {i} ({}) has non-finite rhs", c.name));
            }
            for &(j, a) in &c.coeffs {
                if j >= n {
                    return bad(format!("constraint {i} references variable {j} of {n}"));
                }
                if !a.is_finite() {
                    return bad(format!("constraint {i} ({}) has non-finite coefficient", c.name));
                }
            }
        }
        for &(j, a) in &self.objective {
            if j >= n || !a.is_finite() {
                return bad(format!("objective term on variable {j} is invalid"));
            }
        }
        if !self.objective_offset.is_finite() {
            return bad("objective offset is not finite".into());
        }
        Ok(())
    }

    /// Plain-text dump in an LP-file-like layout, one item per line.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            ObjectiveSense::Minimize => "minimize",
            ObjectiveSense::Maximize => "maximize",
        };
        let _ = writeln!(out, "{sense}");
        let _ = writeln!(out, " obj: {}", self.linear_expr(&self.objective, self.objective_offset));
        let _ = writeln!(out, "subject to");
        for (i, c) in self.constraints.iter().enumerate() {
            let name = if c.name.is_empty() { format!("c{i}") } else { c.name.clone() };
            let _ = writeln!(out, " {name}: {} {} {}", self.linear_expr(&c.coeffs, 0.0), c.sense, c.rhs);
        }
        let _ = writeln!(out, "bounds");
        for v in &self.vars {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_bound(v.lower), v.name, fmt_bound(v.upper));
        }
        let bins: Vec<&str> = self
            .vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.name.as_str())
            .collect();
        if !bins.is_empty() {
            let _ = writeln!(out, "binary");
            for b in bins {
                let _ = writeln!(out, " {b}");
            }
        }
        let _ = writeln!(out, "end");
        out
    }

    fn linear_expr(&self, terms: &[(usize, f64)], offset: f64) -> String {
        let mut parts: Vec<String> = Vec::new();
        for &(j, a) in terms {
            let name = &self.vars[j].name;
            parts.push(match (parts.is_empty(), a < 0.0) {
                (true, false) => format!("{a} {name}"),
                (true, true) => format!("-{} {name}", -a),
                (false, false) => format!("+ {a} {name}"),
                (false, true) => format!("- {} {name}", -a),
            });
        }
        if offset != 0.0 || parts.is_empty() {
            parts.push(match (parts.is_empty(), offset < 0.0) {
                (true, _) => format!("{offset}"),
                (false, false) => format!("+ {offset}"),
                (false, true) => format!("- {}", -offset),
            });
        }
        parts.join(" ")
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn merge(terms: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = terms.collect();
    v.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (j, a) in v {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|&(_, a)| a != 0.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    TimedOut,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveBudget {
    pub deadline_ms: Option<u64>,
    pub node_limit: Option<u64>,
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn deadline(ms: u64) -> Self {
        Self {
            deadline_ms: Some(ms),
            node_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub integrality_tol: f64,
    pub feasibility_tol: f64,
    /// Nodes whose bound is within this absolute gap of the incumbent are pruned.
    pub optimality_gap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            integrality_tol: 1e-6,
            feasibility_tol: 1e-7,
            optimality_gap: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// Optimal point, or the best incumbent for a timed-out solve.
    pub values: Option<Vec<f64>>,
    pub objective: f64,
    /// Objective of the root LP relaxation when it was solved.
    pub relaxation_bound: Option<f64>,
    pub nodes_explored: u64,
    pub wall_ms: u64,
}

impl MilpSolution {
    pub(crate) fn without_values(status: SolveStatus, nodes: u64, wall_ms: u64) -> Self {
        Self {
            status,
            values: None,
            objective: f64::NAN,
            relaxation_bound: None,
            nodes_explored: nodes,
            wall_ms,
        }
    }

    pub fn has_incumbent(&self) -> bool {
        self.values.is_some()
    }
}

/// Solves the continuous relaxation of `problem` (binary kinds ignored).
pub fn solve_lp(problem: &MilpProblem) -> Result<MilpSolution, MilpError> {
    solve_lp_with(problem, &SolverOptions::default())
}

/// Exact branch-and-bound solve, subject to an optional wall-clock or node budget.
pub fn solve_milp(problem: &MilpProblem, budget: SolveBudget) -> Result<MilpSolution, MilpError> {
    solve_milp_with(problem, budget, &SolverOptions::default())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationSource {
    Constraint(usize),
    LowerBound(usize),
    UpperBound(usize),
    Integrality(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub source: ViolationSource,
    pub name: String,
    pub residual: f64,
}

/// Lists every violated row, bound, or integrality requirement at 1e-7.
pub fn check_solution(problem: &MilpProblem, values: &[f64]) -> Result<Vec<ConstraintViolation>, MilpError> {
    check_solution_with(problem, values, 1e-7)
}

pub fn check_solution_with(
    problem: &MilpProblem,
    values: &[f64],
    tol: f64,
) -> Result<Vec<ConstraintViolation>, MilpError> {
    if values.len() != problem.n_vars() {
        return Err(MilpError::LengthMismatch {
            expected: problem.n_vars(),
            got: values.len(),
        });
    }
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(MilpError::MalformedProblem(format!("value of variable {j} is not finite")));
    }
    let mut out = Vec::new();
    for (i, c) in problem.constraints.iter().enumerate() {
        let r = c.residual(values);
        if r > tol {
            out.push(ConstraintViolation {
                source: ViolationSource::Constraint(i),
                name: c.name.clone(),
                residual: r,
            });
        }
    }
    for (j, (v, x)) in problem.vars.iter().zip(values).enumerate() {
        if v.lower - x > tol {
            out.push(ConstraintViolation {
                source: ViolationSource::LowerBound(j),
                name: v.name.clone(),
                residual: v.lower - x,
            });
        }
        if x - v.upper > tol {
            out.push(ConstraintViolation {
                source: ViolationSource::UpperBound(j),
                name: v.name.clone(),
                residual: x - v.upper,
            });
        }
        if v.kind == VarKind::Binary {
            let frac = (x - x.round()).abs();
            if frac > tol {
                out.push(ConstraintViolation {
                    source: ViolationSource::Integrality(j),
                    name: v.name.clone(),
                    residual: frac,
                });
            }
        }
    }
    Ok(out)
}
