//! Best-first branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use web_time::Instant;

use super::simplex::{solve_relaxation, LpOutcome, LpStatus};
use super::{
    check_solution_with, MilpError, MilpProblem, MilpSolution, ObjectiveSense, SolveBudget, SolveStatus,
    SolverOptions, VarKind,
};

struct Node {
    /// Relaxation objective in minimisation form.
    bound: f64,
    seq: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    /// Minimisation-form objective.
    value: f64,
    x: Vec<f64>,
}

struct Search<'a> {
    problem: &'a MilpProblem,
    opts: &'a SolverOptions,
    binaries: Vec<usize>,
    /// Binaries that carry an objective coefficient; branched on first.
    costed: Vec<bool>,
    /// Row indices touching each variable.
    rows_of: Vec<Vec<usize>>,
    sign: f64,
    incumbent: Option<Incumbent>,
    nodes: u64,
    seq: u64,
}

pub fn solve_milp_with(
    problem: &MilpProblem,
    budget: SolveBudget,
    opts: &SolverOptions,
) -> Result<MilpSolution, MilpError> {
    problem.validate()?;
    if budget.deadline_ms == Some(0) {
        return Ok(MilpSolution::without_values(SolveStatus::TimedOut, 0, 0));
    }
    let start = Instant::now();
    let elapsed_ms = || start.elapsed().as_millis() as u64;
    let out_of_budget = |nodes: u64| {
        budget.deadline_ms.is_some_and(|d| elapsed_ms() >= d) || budget.node_limit.is_some_and(|n| nodes >= n)
    };

    let mut search = Search::new(problem, opts);
    let lower: Vec<f64> = problem.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = problem.vars.iter().map(|v| v.upper).collect();

    let root = search.solve_node(&lower, &upper);
    let root_bound = match root.status {
        LpStatus::Optimal => search.sign * root.objective,
        LpStatus::Unbounded => {
            return Ok(MilpSolution::without_values(SolveStatus::Unbounded, 1, elapsed_ms()));
        }
        LpStatus::Infeasible | LpStatus::IterationLimit => {
            return Ok(MilpSolution::without_values(SolveStatus::Infeasible, 1, elapsed_ms()));
        }
    };

    let mut heap = BinaryHeap::new();
    if let Some(node) = search.process(lower, upper, root) {
        heap.push(node);
    }

    let mut timed_out = false;
    while let Some(node) = heap.pop() {
        if search.prunable(node.bound) {
            heap.clear();
            break;
        }
        if out_of_budget(search.nodes) {
            timed_out = true;
            break;
        }
        let Some(j) = search.branching_variable(&node.x) else {
            continue;
        };
        for value in [0.0, 1.0] {
            let mut lo = node.lower.clone();
            let mut hi = node.upper.clone();
            lo[j] = value;
            hi[j] = value;
            let lp = search.solve_node(&lo, &hi);
            if let Some(child) = search.process(lo, hi, lp) {
                heap.push(child);
            }
        }
    }

    let wall_ms = elapsed_ms();
    let status = if timed_out {
        SolveStatus::TimedOut
    } else if search.incumbent.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    let sign = search.sign;
    let nodes = search.nodes;
    Ok(match search.incumbent {
        Some(inc) => {
            let objective = sign * inc.value;
            debug_assert!(
                inc.value >= root_bound - 1e-6 * (1.0 + root_bound.abs()),
                "integer optimum {} beats relaxation {}",
                inc.value,
                root_bound
            );
            MilpSolution {
                status,
                objective,
                values: Some(inc.x),
                relaxation_bound: Some(sign * root_bound),
                nodes_explored: nodes,
                wall_ms,
            }
        }
        None => MilpSolution {
            relaxation_bound: Some(sign * root_bound),
            ..MilpSolution::without_values(status, nodes, wall_ms)
        },
    })
}

impl<'a> Search<'a> {
    fn new(problem: &'a MilpProblem, opts: &'a SolverOptions) -> Self {
        let binaries: Vec<usize> = (0..problem.n_vars())
            .filter(|&j| problem.vars[j].kind == VarKind::Binary)
            .collect();
        let mut costed = vec![false; problem.n_vars()];
        for &(j, c) in &problem.objective {
            costed[j] = c != 0.0;
        }
        let mut rows_of = vec![Vec::new(); problem.n_vars()];
        for (i, c) in problem.constraints.iter().enumerate() {
            for &(j, _) in &c.coeffs {
                rows_of[j].push(i);
            }
        }
        let sign = match problem.sense {
            ObjectiveSense::Minimize => 1.0,
            ObjectiveSense::Maximize => -1.0,
        };
        Self {
            problem,
            opts,
            binaries,
            costed,
            rows_of,
            sign,
            incumbent: None,
            nodes: 0,
            seq: 0,
        }
    }

    fn solve_node(&mut self, lower: &[f64], upper: &[f64]) -> LpOutcome {
        self.nodes += 1;
        solve_relaxation(self.problem, lower, upper, self.opts)
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some(inc) => bound >= inc.value - self.opts.optimality_gap * (1.0 + inc.value.abs()),
            None => false,
        }
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.binaries
            .iter()
            .all(|&j| (x[j] - x[j].round()).abs() <= self.opts.integrality_tol)
    }

    /// Most fractional binary, preferring those with an objective coefficient.
    /// Ties go to the lowest index.
    fn branching_variable(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(bool, f64, usize)> = None;
        for &j in &self.binaries {
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac <= self.opts.integrality_tol {
                continue;
            }
            let key = (self.costed[j], frac, j);
            let better = match best {
                None => true,
                Some((c, f, _)) => (key.0 && !c) || (key.0 == c && frac > f + 1e-12),
            };
            if better {
                best = Some(key);
            }
        }
        best.map(|(_, _, j)| j)
    }

    /// Handles a freshly solved node: records incumbents and returns the node
    /// if it still needs branching.
    fn process(&mut self, lower: Vec<f64>, upper: Vec<f64>, lp: LpOutcome) -> Option<Node> {
        if lp.status != LpStatus::Optimal {
            return None;
        }
        let bound = self.sign * lp.objective;
        if self.prunable(bound) {
            return None;
        }
        let mut x = lp.x;
        if self.is_integral(&x) {
            for &j in &self.binaries {
                x[j] = x[j].round();
            }
            self.offer(x);
            return None;
        }
        if let Some(cand) = self.round_and_repair(&x) {
            let closes_node = {
                let v = self.sign * self.problem.objective_value(&cand);
                v <= bound + self.opts.optimality_gap * (1.0 + bound.abs())
            };
            self.offer(cand);
            if closes_node {
                return None;
            }
        }
        self.seq += 1;
        Some(Node {
            bound,
            seq: self.seq,
            lower,
            upper,
            x,
        })
    }

    fn offer(&mut self, x: Vec<f64>) {
        let value = self.sign * self.problem.objective_value(&x);
        let tol = self.opts.optimality_gap * (1.0 + value.abs());
        let replace = match &self.incumbent {
            None => true,
            Some(inc) => {
                value < inc.value - tol
                    || (value <= inc.value + tol && self.binary_key(&x) < self.binary_key(&inc.x))
            }
        };
        if replace {
            self.incumbent = Some(Incumbent { value, x });
        }
    }

    fn binary_key(&self, x: &[f64]) -> Vec<u8> {
        self.binaries.iter().map(|&j| x[j].round() as u8).collect()
    }

    /// Fixes fractional binaries one at a time without moving the continuous
    /// part of `x`, choosing 0 when both values keep every fully-determined
    /// row satisfied. Returns a feasible integral point when that works.
    fn round_and_repair(&self, x: &[f64]) -> Option<Vec<f64>> {
        let tol = self.opts.feasibility_tol;
        let itol = self.opts.integrality_tol;
        let mut y = x.to_vec();
        let mut pending: Vec<usize> = Vec::new();
        for &j in &self.binaries {
            if (y[j] - y[j].round()).abs() <= itol {
                y[j] = y[j].round();
            } else {
                pending.push(j);
            }
        }
        let mut fixed: Vec<bool> = vec![true; self.problem.n_vars()];
        for &j in &pending {
            fixed[j] = false;
        }
        // Repeated passes: a binary is decided once every row it touches is
        // either fully determined or still has another undecided binary.
        let mut progress = true;
        while progress && !pending.is_empty() {
            progress = false;
            let mut still = Vec::new();
            for &j in &pending {
                let mut chosen = None;
                for v in [0.0, 1.0] {
                    if self.problem.vars[j].lower > v || self.problem.vars[j].upper < v {
                        continue;
                    }
                    y[j] = v;
                    let ok = self.rows_of[j].iter().all(|&i| {
                        let row = &self.problem.constraints[i];
                        let open = row.coeffs.iter().any(|&(k, _)| k != j && !fixed[k]);
                        open || row.residual(&y) <= tol
                    });
                    if ok {
                        chosen = Some(v);
                        break;
                    }
                }
                match chosen {
                    Some(v) => {
                        y[j] = v;
                        fixed[j] = true;
                        progress = true;
                    }
                    None => {
                        y[j] = x[j];
                        still.push(j);
                    }
                }
            }
            pending = still;
        }
        if !pending.is_empty() {
            return None;
        }
        let ok = check_solution_with(self.problem, &y, tol).map(|v| v.is_empty()).unwrap_or(false);
        if !ok {
            return None;
        }
        // Re-optimise the continuous part with the binaries held.
        let mut lo: Vec<f64> = self.problem.vars.iter().map(|v| v.lower).collect();
        let mut hi: Vec<f64> = self.problem.vars.iter().map(|v| v.upper).collect();
        for &j in &self.binaries {
            lo[j] = y[j];
            hi[j] = y[j];
        }
        let polished = solve_relaxation(self.problem, &lo, &hi, self.opts);
        if polished.status == LpStatus::Optimal
            && self.sign * polished.objective <= self.sign * self.problem.objective_value(&y)
        {
            let mut p = polished.x;
            for &j in &self.binaries {
                p[j] = y[j];
            }
            if check_solution_with(self.problem, &p, tol).map(|v| v.is_empty()).unwrap_or(false) {
                return Some(p);
            }
        }
        Some(y)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn knapsack_example() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let a = p.binary("x1");
        let b = p.binary("x2");
        p.add_constraint("cap", &[(a, 2.0), (b, 2.0)], Sense::Le, 3.0);
        p.set_objective(&[(a, 3.0), (b, 2.0)]);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.values.unwrap(), vec![1.0, 0.0]);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_deadline_times_out_without_incumbent() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let a = p.binary("x1");
        p.set_objective(&[(a, 1.0)]);
        let s = solve_milp(&p, SolveBudget::deadline(0)).unwrap();
        assert_eq!(s.status, SolveStatus::TimedOut);
        assert!(!s.has_incumbent());
    }

    #[test]
    fn infeasible_integer_problem() {
        // x1 + x2 = 1.5 has LP solutions but no binary ones.
        let mut p = MilpProblem::new(ObjectiveSense::Minimize);
        let a = p.binary("a");
        let b = p.binary("b");
        p.add_constraint("half", &[(a, 1.0), (b, 1.0)], Sense::Eq, 1.5);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn tied_optima_are_reproducible() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let a = p.binary("a");
        let b = p.binary("b");
        let c = p.continuous("c", 0.0, 0.5);
        p.add_constraint("one", &[(a, 1.0), (b, 1.0), (c, 1.0)], Sense::Le, 1.5);
        p.set_objective(&[(a, 1.0), (b, 1.0), (c, 1.0)]);
        let s1 = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        let s2 = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert!((s1.objective - 1.5).abs() < 1e-9);
        assert_eq!(s1.values, s2.values);
    }

    #[test]
    fn idle_binaries_round_to_zero() {
        // The binary only gates y; with y at zero either value is feasible.
        let mut p = MilpProblem::new(ObjectiveSense::Minimize);
        let y = p.continuous("y", 0.0, 4.0);
        let b = p.binary("b");
        p.add_constraint("gate", &[(y, 1.0), (b, -4.0)], Sense::Le, 0.0);
        p.add_constraint("need", &[(y, 1.0)], Sense::Ge, 0.0);
        p.set_objective(&[(y, 1.0)]);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(s.values.unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn node_limit_returns_incumbent_or_nothing() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let xs: Vec<_> = (0..6).map(|i| p.binary(format!("x{i}"))).collect();
        let w = [3.0, 5.0, 7.0, 2.0, 4.0, 6.0];
        let terms: Vec<_> = xs.iter().zip(w).map(|(&x, w)| (x, w)).collect();
        p.add_constraint("cap", &terms, Sense::Le, 10.5);
        let obj: Vec<_> = xs.iter().zip(w).map(|(&x, w)| (x, w + 0.1)).collect();
        p.set_objective(&obj);
        let s = solve_milp(
            &p,
            SolveBudget {
                deadline_ms: None,
                node_limit: Some(1),
            },
        )
        .unwrap();
        assert!(matches!(s.status, SolveStatus::TimedOut | SolveStatus::Optimal));
        let full = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(full.status, SolveStatus::Optimal);
        if let Some(v) = s.values {
            assert!(p.objective_value(&v) <= full.objective + 1e-9);
        }
    }
}
