//! Dense-tableau primal simplex with implicit variable bounds.
//!
//! Rows are `a·x + s = b` with one slack per row; slack bounds encode the row
//! sense. Rows whose slack cannot absorb the initial residual receive an
//! artificial column and a phase-one objective. Pricing is Dantzig's rule,
//! switching to Bland's rule after a run of degenerate pivots so the method
//! cannot cycle.

use web_time::Instant;

use super::{MilpError, MilpProblem, MilpSolution, ObjectiveSense, Sense, SolveStatus, SolverOptions};

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-12;
const DEGENERATE_RUN_BEFORE_BLAND: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct LpOutcome {
    pub status: LpStatus,
    /// Structural values (empty unless optimal).
    pub x: Vec<f64>,
    /// Objective in the problem's own sense, offset included.
    pub objective: f64,
}

pub fn solve_lp_with(problem: &MilpProblem, opts: &SolverOptions) -> Result<MilpSolution, MilpError> {
    problem.validate()?;
    let start = Instant::now();
    let lower: Vec<f64> = problem.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = problem.vars.iter().map(|v| v.upper).collect();
    let out = solve_relaxation(problem, &lower, &upper, opts);
    let wall_ms = start.elapsed().as_millis() as u64;
    Ok(match out.status {
        LpStatus::Optimal => MilpSolution {
            status: SolveStatus::Optimal,
            objective: out.objective,
            relaxation_bound: Some(out.objective),
            values: Some(out.x),
            nodes_explored: 1,
            wall_ms,
        },
        LpStatus::Unbounded => MilpSolution::without_values(SolveStatus::Unbounded, 1, wall_ms),
        LpStatus::Infeasible | LpStatus::IterationLimit => {
            MilpSolution::without_values(SolveStatus::Infeasible, 1, wall_ms)
        }
    })
}

/// Solves the LP over `problem`'s rows with the given variable bounds.
///
/// The problem must already be validated; `lower[j] <= upper[j]` is not
/// assumed (crossed bounds report infeasible).
pub(crate) fn solve_relaxation(
    problem: &MilpProblem,
    lower: &[f64],
    upper: &[f64],
    opts: &SolverOptions,
) -> LpOutcome {
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return LpOutcome::infeasible();
    }
    let mut t = Tableau::build(problem, lower, upper);
    let status = t.run(opts.feasibility_tol);
    if status != LpStatus::Optimal {
        return LpOutcome {
            status,
            x: Vec::new(),
            objective: f64::NAN,
        };
    }
    let x = t.structural_values(lower, upper);
    LpOutcome {
        status,
        objective: problem.objective_value(&x),
        x,
    }
}

impl LpOutcome {
    fn infeasible() -> Self {
        Self {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
        }
    }
}

struct Tableau {
    m: usize,
    /// Total columns currently stored per row.
    width: usize,
    /// Active (non-fixed) structural columns, mapped to problem indices.
    cols: Vec<usize>,
    /// Row-major `m × width` coefficients, equal to `B⁻¹ M`.
    a: Vec<f64>,
    /// Reduced costs for the current phase.
    d: Vec<f64>,
    /// Phase-two costs (minimisation form) per column.
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Residual-adjusted right-hand sides (fixed variables moved over).
    rhs: Vec<f64>,
    /// Original (unscaled) sparse rows over active columns.
    rows: Vec<Vec<(usize, f64)>>,
    /// Artificial column sign per row, if the row has one.
    art_sign: Vec<Option<(usize, f64)>>,
    n_art: usize,
    pivots: u64,
}

impl Tableau {
    fn build(problem: &MilpProblem, lower: &[f64], upper: &[f64]) -> Self {
        let n = problem.n_vars();
        let mut col_of = vec![usize::MAX; n];
        let mut cols = Vec::new();
        for j in 0..n {
            if lower[j] < upper[j] {
                col_of[j] = cols.len();
                cols.push(j);
            }
        }
        let n_act = cols.len();
        let m = problem.constraints.len();

        let sign = match problem.sense {
            ObjectiveSense::Minimize => 1.0,
            ObjectiveSense::Maximize => -1.0,
        };

        let mut lb = Vec::with_capacity(n_act + 2 * m);
        let mut ub = Vec::with_capacity(n_act + 2 * m);
        let mut x = Vec::with_capacity(n_act + 2 * m);
        let mut cost = vec![0.0; n_act + m];
        for &j in &cols {
            lb.push(lower[j]);
            ub.push(upper[j]);
            x.push(if lower[j].is_finite() {
                lower[j]
            } else if upper[j].is_finite() {
                upper[j]
            } else {
                0.0
            });
        }
        for &(j, c) in &problem.objective {
            if col_of[j] != usize::MAX {
                cost[col_of[j]] = sign * c;
            }
        }

        let mut rows = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for c in &problem.constraints {
            let mut r = Vec::with_capacity(c.coeffs.len());
            let mut b = c.rhs;
            for &(j, a) in &c.coeffs {
                if col_of[j] == usize::MAX {
                    b -= a * lower[j];
                } else {
                    r.push((col_of[j], a));
                }
            }
            rows.push(r);
            rhs.push(b);
        }

        // Slack bounds and the initial basis.
        let mut art_sign = vec![None; m];
        let mut slack_val = vec![0.0; m];
        let mut n_art = 0;
        for (i, c) in problem.constraints.iter().enumerate() {
            let (slo, shi) = match c.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lb.push(slo);
            ub.push(shi);
            let act: f64 = rows[i].iter().map(|&(k, a)| a * x[k]).sum();
            let resid = rhs[i] - act;
            if resid >= slo && resid <= shi {
                slack_val[i] = resid;
            } else {
                let s = resid.clamp(slo, shi);
                slack_val[i] = s;
                let q = resid - s;
                art_sign[i] = Some((n_art, if q > 0.0 { 1.0 } else { -1.0 }));
                n_art += 1;
            }
        }
        x.extend_from_slice(&slack_val);

        let width = n_act + m + n_art;
        let mut a = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut is_basic = vec![false; width];
        for i in 0..m {
            let row = &mut a[i * width..(i + 1) * width];
            let scale = art_sign[i].map_or(1.0, |(_, s)| s);
            for &(k, v) in &rows[i] {
                row[k] += scale * v;
            }
            row[n_act + i] = scale;
            match art_sign[i] {
                Some((k, _)) => {
                    row[n_act + m + k] = 1.0;
                    basis[i] = n_act + m + k;
                }
                None => basis[i] = n_act + i,
            }
            is_basic[basis[i]] = true;
        }
        lb.resize(width, 0.0);
        ub.resize(width, f64::INFINITY);
        x.resize(width, 0.0);
        for i in 0..m {
            if let Some((k, _)) = art_sign[i] {
                let act: f64 = rows[i].iter().map(|&(c, v)| v * x[c]).sum::<f64>() + x[n_act + i];
                x[n_act + m + k] = (rhs[i] - act).abs();
            }
        }
        cost.resize(width, 0.0);

        Self {
            m,
            width,
            cols,
            a,
            d: vec![0.0; width],
            cost,
            lb,
            ub,
            x,
            basis,
            is_basic,
            rhs,
            rows,
            art_sign,
            n_art,
            pivots: 0,
        }
    }

    fn n_act(&self) -> usize {
        self.cols.len()
    }

    fn art_start(&self) -> usize {
        self.n_act() + self.m
    }

    fn run(&mut self, feas_tol: f64) -> LpStatus {
        if self.n_art > 0 {
            let phase_one: Vec<f64> = (0..self.width)
                .map(|j| if j >= self.art_start() { 1.0 } else { 0.0 })
                .collect();
            self.price_from(&phase_one);
            match self.iterate() {
                LpStatus::Optimal => {}
                LpStatus::Unbounded => return LpStatus::Infeasible,
                other => return other,
            }
            self.refine_basic_values();
            let infeas: f64 = (self.art_start()..self.width).map(|j| self.x[j].abs()).sum();
            let scale = 1.0 + self.rhs.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
            if infeas > feas_tol * scale {
                return LpStatus::Infeasible;
            }
            self.retire_artificials();
        }
        let cost = self.cost.clone();
        self.price_from(&cost);
        let status = self.iterate();
        if status == LpStatus::Optimal {
            self.refine_basic_values();
        }
        status
    }

    /// Reduced costs `d = c - c_B B⁻¹ M`.
    fn price_from(&mut self, c: &[f64]) {
        self.d.copy_from_slice(&c[..self.width]);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.width..(i + 1) * self.width];
                for (dj, aij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn iterate(&mut self) -> LpStatus {
        let limit = 50_000 + 50 * (self.m as u64 + self.width as u64);
        let mut degenerate_run = 0u32;
        let mut bland = false;
        let mut iters = 0u64;
        loop {
            iters += 1;
            if iters > limit {
                return LpStatus::IterationLimit;
            }
            let Some((q, dir)) = self.choose_entering(bland) else {
                return LpStatus::Optimal;
            };
            let (step, leave) = self.ratio_test(q, dir, bland);
            if step.is_infinite() {
                return LpStatus::Unbounded;
            }
            if step <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
            // Move along the edge.
            if step > 0.0 {
                self.x[q] += dir * step;
                for i in 0..self.m {
                    let aiq = self.a[i * self.width + q];
                    if aiq != 0.0 {
                        self.x[self.basis[i]] -= aiq * dir * step;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip: the entering variable reached its other bound.
                    self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                }
                Some((r, at_upper)) => {
                    let b = self.basis[r];
                    self.x[b] = if at_upper { self.ub[b] } else { self.lb[b] };
                    self.pivot(r, q);
                }
            }
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.width {
            if self.is_basic[j] {
                continue;
            }
            let dj = self.d[j];
            let dir = if dj < -PRICE_TOL && self.x[j] < self.ub[j] {
                1.0
            } else if dj > PRICE_TOL && self.x[j] > self.lb[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Returns the step length and the leaving row (with the bound it hits),
    /// or `None` for a bound flip of the entering variable.
    fn ratio_test(&self, q: usize, dir: f64, bland: bool) -> (f64, Option<(usize, bool)>) {
        let mut best = f64::INFINITY;
        let mut leave: Option<(usize, bool)> = None;
        let mut best_piv = 0.0;
        for i in 0..self.m {
            let aiq = self.a[i * self.width + q];
            if aiq.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let rate = -aiq * dir;
            let (ratio, at_upper) = if rate < 0.0 {
                if !self.lb[b].is_finite() {
                    continue;
                }
                (((self.x[b] - self.lb[b]) / -rate).max(0.0), false)
            } else {
                if !self.ub[b].is_finite() {
                    continue;
                }
                (((self.ub[b] - self.x[b]) / rate).max(0.0), true)
            };
            let better = if ratio < best - 1e-12 {
                true
            } else if ratio <= best + 1e-12 {
                match leave {
                    None => true,
                    Some((r, _)) => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            aiq.abs() > best_piv
                        }
                    }
                }
            } else {
                false
            };
            if better {
                best = best.min(ratio);
                leave = Some((i, at_upper));
                best_piv = aiq.abs();
            }
        }
        let span = self.ub[q] - self.lb[q];
        if span.is_finite() && span <= best {
            return (span, None);
        }
        (best, leave)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        self.pivots += 1;
        let w = self.width;
        let piv = self.a[r * w + q];
        {
            let row = &mut self.a[r * w..(r + 1) * w];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[q] = 1.0;
        }
        let prow: Vec<f64> = self.a[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let row = &mut self.a[i * w..(i + 1) * w];
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (v, p) in self.d.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.d[q] = 0.0;
        }
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    /// Drives zero-valued artificials out of the basis, then drops their
    /// columns when none remain basic.
    fn retire_artificials(&mut self) {
        let start = self.art_start();
        for r in 0..self.m {
            if self.basis[r] < start {
                continue;
            }
            self.x[self.basis[r]] = 0.0;
            let row = &self.a[r * self.width..(r + 1) * self.width];
            let mut best = None;
            let mut best_abs = 1e-7;
            for (j, &v) in row[..start].iter().enumerate() {
                if !self.is_basic[j] && v.abs() > best_abs {
                    best_abs = v.abs();
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                self.pivot(r, j);
            }
        }
        for j in start..self.width {
            self.ub[j] = 0.0;
            if !self.is_basic[j] {
                self.x[j] = 0.0;
            }
        }
        if self.basis.iter().all(|&b| b < start) {
            let new_w = start;
            let mut a = vec![0.0; self.m * new_w];
            for i in 0..self.m {
                a[i * new_w..(i + 1) * new_w]
                    .copy_from_slice(&self.a[i * self.width..i * self.width + new_w]);
            }
            self.a = a;
            self.width = new_w;
            self.d.truncate(new_w);
            self.lb.truncate(new_w);
            self.ub.truncate(new_w);
            self.x.truncate(new_w);
            self.is_basic.truncate(new_w);
            self.cost.truncate(new_w);
            self.art_sign = vec![None; self.m];
            self.n_art = 0;
        }
    }

    /// Recomputes basic values from the original rows: `x_B = B⁻¹ (b - M_N x_N)`.
    /// The slack columns of the tableau hold `B⁻¹`.
    fn refine_basic_values(&mut self) {
        let n_act = self.n_act();
        let mut w = self.rhs.clone();
        for (i, wi) in w.iter_mut().enumerate() {
            for &(k, v) in &self.rows[i] {
                if !self.is_basic[k] {
                    *wi -= v * self.x[k];
                }
            }
            let s = n_act + i;
            if !self.is_basic[s] {
                *wi -= self.x[s];
            }
            if let Some((k, sgn)) = self.art_sign[i] {
                let c = self.art_start() + k;
                if c < self.width && !self.is_basic[c] {
                    *wi -= sgn * self.x[c];
                }
            }
        }
        for r in 0..self.m {
            let row = &self.a[r * self.width..(r + 1) * self.width];
            let v: f64 = row[n_act..n_act + self.m].iter().zip(&w).map(|(s, wi)| s * wi).sum();
            self.x[self.basis[r]] = v;
        }
    }

    fn structural_values(&self, lower: &[f64], upper: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = lower.to_vec();
        for (k, &j) in self.cols.iter().enumerate() {
            let v = self.x[k];
            let tol = 1e-9 * (1.0 + v.abs());
            out[j] = if v < lower[j] && v > lower[j] - tol {
                lower[j]
            } else if v > upper[j] && v < upper[j] + tol {
                upper[j]
            } else {
                v
            };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn lp_examples() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let x = p.continuous("x", 0.0, f64::INFINITY);
        let y = p.continuous("y", 0.0, f64::INFINITY);
        p.add_constraint("cx", &[(x, 1.0)], Sense::Le, 1.0);
        p.add_constraint("cy", &[(y, 1.0)], Sense::Le, 2.0);
        p.set_objective(&[(x, 1.0), (y, 1.0)]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        let v = s.values.unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] - 2.0).abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);

        let mut p = MilpProblem::new(ObjectiveSense::Minimize);
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        p.add_constraint("a", &[(x, 1.0)], Sense::Ge, 1.0);
        p.add_constraint("b", &[(x, 1.0)], Sense::Le, 0.0);
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);

        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let x = p.continuous("x", 0.0, f64::INFINITY);
        p.add_constraint("a", &[(x, 1.0)], Sense::Ge, 0.0);
        p.set_objective(&[(x, 1.0)]);
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn malformed_is_rejected() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let x = p.continuous("x", 0.0, 1.0);
        p.add_constraint("a", &[(x, f64::INFINITY)], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&p), Err(MilpError::MalformedProblem(_))));
    }

    #[test]
    fn handles_free_variables_and_equalities() {
        // min |x - 3| style: x free, x = 3 + p - n, minimize p + n.
        let mut p = MilpProblem::new(ObjectiveSense::Minimize);
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        let pos = p.continuous("p", 0.0, f64::INFINITY);
        let neg = p.continuous("n", 0.0, f64::INFINITY);
        p.add_constraint("def", &[(x, 1.0), (pos, -1.0), (neg, 1.0)], Sense::Eq, 3.0);
        p.add_constraint("cap", &[(x, 1.0)], Sense::Le, -2.0);
        p.set_objective(&[(pos, 1.0), (neg, 1.0)]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective - 5.0).abs() < 1e-9);
        let v = s.values.unwrap();
        assert!((v[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic Beale cycling example (min form).
        let mut p = MilpProblem::new(ObjectiveSense::Minimize);
        let x: Vec<_> = (0..4).map(|i| p.continuous(format!("x{i}"), 0.0, f64::INFINITY)).collect();
        p.add_constraint("r1", &[(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)], Sense::Le, 0.0);
        p.add_constraint("r2", &[(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)], Sense::Le, 0.0);
        p.add_constraint("r3", &[(x[2], 1.0)], Sense::Le, 1.0);
        p.set_objective(&[(x[0], -0.75), (x[1], 150.0), (x[2], -0.02), (x[3], 6.0)]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-9);
    }

    #[test]
    fn fixed_variables_are_respected() {
        let mut p = MilpProblem::new(ObjectiveSense::Maximize);
        let x = p.continuous("x", 2.0, 2.0);
        let y = p.continuous("y", 0.0, 10.0);
        p.add_constraint("sum", &[(x, 1.0), (y, 1.0)], Sense::Le, 5.0);
        p.set_objective(&[(x, 1.0), (y, 1.0)]);
        let s = solve_lp(&p).unwrap();
        let v = s.values.unwrap();
        assert_eq!(v[0], 2.0);
        assert!((v[1] - 3.0).abs() < 1e-9);
    }
}
