#![allow(dead_code)]

use gridbound::milp::{solve_lp, MilpProblem, ObjectiveSense, Sense, SolveStatus, VarKind};
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub struct Gen(SplitMix64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

/// Random MILP with at most 6 binaries, 8 continuous variables, 10 rows.
/// Coefficients are rounded to quarters so ties are exact.
pub fn random_milp(seed: u64) -> MilpProblem {
    let mut g = Gen::new(seed);
    let sense = if g.below(2) == 0 {
        ObjectiveSense::Minimize
    } else {
        ObjectiveSense::Maximize
    };
    let mut p = MilpProblem::new(sense);
    let nb = 1 + g.below(6);
    let nc = g.below(9);
    let mut vars = Vec::new();
    for i in 0..nb {
        vars.push(p.binary(format!("b{i}")));
    }
    for i in 0..nc {
        let lo = (g.range(-4.0, 1.0) * 4.0).round() / 4.0;
        let hi = lo + (g.range(0.5, 8.0) * 4.0).round() / 4.0;
        vars.push(p.continuous(format!("x{i}"), lo, hi));
    }
    let q = |v: f64| (v * 4.0).round() / 4.0;
    // A reference point keeps most instances feasible.
    let point: Vec<f64> = p
        .vars
        .iter()
        .map(|v| match v.kind {
            VarKind::Binary => 0.0,
            VarKind::Continuous => 0.5 * (v.lower + v.upper),
        })
        .collect();
    let nr = 1 + g.below(10);
    for r in 0..nr {
        let mut terms = Vec::new();
        for &v in &vars {
            if g.unit() < 0.6 {
                terms.push((v, q(g.range(-5.0, 5.0))));
            }
        }
        if terms.is_empty() {
            terms.push((vars[g.below(vars.len())], 1.0));
        }
        let act: f64 = terms.iter().map(|&(v, a)| a * point[v.0]).sum();
        let (sense, rhs) = match g.below(5) {
            0 => (Sense::Eq, q(act)),
            1 | 2 => (Sense::Le, q(act + g.range(-1.0, 4.0))),
            _ => (Sense::Ge, q(act - g.range(-1.0, 4.0))),
        };
        p.add_constraint(format!("r{r}"), &terms, sense, rhs);
    }
    let obj: Vec<_> = vars.iter().map(|&v| (v, q(g.range(-6.0, 6.0)))).collect();
    p.set_objective(&obj);
    p
}

/// Enumerates every binary assignment, solving each restricted LP.
/// Returns `None` when no assignment is feasible.
pub fn brute_force(problem: &MilpProblem) -> Option<(f64, Vec<f64>)> {
    let bins: Vec<usize> = (0..problem.n_vars())
        .filter(|&j| problem.vars[j].kind == VarKind::Binary)
        .collect();
    let better = |a: f64, b: f64| match problem.sense {
        ObjectiveSense::Minimize => a < b,
        ObjectiveSense::Maximize => a > b,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut fixed = problem.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = f64::from((mask >> k) & 1);
            fixed.vars[j].lower = v;
            fixed.vars[j].upper = v;
            fixed.vars[j].kind = VarKind::Continuous;
        }
        let s = solve_lp(&fixed).expect("well-formed");
        if s.status == SolveStatus::Optimal {
            let x = s.values.unwrap();
            if best.as_ref().is_none_or(|(o, _)| better(s.objective, *o)) {
                best = Some((s.objective, x));
            }
        }
    }
    best
}
