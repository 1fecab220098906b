mod common;

use gridbound::milp::{check_solution, solve_lp, solve_milp, ObjectiveSense, SolveBudget, SolveStatus, VarKind};

#[test]
fn twenty_random_milps_match_enumeration() {
    for seed in 0..20u64 {
        let p = common::random_milp(1000 + seed);
        let oracle = common::brute_force(&p);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        match oracle {
            None => assert_eq!(s.status, SolveStatus::Infeasible, "seed {seed}"),
            Some((obj, _)) => {
                assert_eq!(s.status, SolveStatus::Optimal, "seed {seed}");
                assert!((s.objective - obj).abs() < 1e-6, "seed {seed}: {} vs {obj}", s.objective);
                let x = s.values.as_ref().unwrap();
                assert!(check_solution(&p, x).unwrap().is_empty(), "seed {seed}");
            }
        }
    }
}

#[test]
fn milp_never_beats_its_relaxation() {
    for seed in 0..40u64 {
        let p = common::random_milp(5000 + seed);
        let s = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        if s.status != SolveStatus::Optimal {
            continue;
        }
        let lp = solve_lp(&p).unwrap();
        assert_eq!(lp.status, SolveStatus::Optimal);
        match p.sense {
            ObjectiveSense::Maximize => assert!(s.objective <= lp.objective + 1e-6),
            ObjectiveSense::Minimize => assert!(s.objective >= lp.objective - 1e-6),
        }
        // Recomputed objective agrees with the reported one.
        let x = s.values.unwrap();
        assert!((p.objective_value(&x) - s.objective).abs() < 1e-6);
        for (v, xj) in p.vars.iter().zip(&x) {
            if v.kind == VarKind::Binary {
                assert!((xj - xj.round()).abs() <= 1e-7);
            }
        }
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    for seed in 0..10u64 {
        let p = common::random_milp(9000 + seed);
        let a = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        let b = solve_milp(&p, SolveBudget::unlimited()).unwrap();
        assert_eq!(a.status, b.status);
        let bits = |v: &Option<Vec<f64>>| v.as_ref().map(|x| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        assert_eq!(bits(&a.values), bits(&b.values));
    }
}

