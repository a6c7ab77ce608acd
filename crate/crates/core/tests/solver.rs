use std::sync::Arc;

use sparse_dflm::bench::{run_suite, SolverSpec};
use sparse_dflm::{
    problems, solve, solve_fd_baseline, Error, PPolicy, Problem, Registry, SolverConfig, StopReason, Vector,
};

fn fevals_per_iteration(rec: &sparse_dflm::RunRecord) -> Vec<usize> {
    let mut prev = 1;
    rec.history
        .iter()
        .map(|it| {
            let d = it.fevals - prev;
            prev = it.fevals;
            d
        })
        .collect()
}

#[test]
fn fd_baseline_pays_n_per_model() {
    let prob = problems::broyden_tridiagonal(100).unwrap();
    let mut cfg = SolverConfig::for_dimension(100).with_p(PPolicy::Fixed(50)).with_seed(1);
    cfg.max_fevals = 3000;
    let fd = solve_fd_baseline(&prob, &cfg).unwrap();
    let sparse = solve(&prob, &cfg).unwrap();
    assert!(fevals_per_iteration(&fd).iter().all(|&c| c >= 101));
    assert!(fevals_per_iteration(&sparse).iter().all(|&c| c <= 51));

    // Both records share one schema.
    let a = serde_json::to_value(&fd).unwrap();
    let b = serde_json::to_value(&sparse).unwrap();
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&a), keys(&b));
    assert_eq!(keys(&a["history"][0]), keys(&b["history"][0]));
}

#[test]
fn registry_round_trip() {
    let reg = Registry::new();
    let p = reg.register(problems::broyden_tridiagonal(100).unwrap()).unwrap();
    assert!(Arc::ptr_eq(&p, &reg.lookup(&p.name).unwrap()));
    assert!(matches!(
        reg.register(problems::broyden_tridiagonal(100).unwrap()),
        Err(Error::DuplicateProblem(_))
    ));
    let wrong = Problem::new("liar", 2, Vector::from_vec(vec![1.0, 2.0]), |x| x.map(|v| v * v))
        .with_jacobian(|x| sparse_dflm::Matrix::from_diagonal(&(x * 3.0)));
    assert!(matches!(reg.register(wrong), Err(Error::InvalidProblem { .. })));
}

#[test]
fn user_problem_through_the_suite() {
    // Separable: F_i(x) = x_i² − i, sparse diagonal Jacobian.
    let n = 12;
    let prob = Problem::new("squares", n, Vector::from_element(n, 1.0), |x: &Vector| {
        Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v * v - (i + 1) as f64))
    });
    let problems = [Arc::new(prob)];
    let solvers = [SolverSpec::DflmFraction(2), SolverSpec::FdLm];
    let records = run_suite(
        &problems,
        &solvers,
        &[1, 2],
        |p: &Problem| SolverConfig::for_dimension(p.n),
        1,
    )
    .unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.stop_reason.is_converged(), "{} {}", r.solver_id, r.stop_reason);
        assert!(r.final_f < 1e-10, "{} {}", r.solver_id, r.final_f);
    }
}

#[test]
fn suite_isolates_failing_runs() {
    let good = problems::broyden_tridiagonal(9).unwrap();
    let bad = Problem::new("cliff", 3, Vector::from_element(3, 1.0), |x: &Vector| {
        if (x[0] - 1.0).abs() > 0.0 {
            Vector::from_element(3, f64::NAN)
        } else {
            x.clone()
        }
    });
    let problems = [Arc::new(good), Arc::new(bad)];
    let records = run_suite(
        &problems,
        &[SolverSpec::DflmFraction(3)],
        &[7],
        |p: &Problem| SolverConfig::for_dimension(p.n),
        2,
    )
    .unwrap();
    let by_name = |name: &str| records.iter().find(|r| r.problem_id == name).unwrap();
    assert_eq!(by_name("cliff").stop_reason, StopReason::Error);
    assert!(by_name("cliff").error.is_some());
    assert_ne!(by_name("broyden-9").stop_reason, StopReason::Error);
}

#[test]
fn empty_suites_are_rejected() {
    let problems = [Arc::new(problems::broyden_tridiagonal(9).unwrap())];
    let cfg = |p: &Problem| SolverConfig::for_dimension(p.n);
    assert!(run_suite(&problems, &[SolverSpec::FdLm], &[], cfg, 1).is_err());
    assert!(run_suite(&problems, &[], &[1], cfg, 1).is_err());
    assert!(run_suite(&[], &[SolverSpec::FdLm], &[1], cfg, 1).is_err());
}
