use proptest::prelude::*;

use sparse_dflm::bench::{average_trace, first_crossing, least_fevals, profile, CountMode};
use sparse_dflm::lm::{lm_step, predicted_reduction, update_sigma, update_theta};
use sparse_dflm::record::TracePoint;
use sparse_dflm::recovery::{bp_solve, RecoveryOptions, RecoveryProblem, RecoveryStatus};
use sparse_dflm::sensing::generate;
use sparse_dflm::validate::check_history;
use sparse_dflm::{problems, solve, Distribution, Matrix, PPolicy, RunRecord, SolverConfig, StopReason, Vector};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn vector(len: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-3.0..3.0f64, len).prop_map(Vector::from_vec)
}

fn lm_case() -> impl Strategy<Value = (Matrix, Vector, f64)> {
    (1usize..7, 1usize..7)
        .prop_flat_map(|(m, n)| (matrix(m, n), vector(m), -8.0..2.0f64))
        .prop_map(|(j, f, lt)| (j, f, 10f64.powf(lt)))
        .prop_filter("nonzero model gradient", |(j, f, _)| (j.transpose() * f).norm() > 1e-6)
}

fn model(j: &Matrix, f: &Vector, d: &Vector) -> f64 {
    (f + j * d).norm_squared()
}

fn distribution() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        Just(Distribution::Gaussian),
        Just(Distribution::Bernoulli),
        Just(Distribution::BernoulliLike),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lm_step_is_stationary_for_regularized_model((j, f, theta) in lm_case()) {
        let (d, lambda) = lm_step(&j, &f, theta).unwrap();
        let g = j.transpose() * &f;
        prop_assert!(lambda >= theta * g.norm() * (1.0 - 1e-12));
        let resid = (j.transpose() * &j) * &d + &d * lambda + &g;
        prop_assert!(resid.norm() <= 1e-8 * (g.norm() + lambda * d.norm()));
    }

    #[test]
    fn lm_step_solves_the_trust_region_subproblem(
        (j, f, theta) in lm_case(),
        dirs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 8),
    ) {
        // d minimizes ‖F + J d‖² over the ball of radius ‖d‖.
        let (d, _) = lm_step(&j, &f, theta).unwrap();
        let radius = d.norm();
        let best = model(&j, &f, &d);
        for dir in dirs {
            let e = Vector::from_iterator(d.len(), dir.into_iter().cycle().take(d.len()));
            if e.norm() == 0.0 {
                continue;
            }
            let trial = &e * (radius / e.norm());
            prop_assert!(model(&j, &f, &trial) >= best - 1e-9 * (1.0 + best));
        }
    }

    #[test]
    fn lm_step_respects_the_step_bound((j, f, theta) in lm_case()) {
        let (d, _) = lm_step(&j, &f, theta).unwrap();
        prop_assert!(d.norm() <= 1.0 / theta + 1e-12);
    }

    #[test]
    fn cauchy_decrease_holds((j, f, theta) in lm_case()) {
        let (d, _) = lm_step(&j, &f, theta).unwrap();
        let g = (j.transpose() * &f).norm();
        let h = j.singular_values().max().powi(2);
        let pred = predicted_reduction(&f, &j, &d);
        let bound = g * d.norm().min(g / h);
        prop_assert!(pred >= bound - 1e-10 * f.norm_squared(), "pred {} < {}", pred, bound);
    }

    #[test]
    fn theta_never_drops_below_floor(
        lt in -8.0..4.0f64,
        rho in prop_oneof![Just(f64::NEG_INFINITY), -2.0..2.0f64],
        lg in -12.0..12.0f64,
    ) {
        let cfg = SolverConfig::for_dimension(10);
        let theta = 10f64.powf(lt).max(cfg.theta_min);
        let next = update_theta(theta, rho, 10f64.powf(lg), &cfg);
        prop_assert!(next >= cfg.theta_min);
        if rho.is_nan() || rho <= cfg.eta0 {
            prop_assert_eq!(next, cfg.gamma2 * theta);
        }
    }

    #[test]
    fn sigma_stays_in_bounds(d in 0.0..1e3f64) {
        let cfg = SolverConfig::for_dimension(10);
        let s = update_sigma(d, &cfg);
        prop_assert!(s >= cfg.sigma_bounds[0] && s <= cfg.sigma_bounds[1]);
    }

    #[test]
    fn sensing_entries_follow_their_distribution(
        p in 1usize..12, n in 1usize..30, dist in distribution(), seed in any::<u64>(),
    ) {
        let a = generate(p, n, dist, seed).unwrap();
        prop_assert_eq!(a.entries().shape(), (p, n));
        let again = generate(p, n, dist, seed).unwrap();
        prop_assert_eq!(a.entries(), again.entries());
        let pf = p as f64;
        for row in a.entries().row_iter() {
            match dist {
                Distribution::Bernoulli => {
                    prop_assert!(row.iter().all(|v| (v.abs() - 1.0 / pf.sqrt()).abs() < 1e-15));
                    prop_assert!((row.norm() - (n as f64 / pf).sqrt()).abs() < 1e-12);
                }
                Distribution::BernoulliLike => {
                    let c = (3.0 / pf).sqrt();
                    prop_assert!(row.iter().all(|v| *v == 0.0 || (v.abs() - c).abs() < 1e-15));
                    prop_assert!(row.norm() <= (3.0 * n as f64 / pf).sqrt() + 1e-12);
                }
                Distribution::Gaussian => prop_assert!(row.iter().all(|v| v.is_finite())),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn basis_pursuit_is_feasible_and_no_worse_than_the_plant(
        seed in any::<u64>(),
        support in prop::collection::btree_set(0usize..30, 1..4),
        values in prop::collection::vec(prop_oneof![-2.0..-0.1f64, 0.1..2.0f64], 3),
    ) {
        let a = generate(14, 30, Distribution::Gaussian, seed).unwrap().entries().clone();
        let mut g = Vector::zeros(30);
        for (j, v) in support.iter().zip(values) {
            g[*j] = v;
        }
        let b = &a * &g;
        let opts = RecoveryOptions::default();
        let res = bp_solve(&RecoveryProblem::new(a, b.clone(), 0.0).unwrap(), &opts).unwrap();
        prop_assert_eq!(res.status, RecoveryStatus::Optimal);
        prop_assert!(res.residual_norm <= opts.feasibility_tol * (1.0 + b.norm()) * 10.0);
        prop_assert!(res.l1_norm <= g.lp_norm(1) * (1.0 + 1e-7) + 1e-9);
    }
}

fn counts() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (1usize..5, 1usize..6).prop_flat_map(|(s, p)| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 1.0..500.0f64), p), s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn profile_curves_are_monotone_fractions(n in counts(), steps in 1usize..40) {
        let solvers: Vec<String> = (0..n.len()).map(|s| format!("s{s}")).collect();
        let problems: Vec<String> = (0..n[0].len()).map(|p| format!("p{p}")).collect();
        let alphas: Vec<f64> = (0..steps).map(|i| (i as f64 * 0.25).exp2()).collect();
        let prof = profile(1e-4, solvers, problems, n.clone(), alphas).unwrap();
        for curve in &prof.pi {
            prop_assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        }
        // Every problem with a finite minimum is won by someone at α = 1.
        let np = n[0].len();
        let solvable = (0..np).filter(|&p| n.iter().any(|row| row[p].is_some())).count();
        let at_one: f64 = prof.pi.iter().map(|c| c[0]).sum();
        prop_assert!(at_one * np as f64 >= solvable as f64 - 1e-9);
    }
}

fn record_with(trace: Vec<TracePoint>) -> RunRecord {
    RunRecord {
        solver_id: "s".into(),
        problem_id: "p".into(),
        n: 1,
        m: 1,
        seed: 0,
        config: SolverConfig::for_dimension(1),
        f0: trace.first().map_or(f64::NAN, |t| t.best_f),
        final_f: trace.last().map_or(f64::NAN, |t| t.best_f),
        final_grad_model_norm: None,
        fevals: trace.last().map_or(0, |t| t.fevals),
        iterations: 0,
        stop_reason: StopReason::MaxFevals,
        error: None,
        wall_time_ms: 0.0,
        x_final: vec![0.0],
        trace,
        history: Vec::new(),
    }
}

fn trace() -> impl Strategy<Value = Vec<TracePoint>> {
    (1usize..4, prop::collection::vec((1usize..20, 0.0..1.0f64), 1..12)).prop_map(|(start, steps)| {
        let mut fe = start;
        let mut f = 100.0;
        steps
            .into_iter()
            .map(|(df, shrink)| {
                let point = TracePoint { fevals: fe, best_f: f };
                fe += df;
                f *= shrink;
                point
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn averaged_trace_is_the_carried_forward_mean(traces in prop::collection::vec(trace(), 1..6)) {
        let records: Vec<RunRecord> = traces.into_iter().map(record_with).collect();
        let refs: Vec<&RunRecord> = records.iter().collect();
        let avg = average_trace(&refs);
        prop_assert!(avg.windows(2).all(|w| w[0].fevals < w[1].fevals && w[0].best_f >= w[1].best_f));
        for point in &avg {
            let mut sum = 0.0;
            for r in &records {
                let last = r.trace.iter().rev().find(|t| t.fevals <= point.fevals);
                prop_assert!(last.is_some());
                sum += last.unwrap().best_f;
            }
            let mean = sum / records.len() as f64;
            prop_assert!((point.best_f - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
        // Every grid point at or past the latest start is present.
        let start = records.iter().map(|r| r.trace[0].fevals).max().unwrap();
        let grid: std::collections::BTreeSet<usize> =
            records.iter().flat_map(|r| r.trace.iter().map(|t| t.fevals)).filter(|&f| f >= start).collect();
        prop_assert_eq!(avg.iter().map(|t| t.fevals).collect::<Vec<_>>(), grid.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn least_fevals_thresholds_the_averaged_trace(
        traces in prop::collection::vec(trace(), 1..6),
        lt in -8.0..-0.5f64,
    ) {
        let tau = 10f64.powf(lt);
        let records: Vec<RunRecord> = traces.into_iter().map(record_with).collect();
        let refs: Vec<&RunRecord> = records.iter().collect();
        let f_star = records.iter().map(|r| r.trace.last().unwrap().best_f).fold(f64::INFINITY, f64::min);
        let f0 = 100.0;
        let n = least_fevals(&refs, tau, f0, f_star, usize::MAX, CountMode::AveragedTrace);
        let avg = average_trace(&refs);
        let threshold = tau * f0 + (1.0 - tau) * f_star;
        let expected = avg.iter().find(|t| t.best_f <= threshold).map(|t| t.fevals as f64);
        prop_assert_eq!(n, expected);
        prop_assert_eq!(n.map(|v| v as usize), first_crossing(&avg, tau, f0, f_star, usize::MAX));
        // Per-run counts of a single run agree with the averaged mode.
        let one = [refs[0]];
        prop_assert_eq!(
            least_fevals(&one, tau, f0, f_star, usize::MAX, CountMode::AveragedTrace),
            least_fevals(&one, tau, f0, f_star, usize::MAX, CountMode::PerRunMean)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_histories_satisfy_the_update_rules(seed in any::<u64>(), p in 3usize..8, dist in distribution()) {
        let prob = problems::broyden_tridiagonal(10).unwrap();
        let mut cfg = SolverConfig::for_dimension(10).with_p(PPolicy::Fixed(p)).with_seed(seed).with_distribution(dist);
        cfg.max_fevals = 400;
        let rec = solve(&prob, &cfg).unwrap();
        let violations = check_history(&rec);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        prop_assert!(rec.trace.windows(2).all(|w| w[0].fevals < w[1].fevals && w[0].best_f >= w[1].best_f));
    }
}
