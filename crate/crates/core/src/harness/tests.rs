use super::*;
use crate::problems::{Loss, SparseRegression};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cfg(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(json, std::env::temp_dir()).unwrap()
}

fn random_rows(m: usize, n: usize, seed: u64) -> (Vec<Point>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let rows = (0..m).map(|_| Point::from((0..n).map(|_| g()).collect::<Vec<f64>>())).collect();
    let targets = (0..m).map(|_| g()).collect();
    (rows, targets)
}

#[test]
fn least_squares_oracle_square_and_consistent_systems() {
    let rows = vec![Point::from([2.0, 1.0]), Point::from([1.0, 3.0])];
    let out = oracle_least_squares(&rows, &[3.0, 5.0]).unwrap();
    // 2x + y = 3, x + 3y = 5
    assert!(out.solution.dist(&Point::from([0.8, 1.4])) < 1e-14);

    let rows = vec![Point::from([1.0, 0.0]), Point::from([0.0, 1.0]), Point::from([1.0, 1.0])];
    let out = oracle_least_squares(&rows, &[1.0, 2.0, 3.0]).unwrap();
    assert!(out.solution.dist(&Point::from([1.0, 2.0])) < 1e-14);
    assert_eq!(out.method, "normal_equations");
}

#[test]
fn least_squares_oracle_random_system_meets_its_accuracy() {
    let (rows, targets) = random_rows(10, 5, 1);
    let out = oracle_least_squares(&rows, &targets).unwrap();
    // recompute the normal-equation residual independently
    let mut res = [0.0; 5];
    for (a, eta) in rows.iter().zip(&targets) {
        let r = a.dot(&out.solution) - eta;
        for (k, v) in res.iter_mut().enumerate() {
            *v += a[k] * r;
        }
    }
    let norm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-12, "{norm}");
}

#[test]
fn least_squares_oracle_rejects_rank_deficiency() {
    let rows = vec![Point::from([1.0, 2.0]), Point::from([2.0, 4.0])];
    assert!(matches!(
        oracle_least_squares(&rows, &[1.0, 2.0]),
        Err(OracleError::RankDeficient(_))
    ));
    assert!(oracle_least_squares(&rows, &[1.0]).is_err());
}

#[test]
fn prox_grad_oracle_single_quadratic() {
    // f_0 = 0, f_1(x) = (<a, x> - eta)^2: from zero the iteration stays in
    // span{a} and converges to eta a / ||a||^2
    let a = Point::from([1.0, 2.0, -2.0]);
    let inst = SparseRegression::new(vec![a.clone()], vec![3.0], 0.0, Loss::Squared).unwrap();
    let out = oracle_prox_grad_reference(&inst).unwrap();
    assert!(out.solution.dist(&a.scale(3.0 / 9.0)) < 1e-12);
}

#[test]
fn prox_grad_oracle_lasso_and_logistic_are_optimal() {
    let lasso = SparseRegression::lasso_random(20, 30, 1);
    let out = oracle_prox_grad_reference(&lasso).unwrap();
    assert!(out.accuracy <= PROX_GRAD_OPTIMALITY);
    assert!(lasso.optimality_residual(&out.solution) <= PROX_GRAD_OPTIMALITY);

    let logistic = SparseRegression::logistic_random(10, 40, 2);
    let out = oracle_prox_grad_reference(&logistic).unwrap();
    assert!(logistic.optimality_residual(&out.solution) <= PROX_GRAD_OPTIMALITY);
}

#[test]
fn regression_csv_parsing() {
    let text = "# a1, a2, eta\n1.0, 2.0, 3.0\n\n# noise\n-1, 0.5, 2\n";
    let (rows, targets) = parse_regression_csv(text.as_bytes()).unwrap();
    assert_eq!(rows, vec![Point::from([1.0, 2.0]), Point::from([-1.0, 0.5])]);
    assert_eq!(targets, vec![3.0, 2.0]);
    assert!(parse_regression_csv("1.0\n".as_bytes()).is_err());
    assert!(parse_regression_csv("1.0, x\n".as_bytes()).is_err());
    assert!(parse_regression_csv("1, 2, 3\n1, 2\n".as_bytes()).is_err());
    assert!(parse_regression_csv("# only comments\n".as_bytes()).is_err());
}

#[test]
fn trace_csv_round_trips_exactly() {
    let c = cfg(r#"{
        "problem": {"kind": "lasso", "random": {"dim": 5, "m": 8, "seed": 4}},
        "schedule": {"kind": "quasicyclic", "k": 3, "seed": 9},
        "errors": {"scale": 0.01, "seed": 2},
        "solver": {"max_iters": 60, "check_every": 7}
    }"#);
    let exp = run_experiment_full(&c).unwrap();
    let back = read_trace(exp.trace_csv.as_bytes(), 3).unwrap();
    assert_eq!(trace_to_csv(&back), exp.trace_csv);
    let header = exp.trace_csv.lines().next().unwrap();
    assert_eq!(header, "n,residual,step,err0,errsum,block,dist_ref");
    // blocks are written 1-based
    let first_block = &back.records[0].block;
    assert!(first_block.iter().all(|&i| i < 8));
    assert!(exp.trace_csv.lines().nth(1).unwrap().split(',').nth(5).unwrap().split(';').all(|s| s != "0"));
}

#[test]
fn lasso_with_full_activation_converges() {
    let c = cfg(r#"{
        "problem": {"kind": "lasso", "random": {"dim": 10, "m": 12, "seed": 1}},
        "solver": {"max_iters": 100000, "tol": 1e-9}
    }"#);
    let s = run_experiment(&c).unwrap();
    assert_eq!(s.exit_code, EXIT_CONVERGED);
    assert!(s.final_residual <= 1e-9);
    assert_eq!(s.k, 1);
    assert!(s.audits.fejer.as_ref().unwrap().passed);
}

#[test]
fn insufficient_covering_constant_exits_3() {
    let c = cfg(r#"{
        "problem": {"kind": "common_fixed_point", "sets": [
            {"set": "halfspace", "normal": [1, 0], "offset": 0},
            {"set": "halfspace", "normal": [0, 1], "offset": 0},
            {"set": "ball", "center": [0, 0], "radius": 5}
        ]},
        "schedule": {"kind": "cyclic", "block_size": 1, "k": 2}
    }"#);
    let r = run_experiment(&c);
    assert_eq!(exit_code(&r), EXIT_COVERING, "{r:?}");
}

#[test]
fn missing_data_file_exits_2() {
    let c = cfg(r#"{"problem": {"kind": "lasso", "data": "definitely/not/here.csv"}}"#);
    let r = run_experiment(&c);
    assert!(matches!(r, Err(HarnessError::Io { .. })));
    assert_eq!(exit_code(&r), EXIT_CONFIG);
}

#[test]
fn malformed_configs_exit_2() {
    for text in [
        "{",
        r#"{"problem": {"kind": "nope"}}"#,
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}}, "surprise": 1}"#,
    ] {
        let r = ExperimentConfig::from_json_str(text, ".");
        assert_eq!(r.unwrap_err().exit_code(), EXIT_CONFIG);
    }
    for text in [
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}}, "solver": {"epsilon": 1.5}}"#,
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}}, "solver": {"max_iters": 0}}"#,
        r#"{"problem": {"kind": "lasso"}}"#,
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}, "gamma": 100}}"#,
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}}, "x0": [1, 2, 3]}"#,
        r#"{"problem": {"kind": "alternating_projections",
            "c": {"set": "ball", "center": [0, 0], "radius": -1},
            "d": {"set": "ball", "center": [0, 0], "radius": 1}}}"#,
        r#"{"problem": {"kind": "lasso", "random": {"dim": 2, "m": 2}},
            "schedule": {"kind": "explicit", "blocks": [[0]], "k": 1}}"#,
    ] {
        let r = run_experiment(&cfg(text));
        assert_eq!(exit_code(&r), EXIT_CONFIG, "{text}: {r:?}");
    }
}

#[test]
fn singular_resolvent_diverges_with_exit_4() {
    // A = -2 Id is not 0.1-cohypomonotone; with gamma = 0.5 the resolvent
    // system I + gamma A is singular and the iterate becomes NaN
    let c = cfg(r#"{
        "problem": {"kind": "cohypomonotone",
            "operators": [{"matrix": [[-2, 0], [0, -2]]}],
            "rhos": [0.1], "gammas": [0.5]},
        "x0": [1, 1],
        "audit": {"enabled": false}
    }"#);
    let r = run_experiment(&c);
    assert_eq!(exit_code(&r), EXIT_DIVERGED, "{r:?}");
}

#[test]
fn not_converging_within_cap_exits_1() {
    let c = cfg(r#"{
        "problem": {"kind": "lasso", "random": {"dim": 6, "m": 6, "seed": 3}},
        "solver": {"max_iters": 5, "tol": 1e-14}
    }"#);
    let s = run_experiment(&c).unwrap();
    assert_eq!(s.exit_code, EXIT_NOT_CONVERGED);
    assert_eq!(s.iterations, 5);
}

#[test]
fn reruns_are_byte_identical_and_reaudits_agree() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "problem": {"kind": "least_squares", "random": {"dim": 4, "m": 6}},
        "schedule": {"kind": "quasicyclic", "k": 3},
        "errors": {"scale": 0.001},
        "solver": {"max_iters": 400, "variant": "economical", "threads": 2},
        "seed": 11,
        "output": {"trace": "trace.csv", "summary": "summary.json"}
    }"#;
    let c = ExperimentConfig::from_json_str(text, dir.path()).unwrap();
    let first = run_experiment(&c).unwrap();
    let bytes1 = std::fs::read(dir.path().join("trace.csv")).unwrap();
    let second = run_experiment(&c).unwrap();
    let bytes2 = std::fs::read(dir.path().join("trace.csv")).unwrap();
    assert_eq!(bytes1, bytes2);
    assert_eq!(first.solution, second.solution);

    let persisted = read_trace_file(&dir.path().join("trace.csv"), 0).unwrap();
    let replay = audit_persisted(&c, &persisted).unwrap();
    assert_eq!(replay, first.audits);
    assert!(replay.fejer.as_ref().unwrap().passed);

    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.audits, first.audits);
}

#[test]
fn serial_and_threaded_traces_match() {
    let base = r#"{
        "problem": {"kind": "lasso", "random": {"dim": 8, "m": 10, "seed": 5}},
        "schedule": {"kind": "cyclic", "block_size": 5},
        "solver": {"max_iters": 200, "threads": THREADS}
    }"#;
    let one = run_experiment_full(&cfg(&base.replace("THREADS", "1"))).unwrap();
    let four = run_experiment_full(&cfg(&base.replace("THREADS", "4"))).unwrap();
    assert_eq!(one.trace_csv, four.trace_csv);
}

#[test]
fn every_problem_kind_builds_and_runs() {
    let kinds = [
        r#"{"kind": "logistic", "random": {"dim": 3, "m": 8, "seed": 2}}"#,
        r#"{"kind": "feasibility_relaxation",
            "c0": {"set": "nonnegative_orthant", "dim": 2},
            "terms": [
                {"phi": "half_square", "set": {"set": "hyperplane", "normal": [1, 1], "offset": 1}},
                {"phi": {"huber": 0.5}, "map": [[1, -1]], "set": {"set": "singleton", "point": [0]}}
            ]}"#,
        r#"{"kind": "alternating_projections",
            "c": {"set": "hyperplane", "normal": [0, 1], "offset": 1},
            "d": {"set": "ball", "center": [0, 0], "radius": 1}}"#,
        r#"{"kind": "residual_system", "matrices": [[[0.5, 0], [0, 0.5]]], "targets": [[1, 1]]}"#,
        r#"{"kind": "prox_grad", "outer": {"kind": "l1", "alpha": 0.1},
            "operators": [{"matrix": [[2, 0], [0, 1]], "offset": [-1, 1]}]}"#,
        r#"{"kind": "forward_backward",
            "outer": {"kind": "normal_cone", "set": {"set": "box", "lower": [0, 0], "upper": [1, 1]}},
            "operators": [{"matrix": [[1, 0], [0, 1]], "offset": [-2, 0.5]}]}"#,
        r#"{"kind": "cohypomonotone", "operators": [{"matrix": [[-1, 0], [0, -1]]}],
            "rhos": [1], "gammas": [2]}"#,
    ];
    for k in kinds {
        let text = format!(r#"{{"problem": {k}, "x0": null, "solver": {{"max_iters": 20000, "check_every": 1}}}}"#);
        let c = cfg(&text);
        let s = run_experiment(&c).unwrap_or_else(|e| panic!("{k}: {e}"));
        assert_eq!(s.exit_code, EXIT_CONVERGED, "{k}");
        assert!(s.audits.all_passed(), "{k}: {:?}", s.audits);
    }
}

#[test]
fn schedule_check_reports() {
    let c = cfg(r#"{
        "problem": {"kind": "least_squares", "random": {"dim": 3, "m": 5, "seed": 1}},
        "schedule": {"kind": "quasicyclic", "k": 3, "seed": 4}
    }"#);
    let rep = schedule_check_config(&c, 100).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let bad = cfg(r#"{
        "problem": {"kind": "least_squares", "random": {"dim": 3, "m": 5, "seed": 1}},
        "schedule": {"kind": "cyclic", "block_size": 1, "k": 3}
    }"#);
    let rep = schedule_check_config(&bad, 100).unwrap();
    assert!(!rep.covering_ok);
    assert!(!rep.passed());
}

#[test]
fn threads_respect_the_environment_cap() {
    assert_eq!(resolve_threads(Some(8), Some("3")).unwrap(), 3);
    assert_eq!(resolve_threads(Some(2), Some("3")).unwrap(), 2);
    assert_eq!(resolve_threads(None, Some(" 3 ")).unwrap(), 3);
    assert_eq!(resolve_threads(Some(4), None).unwrap(), 4);
    assert_eq!(resolve_threads(None, None).unwrap(), 1);
    assert!(resolve_threads(None, Some("zero")).is_err());
    assert!(resolve_threads(None, Some("0")).is_err());
}

#[test]
fn schedule_accepts_type_and_uppercase_k() {
    let c = cfg(r#"{
        "problem": {"kind": "least_squares", "random": {"dim": 3, "m": 4, "seed": 1}},
        "schedule": {"type": "cyclic", "m": 4, "K": 2, "block_size": 2}
    }"#);
    assert_eq!(declared_k(&c).unwrap(), 2);
    let wrong_m = cfg(r#"{
        "problem": {"kind": "least_squares", "random": {"dim": 3, "m": 4, "seed": 1}},
        "schedule": {"type": "cyclic", "m": 5, "K": 2, "block_size": 2}
    }"#);
    assert_eq!(exit_code(&run_experiment(&wrong_m)), EXIT_CONFIG);
}
