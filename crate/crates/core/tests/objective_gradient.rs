mod common;

#[test]
fn full_objective_matches_finite_differences() {
    let report = common::objective_gradient_check();
    println!("seed {} checked {} low {} max {:.2e} at {}", report.seed, report.checked, report.low_conf, report.max_rel_err, report.worst);
    assert!(report.low_conf > 0);
    assert!(report.checked > 200, "{}", report.checked);
    assert!(report.max_rel_err < 1e-4, "{}", report.worst);
}
