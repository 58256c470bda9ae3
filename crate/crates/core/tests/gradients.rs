mod common;

use common::suite::{gradient_suite, passes};

#[test]
fn every_trainable_op_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, report) in gradient_suite() {
        let r = report.unwrap_or_else(|e| panic!("{name}: {e}"));
        println!("{name}: max rel error {:.2e} over {} coords ({} skipped)", r.max_rel_error, r.checked, r.skipped);
        if !passes(&r) {
            failures.push(name);
        }
    }
    assert!(failures.is_empty(), "failed: {failures:?}");
}
