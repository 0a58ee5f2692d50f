use std::time::Instant;

use fcan::autograd::suite::{gradient_suite, CHECKS, DEFAULT_TRIALS};

fn run<T: fcan::Real>() {
    let start = Instant::now();
    let reports = gradient_suite::<T>(DEFAULT_TRIALS, 11).unwrap();
    assert_eq!(reports.len(), CHECKS.len());
    for r in &reports {
        println!("{:<24} {} max rel err {:.3e} skipped {}/{}", r.name, r.precision, r.max_rel_err, r.skipped, r.checked + r.skipped);
        assert_eq!(r.trials, DEFAULT_TRIALS);
        assert!(r.passed(), "{} failed: {:?}", r.name, r.worst);
    }
    println!("{} suite in {:.1}s", reports[0].precision, start.elapsed().as_secs_f64());
}

#[test]
fn every_op_passes_in_f64() {
    run::<f64>();
}

#[test]
fn every_op_passes_in_f32() {
    run::<f32>();
}
