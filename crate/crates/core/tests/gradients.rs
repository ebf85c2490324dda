mod common;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_operation_matches_finite_differences() {
    let errs = common::op_gradient_errors().unwrap();
    let bad: Vec<_> = errs.iter().filter(|(_, e)| !(*e <= TOLERANCE)).collect();
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn composite_objectives_match_finite_differences() {
    let errs = common::composite_gradient_errors().unwrap();
    assert_eq!(errs.len(), 5);
    let bad: Vec<_> = errs.iter().filter(|(_, e)| !(*e <= TOLERANCE)).collect();
    assert!(bad.is_empty(), "{bad:?}");
}
