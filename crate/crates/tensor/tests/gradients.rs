use emonext_tensor::gradcheck::suite::{primitive_checks, PRIMITIVE_TOLERANCE};
use emonext_tensor::{grad_check, testing, Tensor};

#[test]
fn every_primitive_passes_on_five_seeds() {
    for check in primitive_checks() {
        for seed in 0..5 {
            let report = (check.run)(seed).unwrap();
            assert!(
                report.max_rel_error < PRIMITIVE_TOLERANCE,
                "{} seed {seed}: {:?}",
                check.name,
                report
            );
        }
    }
}

#[test]
fn gelu_sum_within_tolerance() {
    let x = Tensor::<f64>::from_f64(&[-1.3, -0.2, 0.0, 0.4, 1.7, 2.9], &[6]).unwrap();
    let err = grad_check(|v| Ok(v[0].gelu()?.sum()), &[x], 1e-4).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn corrupted_rule_is_detected() {
    let gelu = primitive_checks().into_iter().find(|c| c.name == "gelu").unwrap();
    testing::corrupt_backward(Some(("gelu", 1.1)));
    let report = (gelu.run)(0);
    testing::corrupt_backward(None);
    assert!(report.unwrap().max_rel_error > PRIMITIVE_TOLERANCE);
}
