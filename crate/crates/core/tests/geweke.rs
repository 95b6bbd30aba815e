mod common;

fn check(joint_outcome: bool) {
    let z = common::geweke(20_000, 2024, joint_outcome);
    for (name, v) in &z {
        println!("{name:<16} z = {v:+.3}");
    }
    let bad: Vec<_> = z.iter().filter(|(_, v)| !(v.abs() < 4.0)).collect();
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn joint_distribution_with_joint_outcome_block() {
    check(true);
}

#[test]
fn joint_distribution_with_conditional_outcome_updates() {
    check(false);
}

#[test]
fn planted_prior_mismatch_is_detected() {
    let hyper = common::geweke_hyper();
    let wrong = bnmm_core::Hyperparams {
        sigma2_zy: 4.0 * hyper.sigma2_zy,
        ..hyper.clone()
    };
    let z = common::geweke_mismatched(20_000, 2024, true, &hyper, &wrong);
    let worst = z.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    assert!(worst > 4.0, "{z:?}");
}
