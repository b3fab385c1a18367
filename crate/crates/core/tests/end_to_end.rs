//! Whole-pipeline runs on the insurance decision and on random instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_core::catalog::{insurance_mdp, insurance_no_pay, INSURANCE_BASE, INSURANCE_RISK, NO_PAY};
use sbs_core::perception::estimate_from_trajectories;
use sbs_core::*;

fn flat_tk() -> DistortionModel {
    flat_region_model(0.02, &tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, 1000.0).unwrap()).unwrap()
}

#[test]
fn insurance_pipeline() {
    let mdp = insurance_mdp();
    let policy = optimal_policy(&mdp);
    assert_eq!(policy.action(0, INSURANCE_BASE), Some(NO_PAY));

    let model = flat_tk();
    let no_pay = insurance_no_pay();
    let pm = build_hmdp(&mdp, &no_pay, &model, INSURANCE_BASE).unwrap();
    assert_eq!(pm.true_value(), -10.0);
    // The risk pair sits in the flat region, so its loss is not perceived.
    assert_eq!(pm.perceived_value(), 0.0);

    let report = detect(&mdp, &no_pay, &model, 500.0, 0.01, INSURANCE_BASE).unwrap();
    assert_eq!(report.events, vec![(INSURANCE_RISK, NO_PAY)]);

    let trajs: Vec<_> = (0..5000).map(|i| sample_trajectory(&mdp, &no_pay, INSURANCE_BASE, i).unwrap()).collect();
    let est = estimate_from_trajectories(&pm, &trajs).unwrap();
    // The sampled loss frequency also falls in the flat region.
    assert_eq!(est.cpt_value_estimate, 0.0);

    let gap = check_value_gap_lower_bound(&mdp, &no_pay, &model, 100.0, 0.01, INSURANCE_BASE).unwrap();
    assert!(gap.passed());
}

#[test]
fn config_files_round_trip() {
    let mdp = insurance_mdp();
    let text = serde_json::to_string(&mdp).unwrap();
    let back: Mdp = serde_json::from_str(&text).unwrap();
    assert_eq!(back, mdp);

    let spec: DistortionSpec = serde_json::from_str(
        r#"{"kind": "tversky_kahneman", "alpha": 0.88, "beta": 0.5, "lambda": 2.25,
            "gamma_plus": 0.61, "gamma_minus": 0.69, "r_max": 1000.0, "flat_region": 0.02}"#,
    )
    .unwrap();
    let model = spec.build().unwrap();
    assert_eq!(model.w_minus(0.01), 0.0);
    assert_eq!(model.u(-1000.0), flat_tk().u(-1000.0));
}

#[test]
fn random_instances_agree_between_occupancy_and_backward_induction() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let mdp = random_mdp(4, 3, 6, 0.9, 5.0, &mut rng);
        let policy = optimal_policy(&mdp);
        let occ = occupancy(&mdp, &policy, 0).unwrap();
        let v = value_function(&mdp, &policy, 0).unwrap();
        assert!((value_from_occupancy(&mdp, &occ).unwrap() - v).abs() < 1e-9);
        assert!((optimal_value(&mdp, 0).unwrap() - v).abs() < 1e-12);
        let dist = reward_distribution(&mdp, &policy, 0).unwrap();
        let identity = DistortionModel::identity_limit(5.0);
        assert!((cpt_value(&dist, &identity, mdp.normalizer()) - v).abs() < 1e-9);
    }
}

#[test]
fn identity_limit_has_no_perception_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mdp = random_mdp(3, 2, 4, 0.8, 2.0, &mut rng);
    let policy = Policy::uniform(3, 2, 4);
    let pm = build_hmdp(&mdp, &policy, &DistortionModel::identity_limit(2.0), 0).unwrap();
    let (eps_r, eps_d) = perception_gaps(&pm);
    assert!(eps_r < 1e-12 && eps_d < 1e-12);
    assert!((pm.perceived_value() - pm.true_value()).abs() < 1e-9);
}
