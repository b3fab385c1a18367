//! Finite-horizon MDPs seen through cumulative-prospect-theory distortions of
//! rewards and visitation probabilities, with s-black-swan detection.
//!
//! The [`verify`] module turns the optimality and risk results for these
//! models into executable checks.

// Parameter checks use negated comparisons so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blackswan;
pub mod catalog;
pub mod distortion;
pub mod mdp;
pub mod perception;
pub mod verify;

pub use blackswan::{
    check_prop1, classify_temporal, compute_r_bs, detect, detect_with_tolerance, eps_bs_min, BlackSwanError, BlackSwanReport,
    EventClassification, PairDiagnostic, StepDynamics, Verdict, DEFAULT_ETA_FLAT,
};
pub use distortion::{
    flat_region_model, is_safe_perception, tversky_kahneman_model, validate_probability_distortion, validate_value_distortion, Certificate,
    CheckStatus, DistortionError, DistortionModel, DistortionSpec, PiecewiseLinear, ProbabilityDistortion, ValueCurve, ValueDistortion,
    WeightCurve,
};
pub use mdp::{
    build_mdp, enumerate_deterministic_policies, occupancy, optimal_policy, optimal_value, random_mdp, sample_trajectory, step_visitation,
    value_from_occupancy, value_function, Mdp, MdpError, MdpSpec, OccupancyMeasure, Policy, Trajectory,
};
pub use perception::{
    augment_state, build_hmdp, cpt_value, estimate_hemdp, perception_gaps, reward_distribution, state_distortion_map, HemdpEstimate,
    PerceivedMdp, PerceptionError, RewardDistribution,
};
pub use verify::{
    check_dkw_convergence, check_one_step, check_two_state, check_value_gap_lower_bound, check_visitation_gap_lemma,
    construct_three_state_counterexample, hitting_time_bound, hitting_time_from_probs, monte_carlo_hitting, value_gap_bound, DkwConfig,
    MdpFamily, RandomFamily, RewardTiming, TheoremCheckResult, TheoremId, VerifyError,
};
