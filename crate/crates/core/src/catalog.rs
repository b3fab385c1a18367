//! Small named MDPs used by tests, the acceptance suite and the CLI.

use crate::mdp::{build_mdp, Labels, Mdp, MdpSpec, Policy};

pub const INSURANCE_BASE: usize = 0;
pub const INSURANCE_PREMIUM: usize = 1;
pub const INSURANCE_RISK: usize = 2;
pub const PAY: usize = 0;
pub const NO_PAY: usize = 1;

/// The insurance decision as a two-step MDP.
///
/// From `base` the agent either pays (moving to `premium`, utility -15) or
/// does not pay (staying in `base` w.p. 0.99, falling into `risk` with
/// utility -1000 w.p. 0.01). `premium` and `risk` are absorbing and rewards
/// depend on the state only.
pub fn insurance_mdp() -> Mdp {
    build_mdp(&insurance_spec()).expect("insurance spec is valid")
}

pub fn insurance_spec() -> MdpSpec {
    let absorbing = |s: usize| {
        let mut row = vec![0.0; 3];
        row[s] = 1.0;
        vec![row.clone(), row]
    };
    MdpSpec {
        n_states: 3,
        n_actions: 2,
        gamma: 1.0,
        horizon: 2,
        r_max: 1000.0,
        transition: vec![vec![vec![0.0, 1.0, 0.0], vec![0.99, 0.0, 0.01]], absorbing(INSURANCE_PREMIUM), absorbing(INSURANCE_RISK)],
        reward: vec![vec![0.0, 0.0], vec![-15.0, -15.0], vec![-1000.0, -1000.0]],
        labels: Some(Labels { states: vec!["base".into(), "premium".into(), "risk".into()], actions: vec!["pay".into(), "no-pay".into()] }),
    }
}

/// Always decline the premium.
pub fn insurance_no_pay() -> Policy {
    Policy::stationary(&[NO_PAY; 3], 2, 2).expect("valid")
}

/// Pay the premium from `base`.
pub fn insurance_pay() -> Policy {
    Policy::stationary(&[PAY, NO_PAY, NO_PAY], 2, 2).expect("valid")
}

/// Two states `{calm, hazard}` with one action. Every step moves to `hazard`
/// with probability `hazard_prob`, so the per-step probability of occupying
/// `(hazard, 0)` after the first step is exactly `hazard_prob`. Both states
/// reach each other in one step when `0 < hazard_prob < 1`.
pub fn hazard_chain(hazard_prob: f64, horizon: usize, r_max: f64) -> Mdp {
    let row = vec![1.0 - hazard_prob, hazard_prob];
    build_mdp(&MdpSpec {
        n_states: 2,
        n_actions: 1,
        gamma: 1.0,
        horizon,
        r_max,
        transition: vec![vec![row.clone()], vec![row]],
        reward: vec![vec![0.0], vec![-r_max]],
        labels: Some(Labels { states: vec!["calm".into(), "hazard".into()], actions: vec!["stay".into()] }),
    })
    .expect("valid chain")
}

/// One absorbing state with two actions; the policy picks action 1 with
/// probability `p` at every step, so `(0, 1)` is hit independently per step.
pub fn bernoulli_action_chain(p: f64, horizon: usize) -> (Mdp, Policy) {
    let mdp = build_mdp(&MdpSpec {
        n_states: 1,
        n_actions: 2,
        gamma: 1.0,
        horizon,
        r_max: 1.0,
        transition: vec![vec![vec![1.0], vec![1.0]]],
        reward: vec![vec![0.0, -1.0]],
        labels: None,
    })
    .expect("valid chain");
    let policy = Policy::stationary_stochastic(&[vec![1.0 - p, p]], horizon).expect("valid policy");
    (mdp, policy)
}
