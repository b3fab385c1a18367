//! Executable checks of the optimality, value-gap, hitting-time, visitation
//! and estimation results on randomly generated or constructed instances.
//!
//! Every randomized check derives one ChaCha stream per instance from the
//! caller's seed, so results do not depend on the number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blackswan::{compute_r_bs, detect, BlackSwanError};
use crate::distortion::{DistortionError, DistortionModel, ValueCurve, DEFAULT_GRID};
use crate::mdp::{
    build_mdp, dirichlet_uniform, enumerate_deterministic_policies, occupancy, optimal_policy, optimal_value, random_mdp, sample_index,
    step_visitation, value_function, Mdp, MdpError, Policy, DEFAULT_ENUMERATION_CAP,
};
use crate::perception::{cpt_value, estimate_hemdp, rank_dependent_mean, reward_distribution, PerceptionError, RewardDistribution};

/// Candidate budget of the three-state counterexample search.
pub const DEFAULT_SEARCH_BUDGET: usize = 100_000;
/// A witness must lose at least this much true value.
pub const MIN_VALUE_LOSS: f64 = 1e-6;
const LEMMA_SLACK: f64 = 1e-9;
const SEARCH_BATCH: usize = 2048;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    BlackSwan(#[from] BlackSwanError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no counterexample among {budget} candidate instances")]
    SearchBudgetExhausted { budget: usize },
    #[error("u- falls below the safe reference at r = {at} ({value} < {reference})")]
    AssumptionViolated { at: f64, value: f64, reference: f64 },
    #[error("the black-swan set is empty; the value-gap bound is degenerate")]
    EmptyBlackSwanSet,
    #[error("delta = {delta} exceeds p_min = {p_min}; the hitting-time bound is vacuous")]
    InfeasibleDelta { delta: f64, p_min: f64 },
    #[error("state {to} is not reachable in one step from state {from}")]
    ReachabilityViolated { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremId {
    OneStep,
    TwoState,
    ThreeStateCounterexample,
    ValueGapLowerBound,
    HittingTime,
    VisitationGapLemma,
    StepVisitationLemma,
    DkwConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckResult {
    pub theorem_id: TheoremId,
    pub instances_run: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<serde_json::Value>,
    pub metrics: BTreeMap<String, f64>,
}

impl TheoremCheckResult {
    fn new(theorem_id: TheoremId) -> Self {
        TheoremCheckResult { theorem_id, instances_run: 0, failures: 0, witness: None, metrics: BTreeMap::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Independent random stream for instance `index`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Source of random MDP instances.
pub trait MdpFamily: Sync {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Mdp;
}

impl<F> MdpFamily for F
where
    F: Fn(&mut ChaCha8Rng) -> Mdp + Sync,
{
    fn generate(&self, rng: &mut ChaCha8Rng) -> Mdp {
        self(rng)
    }
}

/// Dirichlet(1) transition rows and uniform rewards on `[-r_max, r_max]`,
/// with state and action counts drawn uniformly from the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFamily {
    pub states: RangeInclusive<usize>,
    pub actions: RangeInclusive<usize>,
    pub horizon: usize,
    pub gamma: f64,
    pub r_max: f64,
}

impl RandomFamily {
    pub fn fixed(n_states: usize, n_actions: usize, horizon: usize, gamma: f64, r_max: f64) -> Self {
        RandomFamily { states: n_states..=n_states, actions: n_actions..=n_actions, horizon, gamma, r_max }
    }
}

impl MdpFamily for RandomFamily {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Mdp {
        let ns = rng.random_range(self.states.clone());
        let na = rng.random_range(self.actions.clone());
        random_mdp(ns, na, self.horizon, self.gamma, self.r_max, rng)
    }
}

/// When rewards are collected along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    /// `R(s_t, a_t)` at every decision step.
    EveryStep,
    /// Only at the last decision step `t = T - 1`.
    FinalStep,
}

/// Greedy actions, values `[t][s]` and Q-values `[t][s][a]` from a backward
/// induction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub actions: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
}

impl Solution {
    pub fn policy(&self, n_actions: usize) -> Policy {
        Policy::from_actions(&self.actions, n_actions).expect("greedy actions are in range")
    }
}

/// Backward induction with a pluggable reward map and next-state aggregator.
/// Ties resolve to the lowest action index.
pub fn backward_induction(
    mdp: &Mdp,
    timing: RewardTiming,
    reward_map: impl Fn(f64) -> f64,
    aggregate: impl Fn(&[f64], &[f64]) -> f64,
) -> Solution {
    let (ns, na, horizon) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut next = vec![0.0; ns];
    let mut actions = vec![vec![0; ns]; horizon];
    let mut values = vec![vec![0.0; ns]; horizon];
    let mut q_table = vec![vec![Vec::new(); ns]; horizon];
    for t in (0..horizon).rev() {
        let collect = timing == RewardTiming::EveryStep || t + 1 == horizon;
        for s in 0..ns {
            let q: Vec<f64> = (0..na)
                .map(|a| {
                    let r = if collect { reward_map(mdp.reward(s, a)) } else { 0.0 };
                    let cont = if t + 1 < horizon { mdp.gamma() * aggregate(&next, mdp.row(s, a)) } else { 0.0 };
                    r + cont
                })
                .collect();
            let (a, v) = crate::mdp::argmax_lowest(q.iter().copied());
            actions[t][s] = a;
            values[t][s] = v;
            q_table[t][s] = q;
        }
        next = values[t].clone();
    }
    Solution { actions, values, q: q_table }
}

/// The undistorted problem.
pub fn solve_true(mdp: &Mdp, timing: RewardTiming) -> Solution {
    backward_induction(mdp, timing, |r| r, crate::mdp::dot)
}

/// The distorted MDP: rewards through `u`, each transition lottery valued by
/// its rank-dependent expectation under `w`.
pub fn solve_distorted(mdp: &Mdp, model: &DistortionModel, timing: RewardTiming) -> Solution {
    backward_induction(
        mdp,
        timing,
        |r| model.u(r),
        |v, p| {
            let outcomes: Vec<(f64, f64)> = v.iter().copied().zip(p.iter().copied()).collect();
            rank_dependent_mean(&outcomes, model)
        },
    )
}

/// One-step optimality: `argmax_a u(R(s, a)) = argmax_a R(s, a)` for all `s`.
/// The model's certificate is deliberately not enforced so that invalid
/// distortions can be fed in as a sanity check of the harness.
pub fn check_one_step(
    family: &dyn MdpFamily,
    model: &DistortionModel,
    n_instances: usize,
    seed: u64,
) -> Result<TheoremCheckResult, VerifyError> {
    type Outcome = Result<(usize, usize, Option<Mdp>), VerifyError>;
    let outcomes: Vec<Outcome> = (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let mdp = family.generate(&mut instance_rng(seed, i as u64));
            if mdp.horizon() != 1 {
                return Err(VerifyError::Precondition(format!("one-step check needs T = 1, got {}", mdp.horizon())));
            }
            let mut bad = 0;
            for s in 0..mdp.n_states() {
                let na = mdp.n_actions();
                let (a_true, _) = crate::mdp::argmax_lowest((0..na).map(|a| mdp.reward(s, a)));
                let (a_dist, _) = crate::mdp::argmax_lowest((0..na).map(|a| model.u(mdp.reward(s, a))));
                bad += usize::from(a_true != a_dist);
            }
            Ok((bad, mdp.n_states(), (bad > 0).then_some(mdp)))
        })
        .collect();
    let mut res = TheoremCheckResult::new(TheoremId::OneStep);
    let mut states = 0;
    for o in outcomes {
        let (bad, ns, witness) = o?;
        res.instances_run += 1;
        res.failures += bad;
        states += ns;
        if res.witness.is_none() {
            res.witness = witness.map(|m| serde_json::to_value(m).expect("MDP serializes"));
        }
    }
    res.metrics.insert("states_checked".into(), states as f64);
    Ok(res)
}

/// Two-state multi-step optimality: backward induction in the true and the
/// distorted MDP must choose the same action at every `(t, s)`. Rewards are
/// collected at the final decision step, as in the setting of the theorem.
pub fn check_two_state(
    family: &dyn MdpFamily,
    model: &DistortionModel,
    n_instances: usize,
    horizons: RangeInclusive<usize>,
    seed: u64,
) -> Result<TheoremCheckResult, VerifyError> {
    model.require_valid()?;
    let outcomes: Vec<Result<(usize, Option<serde_json::Value>), VerifyError>> = (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i as u64);
            let base = family.generate(&mut rng);
            if base.n_states() != 2 {
                return Err(VerifyError::Precondition(format!("two-state check needs |S| = 2, got {}", base.n_states())));
            }
            let mdp = base.with_horizon(rng.random_range(horizons.clone()))?;
            let truth = solve_true(&mdp, RewardTiming::FinalStep);
            let dist = solve_distorted(&mdp, model, RewardTiming::FinalStep);
            let bad = count_reversals(&truth, &dist);
            let witness =
                (bad > 0).then(|| serde_json::json!({ "mdp": mdp, "true_actions": truth.actions, "distorted_actions": dist.actions }));
            Ok((bad, witness))
        })
        .collect();
    let mut res = TheoremCheckResult::new(TheoremId::TwoState);
    for o in outcomes {
        let (bad, witness) = o?;
        res.instances_run += 1;
        res.failures += bad;
        if res.witness.is_none() {
            res.witness = witness;
        }
    }
    Ok(res)
}

/// Relative tolerance below which two Q-values count as a tie.
pub const Q_TIE_TOL: f64 = 1e-9;

fn strictly_prefers(q: &[f64], a: usize, b: usize) -> bool {
    q[a] - q[b] > Q_TIE_TOL * q[a].abs().max(q[b].abs()).max(1.0)
}

/// Decisions `(t, s)` where the two solutions strictly reverse a preference:
/// each strictly prefers its own action under its own Q-values. Differences
/// inside [`Q_TIE_TOL`] are ties, since discounted gaps between next-state
/// values can shrink below machine precision.
pub fn count_reversals(a: &Solution, b: &Solution) -> usize {
    let mut bad = 0;
    for t in 0..a.actions.len() {
        for s in 0..a.actions[t].len() {
            let (x, y) = (a.actions[t][s], b.actions[t][s]);
            bad += usize::from(x != y && strictly_prefers(&a.q[t][s], x, y) && strictly_prefers(&b.q[t][s], y, x));
        }
    }
    bad
}

/// Identity on rewards, the model's probability weighting on transitions.
fn weighting_only(model: &DistortionModel) -> DistortionModel {
    let r_max = model.r_max();
    let mut m = model.clone();
    m.value.plus = ValueCurve::Linear { slope: 1.0 };
    m.value.minus = ValueCurve::Linear { slope: 1.0 };
    m.value.r_max = r_max;
    m
}

struct Candidate {
    mdp: Mdp,
    start: usize,
    true_policy: Policy,
    distorted: Solution,
    loss: f64,
}

fn three_state_candidate(index: usize, seed: u64, model: &DistortionModel) -> Option<Candidate> {
    let mut rng = instance_rng(seed, index as u64);
    let mdp = random_mdp(3, 2, 2, 1.0, 1.0, &mut rng);
    let true_policy = optimal_policy(&mdp);
    let distorted = solve_distorted(&mdp, model, RewardTiming::EveryStep);
    let dpol = distorted.policy(2);
    let mut best: Option<(usize, f64)> = None;
    for s in 0..3 {
        if true_policy.action(0, s) == dpol.action(0, s) {
            continue;
        }
        let loss = value_function(&mdp, &true_policy, s).ok()? - value_function(&mdp, &dpol, s).ok()?;
        if loss > MIN_VALUE_LOSS && best.is_none_or(|(_, l)| loss > l) {
            best = Some((s, loss));
        }
    }
    best.map(|(start, loss)| Candidate { mdp, start, true_policy, distorted, loss })
}

/// Searches `|S| = 3`, `T = 2` instances (identity on rewards) for one where
/// the distorted-optimal policy is strictly suboptimal in the true MDP. The
/// witness is re-verified by exhaustive enumeration of deterministic
/// policies.
pub fn construct_three_state_counterexample(model: &DistortionModel) -> Result<(Mdp, TheoremCheckResult), VerifyError> {
    construct_three_state_counterexample_with(model, DEFAULT_SEARCH_BUDGET, 0)
}

pub fn construct_three_state_counterexample_with(
    model: &DistortionModel,
    budget: usize,
    seed: u64,
) -> Result<(Mdp, TheoremCheckResult), VerifyError> {
    let m = weighting_only(model);
    let mut start = 0;
    while start < budget {
        let end = (start + SEARCH_BATCH).min(budget);
        let found = (start..end).into_par_iter().find_first(|&i| three_state_candidate(i, seed, &m).is_some());
        if let Some(i) = found {
            let c = three_state_candidate(i, seed, &m).expect("deterministic candidate");
            return finish_counterexample(c, i + 1);
        }
        start = end;
    }
    Err(VerifyError::SearchBudgetExhausted { budget })
}

fn finish_counterexample(c: Candidate, tried: usize) -> Result<(Mdp, TheoremCheckResult), VerifyError> {
    let dpol = c.distorted.policy(2);
    let best_enumerated = enumerate_deterministic_policies(&c.mdp, DEFAULT_ENUMERATION_CAP)?
        .map(|p| value_function(&c.mdp, &p, c.start))
        .collect::<Result<Vec<f64>, MdpError>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let opt = optimal_value(&c.mdp, c.start)?;
    let v_dist = value_function(&c.mdp, &dpol, c.start)?;
    let mut res = TheoremCheckResult::new(TheoremId::ThreeStateCounterexample);
    res.instances_run = tried;
    let verified = (best_enumerated - opt).abs() <= 1e-12 && best_enumerated - v_dist > MIN_VALUE_LOSS;
    res.failures = usize::from(!verified);
    res.metrics.insert("value_loss".into(), best_enumerated - v_dist);
    res.metrics.insert("optimal_value".into(), opt);
    res.metrics.insert("distorted_policy_value".into(), v_dist);
    res.metrics.insert("start_state".into(), c.start as f64);
    res.metrics.insert("candidates_tried".into(), tried as f64);
    res.metrics.insert("search_loss".into(), c.loss);
    res.metrics.insert("policy_gmdp".into(), encode_actions(&c.true_policy.action_table().expect("deterministic")));
    res.metrics.insert("policy_distorted".into(), encode_actions(&c.distorted.actions));
    res.witness = Some(serde_json::json!({
        "mdp": c.mdp,
        "start_state": c.start,
        "policy_gmdp": c.true_policy.action_table(),
        "policy_distorted": c.distorted.actions,
    }));
    Ok((c.mdp, res))
}

/// Mixed-radix code of a binary action table, row-major over `(t, s)`.
fn encode_actions(actions: &[Vec<usize>]) -> f64 {
    actions.iter().flatten().fold(0.0, |acc, &a| acc * 2.0 + a as f64)
}

/// `((R_max - R_bs) eps_min - R_bs eps_bs) (R_max - R_bs) C_bs / R_max^2`.
pub fn value_gap_bound(r_max: f64, r_bs: f64, eps_min: f64, eps_bs: f64, c_bs: f64) -> f64 {
    ((r_max - r_bs) * eps_min - r_bs * eps_bs) * (r_max - r_bs) * c_bs / (r_max * r_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGapConfig {
    pub ratio_floor: f64,
    /// Safe loss perception `u-*` that `u-` must dominate on `[-r_max, -R_bs]`.
    pub reference: ValueCurve,
    pub grid: usize,
}

impl Default for ValueGapConfig {
    fn default() -> Self {
        ValueGapConfig { ratio_floor: 1.0, reference: ValueCurve::Linear { slope: 1.0 }, grid: DEFAULT_GRID }
    }
}

/// Compares the measured value perception gap `|V_perceived - V|` with the
/// lower bound built from `R_bs`, `eps_bs_min`, `eps_bs` and `C_bs`.
pub fn check_value_gap_lower_bound(
    mdp: &Mdp,
    policy: &Policy,
    model: &DistortionModel,
    c_bs: f64,
    eps_bs: f64,
    start_state: usize,
) -> Result<TheoremCheckResult, VerifyError> {
    check_value_gap_lower_bound_with(mdp, policy, model, c_bs, eps_bs, start_state, &ValueGapConfig::default())
}

pub fn check_value_gap_lower_bound_with(
    mdp: &Mdp,
    policy: &Policy,
    model: &DistortionModel,
    c_bs: f64,
    eps_bs: f64,
    start_state: usize,
    config: &ValueGapConfig,
) -> Result<TheoremCheckResult, VerifyError> {
    let report = detect(mdp, policy, model, c_bs, eps_bs, start_state)?;
    if report.is_empty() {
        return Err(VerifyError::EmptyBlackSwanSet);
    }
    let r_max = mdp.r_max();
    let r_bs = compute_r_bs(model, c_bs, r_max)?;
    let dist = reward_distribution(mdp, policy, start_state)?;
    let mut probes: Vec<f64> = (0..config.grid).map(|i| -r_max + (r_max - r_bs) * i as f64 / (config.grid - 1).max(1) as f64).collect();
    probes.extend(dist.support().iter().copied().filter(|&r| r >= -r_max && r <= -r_bs));
    for r in probes {
        let (value, reference) = (model.u_minus(r), config.reference.eval(r));
        if value < reference - 1e-12 * reference.abs().max(1.0) {
            return Err(VerifyError::AssumptionViolated { at: r, value, reference });
        }
    }
    let v_true = value_function(mdp, policy, start_state)?;
    let v_perceived = cpt_value(&dist, model, mdp.normalizer());
    let measured = (v_perceived - v_true).abs();
    let bound = value_gap_bound(r_max, r_bs, report.eps_bs_min, eps_bs, c_bs);
    let mut res = TheoremCheckResult::new(TheoremId::ValueGapLowerBound);
    res.instances_run = 1;
    res.metrics.insert("measured_gap".into(), measured);
    res.metrics.insert("bound_value".into(), bound);
    res.metrics.insert("r_bs".into(), r_bs);
    res.metrics.insert("eps_bs_min".into(), report.eps_bs_min);
    res.metrics.insert("eps_bs".into(), eps_bs);
    res.metrics.insert("c_bs".into(), c_bs);
    res.metrics.insert("value_true".into(), v_true);
    res.metrics.insert("value_perceived".into(), v_perceived);
    res.metrics.insert("events".into(), report.events.len() as f64);
    if bound > 0.0 {
        let ratio = measured / bound;
        res.metrics.insert("ratio".into(), ratio);
        if ratio < config.ratio_floor {
            res.failures = 1;
            res.witness = Some(serde_json::json!({ "mdp": mdp, "policy": policy, "start_state": start_state }));
        }
    }
    Ok(res)
}

/// Smallest `t` with `t >= log(delta / p_min) / log(1 - p_max) + 1`.
pub fn hitting_time_from_probs(delta: f64, p_min: f64, p_max: f64) -> Result<u64, VerifyError> {
    if !(p_min > 0.0 && p_min <= p_max && p_max < 1.0) {
        return Err(VerifyError::Precondition(format!("need 0 < p_min <= p_max < 1, got {p_min}, {p_max}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(VerifyError::Precondition(format!("delta must lie in (0, 1], got {delta}")));
    }
    if delta > p_min {
        return Err(VerifyError::InfeasibleDelta { delta, p_min });
    }
    let t = ((delta / p_min).ln() / (1.0 - p_max).ln() + 1.0).ceil();
    Ok(t.max(1.0) as u64)
}

/// Steps after which an s-black swan has been met with probability at least
/// `delta`, where `p = (r_max - r_bs) / (2 r_max) * eps`.
pub fn hitting_time_bound(delta: f64, r_max: f64, r_bs: f64, eps_min: f64, eps_bs: f64) -> Result<u64, VerifyError> {
    let scale = (r_max - r_bs) / (2.0 * r_max);
    hitting_time_from_probs(delta, scale * eps_min, scale * eps_bs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub t: usize,
    pub trials: usize,
    /// Fraction of trajectories visiting an event at some step `<= t`.
    pub hit_by_t: f64,
    /// Fraction whose first visit happens exactly at step `t`.
    pub first_hit_at_t: f64,
    pub std_error_hit_by_t: f64,
    pub std_error_first_hit: f64,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Monte Carlo estimate of the probability of meeting `events` within `t`
/// steps from `start_state`. Step `k` (1-based) uses the policy's decision
/// rule at `min(k - 1, T - 1)`.
pub fn monte_carlo_hitting(
    mdp: &Mdp,
    policy: &Policy,
    events: &BTreeSet<(usize, usize)>,
    t: usize,
    trials: usize,
    seed: u64,
    start_state: usize,
) -> Result<HittingEstimate, VerifyError> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(MdpError::DimensionMismatch("policy does not match MDP".into()).into());
    }
    for k in 0..policy.horizon() {
        for s in 0..ns {
            for s2 in 0..ns {
                let p: f64 = (0..na).map(|a| policy.prob(k, s, a) * mdp.p(s, a, s2)).sum();
                if p <= 0.0 {
                    return Err(VerifyError::ReachabilityViolated { from: s, to: s2 });
                }
            }
        }
    }
    const CHUNK: usize = 4096;
    let chunks = trials.div_ceil(CHUNK);
    let (hits, firsts) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = instance_rng(seed, c as u64);
            let n = CHUNK.min(trials - c * CHUNK);
            let (mut hits, mut firsts) = (0usize, 0usize);
            for _ in 0..n {
                let mut s = start_state;
                for k in 1..=t {
                    let a = sample_index(policy.dist((k - 1).min(policy.horizon() - 1), s), &mut rng);
                    if events.contains(&(s, a)) {
                        hits += 1;
                        firsts += usize::from(k == t);
                        break;
                    }
                    s = sample_index(mdp.row(s, a), &mut rng);
                }
            }
            (hits, firsts)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials.max(1);
    let hit_by_t = hits as f64 / n as f64;
    let first_hit_at_t = firsts as f64 / n as f64;
    Ok(HittingEstimate {
        t,
        trials,
        hit_by_t,
        first_hit_at_t,
        std_error_hit_by_t: binomial_se(hit_by_t, n),
        std_error_first_hit: binomial_se(first_hit_at_t, n),
    })
}

/// `P'` with `max_{s,a} ||P(.|s,a) - P'(.|s,a)||_1 <= eps_p`, mixing each row
/// with a random Dirichlet row.
pub fn perturb_transitions<R: Rng + ?Sized>(mdp: &Mdp, eps_p: f64, rng: &mut R) -> Result<Mdp, MdpError> {
    let lambda = (eps_p / 2.0).clamp(0.0, 1.0);
    let mut spec = mdp.to_spec();
    for rows in spec.transition.iter_mut() {
        for row in rows.iter_mut() {
            let q = dirichlet_uniform(row.len(), rng);
            for (x, y) in row.iter_mut().zip(q) {
                *x = (1.0 - lambda) * *x + lambda * y;
            }
        }
    }
    build_mdp(&spec)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Perturbs the transitions by at most `((1 - gamma)^2 / gamma) eps_d` per row
/// and checks `sum |P^pi - P'^pi| <= eps_d` and, per step `t`,
/// `||P_t - P'_t||_1 <= t eps_p`.
pub fn check_visitation_gap_lemma(
    mdp: &Mdp,
    eps_d: f64,
    policy: &Policy,
    n_instances: usize,
    seed: u64,
    start_state: usize,
) -> Result<TheoremCheckResult, VerifyError> {
    let gamma = mdp.gamma();
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(VerifyError::Precondition(format!("need 0 < gamma < 1, got {gamma}")));
    }
    let eps_p = (1.0 - gamma).powi(2) / gamma * eps_d;
    let base_occ = occupancy(mdp, policy, start_state)?;
    let base_steps = step_visitation(mdp, policy, start_state)?;
    let outcomes: Vec<Result<(bool, f64, f64), VerifyError>> = (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let pert = perturb_transitions(mdp, eps_p, &mut instance_rng(seed, i as u64))?;
            let occ = occupancy(&pert, policy, start_state)?;
            let gap = l1(base_occ.as_slice(), occ.as_slice());
            let steps = step_visitation(&pert, policy, start_state)?;
            let mut worst_step = 0.0f64;
            let mut ok = gap <= eps_d + LEMMA_SLACK;
            for (t, (a, b)) in base_steps.iter().zip(&steps).enumerate() {
                let g = l1(a, b);
                ok &= g <= t as f64 * eps_p + LEMMA_SLACK;
                if t > 0 {
                    worst_step = worst_step.max(g / (t as f64 * eps_p));
                }
            }
            Ok((ok, gap / eps_d, worst_step))
        })
        .collect();
    let mut res = TheoremCheckResult::new(TheoremId::VisitationGapLemma);
    let (mut worst_occ, mut worst_step) = (0.0f64, 0.0f64);
    for o in outcomes {
        let (ok, ratio, step) = o?;
        res.instances_run += 1;
        res.failures += usize::from(!ok);
        worst_occ = worst_occ.max(ratio);
        worst_step = worst_step.max(step);
    }
    res.metrics.insert("eps_d".into(), eps_d);
    res.metrics.insert("eps_p".into(), eps_p);
    res.metrics.insert("max_occupancy_gap_ratio".into(), worst_occ);
    res.metrics.insert("max_step_gap_ratio".into(), worst_step);
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkwConfig {
    pub epsilon: f64,
    /// Target exceedance probability used to pick `epsilon`, when it was.
    pub confidence: f64,
    pub lipschitz_plus: f64,
    pub lipschitz_minus: f64,
}

impl DkwConfig {
    /// Lipschitz constants from the model's grid slopes; `epsilon` chosen so
    /// that the bound at `n` equals `target`.
    pub fn for_model(model: &DistortionModel, n: usize, target: f64) -> Self {
        let (lp, lm) = model.prob.lipschitz(DEFAULT_GRID);
        let mut cfg = DkwConfig { epsilon: 0.0, confidence: target, lipschitz_plus: lp, lipschitz_minus: lm };
        cfg.epsilon = epsilon_for_bound(cfg.scale(model), n, target);
        cfg
    }

    /// `c = max(L+ u+(r_max), L- |u-(-r_max)|)`.
    pub fn scale(&self, model: &DistortionModel) -> f64 {
        let r = model.r_max();
        (self.lipschitz_plus * model.u_plus(r)).max(self.lipschitz_minus * model.u_minus(-r).abs())
    }
}

/// `4 exp(-n eps^2 / (2 c^2))`.
pub fn dkw_bound(n: usize, epsilon: f64, c: f64) -> f64 {
    4.0 * (-(n as f64) * epsilon * epsilon / (2.0 * c * c)).exp()
}

/// The `epsilon` at which [`dkw_bound`] equals `target`.
pub fn epsilon_for_bound(c: f64, n: usize, target: f64) -> f64 {
    c * (2.0 * (4.0 / target).ln() / n as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Repeatedly estimates the CPT value (normalizer 1) from `n` samples and
/// compares the exceedance rate of `|V_hat - V| > epsilon` with the DKW-type
/// bound plus three binomial standard errors.
pub fn check_dkw_convergence(
    dist: &RewardDistribution,
    model: &DistortionModel,
    config: &DkwConfig,
    n_grid: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<TheoremCheckResult, VerifyError> {
    if repetitions < 100 {
        return Err(VerifyError::Precondition(format!("need at least 100 repetitions, got {repetitions}")));
    }
    let truth = cpt_value(dist, model, 1.0);
    let c = config.scale(model);
    let mut res = TheoremCheckResult::new(TheoremId::DkwConvergence);
    res.metrics.insert("true_value".into(), truth);
    res.metrics.insert("c".into(), c);
    res.metrics.insert("epsilon".into(), config.epsilon);
    for (k, &n) in n_grid.iter().enumerate() {
        let errors: Vec<f64> = (0..repetitions)
            .into_par_iter()
            .map(|r| {
                let mut rng = instance_rng(seed, ((k as u64) << 32) | r as u64);
                let samples = dist.sample_n(n, &mut rng);
                estimate_hemdp(&samples, model, 1.0).map(|e| (e.cpt_value_estimate - truth).abs())
            })
            .collect::<Result<_, _>>()?;
        let rate = errors.iter().filter(|&&e| e > config.epsilon).count() as f64 / repetitions as f64;
        let bound = dkw_bound(n, config.epsilon, c).min(1.0);
        let slack = 3.0 * binomial_se(bound, repetitions);
        res.instances_run += repetitions;
        if rate > bound + slack {
            res.failures += 1;
            if res.witness.is_none() {
                res.witness = Some(serde_json::json!({ "n": n, "exceedance": rate, "bound": bound }));
            }
        }
        res.metrics.insert(format!("exceedance_n{n}"), rate);
        res.metrics.insert(format!("bound_n{n}"), bound);
        res.metrics.insert(format!("median_error_n{n}"), median(errors.clone()));
        res.metrics.insert(format!("max_error_n{n}"), errors.iter().cloned().fold(0.0, f64::max));
    }
    Ok(res)
}
