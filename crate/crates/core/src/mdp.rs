//! Stationary finite-horizon MDPs: validation, exact evaluation, backward
//! induction, occupancy measures and trajectory sampling.
//!
//! Conventions used throughout the crate:
//!
//! * `horizon` counts decision steps. A trajectory visits `(s_t, a_t)` for
//!   `t = 0..horizon` and ends in `s_horizon`.
//! * The value of a policy is `E[sum_{t<T} gamma^t R(s_t, a_t)]`.
//! * The occupancy measure is normalized to a probability distribution by
//!   dividing the discounted visit counts by `sum_{t<T} gamma^t`; that same
//!   sum is the factor `(1 - gamma^T) / (1 - gamma)` (or `T` when
//!   `gamma = 1`) which turns an occupancy inner product back into a value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used whenever a probability vector is compared against 1.
pub const PROB_TOL: f64 = 1e-9;

/// Default cap on `|A|^(|S| T)` for exhaustive policy enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("transition row (s={state}, a={action}) sums to {sum}, expected 1")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    #[error("transition entry P({next}|{state},{action}) = {value} is outside [0, 1]")]
    InvalidProbability { state: usize, action: usize, next: usize, value: f64 },
    #[error("reward R({state},{action}) = {value} exceeds r_max = {r_max}")]
    RewardOutOfBounds { state: usize, action: usize, value: f64, r_max: f64 },
    #[error("discount factor {0} must lie in (0, 1]")]
    BadDiscount(f64),
    #[error("invalid MDP: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("policy space of {count} deterministic policies exceeds cap {cap}")]
    EnumerationTooLarge { count: f64, cap: u64 },
}

/// Optional human-readable names for states and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Labels {
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub actions: Vec<String>,
}

/// On-disk / structured description of an MDP. Indices are 0-based and the
/// transition table is indexed `[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub r_max: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

/// A validated stationary finite-horizon MDP. Serializes as its [`MdpSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpSpec", into = "MdpSpec")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    horizon: usize,
    r_max: f64,
    labels: Option<Labels>,
}

impl TryFrom<MdpSpec> for Mdp {
    type Error = MdpError;

    fn try_from(spec: MdpSpec) -> Result<Self, MdpError> {
        build_mdp(&spec)
    }
}

impl From<Mdp> for MdpSpec {
    fn from(mdp: Mdp) -> MdpSpec {
        mdp.to_spec()
    }
}

/// Validates `spec` and builds an [`Mdp`].
pub fn build_mdp(spec: &MdpSpec) -> Result<Mdp, MdpError> {
    let (ns, na) = (spec.n_states, spec.n_actions);
    if ns == 0 || na == 0 {
        return Err(MdpError::Invalid("need at least one state and one action".into()));
    }
    if spec.horizon == 0 {
        return Err(MdpError::Invalid("horizon must be at least 1".into()));
    }
    if !(spec.gamma > 0.0 && spec.gamma <= 1.0) {
        return Err(MdpError::BadDiscount(spec.gamma));
    }
    if !(spec.r_max > 0.0 && spec.r_max.is_finite()) {
        return Err(MdpError::Invalid(format!("r_max must be positive, got {}", spec.r_max)));
    }
    if spec.transition.len() != ns || spec.reward.len() != ns {
        return Err(MdpError::DimensionMismatch(format!(
            "expected {ns} transition and reward rows, got {} and {}",
            spec.transition.len(),
            spec.reward.len()
        )));
    }
    let mut transition = Vec::with_capacity(ns * na * ns);
    let mut reward = Vec::with_capacity(ns * na);
    for s in 0..ns {
        if spec.transition[s].len() != na || spec.reward[s].len() != na {
            return Err(MdpError::DimensionMismatch(format!("state {s} must list {na} actions")));
        }
        for a in 0..na {
            let row = &spec.transition[s][a];
            if row.len() != ns {
                return Err(MdpError::DimensionMismatch(format!("row (s={s}, a={a}) has {} entries, expected {ns}", row.len())));
            }
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(MdpError::InvalidProbability { state: s, action: a, next, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(MdpError::NonStochasticRow { state: s, action: a, sum });
            }
            transition.extend_from_slice(row);
            let r = spec.reward[s][a];
            if !r.is_finite() || r.abs() > spec.r_max {
                return Err(MdpError::RewardOutOfBounds { state: s, action: a, value: r, r_max: spec.r_max });
            }
            reward.push(r);
        }
    }
    if let Some(labels) = &spec.labels {
        if (!labels.states.is_empty() && labels.states.len() != ns) || (!labels.actions.is_empty() && labels.actions.len() != na) {
            return Err(MdpError::DimensionMismatch("label counts do not match dimensions".into()));
        }
    }
    Ok(Mdp {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        gamma: spec.gamma,
        horizon: spec.horizon,
        r_max: spec.r_max,
        labels: spec.labels.clone(),
    })
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// `P(next | state, action)`.
    pub fn p(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[(state * self.n_actions + action) * self.n_states + next]
    }

    /// The distribution `P(. | state, action)`.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.n_actions + action]
    }

    /// Rewards flattened in `(s, a)` lexicographic order.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `sum_{t<T} gamma^t`, i.e. `(1 - gamma^T)/(1 - gamma)` or `T` for `gamma = 1`.
    pub fn normalizer(&self) -> f64 {
        discount_normalizer(self.gamma, self.horizon)
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Mdp, MdpError> {
        if horizon == 0 {
            return Err(MdpError::Invalid("horizon must be at least 1".into()));
        }
        Ok(Mdp { horizon, ..self.clone() })
    }

    /// Same dynamics with the reward table replaced; bounds are re-checked.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Mdp, MdpError> {
        if reward.len() != self.n_states * self.n_actions {
            return Err(MdpError::DimensionMismatch("reward table size".into()));
        }
        for (i, &r) in reward.iter().enumerate() {
            if !r.is_finite() || r.abs() > self.r_max {
                return Err(MdpError::RewardOutOfBounds {
                    state: i / self.n_actions,
                    action: i % self.n_actions,
                    value: r,
                    r_max: self.r_max,
                });
            }
        }
        Ok(Mdp { reward, ..self.clone() })
    }

    pub fn to_spec(&self) -> MdpSpec {
        let (ns, na) = (self.n_states, self.n_actions);
        MdpSpec {
            n_states: ns,
            n_actions: na,
            gamma: self.gamma,
            horizon: self.horizon,
            r_max: self.r_max,
            transition: (0..ns).map(|s| (0..na).map(|a| self.row(s, a).to_vec()).collect()).collect(),
            reward: (0..ns).map(|s| (0..na).map(|a| self.reward(s, a)).collect()).collect(),
            labels: self.labels.clone(),
        }
    }

    fn check_state(&self, state: usize) -> Result<(), MdpError> {
        if state >= self.n_states {
            return Err(MdpError::DimensionMismatch(format!("start state {state} out of range for {} states", self.n_states)));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &Policy) -> Result<(), MdpError> {
        if policy.horizon != self.horizon || policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "policy is {}x{}x{} but MDP is {}x{}x{}",
                policy.horizon, policy.n_states, policy.n_actions, self.horizon, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

pub fn discount_normalizer(gamma: f64, horizon: usize) -> f64 {
    if gamma == 1.0 {
        horizon as f64
    } else {
        (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma)
    }
}

/// A (possibly non-stationary) Markov policy: one action distribution per
/// `(t, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    deterministic: bool,
}

impl Policy {
    /// Builds a policy from a `[t][s][a]` table of probabilities.
    pub fn from_table(table: &[Vec<Vec<f64>>]) -> Result<Policy, MdpError> {
        let horizon = table.len();
        if horizon == 0 || table[0].is_empty() || table[0][0].is_empty() {
            return Err(MdpError::Invalid("empty policy table".into()));
        }
        let n_states = table[0].len();
        let n_actions = table[0][0].len();
        let mut probs = Vec::with_capacity(horizon * n_states * n_actions);
        let mut deterministic = true;
        for (t, layer) in table.iter().enumerate() {
            if layer.len() != n_states {
                return Err(MdpError::DimensionMismatch(format!("policy step {t} has wrong state count")));
            }
            for (s, row) in layer.iter().enumerate() {
                if row.len() != n_actions {
                    return Err(MdpError::DimensionMismatch(format!("policy row ({t},{s}) has wrong width")));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(MdpError::Invalid(format!("policy row ({t},{s}) has entries outside [0,1]")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(MdpError::Invalid(format!("policy row ({t},{s}) sums to {sum}")));
                }
                deterministic &= row.iter().filter(|&&p| p > 0.0).count() == 1 && row.contains(&1.0);
                probs.extend_from_slice(row);
            }
        }
        Ok(Policy { horizon, n_states, n_actions, probs, deterministic })
    }

    /// Deterministic policy from a `[t][s]` table of actions.
    pub fn from_actions(actions: &[Vec<usize>], n_actions: usize) -> Result<Policy, MdpError> {
        let horizon = actions.len();
        if horizon == 0 || actions[0].is_empty() || n_actions == 0 {
            return Err(MdpError::Invalid("empty policy table".into()));
        }
        let n_states = actions[0].len();
        let mut probs = vec![0.0; horizon * n_states * n_actions];
        for (t, layer) in actions.iter().enumerate() {
            if layer.len() != n_states {
                return Err(MdpError::DimensionMismatch(format!("policy step {t} has wrong state count")));
            }
            for (s, &a) in layer.iter().enumerate() {
                if a >= n_actions {
                    return Err(MdpError::DimensionMismatch(format!("action {a} out of range")));
                }
                probs[(t * n_states + s) * n_actions + a] = 1.0;
            }
        }
        Ok(Policy { horizon, n_states, n_actions, probs, deterministic: true })
    }

    /// Deterministic stationary policy: `actions[s]` at every step.
    pub fn stationary(actions: &[usize], n_actions: usize, horizon: usize) -> Result<Policy, MdpError> {
        Policy::from_actions(&vec![actions.to_vec(); horizon], n_actions)
    }

    /// Stationary stochastic policy: the `[s][a]` table is repeated for every step.
    pub fn stationary_stochastic(rows: &[Vec<f64>], horizon: usize) -> Result<Policy, MdpError> {
        Policy::from_table(&vec![rows.to_vec(); horizon])
    }

    pub fn uniform(n_states: usize, n_actions: usize, horizon: usize) -> Policy {
        let p = 1.0 / n_actions as f64;
        Policy { horizon, n_states, n_actions, probs: vec![p; horizon * n_states * n_actions], deterministic: n_actions == 1 }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn prob(&self, t: usize, state: usize, action: usize) -> f64 {
        self.probs[(t * self.n_states + state) * self.n_actions + action]
    }

    pub fn dist(&self, t: usize, state: usize) -> &[f64] {
        let start = (t * self.n_states + state) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    /// The chosen action when the row at `(t, state)` is a point mass.
    pub fn action(&self, t: usize, state: usize) -> Option<usize> {
        let row = self.dist(t, state);
        let mut it = row.iter().enumerate().filter(|(_, &p)| p > 0.0);
        match (it.next(), it.next()) {
            (Some((a, &p)), None) if (p - 1.0).abs() <= PROB_TOL => Some(a),
            _ => None,
        }
    }

    /// `[t][s]` action table for deterministic policies.
    pub fn action_table(&self) -> Option<Vec<Vec<usize>>> {
        (0..self.horizon).map(|t| (0..self.n_states).map(|s| self.action(t, s)).collect()).collect()
    }

    /// `[t][s][a]` probability table.
    pub fn to_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon).map(|t| (0..self.n_states).map(|s| self.dist(t, s).to_vec()).collect()).collect()
    }
}

/// Discounted, normalized state-action visitation distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    normalizer: f64,
}

impl OccupancyMeasure {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>, normalizer: f64) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch("occupancy table size".into()));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(MdpError::Invalid("occupancy has negative entries".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(MdpError::Invalid(format!("occupancy sums to {sum}")));
        }
        Ok(OccupancyMeasure { n_states, n_actions, probs, normalizer })
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.n_actions + action]
    }

    /// Entries in `(s, a)` lexicographic order.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Marginal over states.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.n_actions).map(|c| c.iter().sum()).collect()
    }
}

/// A sampled `T`-step trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub seed: u64,
}

/// Exact finite-horizon value `V^pi(start_state)` by backward induction.
pub fn value_function(mdp: &Mdp, policy: &Policy, start_state: usize) -> Result<f64, MdpError> {
    mdp.check_policy(policy)?;
    mdp.check_state(start_state)?;
    Ok(policy_values(mdp, policy)[0][start_state])
}

/// `V_t(s)` for `t = 0..=T` under `policy` (`V_T = 0`).
pub fn policy_values(mdp: &Mdp, policy: &Policy) -> Vec<Vec<f64>> {
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        for (s, slot) in head[t].iter_mut().enumerate() {
            let mut v = 0.0;
            for a in 0..na {
                let pa = policy.prob(t, s, a);
                if pa == 0.0 {
                    continue;
                }
                v += pa * (mdp.reward(s, a) + mdp.gamma * dot(mdp.row(s, a), next));
            }
            *slot = v;
        }
    }
    values
}

/// Normalized occupancy measure by forward propagation of visit
/// probabilities.
pub fn occupancy(mdp: &Mdp, policy: &Policy, start_state: usize) -> Result<OccupancyMeasure, MdpError> {
    mdp.check_policy(policy)?;
    mdp.check_state(start_state)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut acc = vec![0.0; ns * na];
    let mut state_dist = vec![0.0; ns];
    state_dist[start_state] = 1.0;
    let mut discount = 1.0;
    for t in 0..mdp.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if state_dist[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let x = state_dist[s] * policy.prob(t, s, a);
                if x == 0.0 {
                    continue;
                }
                acc[s * na + a] += discount * x;
                for (sn, p) in mdp.row(s, a).iter().enumerate() {
                    next[sn] += x * p;
                }
            }
        }
        state_dist = next;
        discount *= mdp.gamma;
    }
    let normalizer = mdp.normalizer();
    for x in &mut acc {
        *x /= normalizer;
    }
    OccupancyMeasure::new(ns, na, acc, normalizer)
}

/// Per-step visitation probabilities `P_t(s, a)` for `t = 0..T`, unnormalized.
pub fn step_visitation(mdp: &Mdp, policy: &Policy, start_state: usize) -> Result<Vec<Vec<f64>>, MdpError> {
    mdp.check_policy(policy)?;
    mdp.check_state(start_state)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut out = Vec::with_capacity(mdp.horizon);
    let mut state_dist = vec![0.0; ns];
    state_dist[start_state] = 1.0;
    for t in 0..mdp.horizon {
        let mut layer = vec![0.0; ns * na];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let x = state_dist[s] * policy.prob(t, s, a);
                layer[s * na + a] = x;
                for (sn, p) in mdp.row(s, a).iter().enumerate() {
                    next[sn] += x * p;
                }
            }
        }
        out.push(layer);
        state_dist = next;
    }
    Ok(out)
}

/// `V = normalizer * sum R(s,a) P^pi(s,a)`.
pub fn value_from_occupancy(mdp: &Mdp, occ: &OccupancyMeasure) -> Result<f64, MdpError> {
    if occ.n_states != mdp.n_states || occ.n_actions != mdp.n_actions {
        return Err(MdpError::DimensionMismatch("occupancy does not match MDP".into()));
    }
    Ok(occ.normalizer * dot(&mdp.reward, &occ.probs))
}

/// Returns `Some(a)` replacing the incumbent only on a strict improvement,
/// so ties resolve to the lowest action index.
pub(crate) fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, q) in values.into_iter().enumerate() {
        let tol = 1e-12 * q.abs().max(best.1.abs()).max(1.0);
        if best.1 == f64::NEG_INFINITY || q > best.1 + tol {
            best = (a, q);
        }
    }
    best
}

/// Deterministic optimal policy by finite-horizon backward induction.
pub fn optimal_policy(mdp: &Mdp) -> Policy {
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut next = vec![0.0; ns];
    let mut actions = vec![vec![0usize; ns]; horizon];
    for t in (0..horizon).rev() {
        let mut current = vec![0.0; ns];
        for s in 0..ns {
            let (a, v) = argmax_lowest((0..na).map(|a| mdp.reward(s, a) + mdp.gamma * dot(mdp.row(s, a), &next)));
            actions[t][s] = a;
            current[s] = v;
        }
        next = current;
    }
    Policy::from_actions(&actions, na).expect("backward induction yields a valid table")
}

/// Optimal value `V*_0(start_state)`.
pub fn optimal_value(mdp: &Mdp, start_state: usize) -> Result<f64, MdpError> {
    value_function(mdp, &optimal_policy(mdp), start_state)
}

/// Lazily enumerates every deterministic Markov policy, in mixed-radix order
/// over the `(t, s)` action table.
#[derive(Debug, Clone)]
pub struct DeterministicPolicies {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    next: u64,
    total: u64,
}

impl Iterator for DeterministicPolicies {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        if self.next >= self.total {
            return None;
        }
        let mut code = self.next;
        self.next += 1;
        let mut table = vec![vec![0usize; self.n_states]; self.horizon];
        for layer in table.iter_mut() {
            for a in layer.iter_mut() {
                *a = (code % self.n_actions as u64) as usize;
                code /= self.n_actions as u64;
            }
        }
        Some(Policy::from_actions(&table, self.n_actions).expect("valid action table"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for DeterministicPolicies {}

/// All `|A|^(|S| T)` deterministic policies, or `EnumerationTooLarge` above `cap`.
pub fn enumerate_deterministic_policies(mdp: &Mdp, cap: u64) -> Result<DeterministicPolicies, MdpError> {
    let exponent = (mdp.n_states * mdp.horizon) as f64;
    let count = (mdp.n_actions as f64).powf(exponent);
    if count > cap as f64 {
        return Err(MdpError::EnumerationTooLarge { count, cap });
    }
    Ok(DeterministicPolicies {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        horizon: mdp.horizon,
        next: 0,
        total: count.round() as u64,
    })
}

/// Samples one trajectory; identical seeds give identical trajectories.
pub fn sample_trajectory(mdp: &Mdp, policy: &Policy, start_state: usize, seed: u64) -> Result<Trajectory, MdpError> {
    mdp.check_policy(policy)?;
    mdp.check_state(start_state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = sample_trajectory_with(mdp, policy, start_state, &mut rng);
    traj.seed = seed;
    Ok(traj)
}

/// Samples with a caller-owned generator. Dimensions are assumed valid.
pub fn sample_trajectory_with<R: Rng + ?Sized>(mdp: &Mdp, policy: &Policy, start_state: usize, rng: &mut R) -> Trajectory {
    let horizon = mdp.horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = start_state;
    states.push(s);
    for t in 0..horizon {
        let a = sample_index(policy.dist(t, s), rng);
        rewards.push(mdp.reward(s, a));
        actions.push(a);
        s = sample_index(mdp.row(s, a), rng);
        states.push(s);
    }
    Trajectory { states, actions, rewards, seed: 0 }
}

/// Draws an index from a probability vector, never returning a zero-mass index.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

/// Random MDP with Dirichlet(1,...,1) transition rows and rewards uniform on
/// `[-r_max, r_max]`.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, horizon: usize, gamma: f64, r_max: f64, rng: &mut R) -> Mdp {
    let transition = (0..n_states).map(|_| (0..n_actions).map(|_| dirichlet_uniform(n_states, rng)).collect()).collect();
    let reward = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-r_max..=r_max)).collect()).collect();
    build_mdp(&MdpSpec { n_states, n_actions, gamma, horizon, r_max, transition, reward, labels: None })
        .expect("random MDP is valid by construction")
}

/// A draw from the flat Dirichlet on the `n`-simplex (normalized exponentials).
pub fn dirichlet_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = x.iter().sum();
    for v in &mut x {
        *v /= sum;
    }
    // Force an exact unit sum on the last coordinate.
    let head: f64 = x[..n - 1].iter().sum();
    x[n - 1] = (1.0 - head).max(0.0);
    x
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
