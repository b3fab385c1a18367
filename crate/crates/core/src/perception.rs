//! The human (perceived) MDP: rewards passed through `u`, visitation passed
//! through `w`, plus CPT valuation of reward distributions and its empirical
//! estimator.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{DistortionError, DistortionModel};
use crate::mdp::{build_mdp, occupancy, sample_index, Labels, Mdp, MdpError, OccupancyMeasure, Policy, Trajectory, PROB_TOL};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error("reward {value} is shared by several reachable state-action pairs")]
    NonInjectiveReward { value: f64 },
    #[error("no samples supplied")]
    EmptySample,
    #[error("state {0:?} already exists")]
    DuplicateState(String),
    #[error("invalid reward distribution: {0}")]
    InvalidDistribution(String),
    #[error("malformed trajectory record: {0}")]
    Record(String),
}

/// Discrete distribution over reward values with its CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDistribution {
    support: Vec<f64>,
    probabilities: Vec<f64>,
    cdf: Vec<f64>,
}

impl RewardDistribution {
    /// Aggregates `(reward, mass)` atoms. Zero-mass atoms are dropped and equal
    /// rewards are merged.
    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, PerceptionError> {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (r, p) in atoms {
            if !r.is_finite() || !p.is_finite() || p < 0.0 {
                return Err(PerceptionError::InvalidDistribution(format!("bad atom ({r}, {p})")));
            }
            if p > 0.0 {
                merged.push((r, p));
            }
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::new();
        let mut probabilities: Vec<f64> = Vec::new();
        for (r, p) in merged {
            if support.last() == Some(&r) {
                *probabilities.last_mut().unwrap() += p;
            } else {
                support.push(r);
                probabilities.push(p);
            }
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(PerceptionError::InvalidDistribution(format!("masses sum to {total}")));
        }
        let mut acc = 0.0;
        let cdf = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect();
        Ok(RewardDistribution { support, probabilities, cdf })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `F(r) = P(R <= r)`.
    pub fn cdf_at(&self, r: f64) -> f64 {
        let k = self.support.partition_point(|&x| x <= r);
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1]
        }
    }

    /// `F(r-) = P(R < r)`.
    pub fn cdf_before(&self, r: f64) -> f64 {
        let k = self.support.partition_point(|&x| x < r);
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1]
        }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probabilities).map(|(r, p)| r * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.support[sample_index(&self.probabilities, rng)]
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Pushforward of the occupancy measure through `R`, over reachable pairs.
pub fn reward_distribution(mdp: &Mdp, policy: &Policy, start_state: usize) -> Result<RewardDistribution, PerceptionError> {
    let occ = occupancy(mdp, policy, start_state)?;
    distribution_from_occupancy(mdp, &occ)
}

pub fn distribution_from_occupancy(mdp: &Mdp, occ: &OccupancyMeasure) -> Result<RewardDistribution, PerceptionError> {
    RewardDistribution::from_atoms(mdp.rewards().iter().copied().zip(occ.as_slice().iter().copied()))
}

/// State-action pairs sorted by ascending occupancy, ties by `(s, a)`.
pub fn occupancy_ordering(occ: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..occ.len()).collect();
    order.sort_by(|&i, &j| occ[i].total_cmp(&occ[j]).then(i.cmp(&j)));
    order
}

/// The perceived MDP for a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedMdp {
    pub source: Mdp,
    pub model: DistortionModel,
    pub policy: Policy,
    pub start_state: usize,
    pub state_names: Vec<String>,
    /// True occupancy `P^pi`, flat `s * |A| + a`.
    pub occupancy: Vec<f64>,
    pub normalizer: f64,
    pub reward_dagger: Vec<f64>,
    pub occupancy_dagger: Vec<f64>,
    /// Flat pair indices in the order used for cumulative sums.
    pub ordering: Vec<usize>,
    pub eps_r: f64,
    pub eps_d: f64,
}

/// Distorted decision weights for pairs in `ordering`: each pair gets
/// `w(C_i) - w(C_{i-1})` with the branch picked by its own reward's sign.
pub fn distorted_occupancy(rewards: &[f64], occ: &[f64], ordering: &[usize], model: &DistortionModel) -> Vec<f64> {
    let mut out = vec![0.0; occ.len()];
    let mut cum = 0.0f64;
    for &i in ordering {
        let prev = cum;
        cum = (cum + occ[i]).min(1.0);
        out[i] = model.w_for(rewards[i], cum) - model.w_for(rewards[i], prev);
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn build_hmdp(mdp: &Mdp, policy: &Policy, model: &DistortionModel, start_state: usize) -> Result<PerceivedMdp, PerceptionError> {
    model.require_valid()?;
    let occ = occupancy(mdp, policy, start_state)?;
    let state_names = match mdp.labels() {
        Some(l) => l.states.clone(),
        None => (0..mdp.n_states()).map(|s| format!("s{s}")).collect(),
    };
    Ok(assemble(mdp.clone(), policy.clone(), model.clone(), start_state, state_names, occ))
}

fn assemble(
    source: Mdp,
    policy: Policy,
    model: DistortionModel,
    start_state: usize,
    state_names: Vec<String>,
    occ: OccupancyMeasure,
) -> PerceivedMdp {
    let reward_dagger: Vec<f64> = source.rewards().iter().map(|&r| model.u(r)).collect();
    let probs = occ.as_slice().to_vec();
    let ordering = occupancy_ordering(&probs);
    let occupancy_dagger = distorted_occupancy(source.rewards(), &probs, &ordering, &model);
    let eps_r = max_abs_diff(source.rewards(), &reward_dagger);
    let eps_d = max_abs_diff(&probs, &occupancy_dagger);
    PerceivedMdp {
        normalizer: occ.normalizer(),
        source,
        model,
        policy,
        start_state,
        state_names,
        occupancy: probs,
        reward_dagger,
        occupancy_dagger,
        ordering,
        eps_r,
        eps_d,
    }
}

/// `(eps_r, eps_d)` recomputed from the stored tables.
pub fn perception_gaps(pm: &PerceivedMdp) -> (f64, f64) {
    let rd: Vec<f64> = pm.source.rewards().iter().map(|&r| pm.model.u(r)).collect();
    let od = distorted_occupancy(pm.source.rewards(), &pm.occupancy, &pm.ordering, &pm.model);
    (max_abs_diff(pm.source.rewards(), &rd), max_abs_diff(&pm.occupancy, &od))
}

impl PerceivedMdp {
    pub fn n_states(&self) -> usize {
        self.source.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.source.n_actions()
    }

    pub fn occupancy_at(&self, state: usize, action: usize) -> f64 {
        self.occupancy[state * self.n_actions() + action]
    }

    pub fn occupancy_dagger_at(&self, state: usize, action: usize) -> f64 {
        self.occupancy_dagger[state * self.n_actions() + action]
    }

    pub fn reward_dagger_at(&self, state: usize, action: usize) -> f64 {
        self.reward_dagger[state * self.n_actions() + action]
    }

    /// True value `N * sum R P^pi`.
    pub fn true_value(&self) -> f64 {
        self.normalizer * crate::mdp::dot(self.source.rewards(), &self.occupancy)
    }

    /// Perceived value in occupancy form, `N * sum R^dagger P^dagger`.
    pub fn perceived_value(&self) -> f64 {
        self.normalizer * crate::mdp::dot(&self.reward_dagger, &self.occupancy_dagger)
    }

    /// Reward distribution of the true occupancy.
    pub fn reward_distribution(&self) -> Result<RewardDistribution, PerceptionError> {
        RewardDistribution::from_atoms(self.source.rewards().iter().copied().zip(self.occupancy.iter().copied()))
    }
}

/// Adds a state nobody perceived before. It copies the start state's rewards
/// and transitions, no existing transition leads into it, and the policy acts
/// there as it does in the start state. Its occupancy is therefore zero and
/// every previously computed quantity is unchanged.
pub fn augment_state(pm: &PerceivedMdp, new_state: &str) -> Result<PerceivedMdp, PerceptionError> {
    if pm.state_names.iter().any(|s| s == new_state) {
        return Err(PerceptionError::DuplicateState(new_state.to_string()));
    }
    let mut spec = pm.source.to_spec();
    let template = pm.start_state;
    for rows in spec.transition.iter_mut() {
        for row in rows.iter_mut() {
            row.push(0.0);
        }
    }
    let new_rows = spec.transition[template].clone();
    spec.transition.push(new_rows);
    let new_reward = spec.reward[template].clone();
    spec.reward.push(new_reward);
    spec.n_states += 1;
    let mut names = pm.state_names.clone();
    names.push(new_state.to_string());
    spec.labels = Some(Labels {
        states: names.clone(),
        actions: match &spec.labels {
            Some(l) => l.actions.clone(),
            None => (0..spec.n_actions).map(|a| format!("a{a}")).collect(),
        },
    });
    let mdp = build_mdp(&spec)?;
    let mut table = pm.policy.to_table();
    for step in table.iter_mut() {
        let row = step[template].clone();
        step.push(row);
    }
    let policy = Policy::from_table(&table)?;
    let occ = occupancy(&mdp, &policy, pm.start_state)?;
    Ok(assemble(mdp, policy, pm.model.clone(), pm.start_state, names, occ))
}

/// Discrete state-distortion map on the reward support: `h(r)` is the
/// distorted cumulative probability at `r`.
///
/// Losses use `w-(F(r))`. Gains decumulate from the top with `w+` inside the
/// mass left over by the losses, so `h` is non-decreasing across the sign
/// change and reaches 1 at the largest reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistortionMap {
    pub support: Vec<f64>,
    pub cdf: Vec<f64>,
    pub h: Vec<f64>,
}

impl StateDistortionMap {
    pub fn eval(&self, r: f64) -> Option<f64> {
        self.support.iter().position(|&x| x == r).map(|i| self.h[i])
    }
}

pub fn distorted_cdf(dist: &RewardDistribution, model: &DistortionModel) -> Vec<f64> {
    let f_neg = dist.cdf_before(0.0);
    let loss_top = model.w_minus(f_neg);
    dist.support()
        .iter()
        .zip(dist.cdf())
        .map(|(&r, &f)| {
            if r < 0.0 {
                model.w_minus(f)
            } else {
                let gain_mass = 1.0 - f_neg;
                let tail = if gain_mass > 0.0 { ((1.0 - f) / gain_mass).clamp(0.0, 1.0) } else { 0.0 };
                loss_top + (1.0 - loss_top) * (1.0 - model.w_plus(tail))
            }
        })
        .collect()
}

pub fn state_distortion_map(
    mdp: &Mdp,
    policy: &Policy,
    model: &DistortionModel,
    start_state: usize,
) -> Result<StateDistortionMap, PerceptionError> {
    let occ = occupancy(mdp, policy, start_state)?;
    let mut seen: Vec<f64> = mdp.rewards().iter().zip(occ.as_slice()).filter(|(_, &p)| p > 0.0).map(|(&r, _)| r).collect();
    seen.sort_by(f64::total_cmp);
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(PerceptionError::NonInjectiveReward { value: w[0] });
    }
    let dist = distribution_from_occupancy(mdp, &occ)?;
    Ok(StateDistortionMap { h: distorted_cdf(&dist, model), support: dist.support().to_vec(), cdf: dist.cdf().to_vec() })
}

/// Rank-dependent CPT value of a reward distribution, scaled by `normalizer`.
///
/// Losses are cumulated from the most negative reward upward with `w-`; gains
/// are decumulated from the most positive reward downward with `w+`.
pub fn cpt_value(dist: &RewardDistribution, model: &DistortionModel, normalizer: f64) -> f64 {
    let s = dist.support();
    let p = dist.probabilities();
    let mut losses = 0.0;
    let mut cum = 0.0f64;
    for i in 0..s.len() {
        if s[i] >= 0.0 {
            break;
        }
        let prev = cum;
        cum = (cum + p[i]).min(1.0);
        losses += model.u_minus(s[i]) * (model.w_minus(cum) - model.w_minus(prev));
    }
    let mut gains = 0.0;
    let mut dec = 0.0f64;
    for i in (0..s.len()).rev() {
        if s[i] < 0.0 {
            break;
        }
        let prev = dec;
        dec = (dec + p[i]).min(1.0);
        gains += model.u_plus(s[i]) * (model.w_plus(dec) - model.w_plus(prev));
    }
    normalizer * (gains + losses)
}

/// Rank-dependent expectation of a lottery whose outcomes are already in
/// utility units: losses weighted by cumulated `w-`, gains by decumulated
/// `w+`.
pub fn rank_dependent_mean(outcomes: &[(f64, f64)], model: &DistortionModel) -> f64 {
    let mut o: Vec<(f64, f64)> = outcomes.iter().copied().filter(|&(_, p)| p > 0.0).collect();
    o.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cum = 0.0f64;
    for &(v, p) in o.iter().take_while(|x| x.0 < 0.0) {
        let prev = cum;
        cum = (cum + p).min(1.0);
        total += v * (model.w_minus(cum) - model.w_minus(prev));
    }
    let mut dec = 0.0f64;
    for &(v, p) in o.iter().rev().take_while(|x| x.0 >= 0.0) {
        let prev = dec;
        dec = (dec + p).min(1.0);
        total += v * (model.w_plus(dec) - model.w_plus(prev));
    }
    total
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edf {
    sorted: Vec<f64>,
}

impl Edf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Edf { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// `integral_0^inf w(1 - F(x)) dx` for non-negative samples, as a sum over
    /// the steps of the EDF.
    pub fn distorted_tail_integral(&self, w: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len();
        let mut prev = 0.0;
        let mut total = 0.0;
        for (i, &y) in self.sorted.iter().enumerate() {
            // On [y_(i-1), y_(i)) exactly n - i samples are still above x.
            total += (y - prev) * w((n - i) as f64 / n as f64);
            prev = y;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemdpEstimate {
    pub n_samples: usize,
    pub edf_plus: Edf,
    pub edf_minus: Edf,
    pub cpt_value_estimate: f64,
    pub kappa_r: Option<f64>,
    pub kappa_d: Option<f64>,
}

/// Summary written by the CLI: `{n, value, kappa_r, kappa_d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub value: f64,
    pub kappa_r: Option<f64>,
    pub kappa_d: Option<f64>,
}

impl HemdpEstimate {
    pub fn report(&self) -> EstimateReport {
        EstimateReport { n: self.n_samples, value: self.cpt_value_estimate, kappa_r: self.kappa_r, kappa_d: self.kappa_d }
    }
}

/// EDF estimate of the CPT value from raw reward samples. Gains enter as
/// `u+(r)`, losses as the magnitudes `-u-(r)`.
pub fn estimate_hemdp(rewards: &[f64], model: &DistortionModel, normalizer: f64) -> Result<HemdpEstimate, PerceptionError> {
    if rewards.is_empty() {
        return Err(PerceptionError::EmptySample);
    }
    let plus: Vec<f64> = rewards.iter().map(|&r| model.u_plus(r.max(0.0))).collect();
    let minus: Vec<f64> = rewards.iter().map(|&r| -model.u_minus(r.min(0.0))).collect();
    let edf_plus = Edf::new(plus);
    let edf_minus = Edf::new(minus);
    let value = edf_plus.distorted_tail_integral(|p| model.w_plus(p)) - edf_minus.distorted_tail_integral(|p| model.w_minus(p));
    Ok(HemdpEstimate {
        n_samples: rewards.len(),
        edf_plus,
        edf_minus,
        cpt_value_estimate: normalizer * value,
        kappa_r: None,
        kappa_d: None,
    })
}

/// Estimate from sampled trajectories, with the estimation gaps against `pm`:
/// `kappa_r` compares mean observed perceived rewards per pair with
/// `R^dagger`, `kappa_d` compares the distortion of the empirical discounted
/// visit frequencies with `P^dagger`.
pub fn estimate_from_trajectories(pm: &PerceivedMdp, trajectories: &[Trajectory]) -> Result<HemdpEstimate, PerceptionError> {
    let gamma = pm.source.gamma();
    let na = pm.n_actions();
    let mut samples = Vec::new();
    let mut visits = vec![0.0; pm.occupancy.len()];
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for traj in trajectories {
        let mut disc = 1.0;
        for ((&s, &a), &r) in traj.states.iter().zip(&traj.actions).zip(&traj.rewards) {
            let i = s * na + a;
            samples.push(r);
            visits[i] += disc;
            let e = sums.entry(i).or_insert((0.0, 0));
            e.0 += pm.model.u(r);
            e.1 += 1;
            disc *= gamma;
        }
    }
    let mut est = estimate_hemdp(&samples, &pm.model, pm.normalizer)?;
    let total = trajectories.len() as f64 * pm.normalizer;
    let empirical: Vec<f64> = visits.iter().map(|v| v / total).collect();
    let plug_in = distorted_occupancy(pm.source.rewards(), &empirical, &occupancy_ordering(&empirical), &pm.model);
    est.kappa_d = Some(max_abs_diff(&plug_in, &pm.occupancy_dagger));
    est.kappa_r = Some(sums.iter().map(|(&i, &(sum, n))| (sum / n as f64 - pm.reward_dagger[i]).abs()).fold(0.0, f64::max));
    Ok(est)
}

/// One step of a perceived trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
}

/// Perceived view of a trajectory: rewards through `u`.
pub fn perceive_trajectory(traj: &Trajectory, model: &DistortionModel) -> Vec<StepRecord> {
    traj.states
        .iter()
        .zip(&traj.actions)
        .zip(&traj.rewards)
        .enumerate()
        .map(|(t, ((&s, &a), &r))| StepRecord { t, s, a, r: model.u(r) })
        .collect()
}

pub fn records_to_jsonl(records: &[StepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<StepRecord>, PerceptionError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PerceptionError::Record(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{insurance_mdp, insurance_no_pay, INSURANCE_BASE, INSURANCE_RISK, NO_PAY};
    use crate::distortion::{flat_region_model, tversky_kahneman_model};
    use crate::mdp::{random_mdp, sample_trajectory, value_function, MdpSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tk(r_max: f64) -> DistortionModel {
        tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, r_max).unwrap()
    }

    fn single_state(rewards: Vec<f64>, policy: Vec<f64>) -> (Mdp, Policy) {
        let n = rewards.len();
        let mdp = build_mdp(&MdpSpec {
            n_states: 1,
            n_actions: n,
            gamma: 1.0,
            horizon: 1,
            r_max: 100.0,
            transition: vec![vec![vec![1.0]; n]],
            reward: vec![rewards],
            labels: None,
        })
        .unwrap();
        let pol = Policy::stationary_stochastic(&[policy], 1).unwrap();
        (mdp, pol)
    }

    #[test]
    fn identity_limit_is_unbiased() {
        let mdp = insurance_mdp();
        let pm = build_hmdp(&mdp, &insurance_no_pay(), &DistortionModel::identity_limit(1000.0), INSURANCE_BASE).unwrap();
        assert_eq!(pm.reward_dagger, mdp.rewards());
        for (a, b) in pm.occupancy.iter().zip(&pm.occupancy_dagger) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert_eq!(perception_gaps(&pm).0, 0.0);
        assert!(perception_gaps(&pm).1 < 1e-15);
    }

    #[test]
    fn insurance_risk_reward_under_tk() {
        let pm = build_hmdp(&insurance_mdp(), &insurance_no_pay(), &tk(1000.0), INSURANCE_BASE).unwrap();
        let r = pm.reward_dagger_at(INSURANCE_RISK, NO_PAY);
        assert_abs_diff_eq!(r, -2.25 * 1000f64.powf(0.88), epsilon = 1e-9);
        assert_abs_diff_eq!(r, -982.16, epsilon = 0.01);
        // The largest reward gap is the risk state's.
        assert_abs_diff_eq!(pm.eps_r, 1000.0 - 2.25 * 1000f64.powf(0.88), epsilon = 1e-9);
        assert_abs_diff_eq!(pm.eps_r, 17.84, epsilon = 0.01);
    }

    #[test]
    fn three_atom_losses_are_differenced() {
        let (mdp, pol) = single_state(vec![-3.0, -2.0, -1.0], vec![0.01, 0.29, 0.70]);
        let m = tk(100.0);
        let pm = build_hmdp(&mdp, &pol, &m, 0).unwrap();
        let w = |p: f64| m.w_minus(p);
        assert_abs_diff_eq!(pm.occupancy_dagger[0], w(0.01), epsilon = 1e-12);
        assert_abs_diff_eq!(pm.occupancy_dagger[1], w(0.30) - w(0.01), epsilon = 1e-12);
        assert_abs_diff_eq!(pm.occupancy_dagger[2], 1.0 - w(0.30), epsilon = 1e-12);
        assert_eq!(pm.ordering, vec![0, 1, 2]);
    }

    #[test]
    fn gaps_are_idempotent() {
        let pm = build_hmdp(&insurance_mdp(), &insurance_no_pay(), &tk(1000.0), INSURANCE_BASE).unwrap();
        let g = perception_gaps(&pm);
        assert_eq!(g, perception_gaps(&pm));
        assert!((g.0 - pm.eps_r).abs() <= 1e-12 && (g.1 - pm.eps_d).abs() <= 1e-12);
    }

    #[test]
    fn invalid_model_is_rejected() {
        let mut bad = tk(1000.0);
        bad.certificate.checks[0].status = crate::distortion::CheckStatus::Fail;
        let err = build_hmdp(&insurance_mdp(), &insurance_no_pay(), &bad, INSURANCE_BASE).unwrap_err();
        assert!(matches!(err, PerceptionError::Distortion(DistortionError::CertificateFailed(_))));
    }

    #[test]
    fn insurance_reward_distribution() {
        let d = reward_distribution(&insurance_mdp(), &insurance_no_pay(), INSURANCE_BASE).unwrap();
        assert_eq!(d.support(), &[-1000.0, 0.0]);
        assert_abs_diff_eq!(d.probabilities()[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(d.probabilities()[1], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(d.cdf_at(0.0), 1.0, epsilon = 1e-15);
        assert_eq!(d.cdf_at(-1001.0), 0.0);
    }

    #[test]
    fn distinct_rewards_give_one_atom_per_reachable_pair() {
        let (mdp, pol) = single_state(vec![-3.0, 1.0, 2.0, 5.0], vec![0.1, 0.2, 0.0, 0.7]);
        assert_eq!(reward_distribution(&mdp, &pol, 0).unwrap().len(), 3);
    }

    #[test]
    fn single_zero_reward() {
        let (mdp, pol) = single_state(vec![0.0, 0.0], vec![0.5, 0.5]);
        let d = reward_distribution(&mdp, &pol, 0).unwrap();
        assert_eq!(d.support(), &[0.0]);
        assert_eq!(d.cdf_at(0.0), 1.0);
    }

    #[test]
    fn state_map_identity_preserves_cdf() {
        let (mdp, pol) = single_state(vec![-3.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]);
        let h = state_distortion_map(&mdp, &pol, &DistortionModel::identity_limit(100.0), 0).unwrap();
        for (a, b) in h.h.iter().zip(&h.cdf) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn state_map_two_losses() {
        let (mdp, pol) = single_state(vec![-5.0, -1.0], vec![0.3, 0.7]);
        let m = tk(100.0);
        let h = state_distortion_map(&mdp, &pol, &m, 0).unwrap();
        assert_abs_diff_eq!(h.eval(-5.0).unwrap(), m.w_minus(0.3), epsilon = 1e-15);
        assert_abs_diff_eq!(h.eval(-1.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn state_map_rejects_duplicates() {
        let (mdp, pol) = single_state(vec![-5.0, -5.0], vec![0.3, 0.7]);
        assert!(matches!(state_distortion_map(&mdp, &pol, &tk(100.0), 0), Err(PerceptionError::NonInjectiveReward { .. })));
    }

    #[test]
    fn cpt_identity_matches_expectation() {
        let mdp = insurance_mdp();
        let d = reward_distribution(&mdp, &insurance_no_pay(), INSURANCE_BASE).unwrap();
        let v = cpt_value(&d, &DistortionModel::identity_limit(1000.0), mdp.normalizer());
        assert_abs_diff_eq!(v, value_function(&mdp, &insurance_no_pay(), INSURANCE_BASE).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn cpt_single_atom() {
        let d = RewardDistribution::from_atoms([(-10.0, 1.0)]).unwrap();
        let m = tk(100.0);
        assert_abs_diff_eq!(cpt_value(&d, &m, 3.0), 3.0 * m.u_minus(-10.0), epsilon = 1e-12);
    }

    #[test]
    fn cpt_insurance_two_terms() {
        let m = tk(1000.0);
        let d = RewardDistribution::from_atoms([(-1000.0, 0.005), (0.0, 0.995)]).unwrap();
        // Loss term only: the gain atom has u+(0) = 0.
        let direct = 2.0 * (-2.25 * 1000f64.powf(0.88)) * m.w_minus(0.005);
        assert_abs_diff_eq!(cpt_value(&d, &m, 2.0), direct, epsilon = 1e-9);
    }

    #[test]
    fn estimate_constant_gain() {
        let m = tk(100.0);
        let est = estimate_hemdp(&[4.0; 7], &m, 2.0).unwrap();
        assert_abs_diff_eq!(est.cpt_value_estimate, 2.0 * m.u_plus(4.0), epsilon = 1e-12);
        assert_eq!(est.edf_plus.eval(4.0), 1.0);
    }

    #[test]
    fn estimate_empty_sample() {
        assert!(matches!(estimate_hemdp(&[], &tk(1.0), 1.0), Err(PerceptionError::EmptySample)));
    }

    #[test]
    fn estimate_insurance_within_half() {
        let mdp = insurance_mdp();
        let m = tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, 1000.0).unwrap();
        let d = reward_distribution(&mdp, &insurance_no_pay(), INSURANCE_BASE).unwrap();
        let truth = cpt_value(&d, &m, mdp.normalizer());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = d.sample_n(10_000, &mut rng);
        let est = estimate_hemdp(&samples, &m, mdp.normalizer()).unwrap();
        assert!((est.cpt_value_estimate - truth).abs() < 0.5, "{} vs {truth}", est.cpt_value_estimate);
    }

    #[test]
    fn augment_keeps_values() {
        let mdp = insurance_mdp();
        let pm = build_hmdp(&mdp, &insurance_no_pay(), &tk(1000.0), INSURANCE_BASE).unwrap();
        let aug = augment_state(&pm, "ghost").unwrap();
        assert_eq!(aug.n_states(), 4);
        assert_eq!(aug.occupancy_at(3, 0), 0.0);
        assert_eq!(aug.occupancy_at(3, 1), 0.0);
        assert_abs_diff_eq!(aug.true_value(), pm.true_value(), epsilon = 1e-12);
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(aug.occupancy_dagger_at(s, a), pm.occupancy_dagger_at(s, a));
            }
        }
        assert!(matches!(augment_state(&aug, "ghost"), Err(PerceptionError::DuplicateState(_))));
    }

    #[test]
    fn trajectory_jsonl_roundtrip() {
        let mdp = insurance_mdp();
        let traj = sample_trajectory(&mdp, &insurance_no_pay(), INSURANCE_BASE, 5).unwrap();
        let recs = perceive_trajectory(&traj, &tk(1000.0));
        let text = records_to_jsonl(&recs);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(records_from_jsonl(&text).unwrap(), recs);
    }

    #[test]
    fn kappas_from_trajectories() {
        let mdp = insurance_mdp();
        let m = flat_region_model(0.02, &tk(1000.0)).unwrap();
        let pm = build_hmdp(&mdp, &insurance_no_pay(), &m, INSURANCE_BASE).unwrap();
        let trajs: Vec<_> = (0..2000).map(|i| sample_trajectory(&mdp, &insurance_no_pay(), INSURANCE_BASE, i).unwrap()).collect();
        let est = estimate_from_trajectories(&pm, &trajs).unwrap();
        assert!(est.kappa_r.unwrap() < 1e-9);
        assert!(est.kappa_d.unwrap() < 0.05);
        assert_eq!(est.n_samples, 4000);
    }

    #[test]
    fn kappa_d_vanishes_with_more_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mdp = random_mdp(3, 2, 4, 0.9, 10.0, &mut rng);
        let pol = Policy::uniform(3, 2, 4);
        let pm = build_hmdp(&mdp, &pol, &tk(10.0), 0).unwrap();
        let kappa = |n: u64| {
            let trajs: Vec<_> = (0..n).map(|i| sample_trajectory(&mdp, &pol, 0, i).unwrap()).collect();
            estimate_from_trajectories(&pm, &trajs).unwrap().kappa_d.unwrap()
        };
        let (small, large) = (kappa(100), kappa(40_000));
        assert!(large < small);
        assert!(large < 0.01, "{large}");
    }

    proptest! {
        #[test]
        fn relabeling_preserves_gaps_and_value(seed in 0u64..500, perm_seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(1, 4, 1, 1.0, 10.0, &mut rng);
            let probs = crate::mdp::dirichlet_uniform(4, &mut rng);
            let pol = Policy::stationary_stochastic(std::slice::from_ref(&probs), 1).unwrap();
            let m = tk(10.0);
            let pm = build_hmdp(&mdp, &pol, &m, 0).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..4).rev() {
                perm.swap(i, rand::Rng::random_range(&mut prng, 0..=i));
            }
            let mut spec = mdp.to_spec();
            spec.reward[0] = perm.iter().map(|&i| mdp.reward(0, i)).collect();
            spec.transition[0] = perm.iter().map(|_| vec![1.0]).collect();
            let mdp2 = build_mdp(&spec).unwrap();
            let pol2 = Policy::stationary_stochastic(&[perm.iter().map(|&i| probs[i]).collect()], 1).unwrap();
            let pm2 = build_hmdp(&mdp2, &pol2, &m, 0).unwrap();
            prop_assert!((pm.eps_r - pm2.eps_r).abs() <= 1e-12);
            prop_assert!((pm.eps_d - pm2.eps_d).abs() <= 1e-12);
            let v1 = cpt_value(&pm.reward_distribution().unwrap(), &m, 1.0);
            let v2 = cpt_value(&pm2.reward_distribution().unwrap(), &m, 1.0);
            prop_assert!((v1 - v2).abs() <= 1e-12);
        }

        #[test]
        fn state_map_is_monotone(rewards in proptest::collection::btree_set(-50i32..50, 1..8), seed in 0u64..100) {
            let rewards: Vec<f64> = rewards.into_iter().map(f64::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs = crate::mdp::dirichlet_uniform(rewards.len(), &mut rng);
            let (mdp, pol) = single_state(rewards, probs);
            let h = state_distortion_map(&mdp, &pol, &tk(100.0), 0).unwrap();
            for w in h.h.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            prop_assert!((h.h.last().unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn edf_estimate_equals_cpt_of_empirical(samples in proptest::collection::vec(-100.0f64..100.0, 1..60)) {
            let m = tk(100.0);
            let n = samples.len() as f64;
            let emp = RewardDistribution::from_atoms(samples.iter().map(|&r| (r, 1.0 / n))).unwrap();
            let est = estimate_hemdp(&samples, &m, 1.0).unwrap();
            prop_assert!((est.cpt_value_estimate - cpt_value(&emp, &m, 1.0)).abs() < 1e-9);
        }

        #[test]
        fn cpt_is_rank_dependent_mean_of_utilities(samples in proptest::collection::vec(-100.0f64..100.0, 1..30)) {
            let m = tk(100.0);
            let n = samples.len() as f64;
            let d = RewardDistribution::from_atoms(samples.iter().map(|&r| (r, 1.0 / n))).unwrap();
            let atoms: Vec<(f64, f64)> = d.support().iter().zip(d.probabilities()).map(|(&r, &p)| (m.u(r), p)).collect();
            prop_assert!((cpt_value(&d, &m, 2.0) - 2.0 * rank_dependent_mean(&atoms, &m)).abs() < 1e-9);
        }

        #[test]
        fn edf_is_right_continuous_step(samples in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let e = Edf::new(samples.clone());
            let max = samples.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(e.eval(max), 1.0);
            for &x in &samples {
                prop_assert!(e.eval(x) > 0.0 && e.eval(x) <= 1.0);
            }
        }
    }
}
