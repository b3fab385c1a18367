//! s-black-swan detection: state-action pairs whose losses are badly
//! under-perceived (high risk) and whose small but positive visitation is
//! perceived as impossible (rare).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{DistortionError, DistortionModel};
use crate::mdp::{occupancy, Mdp, MdpError, Policy};
use crate::perception::{occupancy_ordering, RewardDistribution};

/// Absolute tolerance for the flat-region equality `w-(C_i) = w-(C_{i-1})`.
pub const DEFAULT_ETA_FLAT: f64 = 1e-12;
/// Grid used to bracket the first crossing in [`compute_r_bs`].
const R_BS_SCAN: usize = 100_000;

pub const ORDERING_NOTE: &str =
    "ascending occupancy over all state-action pairs, ties by (state, action); cumulative sums run over the full ordering";

#[derive(Debug, Error)]
pub enum BlackSwanError {
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reward distortion never reaches c_bs = {c_bs} on [-{r_max}, 0]")]
    NoIntersection { c_bs: f64, r_max: f64 },
    #[error("event time {t} is outside a sequence of length {len}")]
    EventOutOfRange { t: usize, len: usize },
}

/// Both conditions for one state-action pair (or one reward atom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub perceived_reward: f64,
    /// `R - u-(R)`; high risk when below `-c_bs`.
    pub reward_gap: f64,
    pub occupancy: f64,
    pub cumulative: f64,
    /// `|w-(C_i) - w-(C_{i-1})|`.
    pub weight_step: f64,
    pub rare_condition_met: bool,
    pub highrisk_condition_met: bool,
}

impl PairDiagnostic {
    pub fn is_event(&self) -> bool {
        self.rare_condition_met && self.highrisk_condition_met
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackSwanReport {
    pub events: Vec<(usize, usize)>,
    /// Diagnostics for every pair, in the scan order.
    pub diagnostics: Vec<PairDiagnostic>,
    pub eps_bs_min: f64,
    /// `None` when the reward distortion never reaches `c_bs`.
    pub r_bs: Option<f64>,
    pub c_bs: f64,
    pub eps_bs: f64,
    pub eta_flat: f64,
    pub ordering: String,
}

impl BlackSwanReport {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event_diagnostics(&self) -> impl Iterator<Item = &PairDiagnostic> {
        self.diagnostics.iter().filter(|d| d.is_event())
    }
}

fn check_params(c_bs: f64, eps_bs: f64, eta: f64) -> Result<(), BlackSwanError> {
    if !(c_bs > 0.0 && c_bs.is_finite()) {
        return Err(BlackSwanError::InvalidParameter(format!("c_bs must be positive, got {c_bs}")));
    }
    if !(eps_bs > 0.0 && eps_bs < 1.0) {
        return Err(BlackSwanError::InvalidParameter(format!("eps_bs must lie in (0, 1), got {eps_bs}")));
    }
    if !(eta >= 0.0) {
        return Err(BlackSwanError::InvalidParameter(format!("eta_flat must be non-negative, got {eta}")));
    }
    Ok(())
}

/// Evaluates both conditions on `(id, reward, occupancy)` items, cumulating
/// occupancy in ascending order (ties by position).
fn scan(rewards: &[f64], occ: &[f64], n_actions: usize, model: &DistortionModel, c_bs: f64, eps_bs: f64, eta: f64) -> Vec<PairDiagnostic> {
    let mut cum = 0.0f64;
    occupancy_ordering(occ)
        .into_iter()
        .map(|i| {
            let prev = cum;
            cum = (cum + occ[i]).min(1.0);
            let r = rewards[i];
            let ur = if r < 0.0 { model.u_minus(r) } else { model.u_plus(r) };
            let gap = r - ur;
            let step = (model.w_minus(cum) - model.w_minus(prev)).abs();
            PairDiagnostic {
                state: i / n_actions,
                action: i % n_actions,
                reward: r,
                perceived_reward: ur,
                reward_gap: gap,
                occupancy: occ[i],
                cumulative: cum,
                weight_step: step,
                rare_condition_met: step <= eta && occ[i] > 0.0 && occ[i] < eps_bs,
                highrisk_condition_met: r < 0.0 && gap < -c_bs,
            }
        })
        .collect()
}

fn report(diagnostics: Vec<PairDiagnostic>, model: &DistortionModel, c_bs: f64, eps_bs: f64, eta: f64) -> BlackSwanReport {
    let mut flagged: Vec<&PairDiagnostic> = diagnostics.iter().filter(|d| d.is_event()).collect();
    flagged.sort_by_key(|d| (d.state, d.action));
    let events = flagged.iter().map(|d| (d.state, d.action)).collect();
    let eps_bs_min = flagged.iter().map(|d| d.occupancy).reduce(f64::min).unwrap_or(0.0);
    BlackSwanReport {
        events,
        eps_bs_min,
        r_bs: compute_r_bs(model, c_bs, model.r_max()).ok(),
        diagnostics,
        c_bs,
        eps_bs,
        eta_flat: eta,
        ordering: ORDERING_NOTE.to_string(),
    }
}

pub fn detect(
    mdp: &Mdp,
    policy: &Policy,
    model: &DistortionModel,
    c_bs: f64,
    eps_bs: f64,
    start_state: usize,
) -> Result<BlackSwanReport, BlackSwanError> {
    detect_with_tolerance(mdp, policy, model, c_bs, eps_bs, start_state, DEFAULT_ETA_FLAT)
}

pub fn detect_with_tolerance(
    mdp: &Mdp,
    policy: &Policy,
    model: &DistortionModel,
    c_bs: f64,
    eps_bs: f64,
    start_state: usize,
    eta_flat: f64,
) -> Result<BlackSwanReport, BlackSwanError> {
    check_params(c_bs, eps_bs, eta_flat)?;
    model.require_valid()?;
    let occ = occupancy(mdp, policy, start_state)?;
    let diags = scan(mdp.rewards(), occ.as_slice(), mdp.n_actions(), model, c_bs, eps_bs, eta_flat);
    Ok(report(diags, model, c_bs, eps_bs, eta_flat))
}

/// The same scan over the atoms of a reward distribution (each atom is its
/// own event; `state` is the atom index and `action` is 0). Returns the
/// flagged atoms.
pub fn detect_in_distribution(
    dist: &RewardDistribution,
    model: &DistortionModel,
    c_bs: f64,
    eps_bs: f64,
    eta_flat: f64,
) -> Vec<PairDiagnostic> {
    scan(dist.support(), dist.probabilities(), 1, model, c_bs, eps_bs, eta_flat).into_iter().filter(PairDiagnostic::is_event).collect()
}

/// `R_bs`: magnitude of the first loss, moving down from 0, at which the
/// reward distortion `|u-(r) - r|` reaches `c_bs`. Every high-risk reward lies
/// in `[-r_max, -R_bs]`.
pub fn compute_r_bs(model: &DistortionModel, c_bs: f64, r_max: f64) -> Result<f64, BlackSwanError> {
    if !(c_bs > 0.0) || !(r_max > 0.0) {
        return Err(BlackSwanError::InvalidParameter(format!("need c_bs > 0 and r_max > 0, got {c_bs}, {r_max}")));
    }
    let g = |y: f64| (model.u_minus(-y) + y).abs() - c_bs;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=R_BS_SCAN {
        let y = r_max * i as f64 / R_BS_SCAN as f64;
        if g(y) >= 0.0 {
            hi = Some(y);
            break;
        }
        lo = y;
    }
    let mut hi = hi.ok_or(BlackSwanError::NoIntersection { c_bs, r_max })?;
    while hi - lo > f64::EPSILON * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Reward-space surrogate of the black-swan test: `r - u-(r) < -c_bs`,
/// `w-(F(r)) = 0` and `0 < F(r) < eps_bs`.
pub fn check_prop1(r: f64, model: &DistortionModel, c_bs: f64, eps_bs: f64, dist: &RewardDistribution) -> bool {
    if r >= 0.0 {
        return false;
    }
    let f = dist.cdf_at(r);
    let high = r - model.u_minus(r) < -c_bs;
    let rare = model.w_minus(f).abs() <= DEFAULT_ETA_FLAT && f > 0.0 && f < eps_bs;
    let hit = high && rare;
    if hit {
        if let Ok(r_bs) = compute_r_bs(model, c_bs, model.r_max()) {
            debug_assert!(r <= -r_bs * (1.0 - 1e-12), "event reward {r} above -R_bs = {}", -r_bs);
        }
    }
    hit
}

pub fn eps_bs_min(report: &BlackSwanReport) -> f64 {
    report.event_diagnostics().map(|d| d.occupancy).reduce(f64::min).unwrap_or(0.0)
}

/// Transition and reward tables in force at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDynamics {
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

impl StepDynamics {
    pub fn of(mdp: &Mdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut transition = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                transition.extend_from_slice(mdp.row(s, a));
            }
        }
        StepDynamics { transition, reward: mdp.rewards().to_vec() }
    }

    fn same_as(&self, other: &StepDynamics) -> bool {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
        close(&self.transition, &other.transition) && close(&self.reward, &other.reward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SBlackSwan,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClassification {
    pub event: (usize, usize, usize),
    pub verdict: Verdict,
    pub stationary_interval: Option<(usize, usize)>,
}

/// Classifies a flagged event at `t_bs` in a piecewise-stationary sequence:
/// it is an s-black swan iff it is flagged on the whole maximal interval of
/// constant dynamics around `t_bs`.
pub fn classify_temporal(
    sequence: &[StepDynamics],
    flagged: impl Fn(usize, usize, usize) -> bool,
    event: (usize, usize, usize),
) -> Result<EventClassification, BlackSwanError> {
    let (s, a, t_bs) = event;
    if t_bs >= sequence.len() {
        return Err(BlackSwanError::EventOutOfRange { t: t_bs, len: sequence.len() });
    }
    let here = &sequence[t_bs];
    let mut t1 = t_bs;
    while t1 > 0 && sequence[t1 - 1].same_as(here) {
        t1 -= 1;
    }
    let mut t2 = t_bs;
    while t2 + 1 < sequence.len() && sequence[t2 + 1].same_as(here) {
        t2 += 1;
    }
    let verdict = if (t1..=t2).all(|t| flagged(s, a, t)) { Verdict::SBlackSwan } else { Verdict::Indeterminate };
    Ok(EventClassification { event, verdict, stationary_interval: Some((t1, t2)) })
}
