use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use sbs_core::mdp::sample_trajectory_with;
use sbs_core::perception::{estimate_from_trajectories, perceive_trajectory, records_to_jsonl, EstimateReport};
use sbs_core::verify::{instance_rng, HittingEstimate};
use sbs_core::{
    build_hmdp, compute_r_bs, detect_with_tolerance, hitting_time_bound, hitting_time_from_probs, monte_carlo_hitting, optimal_policy,
    optimal_value, Certificate, DistortionModel, DEFAULT_ETA_FLAT,
};
use serde::{Deserialize, Serialize};

use crate::io::{emit, load_distortion, load_mdp, load_policy};
use crate::{Outcome, OutputArgs};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    distortion: Option<PathBuf>,
    /// `optimal`, `uniform` or a policy file; needs `--mdp`.
    #[arg(long, requires = "mdp")]
    policy: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSummary {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub certificate: Certificate,
    pub fixed_point_plus: Option<f64>,
    pub fixed_point_minus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub valid: bool,
    pub mdp: Option<MdpSummary>,
    pub distortion: Option<DistortionSummary>,
    pub policy_deterministic: Option<bool>,
}

pub fn validate(args: ValidateArgs) -> Result<Outcome> {
    if args.mdp.is_none() && args.distortion.is_none() {
        anyhow::bail!("nothing to validate: pass --mdp and/or --distortion");
    }
    let mut report = ValidateReport { valid: true, mdp: None, distortion: None, policy_deterministic: None };
    if let Some(path) = &args.mdp {
        let mdp = load_mdp(path)?;
        report.mdp = Some(MdpSummary {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            horizon: mdp.horizon(),
            gamma: mdp.gamma(),
            r_max: mdp.r_max(),
        });
        if let Some(choice) = &args.policy {
            report.policy_deterministic = Some(load_policy(choice, &mdp)?.is_deterministic());
        }
    }
    if let Some(path) = &args.distortion {
        let model = load_distortion(path)?;
        let (fixed_point_plus, fixed_point_minus) = model.fixed_points();
        report.distortion = Some(DistortionSummary { certificate: model.certificate.clone(), fixed_point_plus, fixed_point_minus });
    }
    emit(&report, &args.output)?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Greedy action per `[t][s]`, lowest index on ties.
    pub actions: Vec<Vec<usize>>,
    /// Optimal value from each start state.
    pub values: Vec<f64>,
}

pub fn solve(args: SolveArgs) -> Result<Outcome> {
    let mdp = load_mdp(&args.mdp)?;
    let actions = optimal_policy(&mdp).action_table().expect("optimal policies are deterministic");
    let values = (0..mdp.n_states()).map(|s| optimal_value(&mdp, s)).collect::<Result<_, _>>()?;
    emit(&SolveReport { actions, values }, &args.output)?;
    Ok(Outcome::Ok)
}

/// Inputs shared by the perceived-MDP subcommands.
#[derive(Debug, Clone, Args)]
pub struct PerceptionInputs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    distortion: PathBuf,
    /// `optimal`, `uniform` or a policy file.
    #[arg(long, default_value = "optimal")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    start: usize,
}

#[derive(Debug, Args)]
pub struct PerceiveArgs {
    #[command(flatten)]
    inputs: PerceptionInputs,
    /// Also write sampled u and w curves as CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceiveReport {
    pub true_value: f64,
    pub perceived_value: f64,
    pub eps_r: f64,
    pub eps_d: f64,
    pub normalizer: f64,
    pub occupancy: Vec<f64>,
    pub occupancy_dagger: Vec<f64>,
    pub reward_dagger: Vec<f64>,
    pub ordering: Vec<usize>,
}

/// `r,u,p,w_plus,w_minus` on uniform grids over `[-r_max, r_max]` and `[0, 1]`.
pub fn curves_csv(model: &DistortionModel, points: usize) -> String {
    let n = points.max(2);
    let r_max = model.r_max();
    let mut out = String::from("r,u,p,w_plus,w_minus\n");
    for i in 0..n {
        let f = i as f64 / (n - 1) as f64;
        let r = -r_max + 2.0 * r_max * f;
        writeln!(out, "{r},{},{f},{},{}", model.u(r), model.w_plus(f), model.w_minus(f)).expect("writing to a string");
    }
    out
}

pub fn perceive(args: PerceiveArgs) -> Result<Outcome> {
    let inp = &args.inputs;
    let mdp = load_mdp(&inp.mdp)?;
    let model = load_distortion(&inp.distortion)?;
    let policy = load_policy(&inp.policy, &mdp)?;
    let pm = build_hmdp(&mdp, &policy, &model, inp.start)?;
    let report = PerceiveReport {
        true_value: pm.true_value(),
        perceived_value: pm.perceived_value(),
        eps_r: pm.eps_r,
        eps_d: pm.eps_d,
        normalizer: pm.normalizer,
        occupancy: pm.occupancy.clone(),
        occupancy_dagger: pm.occupancy_dagger.clone(),
        reward_dagger: pm.reward_dagger.clone(),
        ordering: pm.ordering.clone(),
    };
    if let Some(path) = &args.curves {
        fs::write(path, curves_csv(&model, args.points)).with_context(|| format!("cannot write {}", path.display()))?;
    }
    emit(&report, &args.output)?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    inputs: PerceptionInputs,
    #[arg(long)]
    c_bs: f64,
    #[arg(long)]
    eps_bs: f64,
    /// Tolerance for the flat-region test on the loss weighting.
    #[arg(long, default_value_t = DEFAULT_ETA_FLAT)]
    eta_flat: f64,
    #[command(flatten)]
    output: OutputArgs,
}

pub fn detect(args: DetectArgs) -> Result<Outcome> {
    let inp = &args.inputs;
    let mdp = load_mdp(&inp.mdp)?;
    let model = load_distortion(&inp.distortion)?;
    let policy = load_policy(&inp.policy, &mdp)?;
    let report = detect_with_tolerance(&mdp, &policy, &model, args.c_bs, args.eps_bs, inp.start, args.eta_flat)?;
    emit(&report, &args.output)?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    inputs: PerceptionInputs,
    #[arg(long, default_value_t = 1000)]
    trajectories: usize,
    #[arg(long)]
    seed: u64,
    /// Write perceived trajectory steps as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub seed: u64,
    pub trajectories: usize,
    pub estimate: EstimateReport,
    /// Exact perceived value of the same policy, for comparison.
    pub perceived_value: f64,
}

pub fn estimate(args: EstimateArgs) -> Result<Outcome> {
    let inp = &args.inputs;
    if args.trajectories == 0 {
        anyhow::bail!("--trajectories must be positive");
    }
    let mdp = load_mdp(&inp.mdp)?;
    let model = load_distortion(&inp.distortion)?;
    let policy = load_policy(&inp.policy, &mdp)?;
    let pm = build_hmdp(&mdp, &policy, &model, inp.start)?;
    let trajs: Vec<_> =
        (0..args.trajectories).map(|i| sample_trajectory_with(&mdp, &policy, inp.start, &mut instance_rng(args.seed, i as u64))).collect();
    let est = estimate_from_trajectories(&pm, &trajs)?;
    if let Some(path) = &args.records {
        let text: String = trajs.iter().map(|t| records_to_jsonl(&perceive_trajectory(t, &model))).collect();
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let out =
        EstimateOutput { seed: args.seed, trajectories: args.trajectories, estimate: est.report(), perceived_value: pm.perceived_value() };
    emit(&out, &args.output)?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Args)]
pub struct HittingArgs {
    /// Target probability of meeting an s-black swan.
    #[arg(long)]
    delta: f64,
    #[arg(long, requires = "p_max", conflicts_with = "mdp")]
    p_min: Option<f64>,
    #[arg(long, requires = "p_min")]
    p_max: Option<f64>,
    /// Derive the probabilities from detection on this MDP and run a Monte
    /// Carlo check at the bound.
    #[arg(long, requires_all = ["distortion", "c_bs", "eps_bs", "seed"])]
    mdp: Option<PathBuf>,
    #[arg(long)]
    distortion: Option<PathBuf>,
    #[arg(long, default_value = "uniform")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long)]
    c_bs: Option<f64>,
    #[arg(long)]
    eps_bs: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingReport {
    pub delta: f64,
    pub t: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_bs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_bs_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<HittingEstimate>,
    /// Empirical hit-by-t probability is at least `delta - 3 se`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

pub fn hitting(args: HittingArgs) -> Result<Outcome> {
    let mut report = HittingReport {
        delta: args.delta,
        t: 0,
        p_min: args.p_min,
        p_max: args.p_max,
        r_bs: None,
        eps_bs_min: None,
        events: Vec::new(),
        monte_carlo: None,
        passed: None,
    };
    match (&args.mdp, args.p_min, args.p_max) {
        (None, Some(p_min), Some(p_max)) => report.t = hitting_time_from_probs(args.delta, p_min, p_max)?,
        (Some(path), _, _) => {
            let (c_bs, eps_bs, seed) = (args.c_bs.expect("required"), args.eps_bs.expect("required"), args.seed.expect("required"));
            let mdp = load_mdp(path)?;
            let model = load_distortion(args.distortion.as_ref().expect("required"))?;
            let policy = load_policy(&args.policy, &mdp)?;
            let det = detect_with_tolerance(&mdp, &policy, &model, c_bs, eps_bs, args.start, DEFAULT_ETA_FLAT)?;
            if det.is_empty() {
                anyhow::bail!("no s-black swans under these parameters; the hitting-time bound is undefined");
            }
            let r_bs = compute_r_bs(&model, c_bs, mdp.r_max())?;
            report.t = hitting_time_bound(args.delta, mdp.r_max(), r_bs, det.eps_bs_min, eps_bs)?;
            let events: BTreeSet<_> = det.events.iter().copied().collect();
            let est = monte_carlo_hitting(&mdp, &policy, &events, report.t as usize, args.trials, seed, args.start)?;
            report.passed = Some(est.hit_by_t >= args.delta - 3.0 * est.std_error_hit_by_t);
            report.r_bs = Some(r_bs);
            report.eps_bs_min = Some(det.eps_bs_min);
            report.events = det.events;
            report.monte_carlo = Some(est);
        }
        _ => anyhow::bail!("pass either --p-min and --p-max, or --mdp with --distortion, --c-bs, --eps-bs and --seed"),
    }
    emit(&report, &args.output)?;
    Ok(if report.passed == Some(false) { Outcome::TheoremFailed } else { Outcome::Ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbs_core::tversky_kahneman_model;

    #[test]
    fn curves_span_both_domains() {
        let m = tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, 10.0).unwrap();
        let csv = curves_csv(&m, 3);
        let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0][0], rows[2][0]), (-10.0, 10.0));
        assert_eq!((rows[0][2], rows[2][2]), (0.0, 1.0));
        assert_eq!(rows[1][1], 0.0);
        assert_eq!((rows[2][3], rows[2][4]), (1.0, 1.0));
    }
}
