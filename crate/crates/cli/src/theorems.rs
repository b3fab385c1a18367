use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbs_core::catalog::{bernoulli_action_chain, insurance_mdp};
use sbs_core::verify::{check_dkw_convergence, construct_three_state_counterexample_with, instance_rng, DkwConfig, VerifyError};
use sbs_core::{
    check_one_step, check_two_state, check_value_gap_lower_bound, check_visitation_gap_lemma, flat_region_model, hitting_time_from_probs,
    monte_carlo_hitting, random_mdp, tversky_kahneman_model, DistortionModel, Policy, RandomFamily, RewardDistribution, TheoremCheckResult,
    TheoremId,
};

use crate::io::{emit, load_distortion, load_mdp, load_policy};
use crate::{Outcome, OutputArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum TheoremArg {
    OneStep,
    TwoState,
    ThreeStateCounterexample,
    ValueGapLowerBound,
    HittingTime,
    VisitationGapLemma,
    StepVisitationLemma,
    DkwConvergence,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    theorem: TheoremArg,
    /// Instances, search budget, Monte Carlo trials or repetitions,
    /// depending on the theorem.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Distortion file; each theorem has a default model otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// MDP for the value-gap check (defaults to the insurance example).
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value = "optimal")]
    policy: String,
    #[arg(long, default_value_t = 100.0)]
    c_bs: f64,
    #[arg(long, default_value_t = 0.01)]
    eps_bs: f64,
    #[arg(long, default_value_t = 0.001)]
    delta: f64,
    #[arg(long, default_value_t = 0.005)]
    p_min: f64,
    #[arg(long, default_value_t = 0.01)]
    p_max: f64,
    /// Occupancy gap budget for the visitation lemmas.
    #[arg(long, default_value_t = 0.5)]
    eps_d: f64,
    #[command(flatten)]
    output: OutputArgs,
}

fn default_tk(r_max: f64) -> Result<DistortionModel> {
    Ok(tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, r_max)?)
}

fn model_or(args: &VerifyArgs, fallback: impl FnOnce() -> Result<DistortionModel>) -> Result<DistortionModel> {
    match &args.model {
        Some(path) => load_distortion(path),
        None => fallback(),
    }
}

fn random_distribution(seed: u64) -> Result<RewardDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<(f64, f64)> = (0..20).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(0.1..1.0))).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Ok(RewardDistribution::from_atoms(atoms.into_iter().map(|(r, p)| (r, p / total)))?)
}

fn run_theorem(args: &VerifyArgs) -> Result<TheoremCheckResult> {
    let n = args.instances;
    Ok(match args.theorem {
        TheoremArg::OneStep => {
            let model = model_or(args, || default_tk(10.0))?;
            let fam = RandomFamily { states: 1..=6, actions: 2..=5, horizon: 1, gamma: 1.0, r_max: model.r_max() };
            check_one_step(&fam, &model, n.unwrap_or(1000), args.seed)?
        }
        TheoremArg::TwoState => {
            let model = model_or(args, || default_tk(10.0))?;
            let fam = RandomFamily { states: 2..=2, actions: 2..=4, horizon: 2, gamma: 0.95, r_max: model.r_max() };
            check_two_state(&fam, &model, n.unwrap_or(1000), 2..=10, args.seed)?
        }
        TheoremArg::ThreeStateCounterexample => {
            let model = model_or(args, || default_tk(1.0))?;
            let budget = n.unwrap_or(100_000);
            match construct_three_state_counterexample_with(&model, budget, args.seed) {
                Ok((_, result)) => result,
                Err(VerifyError::SearchBudgetExhausted { budget }) => {
                    let mut r = TheoremCheckResult {
                        theorem_id: TheoremId::ThreeStateCounterexample,
                        instances_run: budget,
                        failures: 1,
                        witness: None,
                        metrics: Default::default(),
                    };
                    r.metrics.insert("candidates_tried".into(), budget as f64);
                    r
                }
                Err(e) => return Err(e.into()),
            }
        }
        TheoremArg::ValueGapLowerBound => {
            let mdp = match &args.mdp {
                Some(path) => load_mdp(path)?,
                None => insurance_mdp(),
            };
            let model = model_or(args, || {
                let base = tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, mdp.r_max())?;
                Ok(flat_region_model(0.02, &base)?)
            })?;
            let policy = load_policy(&args.policy, &mdp)?;
            check_value_gap_lower_bound(&mdp, &policy, &model, args.c_bs, args.eps_bs, 0)?
        }
        TheoremArg::HittingTime => {
            let t = hitting_time_from_probs(args.delta, args.p_min, args.p_max)?;
            let p = 0.5 * (args.p_min + args.p_max);
            let (mdp, policy) = bernoulli_action_chain(p, t as usize);
            let events: BTreeSet<_> = [(0, 1)].into_iter().collect();
            let trials = n.unwrap_or(100_000);
            let est = monte_carlo_hitting(&mdp, &policy, &events, t as usize, trials, args.seed, 0)?;
            let mut r = TheoremCheckResult {
                theorem_id: TheoremId::HittingTime,
                instances_run: trials,
                failures: usize::from(est.hit_by_t < args.delta - 3.0 * est.std_error_hit_by_t),
                witness: None,
                metrics: Default::default(),
            };
            for (k, v) in [
                ("t", t as f64),
                ("per_step_probability", p),
                ("hit_by_t", est.hit_by_t),
                ("first_hit_at_t", est.first_hit_at_t),
                ("std_error_hit_by_t", est.std_error_hit_by_t),
                ("std_error_first_hit", est.std_error_first_hit),
            ] {
                r.metrics.insert(k.into(), v);
            }
            r
        }
        TheoremArg::VisitationGapLemma | TheoremArg::StepVisitationLemma => {
            let mdp = random_mdp(4, 2, 8, 0.9, 1.0, &mut instance_rng(args.seed, u64::MAX));
            let policy = Policy::uniform(4, 2, 8);
            let mut r = check_visitation_gap_lemma(&mdp, args.eps_d, &policy, n.unwrap_or(500), args.seed, 0)?;
            if args.theorem == TheoremArg::StepVisitationLemma {
                r.theorem_id = TheoremId::StepVisitationLemma;
            }
            r
        }
        TheoremArg::DkwConvergence => {
            let model = model_or(args, || default_tk(10.0))?;
            let dist = random_distribution(args.seed)?;
            let cfg = DkwConfig::for_model(&model, 10_000, 0.05);
            check_dkw_convergence(&dist, &model, &cfg, &[100, 1000, 10_000], n.unwrap_or(200), args.seed)?
        }
    })
}

pub fn verify(args: VerifyArgs) -> Result<Outcome> {
    let result = run_theorem(&args)?;
    emit(&result, &args.output)?;
    Ok(if result.passed() { Outcome::Ok } else { Outcome::TheoremFailed })
}
