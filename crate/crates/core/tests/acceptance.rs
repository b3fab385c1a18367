//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! with its runtime and the measured quantities; exits non-zero on any FAIL.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbs_core::catalog::{bernoulli_action_chain, insurance_mdp, insurance_no_pay, insurance_pay, insurance_spec, INSURANCE_BASE, NO_PAY};
use sbs_core::verify::{check_dkw_convergence, construct_three_state_counterexample, DkwConfig, VerifyError};
use sbs_core::*;

fn report(n: u32, ok: bool, elapsed: Duration, limit: Duration, detail: &str) -> bool {
    let pass = ok && elapsed <= limit;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} ({:.2}s, limit {}s) {detail}", elapsed.as_secs_f64(), limit.as_secs());
    pass
}

fn models(r_max: f64) -> Vec<DistortionModel> {
    let tk = tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, r_max).unwrap();
    let steep = tversky_kahneman_model(0.5, 0.7, 1.5, 0.75, 0.8, r_max).unwrap();
    let flat = flat_region_model(0.1, &tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, r_max).unwrap()).unwrap();
    vec![tk, steep, flat]
}

fn criterion_01_insurance_example() -> bool {
    let start = Instant::now();
    let mdp = insurance_mdp();
    let v_np = value_function(&mdp, &insurance_no_pay(), INSURANCE_BASE).unwrap();
    let v_p = value_function(&mdp, &insurance_pay(), INSURANCE_BASE).unwrap();
    let chosen = optimal_policy(&mdp).action(0, INSURANCE_BASE);
    let ok = v_np == -10.0 && v_p == -15.0 && chosen == Some(NO_PAY);
    report(1, ok, start.elapsed(), Duration::from_secs(1), &format!("V(no-pay)={v_np} V(pay)={v_p} optimal={chosen:?}"))
}

fn criterion_02_one_step() -> bool {
    let start = Instant::now();
    let fam = RandomFamily { states: 1..=6, actions: 2..=5, horizon: 1, gamma: 1.0, r_max: 10.0 };
    let mut failures = 0;
    let mut instances = 0;
    for (k, m) in models(10.0).iter().enumerate() {
        assert!(m.is_valid());
        let r = check_one_step(&fam, m, 1000, 100 + k as u64).unwrap();
        failures += r.failures;
        instances += r.instances_run;
    }
    report(2, failures == 0, start.elapsed(), Duration::from_secs(10), &format!("instances={instances} mismatches={failures}"))
}

fn criterion_03_two_state() -> bool {
    let start = Instant::now();
    let fam = RandomFamily { states: 2..=2, actions: 2..=4, horizon: 2, gamma: 0.95, r_max: 10.0 };
    let mut failures = 0;
    let mut instances = 0;
    for (k, m) in models(10.0).iter().enumerate() {
        let r = check_two_state(&fam, m, 1000, 2..=10, 200 + k as u64).unwrap();
        failures += r.failures;
        instances += r.instances_run;
    }
    report(3, failures == 0, start.elapsed(), Duration::from_secs(30), &format!("instances={instances} mismatches={failures}"))
}

fn criterion_04_three_state_counterexample() -> bool {
    let start = Instant::now();
    let tk = tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, 1.0).unwrap();
    let (mdp, found) = construct_three_state_counterexample(&tk).unwrap();
    let loss = found.metric("value_loss").unwrap();
    let tried = found.metric("candidates_tried").unwrap();
    let witness_ok = found.passed() && loss > 1e-6 && mdp.n_states() == 3 && mdp.horizon() == 2;
    let identity = construct_three_state_counterexample(&DistortionModel::identity_limit(1.0));
    let exhausted = matches!(identity, Err(VerifyError::SearchBudgetExhausted { budget: 100_000 }));
    report(
        4,
        witness_ok && exhausted,
        start.elapsed(),
        Duration::from_secs(120),
        &format!("witness after {tried} candidates, value_loss={loss:.3e}; identity exhausted={exhausted}"),
    )
}

fn spread_distribution() -> RewardDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let atoms: Vec<(f64, f64)> = (0..20).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(0.1..1.0))).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    RewardDistribution::from_atoms(atoms.into_iter().map(|(r, p)| (r, p / total))).unwrap()
}

fn criterion_05_edf_convergence() -> bool {
    let start = Instant::now();
    let dist = spread_distribution();
    let model = tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, 10.0).unwrap();
    let cfg = DkwConfig::for_model(&model, 10_000, 0.05);
    let ns = [100, 1000, 10_000];
    let r = check_dkw_convergence(&dist, &model, &cfg, &ns, 200, 17).unwrap();
    let medians: Vec<f64> = ns.iter().map(|n| r.metric(&format!("median_error_n{n}")).unwrap()).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let at_target = r.metric("exceedance_n10000").unwrap() <= 0.08;
    let rates: Vec<String> = ns
        .iter()
        .map(|n| {
            format!("n={n}: rate={} bound={:.3}", r.metric(&format!("exceedance_n{n}")).unwrap(), r.metric(&format!("bound_n{n}")).unwrap())
        })
        .collect();
    report(
        5,
        decreasing && at_target && r.passed(),
        start.elapsed(),
        Duration::from_secs(120),
        &format!("medians={medians:.4?} eps={:.4} {}", cfg.epsilon, rates.join(", ")),
    )
}

/// Insurance decision with loss `loss` hit with probability `p`.
fn insurance_variant(loss: f64, p: f64) -> Mdp {
    let mut spec = insurance_spec();
    spec.transition[0][NO_PAY] = vec![1.0 - p, 0.0, p];
    spec.reward[2] = vec![-loss, -loss];
    build_mdp(&spec).unwrap()
}

fn criterion_06_value_gap_bound() -> bool {
    let start = Instant::now();
    let model = flat_region_model(0.02, &tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, 1000.0).unwrap()).unwrap();
    let (c_bs, eps_bs) = (100.0, 0.01);
    let mut ok = true;
    let mut ratios = Vec::new();
    for (loss, p) in [(1000.0, 0.01), (900.0, 0.012), (800.0, 0.008), (700.0, 0.015), (600.0, 0.005)] {
        let r =
            check_value_gap_lower_bound(&insurance_variant(loss, p), &insurance_no_pay(), &model, c_bs, eps_bs, INSURANCE_BASE).unwrap();
        ok &= r.metric("events").unwrap() >= 1.0 && r.metric("bound_value").unwrap() > 0.0 && r.passed();
        ratios.push(r.metric("ratio").unwrap());
    }
    let r_bs = compute_r_bs(&model, c_bs, 1000.0).unwrap();
    let bounds: Vec<f64> = [25.0, 50.0, 100.0, 200.0, 400.0].iter().map(|&c| value_gap_bound(1000.0, r_bs, 0.005, eps_bs, c)).collect();
    let monotone = bounds.windows(2).all(|w| w[1] > w[0]);
    report(6, ok && monotone, start.elapsed(), Duration::from_secs(30), &format!("ratios={ratios:.2?} bounds over C_bs={bounds:.3?}"))
}

fn criterion_07_hitting_time() -> bool {
    let start = Instant::now();
    let (delta, p_min, p_max) = (0.001, 0.005, 0.01);
    let t = hitting_time_from_probs(delta, p_min, p_max).unwrap();
    // Per-step event probability inside [p_min, p_max] by construction.
    let (mdp, policy) = bernoulli_action_chain(0.0075, t as usize);
    let events: BTreeSet<_> = [(0, 1)].into_iter().collect();
    let est = monte_carlo_hitting(&mdp, &policy, &events, t as usize, 100_000, 23, 0).unwrap();
    let ok = t == 162 && est.hit_by_t >= delta - 3.0 * est.std_error_hit_by_t;
    report(
        7,
        ok,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("t={t} hit_by_t={:.4} (se {:.4}) first_hit_at_t={:.5}", est.hit_by_t, est.std_error_hit_by_t, est.first_hit_at_t),
    )
}

fn criterion_08_visitation_lemmas() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = 0;
    let mut instances = 0;
    for k in 0..5 {
        let mdp = random_mdp(3 + k, 2 + k % 2, 6 + k, 0.5 + 0.1 * k as f64, 1.0, &mut rng);
        let policy = Policy::uniform(mdp.n_states(), mdp.n_actions(), mdp.horizon());
        let r = check_visitation_gap_lemma(&mdp, 0.2 + 0.2 * k as f64, &policy, 100, 40 + k as u64, 0).unwrap();
        failures += r.failures;
        instances += r.instances_run;
    }
    report(8, failures == 0, start.elapsed(), Duration::from_secs(30), &format!("instances={instances} violations={failures}"))
}

const C_BS: f64 = 100.0;
const EPS_BS: f64 = 0.05;

fn detector_model() -> DistortionModel {
    flat_region_model(0.2, &tversky_kahneman_model(0.88, 0.5, 2.25, 0.61, 0.69, 1000.0).unwrap()).unwrap()
}

fn detector_instances() -> Vec<(Mdp, Policy)> {
    (0..100u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let ns = rng.random_range(2..=5);
            let na = rng.random_range(1..=3);
            let horizon = rng.random_range(2..=6);
            let mdp = random_mdp(ns, na, horizon, 0.9, 1000.0, &mut rng);
            let policy = if i % 2 == 0 { Policy::uniform(ns, na, horizon) } else { optimal_policy(&mdp) };
            (mdp, policy)
        })
        .collect()
}

/// Reference detector: forward propagation of the state distribution,
/// sort, cumulate and test both conditions pair by pair.
fn oracle_events(mdp: &Mdp, policy: &Policy, model: &DistortionModel, c_bs: f64, eps_bs: f64) -> BTreeSet<(usize, usize)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut mass = vec![0.0; ns * na];
    let mut state = vec![0.0; ns];
    state[0] = 1.0;
    let mut discount = 1.0;
    let mut norm = 0.0;
    for t in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let m = state[s] * policy.prob(t, s, a);
                mass[s * na + a] += discount * m;
                for (s2, q) in mdp.row(s, a).iter().enumerate() {
                    next[s2] += m * q;
                }
            }
        }
        norm += discount;
        discount *= mdp.gamma();
        state = next;
    }
    let mut pairs: Vec<(f64, usize)> = mass.iter().map(|m| m / norm).zip(0..).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut events = BTreeSet::new();
    let mut cum = 0.0;
    for (p, idx) in pairs {
        let before = model.w_minus(cum);
        cum += p;
        let step = (model.w_minus(cum) - before).abs();
        let (s, a) = (idx / na, idx % na);
        let r = mdp.reward(s, a);
        let rare = step <= DEFAULT_ETA_FLAT && p > 0.0 && p < eps_bs;
        let high_risk = r < 0.0 && r - model.u_minus(r) < -c_bs;
        if rare && high_risk {
            events.insert((s, a));
        }
    }
    events
}

fn event_set(report: &BlackSwanReport) -> BTreeSet<(usize, usize)> {
    report.events.iter().copied().collect()
}

fn criterion_09_detector() -> bool {
    let start = Instant::now();
    let model = detector_model();
    let identity = DistortionModel::identity_limit(1000.0);
    let cs = [25.0, 50.0, 100.0, 200.0, 400.0];
    let epss = [0.01, 0.02, 0.05, 0.1, 0.15];
    let (mut agree, mut total_events, mut identity_clean, mut monotone) = (0, 0, true, true);
    let instances = detector_instances();
    for (mdp, policy) in &instances {
        let found = event_set(&detect(mdp, policy, &model, C_BS, EPS_BS, 0).unwrap());
        agree += usize::from(found == oracle_events(mdp, policy, &model, C_BS, EPS_BS));
        total_events += found.len();
        identity_clean &= detect(mdp, policy, &identity, C_BS, EPS_BS, 0).unwrap().is_empty();
        let grid: Vec<Vec<BTreeSet<_>>> =
            cs.iter().map(|&c| epss.iter().map(|&e| event_set(&detect(mdp, policy, &model, c, e, 0).unwrap())).collect()).collect();
        for i in 0..cs.len() {
            for j in 0..epss.len() {
                if i + 1 < cs.len() {
                    monotone &= grid[i + 1][j].is_subset(&grid[i][j]);
                }
                if j + 1 < epss.len() {
                    monotone &= grid[i][j].is_subset(&grid[i][j + 1]);
                }
            }
        }
    }
    let ok = agree == instances.len() && total_events > 0 && identity_clean && monotone;
    report(
        9,
        ok,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "oracle agreement {agree}/{} (events={total_events}), identity empty={identity_clean}, grid monotone={monotone}",
            instances.len()
        ),
    )
}

fn criterion_10_loss_threshold() -> bool {
    let start = Instant::now();
    let linear = DistortionModel::new(
        ValueDistortion { plus: ValueCurve::Linear { slope: 1.0 }, minus: ValueCurve::Linear { slope: 1.5 }, r_max: 100.0 },
        tversky_kahneman_model(0.88, 0.88, 2.25, 0.61, 0.69, 100.0).unwrap().prob,
    )
    .unwrap();
    let r_bs_linear = compute_r_bs(&linear, 5.0, 100.0).unwrap();
    let model = detector_model();
    let r_bs = compute_r_bs(&model, C_BS, 1000.0).unwrap();
    let mut inside = true;
    let mut checked = 0;
    for (mdp, policy) in detector_instances() {
        for d in detect(&mdp, &policy, &model, C_BS, EPS_BS, 0).unwrap().event_diagnostics() {
            checked += 1;
            inside &= d.reward >= -mdp.r_max() && d.reward <= -r_bs;
        }
    }
    let ok = (r_bs_linear - 10.0).abs() <= 1e-9 && inside;
    report(
        10,
        ok,
        start.elapsed(),
        Duration::from_secs(30),
        &format!("R_bs(1.5x, 5)={r_bs_linear} R_bs={r_bs:.3} events checked={checked} inside={inside}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> bool); 10] = [
        (1, criterion_01_insurance_example),
        (2, criterion_02_one_step),
        (3, criterion_03_two_state),
        (4, criterion_04_three_state_counterexample),
        (5, criterion_05_edf_convergence),
        (6, criterion_06_value_gap_bound),
        (7, criterion_07_hitting_time),
        (8, criterion_08_visitation_lemmas),
        (9, criterion_09_detector),
        (10, criterion_10_loss_threshold),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let pass = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| {
            println!("criterion {n}: FAIL (panicked)");
            false
        });
        failed += usize::from(!pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
