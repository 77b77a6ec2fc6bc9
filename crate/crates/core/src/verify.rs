//! Invariant suites run by `amdp verify`. Every suite uses fixed seeds.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::AdversarySpec;
use crate::confidence::{extended_value_iteration, optimistic_row, ConfidenceSet};
use crate::error::{invalid, Result};
use crate::fpl::FplAgent;
use crate::harness::{self, ResolvedConfig, RunConfig};
use crate::mdp::{opt_in_hindsight, policy_value, value_iteration, Dims, MdpSpec, RewardTensor, TransitionKernel};
use crate::oracle::{
    brute_force_opt, btl_residual, forward_policy_value, grid_l1_ball_max, mc_action_probs, mc_max_of_exponentials,
    stability_check, two_action_choice_prob, RunRecord, MC_SIGMAS,
};
use crate::perturbation::{log_survival, max_expectation_bound, ExpParams};

pub const SUITES: [&str; 7] = ["bellman", "btl", "stability", "evi", "fact1", "fact2", "fpop"];

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub bound: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: impl Into<String>, bound: impl Into<String>, estimate: f64, stderr: Option<f64>, pass: bool) -> Self {
        Self {
            check: check.into(),
            bound: bound.into(),
            estimate,
            stderr,
            pass,
        }
    }
}

pub fn render(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,bound,estimate,stderr,verdict\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.check,
            r.bound,
            harness::format_float(r.estimate),
            r.stderr.map(harness::format_float).unwrap_or_default(),
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    out
}

/// Runs one suite by name, or all of them for `"all"`.
pub fn run(selector: &str) -> Result<Vec<CheckRow>> {
    if selector == "all" {
        let mut rows = Vec::new();
        for name in SUITES {
            rows.extend(run(name)?);
        }
        return Ok(rows);
    }
    match selector {
        "bellman" => bellman(),
        "btl" => btl(),
        "stability" => stability(),
        "evi" => evi(),
        "fact1" => Ok(fact1()),
        "fact2" => fact2(),
        "fpop" => fpop(),
        other => Err(invalid(
            "suite",
            format!("unknown suite '{other}'; valid names: all, {}", SUITES.join(", ")),
        )),
    }
}

fn random_reward<R: Rng>(dims: Dims, scale: f64, rng: &mut R) -> RewardTensor {
    RewardTensor::from_fn(dims, |_, _, _| rng.gen::<f64>() * scale)
}

fn bellman() -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = Dims::new(3, 2, 3)?;
    let (mut opt_gap, mut greedy_gap, mut forward_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let kernel = TransitionKernel::random(3, 2, &mut rng);
        let r = random_reward(dims, 10.0, &mut rng);
        let s1 = rng.gen_range(0..3);
        let (opt, policy) = opt_in_hindsight(&r, &kernel, s1)?;
        opt_gap = opt_gap.max((opt - brute_force_opt(&r, &kernel, s1)?).abs());
        greedy_gap = greedy_gap.max((policy_value(&r, &kernel, &policy, s1)? - opt).abs());
        forward_gap = forward_gap.max((forward_policy_value(&r, &kernel, &policy, s1) - opt).abs());
    }
    Ok(vec![
        CheckRow::new("bellman/opt_vs_brute_force", "<= 1e-9", opt_gap, None, opt_gap <= 1e-9),
        CheckRow::new("bellman/greedy_value_bit_exact", "== 0", greedy_gap, None, greedy_gap == 0.0),
        CheckRow::new("bellman/forward_occupancy", "<= 1e-9", forward_gap, None, forward_gap <= 1e-9),
    ])
}

fn btl() -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dims = Dims::new(3, 2, 3)?;
    let mut worst = f64::INFINITY;
    for run in 0..100u64 {
        let spec = MdpSpec::new(3, TransitionKernel::random(3, 2, &mut rng), 0)?;
        let params = ExpParams::new(rng.gen_range(0.05..2.0))?;
        let adversary = AdversarySpec::IidUniform { dims, seed: run };
        let rewards = (1..=50).map(|t| adversary.next_reward(t)).collect::<Result<Vec<_>>>()?;
        let agent = FplAgent::new(spec, params, &mut rng);
        worst = worst.min(btl_residual(&RunRecord::play(agent, &rewards)?)?);
    }
    Ok(vec![CheckRow::new("btl/min_residual_100_runs", ">= -1e-6", worst, None, worst >= -1e-6)])
}

fn stability() -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dims = Dims::new(2, 2, 2)?;
    let spec = MdpSpec::new(2, TransitionKernel::random(2, 2, &mut rng), 0)?;
    let params = ExpParams::new(0.1)?;
    let history: Vec<RewardTensor> = (0..5).map(|_| random_reward(dims, 1.0, &mut rng)).collect();
    let extra = random_reward(dims, 1.0, &mut rng);
    let report = stability_check(&spec, params, &history, &extra, 100_000, &mut rng)?;
    let mut rows: Vec<CheckRow> = report
        .entries
        .iter()
        .map(|e| {
            CheckRow::new(
                format!("stability/ratio(s={},h={},a={})", e.state, e.layer, e.action),
                format!("[{:.6}; {:.6}]", e.lower, e.upper),
                e.ratio,
                Some(e.stderr),
                e.pass,
            )
        })
        .collect();
    if let Some(v) = &report.value {
        rows.push(CheckRow::new(
            "stability/value_next_vs_current",
            format!("<= {:.6} * {:.6}", v.factor, v.current),
            v.next,
            Some(v.stderr),
            v.pass,
        ));
    }

    // One state, one layer: the choice probability has a closed form.
    let single = MdpSpec::new(1, TransitionKernel::uniform(1, 2), 0)?;
    let lead_history = vec![
        RewardTensor::from_values(single.dims(), vec![1.0, 0.0])?,
        RewardTensor::from_values(single.dims(), vec![1.0, 0.5])?,
        RewardTensor::from_values(single.dims(), vec![1.0, 0.0])?,
    ];
    let probs = mc_action_probs(
        |r| FplAgent::new(single.clone(), params, r),
        &lead_history,
        100_000,
        &mut rng,
    )?;
    let expected = two_action_choice_prob(2.5, params)?;
    let (est, se) = (probs.prob(0, 1, 0), probs.stderr(0, 1, 0));
    rows.push(CheckRow::new(
        "stability/two_action_closed_form",
        format!("{expected:.6} +- 4se"),
        est,
        Some(se),
        (est - expected).abs() <= MC_SIGMAS * se,
    ));
    Ok(rows)
}

fn evi() -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let resolution = 0.01;
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 3.0).collect();
        let b = rng.gen::<f64>() * 2.5;
        let q = optimistic_row(&p, b, &w);
        let greedy: f64 = q.iter().zip(&w).map(|(x, y)| x * y).sum();
        let grid = grid_l1_ball_max(&p, b, &w, resolution)?;
        let tol = resolution * w.iter().cloned().fold(0.0, f64::max);
        if tol > 0.0 {
            worst = worst.max((grid - greedy).abs() / tol);
        }
    }
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let (s, a, h) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4));
        let dims = Dims::new(s, a, h)?;
        let kernel = TransitionKernel::random(s, a, &mut rng);
        let r = random_reward(dims, 5.0, &mut rng);
        let plan = extended_value_iteration(&r, &ConfidenceSet::pinned(kernel.clone()))?;
        let (policy, tables) = value_iteration(&r, &kernel)?;
        let same_values = (1..=h).all(|layer| tables.v_layer(layer) == (0..s).map(|x| plan.w(layer, x)).collect::<Vec<_>>());
        if plan.policy() != &policy || !same_values {
            mismatches += 1;
        }
    }
    Ok(vec![
        CheckRow::new("evi/grid_gap_over_tolerance_500", "<= 1", worst, None, worst <= 1.0),
        CheckRow::new("evi/zero_radius_mismatches_100", "== 0", mismatches as f64, None, mismatches == 0),
    ])
}

fn fact1() -> Vec<CheckRow> {
    // Dyadic grid and rates keep every product exact.
    let mut violations = 0usize;
    for eta in [0.125, 0.5, 1.0, 2.0] {
        let params = ExpParams::new(eta).expect("positive rate");
        for i in -40..=160 {
            let x = i as f64 * 0.125;
            for j in 0..=64 {
                let step = j as f64 * 0.125;
                let drop = log_survival(x, params) - log_survival(x + step, params);
                if !(drop >= 0.0 && drop <= eta * step) {
                    violations += 1;
                }
            }
        }
    }
    vec![CheckRow::new("fact1/lipschitz_grid_violations", "== 0", violations as f64, None, violations == 0)]
}

fn fact2() -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut rows = Vec::new();
    for eta in [0.1, 1.0] {
        let params = ExpParams::new(eta)?;
        for m in [2usize, 16, 64, 256] {
            let bound = max_expectation_bound(m, params)?;
            let floor = (m as f64).ln() / eta;
            let (mean, se) = mc_max_of_exponentials(m, params, 100_000, &mut rng);
            rows.push(CheckRow::new(
                format!("fact2/max_of_{m}_eta_{eta}"),
                format!("[{floor:.6}; {bound:.6}]"),
                mean,
                Some(se),
                mean <= bound + MC_SIGMAS * se && mean >= floor - MC_SIGMAS * se,
            ));
        }
    }
    Ok(rows)
}

fn collapse_configs(seeds: &[u64]) -> std::result::Result<(ResolvedConfig, ResolvedConfig), harness::HarnessError> {
    let body = format!(
        "S = 3\nA = 2\nH = 3\nT = 200\neta = 0.05\nadversary = \"iid_uniform\"\nadversary_seed = 5\nkernel_seed = 9\nseeds = {seeds:?}\n"
    );
    let known = RunConfig::parse(&format!("setting = \"known\"\n{body}"))?.resolve()?;
    let unknown = RunConfig::parse(&format!("setting = \"unknown\"\ndebug_collapse = true\n{body}"))?.resolve()?;
    Ok((known, unknown))
}

fn fpop() -> Result<Vec<CheckRow>> {
    let seeds: Vec<u64> = (1..=20).collect();
    let (known, unknown) = collapse_configs(&seeds).map_err(|e| invalid("fpop suite", e.to_string()))?;
    let a = harness::run(&known);
    let b = harness::run(&unknown);
    let mismatched = a
        .outcomes
        .iter()
        .zip(&b.outcomes)
        .filter(|(x, y)| x.policies != y.policies || x.ledger().map(|l| &l.values) != y.ledger().map(|l| &l.values))
        .count();

    let body = "setting = \"unknown\"\nS = 3\nA = 2\nH = 3\nT = 2000\nadversary = \"switching\"\nadversary_period = 64\nkernel_seed = 9\n";
    let config = RunConfig::parse(&format!("{body}seeds = {seeds:?}\n"))
        .and_then(|c| c.resolve())
        .map_err(|e| invalid("fpop suite", e.to_string()))?;
    let report = harness::run(&config);
    let rate = report.containment_rate().unwrap_or(0.0);
    Ok(vec![
        CheckRow::new("fpop/collapse_mismatched_seeds_20", "== 0", mismatched as f64, None, mismatched == 0),
        CheckRow::new("fpop/containment_rate", ">= 0.99", rate, None, rate >= 0.99 && report.failures().is_empty()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_lists_valid_names() {
        let msg = run("nope").unwrap_err().to_string();
        for name in SUITES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn fact1_passes() {
        assert!(fact1().iter().all(|r| r.pass));
    }

    #[test]
    fn render_marks_failures() {
        let rows = [
            CheckRow::new("a", "== 0", 0.0, None, true),
            CheckRow::new("b", "== 0", 1.0, Some(0.5), false),
        ];
        let text = render(&rows);
        assert!(text.starts_with("check,bound,estimate,stderr,verdict\n"));
        assert!(text.contains("a,== 0,0.0000000000000000e0,,pass"));
        assert!(text.contains("b,== 0,1.0000000000000000e0,5.0000000000000000e-1,FAIL"));
    }
}
