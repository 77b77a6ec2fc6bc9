//! Cross-checks of the planners and agents against the independent oracles.

use amdp_core::adversary::AdversarySpec;
use amdp_core::confidence::{extended_value_iteration, optimistic_row, ConfidenceSet};
use amdp_core::fpl::FplAgent;
use amdp_core::mdp::{opt_in_hindsight, policy_value, Dims, MdpSpec, RewardTensor, TransitionKernel};
use amdp_core::oracle::{
    brute_force_opt, btl_residual, grid_l1_ball_max, mc_action_probs, mc_max_of_exponentials, stability_check,
    two_action_choice_prob, RunRecord,
};
use amdp_core::perturbation::{max_expectation_bound, sample_exp_tensor, ExpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

#[test]
fn value_iteration_matches_brute_force_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..200 {
        let s = rng.gen_range(1..=3);
        let a = rng.gen_range(1..=3);
        let h = rng.gen_range(1..=3);
        let d = Dims::new(s, a, h).unwrap();
        let kernel = TransitionKernel::random(s, a, &mut rng);
        let r = RewardTensor::from_fn(d, |_, _, _| rng.gen::<f64>() * 20.0);
        let s1 = rng.gen_range(0..s);
        let (opt, _) = opt_in_hindsight(&r, &kernel, s1).unwrap();
        let brute = brute_force_opt(&r, &kernel, s1).unwrap();
        assert!((opt - brute).abs() < 1e-9, "{d}: {opt} vs {brute}");
    }
}

#[test]
fn optimistic_row_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let resolution = 0.01;
    for _ in 0..500 {
        let n = rng.gen_range(1..=3);
        let p = random_row(&mut rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0).collect();
        let b = rng.gen::<f64>() * 2.5;
        let q = optimistic_row(&p, b, &w);
        let value: f64 = q.iter().zip(&w).map(|(x, y)| x * y).sum();
        let grid = grid_l1_ball_max(&p, b, &w, resolution).unwrap();
        let tol = resolution * w.iter().cloned().fold(0.0, f64::max);
        assert!((grid - value).abs() <= tol + 1e-12, "p={p:?} b={b} w={w:?}: {grid} vs {value}");
    }
}

#[test]
fn optimistic_row_three_state_example_against_grid() {
    let p = [0.5, 0.3, 0.2];
    let w = [1.0, 0.5, 0.0];
    let q = optimistic_row(&p, 0.2, &w);
    let value: f64 = q.iter().zip(&w).map(|(x, y)| x * y).sum();
    assert!((value - 0.75).abs() < 1e-12);
    let grid = grid_l1_ball_max(&p, 0.2, &w, 0.01).unwrap();
    assert!((grid - 0.75).abs() <= 0.01);
}

#[test]
fn zero_radius_planning_is_value_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let (s, a, h) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4));
        let d = Dims::new(s, a, h).unwrap();
        let kernel = TransitionKernel::random(s, a, &mut rng);
        let r = RewardTensor::from_fn(d, |_, _, _| rng.gen::<f64>() * 3.0);
        let plan = extended_value_iteration(&r, &ConfidenceSet::pinned(kernel.clone())).unwrap();
        let (opt, policy) = opt_in_hindsight(&r, &kernel, 0).unwrap();
        assert_eq!(plan.policy(), &policy);
        assert_eq!(plan.w(1, 0), opt);
    }
}

fn experts(n: usize) -> MdpSpec {
    MdpSpec::new(1, TransitionKernel::uniform(1, n), 0).unwrap()
}

#[test]
fn choice_frequency_matches_closed_form() {
    let spec = experts(2);
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for (eta, c1, c2) in [(1.0f64, 3.0f64, 2.0f64), (0.5, 4.0, 1.5), (0.1, 7.0, 2.0)] {
        let params = ExpParams::new(eta).unwrap();
        let d = spec.dims();
        // Spread each total evenly over enough episodes to stay within [0, 1].
        let n = c1.max(c2).ceil() as usize;
        let full: Vec<RewardTensor> =
            (0..n).map(|_| RewardTensor::from_values(d, vec![c1 / n as f64, c2 / n as f64]).unwrap()).collect();
        let sums: Vec<f64> = (0..2).map(|a| full.iter().map(|r| r.get(0, a, 1)).sum()).collect();

        let table = mc_action_probs(|r| FplAgent::new(spec.clone(), params, r), &full, 100_000, &mut rng).unwrap();
        let expected = two_action_choice_prob(sums[0] - sums[1], params).unwrap();
        let (est, se) = (table.prob(0, 1, 0), table.stderr(0, 1, 0));
        assert!((est - expected).abs() <= 4.0 * se, "eta {eta}: {est} vs {expected} (se {se})");
        assert!((table.prob(0, 1, 0) + table.prob(0, 1, 1) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn symmetric_history_gives_even_split() {
    let spec = experts(2);
    let params = ExpParams::new(1.0).unwrap();
    let table = mc_action_probs(
        |r| FplAgent::new(spec.clone(), params, r),
        &[],
        20_000,
        &mut ChaCha8Rng::seed_from_u64(104),
    )
    .unwrap();
    let se = table.stderr(0, 1, 0);
    assert!((table.prob(0, 1, 0) - 0.5).abs() <= 4.0 * se);
}

#[test]
fn dominant_history_fixes_the_choice() {
    let d = Dims::new(2, 3, 2).unwrap();
    let spec = MdpSpec::new(2, TransitionKernel::uniform(2, 3), 0).unwrap();
    let params = ExpParams::new(1.0).unwrap();
    // Action 2 leads by 30 / eta everywhere.
    let history: Vec<RewardTensor> =
        (0..30).map(|_| RewardTensor::from_fn(d, |_, a, _| if a == 2 { 1.0 } else { 0.0 })).collect();
    let table = mc_action_probs(
        |r| FplAgent::new(spec.clone(), params, r),
        &history,
        10_000,
        &mut ChaCha8Rng::seed_from_u64(105),
    )
    .unwrap();
    for h in 1..=2 {
        for s in 0..2 {
            assert!(table.prob(s, h, 2) >= 1.0 - 1e-3);
        }
    }
}

#[test]
fn zero_extra_reward_leaves_distribution_unchanged() {
    let d = Dims::new(2, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let spec = MdpSpec::new(2, TransitionKernel::random(2, 2, &mut rng), 0).unwrap();
    let history: Vec<RewardTensor> = (0..3).map(|_| RewardTensor::from_fn(d, |_, _, _| rng.gen())).collect();
    let report =
        stability_check(&spec, ExpParams::new(0.5).unwrap(), &history, &RewardTensor::zeros(d), 10_000, &mut rng)
            .unwrap();
    assert!(!report.entries.is_empty());
    for e in &report.entries {
        // Same r_0 on both sides, so the policies coincide sample by sample.
        assert_eq!(e.ratio, 1.0);
    }
    assert!(report.passed());
}

#[test]
fn tiny_eta_makes_history_irrelevant() {
    let d = Dims::new(2, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let spec = MdpSpec::new(2, TransitionKernel::random(2, 2, &mut rng), 0).unwrap();
    let history: Vec<RewardTensor> = (0..3).map(|_| RewardTensor::from_fn(d, |_, _, _| rng.gen())).collect();
    let extra = RewardTensor::filled(d, 1.0);
    let report = stability_check(&spec, ExpParams::new(1e-6).unwrap(), &history, &extra, 10_000, &mut rng).unwrap();
    for e in &report.entries {
        assert!((e.ratio - 1.0).abs() <= 1e-2, "{e:?}");
    }
    assert!(report.passed());
}

#[test]
fn stability_ratios_hold_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for _ in 0..3 {
        let d = Dims::new(2, 2, 2).unwrap();
        let spec = MdpSpec::new(2, TransitionKernel::random(2, 2, &mut rng), rng.gen_range(0..2)).unwrap();
        let history: Vec<RewardTensor> = (0..4).map(|_| RewardTensor::from_fn(d, |_, _, _| rng.gen())).collect();
        let extra = RewardTensor::from_fn(d, |_, _, _| rng.gen());
        let report = stability_check(&spec, ExpParams::new(0.3).unwrap(), &history, &extra, 20_000, &mut rng).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn btl_residual_is_nonnegative() {
    let d = Dims::new(3, 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for run in 0..30 {
        let spec = MdpSpec::new(3, TransitionKernel::random(3, 2, &mut rng), 0).unwrap();
        let adversary = AdversarySpec::IidUniform { dims: d, seed: run };
        let rewards: Vec<RewardTensor> = (1..=50).map(|t| adversary.next_reward(t).unwrap()).collect();
        let agent = FplAgent::new(spec, ExpParams::new(rng.gen_range(0.05..3.0)).unwrap(), &mut rng);
        assert!(btl_residual(&RunRecord::play(agent, &rewards).unwrap()).unwrap() >= -1e-6);
    }
}

#[test]
fn btl_constant_adversary_with_aligned_perturbation() {
    let d = Dims::new(2, 2, 2).unwrap();
    let spec = MdpSpec::new(2, TransitionKernel::uniform(2, 2), 0).unwrap();
    let reward = RewardTensor::from_fn(d, |_, a, _| if a == 1 { 0.8 } else { 0.2 });
    let r0 = RewardTensor::from_fn(d, |_, a, _| if a == 1 { 1e6 } else { 0.0 });
    let agent = FplAgent::with_perturbation(spec.clone(), ExpParams::new(1.0).unwrap(), r0).unwrap();
    let record = RunRecord::play(agent, &vec![reward.clone(); 10]).unwrap();
    assert!(record.policies.windows(2).all(|w| w[0] == w[1]));
    let (_, best) = opt_in_hindsight(&reward, spec.kernel(), 0).unwrap();
    assert_eq!(record.policies[0], best);
    let residual = btl_residual(&record).unwrap();
    let head = policy_value(&record.perturbation, spec.kernel(), &best, 0).unwrap();
    assert!((residual - head).abs() < 1e-6 * head);
}

#[test]
fn expected_maximum_respects_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let params = ExpParams::new(1.0).unwrap();
    let bound = max_expectation_bound(64, params).unwrap();
    assert!((bound - 5.158883083359672).abs() < 1e-12);
    let (mean, se) = mc_max_of_exponentials(64, params, 100_000, &mut rng);
    assert!(mean <= bound + 4.0 * se);
    // The exact mean is the harmonic number H_64.
    let harmonic: f64 = (1..=64).map(|k| 1.0 / k as f64).sum();
    assert!((mean - harmonic).abs() <= 4.0 * se);
}

#[test]
fn exponential_draws_pass_kolmogorov_smirnov() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    for eta in [0.1, 1.0, 2.0] {
        let params = ExpParams::new(eta).unwrap();
        let d = Dims::new(10, 10, 10).unwrap();
        let mut xs: Vec<f64> = (0..100).flat_map(|_| sample_exp_tensor(params, d, &mut rng).as_slice().to_vec()).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = params.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 0.001-level critical value.
        assert!(ks < 1.9495 / n.sqrt(), "eta {eta}: D = {ks}");
    }
}
